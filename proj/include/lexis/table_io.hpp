#pragma once

// Toolkit output formats: rectangular CSV (ages as rows, years as columns)
// with a '#'-prefixed metadata header, plus a JSON mirror of every CSV.
// Writers are deterministic: identical inputs produce identical bytes.

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "lexis/core.hpp"
#include "lexis/correction.hpp"
#include "lexis/surface.hpp"

namespace lexis {

// Provenance lines stamped on every artifact.
struct ArtifactMeta {
    std::vector<std::pair<std::string, std::string>> entries;

    void add(const std::string& key, const std::string& value) {
        entries.emplace_back(key, value);
    }

    static ArtifactMeta standard(const std::string& config_hash,
                                 std::uint64_t seed) {
        ArtifactMeta m;
        m.add("tool", std::string(kToolName) + " " + kToolVersion);
        m.add("config_hash", config_hash);
        m.add("seed", std::to_string(seed));
        return m;
    }

    nlohmann::json to_json() const {
        nlohmann::json j = nlohmann::json::object();
        for (const auto& [k, v] : entries) j[k] = v;
        return j;
    }
};

namespace detail {

inline void write_meta_csv(std::ofstream& out, const ArtifactMeta& meta) {
    for (const auto& [k, v] : meta.entries) out << "# " << k << ": " << v << "\n";
}

inline std::string json_mirror_path(const std::string& csv_path) {
    std::filesystem::path p(csv_path);
    p.replace_extension(".json");
    return p.string();
}

}  // namespace detail

inline void write_grid_csv(const Grid& grid, const std::string& path,
                           const ArtifactMeta& meta = {}, int sig_digits = 6,
                           const std::vector<std::uint8_t>* missing = nullptr) {
    if (grid.empty()) throw validation_error("refusing to write an empty grid");
    std::ofstream out(path);
    if (!out) throw validation_error("cannot write '" + path + "'");
    detail::write_meta_csv(out, meta);
    out << "age";
    for (int t = grid.year_min(); t <= grid.year_max(); ++t) out << "," << t;
    out << "\n";
    for (int x = grid.age_min(); x <= grid.age_max(); ++x) {
        out << x;
        for (int t = grid.year_min(); t <= grid.year_max(); ++t) {
            out << ",";
            if (missing && (*missing)[grid.index(x, t)])
                out << ".";
            else
                out << format_sig(grid.at(x, t), sig_digits);
        }
        out << "\n";
    }
}

inline nlohmann::json grid_to_json(const Grid& grid,
                                   const std::vector<std::uint8_t>* missing = nullptr) {
    nlohmann::json j;
    j["age_min"] = grid.age_min();
    j["age_max"] = grid.age_max();
    j["year_min"] = grid.year_min();
    j["year_max"] = grid.year_max();
    auto rows = nlohmann::json::array();
    for (int x = grid.age_min(); x <= grid.age_max(); ++x) {
        auto row = nlohmann::json::array();
        for (int t = grid.year_min(); t <= grid.year_max(); ++t) {
            if (missing && (*missing)[grid.index(x, t)])
                row.push_back(nullptr);
            else
                row.push_back(grid.at(x, t));
        }
        rows.push_back(row);
    }
    j["values"] = rows;
    return j;
}

inline Grid grid_from_json(const nlohmann::json& j,
                           std::vector<std::uint8_t>* missing = nullptr) {
    Grid g(j.at("age_min").get<int>(), j.at("age_max").get<int>(),
           j.at("year_min").get<int>(), j.at("year_max").get<int>());
    if (missing) missing->assign(g.size(), 0);
    const auto& rows = j.at("values");
    for (int x = g.age_min(); x <= g.age_max(); ++x) {
        const auto& row = rows.at(x - g.age_min());
        for (int t = g.year_min(); t <= g.year_max(); ++t) {
            const auto& cell = row.at(t - g.year_min());
            if (cell.is_null()) {
                if (missing) (*missing)[g.index(x, t)] = 1;
            } else {
                g.at(x, t) = cell.get<double>();
            }
        }
    }
    return g;
}

inline void write_json_file(const nlohmann::json& j, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw validation_error("cannot write '" + path + "'");
    out << j.dump(1) << "\n";
}

inline nlohmann::json read_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw validation_error("cannot open '" + path + "'");
    nlohmann::json j;
    in >> j;
    return j;
}

// CSV of the rate grid plus its JSON mirror alongside.
inline void write_surface_csv(const MortalitySurface& s, const std::string& path,
                              const ArtifactMeta& meta = {}, int sig_digits = 6) {
    if (s.rate.empty()) throw validation_error("refusing to write an empty surface");
    write_grid_csv(s.rate, path, meta, sig_digits, &s.missing);
    nlohmann::json j = grid_to_json(s.rate, &s.missing);
    j["meta"] = meta.to_json();
    j["gender"] = to_string(s.gender);
    j["source"] = to_string(s.source);
    write_json_file(j, detail::json_mirror_path(path));
}

// Reads a grid CSV written by write_grid_csv/write_surface_csv.
inline Grid read_grid_csv(const std::string& path,
                          std::vector<std::uint8_t>* missing = nullptr) {
    std::ifstream in(path);
    if (!in) throw validation_error("cannot open '" + path + "'");
    std::string line;
    long line_no = 0;
    std::vector<int> years;
    std::vector<int> ages;
    std::vector<std::vector<std::string>> cells;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line[0] == '#') continue;
        auto toks = split_char(line, ',');
        if (years.empty()) {
            if (toks.size() < 2 || toks[0] != "age")
                throw parse_error(path, line_no, "expected 'age,<year>,...' header");
            for (std::size_t i = 1; i < toks.size(); ++i)
                years.push_back(static_cast<int>(parse_int_token(toks[i], path, line_no)));
            continue;
        }
        if (toks.size() != years.size() + 1)
            throw parse_error(path, line_no, "ragged CSV row");
        ages.push_back(static_cast<int>(parse_int_token(toks[0], path, line_no)));
        cells.emplace_back(toks.begin() + 1, toks.end());
    }
    if (years.empty() || ages.empty())
        throw validation_error("'" + path + "' holds no grid data");
    Grid g(ages.front(), ages.back(), years.front(), years.back());
    if (missing) missing->assign(g.size(), 0);
    for (std::size_t i = 0; i < ages.size(); ++i) {
        for (std::size_t k = 0; k < years.size(); ++k) {
            const std::string& tok = cells[i][k];
            if (tok == ".") {
                if (missing) (*missing)[g.index(ages[i], years[k])] = 1;
            } else {
                g.at(ages[i], years[k]) = parse_double_token(tok, path, 0);
            }
        }
    }
    return g;
}

// Full surface bundle (deaths, exposure, rates and tags) for machine use.
inline void write_surface_json(const MortalitySurface& s, const std::string& path,
                               const ArtifactMeta& meta = {}) {
    nlohmann::json j;
    j["meta"] = meta.to_json();
    j["gender"] = to_string(s.gender);
    j["source"] = to_string(s.source);
    if (s.open_age) j["open_age"] = *s.open_age;
    j["deaths"] = grid_to_json(s.deaths, &s.missing);
    j["exposure"] = grid_to_json(s.exposure, &s.missing);
    j["rate"] = grid_to_json(s.rate, &s.missing);
    write_json_file(j, path);
}

inline MortalitySurface read_surface_json(const std::string& path) {
    nlohmann::json j = read_json_file(path);
    MortalitySurface s;
    s.gender = gender_from_string(j.at("gender").get<std::string>());
    const std::string src = j.at("source").get<std::string>();
    s.source = src == "corrected" ? SourceTag::corrected
               : src == "simulated" ? SourceTag::simulated
                                    : SourceTag::crude;
    if (j.contains("open_age")) s.open_age = j["open_age"].get<int>();
    s.deaths = grid_from_json(j.at("deaths"));
    s.exposure = grid_from_json(j.at("exposure"));
    s.rate = grid_from_json(j.at("rate"), &s.missing);
    s.validate();
    return s;
}

// Column-oriented table of plain rows; renders as CSV with the metadata
// header plus the JSON mirror, like every other artifact.
struct RowTable {
    std::vector<std::string> columns;
    std::vector<std::vector<std::string>> rows;

    void add_row(std::initializer_list<std::string> cells) {
        rows.emplace_back(cells);
    }

    void write(const std::string& csv_path, const ArtifactMeta& meta = {}) const {
        std::ofstream out(csv_path);
        if (!out) throw validation_error("cannot write '" + csv_path + "'");
        detail::write_meta_csv(out, meta);
        for (std::size_t i = 0; i < columns.size(); ++i)
            out << (i ? "," : "") << columns[i];
        out << "\n";
        for (const auto& row : rows) {
            for (std::size_t i = 0; i < row.size(); ++i)
                out << (i ? "," : "") << row[i];
            out << "\n";
        }
        nlohmann::json j;
        j["meta"] = meta.to_json();
        j["columns"] = columns;
        auto arr = nlohmann::json::array();
        for (const auto& row : rows) arr.push_back(row);
        j["rows"] = arr;
        write_json_file(j, detail::json_mirror_path(csv_path));
    }
};

// Grid CSV plus its JSON mirror.
inline void write_grid_csv_mirrored(const Grid& grid, const std::string& path,
                                    const ArtifactMeta& meta = {},
                                    int sig_digits = 6,
                                    const std::vector<std::uint8_t>* missing = nullptr) {
    write_grid_csv(grid, path, meta, sig_digits, missing);
    nlohmann::json j = grid_to_json(grid, missing);
    j["meta"] = meta.to_json();
    write_json_file(j, detail::json_mirror_path(path));
}

// Death-probability grids exchanged between the project and scr subcommands.
inline void write_q_json(const QSurface& q, const std::string& path,
                         const ArtifactMeta& meta = {}) {
    nlohmann::json j;
    j["meta"] = meta.to_json();
    j["gender"] = to_string(q.gender);
    j["source"] = to_string(q.source);
    j["q"] = grid_to_json(q.q, &q.missing);
    write_json_file(j, path);
}

inline QSurface read_q_json(const std::string& path) {
    nlohmann::json j = read_json_file(path);
    QSurface q;
    q.gender = gender_from_string(j.at("gender").get<std::string>());
    const std::string src = j.at("source").get<std::string>();
    q.source = src == "corrected" ? SourceTag::corrected
               : src == "simulated" ? SourceTag::simulated
                                    : SourceTag::crude;
    q.q = grid_from_json(j.at("q"), &q.missing);
    return q;
}

// Indicator series: cohort, value, provenance; CSV plus JSON mirror.
inline void write_indicator_csv(const CorrectionIndicator& ind,
                                const std::string& path,
                                const ArtifactMeta& meta = {}) {
    std::ofstream out(path);
    if (!out) throw validation_error("cannot write '" + path + "'");
    detail::write_meta_csv(out, meta);
    out << "cohort,indicator,provenance\n";
    for (const auto& [b, e] : ind.by_cohort)
        out << b << "," << format_double(e.value) << "," << to_string(e.provenance)
            << "\n";
    nlohmann::json j;
    j["meta"] = meta.to_json();
    j["country"] = ind.country;
    auto arr = nlohmann::json::array();
    for (const auto& [b, e] : ind.by_cohort)
        arr.push_back({{"cohort", b},
                       {"indicator", e.value},
                       {"provenance", to_string(e.provenance)}});
    j["values"] = arr;
    write_json_file(j, detail::json_mirror_path(path));
}

inline CorrectionIndicator read_indicator_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw validation_error("cannot open '" + path + "'");
    CorrectionIndicator ind;
    std::string line;
    long line_no = 0;
    bool header_seen = false;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line[0] == '#') continue;
        auto toks = split_char(line, ',');
        if (!header_seen) {
            if (toks.empty() || toks[0] != "cohort")
                throw parse_error(path, line_no, "expected 'cohort,indicator,...'");
            header_seen = true;
            continue;
        }
        if (toks.size() < 2) throw parse_error(path, line_no, "short row");
        int b = static_cast<int>(parse_int_token(toks[0], path, line_no));
        double v = parse_double_token(toks[1], path, line_no);
        Provenance p = Provenance::computed;
        if (toks.size() > 2 && toks[2] == "predicted") p = Provenance::predicted;
        ind.by_cohort[b] = {v, p};
    }
    return ind;
}

}  // namespace lexis
