#pragma once

// Readers and writers for HMD-style death/population text files and
// HFD-style monthly birth files. Parsing is whitespace-tolerant because the
// fixed-width layout of these files drifts between vintages. Missing values
// ("." in the source) stay missing; they are never read as zero.

#include <algorithm>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "lexis/core.hpp"

namespace lexis {

struct DeathsRecord {
    int year = 0;
    int age = 0;          // "110+" parses as 110 with open_age set
    int cohort = 0;
    bool open_age = false;
    std::optional<double> female, male, total;

    std::optional<double> count(Gender g) const {
        switch (g) {
            case Gender::female: return female;
            case Gender::male: return male;
            default: return total;
        }
    }
};

struct RawDeathsLexis {
    std::vector<DeathsRecord> records;
};

struct PopulationRecord {
    int year = 0;
    char year_suffix = ' ';  // '+'/'-' mark territorial-change duplicates
    int age = 0;
    bool open_age = false;
    std::optional<double> female, male, total;

    std::optional<double> count(Gender g) const {
        switch (g) {
            case Gender::female: return female;
            case Gender::male: return male;
            default: return total;
        }
    }
};

struct RawPopulation {
    std::vector<PopulationRecord> records;
};

// Births by calendar month for one country. A year is complete when all 12
// months are present; only complete years can support the correction
// indicator.
struct MonthlyBirthSeries {
    std::string country;
    // (year, month 1..12) -> births. TOT/UNK rows are kept out of the grid.
    std::map<std::pair<int, int>, double> births;

    bool complete(int year) const {
        for (int m = 1; m <= 12; ++m)
            if (!births.count({year, m})) return false;
        return true;
    }

    // Sum over months 1..12 only.
    double total(int year) const {
        double s = 0.0;
        for (int m = 1; m <= 12; ++m) {
            auto it = births.find({year, m});
            if (it != births.end()) s += it->second;
        }
        return s;
    }

    std::vector<int> years() const {
        std::set<int> ys;
        for (const auto& [key, v] : births) ys.insert(key.first);
        return {ys.begin(), ys.end()};
    }
};

namespace detail {

inline std::optional<double> parse_count(const std::string& tok,
                                         const std::string& file, long line) {
    if (tok == ".") return std::nullopt;
    double v = parse_double_token(tok, file, line);
    if (v < 0.0)
        throw parse_error(file, line, "negative count '" + tok + "'");
    return v;
}

// Age column: plain integer or "110+"-style open group.
inline std::pair<int, bool> parse_age(const std::string& tok,
                                      const std::string& file, long line) {
    if (!tok.empty() && tok.back() == '+') {
        int age = static_cast<int>(
            parse_int_token(tok.substr(0, tok.size() - 1), file, line));
        return {age, true};
    }
    return {static_cast<int>(parse_int_token(tok, file, line)), false};
}

// Year column in population files: "1990", "1990+" or "1990-".
inline std::pair<int, char> parse_year_suffixed(const std::string& tok,
                                                const std::string& file,
                                                long line) {
    char suffix = ' ';
    std::string body = tok;
    if (!tok.empty() && (tok.back() == '+' || tok.back() == '-')) {
        suffix = tok.back();
        body = tok.substr(0, tok.size() - 1);
    }
    return {static_cast<int>(parse_int_token(body, file, line)), suffix};
}

struct LineReader {
    std::ifstream in;
    std::string file;
    long line_no = 0;

    explicit LineReader(const std::string& path) : in(path), file(path) {
        if (!in) throw validation_error("cannot open '" + path + "'");
    }

    bool next(std::string& out) {
        while (std::getline(in, out)) {
            ++line_no;
            return true;
        }
        return false;
    }
};

// HMD data files start with a description line and a blank line; some
// vintages add a column-header row, which we detect by its first token.
inline void skip_header(LineReader& r, const std::string& first_column) {
    std::string line;
    for (int i = 0; i < 2; ++i)
        if (!r.next(line)) throw parse_error(r.file, r.line_no, "truncated header");
    auto pos = r.in.tellg();
    long mark = r.line_no;
    if (r.next(line)) {
        auto toks = split_whitespace(line);
        if (!toks.empty() && toks[0] != first_column) {
            r.in.seekg(pos);
            r.line_no = mark;
        }
    }
}

}  // namespace detail

inline RawDeathsLexis parse_deaths_lexis(const std::string& path) {
    detail::LineReader r(path);
    detail::skip_header(r, "Year");
    RawDeathsLexis out;
    std::set<std::tuple<int, int, int>> seen;
    std::string line;
    while (r.next(line)) {
        auto toks = split_whitespace(line);
        if (toks.empty()) continue;
        if (toks.size() != 6)
            throw parse_error(r.file, r.line_no,
                              "expected 6 columns (Year Age Cohort Female Male "
                              "Total), got " + std::to_string(toks.size()));
        DeathsRecord rec;
        rec.year = static_cast<int>(parse_int_token(toks[0], r.file, r.line_no));
        auto [age, open] = detail::parse_age(toks[1], r.file, r.line_no);
        rec.age = age;
        rec.open_age = open;
        rec.cohort = static_cast<int>(parse_int_token(toks[2], r.file, r.line_no));
        if (rec.cohort != rec.year - rec.age && rec.cohort != rec.year - rec.age - 1)
            throw validation_error(
                r.file + ":" + std::to_string(r.line_no) + ": cohort " +
                std::to_string(rec.cohort) + " is not year-age or year-age-1 for (" +
                std::to_string(rec.year) + "," + std::to_string(rec.age) + ")");
        rec.female = detail::parse_count(toks[3], r.file, r.line_no);
        rec.male = detail::parse_count(toks[4], r.file, r.line_no);
        rec.total = detail::parse_count(toks[5], r.file, r.line_no);
        if (!seen.insert({rec.year, rec.age, rec.cohort}).second)
            throw validation_error(r.file + ":" + std::to_string(r.line_no) +
                                   ": duplicate (year, age, cohort) record");
        out.records.push_back(rec);
    }
    return out;
}

inline RawPopulation parse_population(const std::string& path) {
    detail::LineReader r(path);
    detail::skip_header(r, "Year");
    RawPopulation out;
    std::set<std::tuple<int, char, int>> seen;
    std::string line;
    while (r.next(line)) {
        auto toks = split_whitespace(line);
        if (toks.empty()) continue;
        if (toks.size() != 5)
            throw parse_error(r.file, r.line_no,
                              "expected 5 columns (Year Age Female Male Total), "
                              "got " + std::to_string(toks.size()));
        PopulationRecord rec;
        auto [year, suffix] = detail::parse_year_suffixed(toks[0], r.file, r.line_no);
        rec.year = year;
        rec.year_suffix = suffix;
        auto [age, open] = detail::parse_age(toks[1], r.file, r.line_no);
        rec.age = age;
        rec.open_age = open;
        rec.female = detail::parse_count(toks[2], r.file, r.line_no);
        rec.male = detail::parse_count(toks[3], r.file, r.line_no);
        rec.total = detail::parse_count(toks[4], r.file, r.line_no);
        if (!seen.insert({rec.year, rec.year_suffix, rec.age}).second)
            throw validation_error(r.file + ":" + std::to_string(r.line_no) +
                                   ": duplicate (year, age) record");
        out.records.push_back(rec);
    }
    return out;
}

inline MonthlyBirthSeries parse_monthly_births(const std::string& path) {
    detail::LineReader r(path);
    detail::skip_header(r, "Code");
    MonthlyBirthSeries out;
    std::string line;
    while (r.next(line)) {
        auto toks = split_whitespace(line);
        if (toks.empty()) continue;
        if (toks.size() != 4)
            throw parse_error(r.file, r.line_no,
                              "expected 4 columns (Code Year Month Births), got " +
                              std::to_string(toks.size()));
        if (out.country.empty())
            out.country = toks[0];
        else if (out.country != toks[0])
            throw validation_error(r.file + ":" + std::to_string(r.line_no) +
                                   ": mixed country codes in one file");
        int year = static_cast<int>(parse_int_token(toks[1], r.file, r.line_no));
        const std::string& mt = toks[2];
        if (mt == "TOT" || mt == "UNK") continue;  // not part of the 12-month grid
        int month = 0;
        try {
            month = static_cast<int>(parse_int_token(mt, r.file, r.line_no));
        } catch (const parse_error&) {
            throw parse_error(r.file, r.line_no, "bad month token '" + mt + "'");
        }
        if (month < 1 || month > 12)
            throw parse_error(r.file, r.line_no, "bad month token '" + mt + "'");
        double births = parse_double_token(toks[3], r.file, r.line_no);
        if (births < 0.0)
            throw parse_error(r.file, r.line_no, "negative birth count");
        if (!out.births.emplace(std::make_pair(year, month), births).second)
            throw validation_error(r.file + ":" + std::to_string(r.line_no) +
                                   ": duplicate (year, month) record");
    }
    return out;
}

// Serializers matching the parsers, used for round-trips and for emitting
// oracle datasets in the front-door format.

namespace detail {
inline std::string count_str(const std::optional<double>& v) {
    return v ? format_double(*v) : ".";
}
}  // namespace detail

inline void write_deaths_lexis(const RawDeathsLexis& raw, const std::string& path,
                               const std::string& title = "Deaths (Lexis triangles)") {
    std::ofstream out(path);
    if (!out) throw validation_error("cannot write '" + path + "'");
    out << title << "\n\n";
    out << "Year  Age  Cohort  Female  Male  Total\n";
    for (const auto& r : raw.records) {
        out << r.year << "  " << r.age << (r.open_age ? "+" : "") << "  "
            << r.cohort << "  " << detail::count_str(r.female) << "  "
            << detail::count_str(r.male) << "  " << detail::count_str(r.total)
            << "\n";
    }
}

inline void write_population(const RawPopulation& raw, const std::string& path,
                             const std::string& title = "Population size (1-Jan)") {
    std::ofstream out(path);
    if (!out) throw validation_error("cannot write '" + path + "'");
    out << title << "\n\n";
    out << "Year  Age  Female  Male  Total\n";
    for (const auto& r : raw.records) {
        out << r.year;
        if (r.year_suffix != ' ') out << r.year_suffix;
        out << "  " << r.age << (r.open_age ? "+" : "") << "  "
            << detail::count_str(r.female) << "  " << detail::count_str(r.male)
            << "  " << detail::count_str(r.total) << "\n";
    }
}

inline void write_monthly_births(const MonthlyBirthSeries& series,
                                 const std::string& path,
                                 const std::string& title = "Births by month") {
    std::ofstream out(path);
    if (!out) throw validation_error("cannot write '" + path + "'");
    out << title << "\n\n";
    out << "Code  Year  Month  Births\n";
    for (const auto& [key, v] : series.births)
        out << series.country << "  " << key.first << "  " << key.second << "  "
            << format_double(v) << "\n";
}

}  // namespace lexis
