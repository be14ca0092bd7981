#pragma once

// End-to-end pipeline: ingest -> correct -> fit -> select -> project -> SCR,
// with a manifest listing every artifact and its checksum. All outputs are
// deterministic functions of the inputs and the effective configuration, so
// a re-run with the same config and seed reproduces identical bytes.

#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "lexis/correction.hpp"
#include "lexis/core.hpp"
#include "lexis/forecast.hpp"
#include "lexis/ingest.hpp"
#include "lexis/models.hpp"
#include "lexis/regression.hpp"
#include "lexis/scr.hpp"
#include "lexis/surface.hpp"
#include "lexis/table_io.hpp"

namespace lexis {

struct RunConfig {
    // Inputs.
    std::string deaths_path;
    std::string population_path;
    std::string births_path;              // empty: correction stage skipped
    std::string predicted_indicator_path; // optional regression output to merge
    std::string portfolio_path;           // optional; empty skips valuation

    // Calibration window. year_min/year_max of 0 means auto-detect: the last
    // `auto_years` years the death and population files support.
    Gender gender = Gender::total;
    int age_min = 60, age_max = 95;
    int year_min = 0, year_max = 0;
    int auto_years = 30;

    bool correction = true;
    bool allow_passthrough = true;
    // Which row wins when a population year carries territorial-change
    // duplicates ("1990+"/"1990-").
    char territorial_suffix = '+';

    std::vector<ModelTag> models = {ModelTag::m1, ModelTag::m3, ModelTag::m5};
    std::optional<ModelTag> model_override;

    int scenarios = 5000;
    int horizon = 60;
    std::uint64_t seed = 42;
    int omega = 120;
    int closure_start = -1;  // default: age_max
    int threads = 1;

    double discount_rate = 0.02;
    bool stability_weight_by_count = false;

    int le_age = -1;       // default: age_min
    int le_truncate = -1;  // default: age_max + 1

    std::string out = "out";

    // Keys that affect results; `out` and `threads` are excluded so the hash
    // is stable across output locations and parallelism settings.
    std::string canonical() const {
        std::string models_s;
        for (auto m : models) models_s += (models_s.empty() ? "" : ",") + to_string(m);
        std::vector<std::pair<std::string, std::string>> kv = {
            {"age_max", std::to_string(age_max)},
            {"age_min", std::to_string(age_min)},
            {"allow_passthrough", allow_passthrough ? "1" : "0"},
            {"auto_years", std::to_string(auto_years)},
            {"births", births_path},
            {"closure_start", std::to_string(closure_start)},
            {"correction", correction ? "1" : "0"},
            {"deaths", deaths_path},
            {"discount_rate", format_double(discount_rate)},
            {"gender", to_string(gender)},
            {"horizon", std::to_string(horizon)},
            {"le_age", std::to_string(le_age)},
            {"le_truncate", std::to_string(le_truncate)},
            {"model_override", model_override ? to_string(*model_override) : ""},
            {"models", models_s},
            {"omega", std::to_string(omega)},
            {"population", population_path},
            {"portfolio", portfolio_path},
            {"predicted_indicator", predicted_indicator_path},
            {"scenarios", std::to_string(scenarios)},
            {"seed", std::to_string(seed)},
            {"stability_weight_by_count", stability_weight_by_count ? "1" : "0"},
            {"territorial_suffix", std::string(1, territorial_suffix)},
            {"year_max", std::to_string(year_max)},
            {"year_min", std::to_string(year_min)},
        };
        std::string s;
        for (const auto& [k, v] : kv) s += k + "=" + v + "\n";
        return s;
    }

    std::string config_hash() const { return hex64(fnv1a64(canonical())); }
};

// Flat key-value config file: "key = value" lines, '#' comments.
inline RunConfig parse_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw validation_error("cannot open config '" + path + "'");
    RunConfig cfg;
    std::string line;
    long line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        auto eq = line.find('=');
        if (eq == std::string::npos) {
            if (!split_whitespace(line).empty())
                throw parse_error(path, line_no, "expected 'key = value'");
            continue;
        }
        auto trim = [](std::string s) {
            auto b = s.find_first_not_of(" \t");
            auto e = s.find_last_not_of(" \t");
            return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
        };
        std::string key = trim(line.substr(0, eq));
        std::string value = trim(line.substr(eq + 1));
        if (key == "deaths") cfg.deaths_path = value;
        else if (key == "population") cfg.population_path = value;
        else if (key == "births") cfg.births_path = value;
        else if (key == "predicted_indicator") cfg.predicted_indicator_path = value;
        else if (key == "portfolio") cfg.portfolio_path = value;
        else if (key == "gender") cfg.gender = gender_from_string(value);
        else if (key == "age_min") cfg.age_min = int(parse_int_token(value, path, line_no));
        else if (key == "age_max") cfg.age_max = int(parse_int_token(value, path, line_no));
        else if (key == "year_min") cfg.year_min = int(parse_int_token(value, path, line_no));
        else if (key == "year_max") cfg.year_max = int(parse_int_token(value, path, line_no));
        else if (key == "auto_years") cfg.auto_years = int(parse_int_token(value, path, line_no));
        else if (key == "correction") cfg.correction = (value == "on" || value == "1" || value == "true");
        else if (key == "allow_passthrough") cfg.allow_passthrough = (value == "on" || value == "1" || value == "true");
        else if (key == "territorial_suffix") {
            if (value != "plus" && value != "minus")
                throw parse_error(path, line_no, "territorial_suffix is plus or minus");
            cfg.territorial_suffix = value == "plus" ? '+' : '-';
        }
        else if (key == "models") {
            cfg.models.clear();
            for (const auto& tok : split_char(value, ','))
                if (!tok.empty()) cfg.models.push_back(model_from_string(tok));
        } else if (key == "model_override") {
            if (!value.empty()) cfg.model_override = model_from_string(value);
        }
        else if (key == "scenarios") cfg.scenarios = int(parse_int_token(value, path, line_no));
        else if (key == "horizon") cfg.horizon = int(parse_int_token(value, path, line_no));
        else if (key == "seed") cfg.seed = std::stoull(value);
        else if (key == "omega") cfg.omega = int(parse_int_token(value, path, line_no));
        else if (key == "closure_start") cfg.closure_start = int(parse_int_token(value, path, line_no));
        else if (key == "threads") cfg.threads = int(parse_int_token(value, path, line_no));
        else if (key == "discount_rate") cfg.discount_rate = parse_double_token(value, path, line_no);
        else if (key == "stability_weight") cfg.stability_weight_by_count = (value == "count");
        else if (key == "le_age") cfg.le_age = int(parse_int_token(value, path, line_no));
        else if (key == "le_truncate") cfg.le_truncate = int(parse_int_token(value, path, line_no));
        else if (key == "out") cfg.out = value;
        else throw parse_error(path, line_no, "unknown config key '" + key + "'");
    }
    return cfg;
}

// ---------------------------------------------------------------------------
// Model selection: BIC decides, residual randomness and parameter stability
// are reported as advisory columns, and a config override wins when present.
// ---------------------------------------------------------------------------

struct ModelFit {
    ModelTag tag = ModelTag::m1;
    ModelParams params;
    FitDiagnostics diag;
};

struct SelectionRow {
    ModelTag tag = ModelTag::m1;
    double bic = 0.0;
    double runs_z_time = 0.0, runs_z_age = 0.0, runs_z_cohort = 0.0;
    double stability_drift = 0.0;  // max relative rate drift, 5-year-shorter refit
};

struct SelectionReport {
    ModelTag chosen = ModelTag::m1;
    bool overridden = false;
    std::vector<SelectionRow> rows;  // sorted by BIC, best first
};

namespace detail {

// Wald-Wolfowitz runs statistic aggregated over independent sequences.
class RunsAggregate {
public:
    void add(const std::vector<double>& seq) {
        int np = 0, nn = 0, runs = 0, prev = 0;
        for (double v : seq) {
            int sgn = v > 0 ? 1 : (v < 0 ? -1 : 0);
            if (sgn == 0) continue;
            if (sgn > 0) ++np; else ++nn;
            if (sgn != prev) ++runs;
            prev = sgn;
        }
        if (np == 0 || nn == 0) return;
        double n = np + nn;
        double er = 1.0 + 2.0 * np * nn / n;
        double vr = 2.0 * np * nn * (2.0 * np * nn - n) / (n * n * (n - 1.0));
        if (vr <= 0.0) return;
        runs_ += runs;
        expected_ += er;
        variance_ += vr;
    }

    double z() const {
        return variance_ > 0.0 ? (runs_ - expected_) / std::sqrt(variance_) : 0.0;
    }

private:
    double runs_ = 0.0, expected_ = 0.0, variance_ = 0.0;
};

inline void runs_tests(const Grid& res, double& z_time, double& z_age,
                       double& z_cohort) {
    RunsAggregate along_time, along_age, along_cohort;
    for (int x = res.age_min(); x <= res.age_max(); ++x) {
        std::vector<double> seq;
        for (int t = res.year_min(); t <= res.year_max(); ++t)
            seq.push_back(res.at(x, t));
        along_time.add(seq);
    }
    for (int t = res.year_min(); t <= res.year_max(); ++t) {
        std::vector<double> seq;
        for (int x = res.age_min(); x <= res.age_max(); ++x)
            seq.push_back(res.at(x, t));
        along_age.add(seq);
    }
    for (int c = res.year_min() - res.age_max(); c <= res.year_max() - res.age_min();
         ++c) {
        std::vector<double> seq;
        for (int x = res.age_min(); x <= res.age_max(); ++x)
            if (res.contains(x, c + x)) seq.push_back(res.at(x, c + x));
        along_cohort.add(seq);
    }
    z_time = along_time.z();
    z_age = along_age.z();
    z_cohort = along_cohort.z();
}

inline std::pair<ModelParams, FitDiagnostics> refit(ModelTag tag,
                                                    const MortalitySurface& s,
                                                    const FitOptions& opt) {
    switch (tag) {
        case ModelTag::m1: return fit_m1(s, opt);
        case ModelTag::m3: return fit_m3(s, opt);
        default: return fit_m5(s, opt);
    }
}

inline MortalitySurface crop_years(const MortalitySurface& s, int year_min) {
    MortalitySurface out;
    out.gender = s.gender;
    out.source = s.source;
    out.open_age = s.open_age;
    out.deaths = Grid(s.rate.age_min(), s.rate.age_max(), year_min, s.rate.year_max());
    out.exposure = out.deaths;
    out.rate = out.deaths;
    out.missing.assign(out.rate.size(), 0);
    for (int x = s.rate.age_min(); x <= s.rate.age_max(); ++x)
        for (int t = year_min; t <= s.rate.year_max(); ++t) {
            out.deaths.at(x, t) = s.deaths.at(x, t);
            out.exposure.at(x, t) = s.exposure.at(x, t);
            out.rate.at(x, t) = s.rate.at(x, t);
            if (s.is_missing(x, t)) out.missing[out.rate.index(x, t)] = 1;
        }
    return out;
}

}  // namespace detail

inline SelectionReport select_model(const std::vector<ModelFit>& fits,
                                    const MortalitySurface& surface,
                                    std::optional<ModelTag> override_tag = {},
                                    const FitOptions& fit_opt = {}) {
    if (fits.empty()) throw validation_error("no model fits to select from");
    SelectionReport report;
    for (const auto& fit : fits) {
        SelectionRow row;
        row.tag = fit.tag;
        row.bic = fit.diag.bic;
        Grid res = standardized_residuals(fit.params, surface);
        detail::runs_tests(res, row.runs_z_time, row.runs_z_age, row.runs_z_cohort);
        // Refit on a window shortened by 5 years at the early end.
        int short_min = surface.rate.year_min() + 5;
        if (short_min + 9 <= surface.rate.year_max()) {
            auto cropped = detail::crop_years(surface, short_min);
            auto [p2, d2] = detail::refit(fit.tag, cropped, fit_opt);
            double drift = 0.0;
            for (int x = p2.age_min; x <= p2.age_max; ++x)
                for (int t = p2.year_min; t <= p2.year_max; ++t) {
                    double full = fit.params.fitted_rate(x, t);
                    if (full > 0.0)
                        drift = std::max(drift,
                                         std::fabs(p2.fitted_rate(x, t) / full - 1.0));
                }
            row.stability_drift = drift;
        }
        report.rows.push_back(row);
    }
    std::stable_sort(report.rows.begin(), report.rows.end(),
                     [](const SelectionRow& a, const SelectionRow& b) {
                         return a.bic > b.bic;
                     });
    report.chosen = report.rows.front().tag;
    if (override_tag) {
        report.overridden = *override_tag != report.chosen;
        report.chosen = *override_tag;
    }
    return report;
}

// ---------------------------------------------------------------------------
// Artifact emission helpers.
// ---------------------------------------------------------------------------

struct Manifest {
    std::vector<std::pair<std::string, std::string>> stages;  // name, status
    std::vector<std::pair<std::string, std::string>> artifacts;  // name, checksum
    std::string config_hash;
    nlohmann::json config_echo;

    nlohmann::json to_json() const {
        nlohmann::json j;
        j["tool"] = std::string(kToolName) + " " + kToolVersion;
        j["config_hash"] = config_hash;
        j["config"] = config_echo;
        auto st = nlohmann::json::array();
        for (const auto& [name, status] : stages)
            st.push_back({{"stage", name}, {"status", status}});
        j["stages"] = st;
        auto ar = nlohmann::json::array();
        for (const auto& [name, sum] : artifacts)
            ar.push_back({{"file", name}, {"checksum", sum}});
        j["artifacts"] = ar;
        return j;
    }
};

namespace detail {

class ArtifactSink {
public:
    ArtifactSink(std::string dir, Manifest& manifest)
        : dir_(std::move(dir)), manifest_(manifest) {
        std::filesystem::create_directories(dir_);
    }

    std::string path(const std::string& name) const { return dir_ + "/" + name; }

    void record(const std::string& name) {
        manifest_.artifacts.emplace_back(name, hex64(checksum_file(path(name))));
    }

private:
    std::string dir_;
    Manifest& manifest_;
};

}  // namespace detail

// Parameter artifacts: one CSV per component vector, and the JSON form the
// project and scr subcommands read back.
inline void write_params_csv(const ModelParams& p, const std::string& dir,
                             const std::string& stem, const ArtifactMeta& meta,
                             std::vector<std::string>& names) {
    auto vec_csv = [&](const std::string& name, const std::string& index_col,
                       int index0, const std::vector<double>& v,
                       const std::vector<std::uint8_t>* mask = nullptr) {
        RowTable table;
        table.columns = {index_col, "value"};
        for (std::size_t i = 0; i < v.size(); ++i) {
            if (mask && !(*mask)[i]) continue;
            table.add_row({std::to_string(index0 + int(i)), format_double(v[i])});
        }
        table.write(dir + "/" + name, meta);
        names.push_back(name);
        names.push_back(name.substr(0, name.size() - 4) + ".json");
    };
    if (p.model == ModelTag::m5) {
        vec_csv(stem + "_kappa1.csv", "year", p.year_min, p.kappa1);
        vec_csv(stem + "_kappa2.csv", "year", p.year_min, p.kappa2);
    } else {
        vec_csv(stem + "_beta1.csv", "age", p.age_min, p.beta1);
        if (p.model == ModelTag::m1)
            vec_csv(stem + "_beta2.csv", "age", p.age_min, p.beta2);
        vec_csv(stem + "_kappa.csv", "year", p.year_min, p.kappa);
        if (p.model == ModelTag::m3)
            vec_csv(stem + "_gamma.csv", "cohort", p.cohort_min(), p.gamma,
                    &p.gamma_estimated);
    }
}

inline nlohmann::json params_to_json(const ModelParams& p) {
    nlohmann::json j;
    j["model"] = to_string(p.model);
    j["age_min"] = p.age_min;
    j["age_max"] = p.age_max;
    j["year_min"] = p.year_min;
    j["year_max"] = p.year_max;
    j["constraints"] = p.constraints;
    if (p.model == ModelTag::m5) {
        j["kappa1"] = p.kappa1;
        j["kappa2"] = p.kappa2;
        j["x_bar"] = p.x_bar;
    } else {
        j["beta1"] = p.beta1;
        j["kappa"] = p.kappa;
        if (p.model == ModelTag::m1) j["beta2"] = p.beta2;
        if (p.model == ModelTag::m3) {
            j["gamma"] = p.gamma;
            j["gamma_estimated"] = p.gamma_estimated;
            j["excluded_cohorts"] = p.excluded_cohorts;
        }
    }
    return j;
}

inline ModelParams params_from_json(const nlohmann::json& j) {
    ModelParams p;
    p.model = model_from_string(j.at("model").get<std::string>());
    p.age_min = j.at("age_min").get<int>();
    p.age_max = j.at("age_max").get<int>();
    p.year_min = j.at("year_min").get<int>();
    p.year_max = j.at("year_max").get<int>();
    p.constraints = j.value("constraints", "");
    if (p.model == ModelTag::m5) {
        p.kappa1 = j.at("kappa1").get<std::vector<double>>();
        p.kappa2 = j.at("kappa2").get<std::vector<double>>();
        p.x_bar = j.at("x_bar").get<double>();
    } else {
        p.beta1 = j.at("beta1").get<std::vector<double>>();
        p.kappa = j.at("kappa").get<std::vector<double>>();
        if (p.model == ModelTag::m1) p.beta2 = j.at("beta2").get<std::vector<double>>();
        if (p.model == ModelTag::m3) {
            p.gamma = j.at("gamma").get<std::vector<double>>();
            p.gamma_estimated = j.at("gamma_estimated").get<std::vector<std::uint8_t>>();
            p.excluded_cohorts = j.at("excluded_cohorts").get<std::vector<int>>();
        }
    }
    return p;
}

namespace detail {

inline void write_fan_csv(const LeFan& fan, const std::string& path,
                          const ArtifactMeta& meta) {
    RowTable table;
    table.columns = {fan.kind == LeKind::period ? "year" : "age", "p0.5",
                     "median", "p99.5", "central"};
    for (std::size_t i = 0; i < fan.index.size(); ++i)
        table.add_row({std::to_string(fan.index[i]), format_double(fan.p_shock[i]),
                       format_double(fan.median[i]),
                       format_double(fan.p_longevity[i]),
                       format_double(fan.scenario[0][i])});
    table.write(path, meta);
}

}  // namespace detail

inline AnnuityPortfolio read_portfolio_csv(const std::string& path,
                                           double discount_rate) {
    std::ifstream in(path);
    if (!in) throw validation_error("cannot open portfolio '" + path + "'");
    AnnuityPortfolio p;
    p.discount_rate = discount_rate;
    std::string line;
    long line_no = 0;
    bool header = false;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line[0] == '#') continue;
        auto toks = split_char(line, ',');
        if (!header) {
            if (toks.empty() || toks[0] != "gender")
                throw parse_error(path, line_no,
                                  "expected header 'gender,age,amount,count'");
            header = true;
            continue;
        }
        if (toks.size() != 4) throw parse_error(path, line_no, "expected 4 columns");
        ModelPoint mp;
        mp.gender = gender_from_string(toks[0]);
        mp.age = int(parse_int_token(toks[1], path, line_no));
        mp.amount = parse_double_token(toks[2], path, line_no);
        mp.count = parse_double_token(toks[3], path, line_no);
        if (mp.amount < 0 || mp.count < 0)
            throw validation_error(path + ":" + std::to_string(line_no) +
                                   ": negative amount or count");
        p.points.push_back(mp);
    }
    if (p.points.empty()) throw validation_error("portfolio has no model points");
    return p;
}

// ---------------------------------------------------------------------------
// The full pipeline.
// ---------------------------------------------------------------------------

inline Manifest run_pipeline(const RunConfig& cfg) {
    Manifest manifest;
    manifest.config_hash = cfg.config_hash();
    {
        nlohmann::json echo;
        for (const auto& kv : split_char(cfg.canonical(), '\n')) {
            auto eq = kv.find('=');
            if (eq != std::string::npos) echo[kv.substr(0, eq)] = kv.substr(eq + 1);
        }
        manifest.config_echo = echo;
    }
    detail::ArtifactSink sink(cfg.out, manifest);

    auto meta_base = ArtifactMeta::standard(manifest.config_hash, cfg.seed);
    // The effective configuration rides along in every artifact header.
    for (const auto& kv : split_char(cfg.canonical(), '\n')) {
        auto eq = kv.find('=');
        if (eq != std::string::npos)
            meta_base.add("config_" + kv.substr(0, eq), kv.substr(eq + 1));
    }

    std::string stage = "ingest";
    try {
        // ---- ingest -------------------------------------------------------
        RawDeathsLexis deaths = parse_deaths_lexis(cfg.deaths_path);
        RawPopulation population = parse_population(cfg.population_path);
        meta_base.add("input_deaths", hex64(checksum_file(cfg.deaths_path)));
        meta_base.add("input_population", hex64(checksum_file(cfg.population_path)));
        std::optional<MonthlyBirthSeries> births;
        if (!cfg.births_path.empty()) {
            births = parse_monthly_births(cfg.births_path);
            meta_base.add("input_births", hex64(checksum_file(cfg.births_path)));
        }
        manifest.stages.emplace_back(stage, "ok");

        // ---- surface ------------------------------------------------------
        stage = "surface";
        int year_min = cfg.year_min, year_max = cfg.year_max;
        if (year_min == 0 || year_max == 0) {
            int deaths_lo = deaths.records.front().year, deaths_hi = deaths_lo;
            for (const auto& r : deaths.records) {
                deaths_lo = std::min(deaths_lo, r.year);
                deaths_hi = std::max(deaths_hi, r.year);
            }
            int pop_hi = population.records.front().year;
            for (const auto& r : population.records)
                pop_hi = std::max(pop_hi, r.year);
            year_max = std::min(deaths_hi, pop_hi - 1);
            year_min = std::max(deaths_lo, year_max - cfg.auto_years + 1);
        }
        SurfaceOptions sopt;
        sopt.territorial_suffix = cfg.territorial_suffix;
        MortalitySurface crude = build_surface(deaths, population, cfg.gender,
                                               cfg.age_min, cfg.age_max, year_min,
                                               year_max, sopt);
        write_surface_csv(crude, sink.path("crude_rates.csv"), meta_base);
        write_grid_csv_mirrored(crude.deaths, sink.path("crude_deaths.csv"),
                                meta_base, 10, &crude.missing);
        write_grid_csv_mirrored(crude.exposure, sink.path("crude_exposure.csv"),
                                meta_base, 10, &crude.missing);
        write_surface_json(crude, sink.path("crude_surface.json"), meta_base);
        for (const char* n :
             {"crude_rates.csv", "crude_rates.json", "crude_deaths.csv",
              "crude_deaths.json", "crude_exposure.csv", "crude_exposure.json",
              "crude_surface.json"})
            sink.record(n);
        manifest.stages.emplace_back(stage, "ok");

        // ---- correct ------------------------------------------------------
        stage = "correct";
        std::optional<MortalitySurface> corrected;
        bool do_correct = cfg.correction && births.has_value();
        if (do_correct) {
            CorrectionIndicator indicator = build_indicator(*births);
            if (!cfg.predicted_indicator_path.empty()) {
                CorrectionIndicator predicted =
                    read_indicator_csv(cfg.predicted_indicator_path);
                for (const auto& [b, e] : predicted.by_cohort)
                    if (!indicator.by_cohort.count(b))
                        indicator.by_cohort[b] = {e.value, Provenance::predicted};
            }
            std::vector<int> passthrough;
            CorrectOptions copt;
            copt.allow_passthrough = cfg.allow_passthrough;
            copt.passthrough_cohorts = &passthrough;
            corrected = correct_surface(crude, indicator, copt);
            write_indicator_csv(indicator, sink.path("indicator.csv"), meta_base);
            write_surface_csv(*corrected, sink.path("corrected_rates.csv"), meta_base);
            write_grid_csv_mirrored(corrected->exposure,
                                    sink.path("corrected_exposure.csv"), meta_base,
                                    10, &corrected->missing);
            write_surface_json(*corrected, sink.path("corrected_surface.json"),
                               meta_base);
            auto report = anomaly_report(crude, *corrected);
            {
                ArtifactMeta meta = meta_base;
                if (!passthrough.empty()) {
                    std::string cohorts;
                    for (int b : passthrough)
                        cohorts += (cohorts.empty() ? "" : " ") + std::to_string(b);
                    meta.add("passthrough_cohorts", cohorts);
                }
                RowTable table;
                table.columns = {"cohort", "cells", "deviation_crude",
                                 "deviation_corrected", "ratio"};
                for (const auto& row : report)
                    table.add_row({std::to_string(row.cohort),
                                   std::to_string(row.cells),
                                   format_double(row.deviation_before),
                                   format_double(row.deviation_after),
                                   format_double(row.ratio)});
                table.write(sink.path("anomaly_report.csv"), meta);
            }
            for (const char* n :
                 {"indicator.csv", "indicator.json", "corrected_rates.csv",
                  "corrected_rates.json", "corrected_exposure.csv",
                  "corrected_exposure.json", "corrected_surface.json",
                  "anomaly_report.csv", "anomaly_report.json"})
                sink.record(n);
            manifest.stages.emplace_back(stage, "ok");
        } else {
            manifest.stages.emplace_back(stage, "skipped");
        }

        // ---- fit ----------------------------------------------------------
        stage = "fit";
        struct DatasetFits {
            std::string label;
            const MortalitySurface* surface;
            std::vector<ModelFit> fits;
        };
        std::vector<DatasetFits> datasets;
        datasets.push_back({"crude", &crude, {}});
        if (corrected) datasets.push_back({"corrected", &*corrected, {}});

        nlohmann::json diag_json;
        diag_json["meta"] = meta_base.to_json();
        auto fits_json = nlohmann::json::array();
        std::vector<std::string> param_files;
        for (auto& ds : datasets) {
            for (ModelTag tag : cfg.models) {
                auto [params, diag] = detail::refit(tag, *ds.surface, FitOptions{});
                ModelFit mf{tag, params, diag};
                std::string stem = "fit_" + to_string(tag) + "_" + ds.label;
                write_params_csv(params, cfg.out, stem, meta_base, param_files);
                Grid res = standardized_residuals(params, *ds.surface);
                write_grid_csv_mirrored(res, sink.path(stem + "_residuals.csv"),
                                        meta_base);
                param_files.push_back(stem + "_residuals.csv");
                param_files.push_back(stem + "_residuals.json");
                nlohmann::json jf;
                jf["model"] = to_string(tag);
                jf["dataset"] = ds.label;
                jf["loglik"] = diag.loglik;
                jf["n_params"] = diag.n_params;
                jf["n_cells"] = diag.n_cells;
                jf["bic"] = diag.bic;
                jf["iterations"] = diag.iterations;
                jf["converged"] = diag.converged;
                jf["params"] = params_to_json(params);
                fits_json.push_back(jf);
                ds.fits.push_back(std::move(mf));
            }
        }
        diag_json["fits"] = fits_json;
        if (datasets.size() == 2) {
            auto table = nlohmann::json::array();
            for (std::size_t i = 0; i < datasets[0].fits.size(); ++i) {
                const auto& a = datasets[0].fits[i];
                const auto& b = datasets[1].fits[i];
                table.push_back(
                    {{"model", to_string(a.tag)},
                     {"bic_crude", a.diag.bic},
                     {"bic_corrected", b.diag.bic},
                     {"pct_diff", a.diag.bic != 0.0
                                      ? (b.diag.bic - a.diag.bic) / std::fabs(a.diag.bic)
                                      : 0.0}});
            }
            diag_json["bic_comparison"] = table;
        }
        write_json_file(diag_json, sink.path("diagnostics.json"));
        for (const auto& n : param_files) sink.record(n);
        sink.record("diagnostics.json");
        manifest.stages.emplace_back(stage, "ok");

        // ---- select -------------------------------------------------------
        stage = "select";
        DatasetFits& preferred = datasets.back();
        SelectionReport selection =
            select_model(preferred.fits, *preferred.surface, cfg.model_override);
        {
            nlohmann::json j;
            j["meta"] = meta_base.to_json();
            j["dataset"] = preferred.label;
            j["chosen"] = to_string(selection.chosen);
            j["overridden"] = selection.overridden;
            auto rows = nlohmann::json::array();
            for (const auto& r : selection.rows)
                rows.push_back({{"model", to_string(r.tag)},
                                {"bic", r.bic},
                                {"runs_z_time", r.runs_z_time},
                                {"runs_z_age", r.runs_z_age},
                                {"runs_z_cohort", r.runs_z_cohort},
                                {"stability_drift", r.stability_drift}});
            j["rows"] = rows;
            write_json_file(j, sink.path("selection.json"));
        }
        sink.record("selection.json");
        manifest.stages.emplace_back(stage, "ok");

        // ---- project ------------------------------------------------------
        stage = "project";
        SimOptions sim_opt;
        sim_opt.omega = cfg.omega;
        sim_opt.closure_start = cfg.closure_start;
        sim_opt.threads = cfg.threads;

        struct Projection {
            QSurface baseline, central, scr;
        };
        std::map<std::string, Projection> projections;
        for (auto& ds : datasets) {
            const ModelFit* chosen = nullptr;
            for (const auto& f : ds.fits)
                if (f.tag == selection.chosen) chosen = &f;
            if (!chosen) throw validation_error("selected model missing from fits");
            TimeSeriesDynamics dyn = estimate_dynamics(chosen->params);
            ScenarioSet set = simulate(chosen->params, dyn, cfg.scenarios,
                                       cfg.horizon, cfg.seed, sim_opt);
            Projection proj;
            proj.baseline = model_baseline(chosen->params, sim_opt);
            proj.central = set.paths[0];
            proj.scr = percentile_table(set, proj.baseline, 0.5);
            if (ds.label == preferred.label) {
                int le_age = cfg.le_age < 0 ? cfg.age_min : cfg.le_age;
                int le_trunc = cfg.le_truncate < 0 ? cfg.age_max + 1 : cfg.le_truncate;
                LeFan period_fan = life_expectancy_fan(set, proj.baseline,
                                                       LeKind::period, le_age, le_trunc);
                detail::write_fan_csv(period_fan, sink.path("le_fan_period.csv"),
                                      meta_base);
                LeFan cohort_fan = life_expectancy_fan(set, proj.baseline,
                                                       LeKind::cohort, le_age,
                                                       cfg.omega);
                detail::write_fan_csv(cohort_fan, sink.path("le_fan_cohort.csv"),
                                      meta_base);
                nlohmann::json j;
                j["meta"] = meta_base.to_json();
                j["model"] = to_string(selection.chosen);
                j["scenarios"] = cfg.scenarios;
                j["horizon"] = cfg.horizon;
                j["seed"] = cfg.seed;
                j["clamp_count"] = set.clamp_count;
                j["dynamics"] = {{"drift", dyn.drift},
                                 {"variance", dyn.variance},
                                 {"drift2", dyn.drift2},
                                 {"gamma_drift", dyn.gamma_drift},
                                 {"gamma_variance", dyn.gamma_variance}};
                j["note"] = "best-estimate path is the central projection of the "
                            "selected model (substituted assumption)";
                write_json_file(j, sink.path("scenario_summary.json"));
            }
            projections[ds.label] = std::move(proj);
        }
        const Projection& pref_proj = projections[preferred.label];
        write_grid_csv_mirrored(pref_proj.central.q, sink.path("be_table.csv"),
                                meta_base);
        write_grid_csv_mirrored(pref_proj.scr.q,
                                sink.path("scr_table_" + preferred.label + ".csv"),
                                meta_base);
        if (datasets.size() == 2 && preferred.label != "crude")
            write_grid_csv_mirrored(projections["crude"].scr.q,
                                    sink.path("scr_table_crude.csv"), meta_base);
        sink.record("be_table.csv");
        sink.record("be_table.json");
        sink.record("scr_table_" + preferred.label + ".csv");
        sink.record("scr_table_" + preferred.label + ".json");
        if (datasets.size() == 2 && preferred.label != "crude") {
            sink.record("scr_table_crude.csv");
            sink.record("scr_table_crude.json");
        }
        for (const char* n : {"le_fan_period.csv", "le_fan_period.json",
                              "le_fan_cohort.csv", "le_fan_cohort.json",
                              "scenario_summary.json"})
            sink.record(n);
        manifest.stages.emplace_back(stage, "ok");

        // ---- scr ----------------------------------------------------------
        stage = "scr";
        if (!cfg.portfolio_path.empty()) {
            AnnuityPortfolio portfolio =
                read_portfolio_csv(cfg.portfolio_path, cfg.discount_rate);
            meta_base.add("input_portfolio", hex64(checksum_file(cfg.portfolio_path)));
            // BE held fixed: the preferred calibration's central path.
            ImprovementPath be_path =
                improvement_path(pref_proj.baseline, pref_proj.central, PathRole::be);
            std::map<std::string, ShockedTables> tables;
            for (const auto& [label, proj] : projections) {
                ImprovementPath scr_path =
                    improvement_path(proj.baseline, proj.scr, PathRole::scr);
                tables[label] =
                    build_shocked_tables(be_path, scr_path, pref_proj.baseline);
            }
            const ShockedTables& pref_tables = tables.at(preferred.label);
            {
                RowTable table;
                table.columns = {"age", "cohort"};
                for (const auto& [label, t] : tables)
                    table.columns.push_back("ie_" + label);
                int x_lo = std::max(pref_tables.be.q.age_min(),
                                    cfg.omega - cfg.horizon);
                for (int x = x_lo; x <= cfg.age_max; ++x) {
                    std::vector<std::string> row = {
                        std::to_string(x), std::to_string(pref_tables.t0 - x)};
                    for (const auto& [label, t] : tables)
                        row.push_back(format_double(ie_indicator(t, x, t.t0)));
                    table.rows.push_back(row);
                }
                table.write(sink.path("ie_curve.csv"), meta_base);
            }
            sink.record("ie_curve.csv");
            sink.record("ie_curve.json");
            nlohmann::json j;
            j["meta"] = meta_base.to_json();
            if (tables.size() == 2) {
                ScrImpactReport r = scr_impact(portfolio, tables.at("crude"),
                                               tables.at("corrected"));
                j["value_be"] = r.value_be;
                j["scr_crude"] = r.scr_crude;
                j["scr_corrected"] = r.scr_corrected;
                j["abs_diff"] = r.abs_diff;
                j["rel_diff"] = r.rel_diff;
            } else {
                const auto& only = *tables.begin();
                double be = portfolio_value(portfolio, only.second, PathRole::be);
                double scr = portfolio_value(portfolio, only.second, PathRole::scr);
                j["value_be"] = be;
                j["scr_" + only.first] = scr - be;
                j["note"] = "single calibration; no crude/corrected comparison";
            }
            j["stability"] = "not computed (single vintage); use the scr subcommand "
                             "with a previous-vintage table set";
            write_json_file(j, sink.path("scr_impact.json"));
            sink.record("scr_impact.json");
            manifest.stages.emplace_back(stage, "ok");
        } else {
            manifest.stages.emplace_back(stage, "skipped");
        }

        manifest.stages.emplace_back("manifest", "ok");
        write_json_file(manifest.to_json(), sink.path("manifest.json"));
        return manifest;
    } catch (...) {
        manifest.stages.emplace_back(stage, "failed");
        try {
            write_json_file(manifest.to_json(), sink.path("manifest.json"));
        } catch (...) {
        }
        throw;
    }
}

}  // namespace lexis
