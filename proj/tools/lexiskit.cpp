// lexiskit: mortality-table correction and longevity-risk toolkit.
//
// Subcommands wire the library end to end: surface construction from HMD
// files, improvement matrices and life expectancies, fertility-based cohort
// correction, donor regression for indicator backcasting, stochastic model
// fitting, scenario projection, SCR valuation, ground-truth micro-simulation,
// and the full pipeline with a manifest.
//
// Exit codes: 0 ok, 2 input error, 3 numeric failure.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "lexis/correction.hpp"
#include "lexis/core.hpp"
#include "lexis/forecast.hpp"
#include "lexis/ingest.hpp"
#include "lexis/models.hpp"
#include "lexis/oracle.hpp"
#include "lexis/pipeline.hpp"
#include "lexis/regression.hpp"
#include "lexis/scr.hpp"
#include "lexis/surface.hpp"
#include "lexis/table_io.hpp"

namespace {

bool g_quiet = false;

void info(const std::string& msg) {
    if (!g_quiet) std::cerr << msg << "\n";
}

std::pair<int, int> parse_range(const std::string& s, const char* what) {
    auto toks = lexis::split_char(s, ':');
    if (toks.size() != 2)
        throw lexis::validation_error(std::string(what) + " must be lo:hi, got '" + s + "'");
    return {int(lexis::parse_int_token(toks[0], what, 0)),
            int(lexis::parse_int_token(toks[1], what, 0))};
}

void ensure_dir(const std::string& dir) {
    std::filesystem::create_directories(dir);
}

lexis::ArtifactMeta meta_for(const std::string& tag, std::uint64_t seed,
                             const std::vector<std::pair<std::string, std::string>>& inputs) {
    auto meta = lexis::ArtifactMeta::standard(lexis::hex64(lexis::fnv1a64(tag)), seed);
    for (const auto& [name, path] : inputs)
        meta.add("input_" + name, lexis::hex64(lexis::checksum_file(path)));
    return meta;
}

// Surface input: a bundle JSON, or a rates-only CSV (exposure defaults to 1
// so the rate grid doubles as the death grid).
lexis::MortalitySurface load_surface(const std::string& path) {
    if (path.size() > 5 && path.substr(path.size() - 5) == ".json")
        return lexis::read_surface_json(path);
    std::vector<std::uint8_t> missing;
    lexis::Grid rates = lexis::read_grid_csv(path, &missing);
    lexis::MortalitySurface s;
    s.rate = rates;
    s.exposure = rates;
    s.deaths = rates;
    s.missing = std::move(missing);
    for (auto& v : s.exposure.values()) v = 1.0;
    s.deaths = s.rate;
    s.validate();
    return s;
}

lexis::MortalitySurface crop_surface(const lexis::MortalitySurface& surface,
                                     int age_lo, int age_hi, int yr_lo, int yr_hi) {
    lexis::MortalitySurface out;
    out.gender = surface.gender;
    out.source = surface.source;
    out.open_age = surface.open_age;
    out.deaths = lexis::Grid(age_lo, age_hi, yr_lo, yr_hi);
    out.exposure = out.deaths;
    out.rate = out.deaths;
    out.missing.assign(out.rate.size(), 0);
    for (int x = age_lo; x <= age_hi; ++x)
        for (int t = yr_lo; t <= yr_hi; ++t) {
            out.deaths.at(x, t) = surface.deaths.at(x, t);
            out.exposure.at(x, t) = surface.exposure.at(x, t);
            out.rate.at(x, t) = surface.rate.at(x, t);
            if (surface.is_missing(x, t)) out.missing[out.rate.index(x, t)] = 1;
        }
    return out;
}

// ---- surface ---------------------------------------------------------------

struct SurfaceArgs {
    std::string deaths, population, gender = "total", ages = "60:95", years;
    std::string out = "out";
};

void cmd_surface(const SurfaceArgs& a) {
    auto [age_lo, age_hi] = parse_range(a.ages, "--ages");
    auto [yr_lo, yr_hi] = parse_range(a.years, "--years");
    auto deaths = lexis::parse_deaths_lexis(a.deaths);
    auto population = lexis::parse_population(a.population);
    auto surface = lexis::build_surface(deaths, population,
                                        lexis::gender_from_string(a.gender),
                                        age_lo, age_hi, yr_lo, yr_hi);
    ensure_dir(a.out);
    auto meta = meta_for("surface", 0, {{"deaths", a.deaths}, {"population", a.population}});
    lexis::write_surface_csv(surface, a.out + "/rates.csv", meta);
    lexis::write_grid_csv_mirrored(surface.deaths, a.out + "/deaths.csv", meta, 10,
                                   &surface.missing);
    lexis::write_grid_csv_mirrored(surface.exposure, a.out + "/exposure.csv", meta,
                                   10, &surface.missing);
    lexis::write_surface_json(surface, a.out + "/surface.json", meta);
    info("surface: " + std::to_string(surface.rate.n_ages()) + " ages x " +
         std::to_string(surface.rate.n_years()) + " years -> " + a.out);
}

// ---- improvements ----------------------------------------------------------

struct ImprovementsArgs {
    std::string surface;
    std::string out = "out";
};

void cmd_improvements(const ImprovementsArgs& a) {
    auto surface = load_surface(a.surface);
    auto im = lexis::improvements(surface);
    std::vector<std::uint8_t> undefined(im.defined.size());
    for (std::size_t i = 0; i < im.defined.size(); ++i)
        undefined[i] = im.defined[i] ? 0 : 1;
    ensure_dir(a.out);
    auto meta = meta_for("improvements", 0, {{"surface", a.surface}});
    lexis::write_grid_csv_mirrored(im.r, a.out + "/improvements.csv", meta, 6,
                                   &undefined);
    info("improvements: wrote " + a.out + "/improvements.csv");
}

// ---- life-expectancy ---------------------------------------------------------

struct LifeExpectancyArgs {
    std::string surface, gender;
    int age = 30, truncate = 95;
    std::string years;  // default: every year of the surface
    std::string out = "out";
};

void cmd_life_expectancy(const LifeExpectancyArgs& a) {
    auto surface = load_surface(a.surface);
    if (!a.gender.empty() &&
        surface.gender != lexis::gender_from_string(a.gender))
        throw lexis::validation_error("surface carries gender '" +
                                      lexis::to_string(surface.gender) +
                                      "', not '" + a.gender + "'");
    auto q = lexis::to_q(surface);
    int yr_lo = q.q.year_min(), yr_hi = q.q.year_max();
    if (!a.years.empty()) std::tie(yr_lo, yr_hi) = parse_range(a.years, "--years");
    ensure_dir(a.out);
    lexis::RowTable table;
    table.columns = {"year", "life_expectancy"};
    for (int t = yr_lo; t <= yr_hi; ++t)
        table.add_row({std::to_string(t),
                       lexis::format_double(lexis::period_life_expectancy(
                           q, a.age, a.truncate, t))});
    auto meta = meta_for("life-expectancy", 0, {{"surface", a.surface}});
    meta.add("age", std::to_string(a.age));
    meta.add("truncate", std::to_string(a.truncate));
    table.write(a.out + "/life_expectancy.csv", meta);
    info("life-expectancy: ages " + std::to_string(a.age) + ".." +
         std::to_string(a.truncate) + " -> " + a.out);
}

// ---- correct ---------------------------------------------------------------

struct CorrectArgs {
    std::string surface, births, predicted;
    bool allow_passthrough = false;
    bool calendar_months = false;
    std::string out = "out";
};

void cmd_correct(const CorrectArgs& a) {
    auto surface = load_surface(a.surface);
    auto births = lexis::parse_monthly_births(a.births);
    auto indicator = lexis::build_indicator(
        births, a.calendar_months ? lexis::MonthWeighting::calendar
                                  : lexis::MonthWeighting::equal_months);
    if (!a.predicted.empty()) {
        auto predicted = lexis::read_indicator_csv(a.predicted);
        for (const auto& [b, e] : predicted.by_cohort)
            if (!indicator.by_cohort.count(b))
                indicator.by_cohort[b] = {e.value, lexis::Provenance::predicted};
    }
    std::vector<int> passthrough;
    lexis::CorrectOptions opt;
    opt.allow_passthrough = a.allow_passthrough;
    opt.passthrough_cohorts = &passthrough;
    auto corrected = lexis::correct_surface(surface, indicator, opt);

    ensure_dir(a.out);
    auto meta = meta_for("correct", 0, {{"surface", a.surface}, {"births", a.births}});
    if (!passthrough.empty()) {
        std::string cohorts;
        for (int b : passthrough)
            cohorts += (cohorts.empty() ? "" : " ") + std::to_string(b);
        meta.add("passthrough_cohorts", cohorts);
        info("correct: pass-through (I=1) on cohorts: " + cohorts);
    }
    lexis::write_surface_csv(corrected, a.out + "/corrected_rates.csv", meta);
    lexis::write_surface_json(corrected, a.out + "/corrected_surface.json", meta);
    lexis::write_indicator_csv(indicator, a.out + "/indicator.csv", meta);
    auto report = lexis::anomaly_report(surface, corrected);
    lexis::RowTable table;
    table.columns = {"cohort", "cells", "deviation_crude", "deviation_corrected",
                     "ratio"};
    for (const auto& row : report)
        table.add_row({std::to_string(row.cohort), std::to_string(row.cells),
                       lexis::format_double(row.deviation_before),
                       lexis::format_double(row.deviation_after),
                       lexis::format_double(row.ratio)});
    table.write(a.out + "/anomaly_report.csv", meta);
    info("correct: wrote corrected surface and indicator to " + a.out);
}

// ---- regress-indicator -------------------------------------------------------

struct RegressArgs {
    std::string target;
    std::vector<std::string> donors;  // NAME=path
    std::string criterion = "adjr2";
    std::string window = "1947:2010";
    std::string predict_years;
    std::string out = "out";
};

void cmd_regress(const RegressArgs& a) {
    auto target_ind = lexis::read_indicator_csv(a.target);
    lexis::IndicatorSeries target;
    for (const auto& [b, e] : target_ind.by_cohort) target[b] = e.value;

    std::map<std::string, lexis::IndicatorSeries> donors;
    for (const auto& spec : a.donors) {
        auto eq = spec.find('=');
        if (eq == std::string::npos)
            throw lexis::validation_error("--donor expects NAME=path, got '" + spec + "'");
        auto ind = lexis::read_indicator_csv(spec.substr(eq + 1));
        lexis::IndicatorSeries series;
        for (const auto& [b, e] : ind.by_cohort) series[b] = e.value;
        donors[spec.substr(0, eq)] = series;
    }
    auto [w_lo, w_hi] = parse_range(a.window, "--window");
    lexis::Criterion crit = a.criterion == "bic" ? lexis::Criterion::bic
                                                 : lexis::Criterion::adj_r2;
    auto result = lexis::stepwise_select(target, donors, {w_lo, w_hi}, crit);
    auto other = lexis::stepwise_select(target, donors, {w_lo, w_hi},
                                        crit == lexis::Criterion::bic
                                            ? lexis::Criterion::adj_r2
                                            : lexis::Criterion::bic);

    ensure_dir(a.out);
    nlohmann::json j;
    j["criterion"] = lexis::to_string(crit);
    auto fit_json = [](const lexis::RegressionFit& f) {
        nlohmann::json fj;
        fj["donors"] = f.donors;
        fj["intercept"] = f.intercept;
        fj["intercept_se"] = f.intercept_se;
        fj["coef"] = f.coef;
        fj["se"] = f.se;
        fj["n"] = f.years.size();
        fj["rss"] = f.rss;
        fj["r2"] = f.r2;
        fj["adj_r2"] = f.adj_r2;
        fj["bic"] = f.bic;
        return fj;
    };
    j["selected"] = fit_json(result.best);
    j["alternative_criterion"] = lexis::to_string(other.best.criterion);
    j["alternative"] = fit_json(other.best);
    auto subsets = nlohmann::json::array();
    for (const auto& s : result.enumerated)
        subsets.push_back({{"donors", s.donors}, {"bic", s.bic}, {"adj_r2", s.adj_r2}});
    j["subsets"] = subsets;
    lexis::write_json_file(j, a.out + "/fit_report.json");

    if (!a.predict_years.empty()) {
        auto [p_lo, p_hi] = parse_range(a.predict_years, "--predict-years");
        std::vector<int> years;
        for (int y = p_lo; y <= p_hi; ++y) years.push_back(y);
        auto predicted = lexis::predict(result.best, donors, years);
        lexis::CorrectionIndicator out_ind;
        out_ind.country = target_ind.country;
        for (const auto& [y, v] : predicted.values)
            out_ind.by_cohort[y] = {v, lexis::Provenance::predicted};
        lexis::write_indicator_csv(out_ind, a.out + "/predicted_indicator.csv", {});
        if (!predicted.omitted_years.empty()) {
            std::string ys;
            for (int y : predicted.omitted_years) ys += " " + std::to_string(y);
            info("regress-indicator: omitted years lacking donor data:" + ys);
        }
    }
    std::string picked;
    for (const auto& d : result.best.donors) picked += (picked.empty() ? "" : ", ") + d;
    info("regress-indicator: selected {" + picked + "} by " + lexis::to_string(crit));
}

// ---- fit ---------------------------------------------------------------------

struct FitArgs {
    std::string surface, model = "all", ages, years;
    std::string out = "out";
};

void cmd_fit(const FitArgs& a) {
    auto surface = load_surface(a.surface);
    if (!a.ages.empty() || !a.years.empty()) {
        int age_lo = surface.rate.age_min(), age_hi = surface.rate.age_max();
        int yr_lo = surface.rate.year_min(), yr_hi = surface.rate.year_max();
        if (!a.ages.empty()) std::tie(age_lo, age_hi) = parse_range(a.ages, "--ages");
        if (!a.years.empty()) std::tie(yr_lo, yr_hi) = parse_range(a.years, "--years");
        surface = crop_surface(surface, age_lo, age_hi, yr_lo, yr_hi);
    }
    long zero_cells = 0;
    for (double d : surface.deaths.values())
        if (d == 0.0) ++zero_cells;
    if (zero_cells > 0)
        info("fit: " + std::to_string(zero_cells) +
             " zero-death cells; likelihood floor 1e-8 applies");

    std::vector<lexis::ModelTag> models;
    if (a.model == "all")
        models = {lexis::ModelTag::m1, lexis::ModelTag::m3, lexis::ModelTag::m5};
    else
        models = {lexis::model_from_string(a.model)};

    ensure_dir(a.out);
    auto meta = meta_for("fit", 0, {{"surface", a.surface}});
    for (auto tag : models) {
        auto [params, diag] = [&] {
            switch (tag) {
                case lexis::ModelTag::m1: return lexis::fit_m1(surface);
                case lexis::ModelTag::m3: return lexis::fit_m3(surface);
                default: return lexis::fit_m5(surface);
            }
        }();
        std::string stem = "fit_" + lexis::to_string(tag);
        std::vector<std::string> files;
        lexis::write_params_csv(params, a.out, stem, meta, files);
        auto res = lexis::standardized_residuals(params, surface);
        lexis::write_grid_csv_mirrored(res, a.out + "/" + stem + "_residuals.csv",
                                       meta);
        nlohmann::json j;
        j["meta"] = meta.to_json();
        j["model"] = lexis::to_string(tag);
        j["loglik"] = diag.loglik;
        j["n_params"] = diag.n_params;
        j["n_cells"] = diag.n_cells;
        j["bic"] = diag.bic;
        j["iterations"] = diag.iterations;
        j["params"] = lexis::params_to_json(params);
        lexis::write_json_file(j, a.out + "/" + stem + ".json");
        info("fit: " + lexis::to_string(tag) + " BIC " + std::to_string(diag.bic) +
             " (" + std::to_string(diag.iterations) + " iterations)");
    }
}

// ---- project -------------------------------------------------------------------

struct ProjectArgs {
    std::string params;
    int scenarios = 5000, horizon = 60;
    std::uint64_t seed = 42;
    std::string percentiles = "0.5,50,99.5";
    int omega = 120, closure_start = -1, threads = 1;
    int le_age = -1, le_truncate = -1;
    std::string out = "out";
};

void cmd_project(const ProjectArgs& a) {
    auto j = lexis::read_json_file(a.params);
    auto params = lexis::params_from_json(
        j.contains("params") ? j.at("params") : j);
    auto dyn = lexis::estimate_dynamics(params);
    lexis::SimOptions opt;
    opt.omega = a.omega;
    opt.closure_start = a.closure_start;
    opt.threads = a.threads;
    auto set = lexis::simulate(params, dyn, a.scenarios, a.horizon, a.seed, opt);
    auto baseline = lexis::model_baseline(params, opt);

    ensure_dir(a.out);
    auto meta = meta_for("project", a.seed, {{"params", a.params}});
    lexis::write_q_json(baseline, a.out + "/baseline_q.json", meta);
    lexis::write_grid_csv_mirrored(set.paths[0].q, a.out + "/central_q.csv", meta);
    lexis::write_q_json(set.paths[0], a.out + "/central_q.json", meta);
    for (const auto& tok : lexis::split_char(a.percentiles, ',')) {
        if (tok.empty()) continue;
        double p = lexis::parse_double_token(tok, "--percentiles", 0);
        auto table = lexis::percentile_table(set, baseline, p);
        std::string name = "percentile_" + tok;
        lexis::write_grid_csv_mirrored(table.q, a.out + "/" + name + ".csv", meta);
        lexis::write_q_json(table, a.out + "/" + name + "_q.json", meta);
    }
    int le_age = a.le_age < 0 ? params.age_min : a.le_age;
    int le_trunc = a.le_truncate < 0 ? params.age_max + 1 : a.le_truncate;
    auto period_fan = lexis::life_expectancy_fan(set, baseline, lexis::LeKind::period,
                                                 le_age, le_trunc);
    lexis::detail::write_fan_csv(period_fan, a.out + "/le_fan_period.csv", meta);
    auto cohort_fan = lexis::life_expectancy_fan(set, baseline, lexis::LeKind::cohort,
                                                 le_age, a.omega);
    lexis::detail::write_fan_csv(cohort_fan, a.out + "/le_fan_cohort.csv", meta);

    nlohmann::json summary;
    summary["meta"] = meta.to_json();
    summary["model"] = lexis::to_string(params.model);
    summary["scenarios"] = a.scenarios;
    summary["horizon"] = a.horizon;
    summary["seed"] = a.seed;
    summary["clamp_count"] = set.clamp_count;
    summary["dynamics"] = {{"drift", dyn.drift},
                           {"variance", dyn.variance},
                           {"drift2", dyn.drift2},
                           {"cov2", dyn.cov2},
                           {"gamma_drift", dyn.gamma_drift},
                           {"gamma_variance", dyn.gamma_variance}};
    lexis::write_json_file(summary, a.out + "/scenario_summary.json");
    info("project: " + std::to_string(a.scenarios) + " scenarios over " +
         std::to_string(a.horizon) + " years -> " + a.out);
}

// ---- scr -----------------------------------------------------------------------

struct ScrArgs {
    // Table mode: prebuilt q surfaces from `project`.
    std::string base, be, scr, scr_crude;
    // Model mode: fitted-model artifacts, projected here.
    std::string params_corrected, params_crude;
    int scenarios = 5000, horizon = 60;
    std::uint64_t seed = 42;
    int omega = 120, closure_start = -1, threads = 1;

    std::string portfolio;
    std::string portfolio_config;  // JSON {"discount_rate": r, "timing": "end"}
    double rate = 0.02;
    bool weight_by_count = false;
    std::string prev_base, prev_be, prev_scr;  // previous vintage for stability
    std::string out = "out";
};

double resolve_discount_rate(const ScrArgs& a) {
    if (a.portfolio_config.empty()) return a.rate;
    auto j = lexis::read_json_file(a.portfolio_config);
    if (j.contains("timing") && j.at("timing") != "end")
        throw lexis::validation_error("only end-of-year payment timing is supported");
    return j.value("discount_rate", a.rate);
}

void cmd_scr(const ScrArgs& a) {
    using lexis::QSurface;
    QSurface base, be_q, scr_q;
    std::optional<QSurface> crude_scr_q;

    if (!a.params_corrected.empty()) {
        // Model mode: simulate both calibrations, keep the corrected
        // calibration's central path as the shared Best Estimate.
        lexis::SimOptions opt;
        opt.omega = a.omega;
        opt.closure_start = a.closure_start;
        opt.threads = a.threads;
        auto project_one = [&](const std::string& path) {
            auto j = lexis::read_json_file(path);
            auto params = lexis::params_from_json(
                j.contains("params") ? j.at("params") : j);
            auto dyn = lexis::estimate_dynamics(params);
            auto set = lexis::simulate(params, dyn, a.scenarios, a.horizon,
                                       a.seed, opt);
            auto baseline = lexis::model_baseline(params, opt);
            return std::tuple<QSurface, QSurface, QSurface>(
                baseline, set.paths[0], lexis::percentile_table(set, baseline, 0.5));
        };
        auto [b0, central0, scr0] = project_one(a.params_corrected);
        base = b0;
        be_q = central0;
        scr_q = scr0;
        if (!a.params_crude.empty()) {
            auto [b1, central1, scr1] = project_one(a.params_crude);
            // Re-anchor the crude SCR improvements on the shared base.
            auto ir = lexis::improvement_path(b1, scr1, lexis::PathRole::scr);
            QSurface rebuilt;
            rebuilt.q = lexis::Grid(base.q.age_min(), base.q.age_max(),
                                    ir.t0, ir.ir.year_max());
            rebuilt.missing.assign(rebuilt.q.size(), 0);
            for (int x = base.q.age_min(); x <= base.q.age_max(); ++x)
                for (int t = ir.t0; t <= ir.ir.year_max(); ++t)
                    rebuilt.q.at(x, t) = std::min(
                        1.0, std::max(0.0, base.q.at(x, ir.t0) *
                                               (1.0 + ir.ir.at(x, t))));
            crude_scr_q = rebuilt;
        }
    } else {
        if (a.base.empty() || a.be.empty() || a.scr.empty())
            throw lexis::validation_error(
                "scr needs either --params-corrected or --base/--be/--scr");
        base = lexis::read_q_json(a.base);
        be_q = lexis::read_q_json(a.be);
        scr_q = lexis::read_q_json(a.scr);
        if (!a.scr_crude.empty()) crude_scr_q = lexis::read_q_json(a.scr_crude);
    }

    auto be_path = lexis::improvement_path(base, be_q, lexis::PathRole::be);
    auto scr_path = lexis::improvement_path(base, scr_q, lexis::PathRole::scr);
    auto tables = lexis::build_shocked_tables(be_path, scr_path, base);

    ensure_dir(a.out);
    lexis::ArtifactMeta meta = lexis::ArtifactMeta::standard(
        lexis::hex64(lexis::fnv1a64("scr")), a.seed);
    lexis::write_grid_csv_mirrored(tables.be.q, a.out + "/be_table.csv", meta);
    lexis::write_grid_csv_mirrored(tables.scr.q, a.out + "/scr_table.csv", meta);

    std::optional<lexis::ShockedTables> crude_tables;
    if (crude_scr_q) {
        auto scr2_path = lexis::improvement_path(base, *crude_scr_q,
                                                 lexis::PathRole::scr);
        crude_tables = lexis::build_shocked_tables(be_path, scr2_path, base);
        lexis::write_grid_csv_mirrored(crude_tables->scr.q,
                                       a.out + "/scr_table_crude.csv", meta);
    }

    {
        lexis::RowTable table;
        table.columns = {"age", "cohort", "ie"};
        if (crude_tables) table.columns.push_back("ie_crude");
        int horizon = tables.be.q.year_max() - tables.t0;
        // Stop below the terminal age, where q = 1 leaves no expectancy.
        int x_lo = std::max(tables.be.q.age_min(), tables.be.q.age_max() - horizon);
        for (int x = x_lo; x < tables.be.q.age_max(); ++x) {
            std::vector<std::string> row = {
                std::to_string(x), std::to_string(tables.t0 - x),
                lexis::format_double(lexis::ie_indicator(tables, x, tables.t0))};
            if (crude_tables)
                row.push_back(lexis::format_double(
                    lexis::ie_indicator(*crude_tables, x, tables.t0)));
            table.rows.push_back(row);
        }
        table.write(a.out + "/ie_curve.csv", meta);
    }

    nlohmann::json j;
    j["meta"] = meta.to_json();
    if (!a.portfolio.empty()) {
        auto portfolio = lexis::read_portfolio_csv(a.portfolio, resolve_discount_rate(a));
        if (crude_tables) {
            auto r = lexis::scr_impact(portfolio, *crude_tables, tables);
            j["value_be"] = r.value_be;
            j["scr_crude"] = r.scr_crude;
            j["scr_corrected"] = r.scr_corrected;
            j["abs_diff"] = r.abs_diff;
            j["rel_diff"] = r.rel_diff;
        } else {
            double be_v = lexis::portfolio_value(portfolio, tables, lexis::PathRole::be);
            double scr_v = lexis::portfolio_value(portfolio, tables, lexis::PathRole::scr);
            j["value_be"] = be_v;
            j["scr"] = scr_v - be_v;
        }
        if (!a.prev_base.empty()) {
            auto pbase = lexis::read_q_json(a.prev_base);
            auto pbe = lexis::read_q_json(a.prev_be);
            auto pscr = lexis::read_q_json(a.prev_scr);
            auto p_be_path = lexis::improvement_path(pbase, pbe, lexis::PathRole::be);
            auto p_scr_path = lexis::improvement_path(pbase, pscr, lexis::PathRole::scr);
            auto prev_tables = lexis::build_shocked_tables(p_be_path, p_scr_path, pbase);
            lexis::StabilityOptions sopt;
            sopt.weight_by_count = a.weight_by_count;
            double evolution =
                lexis::stability_indicator(prev_tables, tables, portfolio, sopt);
            nlohmann::json stab;
            stab["valuation_year_prev"] = prev_tables.t0;
            stab["valuation_year"] = tables.t0;
            stab["gap_evolution"] = evolution;
            stab["gap_evolution_pct"] = evolution * 100.0;
            stab["weighting"] = a.weight_by_count ? "count" : "amount";
            j["stability"] = stab;
            lexis::write_json_file(stab, a.out + "/stability.json");
        }
    }
    lexis::write_json_file(j, a.out + "/scr_impact.json");
    info("scr: wrote shocked tables and impact report to " + a.out);
}

// ---- simulate-oracle --------------------------------------------------------------

struct OracleArgs {
    std::string spec;
    std::uint64_t seed = 0;  // 0: use the spec file's seed
    std::string out = "out";
};

void cmd_oracle(const OracleArgs& a) {
    auto j = lexis::read_json_file(a.spec);
    lexis::OracleSpec spec;
    spec.horizon_year = j.at("horizon_year").get<int>();
    spec.seed = a.seed ? a.seed : j.value("seed", 1ull);
    if (j.contains("hazard_by_age"))
        spec.hazard_by_age = j.at("hazard_by_age").get<std::vector<double>>();
    else if (j.contains("hazard_constant"))
        spec.hazard_by_age = {j.at("hazard_constant").get<double>()};
    if (j.contains("hazard_grid")) {
        spec.hazard_grid = lexis::grid_from_json(j.at("hazard_grid"));
        if (spec.hazard_by_age.empty())
            spec.hazard_by_age = {0.0};  // fallback outside the grid
    }
    for (const auto& cj : j.at("cohorts")) {
        lexis::CohortSpec c = lexis::CohortSpec::uniform(
            cj.at("year").get<int>(), cj.at("births").get<long long>());
        if (cj.contains("month_weights")) {
            auto w = cj.at("month_weights").get<std::vector<double>>();
            if (w.size() != 12)
                throw lexis::validation_error("month_weights needs 12 entries");
            std::copy(w.begin(), w.end(), c.month_weights.begin());
        }
        spec.cohorts.push_back(c);
    }
    auto result = lexis::simulate_population(spec);
    ensure_dir(a.out);
    lexis::write_deaths_lexis(result.deaths, a.out + "/Deaths_lexis.txt");
    lexis::write_population(result.population, a.out + "/Population.txt");
    lexis::write_monthly_births(result.birth_series(), a.out + "/Births_monthly.txt");
    auto meta = meta_for("simulate-oracle", spec.seed, {{"spec", a.spec}});
    lexis::write_grid_csv_mirrored(result.true_rate, a.out + "/true_rate.csv", meta, 10);
    lexis::write_grid_csv_mirrored(result.exact_exposure, a.out + "/exact_exposure.csv",
                                   meta, 10);
    info("simulate-oracle: " + std::to_string(result.births_by_cohort.size()) +
         " cohorts -> " + a.out);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"mortality-table correction and longevity-risk toolkit"};
    app.require_subcommand(1);
    app.add_flag("--quiet", g_quiet, "suppress progress messages");
    std::string g_config, g_out;
    std::uint64_t g_seed = 0;
    app.add_option("--config", g_config, "config file (used by run)");
    app.add_option("--seed", g_seed, "seed override for stochastic subcommands");
    app.add_option("--out", g_out, "output directory override");

    SurfaceArgs sa;
    auto* surface = app.add_subcommand("surface", "build a period mortality surface");
    surface->add_option("--deaths", sa.deaths)->required();
    surface->add_option("--population", sa.population)->required();
    surface->add_option("--gender", sa.gender);
    surface->add_option("--ages", sa.ages);
    surface->add_option("--years", sa.years)->required();
    auto* surface_out = surface->add_option("--out", sa.out);

    ImprovementsArgs ia;
    auto* improvements_cmd =
        app.add_subcommand("improvements", "improvement-rate matrix of a surface");
    improvements_cmd->add_option("--surface", ia.surface)->required();
    auto* improvements_out = improvements_cmd->add_option("--out", ia.out);

    LifeExpectancyArgs la;
    auto* le_cmd = app.add_subcommand("life-expectancy",
                                      "period life expectancies of a surface");
    le_cmd->add_option("--surface", la.surface)->required();
    le_cmd->add_option("--gender", la.gender);
    le_cmd->add_option("--age", la.age, "starting age");
    le_cmd->add_option("--truncate", la.truncate, "truncation age");
    le_cmd->add_option("--years", la.years, "year range lo:hi");
    auto* le_out = le_cmd->add_option("--out", la.out);

    CorrectArgs ca;
    auto* correct = app.add_subcommand("correct", "apply the fertility-based correction");
    correct->add_option("--surface", ca.surface)->required();
    correct->add_option("--births", ca.births)->required();
    correct->add_option("--predicted", ca.predicted);
    correct->add_flag("--allow-passthrough", ca.allow_passthrough);
    correct->add_flag("--calendar-months", ca.calendar_months,
                      "weight month midpoints by calendar month lengths");
    auto* correct_out = correct->add_option("--out", ca.out);

    RegressArgs ra;
    auto* regress = app.add_subcommand("regress-indicator",
                                       "reconstruct an indicator from donor countries");
    regress->add_option("--target", ra.target)->required();
    regress->add_option("--donor", ra.donors)->required();
    regress->add_option("--criterion", ra.criterion)
        ->check(CLI::IsMember({"bic", "adjr2"}));
    regress->add_option("--window", ra.window);
    regress->add_option("--predict-years", ra.predict_years);
    auto* regress_out = regress->add_option("--out", ra.out);

    FitArgs fa;
    auto* fit = app.add_subcommand("fit", "fit stochastic mortality models");
    fit->add_option("--surface", fa.surface)->required();
    fit->add_option("--model", fa.model)->check(CLI::IsMember({"m1", "m3", "m5", "all"}));
    fit->add_option("--ages", fa.ages);
    fit->add_option("--years", fa.years);
    auto* fit_out = fit->add_option("--out", fa.out);

    ProjectArgs pa;
    auto* project = app.add_subcommand("project", "simulate scenarios and percentiles");
    project->add_option("--params", pa.params)->required();
    project->add_option("--scenarios", pa.scenarios);
    project->add_option("--horizon", pa.horizon);
    auto* project_seed = project->add_option("--seed", pa.seed);
    project->add_option("--percentiles", pa.percentiles);
    project->add_option("--omega", pa.omega);
    project->add_option("--closure-start", pa.closure_start);
    project->add_option("--threads", pa.threads);
    project->add_option("--le-age", pa.le_age);
    project->add_option("--le-truncate", pa.le_truncate);
    auto* project_out = project->add_option("--out", pa.out);

    ScrArgs sc;
    auto* scr = app.add_subcommand("scr", "build shocked tables and capital impact");
    scr->add_option("--base", sc.base);
    scr->add_option("--be", sc.be);
    scr->add_option("--scr", sc.scr);
    scr->add_option("--scr-crude", sc.scr_crude);
    scr->add_option("--params-corrected", sc.params_corrected,
                    "fitted-model JSON; project here instead of reading tables");
    scr->add_option("--params-crude", sc.params_crude);
    scr->add_option("--scenarios", sc.scenarios);
    scr->add_option("--horizon", sc.horizon);
    auto* scr_seed = scr->add_option("--seed", sc.seed);
    scr->add_option("--omega", sc.omega);
    scr->add_option("--closure-start", sc.closure_start);
    scr->add_option("--threads", sc.threads);
    scr->add_option("--portfolio", sc.portfolio);
    scr->add_option("--portfolio-config", sc.portfolio_config,
                    "JSON with discount_rate and payment timing");
    scr->add_option("--rate", sc.rate);
    scr->add_flag("--weight-by-count", sc.weight_by_count);
    scr->add_option("--prev-base", sc.prev_base);
    scr->add_option("--prev-be", sc.prev_be);
    scr->add_option("--prev-scr", sc.prev_scr);
    auto* scr_out = scr->add_option("--out", sc.out);

    OracleArgs oa;
    auto* oracle = app.add_subcommand("simulate-oracle",
                                      "micro-simulate a ground-truth population");
    oracle->add_option("--spec", oa.spec)->required();
    auto* oracle_seed = oracle->add_option("--seed", oa.seed);
    auto* oracle_out = oracle->add_option("--out", oa.out);

    struct RunArgs {
        std::string config;
        std::uint64_t seed = 0;
        std::string out;
    } ru;
    auto* run = app.add_subcommand("run", "run the full pipeline from a config file");
    auto* run_config = run->add_option("--config", ru.config);
    auto* run_seed = run->add_option("--seed", ru.seed);
    auto* run_out = run->add_option("--out", ru.out);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    // Global --out/--seed apply where the subcommand did not say otherwise.
    if (!g_out.empty()) {
        if (surface->parsed() && !*surface_out) sa.out = g_out;
        if (improvements_cmd->parsed() && !*improvements_out) ia.out = g_out;
        if (le_cmd->parsed() && !*le_out) la.out = g_out;
        if (correct->parsed() && !*correct_out) ca.out = g_out;
        if (regress->parsed() && !*regress_out) ra.out = g_out;
        if (fit->parsed() && !*fit_out) fa.out = g_out;
        if (project->parsed() && !*project_out) pa.out = g_out;
        if (scr->parsed() && !*scr_out) sc.out = g_out;
        if (oracle->parsed() && !*oracle_out) oa.out = g_out;
        if (run->parsed() && !*run_out) ru.out = g_out;
    }
    if (g_seed != 0) {
        if (project->parsed() && !*project_seed) pa.seed = g_seed;
        if (scr->parsed() && !*scr_seed) sc.seed = g_seed;
        if (oracle->parsed() && !*oracle_seed) oa.seed = g_seed;
        if (run->parsed() && !*run_seed) ru.seed = g_seed;
    }
    if (run->parsed() && !*run_config) ru.config = g_config;

    try {
        if (surface->parsed()) cmd_surface(sa);
        else if (improvements_cmd->parsed()) cmd_improvements(ia);
        else if (le_cmd->parsed()) cmd_life_expectancy(la);
        else if (correct->parsed()) cmd_correct(ca);
        else if (regress->parsed()) cmd_regress(ra);
        else if (fit->parsed()) cmd_fit(fa);
        else if (project->parsed()) cmd_project(pa);
        else if (scr->parsed()) cmd_scr(sc);
        else if (oracle->parsed()) cmd_oracle(oa);
        else if (run->parsed()) {
            if (ru.config.empty())
                throw lexis::validation_error("run needs --config");
            auto cfg = lexis::parse_config(ru.config);
            if (ru.seed != 0) cfg.seed = ru.seed;
            if (!ru.out.empty()) cfg.out = ru.out;
            auto manifest = lexis::run_pipeline(cfg);
            for (const auto& [stage, status] : manifest.stages)
                info("run: " + stage + " " + status);
        }
    } catch (const lexis::parse_error& e) {
        std::cerr << "input error: " << e.what() << "\n";
        return 2;
    } catch (const lexis::validation_error& e) {
        std::cerr << "input error: " << e.what() << "\n";
        return 2;
    } catch (const lexis::numeric_error& e) {
        std::cerr << "numeric failure: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
