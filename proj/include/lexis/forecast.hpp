#pragma once

// Projection of fitted models under random-walk-with-drift dynamics,
// scenario simulation with per-scenario seed substreams, pointwise
// improvement percentiles and life-expectancy fans.

#include <algorithm>
#include <array>
#include <cmath>
#include <thread>
#include <vector>

#include "lexis/core.hpp"
#include "lexis/models.hpp"
#include "lexis/rng.hpp"
#include "lexis/surface.hpp"

namespace lexis {

struct TimeSeriesDynamics {
    ModelTag model = ModelTag::m1;
    // Univariate period index (M1/M3 kappa).
    double drift = 0.0, variance = 0.0;
    // Bivariate index (M5 kappa1/kappa2).
    std::array<double, 2> drift2{};
    std::array<std::array<double, 2>, 2> cov2{};
    // Cohort random walk (M3 gamma), fitted on estimated cohorts only.
    double gamma_drift = 0.0, gamma_variance = 0.0;
};

struct ScenarioSet {
    int n_scenarios = 0;  // stochastic paths; index 0 is the central path
    int horizon = 0;
    int t0 = 0;
    std::uint64_t seed = 0;
    std::vector<QSurface> paths;  // size n_scenarios + 1, years t0+1..t0+horizon
    long clamp_count = 0;
};

struct SimOptions {
    int omega = 120;
    int closure_start = -1;  // default: top age of the calibration band
    int closure_fit_band = 15;
    int threads = 1;
};

namespace detail {

inline void diff_stats(const std::vector<double>& v, double& drift, double& var) {
    const std::size_t n = v.size();
    std::vector<double> d(n - 1);
    for (std::size_t i = 0; i + 1 < n; ++i) d[i] = v[i + 1] - v[i];
    double mean = 0.0;
    for (double x : d) mean += x;
    mean /= d.size();
    double s2 = 0.0;
    for (double x : d) s2 += (x - mean) * (x - mean);
    drift = mean;
    var = d.size() > 1 ? s2 / (d.size() - 1.0) : 0.0;
}

}  // namespace detail

// Random walk with drift on the fitted indices: drift = mean first
// difference, variance/covariance = sample (co)variance of the differences.
inline TimeSeriesDynamics estimate_dynamics(const ModelParams& p) {
    TimeSeriesDynamics dyn;
    dyn.model = p.model;
    const int T = p.n_years();
    if (T < 10) throw validation_error("dynamics need at least 10 fitted periods");
    if (p.model == ModelTag::m5) {
        std::vector<double> d1(T - 1), d2(T - 1);
        for (int i = 0; i + 1 < T; ++i) {
            d1[i] = p.kappa1[i + 1] - p.kappa1[i];
            d2[i] = p.kappa2[i + 1] - p.kappa2[i];
        }
        double m1 = 0, m2 = 0;
        for (int i = 0; i < T - 1; ++i) { m1 += d1[i]; m2 += d2[i]; }
        m1 /= (T - 1); m2 /= (T - 1);
        double c11 = 0, c12 = 0, c22 = 0;
        for (int i = 0; i < T - 1; ++i) {
            c11 += (d1[i] - m1) * (d1[i] - m1);
            c12 += (d1[i] - m1) * (d2[i] - m2);
            c22 += (d2[i] - m2) * (d2[i] - m2);
        }
        double denom = T - 2.0;
        dyn.drift2 = {m1, m2};
        dyn.cov2 = {{{c11 / denom, c12 / denom}, {c12 / denom, c22 / denom}}};
    } else {
        detail::diff_stats(p.kappa, dyn.drift, dyn.variance);
        if (p.model == ModelTag::m3) {
            std::vector<double> g;
            for (std::size_t i = 0; i < p.gamma.size(); ++i)
                if (p.gamma_estimated[i]) g.push_back(p.gamma[i]);
            if (g.size() < 6)
                throw validation_error("cohort walk needs at least 6 estimated cohorts");
            detail::diff_stats(g, dyn.gamma_drift, dyn.gamma_variance);
        }
    }
    return dyn;
}

// Fitted death probabilities at the last calibration year, closed to omega.
inline QSurface model_baseline(const ModelParams& p, const SimOptions& opt = {}) {
    int closure_start = opt.closure_start < 0 ? p.age_max : opt.closure_start;
    QSurface band;
    band.source = SourceTag::simulated;
    band.q = Grid(p.age_min, p.age_max, p.year_max, p.year_max);
    band.missing.assign(band.q.size(), 0);
    for (int x = p.age_min; x <= p.age_max; ++x)
        band.q.at(x, p.year_max) = p.fitted_q(x, p.year_max);
    return close_table(band, closure_start, opt.omega, opt.closure_fit_band);
}

namespace detail {

struct FutureIndexPaths {
    // kappa[tau] for tau = 1..horizon (univariate), or pairs for M5.
    std::vector<double> kappa, kappa1, kappa2;
    // gamma for cohorts beyond the last estimated one.
    std::vector<double> gamma_future;
    int first_future_cohort = 0;
};

inline FutureIndexPaths draw_paths(const ModelParams& p,
                                   const TimeSeriesDynamics& dyn, int horizon,
                                   std::uint64_t stream_seed, bool central) {
    FutureIndexPaths out;
    Rng rng(stream_seed);
    const int T = p.n_years();
    if (p.model == ModelTag::m5) {
        // Cholesky factor of the innovation covariance.
        double l11 = std::sqrt(std::max(0.0, dyn.cov2[0][0]));
        double l21 = l11 > 0.0 ? dyn.cov2[0][1] / l11 : 0.0;
        double l22 = std::sqrt(std::max(0.0, dyn.cov2[1][1] - l21 * l21));
        double k1 = p.kappa1[T - 1], k2 = p.kappa2[T - 1];
        out.kappa1.resize(horizon);
        out.kappa2.resize(horizon);
        for (int tau = 0; tau < horizon; ++tau) {
            double z1 = central ? 0.0 : rng.normal();
            double z2 = central ? 0.0 : rng.normal();
            k1 += dyn.drift2[0] + l11 * z1;
            k2 += dyn.drift2[1] + l21 * z1 + l22 * z2;
            out.kappa1[tau] = k1;
            out.kappa2[tau] = k2;
        }
    } else {
        double sigma = std::sqrt(std::max(0.0, dyn.variance));
        double k = p.kappa[T - 1];
        out.kappa.resize(horizon);
        for (int tau = 0; tau < horizon; ++tau) {
            k += dyn.drift + (central ? 0.0 : sigma * rng.normal());
            out.kappa[tau] = k;
        }
        if (p.model == ModelTag::m3) {
            int last_est = p.cohort_min() - 1;
            for (std::size_t i = 0; i < p.gamma.size(); ++i)
                if (p.gamma_estimated[i]) last_est = p.cohort_min() + int(i);
            if (last_est < p.cohort_min())
                throw validation_error("m3 projection needs estimated cohorts");
            out.first_future_cohort = last_est + 1;
            int c_max = p.year_max + horizon - p.age_min;
            double gsigma = std::sqrt(std::max(0.0, dyn.gamma_variance));
            double g = p.gamma_at(last_est);
            for (int c = out.first_future_cohort; c <= c_max; ++c) {
                g += dyn.gamma_drift + (central ? 0.0 : gsigma * rng.normal());
                out.gamma_future.push_back(g);
            }
        }
    }
    return out;
}

}  // namespace detail

// Draw S stochastic scenarios (plus the central path at index 0). Each
// scenario consumes its own substream of the master seed, so results do not
// depend on execution order or thread count.
inline ScenarioSet simulate(const ModelParams& p, const TimeSeriesDynamics& dyn,
                            int scenarios, int horizon, std::uint64_t seed,
                            const SimOptions& opt = {}) {
    if (scenarios < 1) throw validation_error("need at least one scenario");
    if (horizon < 1) throw validation_error("horizon must be at least one year");
    int closure_start = opt.closure_start < 0 ? p.age_max : opt.closure_start;

    ScenarioSet set;
    set.n_scenarios = scenarios;
    set.horizon = horizon;
    set.t0 = p.year_max;
    set.seed = seed;
    set.paths.resize(scenarios + 1);
    std::vector<long> clamps(scenarios + 1, 0);

    auto build_one = [&](int idx) {
        auto paths = detail::draw_paths(p, dyn, horizon,
                                        substream_seed(seed, idx), idx == 0);
        QSurface band;
        band.source = SourceTag::simulated;
        band.gender = Gender::total;
        band.q = Grid(p.age_min, p.age_max, set.t0 + 1, set.t0 + horizon);
        band.missing.assign(band.q.size(), 0);
        for (int tau = 1; tau <= horizon; ++tau) {
            for (int x = p.age_min; x <= p.age_max; ++x) {
                double q;
                if (p.model == ModelTag::m5) {
                    double eta = paths.kappa1[tau - 1] +
                                 paths.kappa2[tau - 1] * (x - p.x_bar);
                    q = 1.0 / (1.0 + std::exp(-eta));
                } else {
                    double log_m = (p.model == ModelTag::m1)
                                       ? p.beta1[x - p.age_min] +
                                             p.beta2[x - p.age_min] * paths.kappa[tau - 1]
                                       : p.beta1[x - p.age_min] + paths.kappa[tau - 1];
                    if (p.model == ModelTag::m3) {
                        int c = set.t0 + tau - x;
                        log_m += c < paths.first_future_cohort
                                     ? p.gamma_at(c)
                                     : paths.gamma_future[c - paths.first_future_cohort];
                    }
                    q = -std::expm1(-std::exp(log_m));
                }
                if (q < 0.0) { q = 0.0; ++clamps[idx]; }
                if (q > 1.0) { q = 1.0; ++clamps[idx]; }
                // The closure fit needs band rates below 1; an exploding
                // scenario is capped there and counted, not fatal.
                const double q_cap = -std::expm1(-0.99);
                if (q > q_cap) { q = q_cap; ++clamps[idx]; }
                band.q.at(x, set.t0 + tau) = q;
            }
        }
        set.paths[idx] = close_table(band, closure_start, opt.omega,
                                     opt.closure_fit_band);
    };

    int threads = std::max(1, opt.threads);
    if (threads == 1) {
        for (int i = 0; i <= scenarios; ++i) build_one(i);
    } else {
        std::vector<std::thread> pool;
        for (int w = 0; w < threads; ++w)
            pool.emplace_back([&, w] {
                for (int i = w; i <= scenarios; i += threads) build_one(i);
            });
        for (auto& th : pool) th.join();
    }
    for (long c : clamps) set.clamp_count += c;
    return set;
}

namespace detail {

// Nearest-rank (lower) empirical quantile over a scratch vector.
inline double nearest_rank(std::vector<double>& v, double percentile) {
    std::sort(v.begin(), v.end());
    long rank = static_cast<long>(std::ceil(percentile / 100.0 * v.size()));
    rank = std::max(1L, std::min<long>(rank, v.size()));
    return v[rank - 1];
}

}  // namespace detail

// Pointwise percentile of improvements IR = (q(x,t) - q(x,t0)) / q(x,t0)
// across scenarios, rebuilt into a death-probability table. p = 0.5 is the
// longevity-shock (SCR) table; p = 50 the central one.
inline QSurface percentile_table(const ScenarioSet& set, const QSurface& baseline,
                                 double percentile) {
    if (percentile <= 0.0 || percentile >= 100.0)
        throw validation_error("percentile must lie in (0, 100)");
    if (set.paths.empty()) throw validation_error("empty scenario set");
    const Grid& b = baseline.q;
    const Grid& shape = set.paths[0].q;
    if (b.age_min() != shape.age_min() || b.age_max() != shape.age_max())
        throw validation_error("baseline ages do not match scenarios");
    if (b.year_min() != set.t0 || b.year_max() != set.t0)
        throw validation_error("baseline must be the single year t0");

    QSurface out;
    out.source = SourceTag::simulated;
    out.gender = baseline.gender;
    out.q = Grid(b.age_min(), b.age_max(), set.t0, set.t0 + set.horizon);
    out.missing.assign(out.q.size(), 0);
    std::vector<double> ir(set.n_scenarios);
    for (int x = b.age_min(); x <= b.age_max(); ++x) {
        double q0 = b.at(x, set.t0);
        out.q.at(x, set.t0) = q0;
        for (int t = set.t0 + 1; t <= set.t0 + set.horizon; ++t) {
            if (q0 <= 0.0)
                throw numeric_error("baseline q is zero at age " + std::to_string(x) +
                                    "; improvement ratio undefined");
            for (int i = 1; i <= set.n_scenarios; ++i)
                ir[i - 1] = (set.paths[i].q.at(x, t) - q0) / q0;
            double p = detail::nearest_rank(ir, percentile);
            out.q.at(x, t) = std::min(1.0, std::max(0.0, q0 * (1.0 + p)));
        }
    }
    return out;
}

enum class LeKind { period, cohort };

struct LeFan {
    LeKind kind = LeKind::period;
    std::vector<int> index;                    // years (period) or ages (cohort)
    std::vector<std::vector<double>> scenario; // [scenario 0..S][index]
    std::vector<double> p_shock, median, p_longevity;  // 0.5 / 50 / 99.5
};

// Life expectancies per scenario, then scenario-ranked percentiles in LE
// space. Period series run over future years at a fixed starting age; cohort
// series run over starting ages at the valuation year, following diagonals.
inline LeFan life_expectancy_fan(const ScenarioSet& set, const QSurface& baseline,
                                 LeKind kind, int start_age, int truncation) {
    const Grid& shape = set.paths[0].q;
    if (truncation > shape.age_max() + 1)
        throw validation_error("truncation beyond the closed table's top age");
    if (start_age < shape.age_min() || start_age >= truncation)
        throw validation_error("bad starting age for the fan");

    LeFan fan;
    fan.kind = kind;
    if (kind == LeKind::period) {
        for (int t = set.t0 + 1; t <= set.t0 + set.horizon; ++t)
            fan.index.push_back(t);
    } else {
        // A cohort aged x at t0 needs years through t0 + truncation - x - 1.
        int x_lo = std::max(start_age, truncation - 1 - set.horizon);
        for (int x = x_lo; x < truncation; ++x) fan.index.push_back(x);
        if (fan.index.empty())
            throw validation_error("horizon too short for any cohort expectancy");
    }

    auto q_at = [&](const QSurface& path, int x, int t) {
        return t == set.t0 ? baseline.q.at(x, t) : path.q.at(x, t);
    };

    fan.scenario.resize(set.paths.size());
    for (std::size_t s = 0; s < set.paths.size(); ++s) {
        fan.scenario[s].reserve(fan.index.size());
        for (int ix : fan.index) {
            double e = 0.0, surv = 1.0;
            if (kind == LeKind::period) {
                for (int x = start_age; x < truncation; ++x) {
                    surv *= 1.0 - set.paths[s].q.at(x, ix);
                    e += surv;
                }
            } else {
                for (int i = 0; ix + i < truncation; ++i) {
                    surv *= 1.0 - q_at(set.paths[s], ix + i, set.t0 + i);
                    e += surv;
                }
            }
            fan.scenario[s].push_back(e);
        }
    }

    std::vector<double> vals(set.n_scenarios);
    for (std::size_t i = 0; i < fan.index.size(); ++i) {
        for (int s = 1; s <= set.n_scenarios; ++s) vals[s - 1] = fan.scenario[s][i];
        auto copy = vals;
        fan.p_shock.push_back(detail::nearest_rank(copy, 0.5));
        copy = vals;
        fan.median.push_back(detail::nearest_rank(copy, 50.0));
        copy = vals;
        fan.p_longevity.push_back(detail::nearest_rank(copy, 99.5));
    }
    return fan;
}

}  // namespace lexis
