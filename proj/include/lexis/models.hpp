#pragma once

// Poisson and Binomial maximum likelihood for the three stochastic mortality
// models: Lee-Carter (M1), age-period-cohort (M3) and Cairns-Blake-Dowd (M5).
// M1/M3 use alternating block updates with a step-halving safeguard so the
// log-likelihood never decreases; identifiability constraints are applied
// after convergence by renormalizations that leave fitted rates unchanged.

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "lexis/core.hpp"
#include "lexis/surface.hpp"

namespace lexis {

enum class ModelTag { m1, m3, m5 };

inline std::string to_string(ModelTag m) {
    switch (m) {
        case ModelTag::m1: return "m1";
        case ModelTag::m3: return "m3";
        default: return "m5";
    }
}

inline ModelTag model_from_string(const std::string& s) {
    if (s == "m1" || s == "M1") return ModelTag::m1;
    if (s == "m3" || s == "M3") return ModelTag::m3;
    if (s == "m5" || s == "M5") return ModelTag::m5;
    throw validation_error("unknown model '" + s + "'");
}

struct FitOptions {
    int max_iterations = 10000;
    double loglik_rel_tol = 1e-10;
    double update_tol = 1e-8;
    int cohort_min_cells = 5;     // M3: smaller cohorts carry no free gamma
    double death_floor = 1e-8;    // likelihood-only floor for zero-death cells
};

struct ModelParams {
    ModelTag model = ModelTag::m1;
    int age_min = 0, age_max = 0, year_min = 0, year_max = 0;

    // M1: log m = beta1_x + beta2_x * kappa_t ; M3: log m = beta1_x + kappa_t
    // + gamma_{t-x}. gamma is indexed from cohort_min = year_min - age_max.
    std::vector<double> beta1, beta2, kappa;
    std::vector<double> gamma;
    std::vector<std::uint8_t> gamma_estimated;
    std::vector<int> excluded_cohorts;

    // M5: logit q = kappa1_t + kappa2_t * (x - x_bar).
    std::vector<double> kappa1, kappa2;
    double x_bar = 0.0;

    std::string constraints;

    int n_ages() const { return age_max - age_min + 1; }
    int n_years() const { return year_max - year_min + 1; }
    int cohort_min() const { return year_min - age_max; }
    int cohort_max() const { return year_max - age_min; }

    double gamma_at(int cohort) const {
        return gamma.empty() ? 0.0 : gamma[cohort - cohort_min()];
    }

    double log_rate(int age, int year) const {
        int xi = age - age_min, ti = year - year_min;
        if (model == ModelTag::m1) return beta1[xi] + beta2[xi] * kappa[ti];
        if (model == ModelTag::m3) return beta1[xi] + kappa[ti] + gamma_at(year - age);
        double q = fitted_q(age, year);
        return std::log(-std::log1p(-q));
    }

    double fitted_rate(int age, int year) const {
        if (model == ModelTag::m5) return -std::log1p(-fitted_q(age, year));
        return std::exp(log_rate(age, year));
    }

    double fitted_q(int age, int year) const {
        if (model == ModelTag::m5) {
            int ti = year - year_min;
            double eta = kappa1[ti] + kappa2[ti] * (age - x_bar);
            return 1.0 / (1.0 + std::exp(-eta));
        }
        return -std::expm1(-fitted_rate(age, year));
    }
};

struct FitDiagnostics {
    double loglik = 0.0;
    int n_params = 0;
    int n_cells = 0;
    double bic = 0.0;  // loglik - (k/2) ln(n); higher is better
    Grid residuals;    // standardized
    int iterations = 0;
    double final_update = 0.0;
    bool converged = false;
    std::vector<double> loglik_trace;  // one entry per sweep
};

namespace detail {

inline void require_calibratable(const MortalitySurface& s) {
    for (std::size_t i = 0; i < s.rate.size(); ++i)
        if (s.missing[i])
            throw validation_error("calibration window contains missing cells");
    if (s.open_age && *s.open_age <= s.rate.age_max())
        throw validation_error(
            "calibration band includes the open age group " +
            std::to_string(*s.open_age) + "+; restrict the band below it");
}

// Poisson log-likelihood over the grid for a given log-rate field.
template <typename LogRateFn>
double poisson_loglik(const MortalitySurface& s, double floor, LogRateFn&& eta) {
    double ll = 0.0;
    for (int x = s.rate.age_min(); x <= s.rate.age_max(); ++x) {
        for (int t = s.rate.year_min(); t <= s.rate.year_max(); ++t) {
            double d = std::max(s.deaths.at(x, t), floor);
            double e = s.exposure.at(x, t);
            double lr = eta(x, t);
            double dhat = e * std::exp(lr);
            ll += d * (std::log(e) + lr) - dhat - std::lgamma(d + 1.0);
        }
    }
    return ll;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// M1: log m(x,t) = beta1_x + beta2_x kappa_t, Poisson deaths.
// ---------------------------------------------------------------------------

inline std::pair<ModelParams, FitDiagnostics> fit_m1(const MortalitySurface& s,
                                                     const FitOptions& opt = {}) {
    detail::require_calibratable(s);
    const int A = s.rate.n_ages(), T = s.rate.n_years();
    const int a0 = s.rate.age_min(), t0 = s.rate.year_min();

    ModelParams p;
    p.model = ModelTag::m1;
    p.age_min = a0;
    p.age_max = s.rate.age_max();
    p.year_min = t0;
    p.year_max = s.rate.year_max();
    p.beta1.assign(A, 0.0);
    p.beta2.assign(A, 1.0 / A);
    p.kappa.assign(T, 0.0);

    for (int xi = 0; xi < A; ++xi) {
        double sd = 0.0, se = 0.0;
        for (int ti = 0; ti < T; ++ti) {
            sd += std::max(s.deaths.at(a0 + xi, t0 + ti), opt.death_floor);
            se += s.exposure.at(a0 + xi, t0 + ti);
        }
        p.beta1[xi] = std::log(sd / se);
    }

    auto eta = [&](int x, int t) {
        return p.beta1[x - a0] + p.beta2[x - a0] * p.kappa[t - t0];
    };
    auto loglik = [&] { return detail::poisson_loglik(s, opt.death_floor, eta); };

    FitDiagnostics diag;
    double ll = loglik();
    diag.loglik_trace.push_back(ll);
    double max_update = 0.0;

    for (int iter = 1; iter <= opt.max_iterations; ++iter) {
        max_update = 0.0;

        // beta1: exact block maximizer, log of the death ratio per age.
        for (int xi = 0; xi < A; ++xi) {
            double sd = 0.0, sdh = 0.0;
            for (int ti = 0; ti < T; ++ti) {
                sd += std::max(s.deaths.at(a0 + xi, t0 + ti), opt.death_floor);
                sdh += s.exposure.at(a0 + xi, t0 + ti) * std::exp(eta(a0 + xi, t0 + ti));
            }
            double delta = std::log(sd / sdh);
            p.beta1[xi] += delta;
            max_update = std::max(max_update, std::fabs(delta));
        }

        // kappa: Newton per year (the likelihood separates across years),
        // halved jointly until the objective does not decrease.
        {
            std::vector<double> delta(T, 0.0);
            for (int ti = 0; ti < T; ++ti) {
                double g = 0.0, h = 0.0;
                for (int xi = 0; xi < A; ++xi) {
                    double dhat = s.exposure.at(a0 + xi, t0 + ti) *
                                  std::exp(eta(a0 + xi, t0 + ti));
                    double d = std::max(s.deaths.at(a0 + xi, t0 + ti), opt.death_floor);
                    g += (d - dhat) * p.beta2[xi];
                    h += dhat * p.beta2[xi] * p.beta2[xi];
                }
                if (h > 0.0) delta[ti] = g / h;
            }
            double before = loglik();
            double scale = 1.0;
            for (int halves = 0; halves < 60; ++halves) {
                for (int ti = 0; ti < T; ++ti) p.kappa[ti] += scale * delta[ti];
                if (loglik() >= before) break;
                for (int ti = 0; ti < T; ++ti) p.kappa[ti] -= scale * delta[ti];
                scale *= 0.5;
            }
            for (int ti = 0; ti < T; ++ti)
                max_update = std::max(max_update, std::fabs(scale * delta[ti]));
        }

        // beta2: Newton per age, same safeguard.
        {
            std::vector<double> delta(A, 0.0);
            for (int xi = 0; xi < A; ++xi) {
                double g = 0.0, h = 0.0;
                for (int ti = 0; ti < T; ++ti) {
                    double dhat = s.exposure.at(a0 + xi, t0 + ti) *
                                  std::exp(eta(a0 + xi, t0 + ti));
                    double d = std::max(s.deaths.at(a0 + xi, t0 + ti), opt.death_floor);
                    g += (d - dhat) * p.kappa[ti];
                    h += dhat * p.kappa[ti] * p.kappa[ti];
                }
                if (h > 1e-300) delta[xi] = g / h;
            }
            double before = loglik();
            double scale = 1.0;
            for (int halves = 0; halves < 60; ++halves) {
                for (int xi = 0; xi < A; ++xi) p.beta2[xi] += scale * delta[xi];
                if (loglik() >= before) break;
                for (int xi = 0; xi < A; ++xi) p.beta2[xi] -= scale * delta[xi];
                scale *= 0.5;
            }
            for (int xi = 0; xi < A; ++xi)
                max_update = std::max(max_update, std::fabs(scale * delta[xi]));
        }

        double ll_new = loglik();
        diag.loglik_trace.push_back(ll_new);
        diag.iterations = iter;
        double rel = std::fabs(ll_new - ll) / std::max(1.0, std::fabs(ll_new));
        ll = ll_new;
        if (rel < opt.loglik_rel_tol && max_update < opt.update_tol) {
            diag.converged = true;
            break;
        }
    }
    diag.final_update = max_update;
    if (!diag.converged) {
        std::string trace;
        for (std::size_t i = diag.loglik_trace.size() > 5 ? diag.loglik_trace.size() - 5 : 0;
             i < diag.loglik_trace.size(); ++i)
            trace += " " + format_double(diag.loglik_trace[i]);
        throw numeric_error("m1 fit did not converge in " +
                            std::to_string(opt.max_iterations) +
                            " iterations; last log-likelihoods:" + trace);
    }

    // Renormalize: sum(beta2) = 1, sum(kappa) = 0; rates are untouched.
    double kmean = 0.0;
    for (double k : p.kappa) kmean += k;
    kmean /= T;
    for (int xi = 0; xi < A; ++xi) p.beta1[xi] += p.beta2[xi] * kmean;
    for (int ti = 0; ti < T; ++ti) p.kappa[ti] -= kmean;
    double bsum = 0.0;
    for (double b : p.beta2) bsum += b;
    if (std::fabs(bsum) > 1e-12) {
        for (int xi = 0; xi < A; ++xi) p.beta2[xi] /= bsum;
        for (int ti = 0; ti < T; ++ti) p.kappa[ti] *= bsum;
    }
    p.constraints = "sum(beta2)=1, sum(kappa)=0";

    diag.loglik = ll;
    diag.n_cells = A * T;
    diag.n_params = 2 * A + T - 2;
    diag.bic = ll - 0.5 * diag.n_params * std::log(double(diag.n_cells));
    return {p, diag};
}

// ---------------------------------------------------------------------------
// M3: log m(x,t) = beta1_x + kappa_t + gamma_{t-x}, Poisson deaths.
// ---------------------------------------------------------------------------

inline std::pair<ModelParams, FitDiagnostics> fit_m3(const MortalitySurface& s,
                                                     const FitOptions& opt = {}) {
    detail::require_calibratable(s);
    const int A = s.rate.n_ages(), T = s.rate.n_years();
    const int a0 = s.rate.age_min(), t0 = s.rate.year_min();

    ModelParams p;
    p.model = ModelTag::m3;
    p.age_min = a0;
    p.age_max = s.rate.age_max();
    p.year_min = t0;
    p.year_max = s.rate.year_max();
    const int C = p.cohort_max() - p.cohort_min() + 1;
    p.beta1.assign(A, 0.0);
    p.kappa.assign(T, 0.0);
    p.gamma.assign(C, 0.0);
    p.gamma_estimated.assign(C, 1);

    // Cells per cohort; short diagonals carry no free gamma.
    for (int ci = 0; ci < C; ++ci) {
        int c = p.cohort_min() + ci;
        int cells = 0;
        for (int x = a0; x <= p.age_max; ++x)
            if (s.rate.contains(x, c + x)) ++cells;
        if (cells < opt.cohort_min_cells) {
            p.gamma_estimated[ci] = 0;
            p.excluded_cohorts.push_back(c);
        }
    }

    for (int xi = 0; xi < A; ++xi) {
        double sd = 0.0, se = 0.0;
        for (int ti = 0; ti < T; ++ti) {
            sd += std::max(s.deaths.at(a0 + xi, t0 + ti), opt.death_floor);
            se += s.exposure.at(a0 + xi, t0 + ti);
        }
        p.beta1[xi] = std::log(sd / se);
    }

    auto eta = [&](int x, int t) {
        return p.beta1[x - a0] + p.kappa[t - t0] + p.gamma[(t - x) - p.cohort_min()];
    };
    auto loglik = [&] { return detail::poisson_loglik(s, opt.death_floor, eta); };

    FitDiagnostics diag;
    double ll = loglik();
    diag.loglik_trace.push_back(ll);
    double max_update = 0.0;

    for (int iter = 1; iter <= opt.max_iterations; ++iter) {
        max_update = 0.0;

        for (int xi = 0; xi < A; ++xi) {  // exact per-age update
            double sd = 0.0, sdh = 0.0;
            for (int ti = 0; ti < T; ++ti) {
                sd += std::max(s.deaths.at(a0 + xi, t0 + ti), opt.death_floor);
                sdh += s.exposure.at(a0 + xi, t0 + ti) * std::exp(eta(a0 + xi, t0 + ti));
            }
            double delta = std::log(sd / sdh);
            p.beta1[xi] += delta;
            max_update = std::max(max_update, std::fabs(delta));
        }
        for (int ti = 0; ti < T; ++ti) {  // exact per-year update
            double sd = 0.0, sdh = 0.0;
            for (int xi = 0; xi < A; ++xi) {
                sd += std::max(s.deaths.at(a0 + xi, t0 + ti), opt.death_floor);
                sdh += s.exposure.at(a0 + xi, t0 + ti) * std::exp(eta(a0 + xi, t0 + ti));
            }
            double delta = std::log(sd / sdh);
            p.kappa[ti] += delta;
            max_update = std::max(max_update, std::fabs(delta));
        }
        for (int ci = 0; ci < C; ++ci) {  // exact per-cohort update
            if (!p.gamma_estimated[ci]) continue;
            int c = p.cohort_min() + ci;
            double sd = 0.0, sdh = 0.0;
            for (int x = a0; x <= p.age_max; ++x) {
                int t = c + x;
                if (!s.rate.contains(x, t)) continue;
                sd += std::max(s.deaths.at(x, t), opt.death_floor);
                sdh += s.exposure.at(x, t) * std::exp(eta(x, t));
            }
            double delta = std::log(sd / sdh);
            p.gamma[ci] += delta;
            max_update = std::max(max_update, std::fabs(delta));
        }

        double ll_new = loglik();
        diag.loglik_trace.push_back(ll_new);
        diag.iterations = iter;
        double rel = std::fabs(ll_new - ll) / std::max(1.0, std::fabs(ll_new));
        ll = ll_new;
        if (rel < opt.loglik_rel_tol && max_update < opt.update_tol) {
            diag.converged = true;
            break;
        }
    }
    diag.final_update = max_update;
    if (!diag.converged) {
        std::string trace;
        for (std::size_t i = diag.loglik_trace.size() > 5 ? diag.loglik_trace.size() - 5 : 0;
             i < diag.loglik_trace.size(); ++i)
            trace += " " + format_double(diag.loglik_trace[i]);
        throw numeric_error("m3 fit did not converge in " +
                            std::to_string(opt.max_iterations) +
                            " iterations; last log-likelihoods:" + trace);
    }

    // Renormalize. The linear gamma trend over estimated cohorts is absorbed
    // into beta1 and kappa; excluded cohorts keep the gauge offset so fitted
    // rates stay put everywhere. Then kappa is centred.
    {
        double n = 0, sc = 0, scc = 0, sg = 0, scg = 0;
        for (int ci = 0; ci < C; ++ci) {
            if (!p.gamma_estimated[ci]) continue;
            double c = p.cohort_min() + ci;
            n += 1; sc += c; scc += c * c; sg += p.gamma[ci]; scg += c * p.gamma[ci];
        }
        double denom = n * scc - sc * sc;
        double slope = denom != 0.0 ? (n * scg - sc * sg) / denom : 0.0;
        double level = (sg - slope * sc) / n;
        for (int ci = 0; ci < C; ++ci) {
            double c = p.cohort_min() + ci;
            p.gamma[ci] -= level + slope * c;  // offset applies to pinned too
        }
        for (int xi = 0; xi < A; ++xi) p.beta1[xi] -= slope * (a0 + xi);
        for (int ti = 0; ti < T; ++ti) p.kappa[ti] += level + slope * (t0 + ti);

        double kmean = 0.0;
        for (double k : p.kappa) kmean += k;
        kmean /= T;
        for (int ti = 0; ti < T; ++ti) p.kappa[ti] -= kmean;
        for (int xi = 0; xi < A; ++xi) p.beta1[xi] += kmean;
    }
    p.constraints = "sum(kappa)=0, sum(gamma)=0, sum(c*gamma)=0 over estimated cohorts";

    int estimated = 0;
    for (auto e : p.gamma_estimated) estimated += e;
    diag.loglik = ll;
    diag.n_cells = A * T;
    diag.n_params = A + T + estimated - 4;
    diag.bic = ll - 0.5 * diag.n_params * std::log(double(diag.n_cells));
    return {p, diag};
}

// ---------------------------------------------------------------------------
// M5: logit q(x,t) = kappa1_t + kappa2_t (x - xbar), Binomial deaths against
// initial exposure E0 = E + D/2; every year fits independently.
// ---------------------------------------------------------------------------

inline std::pair<ModelParams, FitDiagnostics> fit_m5(const MortalitySurface& s,
                                                     const FitOptions& opt = {}) {
    detail::require_calibratable(s);
    const int A = s.rate.n_ages(), T = s.rate.n_years();
    const int a0 = s.rate.age_min(), t0 = s.rate.year_min();
    if (A < 3) throw validation_error("m5 needs at least 3 ages");

    ModelParams p;
    p.model = ModelTag::m5;
    p.age_min = a0;
    p.age_max = s.rate.age_max();
    p.year_min = t0;
    p.year_max = s.rate.year_max();
    p.x_bar = 0.5 * (p.age_min + p.age_max);
    p.kappa1.assign(T, 0.0);
    p.kappa2.assign(T, 0.0);

    FitDiagnostics diag;
    double ll_total = 0.0;
    int worst_iters = 0;

    for (int ti = 0; ti < T; ++ti) {
        int year = t0 + ti;
        // Start from OLS on empirical logits.
        double sx = 0, sy = 0, sxx = 0, sxy = 0;
        for (int xi = 0; xi < A; ++xi) {
            int x = a0 + xi;
            double e0 = s.exposure.at(x, year) + 0.5 * s.deaths.at(x, year);
            double q = std::min(std::max(s.deaths.at(x, year) / e0, 1e-10), 1.0 - 1e-10);
            double z = std::log(q / (1.0 - q));
            double c = x - p.x_bar;
            sx += c; sy += z; sxx += c * c; sxy += c * z;
        }
        double k2 = (A * sxy - sx * sy) / (A * sxx - sx * sx);
        double k1 = (sy - k2 * sx) / A;

        auto year_ll = [&](double a, double b) {
            double ll = 0.0;
            for (int xi = 0; xi < A; ++xi) {
                int x = a0 + xi;
                double e0 = s.exposure.at(x, year) + 0.5 * s.deaths.at(x, year);
                double d = s.deaths.at(x, year);
                double etav = a + b * (x - p.x_bar);
                // log q = -log(1+e^-eta), log(1-q) = -log(1+e^eta)
                ll += -d * std::log1p(std::exp(-etav)) -
                      (e0 - d) * std::log1p(std::exp(etav));
            }
            return ll;
        };

        bool converged = false;
        double ll = year_ll(k1, k2);
        for (int it = 1; it <= 200; ++it) {
            double g1 = 0, g2 = 0, h11 = 0, h12 = 0, h22 = 0;
            for (int xi = 0; xi < A; ++xi) {
                int x = a0 + xi;
                double e0 = s.exposure.at(x, year) + 0.5 * s.deaths.at(x, year);
                double d = s.deaths.at(x, year);
                double c = x - p.x_bar;
                double q = 1.0 / (1.0 + std::exp(-(k1 + k2 * c)));
                double w = e0 * q * (1.0 - q);
                double r = d - e0 * q;
                g1 += r; g2 += r * c;
                h11 += w; h12 += w * c; h22 += w * c * c;
            }
            double det = h11 * h22 - h12 * h12;
            if (det <= 0.0 || !std::isfinite(det))
                throw numeric_error("m5 separation in year " + std::to_string(year));
            double d1 = (h22 * g1 - h12 * g2) / det;
            double d2 = (h11 * g2 - h12 * g1) / det;
            double scale = 1.0, ll_new = ll;
            for (int halves = 0; halves < 60; ++halves) {
                ll_new = year_ll(k1 + scale * d1, k2 + scale * d2);
                if (ll_new >= ll) break;
                scale *= 0.5;
            }
            k1 += scale * d1;
            k2 += scale * d2;
            double moved = std::max(std::fabs(scale * d1), std::fabs(scale * d2));
            ll = ll_new;
            if (moved < 1e-12) {
                converged = true;
                worst_iters = std::max(worst_iters, it);
                break;
            }
        }
        if (!converged)
            throw numeric_error("m5 did not converge in year " + std::to_string(year));
        p.kappa1[ti] = k1;
        p.kappa2[ti] = k2;
        ll_total += ll;
    }

    p.constraints = "none required";
    diag.loglik = ll_total;
    diag.n_cells = A * T;
    diag.n_params = 2 * T;
    diag.bic = ll_total - 0.5 * diag.n_params * std::log(double(diag.n_cells));
    diag.iterations = worst_iters;
    diag.converged = true;
    return {p, diag};
}

// (D - E[D]) / sqrt(Var[D]) per cell; Poisson for M1/M3, Binomial for M5.
inline Grid standardized_residuals(const ModelParams& p, const MortalitySurface& s) {
    if (!s.rate.contains(p.age_min, p.year_min) ||
        !s.rate.contains(p.age_max, p.year_max))
        throw validation_error("surface does not cover the fitted window");
    Grid res(p.age_min, p.age_max, p.year_min, p.year_max);
    for (int x = p.age_min; x <= p.age_max; ++x) {
        for (int t = p.year_min; t <= p.year_max; ++t) {
            double d = s.deaths.at(x, t);
            if (p.model == ModelTag::m5) {
                double e0 = s.exposure.at(x, t) + 0.5 * d;
                double q = p.fitted_q(x, t);
                res.at(x, t) = (d - e0 * q) / std::sqrt(e0 * q * (1.0 - q));
            } else {
                double dhat = s.exposure.at(x, t) * p.fitted_rate(x, t);
                res.at(x, t) = (d - dhat) / std::sqrt(dhat);
            }
        }
    }
    return res;
}

struct BicEntry {
    std::string label;
    double bic = 0.0;
};

// Descending by BIC (higher is better).
inline std::vector<BicEntry> compare_bic(std::vector<BicEntry> entries) {
    std::stable_sort(entries.begin(), entries.end(),
                     [](const BicEntry& a, const BicEntry& b) { return a.bic > b.bic; });
    return entries;
}

}  // namespace lexis
