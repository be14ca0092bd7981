#pragma once

// Reconstruction of a correction indicator from donor countries: ordinary
// least squares on a year window, exhaustive enumeration of donor subsets
// under BIC or adjusted R-squared, and backcasting with the selected fit.

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "lexis/core.hpp"

namespace lexis {

using IndicatorSeries = std::map<int, double>;  // year of birth -> value

enum class Criterion { bic, adj_r2 };

inline std::string to_string(Criterion c) {
    return c == Criterion::bic ? "bic" : "adjr2";
}

struct YearWindow {
    int lo = 0, hi = 0;
    bool contains(int y) const { return y >= lo && y <= hi; }
};

struct RegressionFit {
    std::vector<std::string> donors;   // selected subset, sorted by name
    double intercept = 0.0;
    double intercept_se = 0.0;
    std::vector<double> coef;          // aligned with donors
    std::vector<double> se;
    YearWindow window;
    std::vector<int> years;            // observations actually used
    Criterion criterion = Criterion::adj_r2;
    double criterion_value = 0.0;
    double rss = 0.0, r2 = 0.0, adj_r2 = 0.0, bic = 0.0;
    std::vector<double> residuals;     // aligned with years
};

struct PredictedIndicator {
    IndicatorSeries values;
    std::vector<int> omitted_years;  // requested but missing a donor
};

// One row of the exhaustive enumeration report.
struct SubsetFit {
    std::vector<std::string> donors;
    double bic = 0.0, adj_r2 = 0.0;
};

struct SelectionResult {
    RegressionFit best;
    std::vector<SubsetFit> enumerated;  // all non-empty subsets
};

namespace detail {

// Least squares via the normal equations with a Cholesky solve; the designs
// here are tiny (at most 13 columns). Throws on rank deficiency.
struct OlsResult {
    std::vector<double> coef;  // intercept first
    std::vector<double> se;
    double rss = 0.0;
    std::vector<double> residuals;
};

inline OlsResult solve_ols(const std::vector<std::vector<double>>& columns,
                           const std::vector<double>& y,
                           const std::vector<std::string>& names) {
    const std::size_t n = y.size();
    const std::size_t p = columns.size();
    if (n < p + 1)
        throw validation_error("regression window too short: " +
                               std::to_string(n) + " observations for " +
                               std::to_string(p) + " parameters");
    // Gram matrix and right-hand side.
    std::vector<std::vector<double>> a(p, std::vector<double>(p, 0.0));
    std::vector<double> b(p, 0.0);
    for (std::size_t i = 0; i < p; ++i) {
        for (std::size_t j = i; j < p; ++j) {
            double s = 0.0;
            for (std::size_t k = 0; k < n; ++k) s += columns[i][k] * columns[j][k];
            a[i][j] = a[j][i] = s;
        }
        for (std::size_t k = 0; k < n; ++k) b[i] += columns[i][k] * y[k];
    }
    // Cholesky a = L L^T.
    std::vector<std::vector<double>> l(p, std::vector<double>(p, 0.0));
    for (std::size_t i = 0; i < p; ++i) {
        for (std::size_t j = 0; j <= i; ++j) {
            double s = a[i][j];
            for (std::size_t k = 0; k < j; ++k) s -= l[i][k] * l[j][k];
            if (i == j) {
                if (s <= 1e-12 * std::max(1.0, a[i][i]))
                    throw validation_error(
                        "rank-deficient design; check donor '" +
                        (i < names.size() ? names[i] : "intercept") +
                        "' for collinearity");
                l[i][i] = std::sqrt(s);
            } else {
                l[i][j] = s / l[j][j];
            }
        }
    }
    auto solve = [&](std::vector<double> rhs) {
        for (std::size_t i = 0; i < p; ++i) {
            for (std::size_t k = 0; k < i; ++k) rhs[i] -= l[i][k] * rhs[k];
            rhs[i] /= l[i][i];
        }
        for (std::size_t ii = p; ii-- > 0;) {
            for (std::size_t k = ii + 1; k < p; ++k) rhs[ii] -= l[k][ii] * rhs[k];
            rhs[ii] /= l[ii][ii];
        }
        return rhs;
    };
    OlsResult res;
    res.coef = solve(b);
    res.residuals.resize(n);
    for (std::size_t k = 0; k < n; ++k) {
        double fit = 0.0;
        for (std::size_t i = 0; i < p; ++i) fit += res.coef[i] * columns[i][k];
        res.residuals[k] = y[k] - fit;
        res.rss += res.residuals[k] * res.residuals[k];
    }
    // Standard errors from sigma^2 (X'X)^-1.
    double dof = static_cast<double>(n - p);
    double sigma2 = dof > 0 ? res.rss / dof : 0.0;
    res.se.resize(p);
    for (std::size_t i = 0; i < p; ++i) {
        std::vector<double> e(p, 0.0);
        e[i] = 1.0;
        auto col = solve(e);
        res.se[i] = std::sqrt(std::max(0.0, sigma2 * col[i]));
    }
    return res;
}

}  // namespace detail

// OLS of the target on a fixed donor set over the window. Only years where
// the target and every donor are defined enter the fit.
inline RegressionFit fit_ols(const IndicatorSeries& target,
                             const std::map<std::string, IndicatorSeries>& donors,
                             YearWindow window,
                             Criterion criterion = Criterion::adj_r2) {
    if (donors.empty()) throw validation_error("empty donor set");
    std::vector<std::string> names;
    for (const auto& [name, series] : donors) names.push_back(name);
    std::sort(names.begin(), names.end());

    std::vector<int> years;
    for (int y = window.lo; y <= window.hi; ++y) {
        if (!target.count(y)) continue;
        bool all = true;
        for (const auto& name : names)
            if (!donors.at(name).count(y)) { all = false; break; }
        if (all) years.push_back(y);
    }
    const std::size_t n = years.size();
    const std::size_t k = names.size();
    if (n < k + 2)
        throw validation_error("fit window has fewer than " +
                               std::to_string(k + 2) + " usable observations");

    std::vector<std::vector<double>> columns(k + 1, std::vector<double>(n, 1.0));
    std::vector<double> y(n);
    double mean_y = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        y[i] = target.at(years[i]);
        mean_y += y[i];
        for (std::size_t j = 0; j < k; ++j)
            columns[j + 1][i] = donors.at(names[j]).at(years[i]);
    }
    mean_y /= static_cast<double>(n);
    for (std::size_t j = 0; j < k; ++j) {
        double lo = *std::min_element(columns[j + 1].begin(), columns[j + 1].end());
        double hi = *std::max_element(columns[j + 1].begin(), columns[j + 1].end());
        if (hi - lo == 0.0)
            throw validation_error("donor '" + names[j] +
                                   "' is constant on the window");
    }

    auto ols = detail::solve_ols(columns, y, names);

    double tss = 0.0;
    for (double v : y) tss += (v - mean_y) * (v - mean_y);

    RegressionFit fit;
    fit.donors = names;
    fit.intercept = ols.coef[0];
    fit.intercept_se = ols.se[0];
    fit.coef.assign(ols.coef.begin() + 1, ols.coef.end());
    fit.se.assign(ols.se.begin() + 1, ols.se.end());
    fit.window = window;
    fit.years = years;
    fit.residuals = ols.residuals;
    fit.rss = ols.rss;
    fit.r2 = tss > 0.0 ? 1.0 - ols.rss / tss : 1.0;
    double nn = static_cast<double>(n), kk = static_cast<double>(k);
    fit.adj_r2 = tss > 0.0
                     ? 1.0 - (ols.rss / (nn - kk - 1.0)) / (tss / (nn - 1.0))
                     : 1.0;
    fit.bic = nn * std::log(std::max(ols.rss, 1e-300) / nn) +
              (kk + 1.0) * std::log(nn);
    fit.criterion = criterion;
    fit.criterion_value = criterion == Criterion::bic ? fit.bic : fit.adj_r2;
    return fit;
}

// Exhaustive enumeration of every non-empty donor subset; the winner
// minimizes BIC or maximizes adjusted R-squared. Ties break toward the
// smaller subset, then lexicographically, so the result does not depend on
// donor input order.
inline SelectionResult stepwise_select(
    const IndicatorSeries& target,
    const std::map<std::string, IndicatorSeries>& donors, YearWindow window,
    Criterion criterion) {
    if (donors.empty()) throw validation_error("empty donor set");
    if (donors.size() > 12)
        throw validation_error("exhaustive selection supports at most 12 donors");
    std::vector<std::string> names;
    for (const auto& [name, series] : donors) names.push_back(name);
    std::sort(names.begin(), names.end());
    const std::size_t d = names.size();

    SelectionResult result;
    bool have_best = false;
    RegressionFit best;

    for (std::uint32_t mask = 1; mask < (1u << d); ++mask) {
        std::map<std::string, IndicatorSeries> subset;
        for (std::size_t j = 0; j < d; ++j)
            if (mask & (1u << j)) subset[names[j]] = donors.at(names[j]);
        RegressionFit fit = fit_ols(target, subset, window, criterion);
        result.enumerated.push_back({fit.donors, fit.bic, fit.adj_r2});
        bool better;
        if (!have_best) {
            better = true;
        } else {
            double a = criterion == Criterion::bic ? -fit.bic : fit.adj_r2;
            double b = criterion == Criterion::bic ? -best.bic : best.adj_r2;
            if (a != b) {
                better = a > b;
            } else if (fit.donors.size() != best.donors.size()) {
                better = fit.donors.size() < best.donors.size();
            } else {
                better = fit.donors < best.donors;
            }
        }
        if (better) {
            best = fit;
            have_best = true;
        }
    }
    best.criterion = criterion;
    best.criterion_value = criterion == Criterion::bic ? best.bic : best.adj_r2;
    result.best = best;
    return result;
}

// Apply the fitted linear map to donor values on the requested years. Years
// where any selected donor is undefined are omitted and listed.
inline PredictedIndicator predict(const RegressionFit& fit,
                                  const std::map<std::string, IndicatorSeries>& donors,
                                  const std::vector<int>& years) {
    PredictedIndicator out;
    for (int y : years) {
        double v = fit.intercept;
        bool ok = true;
        for (std::size_t j = 0; j < fit.donors.size(); ++j) {
            auto it = donors.find(fit.donors[j]);
            if (it == donors.end() || !it->second.count(y)) {
                ok = false;
                break;
            }
            v += fit.coef[j] * it->second.at(y);
        }
        if (ok)
            out.values[y] = v;
        else
            out.omitted_years.push_back(y);
    }
    return out;
}

}  // namespace lexis
