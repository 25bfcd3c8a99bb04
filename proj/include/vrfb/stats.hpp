#pragma once

// Regularized incomplete beta, F-distribution tail, least-squares Fitts fit
// and balanced two-way ANOVA.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <vector>

#include "error.hpp"

namespace vrfb {

inline constexpr double kBetaTolerance = 1e-10;

namespace detail {

// Continued fraction for I_x(a, b), modified Lentz evaluation.
inline double beta_continued_fraction(double a, double b, double x) {
    constexpr int kMaxIterations = 10000;
    constexpr double kTiny = 1e-300;
    const double qab = a + b;
    const double qap = a + 1.0;
    const double qam = a - 1.0;
    double c = 1.0;
    double d = 1.0 - qab * x / qap;
    if (std::abs(d) < kTiny) d = kTiny;
    d = 1.0 / d;
    double h = d;
    for (int m = 1; m <= kMaxIterations; ++m) {
        const double m2 = 2.0 * m;
        double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if (std::abs(d) < kTiny) d = kTiny;
        c = 1.0 + aa / c;
        if (std::abs(c) < kTiny) c = kTiny;
        d = 1.0 / d;
        h *= d * c;
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if (std::abs(d) < kTiny) d = kTiny;
        c = 1.0 + aa / c;
        if (std::abs(c) < kTiny) c = kTiny;
        d = 1.0 / d;
        const double del = d * c;
        h *= del;
        if (std::abs(del - 1.0) < kBetaTolerance) break;
    }
    return h;
}

}  // namespace detail

/// I_x(a, b) for a, b > 0 and x in [0, 1].
inline double regularized_incomplete_beta(double a, double b, double x) {
    if (!(a > 0.0) || !(b > 0.0) || !(x >= 0.0 && x <= 1.0)) {
        throw Error(ErrorKind::domain, "regularized_incomplete_beta: argument out of domain");
    }
    if (x == 0.0) return 0.0;
    if (x == 1.0) return 1.0;
    const double log_front =
        std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) + b * std::log1p(-x);
    const double front = std::exp(log_front);
    if (x < (a + 1.0) / (a + b + 2.0)) {
        return front * detail::beta_continued_fraction(a, b, x) / a;
    }
    return 1.0 - front * detail::beta_continued_fraction(b, a, 1.0 - x) / b;
}

/// Upper-tail probability P(X > f) for X ~ F(df1, df2).
inline double f_upper_tail(double f, double df1, double df2) {
    if (std::isnan(f)) return std::numeric_limits<double>::quiet_NaN();
    if (f <= 0.0) return 1.0;
    if (std::isinf(f)) return 0.0;
    return regularized_incomplete_beta(df2 / 2.0, df1 / 2.0, df2 / (df2 + df1 * f));
}

struct FittsPoint {
    double id = 0.0;  // bits
    double mt = 0.0;  // seconds
};

/// MT = intercept + slope * ID.
struct FittsFit {
    double intercept = 0.0;
    double slope = 0.0;
    double r_squared = 0.0;
    std::size_t n = 0;
};

inline FittsFit fitts_regression(std::span<const FittsPoint> points) {
    if (points.size() < 2) {
        throw Error(ErrorKind::design, "fitts_regression needs at least two points");
    }
    bool distinct = false;
    for (const auto& p : points) {
        if (!std::isfinite(p.id) || !std::isfinite(p.mt)) {
            throw Error(ErrorKind::domain, "fitts_regression: non-finite point");
        }
        distinct = distinct || p.id != points.front().id;
    }
    if (!distinct) {
        throw Error(ErrorKind::design, "fitts_regression: all ID values equal");
    }
    const double n = static_cast<double>(points.size());
    double mx = 0.0;
    double my = 0.0;
    for (const auto& p : points) {
        mx += p.id;
        my += p.mt;
    }
    mx /= n;
    my /= n;
    double sxx = 0.0;
    double sxy = 0.0;
    for (const auto& p : points) {
        sxx += (p.id - mx) * (p.id - mx);
        sxy += (p.id - mx) * (p.mt - my);
    }
    FittsFit fit;
    fit.n = points.size();
    fit.slope = sxy / sxx;
    fit.intercept = my - fit.slope * mx;
    double ss_res = 0.0;
    double ss_tot = 0.0;
    bool constant_y = true;
    for (const auto& p : points) {
        const double r = p.mt - (fit.intercept + fit.slope * p.id);
        ss_res += r * r;
        ss_tot += (p.mt - my) * (p.mt - my);
        constant_y = constant_y && p.mt == points.front().mt;
    }
    fit.r_squared = constant_y ? 1.0 : std::clamp(1.0 - ss_res / ss_tot, 0.0, 1.0);
    return fit;
}

struct AnovaRow {
    double ss = 0.0;
    int df = 0;
    double ms = 0.0;
    double f = std::numeric_limits<double>::quiet_NaN();
    double p = std::numeric_limits<double>::quiet_NaN();
};

/// Balanced two-factor table. Factor A is the controller mode and factor B the
/// difficulty level in the study design.
struct AnovaTable {
    AnovaRow factor_a;
    AnovaRow factor_b;
    AnovaRow interaction;
    AnovaRow error;
    double ss_total = 0.0;
    int df_total = 0;
    bool degenerate = false;  // zero within-cell variance: F and p undefined
};

/// cells[i][j] holds the replicates for level i of A and level j of B.
using AnovaCells = std::vector<std::vector<std::vector<double>>>;

inline AnovaTable two_way_anova(const AnovaCells& cells) {
    const std::size_t a = cells.size();
    if (a < 2) throw Error(ErrorKind::design, "two_way_anova: factor A needs at least two levels");
    const std::size_t b = cells.front().size();
    if (b < 2) throw Error(ErrorKind::design, "two_way_anova: factor B needs at least two levels");
    const std::size_t r = cells.front().front().size();
    if (r < 2) throw Error(ErrorKind::design, "two_way_anova: at least two replicates per cell required");
    for (const auto& row : cells) {
        if (row.size() != b) throw Error(ErrorKind::design, "two_way_anova: ragged design");
        for (const auto& cell : row) {
            if (cell.size() != r) throw Error(ErrorKind::design, "two_way_anova: unbalanced cells");
            for (double y : cell) {
                if (!std::isfinite(y)) throw Error(ErrorKind::domain, "two_way_anova: non-finite observation");
            }
        }
    }

    // Shifting by one observation leaves every sum of squares unchanged and
    // makes a constant data set exactly zero.
    const double shift = cells[0][0][0];
    std::vector<double> cell_mean(a * b, 0.0);
    std::vector<double> row_mean(a, 0.0);
    std::vector<double> col_mean(b, 0.0);
    double grand = 0.0;
    AnovaTable t;
    for (std::size_t i = 0; i < a; ++i) {
        for (std::size_t j = 0; j < b; ++j) {
            double s = 0.0;
            for (double y : cells[i][j]) s += y - shift;
            cell_mean[i * b + j] = s / static_cast<double>(r);
        }
    }
    for (std::size_t i = 0; i < a; ++i) {
        for (std::size_t j = 0; j < b; ++j) {
            row_mean[i] += cell_mean[i * b + j] / static_cast<double>(b);
            col_mean[j] += cell_mean[i * b + j] / static_cast<double>(a);
            grand += cell_mean[i * b + j] / static_cast<double>(a * b);
        }
    }
    const double dr = static_cast<double>(r);
    for (std::size_t i = 0; i < a; ++i) {
        t.factor_a.ss += static_cast<double>(b) * dr * (row_mean[i] - grand) * (row_mean[i] - grand);
    }
    for (std::size_t j = 0; j < b; ++j) {
        t.factor_b.ss += static_cast<double>(a) * dr * (col_mean[j] - grand) * (col_mean[j] - grand);
    }
    for (std::size_t i = 0; i < a; ++i) {
        for (std::size_t j = 0; j < b; ++j) {
            const double m = cell_mean[i * b + j];
            const double inter = m - row_mean[i] - col_mean[j] + grand;
            t.interaction.ss += dr * inter * inter;
            for (double y : cells[i][j]) {
                const double e = (y - shift) - m;
                t.error.ss += e * e;
                t.ss_total += ((y - shift) - grand) * ((y - shift) - grand);
            }
        }
    }

    t.factor_a.df = static_cast<int>(a - 1);
    t.factor_b.df = static_cast<int>(b - 1);
    t.interaction.df = static_cast<int>((a - 1) * (b - 1));
    t.error.df = static_cast<int>(a * b * (r - 1));
    t.df_total = static_cast<int>(a * b * r - 1);
    for (AnovaRow* row : {&t.factor_a, &t.factor_b, &t.interaction, &t.error}) {
        row->ms = row->ss / row->df;
    }
    t.degenerate = t.error.ms == 0.0;
    if (!t.degenerate) {
        for (AnovaRow* row : {&t.factor_a, &t.factor_b, &t.interaction}) {
            row->f = row->ms / t.error.ms;
            row->p = f_upper_tail(row->f, row->df, t.error.df);
        }
    }
    return t;
}

}  // namespace vrfb
