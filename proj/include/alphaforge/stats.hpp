#pragma once

// Statistical primitives: regularized incomplete beta, Student-t and F tail
// probabilities, paired t-test, one-way ANOVA, percentile bootstrap.

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#include "alphaforge/rng.hpp"
#include "alphaforge/util.hpp"

namespace alphaforge::stats {

namespace detail {

inline double log_beta(double a, double b) {
    return std::lgamma(a) + std::lgamma(b) - std::lgamma(a + b);
}

// Continued fraction for the incomplete beta, modified Lentz iteration.
inline double beta_cf(double a, double b, double x) {
    const double tiny = 1e-300;
    const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
    double c = 1.0;
    double d = 1.0 - qab * x / qap;
    if (std::fabs(d) < tiny) d = tiny;
    d = 1.0 / d;
    double h = d;
    for (int m = 1; m <= 500; ++m) {
        const int m2 = 2 * m;
        double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if (std::fabs(d) < tiny) d = tiny;
        c = 1.0 + aa / c;
        if (std::fabs(c) < tiny) c = tiny;
        d = 1.0 / d;
        h *= d * c;
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if (std::fabs(d) < tiny) d = tiny;
        c = 1.0 + aa / c;
        if (std::fabs(c) < tiny) c = tiny;
        d = 1.0 / d;
        const double del = d * c;
        h *= del;
        if (std::fabs(del - 1.0) < 1e-16) break;
    }
    return h;
}

}  // namespace detail

// Regularized incomplete beta I_x(a, b).
inline double incomplete_beta(double a, double b, double x) {
    if (!(a > 0) || !(b > 0)) throw std::invalid_argument("incomplete_beta: a, b must be > 0");
    if (x <= 0.0) return 0.0;
    if (x >= 1.0) return 1.0;
    const double ln_front =
        a * std::log(x) + b * std::log1p(-x) - detail::log_beta(a, b);
    const double front = std::exp(ln_front);
    if (x < (a + 1.0) / (a + b + 2.0)) return front * detail::beta_cf(a, b, x) / a;
    return 1.0 - front * detail::beta_cf(b, a, 1.0 - x) / b;
}

// Two-sided p-value for a Student-t statistic with df degrees of freedom:
// p = I_{df/(df+t^2)}(df/2, 1/2).
inline double t_two_sided_p(double df, double t) {
    if (df <= 0) throw std::invalid_argument("t_two_sided_p: df must be > 0");
    if (is_nan(t)) return kNaN;
    if (std::isinf(t)) return 0.0;
    const double x = df / (df + t * t);
    return incomplete_beta(df / 2.0, 0.5, x);
}

// Survival function of the F distribution: P(F(d1, d2) > f) =
// I_{d2/(d2+d1*f)}(d2/2, d1/2).
inline double f_sf(double d1, double d2, double f) {
    if (d1 <= 0 || d2 <= 0) throw std::invalid_argument("f_sf: degrees of freedom must be > 0");
    if (is_nan(f)) return kNaN;
    if (f <= 0.0) return 1.0;
    if (std::isinf(f)) return 0.0;
    const double x = d2 / (d2 + d1 * f);
    return incomplete_beta(d2 / 2.0, d1 / 2.0, x);
}

struct PairedTResult {
    double t = 0;
    double p = 1;
    int df = 0;
    // Differences had zero variance around a nonzero mean, so the statistic
    // is off the t scale; reported as p = 0 with the sign carried by t.
    bool degenerate = false;
};

inline PairedTResult paired_t_test(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) throw std::invalid_argument("paired_t_test: unequal lengths");
    const size_t n = a.size();
    if (n < 2) throw std::invalid_argument("paired_t_test: need at least 2 pairs");
    std::vector<double> d(n);
    for (size_t i = 0; i < n; ++i) d[i] = a[i] - b[i];
    double mean = 0;
    for (double v : d) mean += v;
    mean /= static_cast<double>(n);
    double ss = 0;
    for (double v : d) ss += (v - mean) * (v - mean);
    const double sd = std::sqrt(ss / (static_cast<double>(n) - 1.0));

    PairedTResult res;
    res.df = static_cast<int>(n) - 1;
    if (sd == 0.0) {
        if (mean == 0.0) {
            res.t = 0.0;
            res.p = 1.0;
        } else {
            res.t = mean > 0 ? std::numeric_limits<double>::infinity()
                             : -std::numeric_limits<double>::infinity();
            res.p = 0.0;
            res.degenerate = true;
        }
        return res;
    }
    res.t = mean / (sd / std::sqrt(static_cast<double>(n)));
    res.p = t_two_sided_p(static_cast<double>(res.df), res.t);
    return res;
}

struct AnovaResult {
    double f = 0;
    double p = 1;
    int df_between = 0;
    int df_within = 0;
};

inline AnovaResult one_way_anova(const std::vector<std::vector<double>>& groups) {
    if (groups.size() < 2) throw std::invalid_argument("one_way_anova: need at least 2 groups");
    size_t total_n = 0;
    for (const auto& g : groups) {
        if (g.size() < 2)
            throw std::invalid_argument("one_way_anova: each group needs at least 2 samples");
        total_n += g.size();
    }
    double grand = 0;
    for (const auto& g : groups)
        for (double v : g) grand += v;
    grand /= static_cast<double>(total_n);

    double ss_between = 0, ss_within = 0;
    for (const auto& g : groups) {
        double m = 0;
        for (double v : g) m += v;
        m /= static_cast<double>(g.size());
        ss_between += static_cast<double>(g.size()) * (m - grand) * (m - grand);
        for (double v : g) ss_within += (v - m) * (v - m);
    }

    AnovaResult res;
    res.df_between = static_cast<int>(groups.size()) - 1;
    res.df_within = static_cast<int>(total_n - groups.size());
    if (ss_within == 0.0) {
        if (ss_between == 0.0) {
            res.f = 0.0;
            res.p = 1.0;
        } else {
            res.f = std::numeric_limits<double>::infinity();
            res.p = 0.0;
        }
        return res;
    }
    res.f = (ss_between / res.df_between) / (ss_within / res.df_within);
    res.p = f_sf(res.df_between, res.df_within, res.f);
    return res;
}

struct BootstrapCI {
    double mean = 0;
    double lower = 0;
    double upper = 0;
};

// h = (m-1)*q linear-interpolation percentile of a sorted vector.
inline double sorted_percentile(const std::vector<double>& sorted, double pct) {
    const size_t m = sorted.size();
    const double h = (static_cast<double>(m) - 1.0) * pct / 100.0;
    const size_t lo = static_cast<size_t>(std::floor(h));
    const size_t hi = std::min(lo + 1, m - 1);
    const double frac = h - std::floor(h);
    return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

// Percentile bootstrap of the mean. Fully deterministic for a given seed.
inline BootstrapCI bootstrap_ci(const std::vector<double>& samples, int resamples = 1000,
                                double level = 0.95, uint64_t seed = 0) {
    const size_t n = samples.size();
    if (n < 2) throw std::invalid_argument("bootstrap_ci: need at least 2 samples");
    if (resamples < 1) throw std::invalid_argument("bootstrap_ci: resamples must be positive");
    if (!(level > 0.0 && level < 1.0))
        throw std::invalid_argument("bootstrap_ci: level must be in (0, 1)");

    BootstrapCI out;
    for (double v : samples) out.mean += v;
    out.mean /= static_cast<double>(n);

    Rng rng(derive_key(seed, "bootstrap"));
    std::vector<double> means(static_cast<size_t>(resamples));
    for (auto& m : means) {
        double acc = 0;
        for (size_t i = 0; i < n; ++i) acc += samples[rng.uniform_int(n)];
        m = acc / static_cast<double>(n);
    }
    std::sort(means.begin(), means.end());
    const double tail = (1.0 - level) / 2.0 * 100.0;
    out.lower = sorted_percentile(means, tail);
    out.upper = sorted_percentile(means, 100.0 - tail);
    return out;
}

// Pearson correlation of two equal-length vectors; NaN if either side has
// zero variance or fewer than 2 points.
inline double pearson(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size()) throw std::invalid_argument("pearson: unequal lengths");
    const size_t n = x.size();
    if (n < 2) return kNaN;
    double mx = 0, my = 0;
    for (size_t i = 0; i < n; ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= static_cast<double>(n);
    my /= static_cast<double>(n);
    double sxx = 0, syy = 0, sxy = 0;
    for (size_t i = 0; i < n; ++i) {
        const double dx = x[i] - mx, dy = y[i] - my;
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    if (sxx == 0.0 || syy == 0.0) return kNaN;
    return sxy / std::sqrt(sxx * syy);
}

}  // namespace alphaforge::stats
