#pragma once

// Signal -> allocations -> portfolio returns -> performance metrics.

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "alphaforge/eval.hpp"
#include "alphaforge/marketdata.hpp"
#include "alphaforge/matrix.hpp"
#include "alphaforge/util.hpp"

namespace alphaforge::backtest {

enum class AllocationMode { LongOnly, DollarNeutral };

inline AllocationMode allocation_mode_from(const std::string& s) {
    if (s == "long_only") return AllocationMode::LongOnly;
    if (s == "dollar_neutral") return AllocationMode::DollarNeutral;
    throw std::invalid_argument("unknown allocation mode: " + s);
}

struct AllocationSeries {
    std::vector<int> dates;
    std::vector<std::string> symbols;
    Matrix weights;
    AllocationMode mode = AllocationMode::LongOnly;
};

// Rank-based score->weight map. Long-only: w ∝ cs_rank(score) + ε with
// ε = 1/(2N); NaN scores enter at the ε floor, then the row normalizes to 1.
// Rows with no usable scores (warm-up) fall out as equal weights.
// Dollar-neutral: demeaned ranks scaled to gross Σ|w| = 1; NaN scores get 0;
// rows with no rank dispersion (all tied or all NaN) stay all-zero, which
// callers treat as an inactive day.
inline AllocationSeries signal_to_allocations(const eval::Signal& signal,
                                              AllocationMode mode = AllocationMode::LongOnly) {
    const size_t T = signal.values.rows(), N = signal.values.cols();
    if (N == 0) throw std::invalid_argument("signal has no symbols");
    AllocationSeries alloc;
    alloc.dates = signal.dates;
    alloc.symbols = signal.symbols;
    alloc.mode = mode;
    alloc.weights = Matrix(T, N, 0.0);

    Matrix ranks = eval::cs_rank(signal.values);
    const double eps = 1.0 / (2.0 * static_cast<double>(N));

    for (size_t t = 0; t < T; ++t) {
        if (mode == AllocationMode::LongOnly) {
            double sum = 0;
            for (size_t j = 0; j < N; ++j) {
                double r = ranks(t, j);
                double w = is_nan(r) ? eps : r + eps;
                alloc.weights(t, j) = w;
                sum += w;
            }
            for (size_t j = 0; j < N; ++j) alloc.weights(t, j) /= sum;
        } else {
            double mean = 0;
            size_t m = 0;
            for (size_t j = 0; j < N; ++j)
                if (!is_nan(ranks(t, j))) {
                    mean += ranks(t, j);
                    ++m;
                }
            if (m == 0) continue;  // warm-up row: all zeros
            mean /= static_cast<double>(m);
            double gross = 0;
            for (size_t j = 0; j < N; ++j) {
                double r = ranks(t, j);
                double w = is_nan(r) ? 0.0 : r - mean;
                alloc.weights(t, j) = w;
                gross += std::fabs(w);
            }
            if (gross == 0.0) {
                for (size_t j = 0; j < N; ++j) alloc.weights(t, j) = 0.0;
                continue;
            }
            for (size_t j = 0; j < N; ++j) alloc.weights(t, j) /= gross;
        }
    }
    return alloc;
}

// Day-t portfolio return = Σ_s w_{t-1,s} * returns_{t,s}: weights decided
// with information through t-1 earn day-t returns. Day 1 is 0 by convention.
// NaN stock returns contribute 0.
inline std::vector<double> portfolio_returns(const AllocationSeries& alloc,
                                             const marketdata::MarketPanel& panel) {
    const size_t T = alloc.weights.rows(), N = alloc.weights.cols();
    if (panel.rows() != T || panel.cols() != N)
        throw std::invalid_argument("allocation and panel are not aligned");
    const Matrix& rets = panel.field("returns");
    std::vector<double> out(T, 0.0);
    for (size_t t = 1; t < T; ++t) {
        double acc = 0;
        for (size_t j = 0; j < N; ++j) {
            double r = rets(t, j);
            if (is_nan(r)) continue;
            acc += alloc.weights(t - 1, j) * r;
        }
        out[t] = acc;
    }
    return out;
}

// As above but against an arbitrary returns matrix (used when the allocation
// window is a row-slice of a larger panel).
inline std::vector<double> portfolio_returns(const AllocationSeries& alloc,
                                             const Matrix& returns) {
    const size_t T = alloc.weights.rows(), N = alloc.weights.cols();
    if (returns.rows() != T || returns.cols() != N)
        throw std::invalid_argument("allocation and returns are not aligned");
    std::vector<double> out(T, 0.0);
    for (size_t t = 1; t < T; ++t) {
        double acc = 0;
        for (size_t j = 0; j < N; ++j) {
            double r = returns(t, j);
            if (is_nan(r)) continue;
            acc += alloc.weights(t - 1, j) * r;
        }
        out[t] = acc;
    }
    return out;
}

struct PerformanceRecord {
    double period_return = 0;  // Π(1+r) - 1 over the series
    double sharpe = kNaN;      // annualized, zero risk-free; NaN when vol = 0
    double volatility = 0;     // annualized, sample stdev basis
    std::vector<double> daily;

    std::string return_str() const { return format_percent(period_return); }
    std::string sharpe_str() const { return format_fixed(sharpe, 3); }
};

inline PerformanceRecord compute_metrics(const std::vector<double>& daily,
                                         double periods_per_year = 252.0) {
    if (daily.size() < 2)
        throw std::invalid_argument("compute_metrics needs at least 2 observations");
    PerformanceRecord rec;
    rec.daily = daily;
    double compounded = 1.0;
    for (double r : daily) compounded *= (1.0 + r);
    rec.period_return = compounded - 1.0;

    const double n = static_cast<double>(daily.size());
    double sum = 0;
    for (double r : daily) sum += r;
    double mean = sum / n;
    double ss = 0;
    for (double r : daily) {
        double d = r - mean;
        ss += d * d;
    }
    double sd = std::sqrt(ss / (n - 1.0));  // sample standard deviation
    rec.volatility = sd * std::sqrt(periods_per_year);
    rec.sharpe = sd == 0.0 ? kNaN : mean / sd * std::sqrt(periods_per_year);
    return rec;
}

}  // namespace alphaforge::backtest
