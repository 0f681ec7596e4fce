#pragma once

// Convergence metrics and statistical report assembly.

#include <cmath>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "alphaforge/matrix.hpp"
#include "alphaforge/stats.hpp"
#include "alphaforge/util.hpp"

namespace alphaforge::analytics {

struct PairwiseCorrelation {
    double mean = kNaN;              // over pairs with defined correlation
    std::vector<double> pair_values; // all N*(N-1)/2 pairs in (i<j) order, NaN kept
    int excluded_pairs = 0;          // zero-variance pairs left out of the mean
};

// Pearson correlation between agents' allocation matrices, flattened over
// (date, symbol). Pairs where either side has zero variance are NaN and
// excluded from the mean.
inline PairwiseCorrelation pairwise_allocation_correlation(
    const std::vector<Matrix>& allocations) {
    const size_t n = allocations.size();
    if (n < 2)
        throw std::invalid_argument("pairwise_allocation_correlation: need at least 2 agents");
    for (size_t i = 1; i < n; ++i)
        if (!allocations[i].same_shape(allocations[0]))
            throw std::invalid_argument("pairwise_allocation_correlation: shape mismatch");

    PairwiseCorrelation out;
    double sum = 0;
    int counted = 0;
    for (size_t i = 0; i < n; ++i) {
        for (size_t j = i + 1; j < n; ++j) {
            double r = stats::pearson(allocations[i].data(), allocations[j].data());
            out.pair_values.push_back(r);
            if (is_nan(r)) {
                ++out.excluded_pairs;
            } else {
                sum += r;
                ++counted;
            }
        }
    }
    if (counted > 0) out.mean = sum / counted;
    return out;
}

// Symbol-wise alternative: correlate each symbol's weight series separately,
// then average over symbols with defined correlations.
inline PairwiseCorrelation pairwise_allocation_correlation_symbolwise(
    const std::vector<Matrix>& allocations) {
    const size_t n = allocations.size();
    if (n < 2)
        throw std::invalid_argument("pairwise_allocation_correlation: need at least 2 agents");
    for (size_t i = 1; i < n; ++i)
        if (!allocations[i].same_shape(allocations[0]))
            throw std::invalid_argument("pairwise_allocation_correlation: shape mismatch");

    const size_t T = allocations[0].rows(), N = allocations[0].cols();
    PairwiseCorrelation out;
    double sum = 0;
    int counted = 0;
    for (size_t i = 0; i < n; ++i) {
        for (size_t j = i + 1; j < n; ++j) {
            double acc = 0;
            int cols = 0;
            for (size_t c = 0; c < N; ++c) {
                std::vector<double> x(T), y(T);
                for (size_t t = 0; t < T; ++t) {
                    x[t] = allocations[i](t, c);
                    y[t] = allocations[j](t, c);
                }
                double r = stats::pearson(x, y);
                if (!is_nan(r)) {
                    acc += r;
                    ++cols;
                }
            }
            double r = cols > 0 ? acc / cols : kNaN;
            out.pair_values.push_back(r);
            if (is_nan(r)) {
                ++out.excluded_pairs;
            } else {
                sum += r;
                ++counted;
            }
        }
    }
    if (counted > 0) out.mean = sum / counted;
    return out;
}

struct CorrelationTrajectory {
    std::vector<std::string> months;
    std::vector<double> mean_by_month;
    std::vector<std::vector<double>> pairs_by_month;
    double initial = kNaN;  // month 1
    double final_ = kNaN;   // last month
    double change = kNaN;   // final - initial
};

// allocations_by_month[m][agent] is that agent's allocation matrix for month m.
inline CorrelationTrajectory correlation_trajectory(
    const std::vector<std::string>& months,
    const std::vector<std::vector<Matrix>>& allocations_by_month) {
    if (months.size() != allocations_by_month.size())
        throw std::invalid_argument("correlation_trajectory: month label mismatch");
    CorrelationTrajectory traj;
    traj.months = months;
    for (const auto& allocs : allocations_by_month) {
        auto pc = pairwise_allocation_correlation(allocs);
        traj.mean_by_month.push_back(pc.mean);
        traj.pairs_by_month.push_back(pc.pair_values);
    }
    if (!traj.mean_by_month.empty()) {
        traj.initial = traj.mean_by_month.front();
        traj.final_ = traj.mean_by_month.back();
        traj.change = traj.final_ - traj.initial;
    }
    return traj;
}

// One configuration's iteration-level outcomes for the stats table.
struct ConfigSamples {
    std::string structure;
    std::string universe;
    std::vector<double> values;  // one per iteration (period return or Sharpe)
};

struct ConfigStats {
    std::string structure;
    std::string universe;
    int n = 0;                 // iterations behind the row
    double mean = kNaN;
    double ci_low = kNaN;
    double ci_high = kNaN;
    bool low_n = false;        // fewer than 5 samples behind the CI
    double t_vs_baseline = kNaN;
    double p_vs_baseline = kNaN;
    bool significant = false;  // Bonferroni-adjusted
};

// Per-test alpha 0.0125 = 0.05/4: four structures compared against baseline.
inline constexpr double kBonferroniAlpha = 0.0125;

// Paired t of each non-baseline configuration against the baseline for the
// same universe, plus bootstrap CIs. Pairing is by iteration index, so all
// configs in one universe need the same number of iterations.
inline std::vector<ConfigStats> config_stats_table(const std::vector<ConfigSamples>& samples,
                                                   const std::string& baseline_structure,
                                                   uint64_t seed = 0) {
    std::map<std::string, const ConfigSamples*> baselines;
    for (const auto& s : samples)
        if (s.structure == baseline_structure) baselines[s.universe] = &s;

    std::vector<ConfigStats> out;
    for (const auto& s : samples) {
        ConfigStats cs;
        cs.structure = s.structure;
        cs.universe = s.universe;
        cs.n = static_cast<int>(s.values.size());
        if (s.values.size() >= 2) {
            auto ci = stats::bootstrap_ci(s.values, 1000, 0.95,
                                          derive_key(seed, s.structure + "/" + s.universe));
            cs.mean = ci.mean;
            cs.ci_low = ci.lower;
            cs.ci_high = ci.upper;
        } else if (s.values.size() == 1) {
            cs.mean = s.values[0];
        }
        cs.low_n = s.values.size() < 5;
        auto it = baselines.find(s.universe);
        if (s.structure != baseline_structure && it != baselines.end() &&
            it->second->values.size() == s.values.size() && s.values.size() >= 2) {
            auto t = stats::paired_t_test(s.values, it->second->values);
            cs.t_vs_baseline = t.t;
            cs.p_vs_baseline = t.p;
            cs.significant = t.p < kBonferroniAlpha;
        }
        out.push_back(cs);
    }
    return out;
}

// One-way ANOVA across structures within one universe.
inline stats::AnovaResult structure_anova(const std::vector<ConfigSamples>& samples,
                                          const std::string& universe) {
    std::vector<std::vector<double>> groups;
    for (const auto& s : samples)
        if (s.universe == universe) groups.push_back(s.values);
    return stats::one_way_anova(groups);
}

}  // namespace alphaforge::analytics
