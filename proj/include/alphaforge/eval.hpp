#pragma once

// Vectorized alpha-expression evaluation over a MarketPanel.
//
// Numeric semantics (normative; the test-suite reference interpreter follows
// the same rules so results agree to 1e-9 absolute):
//   * Trailing windows include the current row; the first n-1 rows (n for
//     delta/delay) are NaN. A NaN anywhere in a window makes the output NaN.
//   * Rolling statistics recompute every window from scratch, accumulating
//     oldest to newest; no incremental sliding sums.
//   * Variance/std are population (divide by n), centered two-pass:
//     mean first, then sum of squared deviations.
//   * correlation r = sxy / sqrt(sxx * syy); zero variance on either side
//     gives NaN. Regression beta = sxy / sxx, alpha = mean_y - beta * mean_x.
//   * Cross-sectional ops use the non-NaN entries of each row; NaN cells stay
//     NaN. Ranks are ascending tie-averaged positions mapped by /(m-1);
//     a single-entry row ranks 0.5. Percentiles interpolate linearly:
//     h = (m-1) * p / 100 over the ascending-sorted values.
//   * Domain violations (x/0, log of non-positive, sqrt of negative,
//     non-finite results) become NaN and increment a diagnostics counter.
//   * Elementwise ops propagate NaN silently (no diagnostic).

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "alphaforge/expr.hpp"
#include "alphaforge/marketdata.hpp"
#include "alphaforge/matrix.hpp"
#include "alphaforge/util.hpp"

namespace alphaforge::eval {

struct EvalDiag {
    size_t domain_violations = 0;
};

struct Signal {
    std::vector<int> dates;
    std::vector<std::string> symbols;
    Matrix values;
    size_t domain_violations = 0;
};

// ---------------------------------------------------------------------------
// Elementwise kernels
// ---------------------------------------------------------------------------

namespace detail {

inline double guard(double v, EvalDiag& diag) {
    if (!std::isfinite(v)) {
        ++diag.domain_violations;
        return kNaN;
    }
    return v;
}

}  // namespace detail

template <typename F>
inline Matrix elementwise(const Matrix& a, F&& f) {
    Matrix out(a.rows(), a.cols());
    for (size_t t = 0; t < a.rows(); ++t)
        for (size_t j = 0; j < a.cols(); ++j) out(t, j) = f(a(t, j));
    return out;
}

template <typename F>
inline Matrix elementwise2(const Matrix& a, const Matrix& b, F&& f) {
    Matrix out(a.rows(), a.cols());
    for (size_t t = 0; t < a.rows(); ++t)
        for (size_t j = 0; j < a.cols(); ++j) out(t, j) = f(a(t, j), b(t, j));
    return out;
}

inline Matrix ew_add(const Matrix& a, const Matrix& b, EvalDiag& diag) {
    return elementwise2(a, b, [&](double x, double y) {
        if (is_nan(x) || is_nan(y)) return kNaN;
        return detail::guard(x + y, diag);
    });
}
inline Matrix ew_sub(const Matrix& a, const Matrix& b, EvalDiag& diag) {
    return elementwise2(a, b, [&](double x, double y) {
        if (is_nan(x) || is_nan(y)) return kNaN;
        return detail::guard(x - y, diag);
    });
}
inline Matrix ew_mul(const Matrix& a, const Matrix& b, EvalDiag& diag) {
    return elementwise2(a, b, [&](double x, double y) {
        if (is_nan(x) || is_nan(y)) return kNaN;
        return detail::guard(x * y, diag);
    });
}
inline Matrix ew_div(const Matrix& a, const Matrix& b, EvalDiag& diag) {
    return elementwise2(a, b, [&](double x, double y) {
        if (is_nan(x) || is_nan(y)) return kNaN;
        if (y == 0.0) {
            ++diag.domain_violations;
            return kNaN;
        }
        return detail::guard(x / y, diag);
    });
}
inline Matrix ew_neg(const Matrix& a) {
    return elementwise(a, [](double x) { return is_nan(x) ? kNaN : -x; });
}
inline Matrix ew_abs(const Matrix& a) {
    return elementwise(a, [](double x) { return is_nan(x) ? kNaN : std::fabs(x); });
}
inline Matrix ew_sign(const Matrix& a) {
    return elementwise(a, [](double x) {
        if (is_nan(x)) return kNaN;
        if (x > 0) return 1.0;
        if (x < 0) return -1.0;
        return 0.0;
    });
}
inline Matrix ew_sqrt(const Matrix& a, EvalDiag& diag) {
    return elementwise(a, [&](double x) {
        if (is_nan(x)) return kNaN;
        if (x < 0) {
            ++diag.domain_violations;
            return kNaN;
        }
        return std::sqrt(x);
    });
}
inline Matrix ew_log(const Matrix& a, EvalDiag& diag) {
    return elementwise(a, [&](double x) {
        if (is_nan(x)) return kNaN;
        if (x <= 0) {
            ++diag.domain_violations;
            return kNaN;
        }
        return detail::guard(std::log(x), diag);
    });
}
inline Matrix ew_power(const Matrix& a, const Matrix& b, EvalDiag& diag) {
    return elementwise2(a, b, [&](double x, double y) {
        if (is_nan(x) || is_nan(y)) return kNaN;
        return detail::guard(std::pow(x, y), diag);
    });
}

// ---------------------------------------------------------------------------
// Cross-sectional kernels (per date-row over the non-NaN entries)
// ---------------------------------------------------------------------------

namespace detail {

inline double interp_percentile(const std::vector<double>& sorted, double p) {
    const size_t m = sorted.size();
    if (m == 1) return sorted[0];
    double h = static_cast<double>(m - 1) * p / 100.0;
    auto i = static_cast<size_t>(h);
    if (i + 1 >= m) return sorted[m - 1];
    double frac = h - static_cast<double>(i);
    return sorted[i] + frac * (sorted[i + 1] - sorted[i]);
}

}  // namespace detail

inline Matrix cs_rank(const Matrix& a) {
    Matrix out(a.rows(), a.cols(), kNaN);
    std::vector<std::pair<double, size_t>> entries;
    for (size_t t = 0; t < a.rows(); ++t) {
        entries.clear();
        for (size_t j = 0; j < a.cols(); ++j)
            if (!is_nan(a(t, j))) entries.emplace_back(a(t, j), j);
        const size_t m = entries.size();
        if (m == 0) continue;
        if (m == 1) {
            out(t, entries[0].second) = 0.5;
            continue;
        }
        std::stable_sort(entries.begin(), entries.end(),
                         [](const auto& x, const auto& y) { return x.first < y.first; });
        size_t i = 0;
        while (i < m) {
            size_t k = i;
            while (k + 1 < m && entries[k + 1].first == entries[i].first) ++k;
            double pos = (static_cast<double>(i) + static_cast<double>(k)) / 2.0;
            double r = pos / static_cast<double>(m - 1);
            for (size_t q = i; q <= k; ++q) out(t, entries[q].second) = r;
            i = k + 1;
        }
    }
    return out;
}

inline Matrix cs_zscore(const Matrix& a) {
    Matrix out(a.rows(), a.cols(), kNaN);
    for (size_t t = 0; t < a.rows(); ++t) {
        double sum = 0;
        size_t m = 0;
        for (size_t j = 0; j < a.cols(); ++j)
            if (!is_nan(a(t, j))) {
                sum += a(t, j);
                ++m;
            }
        if (m == 0) continue;
        double mean = sum / static_cast<double>(m);
        double ss = 0;
        for (size_t j = 0; j < a.cols(); ++j)
            if (!is_nan(a(t, j))) {
                double d = a(t, j) - mean;
                ss += d * d;
            }
        double sd = std::sqrt(ss / static_cast<double>(m));
        for (size_t j = 0; j < a.cols(); ++j) {
            if (is_nan(a(t, j))) continue;
            out(t, j) = sd == 0.0 ? 0.0 : (a(t, j) - mean) / sd;
        }
    }
    return out;
}

inline Matrix cs_scale(const Matrix& a) {
    Matrix out(a.rows(), a.cols(), kNaN);
    for (size_t t = 0; t < a.rows(); ++t) {
        double sum = 0;
        size_t m = 0;
        for (size_t j = 0; j < a.cols(); ++j)
            if (!is_nan(a(t, j))) {
                sum += a(t, j);
                ++m;
            }
        if (m == 0) continue;
        double mean = sum / static_cast<double>(m);
        double ss = 0;
        for (size_t j = 0; j < a.cols(); ++j)
            if (!is_nan(a(t, j))) {
                double d = a(t, j) - mean;
                ss += d * d;
            }
        double sd = std::sqrt(ss / static_cast<double>(m));
        for (size_t j = 0; j < a.cols(); ++j) {
            if (is_nan(a(t, j))) continue;
            out(t, j) = sd == 0.0 ? kNaN : a(t, j) / sd;
        }
    }
    return out;
}

inline Matrix cs_winsorize(const Matrix& a, double p) {
    Matrix out(a.rows(), a.cols(), kNaN);
    std::vector<double> vals;
    for (size_t t = 0; t < a.rows(); ++t) {
        vals.clear();
        for (size_t j = 0; j < a.cols(); ++j)
            if (!is_nan(a(t, j))) vals.push_back(a(t, j));
        if (vals.empty()) continue;
        std::sort(vals.begin(), vals.end());
        double pa = 100.0 - p, pb = p;
        double lo = detail::interp_percentile(vals, std::min(pa, pb));
        double hi = detail::interp_percentile(vals, std::max(pa, pb));
        for (size_t j = 0; j < a.cols(); ++j) {
            double x = a(t, j);
            if (is_nan(x)) continue;
            out(t, j) = std::min(std::max(x, lo), hi);
        }
    }
    return out;
}

inline Matrix cs_market_neutralize(const Matrix& a) {
    Matrix out(a.rows(), a.cols(), kNaN);
    for (size_t t = 0; t < a.rows(); ++t) {
        double sum = 0;
        size_t m = 0;
        for (size_t j = 0; j < a.cols(); ++j)
            if (!is_nan(a(t, j))) {
                sum += a(t, j);
                ++m;
            }
        if (m == 0) continue;
        double mean = sum / static_cast<double>(m);
        for (size_t j = 0; j < a.cols(); ++j)
            if (!is_nan(a(t, j))) out(t, j) = a(t, j) - mean;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Time-series kernels (per symbol-column, trailing windows incl. current row)
// ---------------------------------------------------------------------------

inline Matrix ts_delta(const Matrix& a, size_t n) {
    Matrix out(a.rows(), a.cols(), kNaN);
    for (size_t j = 0; j < a.cols(); ++j)
        for (size_t t = n; t < a.rows(); ++t) {
            double cur = a(t, j), prev = a(t - n, j);
            if (is_nan(cur) || is_nan(prev)) continue;
            out(t, j) = cur - prev;
        }
    return out;
}

inline Matrix ts_delay(const Matrix& a, size_t n) {
    Matrix out(a.rows(), a.cols(), kNaN);
    for (size_t j = 0; j < a.cols(); ++j)
        for (size_t t = n; t < a.rows(); ++t) out(t, j) = a(t - n, j);
    return out;
}

namespace detail {

// Gathers the trailing n-window ending at t into `buf` (oldest first).
// Returns false if it contains NaN or does not fit.
inline bool gather_window(const Matrix& a, size_t t, size_t j, size_t n,
                          std::vector<double>& buf) {
    if (t + 1 < n) return false;
    buf.clear();
    for (size_t i = t + 1 - n; i <= t; ++i) {
        double v = a(i, j);
        if (is_nan(v)) return false;
        buf.push_back(v);
    }
    return true;
}

}  // namespace detail

inline Matrix ts_min(const Matrix& a, size_t n) {
    Matrix out(a.rows(), a.cols(), kNaN);
    std::vector<double> w;
    for (size_t j = 0; j < a.cols(); ++j)
        for (size_t t = 0; t < a.rows(); ++t) {
            if (!detail::gather_window(a, t, j, n, w)) continue;
            double best = w[0];
            for (double v : w) best = std::min(best, v);
            out(t, j) = best;
        }
    return out;
}

inline Matrix ts_max(const Matrix& a, size_t n) {
    Matrix out(a.rows(), a.cols(), kNaN);
    std::vector<double> w;
    for (size_t j = 0; j < a.cols(); ++j)
        for (size_t t = 0; t < a.rows(); ++t) {
            if (!detail::gather_window(a, t, j, n, w)) continue;
            double best = w[0];
            for (double v : w) best = std::max(best, v);
            out(t, j) = best;
        }
    return out;
}

inline Matrix ts_mean(const Matrix& a, size_t n) {
    Matrix out(a.rows(), a.cols(), kNaN);
    std::vector<double> w;
    for (size_t j = 0; j < a.cols(); ++j)
        for (size_t t = 0; t < a.rows(); ++t) {
            if (!detail::gather_window(a, t, j, n, w)) continue;
            double sum = 0;
            for (double v : w) sum += v;
            out(t, j) = sum / static_cast<double>(n);
        }
    return out;
}

inline Matrix ts_std(const Matrix& a, size_t n) {
    Matrix out(a.rows(), a.cols(), kNaN);
    std::vector<double> w;
    for (size_t j = 0; j < a.cols(); ++j)
        for (size_t t = 0; t < a.rows(); ++t) {
            if (!detail::gather_window(a, t, j, n, w)) continue;
            double sum = 0;
            for (double v : w) sum += v;
            double mean = sum / static_cast<double>(n);
            double ss = 0;
            for (double v : w) {
                double d = v - mean;
                ss += d * d;
            }
            out(t, j) = std::sqrt(ss / static_cast<double>(n));
        }
    return out;
}

inline Matrix ts_rank(const Matrix& a, size_t n) {
    Matrix out(a.rows(), a.cols(), kNaN);
    std::vector<double> w;
    for (size_t j = 0; j < a.cols(); ++j)
        for (size_t t = 0; t < a.rows(); ++t) {
            if (!detail::gather_window(a, t, j, n, w)) continue;
            if (n == 1) {
                out(t, j) = 0.5;
                continue;
            }
            double cur = w[n - 1];
            size_t less = 0, equal = 0;
            for (double v : w) {
                if (v < cur) ++less;
                if (v == cur) ++equal;
            }
            double pos = static_cast<double>(less) + (static_cast<double>(equal) - 1.0) / 2.0;
            out(t, j) = pos / static_cast<double>(n - 1);
        }
    return out;
}

inline Matrix decay_linear(const Matrix& a, size_t n) {
    Matrix out(a.rows(), a.cols(), kNaN);
    std::vector<double> w;
    const double total = static_cast<double>(n) * static_cast<double>(n + 1) / 2.0;
    for (size_t j = 0; j < a.cols(); ++j)
        for (size_t t = 0; t < a.rows(); ++t) {
            if (!detail::gather_window(a, t, j, n, w)) continue;
            double acc = 0;
            for (size_t i = 0; i < n; ++i) acc += w[i] * static_cast<double>(i + 1);
            out(t, j) = acc / total;
        }
    return out;
}

inline Matrix ts_correlation(const Matrix& x, const Matrix& y, size_t n) {
    Matrix out(x.rows(), x.cols(), kNaN);
    std::vector<double> wx, wy;
    for (size_t j = 0; j < x.cols(); ++j)
        for (size_t t = 0; t < x.rows(); ++t) {
            if (!detail::gather_window(x, t, j, n, wx)) continue;
            if (!detail::gather_window(y, t, j, n, wy)) continue;
            double sx = 0, sy = 0;
            for (size_t i = 0; i < n; ++i) sx += wx[i];
            for (size_t i = 0; i < n; ++i) sy += wy[i];
            double mx = sx / static_cast<double>(n), my = sy / static_cast<double>(n);
            double sxx = 0, syy = 0, sxy = 0;
            for (size_t i = 0; i < n; ++i) {
                double dx = wx[i] - mx;
                sxx += dx * dx;
            }
            for (size_t i = 0; i < n; ++i) {
                double dy = wy[i] - my;
                syy += dy * dy;
            }
            for (size_t i = 0; i < n; ++i) sxy += (wx[i] - mx) * (wy[i] - my);
            if (sxx == 0.0 || syy == 0.0) continue;
            out(t, j) = sxy / std::sqrt(sxx * syy);
        }
    return out;
}

enum class RegKind { Slope, Residual, Fitted };

inline Matrix ts_regression(const Matrix& y, const Matrix& x, size_t n, RegKind kind) {
    Matrix out(y.rows(), y.cols(), kNaN);
    std::vector<double> wy, wx;
    for (size_t j = 0; j < y.cols(); ++j)
        for (size_t t = 0; t < y.rows(); ++t) {
            if (!detail::gather_window(y, t, j, n, wy)) continue;
            if (!detail::gather_window(x, t, j, n, wx)) continue;
            double sx = 0, sy = 0;
            for (size_t i = 0; i < n; ++i) sx += wx[i];
            for (size_t i = 0; i < n; ++i) sy += wy[i];
            double mx = sx / static_cast<double>(n), my = sy / static_cast<double>(n);
            double sxx = 0, sxy = 0;
            for (size_t i = 0; i < n; ++i) {
                double dx = wx[i] - mx;
                sxx += dx * dx;
            }
            for (size_t i = 0; i < n; ++i) sxy += (wx[i] - mx) * (wy[i] - my);
            if (sxx == 0.0) continue;
            double beta = sxy / sxx;
            double alpha = my - beta * mx;
            switch (kind) {
                case RegKind::Slope: out(t, j) = beta; break;
                case RegKind::Fitted: out(t, j) = alpha + beta * x(t, j); break;
                case RegKind::Residual: out(t, j) = y(t, j) - (alpha + beta * x(t, j)); break;
            }
        }
    return out;
}

// ---------------------------------------------------------------------------
// Expression dispatch
// ---------------------------------------------------------------------------

namespace detail {

inline size_t window_of(const expr::Expr& call, size_t idx) {
    return static_cast<size_t>(call.args[idx]->value);
}

inline Matrix eval_node(const expr::Expr& e, const marketdata::MarketPanel& panel,
                        EvalDiag& diag) {
    using expr::NodeKind;
    const size_t T = panel.rows(), N = panel.cols();
    switch (e.kind) {
        case NodeKind::Literal:
            return Matrix(T, N, e.value);
        case NodeKind::Field:
            return panel.field(e.name);
        case NodeKind::Negate:
            return ew_neg(eval_node(*e.args[0], panel, diag));
        case NodeKind::Binary: {
            Matrix a = eval_node(*e.args[0], panel, diag);
            Matrix b = eval_node(*e.args[1], panel, diag);
            switch (e.op) {
                case expr::BinaryOp::Add: return ew_add(a, b, diag);
                case expr::BinaryOp::Sub: return ew_sub(a, b, diag);
                case expr::BinaryOp::Mul: return ew_mul(a, b, diag);
                case expr::BinaryOp::Div: return ew_div(a, b, diag);
            }
            throw std::logic_error("unreachable binary op");
        }
        case NodeKind::Call: {
            const std::string& f = e.name;
            if (f == "power")
                return ew_power(eval_node(*e.args[0], panel, diag),
                                eval_node(*e.args[1], panel, diag), diag);
            if (f == "sqrt") return ew_sqrt(eval_node(*e.args[0], panel, diag), diag);
            if (f == "log") return ew_log(eval_node(*e.args[0], panel, diag), diag);
            if (f == "abs") return ew_abs(eval_node(*e.args[0], panel, diag));
            if (f == "sign") return ew_sign(eval_node(*e.args[0], panel, diag));
            if (f == "rank") return cs_rank(eval_node(*e.args[0], panel, diag));
            if (f == "scale") return cs_scale(eval_node(*e.args[0], panel, diag));
            if (f == "zscore") return cs_zscore(eval_node(*e.args[0], panel, diag));
            if (f == "winsorize")
                return cs_winsorize(eval_node(*e.args[0], panel, diag), e.args[1]->value);
            if (f == "market_neutralize")
                return cs_market_neutralize(eval_node(*e.args[0], panel, diag));
            if (f == "delta")
                return ts_delta(eval_node(*e.args[0], panel, diag), window_of(e, 1));
            if (f == "delay")
                return ts_delay(eval_node(*e.args[0], panel, diag), window_of(e, 1));
            if (f == "ts_rank")
                return ts_rank(eval_node(*e.args[0], panel, diag), window_of(e, 1));
            if (f == "ts_min")
                return ts_min(eval_node(*e.args[0], panel, diag), window_of(e, 1));
            if (f == "ts_max")
                return ts_max(eval_node(*e.args[0], panel, diag), window_of(e, 1));
            if (f == "ts_mean")
                return ts_mean(eval_node(*e.args[0], panel, diag), window_of(e, 1));
            if (f == "ts_std")
                return ts_std(eval_node(*e.args[0], panel, diag), window_of(e, 1));
            if (f == "decay_linear")
                return decay_linear(eval_node(*e.args[0], panel, diag), window_of(e, 1));
            if (f == "correlation")
                return ts_correlation(eval_node(*e.args[0], panel, diag),
                                      eval_node(*e.args[1], panel, diag), window_of(e, 2));
            if (f == "ts_regression") {
                RegKind kind = RegKind::Slope;
                const std::string& r = e.args[3]->name;
                if (r == "residual") kind = RegKind::Residual;
                else if (r == "fitted") kind = RegKind::Fitted;
                return ts_regression(eval_node(*e.args[0], panel, diag),
                                     eval_node(*e.args[1], panel, diag), window_of(e, 2), kind);
            }
            throw std::invalid_argument("evaluator has no kernel for function: " + f);
        }
        case NodeKind::RetType:
            throw std::invalid_argument("rettype keyword outside ts_regression");
    }
    throw std::logic_error("unreachable node kind");
}

}  // namespace detail

// Schema reflecting what this panel can actually serve.
inline expr::Schema panel_schema(const marketdata::MarketPanel& panel) {
    expr::Schema s;
    for (const auto& [name, m] : panel.fields) s.fields.insert(name);
    s.functions = expr::function_registry();
    return s;
}

// Evaluates over the full panel, then slices [start, end] (inclusive ISO
// dates; empty strings keep the corresponding boundary). History before
// `start` still feeds trailing windows.
inline Signal evaluate(const expr::ExprPtr& e, const marketdata::MarketPanel& panel,
                       const std::string& start = "", const std::string& end = "") {
    if (!e) throw std::invalid_argument("null expression");
    auto problems = expr::validate(e, panel_schema(panel));
    if (!problems.empty())
        throw std::invalid_argument("expression invalid for panel: " + problems[0].message);

    EvalDiag diag;
    Matrix full = detail::eval_node(*e, panel, diag);

    size_t r0 = 0, r1 = panel.rows() == 0 ? 0 : panel.rows() - 1;
    if (!start.empty()) r0 = panel.lower_bound_row(parse_date(start));
    if (!end.empty()) {
        size_t ub = panel.lower_bound_row(parse_date(end) + 1);
        if (ub == 0) throw std::invalid_argument("evaluation window precedes panel dates");
        r1 = ub - 1;
    }
    if (r0 >= panel.rows() || r0 > r1)
        throw std::invalid_argument("evaluation window has no panel rows");

    Signal sig;
    sig.domain_violations = diag.domain_violations;
    sig.symbols = panel.symbols;
    sig.dates.assign(panel.dates.begin() + static_cast<long>(r0),
                     panel.dates.begin() + static_cast<long>(r1) + 1);
    sig.values = full.slice_rows(r0, r1);
    return sig;
}

// Columnar export in the panel cache format (single field "signal").
inline void save_signal(const Signal& sig, const std::string& path) {
    marketdata::MarketPanel tmp;
    tmp.universe = "signal";
    tmp.dates = sig.dates;
    tmp.symbols = sig.symbols;
    tmp.fields.emplace("signal", sig.values);
    marketdata::save_panel(tmp, path);
}

}  // namespace alphaforge::eval
