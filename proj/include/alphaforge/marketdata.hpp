#pragma once

// Market panel: OHLCV ingestion, the 23-field derivation, columnar caching.

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "alphaforge/matrix.hpp"
#include "alphaforge/util.hpp"

namespace alphaforge::marketdata {

inline const std::vector<std::string>& field_order() {
    static const std::vector<std::string> order = {
        "open", "high", "low", "close", "volume",
        "returns", "vwap", "dollar_volume",
        "adv_5", "adv_10", "adv_20", "adv_30", "adv_50",
        "volatility_10", "volatility_20", "volatility_30",
        "log_returns", "high_low_range", "close_to_open", "typical_price",
        "turnover_proxy", "momentum_5", "momentum_20",
    };
    return order;
}

struct UniverseSpec {
    std::string name;  // general | technology | finance | custom
    std::vector<std::string> symbols;
    std::string start;  // ISO-8601, inclusive
    std::string end;    // ISO-8601, inclusive
};

// The three stock universes used throughout: 10 large caps each, daily bars
// from 2024-01-01 to 2025-09-30.
inline UniverseSpec builtin_universe(const std::string& name) {
    UniverseSpec s;
    s.name = name;
    s.start = "2024-01-01";
    s.end = "2025-09-30";
    if (name == "general") {
        s.symbols = {"SPY", "JNJ", "JPM", "WMT", "XOM", "PG", "UNH", "HD", "VZ", "KO"};
    } else if (name == "technology") {
        s.symbols = {"NVDA", "MSFT", "GOOGL", "AAPL", "META", "AMZN", "TSLA", "AMD", "INTC", "ORCL"};
    } else if (name == "finance") {
        s.symbols = {"JPM", "BAC", "WFC", "GS", "MS", "C", "BLK", "SPGI", "AXP", "USB"};
    } else {
        throw std::runtime_error("unknown builtin universe: " + name);
    }
    return s;
}

struct MarketPanel {
    std::string universe;            // label: general/technology/finance/custom
    std::vector<int> dates;          // day numbers, strictly increasing
    std::vector<std::string> symbols;
    std::map<std::string, Matrix> fields;
    int fill_warnings = 0;           // forward-filled cells during ingestion

    size_t rows() const { return dates.size(); }
    size_t cols() const { return symbols.size(); }
    bool has_field(const std::string& name) const { return fields.count(name) != 0; }
    const Matrix& field(const std::string& name) const {
        auto it = fields.find(name);
        if (it == fields.end()) throw std::runtime_error("panel lacks field: " + name);
        return it->second;
    }
    std::string date_str(size_t row) const { return format_date(dates[row]); }

    // Row index of the first date >= d, or rows() if none.
    size_t lower_bound_row(int day) const {
        return static_cast<size_t>(
            std::lower_bound(dates.begin(), dates.end(), day) - dates.begin());
    }
};

// Contiguous run of panel rows belonging to one calendar month.
struct MonthSlice {
    std::string key;  // "YYYY-MM"
    size_t first_row;
    size_t last_row;  // inclusive
};

inline std::vector<MonthSlice> month_slices(const MarketPanel& panel) {
    std::vector<MonthSlice> out;
    for (size_t t = 0; t < panel.rows(); ++t) {
        std::string key = month_key(format_date(panel.dates[t]));
        if (out.empty() || out.back().key != key) {
            out.push_back({key, t, t});
        } else {
            out.back().last_row = t;
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Ingestion
// ---------------------------------------------------------------------------

namespace detail {

struct RawRow {
    double open, high, low, close, volume;
};

// Reads one <SYMBOL>.csv with header date,open,high,low,close,volume.
// Empty cells and "nan" parse to NaN. Dates must be strictly increasing.
inline std::map<int, RawRow> read_symbol_csv(const std::string& path, const std::string& symbol) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("missing data file for symbol " + symbol + ": " + path);
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("empty data file: " + path);
    {
        auto cols = split(trim(line), ',');
        const std::vector<std::string> expected = {"date", "open", "high",
                                                   "low",  "close", "volume"};
        if (cols.size() != expected.size())
            throw std::runtime_error("bad header in " + path + ": " + line);
        for (size_t i = 0; i < expected.size(); ++i)
            if (to_lower(trim(cols[i])) != expected[i])
                throw std::runtime_error("bad header in " + path + ": " + line);
    }
    auto cell = [&](const std::string& raw, size_t line_no) {
        std::string v = trim(raw);
        if (v.empty() || to_lower(v) == "nan") return kNaN;
        try {
            return parse_double(v);
        } catch (const std::exception&) {
            throw std::runtime_error(path + ":" + std::to_string(line_no) +
                                     ": bad numeric cell '" + v + "'");
        }
    };
    std::map<int, RawRow> rows;
    int prev_day = -1;
    size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        std::string t = trim(line);
        if (t.empty()) continue;
        auto cols = split(t, ',');
        if (cols.size() != 6)
            throw std::runtime_error(path + ":" + std::to_string(line_no) +
                                     ": expected 6 columns");
        int day = parse_date(trim(cols[0]));
        if (day <= prev_day)
            throw std::runtime_error(path + ":" + std::to_string(line_no) +
                                     ": dates not strictly increasing");
        prev_day = day;
        RawRow r{cell(cols[1], line_no), cell(cols[2], line_no), cell(cols[3], line_no),
                 cell(cols[4], line_no), cell(cols[5], line_no)};
        rows.emplace(day, r);
    }
    return rows;
}

}  // namespace detail

// Loads base OHLCV for every symbol in the universe, aligned on the
// intersection of trading dates, clipped to [start, end]. Missing cells are
// forward-filled from the prior day (counted as warnings); a symbol with more
// than 3 consecutive missing days for a field, or a missing value on its
// first aligned day, is an error.
inline MarketPanel load_ohlcv(const std::string& directory, const UniverseSpec& spec) {
    if (spec.symbols.empty()) throw std::runtime_error("universe has no symbols");
    int start_day = parse_date(spec.start);
    int end_day = parse_date(spec.end);
    if (start_day >= end_day) throw std::runtime_error("universe start must precede end");

    std::vector<std::map<int, detail::RawRow>> per_symbol;
    per_symbol.reserve(spec.symbols.size());
    for (const auto& sym : spec.symbols)
        per_symbol.push_back(detail::read_symbol_csv(directory + "/" + sym + ".csv", sym));

    // Intersection of dates across symbols, clipped to the window.
    std::vector<int> dates;
    for (const auto& [day, row] : per_symbol[0]) {
        if (day < start_day || day > end_day) continue;
        bool everywhere = true;
        for (size_t s = 1; s < per_symbol.size() && everywhere; ++s)
            everywhere = per_symbol[s].count(day) != 0;
        if (everywhere) dates.push_back(day);
    }
    if (dates.empty())
        throw std::runtime_error("no common trading dates across universe in window " +
                                 spec.start + ".." + spec.end);

    MarketPanel panel;
    panel.universe = spec.name;
    panel.dates = dates;
    panel.symbols = spec.symbols;
    const size_t T = dates.size(), N = spec.symbols.size();
    static const char* base_names[5] = {"open", "high", "low", "close", "volume"};
    for (const char* f : base_names) panel.fields.emplace(f, Matrix(T, N, kNaN));

    for (size_t j = 0; j < N; ++j) {
        for (size_t t = 0; t < T; ++t) {
            const detail::RawRow& r = per_symbol[j].at(dates[t]);
            panel.fields["open"](t, j) = r.open;
            panel.fields["high"](t, j) = r.high;
            panel.fields["low"](t, j) = r.low;
            panel.fields["close"](t, j) = r.close;
            panel.fields["volume"](t, j) = r.volume;
        }
    }

    // Forward-fill isolated gaps (max run 3) per symbol and field.
    for (const char* f : base_names) {
        Matrix& m = panel.fields[f];
        for (size_t j = 0; j < N; ++j) {
            int run = 0;
            for (size_t t = 0; t < T; ++t) {
                if (is_nan(m(t, j))) {
                    if (t == 0)
                        throw std::runtime_error("symbol " + spec.symbols[j] + " has no " +
                                                 std::string(f) + " on its first trading day");
                    ++run;
                    if (run > 3)
                        throw std::runtime_error("symbol " + spec.symbols[j] + " missing " +
                                                 std::string(f) + " for more than 3 consecutive days");
                    m(t, j) = m(t - 1, j);
                    ++panel.fill_warnings;
                } else {
                    run = 0;
                }
            }
        }
    }
    return panel;
}

// ---------------------------------------------------------------------------
// Field derivation
// ---------------------------------------------------------------------------

namespace detail {

// Trailing n-row mean including the current row; NaN until the window fills
// or while it contains NaN. Summed oldest to newest.
inline Matrix rolling_mean(const Matrix& x, size_t n) {
    Matrix out(x.rows(), x.cols(), kNaN);
    for (size_t j = 0; j < x.cols(); ++j) {
        for (size_t t = n - 1; t < x.rows(); ++t) {
            double sum = 0;
            bool ok = true;
            for (size_t i = t + 1 - n; i <= t; ++i) {
                double v = x(i, j);
                if (is_nan(v)) {
                    ok = false;
                    break;
                }
                sum += v;
            }
            if (ok) out(t, j) = sum / static_cast<double>(n);
        }
    }
    return out;
}

// Trailing population standard deviation, centered two-pass.
inline Matrix rolling_pop_std(const Matrix& x, size_t n) {
    Matrix out(x.rows(), x.cols(), kNaN);
    for (size_t j = 0; j < x.cols(); ++j) {
        for (size_t t = n - 1; t < x.rows(); ++t) {
            double sum = 0;
            bool ok = true;
            for (size_t i = t + 1 - n; i <= t; ++i) {
                double v = x(i, j);
                if (is_nan(v)) {
                    ok = false;
                    break;
                }
                sum += v;
            }
            if (!ok) continue;
            double mean = sum / static_cast<double>(n);
            double ss = 0;
            for (size_t i = t + 1 - n; i <= t; ++i) {
                double d = x(i, j) - mean;
                ss += d * d;
            }
            out(t, j) = std::sqrt(ss / static_cast<double>(n));
        }
    }
    return out;
}

}  // namespace detail

// Materializes the full 23-field panel from the 5 base fields. Derived
// definitions:
//   returns        = close_t / close_{t-1} - 1
//   log_returns    = ln(close_t / close_{t-1})
//   vwap           = (high + low + close) / 3   (typical-price proxy; daily
//                    bars carry no intraday volume curve)
//   typical_price  = (high + low + close) / 3
//   dollar_volume  = close * volume
//   adv_k          = trailing k-day mean of volume (current day included)
//   volatility_k   = trailing k-day population std of returns, not annualized
//   high_low_range = (high - low) / close
//   close_to_open  = close / open - 1
//   turnover_proxy = dollar_volume / adv_20
//   momentum_k     = close_t / close_{t-k} - 1
// Leading windows are NaN; non-finite results collapse to NaN.
inline MarketPanel derive_fields(const MarketPanel& base) {
    for (const char* f : {"open", "high", "low", "close", "volume"})
        if (!base.has_field(f)) throw std::runtime_error("base panel lacks field: " + std::string(f));

    MarketPanel p = base;
    const size_t T = p.rows(), N = p.cols();
    const Matrix& open = p.field("open");
    const Matrix& high = p.field("high");
    const Matrix& low = p.field("low");
    const Matrix& close = p.field("close");
    const Matrix& volume = p.field("volume");

    auto finite_or_nan = [](double v) { return std::isfinite(v) ? v : kNaN; };

    Matrix returns(T, N, kNaN), log_returns(T, N, kNaN);
    for (size_t j = 0; j < N; ++j) {
        for (size_t t = 1; t < T; ++t) {
            double prev = close(t - 1, j), cur = close(t, j);
            if (is_nan(prev) || is_nan(cur) || prev == 0) continue;
            returns(t, j) = finite_or_nan(cur / prev - 1.0);
            double ratio = cur / prev;
            log_returns(t, j) = ratio > 0 ? finite_or_nan(std::log(ratio)) : kNaN;
        }
    }

    Matrix vwap(T, N, kNaN), typical(T, N, kNaN), dollar(T, N, kNaN);
    Matrix hl_range(T, N, kNaN), c2o(T, N, kNaN);
    for (size_t t = 0; t < T; ++t) {
        for (size_t j = 0; j < N; ++j) {
            double h = high(t, j), l = low(t, j), c = close(t, j), o = open(t, j),
                   v = volume(t, j);
            double tp = (h + l + c) / 3.0;
            vwap(t, j) = finite_or_nan(tp);
            typical(t, j) = finite_or_nan(tp);
            dollar(t, j) = finite_or_nan(c * v);
            hl_range(t, j) = c != 0 ? finite_or_nan((h - l) / c) : kNaN;
            c2o(t, j) = o != 0 ? finite_or_nan(c / o - 1.0) : kNaN;
        }
    }

    p.fields["returns"] = returns;
    p.fields["log_returns"] = log_returns;
    p.fields["vwap"] = vwap;
    p.fields["typical_price"] = typical;
    p.fields["dollar_volume"] = dollar;
    p.fields["high_low_range"] = hl_range;
    p.fields["close_to_open"] = c2o;

    for (size_t k : {5u, 10u, 20u, 30u, 50u})
        p.fields["adv_" + std::to_string(k)] = detail::rolling_mean(volume, k);
    for (size_t k : {10u, 20u, 30u})
        p.fields["volatility_" + std::to_string(k)] = detail::rolling_pop_std(returns, k);

    Matrix turnover(T, N, kNaN);
    const Matrix& adv20 = p.fields["adv_20"];
    for (size_t t = 0; t < T; ++t) {
        for (size_t j = 0; j < N; ++j) {
            double dv = dollar(t, j), a = adv20(t, j);
            if (is_nan(dv) || is_nan(a) || a == 0) continue;
            turnover(t, j) = finite_or_nan(dv / a);
        }
    }
    p.fields["turnover_proxy"] = turnover;

    for (size_t k : {5u, 20u}) {
        Matrix mom(T, N, kNaN);
        for (size_t j = 0; j < N; ++j) {
            for (size_t t = k; t < T; ++t) {
                double prev = close(t - k, j), cur = close(t, j);
                if (is_nan(prev) || is_nan(cur) || prev == 0) continue;
                mom(t, j) = finite_or_nan(cur / prev - 1.0);
            }
        }
        p.fields["momentum_" + std::to_string(k)] = mom;
    }
    return p;
}

// ---------------------------------------------------------------------------
// Columnar cache: one record per date-symbol carrying every field present.
// Doubles are serialized with shortest-round-trip formatting, so a
// save/load/save cycle is byte-identical.
// ---------------------------------------------------------------------------

inline void save_panel(const MarketPanel& panel, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write panel cache: " + path);
    std::vector<std::string> names;
    for (const auto& f : field_order())
        if (panel.has_field(f)) names.push_back(f);
    for (const auto& [name, m] : panel.fields)
        if (std::find(names.begin(), names.end(), name) == names.end()) names.push_back(name);

    out << "# alphaforge panel v1 universe=" << panel.universe << "\n";
    out << "date,symbol";
    for (const auto& n : names) out << "," << n;
    out << "\n";
    for (size_t t = 0; t < panel.rows(); ++t) {
        for (size_t j = 0; j < panel.cols(); ++j) {
            out << format_date(panel.dates[t]) << "," << panel.symbols[j];
            for (const auto& n : names) out << "," << repr_double(panel.field(n)(t, j));
            out << "\n";
        }
    }
    if (!out) throw std::runtime_error("failed writing panel cache: " + path);
}

inline MarketPanel load_panel(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read panel cache: " + path);
    std::string line;
    if (!std::getline(in, line) || !line.starts_with("# alphaforge panel v1"))
        throw std::runtime_error("not a panel cache file: " + path);
    MarketPanel panel;
    {
        auto pos = line.find("universe=");
        if (pos != std::string::npos) panel.universe = trim(line.substr(pos + 9));
    }
    if (!std::getline(in, line)) throw std::runtime_error("panel cache missing header: " + path);
    auto header = split(trim(line), ',');
    if (header.size() < 3 || header[0] != "date" || header[1] != "symbol")
        throw std::runtime_error("panel cache bad header: " + path);
    std::vector<std::string> names(header.begin() + 2, header.end());

    // First pass over records to recover the date/symbol axes in order.
    std::vector<std::vector<std::string>> records;
    while (std::getline(in, line)) {
        std::string t = trim(line);
        if (t.empty()) continue;
        auto cols = split(t, ',');
        if (cols.size() != header.size())
            throw std::runtime_error("panel cache ragged row: " + t);
        records.push_back(std::move(cols));
    }
    std::vector<int> dates;
    std::vector<std::string> symbols;
    std::set<int> seen_dates;
    std::set<std::string> seen_syms;
    for (const auto& r : records) {
        int day = parse_date(r[0]);
        if (seen_dates.insert(day).second) dates.push_back(day);
        if (seen_syms.insert(r[1]).second) symbols.push_back(r[1]);
    }
    std::sort(dates.begin(), dates.end());
    panel.dates = dates;
    panel.symbols = symbols;
    const size_t N = symbols.size();
    std::map<int, size_t> date_row;
    for (size_t t = 0; t < dates.size(); ++t) date_row[dates[t]] = t;
    std::map<std::string, size_t> sym_col;
    for (size_t j = 0; j < N; ++j) sym_col[symbols[j]] = j;

    for (const auto& n : names) panel.fields.emplace(n, Matrix(dates.size(), N, kNaN));
    for (const auto& r : records) {
        size_t t = date_row.at(parse_date(r[0]));
        size_t j = sym_col.at(r[1]);
        for (size_t k = 0; k < names.size(); ++k)
            panel.fields[names[k]](t, j) = parse_double(r[2 + k]);
    }
    return panel;
}

}  // namespace alphaforge::marketdata
