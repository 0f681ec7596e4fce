#pragma once

// Synthetic daily OHLCV generation. Price paths are geometric with a
// per-symbol persistent drift; the `momentum` knob controls the
// cross-sectional dispersion of those drifts, so past relative winners keep
// winning and momentum-style alphas carry real signal.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "alphaforge/marketdata.hpp"
#include "alphaforge/rng.hpp"
#include "alphaforge/util.hpp"

namespace alphaforge::synthetic {

struct SynthConfig {
    std::vector<std::string> symbols = {"AAA", "BBB", "CCC", "DDD", "EEE",
                                        "FFF", "GGG", "HHH", "III", "JJJ"};
    std::string start = "2024-01-01";
    std::string end = "2025-09-30";
    int num_days = 0;          // if > 0, overrides `end`: that many weekdays from start
    uint64_t seed = 42;
    double momentum = 0.0;     // std of per-symbol persistent daily drift
    double daily_vol = 0.015;  // idiosyncratic daily return volatility
    std::string universe_label = "custom";
};

inline std::vector<int> weekday_range(const std::string& start, const std::string& end) {
    int s = parse_date(start), e = parse_date(end);
    std::vector<int> days;
    for (int d = s; d <= e; ++d)
        if (is_weekday(d)) days.push_back(d);
    return days;
}

inline std::vector<int> weekdays_from(const std::string& start, int count) {
    int d = parse_date(start);
    std::vector<int> days;
    while (static_cast<int>(days.size()) < count) {
        if (is_weekday(d)) days.push_back(d);
        ++d;
    }
    return days;
}

// Base panel (open/high/low/close/volume) on weekday dates.
inline marketdata::MarketPanel generate_panel(const SynthConfig& cfg) {
    if (cfg.symbols.empty()) throw std::runtime_error("synthetic universe has no symbols");
    std::vector<int> dates = cfg.num_days > 0 ? weekdays_from(cfg.start, cfg.num_days)
                                              : weekday_range(cfg.start, cfg.end);
    if (dates.empty()) throw std::runtime_error("synthetic date range is empty");

    const size_t T = dates.size(), N = cfg.symbols.size();
    marketdata::MarketPanel panel;
    panel.universe = cfg.universe_label;
    panel.dates = dates;
    panel.symbols = cfg.symbols;
    for (const char* f : {"open", "high", "low", "close", "volume"})
        panel.fields.emplace(f, Matrix(T, N, kNaN));

    Matrix& open = panel.fields["open"];
    Matrix& high = panel.fields["high"];
    Matrix& low = panel.fields["low"];
    Matrix& close = panel.fields["close"];
    Matrix& volume = panel.fields["volume"];

    for (size_t j = 0; j < N; ++j) {
        // Per-symbol stream: panel content for symbol j does not depend on
        // how many other symbols exist.
        Rng rng(derive_key(cfg.seed, j, "synthetic_symbol"));
        double drift = 0.0002 + cfg.momentum * rng.normal();
        double price = 20.0 + 180.0 * rng.next_double();
        double base_volume = 5e5 * std::exp(1.5 * rng.next_double());

        for (size_t t = 0; t < T; ++t) {
            double r = drift + cfg.daily_vol * rng.normal();
            r = std::max(r, -0.5);
            double prev = price;
            price = prev * (1.0 + r);
            double gap = 0.002 * rng.normal();
            double o = std::max(prev * (1.0 + gap), 0.01);
            double span1 = std::abs(0.004 * rng.normal());
            double span2 = std::abs(0.004 * rng.normal());
            double h = std::max(o, price) * (1.0 + span1);
            double l = std::min(o, price) * (1.0 - span2);
            l = std::max(l, 0.005);
            double v = std::floor(base_volume * std::exp(0.35 * rng.normal())) + 100.0;

            open(t, j) = o;
            high(t, j) = h;
            low(t, j) = l;
            close(t, j) = price;
            volume(t, j) = v;
        }
    }
    return panel;
}

// One <SYMBOL>.csv per symbol in `directory`, in the ingestion format.
// Values use shortest-round-trip formatting, so load_ohlcv reproduces the
// panel bit for bit.
inline void write_universe_csvs(const marketdata::MarketPanel& panel,
                                const std::string& directory) {
    std::filesystem::create_directories(directory);
    for (size_t j = 0; j < panel.cols(); ++j) {
        std::string path = directory + "/" + panel.symbols[j] + ".csv";
        std::ofstream out(path, std::ios::binary);
        if (!out) throw std::runtime_error("cannot write " + path);
        out << "date,open,high,low,close,volume\n";
        for (size_t t = 0; t < panel.rows(); ++t) {
            out << format_date(panel.dates[t]) << ","
                << repr_double(panel.field("open")(t, j)) << ","
                << repr_double(panel.field("high")(t, j)) << ","
                << repr_double(panel.field("low")(t, j)) << ","
                << repr_double(panel.field("close")(t, j)) << ","
                << repr_double(panel.field("volume")(t, j)) << "\n";
        }
        if (!out) throw std::runtime_error("failed writing " + path);
    }
}

}  // namespace alphaforge::synthetic
