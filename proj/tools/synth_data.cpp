// Synthetic OHLCV generator: writes per-symbol CSVs and/or a panel cache for
// experiments that do not use downloaded market data.

#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "alphaforge/marketdata.hpp"
#include "alphaforge/synthetic.hpp"

namespace af = alphaforge;

int main(int argc, char** argv) {
    CLI::App app{"alphaforge-synth: synthetic market data generator"};

    af::synthetic::SynthConfig cfg;
    std::string csv_dir, cache_path;
    app.add_option("--symbols", cfg.symbols, "Symbol names")->delimiter(',');
    app.add_option("--start", cfg.start, "First date, YYYY-MM-DD");
    app.add_option("--end", cfg.end, "Last date, YYYY-MM-DD (ignored with --days)");
    app.add_option("--days", cfg.num_days, "Number of weekdays from --start");
    app.add_option("--seed", cfg.seed, "Generator seed");
    app.add_option("--momentum", cfg.momentum, "Std of persistent per-symbol daily drift");
    app.add_option("--daily-vol", cfg.daily_vol, "Idiosyncratic daily return volatility");
    app.add_option("--label", cfg.universe_label, "Universe label stored in the panel");
    app.add_option("--csv-dir", csv_dir, "Directory for per-symbol OHLCV CSVs");
    app.add_option("--cache", cache_path, "Panel cache file (with derived fields)");

    CLI11_PARSE(app, argc, argv);

    if (csv_dir.empty() && cache_path.empty()) {
        std::cerr << "error: need --csv-dir and/or --cache\n";
        return 2;
    }

    try {
        auto panel = af::synthetic::generate_panel(cfg);
        if (!csv_dir.empty()) {
            af::synthetic::write_universe_csvs(panel, csv_dir);
            std::cout << "csv:   " << csv_dir << "/<symbol>.csv x " << panel.cols() << "\n";
        }
        if (!cache_path.empty()) {
            af::marketdata::save_panel(af::marketdata::derive_fields(panel), cache_path);
            std::cout << "cache: " << cache_path << "\n";
        }
        std::cout << "label: " << panel.universe << "\n"
                  << "dates: " << panel.rows() << " (" << panel.date_str(0) << " .. "
                  << panel.date_str(panel.rows() - 1) << ")\n";
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
