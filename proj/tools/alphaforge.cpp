// alphaforge command line front end.

#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "alphaforge/cli.hpp"
#include "alphaforge/expr.hpp"

namespace af = alphaforge;

static int cmd_validate_expr(const std::string& text, bool as_json) {
    auto result = af::expr::parse(text);
    if (af::expr::is_error(result)) {
        const auto& err = af::expr::get_error(result);
        if (as_json) {
            nlohmann::ordered_json j = {{"ok", false}, {"error", err.to_json()}};
            std::cout << j.dump(2) << "\n";
        } else {
            std::cout << "invalid: [" << af::expr::error_class_name(err.cls) << "] "
                      << err.message << " (chars " << err.span_start << ".." << err.span_end
                      << ")\n"
                      << "hint: " << err.guidance << "\n";
        }
        return 1;
    }
    const auto& e = af::expr::get_expr(result);
    auto problems = af::expr::validate(e);
    if (!problems.empty()) {
        if (as_json) {
            nlohmann::ordered_json errs = nlohmann::ordered_json::array();
            for (const auto& p : problems) errs.push_back(p.to_json());
            nlohmann::ordered_json j = {{"ok", false}, {"errors", errs}};
            std::cout << j.dump(2) << "\n";
        } else {
            for (const auto& p : problems)
                std::cout << "invalid: [" << af::expr::error_class_name(p.cls) << "] "
                          << p.message << "\n";
        }
        return 1;
    }
    std::string canon = af::expr::format(e);
    if (as_json) {
        nlohmann::ordered_json fields = nlohmann::ordered_json::array();
        for (const auto& f : af::expr::free_fields(e)) fields.push_back(f);
        nlohmann::ordered_json j = {{"ok", true}, {"canonical", canon}, {"fields", fields}};
        std::cout << j.dump(2) << "\n";
    } else {
        std::cout << "ok: " << canon << "\n";
    }
    return 0;
}

int main(int argc, char** argv) {
    CLI::App app{"alphaforge: formulaic alpha laboratory"};
    app.require_subcommand(1);

    auto* ingest = app.add_subcommand("ingest", "Build and cache a market panel from OHLCV CSVs");
    std::string ingest_dir, ingest_universe = "custom", ingest_start, ingest_end, ingest_cache;
    std::vector<std::string> ingest_symbols;
    ingest->add_option("--data-dir", ingest_dir, "Directory holding <SYMBOL>.csv files")
        ->required();
    ingest->add_option("--universe", ingest_universe,
                       "general | technology | finance | custom");
    ingest->add_option("--symbols", ingest_symbols, "Symbols for a custom universe")
        ->delimiter(',');
    ingest->add_option("--start", ingest_start, "First date, YYYY-MM-DD");
    ingest->add_option("--end", ingest_end, "Last date, YYYY-MM-DD");
    ingest->add_option("--out", ingest_cache, "Panel cache file to write")->required();

    // run and batch share every flag; run forces a single iteration.
    std::string config_path, out_dir, session_path, backend;
    std::vector<std::string> overrides;
    int jobs = 1;
    uint64_t seed = 0;
    bool seed_set = false, backend_set = false;
    auto add_run_flags = [&](CLI::App* cmd) {
        cmd->add_option("--config", config_path, "JSON config file");
        cmd->add_option("--override,-O", overrides, "key=value config override (repeatable)");
        cmd->add_option("--out", out_dir, "Results root directory");
        cmd->add_option("--jobs", jobs, "Parallel iterations")->check(CLI::PositiveNumber);
        cmd->add_option("--seed", seed, "Master seed override")
            ->each([&](const std::string&) { seed_set = true; });
        cmd->add_option("--backend", backend, "stub | live | replay")
            ->each([&](const std::string&) { backend_set = true; });
        cmd->add_option("--session", session_path, "Session log to record into or replay from");
    };
    auto* run = app.add_subcommand("run", "Run a single experiment iteration");
    add_run_flags(run);
    auto* batch = app.add_subcommand("batch", "Run the configured iteration sweep");
    add_run_flags(batch);

    std::string results_dir, report_dir;
    uint64_t report_seed = 0;
    auto add_report_flags = [&](CLI::App* cmd) {
        cmd->add_option("--results", results_dir, "Results root directory")->required();
        cmd->add_option("--out", report_dir, "Report output directory (default <results>/report)");
        cmd->add_option("--seed", report_seed, "Bootstrap seed");
    };
    auto* analyze = app.add_subcommand("analyze", "Aggregate results and emit report tables");
    add_report_flags(analyze);
    auto* report_cmd = app.add_subcommand("report", "Alias of analyze");
    add_report_flags(report_cmd);

    auto* validate = app.add_subcommand("validate-expr", "Parse and validate one alpha expression");
    std::string expr_text;
    bool expr_json = false;
    validate->add_option("expression", expr_text, "Expression text")->required();
    validate->add_flag("--json", expr_json, "Emit machine-readable JSON");

    CLI11_PARSE(app, argc, argv);

    try {
        if (ingest->parsed())
            return af::cli::ingest_command(ingest_dir, ingest_universe, ingest_symbols,
                                           ingest_start, ingest_end, ingest_cache, std::cout);
        if (run->parsed() || batch->parsed()) {
            auto cfg = af::cli::resolve_config_file(config_path, overrides);
            if (!out_dir.empty()) cfg.out = out_dir;
            if (!session_path.empty()) cfg.session = session_path;
            if (seed_set) cfg.experiment.seed = seed;
            if (backend_set) {
                cfg.experiment.backend = backend;
                cfg.experiment.validate();
            }
            return af::cli::run_command(std::move(cfg), run->parsed(), jobs, std::cout);
        }
        if (analyze->parsed() || report_cmd->parsed())
            return af::cli::analyze_command(results_dir, report_dir, report_seed, std::cout);
        if (validate->parsed()) return cmd_validate_expr(expr_text, expr_json);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
