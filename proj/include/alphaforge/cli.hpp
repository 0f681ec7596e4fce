#pragma once

// Command drivers behind the alphaforge binary: config envelope resolution
// with overrides, data loading, backend construction, and the ingest, run,
// batch, and analyze entry points. Kept in the library so the pieces are
// testable without spawning processes.

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <memory>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "alphaforge/agents.hpp"
#include "alphaforge/llm.hpp"
#include "alphaforge/marketdata.hpp"
#include "alphaforge/orchestrator.hpp"
#include "alphaforge/report.hpp"
#include "alphaforge/synthetic.hpp"
#include "alphaforge/util.hpp"

namespace alphaforge::cli {

// Full resolved configuration: the experiment itself plus the envelope keys
// that tell the tool where data, results, and session logs live.
struct CliConfig {
    orchestrator::ExperimentConfig experiment;
    std::string data;     // panel cache path; empty = generate synthetic data
    std::string out;      // results root; empty = "results"
    std::string session;  // session log for record/replay backends
    llm::LiveConfig live;
    synthetic::SynthConfig synth;
};

namespace detail {

inline const std::set<std::string>& experiment_keys() {
    static const std::set<std::string> keys = {
        "universe",  "structure", "num_agents",      "num_months",
        "iterations", "seed",     "backend",         "allocation",
        "kappa",     "metric",    "initial_capital", "expose_top3_alphas",
        "conversation_scorer"};
    return keys;
}

inline void require_keys(const nlohmann::json& obj, const std::set<std::string>& allowed,
                         const std::string& where) {
    for (const auto& [key, value] : obj.items())
        if (!allowed.count(key))
            throw std::invalid_argument("unknown config key '" + where + key + "'");
}

template <typename T>
void grab(const nlohmann::json& obj, const char* key, T& slot, const std::string& where) {
    if (!obj.contains(key)) return;
    try {
        slot = obj.at(key).get<T>();
    } catch (const std::exception&) {
        throw std::invalid_argument("config field '" + where + key +
                                    "' has the wrong type or value");
    }
}

}  // namespace detail

// Applies one "key=value" or "path.to.key=value" override onto the document.
// The value is parsed as JSON when possible (numbers, booleans, quoted
// strings, arrays) and taken as a plain string otherwise.
inline void apply_override(nlohmann::ordered_json& doc, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0)
        throw std::invalid_argument("override must look like key=value: " + assignment);
    const std::string path = assignment.substr(0, eq);
    const std::string raw = assignment.substr(eq + 1);

    nlohmann::ordered_json value;
    try {
        value = nlohmann::ordered_json::parse(raw);
    } catch (const std::exception&) {
        value = raw;
    }

    nlohmann::ordered_json* node = &doc;
    size_t begin = 0;
    for (;;) {
        const auto dot = path.find('.', begin);
        const std::string key = path.substr(begin, dot - begin);
        if (key.empty())
            throw std::invalid_argument("override has an empty key segment: " + assignment);
        if (dot == std::string::npos) {
            (*node)[key] = std::move(value);
            return;
        }
        if (!node->contains(key) || !(*node)[key].is_object())
            (*node)[key] = nlohmann::ordered_json::object();
        node = &(*node)[key];
        begin = dot + 1;
    }
}

// Resolves a config document (already override-patched) into a CliConfig.
// Unknown keys at any level are errors so typos cannot silently no-op.
inline CliConfig resolve_config(const nlohmann::ordered_json& doc) {
    if (!doc.is_object()) throw std::invalid_argument("config must be a JSON object");

    std::set<std::string> allowed = detail::experiment_keys();
    allowed.insert({"data", "out", "session", "live", "synth"});
    detail::require_keys(doc, allowed, "");

    CliConfig cfg;
    cfg.experiment = orchestrator::config_from_json(doc);
    detail::grab(doc, "data", cfg.data, "");
    detail::grab(doc, "out", cfg.out, "");
    detail::grab(doc, "session", cfg.session, "");

    if (doc.contains("live")) {
        const auto& live = doc.at("live");
        if (!live.is_object()) throw std::invalid_argument("config field 'live' must be an object");
        detail::require_keys(
            live, {"endpoint", "model", "api_key_env", "requests_per_minute", "max_attempts"},
            "live.");
        detail::grab(live, "endpoint", cfg.live.endpoint, "live.");
        detail::grab(live, "model", cfg.live.model, "live.");
        detail::grab(live, "api_key_env", cfg.live.api_key_env, "live.");
        detail::grab(live, "requests_per_minute", cfg.live.requests_per_minute, "live.");
        detail::grab(live, "max_attempts", cfg.live.max_attempts, "live.");
    }
    if (doc.contains("synth")) {
        const auto& synth = doc.at("synth");
        if (!synth.is_object())
            throw std::invalid_argument("config field 'synth' must be an object");
        detail::require_keys(
            synth, {"symbols", "start", "end", "num_days", "seed", "momentum", "daily_vol"},
            "synth.");
        detail::grab(synth, "symbols", cfg.synth.symbols, "synth.");
        detail::grab(synth, "start", cfg.synth.start, "synth.");
        detail::grab(synth, "end", cfg.synth.end, "synth.");
        detail::grab(synth, "num_days", cfg.synth.num_days, "synth.");
        detail::grab(synth, "seed", cfg.synth.seed, "synth.");
        detail::grab(synth, "momentum", cfg.synth.momentum, "synth.");
        detail::grab(synth, "daily_vol", cfg.synth.daily_vol, "synth.");
    }
    return cfg;
}

inline CliConfig resolve_config_file(const std::string& config_path,
                                     const std::vector<std::string>& overrides) {
    nlohmann::ordered_json doc = nlohmann::ordered_json::object();
    if (!config_path.empty()) {
        std::ifstream in(config_path, std::ios::binary);
        if (!in) throw std::invalid_argument("cannot open config file: " + config_path);
        try {
            doc = nlohmann::ordered_json::parse(in);
        } catch (const std::exception& e) {
            throw std::invalid_argument("config file " + config_path + " is not valid JSON: " +
                                        e.what());
        }
    }
    for (const auto& o : overrides) apply_override(doc, o);
    return resolve_config(doc);
}

// Normalized echo of everything that determined a run.
inline nlohmann::ordered_json effective_config_json(const CliConfig& cfg) {
    nlohmann::ordered_json j = orchestrator::config_to_json(cfg.experiment);
    j["data"] = cfg.data;
    j["out"] = cfg.out;
    j["session"] = cfg.session;
    if (cfg.experiment.backend == "live")
        j["live"] = {{"endpoint", cfg.live.endpoint},
                     {"model", cfg.live.model},
                     {"api_key_env", cfg.live.api_key_env},
                     {"requests_per_minute", cfg.live.requests_per_minute},
                     {"max_attempts", cfg.live.max_attempts}};
    if (cfg.data.empty())
        j["synth"] = {{"symbols", cfg.synth.symbols}, {"start", cfg.synth.start},
                      {"end", cfg.synth.end},         {"num_days", cfg.synth.num_days},
                      {"seed", cfg.synth.seed},       {"momentum", cfg.synth.momentum},
                      {"daily_vol", cfg.synth.daily_vol}};
    return j;
}

// Panel for a run: the cached panel named by `data`, or a synthetic panel
// labeled with the experiment's universe. Derived fields are added if the
// cache holds only raw OHLCV.
inline marketdata::MarketPanel load_data(const CliConfig& cfg) {
    if (!cfg.data.empty()) {
        auto panel = marketdata::load_panel(cfg.data);
        if (!panel.has_field("returns") || !panel.has_field("volatility_20"))
            panel = marketdata::derive_fields(panel);
        return panel;
    }
    auto synth = cfg.synth;
    synth.universe_label = cfg.experiment.universe;
    return marketdata::derive_fields(synthetic::generate_panel(synth));
}

namespace detail {

// Hands a shared backend to every iteration (live and replay sessions are
// process-wide; only the stub is per-iteration seeded).
class SharedBackend : public llm::Backend {
  public:
    explicit SharedBackend(std::shared_ptr<llm::Backend> inner) : inner_(std::move(inner)) {}
    std::string complete(const llm::CompletionRequest& req) override {
        return inner_->complete(req);
    }
    std::string name() const override { return inner_->name(); }

  private:
    std::shared_ptr<llm::Backend> inner_;
};

}  // namespace detail

inline orchestrator::BackendFactory make_backend_factory(const CliConfig& cfg) {
    const std::string& kind = cfg.experiment.backend;
    if (kind == "stub") {
        if (cfg.session.empty()) return orchestrator::stub_backend_factory();
        const std::string path = cfg.session;
        return [path](uint64_t seed) -> std::unique_ptr<llm::Backend> {
            return std::make_unique<llm::RecordingBackend>(
                std::make_shared<llm::StubBackend>(seed), path);
        };
    }
    if (kind == "replay") {
        if (cfg.session.empty())
            throw std::invalid_argument("replay backend requires a session path (--session)");
        auto shared = std::make_shared<llm::ReplayBackend>(cfg.session);
        return [shared](uint64_t) -> std::unique_ptr<llm::Backend> {
            return std::make_unique<detail::SharedBackend>(shared);
        };
    }
    std::shared_ptr<llm::Backend> live = std::make_shared<llm::LiveBackend>(cfg.live);
    if (!cfg.session.empty())
        live = std::make_shared<llm::RecordingBackend>(live, cfg.session);
    return [live](uint64_t) -> std::unique_ptr<llm::Backend> {
        return std::make_unique<detail::SharedBackend>(live);
    };
}

// ---------------------------------------------------------------------------
// Commands

inline int ingest_command(const std::string& data_dir, const std::string& universe,
                          const std::vector<std::string>& symbols, const std::string& start,
                          const std::string& end, const std::string& cache_path,
                          std::ostream& out) {
    marketdata::UniverseSpec spec;
    if (universe == "custom") {
        if (symbols.empty())
            throw std::invalid_argument("custom universe requires --symbols");
        spec.name = universe;
        spec.symbols = symbols;
        spec.start = start.empty() ? "2024-01-01" : start;
        spec.end = end.empty() ? "2025-09-30" : end;
    } else {
        spec = marketdata::builtin_universe(universe);
        if (!start.empty()) spec.start = start;
        if (!end.empty()) spec.end = end;
    }

    auto panel = marketdata::derive_fields(marketdata::load_ohlcv(data_dir, spec));
    marketdata::save_panel(panel, cache_path);

    out << "universe: " << panel.universe << "\n";
    out << "symbols:  " << join(panel.symbols, " ") << "\n";
    out << "dates:    " << panel.rows() << " (" << panel.date_str(0) << " .. "
        << panel.date_str(panel.rows() - 1) << ")\n";
    size_t total_nan = 0;
    std::ostringstream nan_fields;
    for (const auto& name : marketdata::field_order()) {
        if (!panel.has_field(name)) continue;
        const auto& m = panel.field(name);
        size_t count = 0;
        for (double v : m.data())
            if (is_nan(v)) ++count;
        total_nan += count;
        if (count > 0) nan_fields << "  " << name << ": " << count << "\n";
    }
    out << "nan cells: " << total_nan << "\n" << nan_fields.str();
    out << "cache:    " << cache_path << "\n";
    return 0;
}

// Shared driver behind `run` (single iteration) and `batch` (full sweep).
inline int run_command(CliConfig cfg, bool single_run, int jobs, std::ostream& out) {
    if (single_run) cfg.experiment.iterations = 1;
    if (cfg.out.empty()) cfg.out = "results";
    if (jobs < 1) jobs = 1;

    const bool recording = !cfg.session.empty() && cfg.experiment.backend != "replay";
    if (recording && jobs > 1) {
        out << "note: session recording is single-writer; forcing --jobs 1\n";
        jobs = 1;
    }

    auto panel = load_data(cfg);
    auto factory = make_backend_factory(cfg);

    const std::string config_dir =
        cfg.out + "/" + cfg.experiment.universe + "/" +
        agents::structure_name(cfg.experiment.structure);
    std::filesystem::create_directories(config_dir);
    {
        std::ofstream echo(config_dir + "/config.json", std::ios::binary);
        if (!echo) throw std::runtime_error("cannot write " + config_dir + "/config.json");
        echo << effective_config_json(cfg).dump(2) << "\n";
    }

    auto batch = orchestrator::run_batch(cfg.experiment, panel, factory, jobs, cfg.out);

    for (int k = 1; k <= cfg.experiment.iterations; ++k) {
        const auto& slot = batch.results[static_cast<size_t>(k - 1)];
        if (!slot) continue;
        out << "iter " << k << " (seed " << orchestrator::iteration_seed(cfg.experiment.seed, k)
            << "): return " << format_fixed(slot->pooled.period_return * 100.0, 2)
            << "%, sharpe " << format_fixed(slot->pooled.sharpe, 3) << " -> "
            << orchestrator::iteration_dir(cfg.out, cfg.experiment, k) << "\n";
    }
    if (!batch.failures.empty()) {
        out << "failed iterations:\n";
        for (const auto& f : batch.failures)
            out << "  iter " << f.iteration << " (seed " << f.seed << "): " << f.error << "\n";
        return 1;
    }
    return 0;
}

namespace detail {

inline std::string cell(double mean, double lo, double hi) {
    if (is_nan(mean)) return "n/a";
    std::string s = format_fixed(mean, 4);
    if (!is_nan(lo) && !is_nan(hi)) s += " +/- " + format_fixed((hi - lo) / 2.0, 4);
    return s;
}

inline void print_metric_grid(const std::string& title,
                              const std::vector<analytics::ConfigStats>& rows,
                              std::ostream& out) {
    std::vector<std::string> universes, structures;
    for (const auto& r : rows) {
        if (std::find(universes.begin(), universes.end(), r.universe) == universes.end())
            universes.push_back(r.universe);
        if (std::find(structures.begin(), structures.end(), r.structure) == structures.end())
            structures.push_back(r.structure);
    }
    out << title << "\n";
    out << std::left << std::setw(28) << "structure";
    for (const auto& u : universes) out << std::setw(22) << u;
    out << "\n";
    for (const auto& st : structures) {
        out << std::left << std::setw(28) << st;
        for (const auto& u : universes) {
            std::string text = "-";
            for (const auto& r : rows)
                if (r.structure == st && r.universe == u) text = cell(r.mean, r.ci_low, r.ci_high);
            out << std::setw(22) << text;
        }
        out << "\n";
    }
    out << "\n";
}

}  // namespace detail

inline int analyze_command(const std::string& results_dir, std::string report_dir, uint64_t seed,
                           std::ostream& out) {
    if (report_dir.empty()) report_dir = results_dir + "/report";
    auto bundle = report::emit_report(results_dir, report_dir, seed);

    out << "iterations loaded: " << bundle.records.size() << "\n\n";
    detail::print_metric_grid("total return (mean +/- 95% CI half-width)", bundle.returns_table,
                              out);
    detail::print_metric_grid("sharpe ratio (mean +/- 95% CI half-width)", bundle.sharpe_table,
                              out);

    out << "correlation evolution (initial -> final)\n";
    for (const auto& r : bundle.evolution)
        out << "  " << r.universe << "/" << r.structure << ": " << format_fixed(r.initial, 3)
            << " -> " << format_fixed(r.final_, 3) << " (change "
            << format_fixed(r.change, 3) << ", n=" << r.n << (r.low_n ? ", low-n" : "") << ")\n";

    if (!bundle.anova.empty()) {
        out << "\nanova by universe\n";
        for (const auto& a : bundle.anova)
            out << "  " << a.universe << " [" << a.metric << "]: F(" << a.result.df_between
                << "," << a.result.df_within << ") = " << format_fixed(a.result.f, 3)
                << ", p = " << format_fixed(a.result.p, 4) << "\n";
    }
    if (!bundle.quality.empty()) {
        out << "\nconversation quality\n";
        for (const auto& q : bundle.quality)
            out << "  " << q.universe << "/" << q.structure << " [" << q.scorer
                << "]: mean " << format_fixed(q.mean, 4) << ", " << format_fixed(q.initial, 4)
                << " -> " << format_fixed(q.final_, 4) << " (n=" << q.n << ")\n";
    }
    out << "\nreport files written to " << report_dir << "\n";
    return 0;
}

}  // namespace alphaforge::cli
