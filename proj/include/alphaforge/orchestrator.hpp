#pragma once

// Monthly experiment loop for one organizational structure: conversation,
// alpha generation, month backtest, ranking, and softmax capital
// reallocation. Batches run iterations independently and write one results
// directory per iteration.

#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "alphaforge/agents.hpp"
#include "alphaforge/analytics.hpp"
#include "alphaforge/backtest.hpp"
#include "alphaforge/eval.hpp"
#include "alphaforge/llm.hpp"
#include "alphaforge/marketdata.hpp"
#include "alphaforge/rng.hpp"
#include "alphaforge/transcript_scoring.hpp"
#include "alphaforge/util.hpp"

namespace alphaforge::orchestrator {

constexpr size_t kWarmupDays = 50;  // covers the largest library window

// ---------------------------------------------------------------------------
// Config

struct ExperimentConfig {
    std::string universe = "synthetic";
    agents::Structure structure = agents::Structure::Baseline;
    int num_agents = 5;
    int num_months = 21;
    int iterations = 30;
    uint64_t seed = 42;  // master seed; per-iteration seeds derive from it
    std::string backend = "stub";  // stub | live | replay
    backtest::AllocationMode allocation = backtest::AllocationMode::LongOnly;
    double kappa = 10.0;           // reallocation sharpness
    std::string metric = "return";  // return | sharpe
    double initial_capital = 1'000'000.0;
    std::optional<bool> expose_top3_alphas;  // overrides the structure default
    std::string conversation_scorer;         // optional transcript scorer name

    void validate() const {
        if (num_agents < 2) throw std::invalid_argument("num_agents must be >= 2");
        if (num_months < 2) throw std::invalid_argument("num_months must be >= 2");
        if (iterations < 1) throw std::invalid_argument("iterations must be >= 1");
        if (metric != "return" && metric != "sharpe")
            throw std::invalid_argument("metric must be 'return' or 'sharpe'");
        if (backend != "stub" && backend != "live" && backend != "replay")
            throw std::invalid_argument("backend must be stub, live, or replay");
        if (!(kappa >= 0)) throw std::invalid_argument("kappa must be >= 0");
        if (!(initial_capital > 0))
            throw std::invalid_argument("initial_capital must be > 0");
        if (!conversation_scorer.empty() &&
            !transcript_scoring::scorer_registry().count(conversation_scorer))
            throw std::invalid_argument("unknown conversation scorer: " + conversation_scorer);
    }

    agents::StructureTraits traits() const {
        auto t = agents::structure_traits(structure);
        if (expose_top3_alphas) t.expose_top3_alphas = *expose_top3_alphas;
        return t;
    }

    std::string metric_label() const {
        return metric == "sharpe" ? "Sharpe ratio" : "monthly return";
    }
};

inline nlohmann::ordered_json config_to_json(const ExperimentConfig& c) {
    nlohmann::ordered_json j = {
        {"universe", c.universe},
        {"structure", agents::structure_name(c.structure)},
        {"num_agents", c.num_agents},
        {"num_months", c.num_months},
        {"iterations", c.iterations},
        {"seed", c.seed},
        {"backend", c.backend},
        {"allocation", c.allocation == backtest::AllocationMode::LongOnly ? "long_only"
                                                                          : "dollar_neutral"},
        {"kappa", c.kappa},
        {"metric", c.metric},
        {"initial_capital", c.initial_capital},
        {"conversation_scorer", c.conversation_scorer},
    };
    if (c.expose_top3_alphas) j["expose_top3_alphas"] = *c.expose_top3_alphas;
    return j;
}

// Reads the experiment fields from a flat JSON object. Wrong types surface as
// errors naming the field; absent fields keep their defaults.
inline ExperimentConfig config_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw std::invalid_argument("config must be a JSON object");
    ExperimentConfig c;
    auto grab = [&](const char* key, auto& slot, auto convert) {
        if (!j.contains(key)) return;
        try {
            slot = convert(j.at(key));
        } catch (const std::exception&) {
            throw std::invalid_argument(std::string("config field '") + key +
                                        "' has the wrong type or value");
        }
    };
    grab("universe", c.universe, [](const nlohmann::json& v) { return v.get<std::string>(); });
    grab("structure", c.structure, [](const nlohmann::json& v) {
        return agents::structure_from(v.get<std::string>());
    });
    grab("num_agents", c.num_agents, [](const nlohmann::json& v) { return v.get<int>(); });
    grab("num_months", c.num_months, [](const nlohmann::json& v) { return v.get<int>(); });
    grab("iterations", c.iterations, [](const nlohmann::json& v) { return v.get<int>(); });
    grab("seed", c.seed, [](const nlohmann::json& v) { return v.get<uint64_t>(); });
    grab("backend", c.backend, [](const nlohmann::json& v) { return v.get<std::string>(); });
    grab("allocation", c.allocation, [](const nlohmann::json& v) {
        return backtest::allocation_mode_from(v.get<std::string>());
    });
    grab("kappa", c.kappa, [](const nlohmann::json& v) { return v.get<double>(); });
    grab("metric", c.metric, [](const nlohmann::json& v) { return v.get<std::string>(); });
    grab("initial_capital", c.initial_capital,
         [](const nlohmann::json& v) { return v.get<double>(); });
    grab("conversation_scorer", c.conversation_scorer,
         [](const nlohmann::json& v) { return v.get<std::string>(); });
    if (j.contains("expose_top3_alphas")) {
        if (!j.at("expose_top3_alphas").is_boolean())
            throw std::invalid_argument(
                "config field 'expose_top3_alphas' has the wrong type or value");
        c.expose_top3_alphas = j.at("expose_top3_alphas").get<bool>();
    }
    c.validate();
    return c;
}

// ---------------------------------------------------------------------------
// Capital reallocation

// Each agent's capital first compounds by its own return; the pooled total is
// then redistributed by softmax weights exp(kappa * r_i) / sum_j exp(...).
inline std::vector<double> reallocate_capital(const std::vector<double>& capitals,
                                              const std::vector<double>& returns,
                                              double kappa) {
    if (capitals.size() != returns.size() || capitals.empty())
        throw std::invalid_argument("capitals and returns must align and be non-empty");
    double total = 0;
    for (size_t i = 0; i < capitals.size(); ++i) {
        if (!(capitals[i] > 0)) throw std::invalid_argument("capitals must be positive");
        total += capitals[i] * (1.0 + returns[i]);
    }
    double m = -std::numeric_limits<double>::infinity();
    for (double r : returns) m = std::max(m, kappa * r);
    double wsum = 0;
    std::vector<double> w(returns.size());
    for (size_t i = 0; i < returns.size(); ++i) {
        w[i] = std::exp(kappa * returns[i] - m);
        wsum += w[i];
    }
    std::vector<double> out(returns.size());
    for (size_t i = 0; i < returns.size(); ++i) out[i] = total * w[i] / wsum;
    return out;
}

// ---------------------------------------------------------------------------
// Month scheduling

// Calendar months over trading dates, starting at the first month with a full
// warm-up of prior trading days, truncated to num_months.
inline std::vector<marketdata::MonthSlice> scheduled_slices(
    const marketdata::MarketPanel& panel, int num_months, size_t warmup = kWarmupDays) {
    std::vector<marketdata::MonthSlice> out;
    for (const auto& s : marketdata::month_slices(panel))
        if (s.first_row >= warmup) out.push_back(s);
    if (out.size() < static_cast<size_t>(num_months))
        throw std::runtime_error("panel supports only " + std::to_string(out.size()) +
                                 " months after the " + std::to_string(warmup) +
                                 "-day warm-up; " + std::to_string(num_months) + " requested");
    out.resize(static_cast<size_t>(num_months));
    return out;
}

// Market summary for prompts: 20-day returns and volatility as of the last
// trading day before the month, so generation sees no intra-month data.
inline agents::PromptContext market_context(const marketdata::MarketPanel& panel,
                                            size_t month_begin) {
    if (month_begin < 21)
        throw std::invalid_argument("market context needs 21 days of history");
    const size_t info = month_begin - 1;
    const Matrix& close = panel.field("close");
    const Matrix& vol20 = panel.field("volatility_20");

    agents::PromptContext ctx;
    ctx.date = panel.date_str(month_begin);
    ctx.symbols = panel.symbols;
    double r_sum = 0, v_sum = 0;
    size_t r_n = 0, v_n = 0;
    double best = -std::numeric_limits<double>::infinity();
    double worst = std::numeric_limits<double>::infinity();
    for (size_t j = 0; j < panel.cols(); ++j) {
        const double now = close(info, j), then = close(info - 20, j);
        if (std::isfinite(now) && std::isfinite(then) && then != 0) {
            const double r20 = now / then - 1.0;
            r_sum += r20;
            ++r_n;
            if (r20 > best) {
                best = r20;
                ctx.best_stock = panel.symbols[j];
            }
            if (r20 < worst) {
                worst = r20;
                ctx.worst_stock = panel.symbols[j];
            }
        }
        const double v = vol20(info, j);
        if (std::isfinite(v)) {
            v_sum += v;
            ++v_n;
        }
    }
    if (r_n == 0) throw std::runtime_error("no finite closes for the market summary");
    ctx.avg_return = r_sum / static_cast<double>(r_n);
    ctx.avg_vol = v_n ? v_sum / static_cast<double>(v_n) : 0.0;
    ctx.best_return = best;
    ctx.worst_return = worst;
    return ctx;
}

// ---------------------------------------------------------------------------
// Monthly outcome

struct AgentMonth {
    int agent_id = 0;
    std::string expression;
    int attempts = 0;
    bool fallback = false;
    backtest::PerformanceRecord record;
    int rank = 0;  // 1 = best
    double capital_before = 0;
    double capital_after = 0;
    Matrix allocations;  // month rows x symbols
};

struct MonthlyOutcome {
    int month_index = 0;  // 1-based
    std::string tag;      // "YYYY-MM"
    std::vector<AgentMonth> agents;
    std::optional<agents::ConversationTranscript> transcript;
    double mean_pairwise_correlation = kNaN;
};

namespace detail {

inline double metric_value(const backtest::PerformanceRecord& rec, const std::string& metric) {
    const double v = metric == "sharpe" ? rec.sharpe : rec.period_return;
    return std::isnan(v) ? -std::numeric_limits<double>::infinity() : v;
}

inline Matrix slice_rows(const Matrix& m, size_t first, size_t last) {
    Matrix out(last - first + 1, m.cols(), 0.0);
    for (size_t t = first; t <= last; ++t)
        for (size_t j = 0; j < m.cols(); ++j) out(t - first, j) = m(t, j);
    return out;
}

}  // namespace detail

// One month of the experiment: (1) market summary, (2) conversation and
// takeaways when the structure has one, (3) generation per agent, (4-5)
// evaluation and month-restricted backtest, (6) ranking, (7) reallocation.
// States update only after every agent's prompts were built from pre-month
// state.
inline MonthlyOutcome run_month(const ExperimentConfig& cfg,
                                const marketdata::MarketPanel& panel,
                                const std::vector<marketdata::MonthSlice>& schedule,
                                int month_index, std::vector<agents::AgentState>& states,
                                llm::Backend& backend) {
    const auto& slice = schedule.at(static_cast<size_t>(month_index - 1));
    const auto traits = cfg.traits();

    MonthlyOutcome out;
    out.month_index = month_index;
    out.tag = slice.key;

    agents::PromptContext base_ctx = market_context(panel, slice.first_row);

    if (traits.conversation) {
        out.transcript = agents::run_conversation(states, traits, month_index, backend);
        for (auto& st : states) agents::extract_takeaways(st, *out.transcript, slice.key, backend);
    }

    std::vector<Matrix> month_allocs;
    for (auto& st : states) {
        agents::PromptContext ctx = base_ctx;
        if (traits.competition_block && month_index > 1)
            ctx.competition = agents::make_competition_context(
                states, st.id, cfg.metric_label(), traits.expose_top3_alphas);

        auto gen = agents::generate_alpha(st, ctx, backend);
        auto signal = eval::evaluate(gen.alpha, panel);
        auto alloc = backtest::signal_to_allocations(signal, cfg.allocation);
        // The full-panel daily series already applies the one-day lag, so the
        // month's first day trades on weights from the prior day.
        auto daily = backtest::portfolio_returns(alloc, panel);
        std::vector<double> month_daily(daily.begin() + static_cast<long>(slice.first_row),
                                        daily.begin() + static_cast<long>(slice.last_row) + 1);

        AgentMonth am;
        am.agent_id = st.id;
        am.expression = gen.text;
        am.attempts = gen.attempts;
        am.fallback = gen.fallback;
        am.record = backtest::compute_metrics(month_daily);
        am.capital_before = st.capital;
        am.allocations = detail::slice_rows(alloc.weights, slice.first_row, slice.last_row);
        month_allocs.push_back(am.allocations);
        out.agents.push_back(std::move(am));
    }

    out.mean_pairwise_correlation =
        analytics::pairwise_allocation_correlation(month_allocs).mean;

    // rank by the configured metric, ties broken by agent id for determinism
    std::vector<size_t> order(out.agents.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
        const double va = detail::metric_value(out.agents[a].record, cfg.metric);
        const double vb = detail::metric_value(out.agents[b].record, cfg.metric);
        if (va != vb) return va > vb;
        return out.agents[a].agent_id < out.agents[b].agent_id;
    });
    for (size_t pos = 0; pos < order.size(); ++pos)
        out.agents[order[pos]].rank = static_cast<int>(pos + 1);

    std::vector<double> capitals, returns;
    for (const auto& am : out.agents) {
        capitals.push_back(am.capital_before);
        returns.push_back(am.record.period_return);
    }
    auto new_capitals = reallocate_capital(capitals, returns, cfg.kappa);

    for (size_t i = 0; i < states.size(); ++i) {
        auto& st = states[i];
        auto& am = out.agents[i];
        am.capital_after = new_capitals[i];
        st.capital = new_capitals[i];
        st.last_alpha = am.expression;
        st.last_rank = am.rank;
        st.last_fallback = am.fallback;
        st.history.push_back(am.record);
    }
    return out;
}

// Spec-shaped convenience overload; recomputes the schedule.
inline MonthlyOutcome run_month(const ExperimentConfig& cfg,
                                const marketdata::MarketPanel& panel, int month_index,
                                std::vector<agents::AgentState>& states,
                                llm::Backend& backend) {
    return run_month(cfg, panel, scheduled_slices(panel, cfg.num_months), month_index, states,
                     backend);
}

// ---------------------------------------------------------------------------
// Experiment and batch

struct ExperimentResult {
    int iteration = 0;
    uint64_t iteration_seed = 0;
    std::vector<MonthlyOutcome> months;
    backtest::PerformanceRecord pooled;  // capital-weighted across agents
    std::vector<double> mean_correlation_by_month;
    std::vector<double> final_capitals;
};

inline uint64_t iteration_seed(uint64_t master_seed, int iteration) {
    return derive_key(master_seed, static_cast<uint64_t>(iteration), "iteration");
}

inline void require_derived(const marketdata::MarketPanel& panel) {
    if (!panel.has_field("returns") || !panel.has_field("volatility_20"))
        throw std::invalid_argument("panel is missing derived fields; run derive_fields first");
}

inline ExperimentResult run_experiment(const ExperimentConfig& cfg,
                                       const marketdata::MarketPanel& panel, int iteration,
                                       llm::Backend& backend) {
    cfg.validate();
    require_derived(panel);
    const auto schedule = scheduled_slices(panel, cfg.num_months);

    std::vector<agents::AgentState> states;
    for (int i = 1; i <= cfg.num_agents; ++i) {
        agents::AgentState st;
        st.id = i;
        st.capital = cfg.initial_capital;
        states.push_back(std::move(st));
    }

    ExperimentResult result;
    result.iteration = iteration;
    result.iteration_seed = iteration_seed(cfg.seed, iteration);

    std::vector<double> pooled_daily;
    for (int m = 1; m <= cfg.num_months; ++m) {
        auto outcome = run_month(cfg, panel, schedule, m, states, backend);

        double total = 0;
        for (const auto& am : outcome.agents) total += am.capital_before;
        const size_t days = outcome.agents.front().record.daily.size();
        for (size_t t = 0; t < days; ++t) {
            double r = 0;
            for (const auto& am : outcome.agents)
                r += (am.capital_before / total) * am.record.daily[t];
            pooled_daily.push_back(r);
        }

        result.mean_correlation_by_month.push_back(outcome.mean_pairwise_correlation);
        result.months.push_back(std::move(outcome));
    }
    result.pooled = backtest::compute_metrics(pooled_daily);
    for (const auto& st : states) result.final_capitals.push_back(st.capital);
    return result;
}

using BackendFactory = std::function<std::unique_ptr<llm::Backend>(uint64_t seed)>;

inline BackendFactory stub_backend_factory() {
    return [](uint64_t seed) { return std::make_unique<llm::StubBackend>(seed); };
}

// ---------------------------------------------------------------------------
// Results directory writer

inline std::string iteration_dir(const std::string& base, const ExperimentConfig& cfg,
                                 int iteration) {
    return base + "/" + cfg.universe + "/" + agents::structure_name(cfg.structure) + "/iter_" +
           std::to_string(iteration);
}

inline void write_results(const std::string& dir, const ExperimentConfig& cfg,
                          const ExperimentResult& result) {
    std::filesystem::create_directories(dir);

    {
        std::ofstream out(dir + "/metrics.csv", std::ios::binary);
        out << "month,tag,agent,return,sharpe,volatility,rank,capital_before,capital_after,"
               "attempts,fallback\n";
        for (const auto& mo : result.months)
            for (const auto& am : mo.agents)
                out << mo.month_index << ',' << mo.tag << ',' << am.agent_id << ','
                    << repr_double(am.record.period_return) << ','
                    << repr_double(am.record.sharpe) << ','
                    << repr_double(am.record.volatility) << ',' << am.rank << ','
                    << repr_double(am.capital_before) << ',' << repr_double(am.capital_after)
                    << ',' << am.attempts << ',' << (am.fallback ? 1 : 0) << '\n';
    }
    {
        std::ofstream out(dir + "/expressions.txt", std::ios::binary);
        for (const auto& mo : result.months)
            for (const auto& am : mo.agents)
                out << mo.month_index << '\t' << am.agent_id << '\t' << am.expression << '\n';
    }
    {
        std::ofstream out(dir + "/transcripts.jsonl", std::ios::binary);
        for (const auto& mo : result.months)
            if (mo.transcript) out << agents::transcript_to_jsonl(*mo.transcript);
    }
    {
        std::ofstream out(dir + "/correlations.csv", std::ios::binary);
        out << "month,tag,mean_pairwise_correlation\n";
        for (const auto& mo : result.months)
            out << mo.month_index << ',' << mo.tag << ','
                << repr_double(mo.mean_pairwise_correlation) << '\n';
    }
    if (!cfg.conversation_scorer.empty()) {
        std::ofstream out(dir + "/scores.csv", std::ios::binary);
        out << "month,tag,scorer,score\n";
        for (const auto& mo : result.months) {
            if (!mo.transcript) continue;
            try {
                auto s = transcript_scoring::score_transcript(cfg.conversation_scorer,
                                                              *mo.transcript);
                out << mo.month_index << ',' << mo.tag << ',' << s.scorer << ','
                    << repr_double(s.score) << '\n';
            } catch (const std::exception&) {
                // unscoreable transcript (e.g. no contribution text); leave a gap
            }
        }
    }
    {
        nlohmann::ordered_json summary = {
            {"config", config_to_json(cfg)},
            {"iteration", result.iteration},
            {"iteration_seed", result.iteration_seed},
            {"expose_top3_alphas", cfg.traits().expose_top3_alphas},
            {"months", result.months.size()},
            {"pooled",
             {{"return", result.pooled.period_return},
              {"sharpe", result.pooled.sharpe},
              {"volatility", result.pooled.volatility}}},
            {"final_capitals", result.final_capitals},
        };
        std::ofstream out(dir + "/summary.json", std::ios::binary);
        out << summary.dump(2) << '\n';
    }
}

struct IterationFailure {
    int iteration = 0;
    uint64_t seed = 0;
    std::string error;
};

struct BatchResult {
    std::vector<std::optional<ExperimentResult>> results;  // index = iteration - 1
    std::vector<IterationFailure> failures;
};

// Runs iterations 1..cfg.iterations, each on its own backend seeded from the
// master seed. Failures are collected, not fatal. out_dir, when set, receives
// one results directory per iteration.
inline BatchResult run_batch(const ExperimentConfig& cfg, const marketdata::MarketPanel& panel,
                             const BackendFactory& make_backend, int jobs = 1,
                             const std::string& out_dir = "") {
    cfg.validate();
    require_derived(panel);
    BatchResult batch;
    batch.results.resize(static_cast<size_t>(cfg.iterations));
    std::mutex failures_mutex;

    auto run_one = [&](int iteration) {
        const uint64_t seed = iteration_seed(cfg.seed, iteration);
        try {
            auto backend = make_backend(seed);
            auto result = run_experiment(cfg, panel, iteration, *backend);
            if (!out_dir.empty())
                write_results(iteration_dir(out_dir, cfg, iteration), cfg, result);
            batch.results[static_cast<size_t>(iteration - 1)] = std::move(result);
        } catch (const std::exception& e) {
            std::lock_guard<std::mutex> lock(failures_mutex);
            batch.failures.push_back({iteration, seed, e.what()});
        }
    };

    if (jobs <= 1) {
        for (int i = 1; i <= cfg.iterations; ++i) run_one(i);
    } else {
        std::atomic<int> next{1};
        auto worker = [&] {
            while (true) {
                const int i = next.fetch_add(1);
                if (i > cfg.iterations) break;
                run_one(i);
            }
        };
        std::vector<std::thread> pool;
        const int n = std::min(jobs, cfg.iterations);
        for (int t = 0; t < n; ++t) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }
    std::sort(batch.failures.begin(), batch.failures.end(),
              [](const IterationFailure& a, const IterationFailure& b) {
                  return a.iteration < b.iteration;
              });
    return batch;
}

}  // namespace alphaforge::orchestrator
