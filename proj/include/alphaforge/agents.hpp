#pragma once

// Agent state, prompt assembly, the generate/repair loop, two-round
// conversations, and cumulative takeaway memory.

#include <algorithm>
#include <cstdio>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "alphaforge/backtest.hpp"
#include "alphaforge/expr.hpp"
#include "alphaforge/llm.hpp"
#include "alphaforge/prompts.hpp"
#include "alphaforge/stats.hpp"
#include "alphaforge/util.hpp"

namespace alphaforge::agents {

// ---------------------------------------------------------------------------
// Organizational structures

enum class Structure {
    Baseline,
    Leaderboard,
    ConversationCollaborative,
    ConversationCompetitive,
    ConversationLeaderboard,
};

struct StructureTraits {
    bool conversation = false;         // monthly 2-round discussion happens
    bool competitive_protocol = false; // zero-sum framing in conversation prompts
    bool competition_block = false;    // ranking block in the generation prompt
    bool rank_line = false;            // "Current Rank: N/M" line in conversation prompts
    bool expose_top3_alphas = false;   // top-3 expressions visible (else redacted)

    std::string protocol_name() const {
        return competitive_protocol ? "competitive" : "collaborative";
    }
};

inline const std::vector<Structure>& all_structures() {
    static const std::vector<Structure> v = {
        Structure::Baseline,
        Structure::Leaderboard,
        Structure::ConversationCollaborative,
        Structure::ConversationCompetitive,
        Structure::ConversationLeaderboard,
    };
    return v;
}

inline std::string structure_name(Structure s) {
    switch (s) {
        case Structure::Baseline: return "baseline";
        case Structure::Leaderboard: return "leaderboard";
        case Structure::ConversationCollaborative: return "conversation_collaborative";
        case Structure::ConversationCompetitive: return "conversation_competitive";
        case Structure::ConversationLeaderboard: return "conversation_leaderboard";
    }
    return "unknown";
}

inline Structure structure_from(const std::string& name) {
    for (Structure s : all_structures())
        if (structure_name(s) == name) return s;
    throw std::invalid_argument("unknown structure: " + name);
}

inline StructureTraits structure_traits(Structure s) {
    StructureTraits t;
    switch (s) {
        case Structure::Baseline:
            break;
        case Structure::Leaderboard:
            t.competition_block = true;
            break;
        case Structure::ConversationCollaborative:
            t.conversation = true;
            break;
        case Structure::ConversationCompetitive:
            t.conversation = true;
            t.competitive_protocol = true;
            t.competition_block = true;
            t.rank_line = true;
            t.expose_top3_alphas = true;
            break;
        case Structure::ConversationLeaderboard:
            t.conversation = true;
            t.competition_block = true;
            t.rank_line = true;
            break;
    }
    return t;
}

// ---------------------------------------------------------------------------
// Agent state

struct AgentState {
    int id = 1;  // 1-based
    double capital = 1'000'000.0;
    std::string last_alpha;  // canonical text, empty before the first month
    std::vector<backtest::PerformanceRecord> history;
    std::vector<std::string> takeaways;  // append-only, month-tagged
    int last_rank = 0;                   // 1 = best, 0 = not ranked yet
    bool last_fallback = false;

    std::string name() const {
        char buf[16];
        std::snprintf(buf, sizeof(buf), "Agent_%02d", id);
        return buf;
    }
};

inline llm::Message system_identity(const AgentState& state) {
    return {"system", "You are " + state.name() + ", a quantitative analyst."};
}

// ---------------------------------------------------------------------------
// Prompt context

struct TopEntry {
    double ret = kNaN;
    double sharpe = kNaN;
    std::string alpha;
};

struct CompetitionContext {
    int agent_rank = 0;
    int num_agents = 0;
    std::string metric_name = "monthly return";
    double prev_return = kNaN;
    double prev_sharpe = kNaN;
    std::vector<TopEntry> top;  // best first, at most 3 used
    double avg_top_sharpe = kNaN;
    double distance = kNaN;          // top return minus own return
    double bottom_threshold = kNaN;  // 25th percentile of last-month returns
    bool expose_alphas = false;
};

struct PromptContext {
    std::string date;
    std::vector<std::string> symbols;
    double avg_return = 0;  // average 20-day return across symbols
    double avg_vol = 0;
    std::string best_stock;
    double best_return = 0;
    std::string worst_stock;
    double worst_return = 0;
    std::optional<CompetitionContext> competition;
};

// Builds the ranking block inputs from post-month agent states. Requires every
// agent to carry at least one history record and a rank.
inline CompetitionContext make_competition_context(const std::vector<AgentState>& agents,
                                                   int self_id,
                                                   const std::string& metric_name,
                                                   bool expose_alphas) {
    if (agents.size() < 2) throw std::invalid_argument("need at least 2 agents");
    const AgentState* self = nullptr;
    std::vector<const AgentState*> ranked;
    for (const auto& a : agents) {
        if (a.history.empty() || a.last_rank < 1)
            throw std::invalid_argument("competition context needs ranked agents with history");
        if (a.id == self_id) self = &a;
        ranked.push_back(&a);
    }
    if (!self) throw std::invalid_argument("self_id not found");
    std::sort(ranked.begin(), ranked.end(),
              [](const AgentState* a, const AgentState* b) { return a->last_rank < b->last_rank; });

    CompetitionContext ctx;
    ctx.agent_rank = self->last_rank;
    ctx.num_agents = static_cast<int>(agents.size());
    ctx.metric_name = metric_name;
    ctx.prev_return = self->history.back().period_return;
    ctx.prev_sharpe = self->history.back().sharpe;
    ctx.expose_alphas = expose_alphas;

    double sharpe_sum = 0;
    const size_t top_n = std::min<size_t>(3, ranked.size());
    for (size_t i = 0; i < top_n; ++i) {
        const auto& rec = ranked[i]->history.back();
        ctx.top.push_back({rec.period_return, rec.sharpe, ranked[i]->last_alpha});
        sharpe_sum += rec.sharpe;
    }
    ctx.avg_top_sharpe = sharpe_sum / static_cast<double>(top_n);
    ctx.distance = ctx.top.front().ret - ctx.prev_return;

    std::vector<double> returns;
    for (const auto* a : ranked) returns.push_back(a->history.back().period_return);
    std::sort(returns.begin(), returns.end());
    ctx.bottom_threshold = stats::sorted_percentile(returns, 25.0);
    return ctx;
}

// ---------------------------------------------------------------------------
// Prompt rendering

inline std::string historical_block(const AgentState& state) {
    if (state.history.empty()) return "";
    const auto& rec = state.history.back();
    const size_t n = state.history.size();
    auto month_slot = [&](size_t back) -> prompts::Value {
        if (n < back) return prompts::Value("N/A");
        return prompts::Value(state.history[n - back].period_return);
    };
    prompts::Values v = {
        {"previous_alpha",
         prompts::Value(state.last_alpha.empty() ? std::string("N/A") : state.last_alpha)},
        {"return", prompts::Value(rec.period_return)},
        {"sharpe", prompts::Value(rec.sharpe)},
        {"volatility", prompts::Value(rec.volatility)},
        {"m1_return", month_slot(1)},
        {"m2_return", month_slot(2)},
        {"m3_return", month_slot(3)},
    };
    return prompts::render(prompts::builtin_template("historical_context"), v);
}

inline std::string competition_block(const CompetitionContext& ctx) {
    auto top_slot = [&](size_t i) -> std::pair<prompts::Value, prompts::Value> {
        if (i >= ctx.top.size())
            return {prompts::Value("N/A"), prompts::Value("N/A")};
        const auto& e = ctx.top[i];
        prompts::Value alpha =
            ctx.expose_alphas ? prompts::Value(e.alpha.empty() ? std::string("N/A") : e.alpha)
                              : prompts::Value("[not disclosed]");
        return {prompts::Value(e.ret), alpha};
    };
    auto [r1, a1] = top_slot(0);
    auto [r2, a2] = top_slot(1);
    auto [r3, a3] = top_slot(2);
    prompts::Values v = {
        {"agent_rank", prompts::Value(ctx.agent_rank)},
        {"num_agents", prompts::Value(ctx.num_agents)},
        {"metric_name", prompts::Value(ctx.metric_name)},
        {"prev_return", prompts::Value(ctx.prev_return)},
        {"prev_sharpe", prompts::Value(ctx.prev_sharpe)},
        {"top1_return", r1}, {"top1_alpha", a1},
        {"top2_return", r2}, {"top2_alpha", a2},
        {"top3_return", r3}, {"top3_alpha", a3},
        {"avg_top_sharpe", prompts::Value(ctx.avg_top_sharpe)},
        {"distance", prompts::Value(ctx.distance)},
        {"bottom_threshold", prompts::Value(ctx.bottom_threshold)},
    };
    return prompts::render(prompts::builtin_template("competition_context"), v);
}

// Historical block plus cumulative takeaways. Conversation learnings reach
// alpha generation only through this memory, never as raw transcripts.
inline std::string memory_block(const AgentState& state) {
    std::string block = historical_block(state);
    if (!state.takeaways.empty()) {
        if (!block.empty()) block += "\n\n";
        block += "YOUR CUMULATIVE LEARNINGS FROM PREVIOUS DISCUSSIONS:\n" +
                 join(state.takeaways, "\n");
    }
    return block;
}

inline std::vector<llm::Message> render_generation_prompt(const AgentState& state,
                                                          const PromptContext& ctx) {
    prompts::Values v = {
        {"num_stocks", prompts::Value(ctx.symbols.size())},
        {"symbols", prompts::Value(join(ctx.symbols, ", "))},
        {"date", prompts::Value(ctx.date)},
        {"avg_return", prompts::Value(ctx.avg_return)},
        {"avg_vol", prompts::Value(ctx.avg_vol)},
        {"best_stock", prompts::Value(ctx.best_stock)},
        {"best_return", prompts::Value(ctx.best_return)},
        {"worst_stock", prompts::Value(ctx.worst_stock)},
        {"worst_return", prompts::Value(ctx.worst_return)},
        {"historical_context", prompts::Value(memory_block(state))},
        {"competition_status",
         prompts::Value(ctx.competition ? competition_block(*ctx.competition) : std::string())},
        {"function_list", prompts::Value(prompts::function_list_text())},
    };
    return {system_identity(state),
            {"user", prompts::render(prompts::builtin_template("generation"), v)}};
}

inline std::vector<llm::Message> render_repair_prompt(const AgentState& state,
                                                      const PromptContext& ctx,
                                                      const std::string& failed_text,
                                                      const expr::ParseError& err,
                                                      int attempt) {
    prompts::Values v = {
        {"error_type", prompts::Value(expr::error_class_name(err.cls))},
        {"error_message", prompts::Value(err.message)},
        {"attempt", prompts::Value(attempt)},
        {"alpha_expression", prompts::Value(failed_text)},
        {"symbols", prompts::Value(join(ctx.symbols, ", "))},
        {"error_specific_guidance", prompts::Value(err.guidance)},
    };
    return {system_identity(state),
            {"user", prompts::render(prompts::builtin_template("repair"), v)}};
}

// ---------------------------------------------------------------------------
// Generate with repair loop

constexpr int kMaxGenerationAttempts = 5;

struct GenerationOutcome {
    expr::ExprPtr alpha;  // never null
    std::string text;     // canonical formatting of alpha
    int attempts = 0;     // completion calls spent (1..5)
    bool fallback = false;
    std::vector<std::string> errors;  // one entry per failed attempt
};

namespace detail {

// First parse or validation problem, if any.
inline std::optional<expr::ParseError> first_problem(const std::string& reply,
                                                     expr::ExprPtr& out) {
    auto result = expr::parse(reply);
    if (expr::is_error(result)) return expr::get_error(result);
    auto problems = expr::validate(expr::get_expr(result));
    if (!problems.empty()) return problems.front();
    out = expr::get_expr(result);
    return std::nullopt;
}

}  // namespace detail

// Always yields a usable expression: up to 5 completion attempts (generation
// then repairs), then the agent's last alpha, then "rank(returns)".
inline GenerationOutcome generate_alpha(const AgentState& state, const PromptContext& ctx,
                                        llm::Backend& backend) {
    GenerationOutcome out;
    llm::CompletionRequest req;
    req.messages = render_generation_prompt(state, ctx);
    llm::generation_params().apply(req);

    std::string reply;
    for (int attempt = 1; attempt <= kMaxGenerationAttempts; ++attempt) {
        out.attempts = attempt;
        reply = backend.complete(req);
        expr::ExprPtr parsed;
        auto problem = detail::first_problem(reply, parsed);
        if (!problem) {
            out.alpha = parsed;
            out.text = expr::format(parsed);
            return out;
        }
        out.errors.push_back(std::string(expr::error_class_name(problem->cls)) + ": " +
                             problem->message);
        if (attempt < kMaxGenerationAttempts) {
            req.messages =
                render_repair_prompt(state, ctx, trim(reply), *problem, attempt + 1);
            llm::repair_params().apply(req);
        }
    }

    out.fallback = true;
    if (!state.last_alpha.empty()) {
        auto result = expr::parse(state.last_alpha);
        if (!expr::is_error(result)) {
            out.alpha = expr::get_expr(result);
            out.text = expr::format(out.alpha);
            return out;
        }
    }
    auto neutral = expr::parse("rank(returns)");
    out.alpha = expr::get_expr(neutral);
    out.text = expr::format(out.alpha);
    return out;
}

// ---------------------------------------------------------------------------
// Conversations

struct ConversationTurn {
    int agent_id = 0;
    std::string reasoning;
    std::string contribution;
    bool malformed = false;  // raw capture after failed re-asks
};

struct ConversationTranscript {
    int month = 0;
    std::string protocol;  // "collaborative" or "competitive"
    std::vector<std::vector<ConversationTurn>> rounds;

    size_t turn_count() const {
        size_t n = 0;
        for (const auto& r : rounds) n += r.size();
        return n;
    }
};

// "Agent_01 (Round 1): <contribution>" lines, contributions only. Reasoning is
// private to its author and never enters another prompt.
inline std::string conversation_text(const ConversationTranscript& t) {
    std::vector<std::string> lines;
    for (size_t r = 0; r < t.rounds.size(); ++r) {
        for (const auto& turn : t.rounds[r]) {
            char buf[16];
            std::snprintf(buf, sizeof(buf), "Agent_%02d", turn.agent_id);
            lines.push_back(std::string(buf) + " (Round " + std::to_string(r + 1) +
                            "): " + turn.contribution);
        }
    }
    return join(lines, "\n");
}

inline std::string transcript_to_jsonl(const ConversationTranscript& t) {
    std::string out;
    for (size_t r = 0; r < t.rounds.size(); ++r) {
        for (const auto& turn : t.rounds[r]) {
            nlohmann::ordered_json j = {
                {"month", t.month},           {"protocol", t.protocol},
                {"round", r + 1},             {"agent", turn.agent_id},
                {"reasoning", turn.reasoning}, {"contribution", turn.contribution},
            };
            out += j.dump() + "\n";
        }
    }
    return out;
}

// Parses one-object-per-line transcripts, grouping consecutive months.
inline std::vector<ConversationTranscript> transcripts_from_jsonl(const std::string& text) {
    std::vector<ConversationTranscript> out;
    std::istringstream stream(text);
    std::string line;
    while (std::getline(stream, line)) {
        if (trim(line).empty()) continue;
        auto j = nlohmann::json::parse(line);
        const int month = j.at("month").get<int>();
        const size_t round = j.at("round").get<size_t>();
        if (out.empty() || out.back().month != month) {
            out.push_back({month, j.at("protocol").get<std::string>(), {}});
        }
        auto& t = out.back();
        if (t.rounds.size() < round) t.rounds.resize(round);
        t.rounds[round - 1].push_back({j.at("agent").get<int>(),
                                       j.at("reasoning").get<std::string>(),
                                       j.at("contribution").get<std::string>(), false});
    }
    return out;
}

namespace detail {

inline bool parse_turn_json(const std::string& reply, std::string& reasoning,
                            std::string& contribution) {
    auto j = nlohmann::json::parse(reply, nullptr, false);
    if (j.is_discarded() || !j.is_object() || j.size() != 2) return false;
    if (!j.contains("reasoning") || !j.contains("contribution")) return false;
    if (!j["reasoning"].is_string() || !j["contribution"].is_string()) return false;
    reasoning = j["reasoning"].get<std::string>();
    contribution = j["contribution"].get<std::string>();
    return true;
}

}  // namespace detail

inline std::vector<llm::Message> render_conversation_prompt(
    const AgentState& state, const StructureTraits& traits, int round_num, int num_agents,
    const ConversationTranscript& so_far) {
    std::string prev_performance = "N/A";
    if (!state.history.empty()) {
        const auto& rec = state.history.back();
        prev_performance = rec.return_str() + " return, " + rec.sharpe_str() + " Sharpe";
    }
    std::string rank_line;
    if (traits.rank_line && state.last_rank > 0)
        rank_line =
            "Current Rank: " + std::to_string(state.last_rank) + "/" + std::to_string(num_agents);
    const std::string convo = conversation_text(so_far);
    prompts::Values v = {
        {"agent_number", prompts::Value(state.name())},
        {"round_num", prompts::Value(round_num)},
        {"current_capital", prompts::Value(state.capital)},
        {"prev_alpha",
         prompts::Value(state.last_alpha.empty() ? std::string("N/A") : state.last_alpha)},
        {"prev_performance", prompts::Value(prev_performance)},
        {"rank_line", prompts::Value(rank_line)},
        {"learnings", prompts::Value(join(state.takeaways, "\n"))},
        {"conversation",
         prompts::Value(convo.empty() ? std::string("(no messages yet)") : convo)},
    };
    const char* id = traits.competitive_protocol ? "conversation_competitive"
                                                 : "conversation_collaborative";
    return {system_identity(state), {"user", prompts::render(prompts::builtin_template(id), v)}};
}

constexpr int kConversationRounds = 2;
constexpr int kMaxJsonReasks = 2;

// Two rounds, agents speaking in id order, each seeing all prior turns.
// Malformed JSON replies get up to 2 re-asks, then raw capture.
inline ConversationTranscript run_conversation(const std::vector<AgentState>& agents,
                                               const StructureTraits& traits, int month,
                                               llm::Backend& backend) {
    if (agents.size() < 2)
        throw std::invalid_argument("conversation needs at least 2 agents");
    ConversationTranscript t;
    t.month = month;
    t.protocol = traits.protocol_name();
    const int num_agents = static_cast<int>(agents.size());

    std::vector<const AgentState*> order;
    for (const auto& a : agents) order.push_back(&a);
    std::sort(order.begin(), order.end(),
              [](const AgentState* a, const AgentState* b) { return a->id < b->id; });

    for (int round = 1; round <= kConversationRounds; ++round) {
        t.rounds.emplace_back();
        for (const AgentState* state : order) {
            llm::CompletionRequest req;
            req.messages = render_conversation_prompt(*state, traits, round, num_agents, t);
            llm::communication_params().apply(req);

            ConversationTurn turn;
            turn.agent_id = state->id;
            std::string reply;
            bool ok = false;
            for (int ask = 0; ask <= kMaxJsonReasks && !ok; ++ask) {
                if (ask > 0)
                    req.messages.back().content +=
                        "\n\nREMINDER: The previous reply was not valid JSON with keys "
                        "\"reasoning\" and \"contribution\". Respond with exactly that JSON "
                        "object.";
                reply = backend.complete(req);
                ok = detail::parse_turn_json(reply, turn.reasoning, turn.contribution);
            }
            if (!ok) {
                turn.reasoning.clear();
                turn.contribution = reply;
                turn.malformed = true;
            }
            t.rounds.back().push_back(std::move(turn));
        }
    }
    return t;
}

// ---------------------------------------------------------------------------
// Takeaways

// Appends one month-tagged takeaway entry; returns false when the model gave
// nothing and a placeholder was recorded instead.
inline bool extract_takeaways(AgentState& state, const ConversationTranscript& transcript,
                              const std::string& month_tag, llm::Backend& backend) {
    prompts::Values v = {
        {"agent_number", prompts::Value(state.name())},
        {"learnings", prompts::Value(join(state.takeaways, "\n"))},
        {"transcript", prompts::Value(conversation_text(transcript))},
    };
    llm::CompletionRequest req;
    req.messages = {system_identity(state),
                    {"user", prompts::render(prompts::builtin_template("takeaway"), v)}};
    llm::communication_params().apply(req);

    const std::string reply = trim(backend.complete(req));
    if (reply.empty()) {
        state.takeaways.push_back("[" + month_tag + "] (no takeaways recorded)");
        return false;
    }
    state.takeaways.push_back("[" + month_tag + "] " + reply);
    return true;
}

}  // namespace alphaforge::agents
