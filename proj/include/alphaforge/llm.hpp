#pragma once

// Provider-agnostic chat-completion client: deterministic stub backend,
// record/replay session cache, and a live HTTP backend speaking the
// chat-completions wire format.

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "alphaforge/expr.hpp"
#include "alphaforge/rng.hpp"
#include "alphaforge/util.hpp"

namespace alphaforge::llm {

struct Message {
    std::string role;  // system | user | assistant
    std::string content;
};

struct CompletionRequest {
    std::vector<Message> messages;
    double temperature = 0.7;
    int max_tokens = 300;
    std::string model = "stub-model";
};

struct TaskParams {
    double temperature;
    int max_tokens;

    void apply(CompletionRequest& req) const {
        req.temperature = temperature;
        req.max_tokens = max_tokens;
    }
};

inline TaskParams generation_params() { return {0.7, 300}; }
inline TaskParams repair_params() { return {0.3, 800}; }
inline TaskParams communication_params() { return {0.7, 200}; }

inline void validate_request(const CompletionRequest& req) {
    if (req.messages.empty()) throw std::invalid_argument("request has no messages");
    for (const auto& m : req.messages)
        if (m.role != "system" && m.role != "user" && m.role != "assistant")
            throw std::invalid_argument("bad message role: " + m.role);
    if (req.temperature < 0) throw std::invalid_argument("temperature must be >= 0");
    if (req.max_tokens <= 0) throw std::invalid_argument("max_tokens must be > 0");
}

// Canonical JSON (sorted keys) so the hash is stable across writers.
inline nlohmann::json request_to_json(const CompletionRequest& req) {
    nlohmann::json msgs = nlohmann::json::array();
    for (const auto& m : req.messages)
        msgs.push_back({{"content", m.content}, {"role", m.role}});
    return {{"max_tokens", req.max_tokens},
            {"messages", msgs},
            {"model", req.model},
            {"temperature", req.temperature}};
}

inline std::string request_hash(const CompletionRequest& req) {
    return hash_hex(fnv1a(request_to_json(req).dump()));
}

struct LlmError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct AuthError : LlmError {
    using LlmError::LlmError;
};
struct TransportError : LlmError {
    using LlmError::LlmError;
};
struct MalformedResponseError : LlmError {
    using LlmError::LlmError;
};
struct CacheMissError : LlmError {
    using LlmError::LlmError;
};

class Backend {
public:
    virtual ~Backend() = default;
    virtual std::string complete(const CompletionRequest& req) = 0;
    virtual std::string name() const = 0;
};

// ---------------------------------------------------------------------------
// Deterministic stub backend

namespace stub_detail {

// Grab "Label: value" off a prompt; value runs to end of line.
inline std::optional<std::string> find_line_value(const std::string& text,
                                                  const std::string& label) {
    auto pos = text.find(label);
    if (pos == std::string::npos) return std::nullopt;
    pos += label.size();
    auto end = text.find('\n', pos);
    if (end == std::string::npos) end = text.size();
    return trim(text.substr(pos, end - pos));
}

// Parse the leading "x.xx%" out of a string like "-1.20% return, ...".
inline std::optional<double> leading_percent(const std::string& s) {
    size_t i = 0;
    while (i < s.size() && (std::isdigit(static_cast<unsigned char>(s[i])) || s[i] == '-' ||
                            s[i] == '+' || s[i] == '.'))
        ++i;
    if (i == 0 || i >= s.size() || s[i] != '%') return std::nullopt;
    try {
        return parse_double(s.substr(0, i)) / 100.0;
    } catch (const std::exception&) {
        return std::nullopt;
    }
}

inline const std::vector<int>& stub_windows() {
    static const std::vector<int> w = {3, 5, 10, 15, 20};
    return w;
}

// Expression template pool. %W/%V are window slots filled per draw.
struct PoolEntry {
    const char* pattern;
};

inline const std::vector<PoolEntry>& momentum_pool() {
    static const std::vector<PoolEntry> p = {
        {"rank(delta(close, %W))"},
        {"rank(ts_mean(returns, %W))"},
        {"rank(close - delay(close, %W))"},
        {"rank(close / delay(close, %W) - 1)"},
        {"sign(ts_mean(returns, %W)) * rank(delta(close, %V))"},
        {"decay_linear(returns, %W)"},
        {"rank(decay_linear(delta(close, %W), %V))"},
        {"zscore(ts_mean(returns, %W))"},
        {"rank(close - ts_min(close, %W))"},
        {"-rank(ts_max(close, %W) - close)"},
    };
    return p;
}

inline const std::vector<PoolEntry>& reversal_pool() {
    static const std::vector<PoolEntry> p = {
        {"-rank(delta(close, %W))"},
        {"-rank(ts_mean(returns, %W))"},
        {"rank(ts_max(close, %W) - close)"},
        {"-zscore(delta(close, %W))"},
        {"rank(delay(close, %W) - close)"},
        {"-decay_linear(returns, %W)"},
        {"-rank(close / delay(close, %W))"},
        {"rank(ts_mean(close, %W) - close)"},
        {"-rank(close - ts_min(close, %W))"},
        {"-rank(returns)"},
    };
    return p;
}

inline const std::vector<PoolEntry>& volume_pool() {
    static const std::vector<PoolEntry> p = {
        {"rank(correlation(close, volume, %W))"},
        {"-rank(correlation(close, volume, %W))"},
        {"rank(volume / adv_20)"},
        {"-rank(volume / adv_20)"},
        {"rank(delta(volume, %W))"},
    };
    return p;
}

inline const std::vector<PoolEntry>& volatility_pool() {
    static const std::vector<PoolEntry> p = {
        {"-rank(volatility_20)"},
        {"-rank(ts_std(returns, %W))"},
        {"rank(volatility_10 - volatility_30)"},
        {"-zscore(ts_std(returns, %W))"},
    };
    return p;
}

inline const std::vector<PoolEntry>& mixed_pool() {
    static const std::vector<PoolEntry> p = {
        {"rank(delta(close, %W)) * rank(volume / adv_20)"},
        {"scale(rank(vwap) - rank(close))"},
        {"rank(ts_mean(returns, %W)) - rank(volatility_20)"},
        {"market_neutralize(rank(delta(close, %W)))"},
    };
    return p;
}

inline std::string fill_pattern(const char* pattern, Rng& rng) {
    std::string out;
    for (const char* c = pattern; *c; ++c) {
        if (*c == '%' && (c[1] == 'W' || c[1] == 'V')) {
            const auto& w = stub_windows();
            out += std::to_string(w[static_cast<size_t>(rng.uniform_int(w.size()))]);
            ++c;
        } else {
            out += *c;
        }
    }
    return out;
}

// Family weights: momentum .35, reversal .35, volume .10, volatility .10,
// mixed .10.
inline std::string sample_expression(Rng& rng) {
    const double u = rng.next_double();
    const std::vector<PoolEntry>* pool;
    if (u < 0.35)
        pool = &momentum_pool();
    else if (u < 0.70)
        pool = &reversal_pool();
    else if (u < 0.80)
        pool = &volume_pool();
    else if (u < 0.90)
        pool = &volatility_pool();
    else
        pool = &mixed_pool();
    const auto& entry = (*pool)[static_cast<size_t>(rng.uniform_int(pool->size()))];
    return fill_pattern(entry.pattern, rng);
}

// Mutate one window literal or one swappable function name, keeping the
// expression valid; returns the original text if nothing is mutable.
inline std::string mutate_expression(const std::string& text, Rng& rng) {
    auto parsed = expr::parse(text);
    if (expr::is_error(parsed)) return sample_expression(rng);
    expr::ExprPtr root = expr::get_expr(parsed);

    static const std::map<std::string, std::string> swaps = {
        {"rank", "zscore"},     {"zscore", "rank"},       {"ts_min", "ts_max"},
        {"ts_max", "ts_min"},   {"ts_mean", "decay_linear"}, {"decay_linear", "ts_mean"},
        {"delta", "delay"},     {"delay", "delta"},
    };

    // mutable sites: window literals (call id * 100 + arg index) and
    // swappable call names (call id), with calls numbered in preorder
    struct Site {
        enum Kind { Window, FnSwap } kind;
        int index;
    };
    std::vector<Site> sites;
    int counter = 0;
    std::function<void(const expr::ExprPtr&)> scan = [&](const expr::ExprPtr& e) {
        if (e->kind == expr::NodeKind::Call) {
            const int my_id = counter++;
            if (swaps.count(e->name)) sites.push_back({Site::FnSwap, my_id});
            const auto& sig = expr::function_registry().at(e->name);
            for (size_t i = 0; i < e->args.size(); ++i) {
                if (i < sig.args.size() && sig.args[i] == expr::ArgKind::Window)
                    sites.push_back({Site::Window, my_id * 100 + static_cast<int>(i)});
                scan(e->args[i]);
            }
        } else if (e->kind == expr::NodeKind::Negate) {
            scan(e->args[0]);
        } else if (e->kind == expr::NodeKind::Binary) {
            scan(e->args[0]);
            scan(e->args[1]);
        }
    };
    scan(root);
    if (sites.empty()) return expr::format(root);
    const Site chosen = sites[static_cast<size_t>(rng.uniform_int(sites.size()))];

    counter = 0;
    std::function<expr::ExprPtr(const expr::ExprPtr&)> rebuild =
        [&](const expr::ExprPtr& e) -> expr::ExprPtr {
        switch (e->kind) {
            case expr::NodeKind::Call: {
                const int my_id = counter++;
                std::vector<expr::ExprPtr> args;
                const auto& sig = expr::function_registry().at(e->name);
                std::string name = e->name;
                for (size_t i = 0; i < e->args.size(); ++i) {
                    expr::ExprPtr child = rebuild(e->args[i]);
                    if (chosen.kind == Site::Window &&
                        chosen.index == my_id * 100 + static_cast<int>(i) &&
                        i < sig.args.size() && sig.args[i] == expr::ArgKind::Window) {
                        const auto& w = stub_windows();
                        long long cur = static_cast<long long>(e->args[i]->value);
                        long long next = cur;
                        while (next == cur)
                            next = w[static_cast<size_t>(rng.uniform_int(w.size()))];
                        child = expr::make_literal(static_cast<double>(next), true);
                    }
                    args.push_back(child);
                }
                if (chosen.kind == Site::FnSwap && chosen.index == my_id) name = swaps.at(name);
                return expr::make_call(name, args);
            }
            case expr::NodeKind::Negate:
                return expr::make_negate(rebuild(e->args[0]));
            case expr::NodeKind::Binary: {
                // sequence the recursion so call numbering matches the scan
                expr::ExprPtr lhs = rebuild(e->args[0]);
                expr::ExprPtr rhs = rebuild(e->args[1]);
                return expr::make_binary(e->op, lhs, rhs);
            }
            default:
                return e;
        }
    };
    return expr::format(rebuild(root));
}

inline const std::vector<std::string>& strategy_words() {
    static const std::vector<std::string> v = {
        "momentum",     "mean reversion", "volume confirmation",
        "volatility filtering", "trend following", "liquidity screening"};
    return v;
}

inline std::string conversation_reply(Rng& rng) {
    const auto& words = strategy_words();
    const std::string a = words[static_cast<size_t>(rng.uniform_int(words.size()))];
    const std::string b = words[static_cast<size_t>(rng.uniform_int(words.size()))];
    const int w = stub_windows()[static_cast<size_t>(rng.uniform_int(stub_windows().size()))];
    nlohmann::json j = {
        {"reasoning", "My recent results suggest " + a +
                          " is carrying the portfolio, so I want to test whether a " +
                          std::to_string(w) + "-day window sharpens the signal."},
        {"contribution", "I am leaning into " + a + " with a " + std::to_string(w) +
                             "-day lookback and pairing it with " + b +
                             " to avoid crowded trades."}};
    return j.dump(2);
}

inline std::string takeaway_reply(Rng& rng) {
    const auto& words = strategy_words();
    const int n = 2 + static_cast<int>(rng.uniform_int(2));  // 2 or 3 bullets
    std::string out;
    for (int i = 0; i < n; ++i) {
        const std::string w = words[static_cast<size_t>(rng.uniform_int(words.size()))];
        const int win = stub_windows()[static_cast<size_t>(rng.uniform_int(stub_windows().size()))];
        if (i) out += "\n";
        out += "- Keep evaluating " + w + " signals around a " + std::to_string(win) +
               "-day horizon before rotating strategies.";
    }
    return out;
}

}  // namespace stub_detail

// Pure function of (seed, request): classifies the prompt by its markers and
// synthesizes an appropriate reply. Generation prompts adapt: an agent whose
// reported last-month return beats the market average keeps its alpha
// (mutating one knob with probability 0.3), otherwise it resamples from the
// template pool.
class StubBackend : public Backend {
public:
    explicit StubBackend(uint64_t seed) : seed_(seed) {}

    std::string complete(const CompletionRequest& req) override {
        validate_request(req);
        Rng rng(derive_key(seed_, fnv1a(request_to_json(req).dump()), "stub"));
        std::string prompt;
        for (const auto& m : req.messages) {
            prompt += m.content;
            prompt += "\n";
        }

        if (prompt.find("ATTEMPT NUMBER:") != std::string::npos)
            return stub_detail::sample_expression(rng);
        if (prompt.find("Respond in this exact JSON format") != std::string::npos)
            return stub_detail::conversation_reply(rng);
        if (prompt.find("main takeaways") != std::string::npos)
            return stub_detail::takeaway_reply(rng);
        if (prompt.find("Alpha Expression:") != std::string::npos)
            return generation_reply(prompt, rng);
        return "OK";
    }

    std::string name() const override { return "stub"; }

private:
    std::string generation_reply(const std::string& prompt, Rng& rng) const {
        auto prev_alpha = stub_detail::find_line_value(prompt, "Last Month's Alpha: ");
        auto perf_str = stub_detail::find_line_value(prompt, "Performance: ");
        auto market_str = stub_detail::find_line_value(prompt, "Average 20-day return: ");
        std::optional<double> prev_ret, market_ret;
        if (perf_str) prev_ret = stub_detail::leading_percent(*perf_str);
        if (market_str) market_ret = stub_detail::leading_percent(*market_str);

        if (prev_alpha && !prev_alpha->empty() && prev_ret && market_ret &&
            *prev_ret >= *market_ret) {
            if (rng.next_double() < 0.3) return stub_detail::mutate_expression(*prev_alpha, rng);
            auto parsed = expr::parse(*prev_alpha);
            if (!expr::is_error(parsed)) return expr::format(expr::get_expr(parsed));
        }
        return stub_detail::sample_expression(rng);
    }

    uint64_t seed_;
};

// ---------------------------------------------------------------------------
// Record / replay

class RecordingBackend : public Backend {
public:
    RecordingBackend(std::shared_ptr<Backend> inner, std::string session_path)
        : inner_(std::move(inner)), path_(std::move(session_path)) {}

    std::string complete(const CompletionRequest& req) override {
        std::string text = inner_->complete(req);
        nlohmann::json rec = {{"request_hash", request_hash(req)},
                              {"request", request_to_json(req)},
                              {"response", text},
                              {"timestamp", static_cast<long long>(std::time(nullptr))}};
        std::lock_guard<std::mutex> lock(mu_);
        std::ofstream out(path_, std::ios::app);
        if (!out) throw std::runtime_error("cannot open session log: " + path_);
        out << rec.dump() << "\n";
        return text;
    }

    std::string name() const override { return "record(" + inner_->name() + ")"; }

private:
    std::shared_ptr<Backend> inner_;
    std::string path_;
    std::mutex mu_;
};

class ReplayBackend : public Backend {
public:
    explicit ReplayBackend(const std::string& session_path) : path_(session_path) {
        std::ifstream in(session_path);
        std::string line;
        while (std::getline(in, line)) {
            if (trim(line).empty()) continue;
            auto rec = nlohmann::json::parse(line);
            cache_[rec.at("request_hash").get<std::string>()] =
                rec.at("response").get<std::string>();
        }
    }

    std::string complete(const CompletionRequest& req) override {
        auto it = cache_.find(request_hash(req));
        if (it == cache_.end())
            throw CacheMissError("replay cache miss for request hash " + request_hash(req) +
                                 " (session: " + path_ + ")");
        return it->second;
    }

    std::string name() const override { return "replay"; }
    size_t size() const { return cache_.size(); }

private:
    std::string path_;
    std::map<std::string, std::string> cache_;
};

// ---------------------------------------------------------------------------
// Rate limiting

class TokenBucket {
public:
    explicit TokenBucket(double requests_per_minute)
        : rate_(requests_per_minute / 60.0),
          capacity_(std::max(1.0, requests_per_minute / 60.0)),
          tokens_(std::max(1.0, requests_per_minute / 60.0)),
          last_(Clock::now()) {}

    // Blocks until a token is available. No-op when the limit is disabled.
    void acquire() {
        if (rate_ <= 0) return;
        std::unique_lock<std::mutex> lock(mu_);
        for (;;) {
            refill();
            if (tokens_ >= 1.0) {
                tokens_ -= 1.0;
                return;
            }
            const double deficit = 1.0 - tokens_;
            const auto wait = std::chrono::duration<double>(deficit / rate_);
            lock.unlock();
            std::this_thread::sleep_for(wait);
            lock.lock();
        }
    }

private:
    using Clock = std::chrono::steady_clock;
    void refill() {
        const auto now = Clock::now();
        const double elapsed = std::chrono::duration<double>(now - last_).count();
        tokens_ = std::min(capacity_, tokens_ + elapsed * rate_);
        last_ = now;
    }

    double rate_;
    double capacity_;
    double tokens_;
    Clock::time_point last_;
    std::mutex mu_;
};

struct LiveConfig {
    std::string endpoint = "https://api.openai.com/v1/chat/completions";
    std::string model = "gpt-4o-mini";
    std::string api_key_env = "ALPHAFORGE_API_KEY";
    double requests_per_minute = 0;  // 0 disables rate limiting
    int max_attempts = 3;
    int base_backoff_ms = 100;
};

// Chat-completions HTTP client. The API key comes from the environment only;
// auth failures surface immediately, transient transport failures and 5xx
// retry with exponential backoff up to max_attempts.
class LiveBackend : public Backend {
public:
    explicit LiveBackend(LiveConfig cfg)
        : cfg_(std::move(cfg)), bucket_(cfg_.requests_per_minute) {}

    std::string complete(const CompletionRequest& req) override {
        validate_request(req);
        const char* key = std::getenv(cfg_.api_key_env.c_str());
        if (!key || !*key)
            throw AuthError("environment variable " + cfg_.api_key_env + " is not set");

        const auto [base, path] = split_endpoint(cfg_.endpoint);
        nlohmann::json body = request_to_json(req);
        body["model"] = cfg_.model.empty() ? req.model : cfg_.model;
        const std::string payload = body.dump();
        const httplib::Headers headers = {{"Authorization", std::string("Bearer ") + key}};

        std::string last_error = "no attempt made";
        for (int attempt = 0; attempt < cfg_.max_attempts; ++attempt) {
            if (attempt > 0)
                std::this_thread::sleep_for(
                    std::chrono::milliseconds(cfg_.base_backoff_ms << (attempt - 1)));
            bucket_.acquire();
            httplib::Client client(base);
            client.set_connection_timeout(10);
            client.set_read_timeout(120);
            auto res = client.Post(path, headers, payload, "application/json");
            if (!res) {
                last_error = "transport failure: " + httplib::to_string(res.error());
                continue;
            }
            if (res->status == 401 || res->status == 403)
                throw AuthError("authentication rejected (status " +
                                std::to_string(res->status) + ")");
            if (res->status >= 500) {
                last_error = "server error status " + std::to_string(res->status);
                continue;
            }
            if (res->status < 200 || res->status >= 300)
                throw TransportError("provider rejected request with status " +
                                     std::to_string(res->status) + ": " + res->body);
            return extract_content(res->body);
        }
        throw TransportError("exhausted " + std::to_string(cfg_.max_attempts) +
                             " attempts; last error: " + last_error);
    }

    std::string name() const override { return "live"; }

private:
    static std::pair<std::string, std::string> split_endpoint(const std::string& url) {
        const auto scheme_end = url.find("://");
        const size_t host_start = scheme_end == std::string::npos ? 0 : scheme_end + 3;
        const auto slash = url.find('/', host_start);
        if (slash == std::string::npos) return {url, "/"};
        return {url.substr(0, slash), url.substr(slash)};
    }

    static std::string extract_content(const std::string& body) {
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(body);
        } catch (const nlohmann::json::exception& e) {
            throw MalformedResponseError(std::string("response is not JSON: ") + e.what());
        }
        if (!j.contains("choices") || !j["choices"].is_array() || j["choices"].empty() ||
            !j["choices"][0].contains("message") ||
            !j["choices"][0]["message"].contains("content") ||
            !j["choices"][0]["message"]["content"].is_string())
            throw MalformedResponseError("response lacks choices[0].message.content");
        return j["choices"][0]["message"]["content"].get<std::string>();
    }

    LiveConfig cfg_;
    TokenBucket bucket_;
};

}  // namespace alphaforge::llm
