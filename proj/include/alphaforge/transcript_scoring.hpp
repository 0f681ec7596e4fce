#pragma once

// Pluggable conversation-quality scorers. The built-in baseline is a
// type-token ratio over contribution texts: a cheap, deterministic novelty
// proxy that keeps the quality column populated. It is not a discourse
// quality model; external scorers register under their own names.

#include <cctype>
#include <cmath>
#include <functional>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "alphaforge/agents.hpp"
#include "alphaforge/util.hpp"

namespace alphaforge::transcript_scoring {

struct TranscriptScore {
    std::string scorer;
    int month = 0;
    double score = kNaN;
    std::vector<double> per_turn;  // optional; empty when the scorer gives none
};

using Scorer = std::function<TranscriptScore(const agents::ConversationTranscript&)>;

namespace detail {

inline std::vector<std::string> tokenize(const std::string& text) {
    std::vector<std::string> out;
    std::string word;
    for (char c : text) {
        if (std::isalnum(static_cast<unsigned char>(c))) {
            word += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
        } else if (!word.empty()) {
            out.push_back(std::move(word));
            word.clear();
        }
    }
    if (!word.empty()) out.push_back(std::move(word));
    return out;
}

inline double ttr(const std::vector<std::string>& tokens) {
    if (tokens.empty()) return kNaN;
    std::set<std::string> distinct(tokens.begin(), tokens.end());
    return static_cast<double>(distinct.size()) / static_cast<double>(tokens.size());
}

}  // namespace detail

// Type-token ratio of all contribution texts pooled, plus per-turn ratios.
inline TranscriptScore ttr_baseline(const agents::ConversationTranscript& t) {
    TranscriptScore out;
    out.scorer = "ttr_baseline";
    out.month = t.month;
    std::vector<std::string> pooled;
    for (const auto& round : t.rounds) {
        for (const auto& turn : round) {
            auto tokens = detail::tokenize(turn.contribution);
            out.per_turn.push_back(detail::ttr(tokens));
            pooled.insert(pooled.end(), tokens.begin(), tokens.end());
        }
    }
    if (pooled.empty())
        throw std::invalid_argument("transcript has no contribution text to score");
    out.score = detail::ttr(pooled);
    return out;
}

inline std::map<std::string, Scorer>& scorer_registry() {
    static std::map<std::string, Scorer> reg = {
        {"ttr_baseline", [](const agents::ConversationTranscript& t) { return ttr_baseline(t); }},
    };
    return reg;
}

inline void register_scorer(const std::string& name, Scorer scorer) {
    scorer_registry().insert_or_assign(name, std::move(scorer));
}

inline TranscriptScore score_transcript(const std::string& scorer_name,
                                        const agents::ConversationTranscript& transcript) {
    auto it = scorer_registry().find(scorer_name);
    if (it == scorer_registry().end())
        throw std::invalid_argument("unknown conversation scorer: " + scorer_name);
    TranscriptScore out = it->second(transcript);
    if (!std::isfinite(out.score))
        throw std::runtime_error("scorer '" + scorer_name + "' returned a non-finite score");
    return out;
}

}  // namespace alphaforge::transcript_scoring
