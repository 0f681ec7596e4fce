#include <catch2/catch_amalgamated.hpp>

#include "alphaforge/transcript_scoring.hpp"

using namespace alphaforge;
using transcript_scoring::score_transcript;

namespace {

agents::ConversationTranscript transcript_of(const std::vector<std::string>& contributions) {
    agents::ConversationTranscript t;
    t.month = 3;
    t.protocol = "collaborative";
    t.rounds.emplace_back();
    for (size_t i = 0; i < contributions.size(); ++i)
        t.rounds[0].push_back(
            {static_cast<int>(i + 1), "private reasoning", contributions[i], false});
    return t;
}

}  // namespace

TEST_CASE("ttr baseline measures vocabulary novelty") {
    SECTION("hand-computed ratio") {
        auto s = score_transcript("ttr_baseline", transcript_of({"alpha beta alpha"}));
        CHECK(s.scorer == "ttr_baseline");
        CHECK(s.month == 3);
        CHECK(s.score == Catch::Approx(2.0 / 3.0));
        REQUIRE(s.per_turn.size() == 1);
        CHECK(s.per_turn[0] == Catch::Approx(2.0 / 3.0));
    }
    SECTION("case and punctuation fold together") {
        auto s = score_transcript("ttr_baseline", transcript_of({"Momentum, MOMENTUM!"}));
        CHECK(s.score == Catch::Approx(0.5));
    }
    SECTION("identical repeated turns sit at the vocabulary minimum") {
        auto repeated =
            score_transcript("ttr_baseline", transcript_of({"momentum works", "momentum works",
                                                            "momentum works", "momentum works"}));
        // 2 distinct tokens over 8 total
        CHECK(repeated.score == Catch::Approx(0.25));
        auto varied = score_transcript(
            "ttr_baseline", transcript_of({"momentum works", "reversal fails", "volume rises",
                                           "volatility falls"}));
        CHECK(varied.score == Catch::Approx(1.0));
        CHECK(repeated.score < varied.score);
        CHECK(repeated.per_turn == std::vector<double>{1.0, 1.0, 1.0, 1.0});
    }
    SECTION("reasoning text does not enter the score") {
        auto a = transcript_of({"same words"});
        auto b = transcript_of({"same words"});
        b.rounds[0][0].reasoning = "completely different plan";
        CHECK(score_transcript("ttr_baseline", a).score ==
              score_transcript("ttr_baseline", b).score);
    }
    SECTION("determinism") {
        auto t = transcript_of({"one two three two"});
        CHECK(score_transcript("ttr_baseline", t).score ==
              score_transcript("ttr_baseline", t).score);
    }
}

TEST_CASE("scoring dispatch and failure modes") {
    SECTION("empty transcript is an error") {
        agents::ConversationTranscript empty;
        CHECK_THROWS_AS(score_transcript("ttr_baseline", empty), std::invalid_argument);
        CHECK_THROWS_AS(score_transcript("ttr_baseline", transcript_of({"", "  ", "..."})),
                        std::invalid_argument);
    }
    SECTION("unknown scorer names the problem") {
        CHECK_THROWS_WITH(score_transcript("core", transcript_of({"hello"})),
                          Catch::Matchers::ContainsSubstring("core"));
    }
    SECTION("external scorers register by name") {
        transcript_scoring::register_scorer(
            "turn_count", [](const agents::ConversationTranscript& t) {
                transcript_scoring::TranscriptScore s;
                s.scorer = "turn_count";
                s.month = t.month;
                s.score = static_cast<double>(t.turn_count());
                return s;
            });
        auto s = score_transcript("turn_count", transcript_of({"a", "b", "c"}));
        CHECK(s.score == 3.0);

        transcript_scoring::register_scorer(
            "broken", [](const agents::ConversationTranscript&) {
                transcript_scoring::TranscriptScore s;
                s.scorer = "broken";
                s.score = kNaN;
                return s;
            });
        CHECK_THROWS_AS(score_transcript("broken", transcript_of({"x"})), std::runtime_error);
    }
}
