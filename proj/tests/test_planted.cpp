#include <doctest.h>

#include "cmc/planted.hpp"
#include "fixtures.hpp"

using namespace cmc;

TEST_CASE("planted model meets its stated guarantees on every pair") {
    const auto& fx = fixtures::planted();
    const double half = fx.pc.margin / 2.0;
    REQUIRE(!fx.pairs.empty());
    for (const auto& p : fx.pairs) {
        CHECK(p.tsldClean >= half);
        CHECK(p.tsldCorrupt <= -half);
        CHECK(p.deltaTsld <= -fx.pc.margin);
        auto clean = model::forward(fx.pc.weights, fx.g, p.cleanTokens);
        auto corrupt = model::forward(fx.pc.weights, fx.g, p.corruptTokens);
        CHECK(model::decodeConfidence(clean.logits, p.posEnd) >= 70);
        CHECK(model::decodeConfidence(corrupt.logits, p.posEnd) < 50);
    }
}

TEST_CASE("planting is deterministic in the seed") {
    model::ModelConfig cfg;
    cfg.seed = 7;
    auto a = planted::plantOverconfidenceCircuit(cfg);
    auto b = planted::plantOverconfidenceCircuit(cfg);
    CHECK(a.weights.checksum() == b.weights.checksum());
    cfg.seed = 8;
    auto c = planted::plantOverconfidenceCircuit(cfg);
    CHECK(c.weights.checksum() != a.weights.checksum());
}

TEST_CASE("true components name one attention head and one MLP") {
    const auto& fx = fixtures::planted();
    REQUIRE(fx.pc.trueComponents.size() == 2);
    CHECK(fx.pc.trueComponents[0].kind == graph::NodeKind::Head);
    CHECK(fx.pc.trueComponents[1].kind == graph::NodeKind::Mlp);
}

TEST_CASE("token names round-trip across the whole vocabulary") {
    for (int64_t t = 0; t < planted::kMinVocab; ++t)
        CHECK(planted::tokenFromName(planted::tokenName(t)) == t);
    CHECK(planted::tokenName(0) == "0");
    CHECK(planted::tokenName(planted::kSepToken) == "sep");
    CHECK(planted::tokenName(planted::kConfQueryToken) == "confq");
    CHECK(planted::tokenFromName("ans3") == planted::kAnswerTokenBase + 3);
    CHECK_THROWS_AS(planted::tokenFromName("nonsense"), Error);
}

TEST_CASE("generated records are deterministic and mostly wrong but confident") {
    const auto& fx = fixtures::planted();
    CHECK(fx.records.size() == 256);
    planted::RecordGenConfig rc;
    rc.count = 256;
    auto again = planted::generateRecords(fx.pc, fx.g, rc);
    REQUIRE(again.size() == fx.records.size());
    for (size_t i = 0; i < again.size(); ++i) {
        CHECK(again[i].modelAnswerTokens == fx.records[i].modelAnswerTokens);
        CHECK(again[i].verbalizedConfidence == fx.records[i].verbalizedConfidence);
        CHECK(again[i].correct == fx.records[i].correct);
    }

    int wrong = 0, confidentWrong = 0, match = 0;
    for (const auto& r : fx.records) {
        REQUIRE(r.modelAnswerTokens.size() == 1);
        REQUIRE(r.goldAnswerTokens.size() == 1);
        if (r.modelAnswerTokens[0] == r.goldAnswerTokens[0]) {
            ++match;
            CHECK(r.correct);  // the grader never penalizes a matching answer
        } else {
            ++wrong;
            if (r.verbalizedConfidence >= 70) ++confidentWrong;
        }
    }
    CHECK(wrong > 0);
    CHECK(confidentWrong == wrong);  // the planted circuit is confident on every mismatch
    // About 5% of records answer correctly.
    CHECK(match > 0);
    CHECK(match < 40);
}

TEST_CASE("recorded confidence equals what the model decodes") {
    const auto& fx = fixtures::planted();
    for (size_t i = 0; i < 8; ++i) {
        const auto& r = fx.records[i];
        signal::CandidateSets sets;
        auto pair = signal::buildPair(r, fx.pc.task.pairTemplate, fx.pc.weights, fx.g, sets);
        auto res = model::forward(fx.pc.weights, fx.g, pair.cleanTokens);
        CHECK(model::decodeConfidence(res.logits, pair.posEnd) == r.verbalizedConfidence);
    }
}
