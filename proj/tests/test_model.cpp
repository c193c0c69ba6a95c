#include <doctest.h>

#include <cstdio>
#include <filesystem>

#include "cmc/model.hpp"

using namespace cmc;
using model::ModelConfig;

namespace {

std::string tempPath(const char* name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("forward produces logits of the right shape and is deterministic") {
    ModelConfig cfg;
    cfg.nLayers = 2;
    cfg.nHeads = 2;
    cfg.dModel = 16;
    cfg.dHead = 8;
    cfg.dMlp = 32;
    cfg.seed = 3;
    auto w = model::initRandom(cfg);
    graph::ComputationGraph g(cfg.nLayers, cfg.nHeads);
    std::vector<int64_t> tokens{5, 9, 101, 0};
    auto r1 = model::forward(w, g, tokens);
    auto r2 = model::forward(w, g, tokens);
    CHECK(r1.logits.shape == std::vector<int64_t>{4, cfg.vocabSize});
    CHECK(r1.logits.values == r2.logits.values);
    // Position matters: permuting tokens changes the final-position logits.
    auto r3 = model::forward(w, g, {9, 5, 101, 0});
    CHECK(r1.logits.values != r3.logits.values);
}

TEST_CASE("forward rejects invalid inputs") {
    ModelConfig cfg;
    cfg.nLayers = 1;
    cfg.nHeads = 1;
    cfg.dModel = 8;
    cfg.dHead = 8;
    cfg.dMlp = 16;
    auto w = model::initRandom(cfg);
    graph::ComputationGraph g(1, 1);
    CHECK_THROWS_AS(model::forward(w, g, {}), Error);
    CHECK_THROWS_AS(model::forward(w, g, {cfg.vocabSize}), Error);
    std::vector<int64_t> tooLong(static_cast<size_t>(cfg.maxSeq) + 1, 0);
    CHECK_THROWS_AS(model::forward(w, g, tooLong), Error);
}

TEST_CASE("decodeConfidence takes the argmax over tokens 0..99 and ties break low") {
    Tensor logits = Tensor::zeros({2, 128});
    logits.at(1, 42) = 3.0;
    logits.at(1, 120) = 50.0;  // outside the confidence range, must be ignored
    CHECK(model::decodeConfidence(logits, 1) == 42);
    logits.at(1, 17) = 3.0;  // tie with 42
    CHECK(model::decodeConfidence(logits, 1) == 17);
    CHECK(model::decodeConfidence(logits, 0) == 0);  // all-zero row ties break to 0
}

TEST_CASE("weights round-trip through the snapshot format bit-exactly") {
    ModelConfig cfg;
    cfg.nLayers = 2;
    cfg.nHeads = 2;
    cfg.dModel = 16;
    cfg.dHead = 8;
    cfg.dMlp = 32;
    cfg.seed = 11;
    cfg.linearized = true;
    auto w = model::initRandom(cfg);
    std::string path = tempPath("cmc_test_model.bin");
    model::saveWeights(path, w);
    auto w2 = model::loadWeights(path);
    CHECK(w2.config.nLayers == cfg.nLayers);
    CHECK(w2.config.seed == cfg.seed);
    CHECK(w2.config.linearized == cfg.linearized);
    CHECK(w2.embedding.values == w.embedding.values);
    CHECK(w2.layers[1].mlpOut.values == w.layers[1].mlpOut.values);
    CHECK(w2.checksum() == w.checksum());

    // Forward passes through the reloaded weights match bit-for-bit.
    graph::ComputationGraph g(cfg.nLayers, cfg.nHeads);
    std::vector<int64_t> tokens{1, 2, 3};
    CHECK(model::forward(w, g, tokens).logits.values ==
          model::forward(w2, g, tokens).logits.values);
    std::remove(path.c_str());
}

TEST_CASE("checksum changes when any weight changes") {
    ModelConfig cfg;
    cfg.nLayers = 1;
    cfg.nHeads = 1;
    cfg.dModel = 8;
    cfg.dHead = 8;
    cfg.dMlp = 16;
    auto w = model::initRandom(cfg);
    std::string before = w.checksum();
    w.unembedding.at(3, 7) += 1e-9;
    CHECK(w.checksum() != before);
}

TEST_CASE("loadWeights rejects truncated or mislabeled files") {
    std::string path = tempPath("cmc_test_badmodel.bin");
    {
        std::FILE* f = std::fopen(path.c_str(), "wb");
        REQUIRE(f != nullptr);
        std::fwrite("XXXX", 1, 4, f);
        std::fclose(f);
    }
    CHECK_THROWS_AS(model::loadWeights(path), Error);
    CHECK_THROWS_AS(model::loadWeights(tempPath("cmc_no_such_file.bin")), Error);
    std::remove(path.c_str());
}

TEST_CASE("node output overwrite changes downstream logits only") {
    ModelConfig cfg;
    cfg.nLayers = 2;
    cfg.nHeads = 1;
    cfg.dModel = 8;
    cfg.dHead = 8;
    cfg.dMlp = 16;
    cfg.seed = 5;
    auto w = model::initRandom(cfg);
    graph::ComputationGraph g(cfg.nLayers, cfg.nHeads);
    std::vector<int64_t> tokens{4, 6, 8};
    auto base = model::forward(w, g, tokens);

    model::PatchPlan plan;
    Tensor row = Tensor::zeros({cfg.dModel});
    for (double& v : row.values) v = 0.3;
    plan.overwrites.push_back({graph::NodeId::mlp(1), 2, row});
    auto patched = model::forward(w, g, tokens, plan);
    // The overwritten node's cached output reflects the directive.
    const Tensor& out = patched.cache.nodeOutput(g, graph::NodeId::mlp(1));
    for (int64_t j = 0; j < cfg.dModel; ++j) CHECK(out.at(2, j) == 0.3);
    CHECK(base.logits.values != patched.logits.values);
    // Positions before the overwrite are untouched (causal masking).
    for (int64_t j = 0; j < cfg.vocabSize; ++j) {
        CHECK(patched.logits.at(0, j) == base.logits.at(0, j));
        CHECK(patched.logits.at(1, j) == base.logits.at(1, j));
    }
}

TEST_CASE("duplicate overwrite directives on one node row are rejected") {
    ModelConfig cfg;
    cfg.nLayers = 1;
    cfg.nHeads = 1;
    cfg.dModel = 8;
    cfg.dHead = 8;
    cfg.dMlp = 16;
    auto w = model::initRandom(cfg);
    graph::ComputationGraph g(1, 1);
    model::PatchPlan plan;
    Tensor row = Tensor::zeros({cfg.dModel});
    plan.overwrites.push_back({graph::NodeId::mlp(0), 0, row});
    plan.overwrites.push_back({graph::NodeId::mlp(0), 0, row});
    CHECK_THROWS_AS(model::forward(w, g, {1, 2}, plan), Error);
}

TEST_CASE("edge patch replaces the source contribution for one consumer only") {
    ModelConfig cfg;
    cfg.nLayers = 1;
    cfg.nHeads = 1;
    cfg.dModel = 8;
    cfg.dHead = 8;
    cfg.dMlp = 16;
    cfg.seed = 9;
    auto w = model::initRandom(cfg);
    graph::ComputationGraph g(1, 1);
    std::vector<int64_t> tokens{2, 3, 4};
    auto base = model::forward(w, g, tokens);

    // Patching the input->logits edge with the real input output is a no-op.
    model::PatchPlan plan;
    plan.edgePatches.push_back(
        {{graph::NodeId::input(), graph::NodeId::logits(), graph::Channel::Direct},
         base.cache.nodeOutput(g, graph::NodeId::input())});
    auto same = model::forward(w, g, tokens, plan);
    CHECK(same.logits.values == base.logits.values);

    // Patching with zeros changes the logits but not the MLP's cached input.
    model::PatchPlan zeroPlan;
    zeroPlan.edgePatches.push_back(
        {{graph::NodeId::input(), graph::NodeId::logits(), graph::Channel::Direct},
         Tensor::zeros({3, cfg.dModel})});
    auto zeroed = model::forward(w, g, tokens, zeroPlan);
    CHECK(zeroed.logits.values != base.logits.values);
    CHECK(zeroed.cache.channelInput(g, graph::NodeId::mlp(0), graph::Channel::Direct).values ==
          base.cache.channelInput(g, graph::NodeId::mlp(0), graph::Channel::Direct).values);
}

TEST_CASE("channel inputs are distinct tensors from node outputs") {
    ModelConfig cfg;
    cfg.nLayers = 1;
    cfg.nHeads = 1;
    cfg.dModel = 8;
    cfg.dHead = 8;
    cfg.dMlp = 16;
    cfg.seed = 13;
    auto w = model::initRandom(cfg);
    graph::ComputationGraph g(1, 1);
    auto res = model::forward(w, g, {7, 8});
    // With a single in-edge the channel input equals the source output in
    // value while remaining a separate tape tensor (so it can be patched).
    const Tensor& inOut = res.cache.nodeOutput(g, graph::NodeId::input());
    const Tensor& qIn = res.cache.channelInput(g, graph::NodeId::attnHead(0, 0), graph::Channel::Q);
    CHECK(qIn.values == inOut.values);
    CHECK(&qIn != &inOut);
}

TEST_CASE("linearized config turns norms and activation into the identity") {
    ModelConfig cfg;
    cfg.nLayers = 1;
    cfg.nHeads = 1;
    cfg.dModel = 8;
    cfg.dHead = 8;
    cfg.dMlp = 16;
    cfg.seed = 21;
    auto w = model::initRandom(cfg, 0.01);
    auto wl = w;
    wl.config.linearized = true;
    // Zero attention queries so scores are constant: the linearized forward
    // must then be affine in the input embedding.
    for (auto& lw : wl.layers)
        for (auto& q : lw.wq)
            for (double& v : q.values) v = 0.0;
    graph::ComputationGraph g(1, 1);
    std::vector<int64_t> tokens{1, 2};
    auto base = model::forward(wl, g, tokens);

    model::PatchPlan pa, pb, pmid;
    Tensor x = base.cache.nodeOutput(g, graph::NodeId::input());
    Tensor y = x;
    // Non-uniform perturbation: a constant shift would be cancelled by the
    // layer norm mean subtraction and hide the nonlinearity.
    for (size_t i = 0; i < y.values.size(); ++i)
        y.values[i] += 0.05 * (1.0 + static_cast<double>(i % 5));
    Tensor mid = x;
    for (size_t i = 0; i < mid.values.size(); ++i) mid.values[i] = 0.5 * (x.values[i] + y.values[i]);
    pa.inputOverride = x;
    pb.inputOverride = y;
    pmid.inputOverride = mid;
    auto la = model::forward(wl, g, tokens, pa).logits;
    auto lb = model::forward(wl, g, tokens, pb).logits;
    auto lm = model::forward(wl, g, tokens, pmid).logits;
    for (size_t i = 0; i < la.values.size(); ++i)
        CHECK(lm.values[i] == doctest::Approx(0.5 * (la.values[i] + lb.values[i])).epsilon(1e-12));

    // The non-linearized model is not affine on the same probe.
    w.config.linearized = false;
    auto na = model::forward(w, g, tokens, pa).logits;
    auto nb = model::forward(w, g, tokens, pb).logits;
    auto nm = model::forward(w, g, tokens, pmid).logits;
    double worst = 0.0;
    for (size_t i = 0; i < na.values.size(); ++i)
        worst = std::max(worst, std::abs(nm.values[i] - 0.5 * (na.values[i] + nb.values[i])));
    CHECK(worst > 1e-9);
}
