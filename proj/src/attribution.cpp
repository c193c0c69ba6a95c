#include "cmc/attribution.hpp"

#include "cmc/kernels.hpp"

namespace cmc::attribution {

namespace {

int channelSlot(const graph::ComputationGraph& g, const graph::NodeId& dst, graph::Channel ch) {
    return g.nodeIndex(dst) * 4 + static_cast<int>(ch);
}

double dot(const Tensor& a, const Tensor& b) {
    if (!a.sameShape(b)) throw Error("attribution: shape mismatch in score dot product");
    double s = 0.0;
    for (size_t i = 0; i < a.values.size(); ++i) s += a.values[i] * b.values[i];
    return s;
}

/// Gradient of the TSLD loss with respect to every channel input of a fresh
/// forward pass, optionally with the Input node's output overridden.
std::vector<Tensor> channelGradients(const model::ModelWeights& w,
                                     const graph::ComputationGraph& g,
                                     const std::vector<int64_t>& tokens, int64_t posEnd,
                                     const AttributionConfig& cfg,
                                     const std::optional<Tensor>& inputOverride) {
    model::PatchPlan plan;
    plan.inputOverride = inputOverride;
    auto res = model::forward(w, g, tokens, plan);
    ComputeRecord& rec = *res.cache.record;
    TensorId loss = signal::attachTsldLoss(rec, res.cache.logitsId, posEnd, cfg.lossSets);
    std::vector<Tensor> grads = rec.gradients(loss);
    std::vector<Tensor> out(res.cache.channelInputIds.size());
    // Q/K/V channels of one head may resolve to the same tape tensor, so
    // the gradient is copied rather than moved out of the table.
    for (size_t slot = 0; slot < res.cache.channelInputIds.size(); ++slot) {
        TensorId id = res.cache.channelInputIds[slot];
        if (id >= 0) out[slot] = grads[static_cast<size_t>(id)];
    }
    return out;
}

graph::EdgeScoreMap scoresFromGradients(const PairActivations& pa,
                                        const graph::ComputationGraph& g,
                                        const std::vector<Tensor>& gradPerSlot) {
    graph::EdgeScoreMap scores(g.edges().size(), 0.0);
    for (size_t e = 0; e < g.edges().size(); ++e) {
        const graph::EdgeId& ed = g.edges()[e];
        const Tensor& diff = pa.outputDiff[static_cast<size_t>(g.nodeIndex(ed.src))];
        const Tensor& grad = gradPerSlot[static_cast<size_t>(channelSlot(g, ed.dst, ed.channel))];
        scores[e] = dot(diff, grad);
    }
    return scores;
}

}  // namespace

void AttributionConfig::validate() const {
    if (steps < 1) throw Error("attribution: steps must be >= 1");
    lossSets.validate();
}

PairActivations cachePair(const signal::CounterfactualPair& pair, const model::ModelWeights& w,
                          const graph::ComputationGraph& g) {
    PairActivations pa;
    pa.cleanTokens = pair.cleanTokens;
    pa.corruptTokens = pair.corruptTokens;
    pa.posEnd = pair.posEnd;
    pa.clean = model::forward(w, g, pair.cleanTokens).cache;
    pa.corrupt = model::forward(w, g, pair.corruptTokens).cache;
    pa.outputDiff.reserve(g.nodes().size());
    for (const graph::NodeId& n : g.nodes()) {
        if (n.kind == graph::NodeKind::Logits) {
            pa.outputDiff.push_back(Tensor{});
            continue;
        }
        Tensor d = pa.clean.nodeOutput(g, n);
        const Tensor& c = pa.corrupt.nodeOutput(g, n);
        for (size_t i = 0; i < d.values.size(); ++i) d.values[i] -= c.values[i];
        pa.outputDiff.push_back(std::move(d));
    }
    return pa;
}

graph::EdgeScoreMap eapScores(const PairActivations& pa, const graph::ComputationGraph& g,
                              const AttributionConfig& cfg) {
    cfg.validate();
    ComputeRecord& rec = *pa.clean.record;
    TensorId loss = signal::attachTsldLoss(rec, pa.clean.logitsId, pa.posEnd, cfg.lossSets);
    std::vector<Tensor> grads = rec.gradients(loss);
    std::vector<Tensor> perSlot(pa.clean.channelInputIds.size());
    for (size_t slot = 0; slot < perSlot.size(); ++slot) {
        TensorId id = pa.clean.channelInputIds[slot];
        if (id >= 0) perSlot[slot] = grads[static_cast<size_t>(id)];
    }
    return scoresFromGradients(pa, g, perSlot);
}

graph::EdgeScoreMap eapIgScores(const PairActivations& pa, const model::ModelWeights& w,
                                const graph::ComputationGraph& g, const AttributionConfig& cfg) {
    cfg.validate();
    const Tensor& inClean = pa.clean.nodeOutput(g, graph::NodeId::input());
    const Tensor& inCorrupt = pa.corrupt.nodeOutput(g, graph::NodeId::input());

    std::vector<Tensor> gradSum;
    for (int step = 0; step < cfg.steps; ++step) {
        int k = (cfg.path == PathConvention::EndAtClean) ? step + 1 : step;
        std::optional<Tensor> interp;
        if (k == cfg.steps) {
            interp = inClean;  // exact endpoint, no interpolation round-off
        } else {
            double t = static_cast<double>(k) / static_cast<double>(cfg.steps);
            Tensor x = inCorrupt;
            for (size_t i = 0; i < x.values.size(); ++i)
                x.values[i] += t * (inClean.values[i] - inCorrupt.values[i]);
            interp = std::move(x);
        }
        std::vector<Tensor> grads =
            channelGradients(w, g, pa.cleanTokens, pa.posEnd, cfg, interp);
        if (gradSum.empty()) {
            gradSum = std::move(grads);
        } else {
            for (size_t slot = 0; slot < gradSum.size(); ++slot) {
                if (gradSum[slot].values.empty()) continue;
                for (size_t i = 0; i < gradSum[slot].values.size(); ++i)
                    gradSum[slot].values[i] += grads[slot].values[i];
            }
        }
    }
    double inv = 1.0 / static_cast<double>(cfg.steps);
    for (Tensor& t : gradSum)
        for (double& v : t.values) v *= inv;
    return scoresFromGradients(pa, g, gradSum);
}

double exactPatchScore(const PairActivations& pa, const model::ModelWeights& w,
                       const graph::ComputationGraph& g, const graph::EdgeId& edge,
                       const AttributionConfig& cfg) {
    cfg.validate();
    g.edgeIndex(edge);  // throws on unknown edge
    double base = signal::tsld(pa.clean.logits(), pa.posEnd, cfg.lossSets);
    model::PatchPlan plan;
    plan.edgePatches.push_back({edge, pa.corrupt.nodeOutput(g, edge.src)});
    auto res = model::forward(w, g, pa.cleanTokens, plan);
    return signal::tsld(res.logits, pa.posEnd, cfg.lossSets) - base;
}

graph::EdgeScoreMap exactPatchScores(const PairActivations& pa, const model::ModelWeights& w,
                                     const graph::ComputationGraph& g,
                                     const AttributionConfig& cfg) {
    cfg.validate();
    graph::EdgeScoreMap scores(g.edges().size(), 0.0);
    kernels::parallelFor(static_cast<int64_t>(g.edges().size()), [&](int64_t e) {
        scores[static_cast<size_t>(e)] =
            exactPatchScore(pa, w, g, g.edges()[static_cast<size_t>(e)], cfg);
    });
    return scores;
}

AggregateResult aggregate(const std::vector<signal::CounterfactualPair>& pairs,
                          const model::ModelWeights& w, const graph::ComputationGraph& g,
                          const AttributionConfig& cfg) {
    cfg.validate();
    if (pairs.empty()) throw Error("aggregate: empty record set");
    std::vector<graph::EdgeScoreMap> perPair(pairs.size());
    kernels::parallelFor(static_cast<int64_t>(pairs.size()), [&](int64_t i) {
        PairActivations pa = cachePair(pairs[static_cast<size_t>(i)], w, g);
        perPair[static_cast<size_t>(i)] = eapIgScores(pa, w, g, cfg);
    });

    AggregateResult out;
    out.edgeMeans.assign(g.edges().size(), 0.0);
    std::vector<double> column(pairs.size());
    for (size_t e = 0; e < out.edgeMeans.size(); ++e) {
        for (size_t i = 0; i < pairs.size(); ++i) column[i] = perPair[i][e];
        out.edgeMeans[e] =
            kernels::pairwiseSum(column.data(), static_cast<int64_t>(column.size())) /
            static_cast<double>(pairs.size());
    }
    out.ranking = g.edgesToComponents(out.edgeMeans);
    return out;
}

}  // namespace cmc::attribution
