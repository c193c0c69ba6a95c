#pragma once

#include "cmc/graph.hpp"
#include "cmc/model.hpp"
#include "cmc/signal.hpp"

namespace cmc::attribution {

/// Interpolation endpoints for the integrated-gradients path. EndAtClean
/// evaluates gradients at k/m for k=1..m (the path ends at the clean input);
/// StartAtCorrupt uses k=0..m-1 and includes the pure-corrupt point instead.
enum class PathConvention { EndAtClean, StartAtCorrupt };

struct AttributionConfig {
    int steps = 5;  // m
    signal::CandidateSets lossSets;
    PathConvention path = PathConvention::EndAtClean;

    void validate() const;
};

/// Both forward passes of one counterfactual pair plus the per-node
/// clean-minus-corrupt output differences the edge scores multiply by.
struct PairActivations {
    std::vector<int64_t> cleanTokens, corruptTokens;
    int64_t posEnd = 0;
    model::ActivationCache clean, corrupt;
    std::vector<Tensor> outputDiff;  // per graph node index
};

PairActivations cachePair(const signal::CounterfactualPair& pair, const model::ModelWeights& w,
                          const graph::ComputationGraph& g);

/// Single-gradient edge attribution: (out_src(clean) - out_src(corrupt)) dot
/// dL_TSLD/d(input_dst), gradient taken at the clean input, summed over all
/// positions and activation dimensions.
graph::EdgeScoreMap eapScores(const PairActivations& pa, const graph::ComputationGraph& g,
                              const AttributionConfig& cfg);

/// Integrated-gradients variant: the destination-input gradient is averaged
/// over m forward+backward passes whose Input-node output is interpolated
/// between the corrupt and clean embeddings.
graph::EdgeScoreMap eapIgScores(const PairActivations& pa, const model::ModelWeights& w,
                                const graph::ComputationGraph& g, const AttributionConfig& cfg);

/// Ground-truth causal effect of one edge: L_TSLD of the clean pass with the
/// edge's source contribution replaced by the corrupt-pass source output,
/// minus L_TSLD of the clean pass.
double exactPatchScore(const PairActivations& pa, const model::ModelWeights& w,
                       const graph::ComputationGraph& g, const graph::EdgeId& edge,
                       const AttributionConfig& cfg);

/// Exhaustive exact-patching sweep over every edge; the oracle the cheap
/// attribution scores are judged against.
graph::EdgeScoreMap exactPatchScores(const PairActivations& pa, const model::ModelWeights& w,
                                     const graph::ComputationGraph& g,
                                     const AttributionConfig& cfg);

struct AggregateResult {
    graph::EdgeScoreMap edgeMeans;
    graph::ComponentRanking ranking;
};

/// Per-edge arithmetic mean of per-pair EAP-IG scores over a record set,
/// plus the component ranking derived from it.
AggregateResult aggregate(const std::vector<signal::CounterfactualPair>& pairs,
                          const model::ModelWeights& w, const graph::ComputationGraph& g,
                          const AttributionConfig& cfg);

}  // namespace cmc::attribution
