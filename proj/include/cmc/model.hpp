#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "cmc/graph.hpp"
#include "cmc/tape.hpp"
#include "cmc/tensor.hpp"

namespace cmc::model {

struct ModelConfig {
    int nLayers = 4;
    int nHeads = 4;
    int64_t dModel = 64;
    int64_t dHead = 16;
    int64_t dMlp = 128;
    int64_t vocabSize = 128;
    int64_t maxSeq = 32;
    uint64_t seed = 0;
    /// Replaces layer norms and the MLP activation with the identity, making
    /// the whole forward pass affine when the attention scores are constant
    /// (e.g. zero Wq). Exists so attribution scores can be checked against
    /// exact patching on a network where first-order equality must hold.
    bool linearized = false;

    void validate() const;
};

struct LayerWeights {
    Tensor ln1Gain, ln1Bias;
    std::vector<Tensor> wq, wk, wv;  // per head [dModel, dHead]
    std::vector<Tensor> wo;          // per head [dHead, dModel]
    Tensor ln2Gain, ln2Bias;
    Tensor mlpIn;       // [dModel, dMlp]
    Tensor mlpInBias;   // [dMlp]
    Tensor mlpOut;      // [dMlp, dModel]
    Tensor mlpOutBias;  // [dModel]
};

/// Immutable after construction; interventions act on activations only.
struct ModelWeights {
    ModelConfig config;
    Tensor embedding;     // [vocabSize, dModel]
    Tensor posEmbedding;  // [maxSeq, dModel]
    std::vector<LayerWeights> layers;
    Tensor lnFGain, lnFBias;
    Tensor unembedding;  // [dModel, vocabSize]

    std::string checksum() const;
};

struct EdgePatch {
    graph::EdgeId edge;
    Tensor replacement;  // [seq, dModel]: source output substituted on this edge
};

struct NodeRowDirective {
    graph::NodeId node;
    int64_t pos = 0;
    Tensor row;  // [outputDim] of the node
};

/// Patch directives applied during forward: edge patches at input-resolution
/// time, then per-node output overwrites, then additive offsets.
struct PatchPlan {
    std::vector<EdgePatch> edgePatches;
    std::vector<NodeRowDirective> overwrites;
    std::vector<NodeRowDirective> offsets;
    /// Replaces the Input node's full output (embedding + positions); used
    /// by the integrated-gradients interpolation path.
    std::optional<Tensor> inputOverride;

    bool empty() const {
        return edgePatches.empty() && overwrites.empty() && offsets.empty() && !inputOverride;
    }
};

struct ActivationCache {
    std::shared_ptr<ComputeRecord> record;
    std::vector<TensorId> nodeOutputIds;    // per graph node index
    std::vector<TensorId> channelInputIds;  // per node*4+channel slot; -1 if unused
    TensorId logitsId = -1;

    const Tensor& nodeOutput(const graph::ComputationGraph& g, const graph::NodeId& n) const;
    const Tensor& channelInput(const graph::ComputationGraph& g, const graph::NodeId& n,
                               graph::Channel ch) const;
    const Tensor& logits() const { return record->value(logitsId); }
};

struct ForwardResult {
    Tensor logits;  // [seq, vocabSize]
    ActivationCache cache;
};

ModelWeights initRandom(const ModelConfig& config, double noiseStd = 0.02);

/// Causal pre-LN forward pass with per-head decomposition. Channel inputs are
/// resolved as the sum of in-edge source outputs (patched per plan); node
/// output directives are applied before downstream consumers read the output.
ForwardResult forward(const ModelWeights& weights, const graph::ComputationGraph& graph,
                      const std::vector<int64_t>& tokens, const PatchPlan& plan = {});

/// Argmax over the 100 confidence tokens at position pos; ties break low.
int decodeConfidence(const Tensor& logits, int64_t pos);

void saveWeights(const std::string& path, const ModelWeights& w);
ModelWeights loadWeights(const std::string& path);

}  // namespace cmc::model
