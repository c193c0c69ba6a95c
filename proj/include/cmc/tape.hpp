#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "cmc/tensor.hpp"

namespace cmc {

using TensorId = int32_t;

enum class OpKind {
    Leaf,
    Matmul,
    MatmulTB,
    Add,
    AddRow,
    Scale,
    Gelu,
    SoftmaxLastDim,
    LayerNorm,
    EmbedLookup,
    MulElem,
    SumAll,
    OverwriteRow,
    AddToRow,
};

struct TapeEntry {
    OpKind op = OpKind::Leaf;
    TensorId a = -1;
    TensorId b = -1;
    TensorId c = -1;
    double scalar = 0.0;            // Scale factor
    int64_t row = -1;               // OverwriteRow / AddToRow position
    std::vector<int64_t> tokenIds;  // EmbedLookup
    Tensor out;
};

/// Ordered log of primitive operations from one forward pass. Replaying the
/// log reproduces every output bit-identically; reverse traversal yields
/// gradients of a scalar with respect to any tensor on the record.
class ComputeRecord {
public:
    explicit ComputeRecord(bool recording = true) : recording_(recording) {}

    bool recording() const { return recording_; }

    TensorId leaf(Tensor t);

    TensorId matmul(TensorId a, TensorId b);
    TensorId matmulTB(TensorId a, TensorId b);  // A * B^T
    TensorId add(TensorId a, TensorId b);
    TensorId addRow(TensorId a, TensorId row);  // broadcast row over rows of a
    TensorId scale(TensorId a, double s);
    TensorId gelu(TensorId a);
    TensorId softmaxLastDim(TensorId a);
    TensorId layerNorm(TensorId a, TensorId gain, TensorId bias);  // eps 1e-5
    TensorId embedLookup(TensorId table, const std::vector<int64_t>& ids);
    TensorId mulElem(TensorId a, TensorId b);
    TensorId sumAll(TensorId a);
    TensorId overwriteRow(TensorId a, int64_t row, TensorId r);
    TensorId addToRow(TensorId a, int64_t row, TensorId r);

    const Tensor& value(TensorId id) const;
    size_t size() const { return entries_.size(); }
    const TapeEntry& entry(TensorId id) const { return entries_[checkId(id)]; }

    /// dLoss/dT for every tensor on the record, indexed by TensorId.
    /// loss must be a scalar produced by this record.
    std::vector<Tensor> gradients(TensorId loss) const;

    /// Re-executes the record from its leaves, optionally overriding leaf
    /// values, and returns all recomputed tensors.
    std::vector<Tensor> replay(
        const std::vector<std::pair<TensorId, Tensor>>& leafOverrides = {}) const;

    /// Central finite-difference check of reverse-mode gradients on `probes`
    /// randomly chosen leaf coordinates. Returns the worst relative error;
    /// coordinates where both gradients fall below 1e-6 compare absolutely.
    double checkGradients(TensorId loss, int probes, double h, uint64_t seed) const;

private:
    size_t checkId(TensorId id) const;

    std::vector<TapeEntry> entries_;
    bool recording_;
};

double geluScalar(double x);

}  // namespace cmc
