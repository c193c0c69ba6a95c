#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cmc/tensor.hpp"

namespace cmc::graph {

enum class NodeKind { Input, Head, Mlp, Logits };
enum class Channel { Q, K, V, Direct };

struct NodeId {
    NodeKind kind = NodeKind::Input;
    int layer = -1;
    int head = -1;

    static NodeId input() { return {NodeKind::Input, -1, -1}; }
    static NodeId attnHead(int layer, int head) { return {NodeKind::Head, layer, head}; }
    static NodeId mlp(int layer) { return {NodeKind::Mlp, layer, -1}; }
    static NodeId logits() { return {NodeKind::Logits, -1, -1}; }

    bool operator==(const NodeId&) const = default;
};

/// Component label as used in attribution reports: "m{l}" for MLPs,
/// "a{l}.h{h}" for attention heads, "input"/"logits" for the endpoints.
std::string nodeLabel(const NodeId& n);
NodeId parseNodeLabel(const std::string& label);
std::string channelLabel(Channel c);

struct EdgeId {
    NodeId src;
    NodeId dst;
    Channel channel = Channel::Direct;

    bool operator==(const EdgeId&) const = default;
};

struct ComponentScore {
    NodeId node;
    std::string label;
    double score = 0.0;
};

using EdgeScoreMap = std::vector<double>;  // indexed by canonical edge index
using ComponentRanking = std::vector<ComponentScore>;  // sorted descending

struct CircuitSpec {
    std::vector<int> edgeIndices;  // ascending canonical indices
};

/// DAG over Input, per-head attention, per-layer MLP, and Logits nodes.
/// Node order is topological; edge order is canonical (destination layer,
/// node, channel, then source in node order) and stable across runs.
class ComputationGraph {
public:
    ComputationGraph(int nLayers, int nHeads);

    int nLayers() const { return nLayers_; }
    int nHeads() const { return nHeads_; }

    const std::vector<NodeId>& nodes() const { return nodes_; }
    const std::vector<EdgeId>& edges() const { return edges_; }
    int64_t edgeCountValue() const { return static_cast<int64_t>(edges_.size()); }

    int nodeIndex(const NodeId& n) const;
    int edgeIndex(const EdgeId& e) const;  // throws on unknown edge
    bool hasEdge(const EdgeId& e) const;

    /// In-edges of a (destination, channel) pair in canonical source order.
    const std::vector<int>& inEdges(const NodeId& dst, Channel ch) const;
    /// All edges incident to a node (in-edges and out-edges, each once).
    const std::vector<int>& incidentEdges(const NodeId& n) const;

    CircuitSpec topKEdges(const EdgeScoreMap& scores, int64_t k) const;
    ComponentRanking edgesToComponents(const EdgeScoreMap& scores) const;

    void writeEdgeScoresCsv(const std::string& path, const EdgeScoreMap& scores) const;
    void writeComponentRankingCsv(const std::string& path, const ComponentRanking& r) const;

private:
    int channelSlot(const NodeId& dst, Channel ch) const;

    int nLayers_;
    int nHeads_;
    std::vector<NodeId> nodes_;
    std::vector<EdgeId> edges_;
    std::vector<std::vector<int>> inEdges_;      // per (node, channel) slot
    std::vector<std::vector<int>> incident_;     // per node index
};

/// Closed-form edge count; equals buildGraph(config).edges().size().
int64_t edgeCount(int nLayers, int nHeads);

}  // namespace cmc::graph
