#include "cmc/graph.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "cmc/io_util.hpp"

namespace cmc::graph {

std::string nodeLabel(const NodeId& n) {
    switch (n.kind) {
        case NodeKind::Input: return "input";
        case NodeKind::Logits: return "logits";
        case NodeKind::Mlp: return "m" + std::to_string(n.layer);
        case NodeKind::Head:
            return "a" + std::to_string(n.layer) + ".h" + std::to_string(n.head);
    }
    return "?";
}

NodeId parseNodeLabel(const std::string& label) {
    if (label == "input") return NodeId::input();
    if (label == "logits") return NodeId::logits();
    if (!label.empty() && label[0] == 'm')
        return NodeId::mlp(std::stoi(label.substr(1)));
    if (!label.empty() && label[0] == 'a') {
        auto dot = label.find(".h");
        if (dot != std::string::npos)
            return NodeId::attnHead(std::stoi(label.substr(1, dot - 1)),
                                    std::stoi(label.substr(dot + 2)));
    }
    throw Error("unknown component label: " + label);
}

std::string channelLabel(Channel c) {
    switch (c) {
        case Channel::Q: return "Q";
        case Channel::K: return "K";
        case Channel::V: return "V";
        case Channel::Direct: return "direct";
    }
    return "?";
}

ComputationGraph::ComputationGraph(int nLayers, int nHeads)
    : nLayers_(nLayers), nHeads_(nHeads) {
    if (nLayers < 1 || nHeads < 1) throw Error("graph: nLayers and nHeads must be >= 1");

    nodes_.push_back(NodeId::input());
    for (int l = 0; l < nLayers; ++l) {
        for (int h = 0; h < nHeads; ++h) nodes_.push_back(NodeId::attnHead(l, h));
        nodes_.push_back(NodeId::mlp(l));
    }
    nodes_.push_back(NodeId::logits());

    // Output-bearing sources available strictly before layer l's heads.
    auto sourcesBeforeLayer = [&](int l) {
        std::vector<NodeId> s;
        s.push_back(NodeId::input());
        for (int l2 = 0; l2 < l; ++l2) {
            for (int h = 0; h < nHeads; ++h) s.push_back(NodeId::attnHead(l2, h));
            s.push_back(NodeId::mlp(l2));
        }
        return s;
    };

    int nSlots = static_cast<int>(nodes_.size()) * 4;
    inEdges_.assign(static_cast<size_t>(nSlots), {});
    incident_.assign(nodes_.size(), {});

    auto addEdge = [&](const NodeId& src, const NodeId& dst, Channel ch) {
        int idx = static_cast<int>(edges_.size());
        edges_.push_back({src, dst, ch});
        inEdges_[static_cast<size_t>(channelSlot(dst, ch))].push_back(idx);
        incident_[static_cast<size_t>(nodeIndex(src))].push_back(idx);
        incident_[static_cast<size_t>(nodeIndex(dst))].push_back(idx);
    };

    for (int l = 0; l < nLayers; ++l) {
        auto prior = sourcesBeforeLayer(l);
        for (int h = 0; h < nHeads; ++h)
            for (Channel ch : {Channel::Q, Channel::K, Channel::V})
                for (const NodeId& src : prior) addEdge(src, NodeId::attnHead(l, h), ch);
        auto mlpSources = prior;
        for (int h = 0; h < nHeads; ++h) mlpSources.push_back(NodeId::attnHead(l, h));
        for (const NodeId& src : mlpSources) addEdge(src, NodeId::mlp(l), Channel::Direct);
    }
    auto all = sourcesBeforeLayer(nLayers);
    for (const NodeId& src : all) addEdge(src, NodeId::logits(), Channel::Direct);
}

int ComputationGraph::nodeIndex(const NodeId& n) const {
    switch (n.kind) {
        case NodeKind::Input:
            return 0;
        case NodeKind::Head:
            if (n.layer < 0 || n.layer >= nLayers_ || n.head < 0 || n.head >= nHeads_)
                throw Error("graph: node out of range: " + nodeLabel(n));
            return 1 + n.layer * (nHeads_ + 1) + n.head;
        case NodeKind::Mlp:
            if (n.layer < 0 || n.layer >= nLayers_)
                throw Error("graph: node out of range: " + nodeLabel(n));
            return 1 + n.layer * (nHeads_ + 1) + nHeads_;
        case NodeKind::Logits:
            return static_cast<int>(nodes_.size()) - 1;
    }
    throw Error("graph: bad node");
}

int ComputationGraph::channelSlot(const NodeId& dst, Channel ch) const {
    return nodeIndex(dst) * 4 + static_cast<int>(ch);
}

const std::vector<int>& ComputationGraph::inEdges(const NodeId& dst, Channel ch) const {
    return inEdges_[static_cast<size_t>(channelSlot(dst, ch))];
}

const std::vector<int>& ComputationGraph::incidentEdges(const NodeId& n) const {
    return incident_[static_cast<size_t>(nodeIndex(n))];
}

int ComputationGraph::edgeIndex(const EdgeId& e) const {
    const auto& in = inEdges(e.dst, e.channel);
    for (int idx : in)
        if (edges_[static_cast<size_t>(idx)].src == e.src) return idx;
    throw Error("graph: unknown edge " + nodeLabel(e.src) + "->" + nodeLabel(e.dst) + ":" +
                channelLabel(e.channel));
}

bool ComputationGraph::hasEdge(const EdgeId& e) const {
    try {
        edgeIndex(e);
        return true;
    } catch (const Error&) {
        return false;
    }
}

CircuitSpec ComputationGraph::topKEdges(const EdgeScoreMap& scores, int64_t k) const {
    if (scores.size() != edges_.size()) throw Error("topKEdges: score map size mismatch");
    if (k < 0 || k > static_cast<int64_t>(edges_.size()))
        throw Error("topKEdges: k out of range");
    std::vector<int> order(edges_.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        double sa = std::abs(scores[static_cast<size_t>(a)]);
        double sb = std::abs(scores[static_cast<size_t>(b)]);
        if (sa != sb) return sa > sb;
        return a < b;  // tie: canonical edge order
    });
    CircuitSpec c;
    c.edgeIndices.assign(order.begin(), order.begin() + k);
    std::sort(c.edgeIndices.begin(), c.edgeIndices.end());
    return c;
}

ComponentRanking ComputationGraph::edgesToComponents(const EdgeScoreMap& scores) const {
    if (scores.size() != edges_.size()) throw Error("edgesToComponents: score map size mismatch");
    ComponentRanking r;
    for (const NodeId& n : nodes_) {
        if (n.kind == NodeKind::Input || n.kind == NodeKind::Logits) continue;
        double s = 0.0;
        for (int idx : incidentEdges(n)) s += std::abs(scores[static_cast<size_t>(idx)]);
        r.push_back({n, nodeLabel(n), s});
    }
    std::stable_sort(r.begin(), r.end(), [&](const ComponentScore& a, const ComponentScore& b) {
        return a.score > b.score;  // stable: ties keep node order
    });
    return r;
}

void ComputationGraph::writeEdgeScoresCsv(const std::string& path,
                                          const EdgeScoreMap& scores) const {
    if (scores.size() != edges_.size()) throw Error("writeEdgeScoresCsv: score map size mismatch");
    std::string out = "src,dst,channel,score\n";
    for (size_t i = 0; i < edges_.size(); ++i) {
        const EdgeId& e = edges_[i];
        out += nodeLabel(e.src) + "," + nodeLabel(e.dst) + "," + channelLabel(e.channel) + "," +
               io::formatDouble(scores[i]) + "\n";
    }
    io::atomicWrite(path, out);
}

void ComputationGraph::writeComponentRankingCsv(const std::string& path,
                                                const ComponentRanking& r) const {
    std::string out = "rank,component,score\n";
    for (size_t i = 0; i < r.size(); ++i)
        out += std::to_string(i + 1) + "," + r[i].label + "," + io::formatDouble(r[i].score) + "\n";
    io::atomicWrite(path, out);
}

int64_t edgeCount(int nLayers, int nHeads) {
    int64_t L = nLayers, H = nHeads;
    int64_t total = 0;
    for (int64_t l = 0; l < L; ++l) total += 3 * H * (1 + l * (H + 1));
    for (int64_t l = 0; l < L; ++l) total += 1 + (l + 1) * H + l;
    total += 1 + L * H + L;
    return total;
}

}  // namespace cmc::graph
