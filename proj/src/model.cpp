#include "cmc/model.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <random>

#include "cmc/io_util.hpp"

namespace cmc::model {

using graph::Channel;
using graph::ComputationGraph;
using graph::NodeId;
using graph::NodeKind;

void ModelConfig::validate() const {
    if (nLayers < 1 || nHeads < 1) throw Error("config: nLayers and nHeads must be >= 1");
    if (static_cast<int64_t>(nHeads) * dHead != dModel)
        throw Error("config: nHeads*dHead (" + std::to_string(nHeads * dHead) +
                    ") != dModel (" + std::to_string(dModel) + ")");
    if (vocabSize < 100) throw Error("config: vocabSize must be >= 100 (confidence tokens)");
    if (dMlp < 1 || maxSeq < 1) throw Error("config: dMlp and maxSeq must be >= 1");
}

namespace {
void hashTensor(std::string& bytes, const Tensor& t) {
    size_t off = bytes.size();
    bytes.resize(off + t.values.size() * sizeof(double));
    std::memcpy(bytes.data() + off, t.values.data(), t.values.size() * sizeof(double));
}

template <typename Fn>
void forEachTensor(const ModelWeights& w, Fn fn) {
    fn(w.embedding);
    fn(w.posEmbedding);
    for (const LayerWeights& l : w.layers) {
        fn(l.ln1Gain);
        fn(l.ln1Bias);
        for (int h = 0; h < w.config.nHeads; ++h) {
            fn(l.wq[static_cast<size_t>(h)]);
            fn(l.wk[static_cast<size_t>(h)]);
            fn(l.wv[static_cast<size_t>(h)]);
            fn(l.wo[static_cast<size_t>(h)]);
        }
        fn(l.ln2Gain);
        fn(l.ln2Bias);
        fn(l.mlpIn);
        fn(l.mlpInBias);
        fn(l.mlpOut);
        fn(l.mlpOutBias);
    }
    fn(w.lnFGain);
    fn(w.lnFBias);
    fn(w.unembedding);
}

template <typename Fn>
void forEachTensorMut(ModelWeights& w, Fn fn) {
    forEachTensor(w, [&](const Tensor& t) { fn(const_cast<Tensor&>(t)); });
}
}  // namespace

std::string ModelWeights::checksum() const {
    std::string bytes;
    forEachTensor(*this, [&](const Tensor& t) { hashTensor(bytes, t); });
    return io::fnv1aHex(bytes);
}

ModelWeights allocWeights(const ModelConfig& c) {
    ModelWeights w;
    w.config = c;
    w.embedding = Tensor::zeros({c.vocabSize, c.dModel});
    w.posEmbedding = Tensor::zeros({c.maxSeq, c.dModel});
    w.layers.resize(static_cast<size_t>(c.nLayers));
    for (LayerWeights& l : w.layers) {
        l.ln1Gain = Tensor::zeros({c.dModel});
        l.ln1Bias = Tensor::zeros({c.dModel});
        for (int h = 0; h < c.nHeads; ++h) {
            l.wq.push_back(Tensor::zeros({c.dModel, c.dHead}));
            l.wk.push_back(Tensor::zeros({c.dModel, c.dHead}));
            l.wv.push_back(Tensor::zeros({c.dModel, c.dHead}));
            l.wo.push_back(Tensor::zeros({c.dHead, c.dModel}));
        }
        l.ln2Gain = Tensor::zeros({c.dModel});
        l.ln2Bias = Tensor::zeros({c.dModel});
        l.mlpIn = Tensor::zeros({c.dModel, c.dMlp});
        l.mlpInBias = Tensor::zeros({c.dMlp});
        l.mlpOut = Tensor::zeros({c.dMlp, c.dModel});
        l.mlpOutBias = Tensor::zeros({c.dModel});
    }
    w.lnFGain = Tensor::zeros({c.dModel});
    w.lnFBias = Tensor::zeros({c.dModel});
    w.unembedding = Tensor::zeros({c.dModel, c.vocabSize});
    return w;
}

ModelWeights initRandom(const ModelConfig& config, double noiseStd) {
    config.validate();
    ModelWeights w = allocWeights(config);
    std::mt19937_64 rng(config.seed);
    std::normal_distribution<double> gauss(0.0, noiseStd);
    forEachTensorMut(w, [&](Tensor& t) {
        for (double& v : t.values) v = gauss(rng);
    });
    // Layer norms start at identity.
    for (LayerWeights& l : w.layers) {
        for (double& v : l.ln1Gain.values) v = 1.0;
        for (double& v : l.ln1Bias.values) v = 0.0;
        for (double& v : l.ln2Gain.values) v = 1.0;
        for (double& v : l.ln2Bias.values) v = 0.0;
    }
    for (double& v : w.lnFGain.values) v = 1.0;
    for (double& v : w.lnFBias.values) v = 0.0;
    return w;
}

const Tensor& ActivationCache::nodeOutput(const ComputationGraph& g, const NodeId& n) const {
    return record->value(nodeOutputIds[static_cast<size_t>(g.nodeIndex(n))]);
}

const Tensor& ActivationCache::channelInput(const ComputationGraph& g, const NodeId& n,
                                            Channel ch) const {
    TensorId id = channelInputIds[static_cast<size_t>(g.nodeIndex(n) * 4 + static_cast<int>(ch))];
    if (id < 0) throw Error("channel input not cached for " + graph::nodeLabel(n));
    return record->value(id);
}

namespace {
struct PlanIndex {
    // edge index -> replacement tensor (checked against graph)
    std::vector<const Tensor*> edgeRepl;
    std::vector<std::vector<const NodeRowDirective*>> overwrites;  // per node
    std::vector<std::vector<const NodeRowDirective*>> offsets;     // per node

    PlanIndex(const ComputationGraph& g, const PatchPlan& plan, int64_t seq) {
        edgeRepl.assign(g.edges().size(), nullptr);
        overwrites.assign(g.nodes().size(), {});
        offsets.assign(g.nodes().size(), {});
        for (const EdgePatch& p : plan.edgePatches) {
            int idx = g.edgeIndex(p.edge);  // throws on unknown edge
            edgeRepl[static_cast<size_t>(idx)] = &p.replacement;
        }
        for (const NodeRowDirective& d : plan.overwrites) {
            if (d.pos < 0 || d.pos >= seq) throw Error("patch: position out of range");
            auto& slot = overwrites[static_cast<size_t>(g.nodeIndex(d.node))];
            for (const NodeRowDirective* prev : slot)
                if (prev->pos == d.pos)
                    throw Error("patch: duplicate overwrite at " + graph::nodeLabel(d.node) +
                                " pos " + std::to_string(d.pos));
            slot.push_back(&d);
        }
        for (const NodeRowDirective& d : plan.offsets) {
            if (d.pos < 0 || d.pos >= seq) throw Error("patch: position out of range");
            offsets[static_cast<size_t>(g.nodeIndex(d.node))].push_back(&d);
        }
    }
};
}  // namespace

ForwardResult forward(const ModelWeights& w, const ComputationGraph& g,
                      const std::vector<int64_t>& tokens, const PatchPlan& plan) {
    const ModelConfig& c = w.config;
    c.validate();
    if (g.nLayers() != c.nLayers || g.nHeads() != c.nHeads)
        throw Error("forward: graph does not match config");
    int64_t seq = static_cast<int64_t>(tokens.size());
    if (seq < 1 || seq > c.maxSeq) throw Error("forward: sequence length out of range");
    for (int64_t t : tokens)
        if (t < 0 || t >= c.vocabSize)
            throw Error("forward: token id " + std::to_string(t) + " out of range");

    PlanIndex pidx(g, plan, seq);

    auto rec = std::make_shared<ComputeRecord>();
    ComputeRecord& r = *rec;

    ActivationCache cache;
    cache.record = rec;
    cache.nodeOutputIds.assign(g.nodes().size(), -1);
    cache.channelInputIds.assign(g.nodes().size() * 4, -1);

    // Shared weight leaves.
    TensorId embT = r.leaf(w.embedding);
    TensorId posT = r.leaf(w.posEmbedding);
    TensorId unembT = r.leaf(w.unembedding);
    TensorId lnFg = r.leaf(w.lnFGain);
    TensorId lnFb = r.leaf(w.lnFBias);

    // Causal mask: large negative above the diagonal, added pre-softmax.
    Tensor mask = Tensor::zeros({seq, seq});
    for (int64_t i = 0; i < seq; ++i)
        for (int64_t j = i + 1; j < seq; ++j) mask.at(i, j) = -1e30;
    TensorId maskT = r.leaf(mask);

    auto applyNodeDirectives = [&](int nodeIdx, TensorId out) -> TensorId {
        for (const NodeRowDirective* d : pidx.overwrites[static_cast<size_t>(nodeIdx)])
            out = r.overwriteRow(out, d->pos, r.leaf(d->row));
        for (const NodeRowDirective* d : pidx.offsets[static_cast<size_t>(nodeIdx)])
            out = r.addToRow(out, d->pos, r.leaf(d->row));
        return out;
    };

    // Input node: token embeddings plus positions.
    {
        TensorId out;
        if (plan.inputOverride) {
            if (plan.inputOverride->rows() != seq || plan.inputOverride->cols() != c.dModel)
                throw Error("forward: inputOverride shape mismatch");
            out = r.leaf(*plan.inputOverride);
        } else {
            std::vector<int64_t> iota(static_cast<size_t>(seq));
            for (int64_t i = 0; i < seq; ++i) iota[static_cast<size_t>(i)] = i;
            out = r.add(r.embedLookup(embT, tokens), r.embedLookup(posT, iota));
        }
        out = applyNodeDirectives(0, out);
        cache.nodeOutputIds[0] = out;
    }

    // Channel input: canonical-order sum of in-edge source outputs, with
    // per-edge replacements substituted at resolution time.
    auto resolveChannel = [&](const NodeId& dst, Channel ch) -> TensorId {
        const std::vector<int>& in = g.inEdges(dst, ch);
        TensorId sum = -1;
        for (int ei : in) {
            const graph::EdgeId& e = g.edges()[static_cast<size_t>(ei)];
            TensorId term;
            if (pidx.edgeRepl[static_cast<size_t>(ei)]) {
                const Tensor& repl = *pidx.edgeRepl[static_cast<size_t>(ei)];
                if (repl.rows() != seq || repl.cols() != c.dModel)
                    throw Error("patch: edge replacement shape mismatch");
                term = r.leaf(repl);
            } else {
                term = cache.nodeOutputIds[static_cast<size_t>(g.nodeIndex(e.src))];
            }
            sum = (sum < 0) ? term : r.add(sum, term);
        }
        // A single-source channel would alias the source's tensor, making its
        // adjoint the source's total gradient rather than this channel's
        // share. The unit scale gives every channel input its own tape node
        // without changing any bit of the value.
        if (in.size() == 1) sum = r.scale(sum, 1.0);
        cache.channelInputIds[static_cast<size_t>(g.nodeIndex(dst) * 4 + static_cast<int>(ch))] =
            sum;
        return sum;
    };

    double invSqrtDh = 1.0 / std::sqrt(static_cast<double>(c.dHead));

    auto norm = [&](TensorId x, TensorId gain, TensorId bias) {
        return c.linearized ? x : r.layerNorm(x, gain, bias);
    };
    auto activate = [&](TensorId x) { return c.linearized ? x : r.gelu(x); };

    for (int l = 0; l < c.nLayers; ++l) {
        const LayerWeights& lw = w.layers[static_cast<size_t>(l)];
        TensorId ln1g = r.leaf(lw.ln1Gain);
        TensorId ln1b = r.leaf(lw.ln1Bias);
        for (int h = 0; h < c.nHeads; ++h) {
            NodeId node = NodeId::attnHead(l, h);
            TensorId qIn = resolveChannel(node, Channel::Q);
            TensorId kIn = resolveChannel(node, Channel::K);
            TensorId vIn = resolveChannel(node, Channel::V);
            TensorId q = r.matmul(norm(qIn, ln1g, ln1b),
                                  r.leaf(lw.wq[static_cast<size_t>(h)]));
            TensorId k = r.matmul(norm(kIn, ln1g, ln1b),
                                  r.leaf(lw.wk[static_cast<size_t>(h)]));
            TensorId v = r.matmul(norm(vIn, ln1g, ln1b),
                                  r.leaf(lw.wv[static_cast<size_t>(h)]));
            TensorId probs =
                r.softmaxLastDim(r.add(r.scale(r.matmulTB(q, k), invSqrtDh), maskT));
            TensorId out =
                r.matmul(r.matmul(probs, v), r.leaf(lw.wo[static_cast<size_t>(h)]));
            int ni = g.nodeIndex(node);
            cache.nodeOutputIds[static_cast<size_t>(ni)] = applyNodeDirectives(ni, out);
        }
        {
            NodeId node = NodeId::mlp(l);
            TensorId in = resolveChannel(node, Channel::Direct);
            TensorId x = norm(in, r.leaf(lw.ln2Gain), r.leaf(lw.ln2Bias));
            TensorId hmid =
                activate(r.addRow(r.matmul(x, r.leaf(lw.mlpIn)), r.leaf(lw.mlpInBias)));
            TensorId out = r.addRow(r.matmul(hmid, r.leaf(lw.mlpOut)), r.leaf(lw.mlpOutBias));
            int ni = g.nodeIndex(node);
            cache.nodeOutputIds[static_cast<size_t>(ni)] = applyNodeDirectives(ni, out);
        }
    }

    {
        NodeId node = NodeId::logits();
        TensorId in = resolveChannel(node, Channel::Direct);
        TensorId logits = r.matmul(norm(in, lnFg, lnFb), unembT);
        int ni = g.nodeIndex(node);
        logits = applyNodeDirectives(ni, logits);
        cache.nodeOutputIds[static_cast<size_t>(ni)] = logits;
        cache.logitsId = logits;
    }

    ForwardResult res;
    res.logits = rec->value(cache.logitsId);
    res.cache = std::move(cache);
    return res;
}

int decodeConfidence(const Tensor& logits, int64_t pos) {
    if (pos < 0 || pos >= logits.rows()) throw Error("decodeConfidence: position out of range");
    int best = 0;
    double bestV = logits.at(pos, 0);
    for (int cTok = 1; cTok < 100; ++cTok) {
        double v = logits.at(pos, cTok);
        if (v > bestV) {  // ties break toward the lower integer
            bestV = v;
            best = cTok;
        }
    }
    return best;
}

namespace {
constexpr char kMagic[4] = {'C', 'M', 'C', '1'};

void putI64(std::string& out, int64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((static_cast<uint64_t>(v) >> (8 * i)) & 0xff));
}
int64_t getI64(const std::string& in, size_t& off) {
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(static_cast<unsigned char>(in[off + static_cast<size_t>(i)])) << (8 * i);
    off += 8;
    return static_cast<int64_t>(v);
}
}  // namespace

void saveWeights(const std::string& path, const ModelWeights& w) {
    std::string out(kMagic, 4);
    const ModelConfig& c = w.config;
    putI64(out, c.nLayers);
    putI64(out, c.nHeads);
    putI64(out, c.dModel);
    putI64(out, c.dHead);
    putI64(out, c.dMlp);
    putI64(out, c.vocabSize);
    putI64(out, c.maxSeq);
    putI64(out, static_cast<int64_t>(c.seed));
    putI64(out, c.linearized ? 1 : 0);
    forEachTensor(w, [&](const Tensor& t) {
        size_t off = out.size();
        out.resize(off + t.values.size() * sizeof(double));
        std::memcpy(out.data() + off, t.values.data(), t.values.size() * sizeof(double));
    });
    io::atomicWrite(path, out);
}

ModelWeights loadWeights(const std::string& path) {
    std::string in = io::readFile(path);
    if (in.size() < 4 + 9 * 8 || std::memcmp(in.data(), kMagic, 4) != 0)
        throw Error("weight snapshot: bad magic in " + path);
    size_t off = 4;
    ModelConfig c;
    c.nLayers = static_cast<int>(getI64(in, off));
    c.nHeads = static_cast<int>(getI64(in, off));
    c.dModel = getI64(in, off);
    c.dHead = getI64(in, off);
    c.dMlp = getI64(in, off);
    c.vocabSize = getI64(in, off);
    c.maxSeq = getI64(in, off);
    c.seed = static_cast<uint64_t>(getI64(in, off));
    c.linearized = getI64(in, off) != 0;
    c.validate();
    ModelWeights w = allocWeights(c);
    forEachTensorMut(w, [&](Tensor& t) {
        size_t bytes = t.values.size() * sizeof(double);
        if (off + bytes > in.size()) throw Error("weight snapshot: truncated file " + path);
        std::memcpy(t.values.data(), in.data() + off, bytes);
        off += bytes;
    });
    if (off != in.size()) throw Error("weight snapshot: trailing bytes in " + path);
    return w;
}

}  // namespace cmc::model
