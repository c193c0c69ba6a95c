#include "cmc/validation.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

#include <json.hpp>

#include "cmc/io_util.hpp"
#include "cmc/kernels.hpp"

namespace cmc::validation {

namespace {

/// Mean of f(pair) over the record set, pair passes run in parallel.
double meanOverPairs(const std::vector<attribution::PairActivations>& pairs,
                     const std::function<double(const attribution::PairActivations&)>& f) {
    if (pairs.empty()) throw Error("validation: empty record set");
    std::vector<double> vals(pairs.size());
    kernels::parallelFor(static_cast<int64_t>(pairs.size()),
                         [&](int64_t i) { vals[static_cast<size_t>(i)] = f(pairs[static_cast<size_t>(i)]); });
    return kernels::pairwiseSum(vals.data(), static_cast<int64_t>(vals.size())) /
           static_cast<double>(vals.size());
}

/// Clean-prompt forward with the source outputs of `corruptEdges` replaced by
/// the corrupt pass's. Both circuit-only and circuit-ablated passes are this
/// with complementary edge sets.
double patchedTsld(const attribution::PairActivations& pa, const model::ModelWeights& w,
                   const graph::ComputationGraph& g, const std::vector<int>& corruptEdges,
                   const signal::CandidateSets& sets) {
    model::PatchPlan plan;
    plan.edgePatches.reserve(corruptEdges.size());
    for (int e : corruptEdges) {
        const graph::EdgeId& ed = g.edges()[static_cast<size_t>(e)];
        plan.edgePatches.push_back({ed, pa.corrupt.nodeOutput(g, ed.src)});
    }
    auto res = model::forward(w, g, pa.cleanTokens, plan);
    return signal::tsld(res.logits, pa.posEnd, sets);
}

std::vector<bool> circuitMask(const graph::ComputationGraph& g, const graph::CircuitSpec& c) {
    std::vector<bool> in(g.edges().size(), false);
    for (int e : c.edgeIndices) {
        if (e < 0 || e >= static_cast<int>(g.edges().size()))
            throw Error("validation: circuit edge index out of range");
        in[static_cast<size_t>(e)] = true;
    }
    return in;
}

Tensor rowAt(const Tensor& t, int64_t pos) {
    Tensor row = Tensor::zeros({1, t.cols()});
    for (int64_t j = 0; j < t.cols(); ++j) row.at(0, j) = t.at(pos, j);
    return row;
}

double jointAblatedTsld(const attribution::PairActivations& pa, const model::ModelWeights& w,
                        const graph::ComputationGraph& g,
                        const std::vector<graph::NodeId>& components,
                        const signal::CandidateSets& sets) {
    model::PatchPlan plan;
    for (const graph::NodeId& n : components)
        plan.overwrites.push_back({n, pa.posEnd, rowAt(pa.corrupt.nodeOutput(g, n), pa.posEnd)});
    auto res = model::forward(w, g, pa.cleanTokens, plan);
    return signal::tsld(res.logits, pa.posEnd, sets);
}

}  // namespace

void ValidationConfig::validate() const {
    lossSets.validate();
    if (curvePoints < 2) throw Error("validation: curvePoints must be >= 2");
    if (ablateUpTo < 0) throw Error("validation: ablateUpTo must be >= 0");
}

double faithfulnessPercentage(double meanClean, double meanCorrupt, double meanCircuitOnly) {
    double denom = meanClean - meanCorrupt;
    if (std::abs(denom) <= 1e-9)
        throw Error("faithfulness: degenerate clean/corrupt separation");
    return (meanCircuitOnly - meanCorrupt) / denom * 100.0;
}

double completenessPercentage(double baselineTsld, double meanAblated) {
    if (baselineTsld == 0.0) throw Error("completeness: zero baseline TSLD");
    return (baselineTsld - meanAblated) / baselineTsld * 100.0;
}

graph::CircuitSpec complementCircuit(const graph::ComputationGraph& g,
                                     const graph::CircuitSpec& circuit) {
    std::vector<bool> in = circuitMask(g, circuit);
    graph::CircuitSpec out;
    for (size_t e = 0; e < in.size(); ++e)
        if (!in[e]) out.edgeIndices.push_back(static_cast<int>(e));
    return out;
}

double circuitOnlyTsld(const attribution::PairActivations& pa, const model::ModelWeights& w,
                       const graph::ComputationGraph& g, const graph::CircuitSpec& circuit,
                       const signal::CandidateSets& sets) {
    return patchedTsld(pa, w, g, complementCircuit(g, circuit).edgeIndices, sets);
}

double circuitAblatedTsld(const attribution::PairActivations& pa, const model::ModelWeights& w,
                          const graph::ComputationGraph& g, const graph::CircuitSpec& circuit,
                          const signal::CandidateSets& sets) {
    circuitMask(g, circuit);  // range check
    return patchedTsld(pa, w, g, circuit.edgeIndices, sets);
}

double faithfulness(const std::vector<attribution::PairActivations>& pairs,
                    const model::ModelWeights& w, const graph::ComputationGraph& g,
                    const graph::CircuitSpec& circuit, const signal::CandidateSets& sets) {
    graph::CircuitSpec comp = complementCircuit(g, circuit);
    double meanOnly = meanOverPairs(pairs, [&](const attribution::PairActivations& pa) {
        return patchedTsld(pa, w, g, comp.edgeIndices, sets);
    });
    double meanClean = meanOverPairs(pairs, [&](const attribution::PairActivations& pa) {
        return signal::tsld(pa.clean.logits(), pa.posEnd, sets);
    });
    double meanCorrupt = meanOverPairs(pairs, [&](const attribution::PairActivations& pa) {
        return signal::tsld(pa.corrupt.logits(), pa.posEnd, sets);
    });
    return faithfulnessPercentage(meanClean, meanCorrupt, meanOnly);
}

CompletenessResult completeness(const std::vector<attribution::PairActivations>& pairs,
                                const model::ModelWeights& w, const graph::ComputationGraph& g,
                                const graph::CircuitSpec& circuit,
                                const signal::CandidateSets& sets) {
    circuitMask(g, circuit);  // range check
    CompletenessResult r;
    r.baselineTsld = meanOverPairs(pairs, [&](const attribution::PairActivations& pa) {
        return signal::tsld(pa.clean.logits(), pa.posEnd, sets);
    });
    double meanAblated = meanOverPairs(pairs, [&](const attribution::PairActivations& pa) {
        return patchedTsld(pa, w, g, circuit.edgeIndices, sets);
    });
    r.percentage = completenessPercentage(r.baselineTsld, meanAblated);
    r.drop = r.baselineTsld - meanAblated;
    return r;
}

double resampleAblateComponent(const attribution::PairActivations& pa,
                               const model::ModelWeights& w, const graph::ComputationGraph& g,
                               const graph::NodeId& component, const signal::CandidateSets& sets) {
    g.nodeIndex(component);  // throws on unknown component
    if (component.kind != graph::NodeKind::Head && component.kind != graph::NodeKind::Mlp)
        throw Error("resampleAblateComponent: component must be a head or an MLP");
    double base = signal::tsld(pa.clean.logits(), pa.posEnd, sets);
    return jointAblatedTsld(pa, w, g, {component}, sets) - base;
}

std::vector<double> incrementalAblation(const std::vector<attribution::PairActivations>& pairs,
                                        const model::ModelWeights& w,
                                        const graph::ComputationGraph& g,
                                        const std::vector<graph::NodeId>& rankedComponents,
                                        int upTo, const signal::CandidateSets& sets) {
    if (upTo < 0 || upTo > static_cast<int>(rankedComponents.size()))
        throw Error("incrementalAblation: upTo out of range");
    std::vector<double> seq;
    seq.reserve(static_cast<size_t>(upTo) + 1);
    for (int j = 0; j <= upTo; ++j) {
        std::vector<graph::NodeId> top(rankedComponents.begin(), rankedComponents.begin() + j);
        seq.push_back(meanOverPairs(pairs, [&](const attribution::PairActivations& pa) {
            return jointAblatedTsld(pa, w, g, top, sets);
        }));
    }
    return seq;
}

std::vector<int64_t> geometricGrid(int64_t maxK, int points) {
    if (maxK < 1) throw Error("geometricGrid: maxK must be >= 1");
    if (points < 2) throw Error("geometricGrid: points must be >= 2");
    std::vector<int64_t> ks;
    double ratio = std::pow(static_cast<double>(maxK), 1.0 / (points - 1));
    for (int i = 0; i < points; ++i) {
        int64_t k = static_cast<int64_t>(std::llround(std::pow(ratio, i)));
        k = std::clamp<int64_t>(k, 1, maxK);
        if (ks.empty() || k > ks.back()) ks.push_back(k);
    }
    if (ks.back() != maxK) ks.push_back(maxK);
    return ks;
}

ValidationReport validate(const std::vector<attribution::PairActivations>& pairs,
                          const model::ModelWeights& w, const graph::ComputationGraph& g,
                          const graph::EdgeScoreMap& edgeScores,
                          const std::vector<graph::NodeId>& rankedComponents,
                          const graph::CircuitSpec& circuit, const ValidationConfig& cfg) {
    cfg.validate();
    if (edgeScores.size() != g.edges().size())
        throw Error("validate: edge score map size mismatch");

    ValidationReport rep;
    rep.faithfulnessCurve.push_back(
        {0, faithfulness(pairs, w, g, graph::CircuitSpec{}, cfg.lossSets)});
    for (int64_t k : geometricGrid(g.edgeCountValue(), cfg.curvePoints)) {
        graph::CircuitSpec topK = g.topKEdges(edgeScores, k);
        rep.faithfulnessCurve.push_back({k, faithfulness(pairs, w, g, topK, cfg.lossSets)});
    }

    rep.completeness = completeness(pairs, w, g, circuit, cfg.lossSets);

    for (const graph::NodeId& n : rankedComponents) {
        double delta = meanOverPairs(pairs, [&](const attribution::PairActivations& pa) {
            return resampleAblateComponent(pa, w, g, n, cfg.lossSets);
        });
        rep.singleAblations.push_back({n, graph::nodeLabel(n), delta});
    }

    int upTo = std::min(cfg.ablateUpTo, static_cast<int>(rankedComponents.size()));
    rep.incrementalTsld = incrementalAblation(pairs, w, g, rankedComponents, upTo, cfg.lossSets);
    return rep;
}

std::string reportToJson(const ValidationReport& r) {
    nlohmann::json j;
    j["faithfulness_curve"] = nlohmann::json::array();
    for (const FaithfulnessPoint& p : r.faithfulnessCurve)
        j["faithfulness_curve"].push_back({{"k", p.k}, {"faithfulness_pct", p.pct}});
    j["completeness"] = {{"baseline_tsld", r.completeness.baselineTsld},
                         {"drop", r.completeness.drop},
                         {"percentage", r.completeness.percentage}};
    j["single_ablations"] = nlohmann::json::array();
    for (const ComponentAblation& a : r.singleAblations)
        j["single_ablations"].push_back({{"component", a.label}, {"delta_tsld", a.deltaTsld}});
    j["incremental_tsld"] = r.incrementalTsld;
    return j.dump(2) + "\n";
}

void writeReportJson(const std::string& path, const ValidationReport& r) {
    io::atomicWrite(path, reportToJson(r));
}

void writeFaithfulnessCsv(const std::string& path, const ValidationReport& r) {
    std::string out = "k,faithfulness_pct\n";
    for (const FaithfulnessPoint& p : r.faithfulnessCurve) {
        if (p.k == 0) continue;
        out += std::to_string(p.k) + "," + io::formatDouble(p.pct) + "\n";
    }
    io::atomicWrite(path, out);
}

}  // namespace cmc::validation
