#pragma once

#include "cmc/attribution.hpp"
#include "cmc/graph.hpp"
#include "cmc/model.hpp"
#include "cmc/signal.hpp"

namespace cmc::validation {

struct ValidationConfig {
    signal::CandidateSets lossSets;
    int curvePoints = 20;  // faithfulness k-grid size (geometric, 1..|E|)
    int ablateUpTo = 4;    // incremental ablation depth

    void validate() const;
};

struct FaithfulnessPoint {
    int64_t k = 0;
    double pct = 0.0;
};

struct ComponentAblation {
    graph::NodeId node;
    std::string label;
    double deltaTsld = 0.0;  // mean over pairs, ablated minus clean
};

struct CompletenessResult {
    double baselineTsld = 0.0;
    double drop = 0.0;
    double percentage = 0.0;
};

struct ValidationReport {
    std::vector<FaithfulnessPoint> faithfulnessCurve;  // k=0 row first
    CompletenessResult completeness;
    std::vector<ComponentAblation> singleAblations;
    std::vector<double> incrementalTsld;  // length upTo+1, [0] = baseline
};

graph::CircuitSpec complementCircuit(const graph::ComputationGraph& g,
                                     const graph::CircuitSpec& circuit);

/// Forward pass where in-circuit edges carry the clean source outputs and
/// every other edge carries the corrupt ones; TSLD read at posEnd.
double circuitOnlyTsld(const attribution::PairActivations& pa, const model::ModelWeights& w,
                       const graph::ComputationGraph& g, const graph::CircuitSpec& circuit,
                       const signal::CandidateSets& sets);

/// Complement pass: in-circuit edges corrupted, the rest clean.
double circuitAblatedTsld(const attribution::PairActivations& pa, const model::ModelWeights& w,
                          const graph::ComputationGraph& g, const graph::CircuitSpec& circuit,
                          const signal::CandidateSets& sets);

/// The two percentages with means already reduced; exposed so the formulas
/// can be checked against hand fixtures directly.
double faithfulnessPercentage(double meanClean, double meanCorrupt, double meanCircuitOnly);
double completenessPercentage(double baselineTsld, double meanAblated);

/// (mean circuitOnly - mean corrupt) / (mean clean - mean corrupt) x 100,
/// means over the record set.
double faithfulness(const std::vector<attribution::PairActivations>& pairs,
                    const model::ModelWeights& w, const graph::ComputationGraph& g,
                    const graph::CircuitSpec& circuit, const signal::CandidateSets& sets);

/// percentage = (mean clean - mean ablated) / mean clean x 100, where the
/// ablated pass corrupts exactly the in-circuit edges.
CompletenessResult completeness(const std::vector<attribution::PairActivations>& pairs,
                                const model::ModelWeights& w, const graph::ComputationGraph& g,
                                const graph::CircuitSpec& circuit,
                                const signal::CandidateSets& sets);

/// Clean pass with the component's posEnd output row replaced by the corrupt
/// pass's row; returns TSLD(ablated) - TSLD(clean).
double resampleAblateComponent(const attribution::PairActivations& pa,
                               const model::ModelWeights& w, const graph::ComputationGraph& g,
                               const graph::NodeId& component, const signal::CandidateSets& sets);

/// Mean TSLD after jointly resample-ablating the top-1, top-2, ..., top-upTo
/// components; element 0 is the unablated baseline, so length is upTo+1.
std::vector<double> incrementalAblation(const std::vector<attribution::PairActivations>& pairs,
                                        const model::ModelWeights& w,
                                        const graph::ComputationGraph& g,
                                        const std::vector<graph::NodeId>& rankedComponents,
                                        int upTo, const signal::CandidateSets& sets);

/// Ascending k values from 1 to maxK, geometrically spaced, deduplicated.
std::vector<int64_t> geometricGrid(int64_t maxK, int points);

/// Full battery: faithfulness curve over the k-grid of top-score circuits,
/// completeness of the given circuit, per-component single ablations for the
/// ranked components, and the incremental-ablation sequence.
ValidationReport validate(const std::vector<attribution::PairActivations>& pairs,
                          const model::ModelWeights& w, const graph::ComputationGraph& g,
                          const graph::EdgeScoreMap& edgeScores,
                          const std::vector<graph::NodeId>& rankedComponents,
                          const graph::CircuitSpec& circuit, const ValidationConfig& cfg);

std::string reportToJson(const ValidationReport& r);
void writeReportJson(const std::string& path, const ValidationReport& r);
/// CSV "k,faithfulness_pct"; rows start at k=1.
void writeFaithfulnessCsv(const std::string& path, const ValidationReport& r);

}  // namespace cmc::validation
