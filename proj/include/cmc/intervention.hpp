#pragma once

#include <optional>

#include "cmc/attribution.hpp"
#include "cmc/calibration.hpp"
#include "cmc/graph.hpp"
#include "cmc/model.hpp"
#include "cmc/signal.hpp"

namespace cmc::intervention {

enum class Mode { MeanAblation, Steering };

/// Mean corrupt-pass output of one component at posEnd over the source
/// records; substituting it suppresses the overconfidence signal globally.
struct ReferenceMean {
    graph::NodeId component;
    Tensor muRef;  // [1, outputDim]
    int64_t n = 0;
};

/// Mean clean-minus-corrupt output difference at posEnd; the direction along
/// which the model expresses unwarranted confidence.
struct SteeringVector {
    graph::NodeId component;
    Tensor vConf;  // [1, outputDim]
    int64_t n = 0;
};

struct InterventionPlan {
    Mode mode = Mode::MeanAblation;
    std::vector<ReferenceMean> means;     // mean-ablation targets
    std::vector<SteeringVector> vectors;  // steering targets
    std::optional<double> alpha;          // present iff mode == Steering

    void validate(const graph::ComputationGraph& g) const;
};

ReferenceMean computeReferenceMean(const std::vector<attribution::PairActivations>& sources,
                                   const graph::ComputationGraph& g,
                                   const graph::NodeId& component);

SteeringVector computeSteeringVector(const std::vector<attribution::PairActivations>& sources,
                                     const graph::ComputationGraph& g,
                                     const graph::NodeId& component);

/// Forward pass with the plan applied at position tokens.size()-1: mean
/// ablation overwrites each target's output row with muRef; steering
/// subtracts alpha * vConf from it.
Tensor applyIntervention(const model::ModelWeights& w, const graph::ComputationGraph& g,
                         const std::vector<int64_t>& tokens, const InterventionPlan& plan);

struct SweepPoint {
    double alpha = 0.0;
    calibration::CalibrationReport report;
};

struct SweepResult {
    calibration::CalibrationReport baseline;  // no intervention
    std::vector<SweepPoint> points;
};

/// Default sweep grid 0.1 .. 1.0 in steps of 0.1.
std::vector<double> defaultAlphas();

/// For each alpha, decodes post-steering confidence on every record's clean
/// prompt and scores it against the record's correctness label. The steering
/// vectors are fixed inputs (computed from bucket-1 records once); the
/// evaluation set covers all records.
SweepResult alphaSweep(const model::ModelWeights& w, const graph::ComputationGraph& g,
                       const std::vector<signal::ElicitationRecord>& evalRecords,
                       const signal::PairTemplate& tmpl,
                       const std::vector<SteeringVector>& vectors,
                       const std::vector<double>& alphas, int bins = 10);

std::string planToJson(const InterventionPlan& plan);
InterventionPlan planFromJson(const std::string& text);
void writePlanJson(const std::string& path, const InterventionPlan& plan);

/// CSV "alpha,ece,brier,ece_improvement_pct,brier_improvement_pct".
void writeSweepCsv(const std::string& path, const SweepResult& sweep);

}  // namespace cmc::intervention
