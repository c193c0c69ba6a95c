#pragma once

#include <string>
#include <vector>

#include "cmc/model.hpp"
#include "cmc/signal.hpp"

namespace cmc::planted {

// Fixed vocabulary layout. Tokens 0..99 verbalize confidence directly.
inline constexpr int64_t kSepToken = 100;
inline constexpr int64_t kConfQueryToken = 101;
inline constexpr int64_t kQuestionTokenBase = 102;
inline constexpr int kQuestionTokenCount = 8;
inline constexpr int64_t kAnswerTokenBase = 110;
inline constexpr int kAnswerCount = 8;
inline constexpr int64_t kTruthTokenBase = 118;
inline constexpr int kQuestionLength = 4;
inline constexpr int64_t kMinVocab = kTruthTokenBase + kAnswerCount;

struct TaskSpec {
    signal::PairTemplate pairTemplate;
    int questionLength = kQuestionLength;
    int64_t answerPos = 0;
    int64_t truthPos = 0;
    int64_t posEnd = 0;
};

struct PlantedCircuit {
    model::ModelWeights weights;
    std::vector<graph::NodeId> trueComponents;  // the head and the MLP
    TaskSpec task;
    double margin = 0.0;
};

/// Builds a model whose only task-relevant machinery is one attention head
/// comparing the answer slot against the truth marker and one MLP turning
/// the comparison into a confidence signal. Calibrated so that every
/// wrong-answer prompt decodes confidence >= 70 while the truth-injected
/// counterpart decodes below 50, with TSLD(clean) >= margin/2 and
/// TSLD(corrupt) <= -margin/2. Throws if the margin cannot be met within
/// a max-|logit| bound of 20.
PlantedCircuit plantOverconfidenceCircuit(const model::ModelConfig& config, double margin = 4.0);

struct RecordGenConfig {
    int count = 256;
    uint64_t seed = 1;
    double matchFraction = 0.05;     // records where the model answers correctly
    double lenientGraderRate = 0.5;  // wrong answers nonetheless labeled correct
};

/// Synthesizes elicitation records against the planted model. Confidence is
/// read off the model's own logits, so it reflects whatever the circuit does.
std::vector<signal::ElicitationRecord> generateRecords(const PlantedCircuit& pc,
                                                       const graph::ComputationGraph& graph,
                                                       const RecordGenConfig& cfg);

std::string tokenName(int64_t token);
int64_t tokenFromName(const std::string& name);

}  // namespace cmc::planted
