#pragma once

#include <map>
#include <string>
#include <vector>

#include "cmc/model.hpp"
#include "cmc/tape.hpp"

namespace cmc::signal {

/// Fixed high/low confidence token sets for the target-set logit difference.
struct CandidateSets {
    std::vector<int64_t> high{70, 75, 80, 85, 90, 99};
    std::vector<int64_t> low{0, 10, 15, 20, 25, 30};

    void validate() const;
};

struct ElicitationRecord {
    std::vector<int64_t> questionTokens;
    std::vector<int64_t> modelAnswerTokens;
    std::vector<int64_t> goldAnswerTokens;
    bool correct = false;
    int verbalizedConfidence = 0;  // integer 0..99

    // Raw strings as ingested; empty for synthesized records.
    std::string questionText, modelAnswerText, goldAnswerText;
    std::map<std::string, std::string> metadata;
};

constexpr int64_t kAnswerSlot = -1;  // template placeholder for the answer token
constexpr int64_t kTruthSlot = -2;   // template placeholder for the truth marker

/// Prompt skeleton appended after the question tokens. The truth slot is
/// filled with the marker token paired to the gold answer, so clean and
/// corrupted prompts differ only at the answer slot.
struct PairTemplate {
    std::vector<int64_t> tokens{kAnswerSlot, 0, kTruthSlot, 0};  // [ans][sep][truth][confQ]
    int64_t answerTokenBase = 0;
    int64_t truthTokenBase = 0;
    int64_t answerCount = 0;

    int64_t truthTokenFor(int64_t answerToken) const;
};

struct CounterfactualPair {
    std::vector<int64_t> cleanTokens;
    std::vector<int64_t> corruptTokens;
    int64_t posEnd = 0;
    double tsldClean = 0.0;
    double tsldCorrupt = 0.0;
    double deltaTsld = 0.0;
    int bucket = 0;  // 1|2|3, 0 while unassigned
};

struct StratificationConfig {
    double tau = 1.0;  // logits
};

/// Mean high-set logit minus mean low-set logit at the given position.
double tsld(const Tensor& logits, int64_t pos, const CandidateSets& sets);

/// tsldCorrupt - tsldClean.
double deltaTsld(const CounterfactualPair& pair);

/// Appends the TSLD objective to a forward record and returns the scalar id.
TensorId attachTsldLoss(ComputeRecord& r, TensorId logitsId, int64_t posEnd,
                        const CandidateSets& sets);

/// Builds the truth-injection counterfactual pair for one record and
/// evaluates both TSLD values with single forward passes.
CounterfactualPair buildPair(const ElicitationRecord& record, const PairTemplate& tmpl,
                             const model::ModelWeights& weights,
                             const graph::ComputationGraph& graph, const CandidateSets& sets);

struct Buckets {
    std::vector<size_t> collapse;   // bucket 1: delta <= -tau
    std::vector<size_t> recognize;  // bucket 2: delta >= +tau
    std::vector<size_t> neutral;    // bucket 3
};

/// Assigns each pair's bucket field and returns the index partition.
Buckets stratify(std::vector<CounterfactualPair>& pairs, const StratificationConfig& cfg);

/// Sample Pearson correlation; throws on zero variance.
double pearson(const std::vector<double>& x, const std::vector<double>& y);

}  // namespace cmc::signal
