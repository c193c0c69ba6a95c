#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "cmc/graph.hpp"
#include "cmc/model.hpp"
#include "cmc/signal.hpp"

namespace cmc::cli {

inline constexpr const char* kToolVersion = "1.0.0";

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;  // validation / runtime failure
inline constexpr int kExitUsage = 2;    // bad flags or missing prior artifact

/// Missing-artifact and argument problems; mapped to exit code 2.
struct UsageError : Error {
    using Error::Error;
};

struct IngestIssue {
    int64_t line = 0;  // 1-based
    std::string message;
};

struct IngestedDataset {
    std::vector<signal::ElicitationRecord> records;
    std::vector<IngestIssue> issues;
    int64_t totalLines = 0;
};

/// Parses JSONL elicitation logs: one object per line with question,
/// model_answer, gold_answer (strings), correct (bool), confidence (int
/// 0..99). Unknown fields land in record metadata. Malformed lines are
/// collected with their line numbers; more than 50% malformed aborts.
IngestedDataset ingestRecords(const std::string& path);

void writeRecordsJsonl(const std::string& path,
                       const std::vector<signal::ElicitationRecord>& records);

struct PipelineConfig {
    model::ModelConfig model;
    uint64_t seed = 1;
    double tau = 1.0;
    double margin = 4.0;
    int igSteps = 5;
    int topK = 10;  // intervention targets
    int bins = 10;
    int recordCount = 256;
    int maxPairs = 32;
    int curvePoints = 20;
    int ablateUpTo = 4;
    std::vector<double> alphaGrid;  // empty selects the default 0.1..1.0 grid

    void validate() const;
    std::string toJson() const;
    static PipelineConfig fromJson(const std::string& text);
    static PipelineConfig load(const std::string& path);
    std::string hash() const;  // FNV-1a over the canonical JSON form
};

struct RunManifest {
    std::string toolVersion = kToolVersion;
    std::string command;
    std::string configHash;
    std::string modelChecksum;
    uint64_t seed = 0;
    std::string timestamp;  // honors SOURCE_DATE_EPOCH for reproducible runs
    std::vector<std::string> inputs;
    std::vector<std::string> outputs;
};

RunManifest makeManifest(const PipelineConfig& cfg, const std::string& command);
void writeManifest(const std::string& path, const RunManifest& m);

/// CSV "layer,component,score" with one row per component (heads then the
/// MLP per layer), scores taken from the ranking.
void writeHeatmapCsv(const std::string& path, const graph::ComputationGraph& g,
                     const graph::ComponentRanking& ranking);

/// Counterfactual pairs for all wrong-answer records, keeping the bucket-1
/// subset (deltaTsld <= -tau) up to maxPairs, in record order.
std::vector<signal::CounterfactualPair> bucket1Pairs(
    const model::ModelWeights& w, const graph::ComputationGraph& g,
    const std::vector<signal::ElicitationRecord>& records, const signal::PairTemplate& tmpl,
    double tau, int maxPairs);

// Pipeline commands. Each writes its artifacts plus a manifest into outDir
// and throws UsageError when a required prior artifact is missing.
void cmdSynthesize(const PipelineConfig& cfg, const std::string& outDir);
void cmdAttribute(const PipelineConfig& cfg, const std::string& outDir);
void cmdValidate(const PipelineConfig& cfg, const std::string& outDir);
void cmdIntervene(const PipelineConfig& cfg, const std::string& outDir);
void cmdCalibrate(const PipelineConfig& cfg, const std::string& outDir,
                  const std::optional<std::string>& recordsPath);
void cmdReport(const PipelineConfig& cfg, const std::string& outDir);

}  // namespace cmc::cli
