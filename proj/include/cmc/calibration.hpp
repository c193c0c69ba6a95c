#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace cmc::calibration {

struct PredictionRecord {
    double confidence = 0.0;  // in [0,1]
    bool correct = false;
};

struct BinStats {
    int binIndex = 0;
    int64_t count = 0;
    double meanConfidence = 0.0;  // 0 for empty bins
    double accuracy = 0.0;
};

struct CalibrationReport {
    double ece = 0.0;
    double brier = 0.0;
    std::vector<BinStats> bins;
    int64_t n = 0;
};

/// Expected calibration error over B equal-width half-open bins on [0,1];
/// confidence exactly 1.0 falls in the top bin, empty bins contribute 0.
double ece(const std::vector<PredictionRecord>& records, int bins = 10);

/// Mean of (confidence - correct)^2.
double brier(const std::vector<PredictionRecord>& records);

/// Per-bin stats for the reliability curve; all B bins returned, empty ones
/// with zero count.
std::vector<BinStats> reliabilityBins(const std::vector<PredictionRecord>& records,
                                      int bins = 10);

CalibrationReport report(const std::vector<PredictionRecord>& records, int bins = 10);

struct Improvement {
    std::optional<double> ecePct;  // empty when the base ECE is 0
    std::optional<double> brierPct;
};

/// 100*(base - after)/base per metric; negative when the metric got worse.
Improvement improvement(const CalibrationReport& base, const CalibrationReport& after);

std::string reportToJson(const CalibrationReport& r);
void writeReportJson(const std::string& path, const CalibrationReport& r);
/// CSV "bin_lo,bin_hi,count,mean_conf,accuracy", one row per bin.
void writeReliabilityCsv(const std::string& path, const CalibrationReport& r);

}  // namespace cmc::calibration
