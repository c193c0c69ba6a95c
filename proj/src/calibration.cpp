#include "cmc/calibration.hpp"

#include <cmath>

#include <json.hpp>

#include "cmc/io_util.hpp"
#include "cmc/tensor.hpp"

namespace cmc::calibration {

namespace {

int binOf(double confidence, int bins) {
    int b = static_cast<int>(std::floor(confidence * bins));
    if (b >= bins) b = bins - 1;  // confidence exactly 1.0 lands in the top bin
    if (b < 0) b = 0;
    return b;
}

void checkRecords(const std::vector<PredictionRecord>& records, int bins) {
    if (records.empty()) throw Error("calibration: empty record set");
    if (bins < 1) throw Error("calibration: bins must be >= 1");
    for (const PredictionRecord& r : records)
        if (r.confidence < 0.0 || r.confidence > 1.0)
            throw Error("calibration: confidence outside [0,1]");
}

}  // namespace

std::vector<BinStats> reliabilityBins(const std::vector<PredictionRecord>& records, int bins) {
    checkRecords(records, bins);
    std::vector<BinStats> out(static_cast<size_t>(bins));
    std::vector<double> confSum(static_cast<size_t>(bins), 0.0);
    std::vector<int64_t> hits(static_cast<size_t>(bins), 0);
    for (int b = 0; b < bins; ++b) out[static_cast<size_t>(b)].binIndex = b;
    for (const PredictionRecord& r : records) {
        size_t b = static_cast<size_t>(binOf(r.confidence, bins));
        ++out[b].count;
        confSum[b] += r.confidence;
        if (r.correct) ++hits[b];
    }
    for (size_t b = 0; b < out.size(); ++b) {
        if (out[b].count == 0) continue;
        out[b].meanConfidence = confSum[b] / static_cast<double>(out[b].count);
        out[b].accuracy = static_cast<double>(hits[b]) / static_cast<double>(out[b].count);
    }
    return out;
}

double ece(const std::vector<PredictionRecord>& records, int bins) {
    std::vector<BinStats> stats = reliabilityBins(records, bins);
    double n = static_cast<double>(records.size());
    double sum = 0.0;
    for (const BinStats& b : stats)
        sum += static_cast<double>(b.count) / n * std::abs(b.accuracy - b.meanConfidence);
    return sum;
}

double brier(const std::vector<PredictionRecord>& records) {
    checkRecords(records, 1);
    double sum = 0.0;
    for (const PredictionRecord& r : records) {
        double d = r.confidence - (r.correct ? 1.0 : 0.0);
        sum += d * d;
    }
    return sum / static_cast<double>(records.size());
}

CalibrationReport report(const std::vector<PredictionRecord>& records, int bins) {
    CalibrationReport r;
    r.bins = reliabilityBins(records, bins);
    r.brier = brier(records);
    r.n = static_cast<int64_t>(records.size());
    double sum = 0.0;
    for (const BinStats& b : r.bins)
        sum += static_cast<double>(b.count) / static_cast<double>(r.n) *
               std::abs(b.accuracy - b.meanConfidence);
    r.ece = sum;
    return r;
}

Improvement improvement(const CalibrationReport& base, const CalibrationReport& after) {
    Improvement imp;
    if (base.ece > 0.0) imp.ecePct = 100.0 * (base.ece - after.ece) / base.ece;
    if (base.brier > 0.0) imp.brierPct = 100.0 * (base.brier - after.brier) / base.brier;
    return imp;
}

std::string reportToJson(const CalibrationReport& r) {
    nlohmann::json j;
    j["ece"] = r.ece;
    j["brier"] = r.brier;
    j["n"] = r.n;
    j["bins"] = nlohmann::json::array();
    int bins = static_cast<int>(r.bins.size());
    for (const BinStats& b : r.bins)
        j["bins"].push_back({{"bin_lo", static_cast<double>(b.binIndex) / bins},
                             {"bin_hi", static_cast<double>(b.binIndex + 1) / bins},
                             {"count", b.count},
                             {"mean_conf", b.meanConfidence},
                             {"accuracy", b.accuracy}});
    return j.dump(2) + "\n";
}

void writeReportJson(const std::string& path, const CalibrationReport& r) {
    io::atomicWrite(path, reportToJson(r));
}

void writeReliabilityCsv(const std::string& path, const CalibrationReport& r) {
    std::string out = "bin_lo,bin_hi,count,mean_conf,accuracy\n";
    int bins = static_cast<int>(r.bins.size());
    for (const BinStats& b : r.bins) {
        out += io::formatDouble(static_cast<double>(b.binIndex) / bins) + "," +
               io::formatDouble(static_cast<double>(b.binIndex + 1) / bins) + "," +
               std::to_string(b.count) + "," + io::formatDouble(b.meanConfidence) + "," +
               io::formatDouble(b.accuracy) + "\n";
    }
    io::atomicWrite(path, out);
}

}  // namespace cmc::calibration
