// Pipeline driver: synthesize -> attribute -> validate -> intervene ->
// calibrate -> report, each subcommand resumable from on-disk artifacts.
#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "cmc/cli_io.hpp"
#include "cmc/kernels.hpp"

namespace {

std::optional<uint64_t> envU64(const char* name) {
    const char* v = std::getenv(name);
    if (!v || !*v) return std::nullopt;
    char* end = nullptr;
    unsigned long long parsed = std::strtoull(v, &end, 10);
    if (end == v || *end) return std::nullopt;
    return parsed;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"planted-circuit confidence analysis pipeline"};
    app.require_subcommand(1);

    std::string configPath, outDir = "out", recordsPath, alphaGridCsv;
    uint64_t seed = 0;
    double tau = 0.0;
    int topK = 0, bins = 0, workers = 0;

    app.add_option("--config", configPath, "pipeline config JSON");
    app.add_option("--out", outDir, "artifact directory");
    auto* seedOpt = app.add_option("--seed", seed, "RNG seed (overrides CMC_SEED)");
    auto* tauOpt = app.add_option("--tau", tau, "bucket-1 threshold");
    auto* alphaOpt = app.add_option("--alpha-grid", alphaGridCsv, "comma-separated alphas");
    auto* topKOpt = app.add_option("--top-k", topK, "intervention target count");
    auto* binsOpt = app.add_option("--bins", bins, "calibration bins");
    auto* workersOpt = app.add_option("--workers", workers, "thread count (overrides CMC_WORKERS)");

    auto* cSynth = app.add_subcommand("synthesize", "build the planted model and record set");
    auto* cAttr = app.add_subcommand("attribute", "bucket-1 edge attribution run");
    auto* cValid = app.add_subcommand("validate", "faithfulness/completeness/ablation battery");
    auto* cInter = app.add_subcommand("intervene", "steering plans and the alpha sweep");
    auto* cCalib = app.add_subcommand("calibrate", "calibration report from elicitation records");
    auto* cReport = app.add_subcommand("report", "render plot-ready CSV bundles");
    auto* cPipe = app.add_subcommand("pipeline", "run every stage in order");
    cCalib->add_option("--records", recordsPath, "external JSONL elicitation log");
    // Shared flags may appear after the subcommand name.
    for (CLI::App* sub : {cSynth, cAttr, cValid, cInter, cCalib, cReport, cPipe})
        sub->fallthrough();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? cmc::cli::kExitOk : cmc::cli::kExitUsage;
    }

    try {
        cmc::cli::PipelineConfig cfg;
        if (!configPath.empty()) cfg = cmc::cli::PipelineConfig::load(configPath);

        if (auto v = envU64("CMC_SEED")) cfg.seed = *v;
        if (*seedOpt) cfg.seed = seed;
        if (*tauOpt) cfg.tau = tau;
        if (*topKOpt) cfg.topK = topK;
        if (*binsOpt) cfg.bins = bins;
        if (*alphaOpt) {
            cfg.alphaGrid.clear();
            std::string rest = alphaGridCsv;
            while (!rest.empty()) {
                size_t comma = rest.find(',');
                cfg.alphaGrid.push_back(std::stod(rest.substr(0, comma)));
                rest = comma == std::string::npos ? "" : rest.substr(comma + 1);
            }
        }

        int nThreads = 1;
        if (auto v = envU64("CMC_WORKERS")) nThreads = static_cast<int>(*v);
        if (*workersOpt) nThreads = workers;
        cmc::kernels::setWorkers(nThreads);

        std::optional<std::string> records;
        if (!recordsPath.empty()) records = recordsPath;

        if (cSynth->parsed() || cPipe->parsed()) cmc::cli::cmdSynthesize(cfg, outDir);
        if (cAttr->parsed() || cPipe->parsed()) cmc::cli::cmdAttribute(cfg, outDir);
        if (cValid->parsed() || cPipe->parsed()) cmc::cli::cmdValidate(cfg, outDir);
        if (cInter->parsed() || cPipe->parsed()) cmc::cli::cmdIntervene(cfg, outDir);
        if (cCalib->parsed() || cPipe->parsed()) cmc::cli::cmdCalibrate(cfg, outDir, records);
        if (cReport->parsed() || cPipe->parsed()) cmc::cli::cmdReport(cfg, outDir);
        return cmc::cli::kExitOk;
    } catch (const cmc::cli::UsageError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return cmc::cli::kExitUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return cmc::cli::kExitFailure;
    }
}
