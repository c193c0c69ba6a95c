#include "cmc/cli_io.hpp"

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "cmc/attribution.hpp"
#include "cmc/calibration.hpp"
#include "cmc/intervention.hpp"
#include "cmc/io_util.hpp"
#include "cmc/planted.hpp"
#include "cmc/validation.hpp"

namespace cmc::cli {

namespace {

namespace fs = std::filesystem;

std::string joinTokens(const std::vector<int64_t>& toks) {
    std::string out;
    for (size_t i = 0; i < toks.size(); ++i) {
        if (i) out += ' ';
        out += planted::tokenName(toks[i]);
    }
    return out;
}

/// Space-separated token names back to ids; empty result when any word is
/// not part of the toy vocabulary (externally produced logs).
std::vector<int64_t> tokensFromText(const std::string& text) {
    std::vector<int64_t> toks;
    std::istringstream in(text);
    std::string word;
    while (in >> word) {
        try {
            toks.push_back(planted::tokenFromName(word));
        } catch (const Error&) {
            return {};
        }
    }
    return toks;
}

std::string artifactPath(const std::string& outDir, const std::string& name) {
    return (fs::path(outDir) / name).string();
}

std::string requireArtifact(const std::string& outDir, const std::string& name,
                            const std::string& producer) {
    std::string p = artifactPath(outDir, name);
    if (!io::fileExists(p))
        throw UsageError("missing artifact " + p + "; run " + producer + " first");
    return p;
}

std::string isoTimestamp() {
    std::time_t t;
    if (const char* e = std::getenv("SOURCE_DATE_EPOCH"))
        t = static_cast<std::time_t>(std::strtoll(e, nullptr, 10));
    else
        t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

struct LoadedRun {
    model::ModelWeights weights;
    graph::ComputationGraph graph;
    std::vector<signal::ElicitationRecord> records;
    planted::TaskSpec task;
};

/// Rebuilds the task template for the fixed toy vocabulary; matches the one
/// plantOverconfidenceCircuit produces.
planted::TaskSpec toyTask(int questionLength) {
    planted::TaskSpec t;
    t.pairTemplate.tokens = {signal::kAnswerSlot, planted::kSepToken, signal::kTruthSlot,
                             planted::kConfQueryToken};
    t.pairTemplate.answerTokenBase = planted::kAnswerTokenBase;
    t.pairTemplate.truthTokenBase = planted::kTruthTokenBase;
    t.pairTemplate.answerCount = planted::kAnswerCount;
    t.questionLength = questionLength;
    t.answerPos = questionLength;
    t.truthPos = questionLength + 2;
    t.posEnd = questionLength + 3;
    return t;
}

LoadedRun loadRun(const PipelineConfig& cfg, const std::string& outDir) {
    std::string modelPath = requireArtifact(outDir, "model.bin", "synthesize");
    std::string recPath = requireArtifact(outDir, "records.jsonl", "synthesize");
    LoadedRun run{model::loadWeights(modelPath),
                  graph::ComputationGraph(cfg.model.nLayers, cfg.model.nHeads),
                  {},
                  toyTask(planted::kQuestionLength)};
    IngestedDataset ds = ingestRecords(recPath);
    if (!ds.issues.empty())
        throw Error("records.jsonl is corrupt: line " + std::to_string(ds.issues[0].line) + ": " +
                    ds.issues[0].message);
    run.records = std::move(ds.records);
    return run;
}

graph::EdgeScoreMap readEdgeScoresCsv(const std::string& path,
                                      const graph::ComputationGraph& g) {
    std::istringstream in(io::readFile(path));
    std::string line;
    if (!std::getline(in, line) || line != "src,dst,channel,score")
        throw Error("edge_scores.csv: unexpected header");
    graph::EdgeScoreMap scores;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        size_t comma = line.rfind(',');
        if (comma == std::string::npos) throw Error("edge_scores.csv: malformed row");
        scores.push_back(std::stod(line.substr(comma + 1)));
    }
    if (scores.size() != g.edges().size())
        throw Error("edge_scores.csv: row count does not match the graph");
    return scores;
}

std::vector<attribution::PairActivations> cacheAll(
    const std::vector<signal::CounterfactualPair>& pairs, const model::ModelWeights& w,
    const graph::ComputationGraph& g) {
    std::vector<attribution::PairActivations> pas;
    pas.reserve(pairs.size());
    for (const signal::CounterfactualPair& p : pairs) pas.push_back(attribution::cachePair(p, w, g));
    return pas;
}

void finishManifest(RunManifest m, const std::string& outDir, const std::string& name) {
    std::sort(m.inputs.begin(), m.inputs.end());
    std::sort(m.outputs.begin(), m.outputs.end());
    writeManifest(artifactPath(outDir, name), m);
}

}  // namespace

IngestedDataset ingestRecords(const std::string& path) {
    if (!io::fileExists(path)) throw UsageError("no such file: " + path);
    std::istringstream in(io::readFile(path));
    IngestedDataset ds;
    std::string line;
    for (int64_t lineNo = 1; std::getline(in, line); ++lineNo) {
        if (line.empty()) continue;
        ++ds.totalLines;
        try {
            nlohmann::json j = nlohmann::json::parse(line);
            signal::ElicitationRecord rec;
            rec.questionText = j.at("question").get<std::string>();
            rec.modelAnswerText = j.at("model_answer").get<std::string>();
            rec.goldAnswerText = j.at("gold_answer").get<std::string>();
            rec.correct = j.at("correct").get<bool>();
            if (!j.at("confidence").is_number_integer())
                throw Error("confidence must be an integer");
            int conf = j.at("confidence").get<int>();
            if (conf < 0 || conf > 99) throw Error("confidence outside 0..99");
            rec.verbalizedConfidence = conf;
            rec.questionTokens = tokensFromText(rec.questionText);
            rec.modelAnswerTokens = tokensFromText(rec.modelAnswerText);
            rec.goldAnswerTokens = tokensFromText(rec.goldAnswerText);
            for (const auto& [key, value] : j.items()) {
                if (key == "question" || key == "model_answer" || key == "gold_answer" ||
                    key == "correct" || key == "confidence")
                    continue;
                rec.metadata[key] = value.dump();
            }
            ds.records.push_back(std::move(rec));
        } catch (const std::exception& e) {
            ds.issues.push_back({lineNo, e.what()});
        }
    }
    if (ds.totalLines > 0 && 2 * static_cast<int64_t>(ds.issues.size()) > ds.totalLines)
        throw Error(path + ": more than half of " + std::to_string(ds.totalLines) +
                    " lines are malformed");
    return ds;
}

void writeRecordsJsonl(const std::string& path,
                       const std::vector<signal::ElicitationRecord>& records) {
    std::string out;
    for (const signal::ElicitationRecord& r : records) {
        nlohmann::json j;
        j["question"] = r.questionText.empty() ? joinTokens(r.questionTokens) : r.questionText;
        j["model_answer"] =
            r.modelAnswerText.empty() ? joinTokens(r.modelAnswerTokens) : r.modelAnswerText;
        j["gold_answer"] =
            r.goldAnswerText.empty() ? joinTokens(r.goldAnswerTokens) : r.goldAnswerText;
        j["correct"] = r.correct;
        j["confidence"] = r.verbalizedConfidence;
        out += j.dump() + "\n";
    }
    io::atomicWrite(path, out);
}

void PipelineConfig::validate() const {
    model.validate();
    if (tau <= 0.0) throw Error("config: tau must be positive");
    if (margin <= 0.0) throw Error("config: margin must be positive");
    if (igSteps < 1) throw Error("config: igSteps must be >= 1");
    if (topK < 1) throw Error("config: topK must be >= 1");
    if (bins < 1) throw Error("config: bins must be >= 1");
    if (recordCount < 1) throw Error("config: recordCount must be >= 1");
    if (maxPairs < 1) throw Error("config: maxPairs must be >= 1");
    if (curvePoints < 2) throw Error("config: curvePoints must be >= 2");
    if (ablateUpTo < 0) throw Error("config: ablateUpTo must be >= 0");
    for (double a : alphaGrid)
        if (a < 0.0 || a > 1.0) throw Error("config: alpha outside [0,1]");
}

std::string PipelineConfig::toJson() const {
    nlohmann::json j;
    j["model"] = {{"n_layers", model.nLayers},   {"n_heads", model.nHeads},
                  {"d_model", model.dModel},     {"d_head", model.dHead},
                  {"d_mlp", model.dMlp},         {"vocab_size", model.vocabSize},
                  {"max_seq", model.maxSeq}};
    j["seed"] = seed;
    j["tau"] = tau;
    j["margin"] = margin;
    j["ig_steps"] = igSteps;
    j["top_k"] = topK;
    j["bins"] = bins;
    j["record_count"] = recordCount;
    j["max_pairs"] = maxPairs;
    j["curve_points"] = curvePoints;
    j["ablate_up_to"] = ablateUpTo;
    j["alpha_grid"] = alphaGrid;
    return j.dump(2) + "\n";
}

PipelineConfig PipelineConfig::fromJson(const std::string& text) {
    nlohmann::json j = nlohmann::json::parse(text, nullptr, false);
    if (j.is_discarded()) throw Error("pipeline config: malformed JSON");
    PipelineConfig c;
    if (j.contains("model")) {
        const auto& m = j["model"];
        if (m.contains("n_layers")) c.model.nLayers = m["n_layers"].get<int>();
        if (m.contains("n_heads")) c.model.nHeads = m["n_heads"].get<int>();
        if (m.contains("d_model")) c.model.dModel = m["d_model"].get<int64_t>();
        if (m.contains("d_head")) c.model.dHead = m["d_head"].get<int64_t>();
        if (m.contains("d_mlp")) c.model.dMlp = m["d_mlp"].get<int64_t>();
        if (m.contains("vocab_size")) c.model.vocabSize = m["vocab_size"].get<int64_t>();
        if (m.contains("max_seq")) c.model.maxSeq = m["max_seq"].get<int64_t>();
    }
    if (j.contains("seed")) c.seed = j["seed"].get<uint64_t>();
    if (j.contains("tau")) c.tau = j["tau"].get<double>();
    if (j.contains("margin")) c.margin = j["margin"].get<double>();
    if (j.contains("ig_steps")) c.igSteps = j["ig_steps"].get<int>();
    if (j.contains("top_k")) c.topK = j["top_k"].get<int>();
    if (j.contains("bins")) c.bins = j["bins"].get<int>();
    if (j.contains("record_count")) c.recordCount = j["record_count"].get<int>();
    if (j.contains("max_pairs")) c.maxPairs = j["max_pairs"].get<int>();
    if (j.contains("curve_points")) c.curvePoints = j["curve_points"].get<int>();
    if (j.contains("ablate_up_to")) c.ablateUpTo = j["ablate_up_to"].get<int>();
    if (j.contains("alpha_grid")) c.alphaGrid = j["alpha_grid"].get<std::vector<double>>();
    c.validate();
    return c;
}

PipelineConfig PipelineConfig::load(const std::string& path) {
    if (!io::fileExists(path)) throw UsageError("no such config file: " + path);
    return fromJson(io::readFile(path));
}

std::string PipelineConfig::hash() const { return io::fnv1aHex(toJson()); }

RunManifest makeManifest(const PipelineConfig& cfg, const std::string& command) {
    RunManifest m;
    m.command = command;
    m.configHash = cfg.hash();
    m.seed = cfg.seed;
    m.timestamp = isoTimestamp();
    return m;
}

void writeManifest(const std::string& path, const RunManifest& m) {
    nlohmann::json j;
    j["tool_version"] = m.toolVersion;
    j["command"] = m.command;
    j["config_hash"] = m.configHash;
    j["model_checksum"] = m.modelChecksum;
    j["seed"] = m.seed;
    j["timestamp"] = m.timestamp;
    j["inputs"] = m.inputs;
    j["outputs"] = m.outputs;
    io::atomicWrite(path, j.dump(2) + "\n");
}

void writeHeatmapCsv(const std::string& path, const graph::ComputationGraph& g,
                     const graph::ComponentRanking& ranking) {
    std::vector<double> byNode(g.nodes().size(), 0.0);
    for (const graph::ComponentScore& c : ranking)
        byNode[static_cast<size_t>(g.nodeIndex(c.node))] = c.score;
    std::string out = "layer,component,score\n";
    for (int l = 0; l < g.nLayers(); ++l) {
        for (int h = 0; h < g.nHeads(); ++h) {
            graph::NodeId n = graph::NodeId::attnHead(l, h);
            out += std::to_string(l) + "," + graph::nodeLabel(n) + "," +
                   io::formatDouble(byNode[static_cast<size_t>(g.nodeIndex(n))]) + "\n";
        }
        graph::NodeId n = graph::NodeId::mlp(l);
        out += std::to_string(l) + "," + graph::nodeLabel(n) + "," +
               io::formatDouble(byNode[static_cast<size_t>(g.nodeIndex(n))]) + "\n";
    }
    io::atomicWrite(path, out);
}

std::vector<signal::CounterfactualPair> bucket1Pairs(
    const model::ModelWeights& w, const graph::ComputationGraph& g,
    const std::vector<signal::ElicitationRecord>& records, const signal::PairTemplate& tmpl,
    double tau, int maxPairs) {
    std::vector<signal::CounterfactualPair> pairs;
    signal::CandidateSets sets;
    for (const signal::ElicitationRecord& rec : records) {
        if (rec.correct) continue;
        if (static_cast<int>(pairs.size()) >= maxPairs) break;
        signal::CounterfactualPair p = signal::buildPair(rec, tmpl, w, g, sets);
        if (p.deltaTsld <= -tau) {
            p.bucket = 1;
            pairs.push_back(std::move(p));
        }
    }
    return pairs;
}

void cmdSynthesize(const PipelineConfig& cfg, const std::string& outDir) {
    cfg.validate();
    fs::create_directories(outDir);
    model::ModelConfig mc = cfg.model;
    mc.seed = cfg.seed;
    planted::PlantedCircuit pc = planted::plantOverconfidenceCircuit(mc, cfg.margin);
    graph::ComputationGraph g(mc.nLayers, mc.nHeads);
    planted::RecordGenConfig rc;
    rc.count = cfg.recordCount;
    rc.seed = cfg.seed;
    std::vector<signal::ElicitationRecord> records = planted::generateRecords(pc, g, rc);

    model::saveWeights(artifactPath(outDir, "model.bin"), pc.weights);
    writeRecordsJsonl(artifactPath(outDir, "records.jsonl"), records);

    RunManifest m = makeManifest(cfg, "synthesize");
    m.modelChecksum = pc.weights.checksum();
    m.outputs = {artifactPath(outDir, "model.bin"), artifactPath(outDir, "records.jsonl")};
    finishManifest(std::move(m), outDir, "manifest_synthesize.json");
}

void cmdAttribute(const PipelineConfig& cfg, const std::string& outDir) {
    cfg.validate();
    LoadedRun run = loadRun(cfg, outDir);
    std::vector<signal::CounterfactualPair> pairs = bucket1Pairs(
        run.weights, run.graph, run.records, run.task.pairTemplate, cfg.tau, cfg.maxPairs);
    if (pairs.empty()) throw Error("attribute: no bucket-1 pairs in the record set");

    attribution::AttributionConfig ac;
    ac.steps = cfg.igSteps;
    attribution::AggregateResult agg = attribution::aggregate(pairs, run.weights, run.graph, ac);

    run.graph.writeEdgeScoresCsv(artifactPath(outDir, "edge_scores.csv"), agg.edgeMeans);
    run.graph.writeComponentRankingCsv(artifactPath(outDir, "component_ranking.csv"),
                                       agg.ranking);

    RunManifest m = makeManifest(cfg, "attribute");
    m.modelChecksum = run.weights.checksum();
    m.inputs = {artifactPath(outDir, "model.bin"), artifactPath(outDir, "records.jsonl")};
    m.outputs = {artifactPath(outDir, "edge_scores.csv"),
                 artifactPath(outDir, "component_ranking.csv")};
    finishManifest(std::move(m), outDir, "manifest_attribute.json");
}

void cmdValidate(const PipelineConfig& cfg, const std::string& outDir) {
    cfg.validate();
    LoadedRun run = loadRun(cfg, outDir);
    std::string scorePath = requireArtifact(outDir, "edge_scores.csv", "attribute");
    graph::EdgeScoreMap scores = readEdgeScoresCsv(scorePath, run.graph);
    graph::ComponentRanking ranking = run.graph.edgesToComponents(scores);

    std::vector<signal::CounterfactualPair> pairs = bucket1Pairs(
        run.weights, run.graph, run.records, run.task.pairTemplate, cfg.tau, cfg.maxPairs);
    if (pairs.empty()) throw Error("validate: no bucket-1 pairs in the record set");
    std::vector<attribution::PairActivations> pas = cacheAll(pairs, run.weights, run.graph);

    // The discovered circuit: every edge incident to the top two components.
    graph::CircuitSpec circuit;
    {
        std::vector<bool> in(run.graph.edges().size(), false);
        for (size_t i = 0; i < ranking.size() && i < 2; ++i)
            for (int e : run.graph.incidentEdges(ranking[i].node)) in[static_cast<size_t>(e)] = true;
        for (size_t e = 0; e < in.size(); ++e)
            if (in[e]) circuit.edgeIndices.push_back(static_cast<int>(e));
    }

    std::vector<graph::NodeId> ranked;
    for (const graph::ComponentScore& c : ranking) ranked.push_back(c.node);

    validation::ValidationConfig vc;
    vc.curvePoints = cfg.curvePoints;
    vc.ablateUpTo = cfg.ablateUpTo;
    validation::ValidationReport rep =
        validation::validate(pas, run.weights, run.graph, scores, ranked, circuit, vc);

    validation::writeReportJson(artifactPath(outDir, "validation_report.json"), rep);
    validation::writeFaithfulnessCsv(artifactPath(outDir, "faithfulness.csv"), rep);

    RunManifest m = makeManifest(cfg, "validate");
    m.modelChecksum = run.weights.checksum();
    m.inputs = {artifactPath(outDir, "model.bin"), artifactPath(outDir, "records.jsonl"),
                scorePath};
    m.outputs = {artifactPath(outDir, "validation_report.json"),
                 artifactPath(outDir, "faithfulness.csv")};
    finishManifest(std::move(m), outDir, "manifest_validate.json");
}

void cmdIntervene(const PipelineConfig& cfg, const std::string& outDir) {
    cfg.validate();
    LoadedRun run = loadRun(cfg, outDir);
    std::string scorePath = requireArtifact(outDir, "edge_scores.csv", "attribute");
    graph::EdgeScoreMap scores = readEdgeScoresCsv(scorePath, run.graph);
    graph::ComponentRanking ranking = run.graph.edgesToComponents(scores);

    std::vector<signal::CounterfactualPair> pairs = bucket1Pairs(
        run.weights, run.graph, run.records, run.task.pairTemplate, cfg.tau, cfg.maxPairs);
    if (pairs.empty()) throw Error("intervene: no bucket-1 pairs in the record set");
    std::vector<attribution::PairActivations> pas = cacheAll(pairs, run.weights, run.graph);

    size_t nTargets = std::min<size_t>(static_cast<size_t>(cfg.topK), ranking.size());
    std::vector<intervention::SteeringVector> vectors;
    intervention::InterventionPlan meanPlan;
    meanPlan.mode = intervention::Mode::MeanAblation;
    for (size_t i = 0; i < nTargets; ++i) {
        vectors.push_back(intervention::computeSteeringVector(pas, run.graph, ranking[i].node));
        meanPlan.means.push_back(
            intervention::computeReferenceMean(pas, run.graph, ranking[i].node));
    }

    std::vector<double> alphas =
        cfg.alphaGrid.empty() ? intervention::defaultAlphas() : cfg.alphaGrid;
    intervention::SweepResult sweep = intervention::alphaSweep(
        run.weights, run.graph, run.records, run.task.pairTemplate, vectors, alphas, cfg.bins);

    double bestAlpha = alphas.front();
    double bestEce = sweep.points.front().report.ece;
    for (const intervention::SweepPoint& p : sweep.points)
        if (p.report.ece < bestEce) {
            bestEce = p.report.ece;
            bestAlpha = p.alpha;
        }
    intervention::InterventionPlan steerPlan;
    steerPlan.mode = intervention::Mode::Steering;
    steerPlan.alpha = bestAlpha;
    steerPlan.vectors = vectors;

    intervention::writeSweepCsv(artifactPath(outDir, "sweep.csv"), sweep);
    intervention::writePlanJson(artifactPath(outDir, "plan_steering.json"), steerPlan);
    intervention::writePlanJson(artifactPath(outDir, "plan_mean_ablation.json"), meanPlan);

    RunManifest m = makeManifest(cfg, "intervene");
    m.modelChecksum = run.weights.checksum();
    m.inputs = {artifactPath(outDir, "model.bin"), artifactPath(outDir, "records.jsonl"),
                scorePath};
    m.outputs = {artifactPath(outDir, "sweep.csv"), artifactPath(outDir, "plan_steering.json"),
                 artifactPath(outDir, "plan_mean_ablation.json")};
    finishManifest(std::move(m), outDir, "manifest_intervene.json");
}

void cmdCalibrate(const PipelineConfig& cfg, const std::string& outDir,
                  const std::optional<std::string>& recordsPath) {
    cfg.validate();
    fs::create_directories(outDir);
    std::string path =
        recordsPath ? *recordsPath : requireArtifact(outDir, "records.jsonl", "synthesize");
    IngestedDataset ds = ingestRecords(path);
    if (ds.records.empty()) throw Error("calibrate: no valid records in " + path);

    std::vector<calibration::PredictionRecord> preds;
    preds.reserve(ds.records.size());
    for (const signal::ElicitationRecord& r : ds.records)
        preds.push_back({r.verbalizedConfidence / 100.0, r.correct});
    calibration::CalibrationReport rep = calibration::report(preds, cfg.bins);

    calibration::writeReportJson(artifactPath(outDir, "calibration_report.json"), rep);
    calibration::writeReliabilityCsv(artifactPath(outDir, "reliability.csv"), rep);

    RunManifest m = makeManifest(cfg, "calibrate");
    m.inputs = {path};
    m.outputs = {artifactPath(outDir, "calibration_report.json"),
                 artifactPath(outDir, "reliability.csv")};
    finishManifest(std::move(m), outDir, "manifest_calibrate.json");
}

void cmdReport(const PipelineConfig& cfg, const std::string& outDir) {
    cfg.validate();
    std::string scorePath = requireArtifact(outDir, "edge_scores.csv", "attribute");
    requireArtifact(outDir, "faithfulness.csv", "validate");
    requireArtifact(outDir, "sweep.csv", "intervene");
    requireArtifact(outDir, "reliability.csv", "calibrate");

    graph::ComputationGraph g(cfg.model.nLayers, cfg.model.nHeads);
    graph::EdgeScoreMap scores = readEdgeScoresCsv(scorePath, g);
    writeHeatmapCsv(artifactPath(outDir, "heatmap.csv"), g, g.edgesToComponents(scores));

    RunManifest m = makeManifest(cfg, "report");
    m.inputs = {scorePath, artifactPath(outDir, "faithfulness.csv"),
                artifactPath(outDir, "sweep.csv"), artifactPath(outDir, "reliability.csv")};
    m.outputs = {artifactPath(outDir, "heatmap.csv")};
    finishManifest(std::move(m), outDir, "manifest_report.json");
}

}  // namespace cmc::cli
