#include "cmc/intervention.hpp"

#include <cmath>

#include <json.hpp>

#include "cmc/io_util.hpp"
#include "cmc/kernels.hpp"

namespace cmc::intervention {

namespace {

Tensor rowAt(const Tensor& t, int64_t pos) {
    Tensor row = Tensor::zeros({1, t.cols()});
    for (int64_t j = 0; j < t.cols(); ++j) row.at(0, j) = t.at(pos, j);
    return row;
}

void checkComponent(const graph::ComputationGraph& g, const graph::NodeId& n) {
    g.nodeIndex(n);  // throws on unknown node
    if (n.kind != graph::NodeKind::Head && n.kind != graph::NodeKind::Mlp)
        throw Error("intervention: target must be a head or an MLP");
}

std::vector<int64_t> cleanPrompt(const signal::ElicitationRecord& rec,
                                 const signal::PairTemplate& tmpl) {
    if (rec.modelAnswerTokens.size() != 1 || rec.goldAnswerTokens.size() != 1)
        throw Error("intervention: records must carry single-token answers");
    std::vector<int64_t> toks = rec.questionTokens;
    for (int64_t t : tmpl.tokens) {
        if (t == signal::kAnswerSlot)
            toks.push_back(rec.modelAnswerTokens[0]);
        else if (t == signal::kTruthSlot)
            toks.push_back(tmpl.truthTokenFor(rec.goldAnswerTokens[0]));
        else
            toks.push_back(t);
    }
    return toks;
}

nlohmann::json vectorJson(const Tensor& t) {
    nlohmann::json a = nlohmann::json::array();
    for (double v : t.values) a.push_back(v);
    return a;
}

Tensor vectorFromJson(const nlohmann::json& a) {
    Tensor t = Tensor::zeros({1, static_cast<int64_t>(a.size())});
    for (size_t i = 0; i < a.size(); ++i) t.values[i] = a[i].get<double>();
    return t;
}

}  // namespace

void InterventionPlan::validate(const graph::ComputationGraph& g) const {
    if (mode == Mode::Steering) {
        if (!alpha) throw Error("intervention: steering plan requires alpha");
        if (*alpha < 0.0 || *alpha > 1.0) throw Error("intervention: alpha outside [0,1]");
        if (!means.empty()) throw Error("intervention: steering plan carries reference means");
        for (const SteeringVector& v : vectors) {
            checkComponent(g, v.component);
            if (v.n < 1) throw Error("intervention: steering vector from empty source set");
        }
    } else {
        if (alpha) throw Error("intervention: mean-ablation plan carries alpha");
        if (!vectors.empty()) throw Error("intervention: mean-ablation plan carries vectors");
        for (const ReferenceMean& m : means) {
            checkComponent(g, m.component);
            if (m.n < 1) throw Error("intervention: reference mean from empty source set");
        }
    }
}

ReferenceMean computeReferenceMean(const std::vector<attribution::PairActivations>& sources,
                                   const graph::ComputationGraph& g,
                                   const graph::NodeId& component) {
    checkComponent(g, component);
    if (sources.empty()) throw Error("computeReferenceMean: empty source set");
    ReferenceMean out;
    out.component = component;
    out.n = static_cast<int64_t>(sources.size());
    for (const attribution::PairActivations& pa : sources) {
        Tensor row = rowAt(pa.corrupt.nodeOutput(g, component), pa.posEnd);
        if (out.muRef.values.empty()) {
            out.muRef = std::move(row);
        } else {
            if (!out.muRef.sameShape(row))
                throw Error("computeReferenceMean: output dimension mismatch");
            for (size_t i = 0; i < row.values.size(); ++i) out.muRef.values[i] += row.values[i];
        }
    }
    for (double& v : out.muRef.values) v /= static_cast<double>(out.n);
    return out;
}

SteeringVector computeSteeringVector(const std::vector<attribution::PairActivations>& sources,
                                     const graph::ComputationGraph& g,
                                     const graph::NodeId& component) {
    checkComponent(g, component);
    if (sources.empty()) throw Error("computeSteeringVector: empty source set");
    SteeringVector out;
    out.component = component;
    out.n = static_cast<int64_t>(sources.size());
    for (const attribution::PairActivations& pa : sources) {
        Tensor diff = rowAt(pa.clean.nodeOutput(g, component), pa.posEnd);
        const Tensor corr = rowAt(pa.corrupt.nodeOutput(g, component), pa.posEnd);
        for (size_t i = 0; i < diff.values.size(); ++i) diff.values[i] -= corr.values[i];
        if (out.vConf.values.empty()) {
            out.vConf = std::move(diff);
        } else {
            if (!out.vConf.sameShape(diff))
                throw Error("computeSteeringVector: output dimension mismatch");
            for (size_t i = 0; i < diff.values.size(); ++i) out.vConf.values[i] += diff.values[i];
        }
    }
    for (double& v : out.vConf.values) v /= static_cast<double>(out.n);
    return out;
}

Tensor applyIntervention(const model::ModelWeights& w, const graph::ComputationGraph& g,
                         const std::vector<int64_t>& tokens, const InterventionPlan& plan) {
    plan.validate(g);
    if (tokens.empty()) throw Error("applyIntervention: empty prompt");
    int64_t posEnd = static_cast<int64_t>(tokens.size()) - 1;
    model::PatchPlan patch;
    if (plan.mode == Mode::MeanAblation) {
        for (const ReferenceMean& m : plan.means)
            patch.overwrites.push_back({m.component, posEnd, m.muRef});
    } else {
        for (const SteeringVector& v : plan.vectors) {
            Tensor row = v.vConf;
            for (double& x : row.values) x *= -*plan.alpha;
            patch.offsets.push_back({v.component, posEnd, std::move(row)});
        }
    }
    return model::forward(w, g, tokens, patch).logits;
}

std::vector<double> defaultAlphas() {
    std::vector<double> a;
    for (int i = 1; i <= 10; ++i) a.push_back(i / 10.0);
    return a;
}

SweepResult alphaSweep(const model::ModelWeights& w, const graph::ComputationGraph& g,
                       const std::vector<signal::ElicitationRecord>& evalRecords,
                       const signal::PairTemplate& tmpl,
                       const std::vector<SteeringVector>& vectors,
                       const std::vector<double>& alphas, int bins) {
    if (evalRecords.empty()) throw Error("alphaSweep: empty evaluation set");
    if (alphas.empty()) throw Error("alphaSweep: empty alpha grid");

    std::vector<std::vector<int64_t>> prompts(evalRecords.size());
    for (size_t i = 0; i < evalRecords.size(); ++i)
        prompts[i] = cleanPrompt(evalRecords[i], tmpl);

    auto evaluate = [&](const std::optional<double>& alpha) {
        std::vector<calibration::PredictionRecord> preds(evalRecords.size());
        kernels::parallelFor(static_cast<int64_t>(evalRecords.size()), [&](int64_t i) {
            size_t idx = static_cast<size_t>(i);
            Tensor logits;
            if (alpha) {
                InterventionPlan plan;
                plan.mode = Mode::Steering;
                plan.vectors = vectors;
                plan.alpha = *alpha;
                logits = applyIntervention(w, g, prompts[idx], plan);
            } else {
                logits = model::forward(w, g, prompts[idx]).logits;
            }
            int64_t posEnd = static_cast<int64_t>(prompts[idx].size()) - 1;
            int conf = model::decodeConfidence(logits, posEnd);
            preds[idx] = {conf / 100.0, evalRecords[idx].correct};
        });
        return calibration::report(preds, bins);
    };

    SweepResult out;
    out.baseline = evaluate(std::nullopt);
    for (double a : alphas) {
        if (a < 0.0 || a > 1.0) throw Error("alphaSweep: alpha outside [0,1]");
        out.points.push_back({a, evaluate(a)});
    }
    return out;
}

std::string planToJson(const InterventionPlan& plan) {
    nlohmann::json j;
    j["mode"] = plan.mode == Mode::MeanAblation ? "mean_ablation" : "steering";
    if (plan.alpha) j["alpha"] = *plan.alpha;
    j["targets"] = nlohmann::json::array();
    if (plan.mode == Mode::MeanAblation) {
        for (const ReferenceMean& m : plan.means)
            j["targets"].push_back({{"component", graph::nodeLabel(m.component)},
                                    {"n", m.n},
                                    {"mu_ref", vectorJson(m.muRef)}});
    } else {
        for (const SteeringVector& v : plan.vectors)
            j["targets"].push_back({{"component", graph::nodeLabel(v.component)},
                                    {"n", v.n},
                                    {"v_conf", vectorJson(v.vConf)}});
    }
    return j.dump(2) + "\n";
}

InterventionPlan planFromJson(const std::string& text) {
    nlohmann::json j = nlohmann::json::parse(text, nullptr, false);
    if (j.is_discarded()) throw Error("intervention plan: malformed JSON");
    InterventionPlan plan;
    std::string mode = j.at("mode").get<std::string>();
    if (mode == "mean_ablation") {
        plan.mode = Mode::MeanAblation;
        for (const auto& t : j.at("targets")) {
            ReferenceMean m;
            m.component = graph::parseNodeLabel(t.at("component").get<std::string>());
            m.n = t.at("n").get<int64_t>();
            m.muRef = vectorFromJson(t.at("mu_ref"));
            plan.means.push_back(std::move(m));
        }
    } else if (mode == "steering") {
        plan.mode = Mode::Steering;
        plan.alpha = j.at("alpha").get<double>();
        for (const auto& t : j.at("targets")) {
            SteeringVector v;
            v.component = graph::parseNodeLabel(t.at("component").get<std::string>());
            v.n = t.at("n").get<int64_t>();
            v.vConf = vectorFromJson(t.at("v_conf"));
            plan.vectors.push_back(std::move(v));
        }
    } else {
        throw Error("intervention plan: unknown mode " + mode);
    }
    return plan;
}

void writePlanJson(const std::string& path, const InterventionPlan& plan) {
    io::atomicWrite(path, planToJson(plan));
}

void writeSweepCsv(const std::string& path, const SweepResult& sweep) {
    std::string out = "alpha,ece,brier,ece_improvement_pct,brier_improvement_pct\n";
    out += "0," + io::formatDouble(sweep.baseline.ece) + "," +
           io::formatDouble(sweep.baseline.brier) + ",0,0\n";
    for (const SweepPoint& p : sweep.points) {
        calibration::Improvement imp = calibration::improvement(sweep.baseline, p.report);
        out += io::formatDouble(p.alpha) + "," + io::formatDouble(p.report.ece) + "," +
               io::formatDouble(p.report.brier) + "," +
               (imp.ecePct ? io::formatDouble(*imp.ecePct) : "na") + "," +
               (imp.brierPct ? io::formatDouble(*imp.brierPct) : "na") + "\n";
    }
    io::atomicWrite(path, out);
}

}  // namespace cmc::intervention
