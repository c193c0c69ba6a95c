#include "cmc/signal.hpp"

#include <algorithm>
#include <cmath>

namespace cmc::signal {

void CandidateSets::validate() const {
    if (high.empty() || low.empty()) throw Error("candidate sets must be nonempty");
    for (int64_t t : high)
        if (t < 0 || t > 99)
            throw Error("candidate token " + std::to_string(t) + " outside confidence range 0..99");
    for (int64_t t : low)
        if (t < 0 || t > 99)
            throw Error("candidate token " + std::to_string(t) + " outside confidence range 0..99");
    for (int64_t h : high)
        if (std::find(low.begin(), low.end(), h) != low.end())
            throw Error("candidate sets must be disjoint (token " + std::to_string(h) + ")");
}

int64_t PairTemplate::truthTokenFor(int64_t answerToken) const {
    int64_t idx = answerToken - answerTokenBase;
    if (idx < 0 || idx >= answerCount)
        throw Error("answer token " + std::to_string(answerToken) + " outside answer range");
    return truthTokenBase + idx;
}

double tsld(const Tensor& logits, int64_t pos, const CandidateSets& sets) {
    sets.validate();
    if (pos < 0 || pos >= logits.rows()) throw Error("tsld: position out of range");
    double hi = 0.0, lo = 0.0;
    for (int64_t t : sets.high) hi += logits.at(pos, t);
    for (int64_t t : sets.low) lo += logits.at(pos, t);
    return hi / static_cast<double>(sets.high.size()) - lo / static_cast<double>(sets.low.size());
}

double deltaTsld(const CounterfactualPair& pair) { return pair.tsldCorrupt - pair.tsldClean; }

TensorId attachTsldLoss(ComputeRecord& r, TensorId logitsId, int64_t posEnd,
                        const CandidateSets& sets) {
    sets.validate();
    const Tensor& logits = r.value(logitsId);
    int64_t seq = logits.rows();
    int64_t vocab = logits.cols();
    if (posEnd < 0 || posEnd >= seq) throw Error("attachTsldLoss: position out of range");

    Tensor rowSel = Tensor::zeros({1, seq});
    rowSel.values[static_cast<size_t>(posEnd)] = 1.0;
    Tensor sel = Tensor::zeros({1, vocab});
    for (int64_t t : sets.high) sel.values[static_cast<size_t>(t)] += 1.0 / static_cast<double>(sets.high.size());
    for (int64_t t : sets.low) sel.values[static_cast<size_t>(t)] -= 1.0 / static_cast<double>(sets.low.size());

    TensorId atPos = r.matmul(r.leaf(rowSel), logitsId);
    return r.sumAll(r.mulElem(atPos, r.leaf(sel)));
}

CounterfactualPair buildPair(const ElicitationRecord& record, const PairTemplate& tmpl,
                             const model::ModelWeights& weights,
                             const graph::ComputationGraph& graph, const CandidateSets& sets) {
    if (record.modelAnswerTokens.size() != 1 || record.goldAnswerTokens.size() != 1)
        throw Error(
            "buildPair: multi-token answers are not representable in toy mode; "
            "use ingestion mode (calibrate --records) for such data");
    int slots = 0;
    for (int64_t t : tmpl.tokens) slots += (t == kAnswerSlot) ? 1 : 0;
    if (slots != 1) throw Error("buildPair: template must contain exactly one answer slot");

    int64_t modelAns = record.modelAnswerTokens[0];
    int64_t goldAns = record.goldAnswerTokens[0];
    int64_t truth = tmpl.truthTokenFor(goldAns);

    CounterfactualPair pair;
    pair.cleanTokens = record.questionTokens;
    for (int64_t t : tmpl.tokens) {
        if (t == kAnswerSlot)
            pair.cleanTokens.push_back(modelAns);
        else if (t == kTruthSlot)
            pair.cleanTokens.push_back(truth);
        else
            pair.cleanTokens.push_back(t);
    }
    size_t slotOffset = 0;
    for (size_t i = 0; i < tmpl.tokens.size(); ++i)
        if (tmpl.tokens[i] == kAnswerSlot) slotOffset = i;
    pair.corruptTokens = pair.cleanTokens;
    pair.corruptTokens[record.questionTokens.size() + slotOffset] = goldAns;
    pair.posEnd = static_cast<int64_t>(pair.cleanTokens.size()) - 1;

    pair.tsldClean = tsld(model::forward(weights, graph, pair.cleanTokens).logits, pair.posEnd, sets);
    pair.tsldCorrupt =
        tsld(model::forward(weights, graph, pair.corruptTokens).logits, pair.posEnd, sets);
    pair.deltaTsld = pair.tsldCorrupt - pair.tsldClean;
    return pair;
}

Buckets stratify(std::vector<CounterfactualPair>& pairs, const StratificationConfig& cfg) {
    if (cfg.tau <= 0.0) throw Error("stratify: tau must be positive");
    Buckets b;
    for (size_t i = 0; i < pairs.size(); ++i) {
        double d = pairs[i].deltaTsld;
        if (d <= -cfg.tau) {
            pairs[i].bucket = 1;
            b.collapse.push_back(i);
        } else if (d >= cfg.tau) {
            pairs[i].bucket = 2;
            b.recognize.push_back(i);
        } else {
            pairs[i].bucket = 3;
            b.neutral.push_back(i);
        }
    }
    return b;
}

double pearson(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size() || x.size() < 2)
        throw Error("pearson: inputs must have equal length >= 2");
    double n = static_cast<double>(x.size());
    double mx = 0.0, my = 0.0;
    for (size_t i = 0; i < x.size(); ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= n;
    my /= n;
    double sxx = 0.0, syy = 0.0, sxy = 0.0;
    for (size_t i = 0; i < x.size(); ++i) {
        double dx = x[i] - mx, dy = y[i] - my;
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    if (sxx == 0.0 || syy == 0.0) throw Error("pearson: zero variance, correlation undefined");
    return sxy / std::sqrt(sxx * syy);
}

}  // namespace cmc::signal
