#include "cmc/planted.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "cmc/io_util.hpp"

namespace cmc::planted {

namespace {

constexpr int kCodeLen = 8;

// Balanced +-1 identity codes; pairwise Hamming distance is 4 or 6, which
// spreads the mismatch signal and hence the decoded confidence.
constexpr int kCodes[kAnswerCount][kCodeLen] = {
    {-1, -1, 1, -1, -1, 1, 1, 1},
    {1, -1, -1, -1, 1, 1, -1, 1},
    {1, 1, -1, -1, 1, -1, 1, -1},
    {-1, 1, -1, 1, 1, 1, -1, -1},
    {1, -1, 1, 1, -1, -1, -1, 1},
    {-1, -1, 1, 1, 1, -1, 1, -1},
    {1, 1, 1, -1, -1, 1, -1, -1},
    {-1, 1, -1, 1, -1, -1, 1, 1},
};

constexpr double kNoiseStd = 0.002;
constexpr double kIdScale = 1.0;     // answer/truth identity code amplitude
constexpr double kAnchorScale = 6.0; // path-constant norm anchor on answer/truth tokens
constexpr double kFlagScale = 2.0;   // positional role flags
constexpr double kPriorScale = 10.0; // constant channel read by the unembedding
constexpr double kQueryScale = 1.8;
constexpr double kKeyScale = 1.8;
constexpr double kValueScale = 1.0;
constexpr double kOutScale = 0.7;
constexpr double kMatchGain = 6.0;  // slope of the paired-gelu magnitude units
constexpr double kPriorCurv = 0.35;  // concavity of the confidence prior
constexpr double kConfReadout = 2.0;
constexpr double kMaxLogit = 20.0;

// Decoded-confidence targets used to solve the MLP output gain and bias;
// larger code distances land above kConfNear on the same line.
constexpr int kConfMatch = 25;
constexpr int kConfNear = 85;  // code distance 4

struct Dims {
    int64_t id0, match0, anchor, conf, prior, flagAns, flagTruth, flagEnd, quiet;
};

Dims layout(int64_t dModel) {
    return {dModel - 24, dModel - 16, dModel - 8, dModel - 6, dModel - 5,
            dModel - 4,  dModel - 3,  dModel - 2, dModel - 1};
}

int codeDistance(int a, int b) {
    int d = 0;
    for (int i = 0; i < kCodeLen; ++i) d += (kCodes[a][i] != kCodes[b][i]) ? 1 : 0;
    return d;
}

std::vector<int64_t> buildPrompt(const std::vector<int64_t>& question, int64_t ansTok,
                                 int64_t truthTok) {
    std::vector<int64_t> t = question;
    t.push_back(ansTok);
    t.push_back(kSepToken);
    t.push_back(truthTok);
    t.push_back(kConfQueryToken);
    return t;
}

// Required value of kConfReadout * x_conf for a decoded confidence target,
// given the concave prior: argmax_c [rho*x*(c-50)/50 - q0*p0*((c-50)/50)^2].
double readoutFor(double conf) { return (conf - 50.0) / 50.0 * 2.0 * kPriorCurv * kPriorScale; }

double confTargetInverse(double readout) { return 50.0 + 50.0 * readout / (2.0 * kPriorCurv * kPriorScale); }

}  // namespace

PlantedCircuit plantOverconfidenceCircuit(const model::ModelConfig& config, double margin) {
    config.validate();
    if (config.dModel < 40) throw Error("planted circuit needs dModel >= 40");
    if (config.dHead < kCodeLen + 1) throw Error("planted circuit needs dHead >= 9");
    if (config.dMlp < 2 * kCodeLen) throw Error("planted circuit needs dMlp >= 16");
    if (config.vocabSize < kMinVocab)
        throw Error("planted circuit needs vocabSize >= " + std::to_string(kMinVocab));
    if (config.maxSeq < kQuestionLength + 4) throw Error("planted circuit needs maxSeq >= 8");
    if (config.nLayers < 2) throw Error("planted circuit needs nLayers >= 2");
    if (margin <= 0.0) throw Error("planted circuit: margin must be positive");

    const int headLayer = (config.nLayers - 1) / 2;
    const int headIdx = config.nHeads / 2;
    const int mlpLayer = std::max(headLayer, config.nLayers - 2);
    const Dims dm = layout(config.dModel);
    const int64_t answerPos = kQuestionLength;
    const int64_t truthPos = kQuestionLength + 2;
    const int64_t posEnd = kQuestionLength + 3;

    model::ModelWeights w = model::initRandom(config, kNoiseStd);

    for (int k = 0; k < kAnswerCount; ++k)
        for (int i = 0; i < kCodeLen; ++i) {
            double c = kIdScale * kCodes[k][i];
            w.embedding.at(kAnswerTokenBase + k, dm.id0 + i) += c;
            w.embedding.at(kTruthTokenBase + k, dm.id0 + i) -= c;
        }
    // Every token carries the anchor. It dominates the row norm, so
    // LayerNorm neither amplifies near-zero rows into pseudo-features nor
    // shifts its scale when attribution interpolates between two answer
    // embeddings.
    for (int64_t tok = 0; tok < config.vocabSize; ++tok)
        w.embedding.at(tok, dm.anchor) += kAnchorScale;
    w.embedding.at(kConfQueryToken, dm.prior) += kPriorScale;
    w.posEmbedding.at(answerPos, dm.flagAns) += kFlagScale;
    w.posEmbedding.at(truthPos, dm.flagTruth) += kFlagScale;
    w.posEmbedding.at(posEnd, dm.flagEnd) += kFlagScale;

    model::LayerWeights& hl = w.layers[static_cast<size_t>(headLayer)];
    hl.wq[static_cast<size_t>(headIdx)].at(dm.flagEnd, 0) += kQueryScale;
    hl.wk[static_cast<size_t>(headIdx)].at(dm.flagAns, 0) += kKeyScale;
    hl.wk[static_cast<size_t>(headIdx)].at(dm.flagTruth, 0) += kKeyScale;
    for (int i = 0; i < kCodeLen; ++i) {
        hl.wv[static_cast<size_t>(headIdx)].at(dm.id0 + i, 1 + i) += kValueScale;
        hl.wo[static_cast<size_t>(headIdx)].at(1 + i, dm.match0 + i) += kOutScale;
    }

    // Each magnitude unit reads the match dim against a quiet reference dim;
    // the difference cancels the common-mode shift LayerNorm's mean
    // subtraction puts on every dim.
    model::LayerWeights& ml = w.layers[static_cast<size_t>(mlpLayer)];
    for (int i = 0; i < kCodeLen; ++i) {
        ml.mlpIn.at(dm.match0 + i, 2 * i) += kMatchGain;
        ml.mlpIn.at(dm.quiet, 2 * i) -= kMatchGain;
        ml.mlpIn.at(dm.match0 + i, 2 * i + 1) -= kMatchGain;
        ml.mlpIn.at(dm.quiet, 2 * i + 1) += kMatchGain;
    }

    Tensor plantedU = Tensor::zeros({config.dModel, config.vocabSize});
    for (int64_t c = 0; c < 100; ++c) {
        double x = (static_cast<double>(c) - 50.0) / 50.0;
        plantedU.at(dm.conf, c) = kConfReadout * x;
        plantedU.at(dm.prior, c) = -kPriorCurv * x * x;
    }
    Tensor noiseU = w.unembedding;
    for (size_t i = 0; i < w.unembedding.values.size(); ++i)
        w.unembedding.values[i] = noiseU.values[i] + plantedU.values[i];

    graph::ComputationGraph g(config.nLayers, config.nHeads);
    const graph::NodeId mlpNode = graph::NodeId::mlp(mlpLayer);
    const std::vector<int64_t> probeQuestion{kQuestionTokenBase, kQuestionTokenBase + 1,
                                             kQuestionTokenBase + 2, kQuestionTokenBase + 3};

    // Measure the paired-gelu magnitude sum with unit output gain, then
    // solve the gain and bias so both confidence targets are hit.
    {
        model::ModelWeights probe = w;
        model::LayerWeights& pl = probe.layers[static_cast<size_t>(mlpLayer)];
        for (int i = 0; i < kCodeLen; ++i) {
            pl.mlpOut.at(2 * i, dm.conf) += 1.0;
            pl.mlpOut.at(2 * i + 1, dm.conf) += 1.0;
        }
        double sum4 = 0.0, sum6 = 0.0, sumMatch = 0.0;
        int n4 = 0, n6 = 0, nMatch = 0;
        for (int gold = 0; gold < kAnswerCount; ++gold)
            for (int ans = 0; ans < kAnswerCount; ++ans) {
                auto toks = buildPrompt(probeQuestion, kAnswerTokenBase + ans,
                                        kTruthTokenBase + gold);
                auto res = model::forward(probe, g, toks);
                double s = res.cache.nodeOutput(g, mlpNode).at(posEnd, dm.conf);
                if (ans == gold) {
                    sumMatch += s;
                    ++nMatch;
                } else if (codeDistance(ans, gold) == 4) {
                    sum4 += s;
                    ++n4;
                } else {
                    sum6 += s;
                    ++n6;
                }
            }
        double s4 = sum4 / n4, s6 = sum6 / n6;
        double sMatch = sumMatch / nMatch;
        if (s4 - sMatch < 1e-6 || s6 <= s4)
            throw Error("planted circuit: degenerate mismatch signal");
        double gain = (readoutFor(kConfNear) - readoutFor(kConfMatch)) /
                      (kConfReadout * (s4 - sMatch));
        double bias = readoutFor(kConfMatch) / kConfReadout - gain * sMatch;
        for (int i = 0; i < kCodeLen; ++i) {
            ml.mlpOut.at(2 * i, dm.conf) += gain;
            ml.mlpOut.at(2 * i + 1, dm.conf) += gain;
        }
        ml.mlpOutBias.values[static_cast<size_t>(dm.conf)] += bias;
    }

    signal::CandidateSets sets;
    const std::vector<std::vector<int64_t>> questionVariants{
        probeQuestion,
        {kQuestionTokenBase + 4, kQuestionTokenBase + 5, kQuestionTokenBase + 6,
         kQuestionTokenBase + 7},
        {kQuestionTokenBase + 1, kQuestionTokenBase + 6, kQuestionTokenBase + 0,
         kQuestionTokenBase + 7}};

    auto sweep = [&](double& minClean, double& maxCorrupt, int& minConfClean, int& maxConfCorrupt,
                     double& maxAbsLogit) {
        minClean = 1e300;
        maxCorrupt = -1e300;
        minConfClean = 100;
        maxConfCorrupt = 0;
        maxAbsLogit = 0.0;
        for (const auto& q : questionVariants)
            for (int gold = 0; gold < kAnswerCount; ++gold)
                for (int ans = 0; ans < kAnswerCount; ++ans) {
                    if (ans == gold) continue;
                    auto clean = model::forward(
                        w, g, buildPrompt(q, kAnswerTokenBase + ans, kTruthTokenBase + gold));
                    auto corrupt = model::forward(
                        w, g, buildPrompt(q, kAnswerTokenBase + gold, kTruthTokenBase + gold));
                    minClean = std::min(minClean, signal::tsld(clean.logits, posEnd, sets));
                    maxCorrupt = std::max(maxCorrupt, signal::tsld(corrupt.logits, posEnd, sets));
                    minConfClean =
                        std::min(minConfClean, model::decodeConfidence(clean.logits, posEnd));
                    maxConfCorrupt =
                        std::max(maxConfCorrupt, model::decodeConfidence(corrupt.logits, posEnd));
                    for (const Tensor* lg : {&clean.logits, &corrupt.logits})
                        for (double v : lg->values) maxAbsLogit = std::max(maxAbsLogit, std::abs(v));
                }
    };

    double minClean, maxCorrupt, maxAbsLogit;
    int minConfClean, maxConfCorrupt;
    sweep(minClean, maxCorrupt, minConfClean, maxConfCorrupt, maxAbsLogit);

    double minSide = std::min(minClean, -maxCorrupt);
    if (minSide <= 0.0) throw Error("planted circuit: TSLD separation has the wrong sign");
    if (minSide < margin / 2.0) {
        // The readout columns scale TSLD linearly without moving the decoded
        // confidence, so widen them just enough.
        double t = margin / 2.0 / minSide * 1.05;
        for (size_t i = 0; i < w.unembedding.values.size(); ++i)
            w.unembedding.values[i] = noiseU.values[i] + t * plantedU.values[i];
        sweep(minClean, maxCorrupt, minConfClean, maxConfCorrupt, maxAbsLogit);
        minSide = std::min(minClean, -maxCorrupt);
    }
    if (maxAbsLogit > kMaxLogit)
        throw Error("planted circuit: margin " + io::formatDouble(margin) +
                    " not achievable within the logit budget");
    if (minSide < margin / 2.0)
        throw Error("planted circuit: margin " + io::formatDouble(margin) + " not achieved");
    if (minConfClean < 70)
        throw Error("planted circuit: wrong-answer confidence fell below 70");
    if (maxConfCorrupt >= 50)
        throw Error("planted circuit: truth-injected confidence reached 50");

    PlantedCircuit pc;
    pc.weights = std::move(w);
    pc.trueComponents = {graph::NodeId::attnHead(headLayer, headIdx), graph::NodeId::mlp(mlpLayer)};
    pc.task.pairTemplate.tokens = {signal::kAnswerSlot, kSepToken, signal::kTruthSlot,
                                   kConfQueryToken};
    pc.task.pairTemplate.answerTokenBase = kAnswerTokenBase;
    pc.task.pairTemplate.truthTokenBase = kTruthTokenBase;
    pc.task.pairTemplate.answerCount = kAnswerCount;
    pc.task.questionLength = kQuestionLength;
    pc.task.answerPos = answerPos;
    pc.task.truthPos = truthPos;
    pc.task.posEnd = posEnd;
    pc.margin = margin;
    return pc;
}

std::vector<signal::ElicitationRecord> generateRecords(const PlantedCircuit& pc,
                                                       const graph::ComputationGraph& graph,
                                                       const RecordGenConfig& cfg) {
    if (cfg.count <= 0) throw Error("generateRecords: count must be positive");
    if (cfg.matchFraction < 0.0 || cfg.matchFraction > 1.0 || cfg.lenientGraderRate < 0.0 ||
        cfg.lenientGraderRate > 1.0)
        throw Error("generateRecords: fractions must lie in [0,1]");

    std::mt19937_64 rng(cfg.seed);
    std::uniform_int_distribution<int> qTok(0, kQuestionTokenCount - 1);
    std::uniform_int_distribution<int> ansIdx(0, kAnswerCount - 1);
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    std::vector<signal::ElicitationRecord> out;
    out.reserve(static_cast<size_t>(cfg.count));
    for (int n = 0; n < cfg.count; ++n) {
        signal::ElicitationRecord r;
        std::string qText;
        for (int i = 0; i < pc.task.questionLength; ++i) {
            int q = qTok(rng);
            r.questionTokens.push_back(kQuestionTokenBase + q);
            if (i) qText += ' ';
            qText += tokenName(kQuestionTokenBase + q);
        }
        int gold = ansIdx(rng);
        int ans;
        if (unit(rng) < cfg.matchFraction) {
            ans = gold;
            r.correct = true;
        } else {
            do {
                ans = ansIdx(rng);
            } while (ans == gold);
            r.correct = unit(rng) < cfg.lenientGraderRate;
        }
        r.modelAnswerTokens = {kAnswerTokenBase + ans};
        r.goldAnswerTokens = {kAnswerTokenBase + gold};
        r.questionText = qText;
        r.modelAnswerText = tokenName(kAnswerTokenBase + ans);
        r.goldAnswerText = tokenName(kAnswerTokenBase + gold);

        std::vector<int64_t> toks = r.questionTokens;
        for (int64_t t : pc.task.pairTemplate.tokens) {
            if (t == signal::kAnswerSlot)
                toks.push_back(kAnswerTokenBase + ans);
            else if (t == signal::kTruthSlot)
                toks.push_back(kTruthTokenBase + gold);
            else
                toks.push_back(t);
        }
        auto res = model::forward(pc.weights, graph, toks);
        r.verbalizedConfidence =
            model::decodeConfidence(res.logits, static_cast<int64_t>(toks.size()) - 1);
        out.push_back(std::move(r));
    }
    return out;
}

std::string tokenName(int64_t token) {
    if (token >= 0 && token < 100) return std::to_string(token);
    if (token == kSepToken) return "sep";
    if (token == kConfQueryToken) return "confq";
    if (token >= kQuestionTokenBase && token < kQuestionTokenBase + kQuestionTokenCount)
        return "q" + std::to_string(token - kQuestionTokenBase);
    if (token >= kAnswerTokenBase && token < kAnswerTokenBase + kAnswerCount)
        return "ans" + std::to_string(token - kAnswerTokenBase);
    if (token >= kTruthTokenBase && token < kTruthTokenBase + kAnswerCount)
        return "truth" + std::to_string(token - kTruthTokenBase);
    throw Error("tokenName: token " + std::to_string(token) + " outside named range");
}

int64_t tokenFromName(const std::string& name) {
    if (name.empty()) throw Error("tokenFromName: empty name");
    if (name == "sep") return kSepToken;
    if (name == "confq") return kConfQueryToken;
    auto digits = [&](size_t at) -> int64_t {
        std::string s = name.substr(at);
        if (s.empty() || s.find_first_not_of("0123456789") != std::string::npos || s.size() > 6)
            throw Error("tokenFromName: unknown token '" + name + "'");
        return std::stoll(s);
    };
    auto tail = [&](size_t at, int64_t base, int64_t count) {
        int64_t v = digits(at);
        if (v >= count) throw Error("tokenFromName: unknown token '" + name + "'");
        return base + v;
    };
    if (name[0] == 'q' && name.size() > 1) return tail(1, kQuestionTokenBase, kQuestionTokenCount);
    if (name.rfind("ans", 0) == 0) return tail(3, kAnswerTokenBase, kAnswerCount);
    if (name.rfind("truth", 0) == 0) return tail(5, kTruthTokenBase, kAnswerCount);
    int64_t v = digits(0);
    if (v >= 100) throw Error("tokenFromName: unknown token '" + name + "'");
    return v;
}

}  // namespace cmc::planted
