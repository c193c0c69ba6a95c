#include "cmc/tape.hpp"

#include <cmath>
#include <random>

#include "cmc/kernels.hpp"

namespace cmc {

namespace {
constexpr double kLnEps = 1e-5;

const char* opName(OpKind op) {
    switch (op) {
        case OpKind::Leaf: return "leaf";
        case OpKind::Matmul: return "matmul";
        case OpKind::MatmulTB: return "matmulTB";
        case OpKind::Add: return "add";
        case OpKind::AddRow: return "addRow";
        case OpKind::Scale: return "scale";
        case OpKind::Gelu: return "gelu";
        case OpKind::SoftmaxLastDim: return "softmaxLastDim";
        case OpKind::LayerNorm: return "layerNorm";
        case OpKind::EmbedLookup: return "embedLookup";
        case OpKind::MulElem: return "mulElem";
        case OpKind::SumAll: return "sumAll";
        case OpKind::OverwriteRow: return "overwriteRow";
        case OpKind::AddToRow: return "addToRow";
    }
    return "?";
}

[[noreturn]] void shapeError(OpKind op, const Tensor& a, const Tensor& b) {
    throw Error(std::string("shape mismatch in ") + opName(op) + ": " +
                shapeToString(a.shape) + " vs " + shapeToString(b.shape));
}
}  // namespace

std::string shapeToString(const std::vector<int64_t>& shape) {
    std::string s = "[";
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

bool Tensor::allFinite() const {
    for (double v : values)
        if (!std::isfinite(v)) return false;
    return true;
}

double geluScalar(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }

namespace {
double geluGradScalar(double x) {
    double cdf = 0.5 * (1.0 + std::erf(x / std::sqrt(2.0)));
    double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI);
    return cdf + x * pdf;
}
}  // namespace

size_t ComputeRecord::checkId(TensorId id) const {
    if (id < 0 || static_cast<size_t>(id) >= entries_.size())
        throw Error("tensor id " + std::to_string(id) + " not on record");
    return static_cast<size_t>(id);
}

const Tensor& ComputeRecord::value(TensorId id) const { return entries_[checkId(id)].out; }

namespace {
Tensor runOp(const TapeEntry& e, const std::vector<TapeEntry>& entries,
             const std::vector<Tensor>* replayVals) {
    auto val = [&](TensorId id) -> const Tensor& {
        return replayVals ? (*replayVals)[static_cast<size_t>(id)]
                          : entries[static_cast<size_t>(id)].out;
    };
    switch (e.op) {
        case OpKind::Leaf:
            return e.out;  // caller substitutes overrides before this point
        case OpKind::Matmul: {
            const Tensor& A = val(e.a);
            const Tensor& B = val(e.b);
            if (A.cols() != B.rows()) shapeError(e.op, A, B);
            Tensor C = Tensor::zeros({A.rows(), B.cols()});
            kernels::matmul(A.values.data(), B.values.data(), C.values.data(),
                            A.rows(), A.cols(), B.cols());
            return C;
        }
        case OpKind::MatmulTB: {
            const Tensor& A = val(e.a);
            const Tensor& B = val(e.b);
            if (A.cols() != B.cols()) shapeError(e.op, A, B);
            Tensor C = Tensor::zeros({A.rows(), B.rows()});
            kernels::matmulTB(A.values.data(), B.values.data(), C.values.data(),
                              A.rows(), A.cols(), B.rows());
            return C;
        }
        case OpKind::Add: {
            const Tensor& A = val(e.a);
            const Tensor& B = val(e.b);
            if (!A.sameShape(B)) shapeError(e.op, A, B);
            Tensor C = A;
            for (size_t i = 0; i < C.values.size(); ++i) C.values[i] += B.values[i];
            return C;
        }
        case OpKind::AddRow: {
            const Tensor& A = val(e.a);
            const Tensor& R = val(e.b);
            if (R.numel() != A.cols()) shapeError(e.op, A, R);
            Tensor C = A;
            for (int64_t i = 0; i < A.rows(); ++i)
                for (int64_t j = 0; j < A.cols(); ++j) C.at(i, j) += R.values[static_cast<size_t>(j)];
            return C;
        }
        case OpKind::Scale: {
            Tensor C = val(e.a);
            for (double& v : C.values) v *= e.scalar;
            return C;
        }
        case OpKind::Gelu: {
            Tensor C = val(e.a);
            for (double& v : C.values) v = geluScalar(v);
            return C;
        }
        case OpKind::SoftmaxLastDim: {
            Tensor C = val(e.a);
            int64_t n = C.cols();
            for (int64_t i = 0; i < C.rows(); ++i) {
                double mx = C.at(i, 0);
                for (int64_t j = 1; j < n; ++j) mx = std::max(mx, C.at(i, j));
                double z = 0.0;
                for (int64_t j = 0; j < n; ++j) {
                    double ev = std::exp(C.at(i, j) - mx);
                    C.at(i, j) = ev;
                    z += ev;
                }
                for (int64_t j = 0; j < n; ++j) C.at(i, j) /= z;
            }
            return C;
        }
        case OpKind::LayerNorm: {
            const Tensor& A = val(e.a);
            const Tensor& G = val(e.b);
            const Tensor& B = val(e.c);
            int64_t n = A.cols();
            if (G.numel() != n) shapeError(e.op, A, G);
            if (B.numel() != n) shapeError(e.op, A, B);
            Tensor C = A;
            for (int64_t i = 0; i < A.rows(); ++i) {
                double mu = 0.0;
                for (int64_t j = 0; j < n; ++j) mu += A.at(i, j);
                mu /= static_cast<double>(n);
                double var = 0.0;
                for (int64_t j = 0; j < n; ++j) {
                    double d = A.at(i, j) - mu;
                    var += d * d;
                }
                var /= static_cast<double>(n);
                double sigma = std::sqrt(var + kLnEps);
                for (int64_t j = 0; j < n; ++j) {
                    double xhat = (A.at(i, j) - mu) / sigma;
                    C.at(i, j) = G.values[static_cast<size_t>(j)] * xhat +
                                 B.values[static_cast<size_t>(j)];
                }
            }
            return C;
        }
        case OpKind::EmbedLookup: {
            const Tensor& T = val(e.a);
            int64_t d = T.cols();
            Tensor C = Tensor::zeros({static_cast<int64_t>(e.tokenIds.size()), d});
            for (size_t i = 0; i < e.tokenIds.size(); ++i) {
                int64_t id = e.tokenIds[i];
                if (id < 0 || id >= T.rows())
                    throw Error("embedLookup: token id " + std::to_string(id) +
                                " out of range for table " + shapeToString(T.shape));
                for (int64_t j = 0; j < d; ++j)
                    C.at(static_cast<int64_t>(i), j) = T.at(id, j);
            }
            return C;
        }
        case OpKind::MulElem: {
            const Tensor& A = val(e.a);
            const Tensor& B = val(e.b);
            if (!A.sameShape(B)) shapeError(e.op, A, B);
            Tensor C = A;
            for (size_t i = 0; i < C.values.size(); ++i) C.values[i] *= B.values[i];
            return C;
        }
        case OpKind::SumAll: {
            const Tensor& A = val(e.a);
            return Tensor::scalar(kernels::pairwiseSum(A.values.data(), A.numel()));
        }
        case OpKind::OverwriteRow: {
            const Tensor& A = val(e.a);
            const Tensor& R = val(e.b);
            if (R.numel() != A.cols()) shapeError(e.op, A, R);
            if (e.row < 0 || e.row >= A.rows())
                throw Error("overwriteRow: row out of range");
            Tensor C = A;
            for (int64_t j = 0; j < A.cols(); ++j) C.at(e.row, j) = R.values[static_cast<size_t>(j)];
            return C;
        }
        case OpKind::AddToRow: {
            const Tensor& A = val(e.a);
            const Tensor& R = val(e.b);
            if (R.numel() != A.cols()) shapeError(e.op, A, R);
            if (e.row < 0 || e.row >= A.rows())
                throw Error("addToRow: row out of range");
            Tensor C = A;
            for (int64_t j = 0; j < A.cols(); ++j) C.at(e.row, j) += R.values[static_cast<size_t>(j)];
            return C;
        }
    }
    throw Error("unknown op");
}
}  // namespace

TensorId ComputeRecord::leaf(Tensor t) {
    TapeEntry e;
    e.op = OpKind::Leaf;
    e.out = std::move(t);
    entries_.push_back(std::move(e));
    return static_cast<TensorId>(entries_.size() - 1);
}

#define CMC_BINOP(name, kind)                              \
    TensorId ComputeRecord::name(TensorId a, TensorId b) { \
        TapeEntry e;                                       \
        e.op = OpKind::kind;                               \
        e.a = static_cast<TensorId>(checkId(a));           \
        e.b = static_cast<TensorId>(checkId(b));           \
        e.out = runOp(e, entries_, nullptr);               \
        entries_.push_back(std::move(e));                  \
        return static_cast<TensorId>(entries_.size() - 1); \
    }

CMC_BINOP(matmul, Matmul)
CMC_BINOP(matmulTB, MatmulTB)
CMC_BINOP(add, Add)
CMC_BINOP(addRow, AddRow)
CMC_BINOP(mulElem, MulElem)
#undef CMC_BINOP

TensorId ComputeRecord::scale(TensorId a, double s) {
    TapeEntry e;
    e.op = OpKind::Scale;
    e.a = static_cast<TensorId>(checkId(a));
    e.scalar = s;
    e.out = runOp(e, entries_, nullptr);
    entries_.push_back(std::move(e));
    return static_cast<TensorId>(entries_.size() - 1);
}

TensorId ComputeRecord::gelu(TensorId a) {
    TapeEntry e;
    e.op = OpKind::Gelu;
    e.a = static_cast<TensorId>(checkId(a));
    e.out = runOp(e, entries_, nullptr);
    entries_.push_back(std::move(e));
    return static_cast<TensorId>(entries_.size() - 1);
}

TensorId ComputeRecord::softmaxLastDim(TensorId a) {
    TapeEntry e;
    e.op = OpKind::SoftmaxLastDim;
    e.a = static_cast<TensorId>(checkId(a));
    e.out = runOp(e, entries_, nullptr);
    entries_.push_back(std::move(e));
    return static_cast<TensorId>(entries_.size() - 1);
}

TensorId ComputeRecord::layerNorm(TensorId a, TensorId gain, TensorId bias) {
    TapeEntry e;
    e.op = OpKind::LayerNorm;
    e.a = static_cast<TensorId>(checkId(a));
    e.b = static_cast<TensorId>(checkId(gain));
    e.c = static_cast<TensorId>(checkId(bias));
    e.out = runOp(e, entries_, nullptr);
    entries_.push_back(std::move(e));
    return static_cast<TensorId>(entries_.size() - 1);
}

TensorId ComputeRecord::embedLookup(TensorId table, const std::vector<int64_t>& ids) {
    TapeEntry e;
    e.op = OpKind::EmbedLookup;
    e.a = static_cast<TensorId>(checkId(table));
    e.tokenIds = ids;
    e.out = runOp(e, entries_, nullptr);
    entries_.push_back(std::move(e));
    return static_cast<TensorId>(entries_.size() - 1);
}

TensorId ComputeRecord::sumAll(TensorId a) {
    TapeEntry e;
    e.op = OpKind::SumAll;
    e.a = static_cast<TensorId>(checkId(a));
    e.out = runOp(e, entries_, nullptr);
    entries_.push_back(std::move(e));
    return static_cast<TensorId>(entries_.size() - 1);
}

TensorId ComputeRecord::overwriteRow(TensorId a, int64_t row, TensorId r) {
    TapeEntry e;
    e.op = OpKind::OverwriteRow;
    e.a = static_cast<TensorId>(checkId(a));
    e.b = static_cast<TensorId>(checkId(r));
    e.row = row;
    e.out = runOp(e, entries_, nullptr);
    entries_.push_back(std::move(e));
    return static_cast<TensorId>(entries_.size() - 1);
}

TensorId ComputeRecord::addToRow(TensorId a, int64_t row, TensorId r) {
    TapeEntry e;
    e.op = OpKind::AddToRow;
    e.a = static_cast<TensorId>(checkId(a));
    e.b = static_cast<TensorId>(checkId(r));
    e.row = row;
    e.out = runOp(e, entries_, nullptr);
    entries_.push_back(std::move(e));
    return static_cast<TensorId>(entries_.size() - 1);
}

std::vector<Tensor> ComputeRecord::replay(
    const std::vector<std::pair<TensorId, Tensor>>& leafOverrides) const {
    std::vector<Tensor> vals(entries_.size());
    for (size_t i = 0; i < entries_.size(); ++i) {
        const TapeEntry& e = entries_[i];
        if (e.op == OpKind::Leaf) {
            vals[i] = e.out;
            for (const auto& [id, t] : leafOverrides) {
                if (static_cast<size_t>(id) == i) {
                    if (!t.sameShape(e.out)) throw Error("replay: override shape mismatch");
                    vals[i] = t;
                }
            }
        } else {
            vals[i] = runOp(e, entries_, &vals);
        }
    }
    return vals;
}

std::vector<Tensor> ComputeRecord::gradients(TensorId loss) const {
    size_t li = checkId(loss);
    if (!recording_) throw Error("gradients requested on a non-recording record");
    if (entries_[li].out.numel() != 1) throw Error("gradients: loss must be scalar");

    std::vector<Tensor> g(entries_.size());
    for (size_t i = 0; i < entries_.size(); ++i) g[i] = Tensor::zeros(entries_[i].out.shape);
    g[li].values[0] = 1.0;

    for (size_t ii = entries_.size(); ii-- > 0;) {
        const TapeEntry& e = entries_[ii];
        const Tensor& go = g[ii];
        bool any = false;
        for (double v : go.values)
            if (v != 0.0) { any = true; break; }
        if (!any || e.op == OpKind::Leaf) continue;

        auto val = [&](TensorId id) -> const Tensor& {
            return entries_[static_cast<size_t>(id)].out;
        };
        switch (e.op) {
            case OpKind::Matmul: {
                const Tensor& A = val(e.a);
                const Tensor& B = val(e.b);
                Tensor& gA = g[static_cast<size_t>(e.a)];
                Tensor& gB = g[static_cast<size_t>(e.b)];
                // dA += dC * B^T
                for (int64_t i = 0; i < A.rows(); ++i)
                    for (int64_t p = 0; p < A.cols(); ++p) {
                        double s = 0.0;
                        for (int64_t j = 0; j < B.cols(); ++j) s += go.at(i, j) * B.at(p, j);
                        gA.at(i, p) += s;
                    }
                // dB += A^T * dC
                for (int64_t p = 0; p < B.rows(); ++p)
                    for (int64_t j = 0; j < B.cols(); ++j) {
                        double s = 0.0;
                        for (int64_t i = 0; i < A.rows(); ++i) s += A.at(i, p) * go.at(i, j);
                        gB.at(p, j) += s;
                    }
                break;
            }
            case OpKind::MatmulTB: {
                const Tensor& A = val(e.a);
                const Tensor& B = val(e.b);
                Tensor& gA = g[static_cast<size_t>(e.a)];
                Tensor& gB = g[static_cast<size_t>(e.b)];
                // C = A B^T: dA += dC * B, dB += dC^T * A
                for (int64_t i = 0; i < A.rows(); ++i)
                    for (int64_t p = 0; p < A.cols(); ++p) {
                        double s = 0.0;
                        for (int64_t j = 0; j < B.rows(); ++j) s += go.at(i, j) * B.at(j, p);
                        gA.at(i, p) += s;
                    }
                for (int64_t j = 0; j < B.rows(); ++j)
                    for (int64_t p = 0; p < B.cols(); ++p) {
                        double s = 0.0;
                        for (int64_t i = 0; i < A.rows(); ++i) s += go.at(i, j) * A.at(i, p);
                        gB.at(j, p) += s;
                    }
                break;
            }
            case OpKind::Add: {
                Tensor& gA = g[static_cast<size_t>(e.a)];
                Tensor& gB = g[static_cast<size_t>(e.b)];
                for (size_t i = 0; i < go.values.size(); ++i) {
                    gA.values[i] += go.values[i];
                    gB.values[i] += go.values[i];
                }
                break;
            }
            case OpKind::AddRow: {
                Tensor& gA = g[static_cast<size_t>(e.a)];
                Tensor& gR = g[static_cast<size_t>(e.b)];
                const Tensor& A = val(e.a);
                for (int64_t i = 0; i < A.rows(); ++i)
                    for (int64_t j = 0; j < A.cols(); ++j) {
                        gA.at(i, j) += go.at(i, j);
                        gR.values[static_cast<size_t>(j)] += go.at(i, j);
                    }
                break;
            }
            case OpKind::Scale: {
                Tensor& gA = g[static_cast<size_t>(e.a)];
                for (size_t i = 0; i < go.values.size(); ++i) gA.values[i] += e.scalar * go.values[i];
                break;
            }
            case OpKind::Gelu: {
                const Tensor& A = val(e.a);
                Tensor& gA = g[static_cast<size_t>(e.a)];
                for (size_t i = 0; i < go.values.size(); ++i)
                    gA.values[i] += geluGradScalar(A.values[i]) * go.values[i];
                break;
            }
            case OpKind::SoftmaxLastDim: {
                const Tensor& Y = e.out;
                Tensor& gA = g[static_cast<size_t>(e.a)];
                int64_t n = Y.cols();
                for (int64_t i = 0; i < Y.rows(); ++i) {
                    double dot = 0.0;
                    for (int64_t j = 0; j < n; ++j) dot += go.at(i, j) * Y.at(i, j);
                    for (int64_t j = 0; j < n; ++j)
                        gA.at(i, j) += Y.at(i, j) * (go.at(i, j) - dot);
                }
                break;
            }
            case OpKind::LayerNorm: {
                const Tensor& A = val(e.a);
                const Tensor& G = val(e.b);
                Tensor& gA = g[static_cast<size_t>(e.a)];
                Tensor& gG = g[static_cast<size_t>(e.b)];
                Tensor& gB = g[static_cast<size_t>(e.c)];
                int64_t n = A.cols();
                for (int64_t i = 0; i < A.rows(); ++i) {
                    double mu = 0.0;
                    for (int64_t j = 0; j < n; ++j) mu += A.at(i, j);
                    mu /= static_cast<double>(n);
                    double var = 0.0;
                    for (int64_t j = 0; j < n; ++j) {
                        double d = A.at(i, j) - mu;
                        var += d * d;
                    }
                    var /= static_cast<double>(n);
                    double sigma = std::sqrt(var + kLnEps);
                    double m1 = 0.0, m2 = 0.0;
                    for (int64_t j = 0; j < n; ++j) {
                        double xhat = (A.at(i, j) - mu) / sigma;
                        double dxhat = go.at(i, j) * G.values[static_cast<size_t>(j)];
                        m1 += dxhat;
                        m2 += dxhat * xhat;
                        gG.values[static_cast<size_t>(j)] += go.at(i, j) * xhat;
                        gB.values[static_cast<size_t>(j)] += go.at(i, j);
                    }
                    m1 /= static_cast<double>(n);
                    m2 /= static_cast<double>(n);
                    for (int64_t j = 0; j < n; ++j) {
                        double xhat = (A.at(i, j) - mu) / sigma;
                        double dxhat = go.at(i, j) * G.values[static_cast<size_t>(j)];
                        gA.at(i, j) += (dxhat - m1 - xhat * m2) / sigma;
                    }
                }
                break;
            }
            case OpKind::EmbedLookup: {
                Tensor& gT = g[static_cast<size_t>(e.a)];
                int64_t d = gT.cols();
                for (size_t i = 0; i < e.tokenIds.size(); ++i)
                    for (int64_t j = 0; j < d; ++j)
                        gT.at(e.tokenIds[i], j) += go.at(static_cast<int64_t>(i), j);
                break;
            }
            case OpKind::MulElem: {
                const Tensor& A = val(e.a);
                const Tensor& B = val(e.b);
                Tensor& gA = g[static_cast<size_t>(e.a)];
                Tensor& gB = g[static_cast<size_t>(e.b)];
                for (size_t i = 0; i < go.values.size(); ++i) {
                    gA.values[i] += go.values[i] * B.values[i];
                    gB.values[i] += go.values[i] * A.values[i];
                }
                break;
            }
            case OpKind::SumAll: {
                Tensor& gA = g[static_cast<size_t>(e.a)];
                for (double& v : gA.values) v += go.values[0];
                break;
            }
            case OpKind::OverwriteRow: {
                Tensor& gA = g[static_cast<size_t>(e.a)];
                Tensor& gR = g[static_cast<size_t>(e.b)];
                const Tensor& A = val(e.a);
                for (int64_t i = 0; i < A.rows(); ++i)
                    for (int64_t j = 0; j < A.cols(); ++j) {
                        if (i == e.row)
                            gR.values[static_cast<size_t>(j)] += go.at(i, j);
                        else
                            gA.at(i, j) += go.at(i, j);
                    }
                break;
            }
            case OpKind::AddToRow: {
                Tensor& gA = g[static_cast<size_t>(e.a)];
                Tensor& gR = g[static_cast<size_t>(e.b)];
                const Tensor& A = val(e.a);
                for (int64_t i = 0; i < A.rows(); ++i)
                    for (int64_t j = 0; j < A.cols(); ++j) {
                        gA.at(i, j) += go.at(i, j);
                        if (i == e.row) gR.values[static_cast<size_t>(j)] += go.at(i, j);
                    }
                break;
            }
            case OpKind::Leaf:
                break;
        }
    }
    return g;
}

double ComputeRecord::checkGradients(TensorId loss, int probes, double h, uint64_t seed) const {
    if (probes < 1) throw Error("checkGradients: probes must be >= 1");
    size_t li = checkId(loss);
    std::vector<Tensor> g = gradients(loss);

    std::vector<size_t> leaves;
    for (size_t i = 0; i < entries_.size(); ++i)
        if (entries_[i].op == OpKind::Leaf && entries_[i].out.numel() > 0) leaves.push_back(i);
    if (leaves.empty()) throw Error("checkGradients: record has no leaves");

    std::mt19937_64 rng(seed);
    double worst = 0.0;
    for (int p = 0; p < probes; ++p) {
        size_t leaf = leaves[rng() % leaves.size()];
        size_t coord = static_cast<size_t>(rng() % static_cast<uint64_t>(entries_[leaf].out.numel()));

        Tensor plus = entries_[leaf].out;
        Tensor minus = plus;
        plus.values[coord] += h;
        minus.values[coord] -= h;
        double lp = replay({{static_cast<TensorId>(leaf), plus}})[li].values[0];
        double lm = replay({{static_cast<TensorId>(leaf), minus}})[li].values[0];
        double fd = (lp - lm) / (2.0 * h);
        double an = g[leaf].values[coord];
        double denom = std::max(std::abs(fd), std::abs(an));
        double err = denom >= 1e-6 ? std::abs(fd - an) / denom : std::abs(fd - an);
        worst = std::max(worst, err);
    }
    return worst;
}

}  // namespace cmc
