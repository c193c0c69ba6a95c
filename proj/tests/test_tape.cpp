#include <doctest.h>

#include <random>

#include "cmc/tape.hpp"

using namespace cmc;

namespace {

Tensor randomTensor(std::vector<int64_t> shape, uint64_t seed, double std = 0.5) {
    Tensor t = Tensor::zeros(std::move(shape));
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> d(0.0, std);
    for (double& v : t.values) v = d(rng);
    return t;
}

}  // namespace

TEST_CASE("finite differences confirm per-op gradients") {
    // Each subcase builds a tiny scalar program around one primitive.
    ComputeRecord r;
    TensorId a = r.leaf(randomTensor({3, 4}, 1));
    TensorId b = r.leaf(randomTensor({4, 5}, 2));
    TensorId gain = r.leaf(randomTensor({4}, 3, 0.2));
    TensorId bias = r.leaf(randomTensor({4}, 4, 0.2));
    TensorId row = r.leaf(randomTensor({1, 4}, 5));

    SUBCASE("matmul") {
        TensorId loss = r.sumAll(r.matmul(a, b));
        CHECK(r.checkGradients(loss, 40, 1e-5, 11) < 1e-6);
    }
    SUBCASE("matmulTB") {
        TensorId loss = r.sumAll(r.matmulTB(a, r.leaf(randomTensor({5, 4}, 6))));
        CHECK(r.checkGradients(loss, 40, 1e-5, 12) < 1e-6);
    }
    SUBCASE("add, scale, mulElem") {
        TensorId c = r.leaf(randomTensor({3, 4}, 7));
        TensorId loss = r.sumAll(r.mulElem(r.add(a, c), r.scale(c, 0.7)));
        CHECK(r.checkGradients(loss, 40, 1e-5, 13) < 1e-6);
    }
    SUBCASE("gelu") {
        TensorId loss = r.sumAll(r.gelu(a));
        CHECK(r.checkGradients(loss, 40, 1e-5, 14) < 1e-5);
    }
    SUBCASE("softmax") {
        TensorId loss = r.sumAll(r.mulElem(r.softmaxLastDim(a), a));
        CHECK(r.checkGradients(loss, 40, 1e-5, 15) < 1e-5);
    }
    SUBCASE("layerNorm") {
        TensorId loss = r.sumAll(r.mulElem(r.layerNorm(a, gain, bias), a));
        CHECK(r.checkGradients(loss, 40, 1e-5, 16) < 1e-5);
    }
    SUBCASE("addRow and row edits") {
        TensorId edited = r.addToRow(r.overwriteRow(r.addRow(a, row), 1, row), 2, row);
        TensorId loss = r.sumAll(r.mulElem(edited, edited));
        CHECK(r.checkGradients(loss, 60, 1e-5, 17) < 1e-5);
    }
    SUBCASE("embedLookup") {
        TensorId table = r.leaf(randomTensor({6, 4}, 8));
        TensorId looked = r.embedLookup(table, {0, 5, 2, 2});
        TensorId loss = r.sumAll(r.mulElem(looked, looked));
        CHECK(r.checkGradients(loss, 40, 1e-5, 18) < 1e-5);
    }
}

TEST_CASE("gradient of an overwritten row is zero in the original tensor") {
    ComputeRecord r;
    Tensor av = randomTensor({3, 4}, 21);
    TensorId a = r.leaf(av);
    TensorId row = r.leaf(randomTensor({1, 4}, 22));
    TensorId loss = r.sumAll(r.mulElem(r.overwriteRow(a, 1, row), r.overwriteRow(a, 1, row)));
    auto grads = r.gradients(loss);
    for (int64_t j = 0; j < 4; ++j) CHECK(grads[static_cast<size_t>(a)].at(1, j) == 0.0);
    // Other rows keep nonzero gradients.
    CHECK(grads[static_cast<size_t>(a)].at(0, 0) != 0.0);
}

TEST_CASE("overwriteRow is idempotent") {
    ComputeRecord r;
    TensorId a = r.leaf(randomTensor({3, 4}, 23));
    TensorId row = r.leaf(randomTensor({1, 4}, 24));
    TensorId once = r.overwriteRow(a, 0, row);
    TensorId twice = r.overwriteRow(once, 0, row);
    CHECK(r.value(once).values == r.value(twice).values);
}

TEST_CASE("replay reproduces the record bit-identically") {
    ComputeRecord r;
    TensorId a = r.leaf(randomTensor({4, 4}, 31));
    TensorId gain = r.leaf(randomTensor({4}, 32, 0.1));
    TensorId bias = r.leaf(randomTensor({4}, 33, 0.1));
    TensorId out = r.softmaxLastDim(r.gelu(r.layerNorm(a, gain, bias)));
    auto replayed = r.replay();
    CHECK(replayed[static_cast<size_t>(out)].values == r.value(out).values);
}

TEST_CASE("replay with a leaf override propagates") {
    ComputeRecord r;
    Tensor av = randomTensor({2, 3}, 41);
    TensorId a = r.leaf(av);
    TensorId out = r.scale(a, 2.0);
    Tensor bv = randomTensor({2, 3}, 42);
    auto replayed = r.replay({{a, bv}});
    for (size_t i = 0; i < bv.values.size(); ++i)
        CHECK(replayed[static_cast<size_t>(out)].values[i] == 2.0 * bv.values[i]);
}

TEST_CASE("shape violations throw structured errors") {
    ComputeRecord r;
    TensorId a = r.leaf(randomTensor({3, 4}, 51));
    TensorId b = r.leaf(randomTensor({3, 4}, 52));
    CHECK_THROWS_AS(r.matmul(a, b), Error);
    CHECK_THROWS_AS(r.overwriteRow(a, 9, r.leaf(randomTensor({1, 4}, 53))), Error);
    TensorId notScalar = r.add(a, b);
    CHECK_THROWS_AS(r.gradients(notScalar), Error);
}
