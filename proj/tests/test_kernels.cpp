#include <doctest.h>

#include <numeric>
#include <random>
#include <vector>

#include "cmc/kernels.hpp"

using namespace cmc;

namespace {

std::vector<double> randomVec(size_t n, uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> d(0.0, 1.0);
    std::vector<double> v(n);
    for (double& x : v) x = d(rng);
    return v;
}

}  // namespace

TEST_CASE("matmul matches a naive triple loop") {
    int64_t m = 7, k = 5, n = 9;
    auto a = randomVec(static_cast<size_t>(m * k), 1);
    auto b = randomVec(static_cast<size_t>(k * n), 2);
    std::vector<double> c(static_cast<size_t>(m * n)), ref(c.size(), 0.0);
    kernels::matmulSerial(a.data(), b.data(), c.data(), m, k, n);
    for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < n; ++j)
            for (int64_t p = 0; p < k; ++p)
                ref[static_cast<size_t>(i * n + j)] +=
                    a[static_cast<size_t>(i * k + p)] * b[static_cast<size_t>(p * n + j)];
    for (size_t i = 0; i < c.size(); ++i) CHECK(c[i] == doctest::Approx(ref[i]).epsilon(1e-12));
}

TEST_CASE("parallel kernels are bit-identical to the serial reference") {
    for (int64_t m : {1, 3, 17, 64}) {
        int64_t k = 23, n = 31;
        auto a = randomVec(static_cast<size_t>(m * k), 10 + static_cast<uint64_t>(m));
        auto b = randomVec(static_cast<size_t>(k * n), 20 + static_cast<uint64_t>(m));
        std::vector<double> cs(static_cast<size_t>(m * n)), cp(cs.size());
        kernels::matmulSerial(a.data(), b.data(), cs.data(), m, k, n);
        for (int workers : {2, 3, 8}) {
            kernels::setWorkers(workers);
            kernels::matmulParallel(a.data(), b.data(), cp.data(), m, k, n);
            CHECK(cs == cp);
        }
        // Transposed-B variant, same property.
        auto bt = randomVec(static_cast<size_t>(n * k), 30 + static_cast<uint64_t>(m));
        kernels::matmulTBSerial(a.data(), bt.data(), cs.data(), m, k, n);
        for (int workers : {2, 5}) {
            kernels::setWorkers(workers);
            kernels::matmulTBParallel(a.data(), bt.data(), cp.data(), m, k, n);
            CHECK(cs == cp);
        }
    }
    kernels::setWorkers(1);
}

TEST_CASE("dispatching wrappers select by worker count without changing results") {
    int64_t m = 12, k = 8, n = 6;
    auto a = randomVec(static_cast<size_t>(m * k), 5);
    auto b = randomVec(static_cast<size_t>(k * n), 6);
    std::vector<double> c1(static_cast<size_t>(m * n)), c2(c1.size());
    kernels::setWorkers(1);
    kernels::matmul(a.data(), b.data(), c1.data(), m, k, n);
    kernels::setWorkers(4);
    kernels::matmul(a.data(), b.data(), c2.data(), m, k, n);
    CHECK(c1 == c2);
    kernels::setWorkers(1);
}

TEST_CASE("setWorkers clamps to at least one thread") {
    kernels::setWorkers(-3);
    CHECK(kernels::workers() == 1);
    kernels::setWorkers(6);
    CHECK(kernels::workers() == 6);
    kernels::setWorkers(1);
}

TEST_CASE("parallelFor touches every index exactly once") {
    for (int workers : {1, 4}) {
        kernels::setWorkers(workers);
        std::vector<int> hits(1000, 0);
        kernels::parallelFor(1000, [&](int64_t i) { hits[static_cast<size_t>(i)] += 1; });
        for (int h : hits) CHECK(h == 1);
    }
    kernels::setWorkers(1);
}

TEST_CASE("pairwiseSum is deterministic and accurate") {
    auto v = randomVec(1537, 99);
    double s1 = kernels::pairwiseSum(v.data(), static_cast<int64_t>(v.size()));
    double s2 = kernels::pairwiseSum(v.data(), static_cast<int64_t>(v.size()));
    CHECK(s1 == s2);
    double naive = std::accumulate(v.begin(), v.end(), 0.0);
    CHECK(s1 == doctest::Approx(naive).epsilon(1e-12));
    CHECK(kernels::pairwiseSum(v.data(), 0) == 0.0);
}
