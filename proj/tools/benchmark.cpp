// Compares the serial reference kernels against the OpenMP versions and
// checks the parallel results stay bit-identical.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <random>
#include <thread>
#include <vector>

#include "cmc/kernels.hpp"

namespace {

using Clock = std::chrono::steady_clock;

double seconds(Clock::time_point a, Clock::time_point b) {
    return std::chrono::duration<double>(b - a).count();
}

void fill(std::vector<double>& v, std::mt19937_64& rng) {
    std::normal_distribution<double> dist(0.0, 1.0);
    for (double& x : v) x = dist(rng);
}

}  // namespace

int main(int argc, char** argv) {
    int64_t n = argc > 1 ? std::atoll(argv[1]) : 384;
    int reps = argc > 2 ? std::atoi(argv[2]) : 5;
    std::mt19937_64 rng(42);
    std::vector<double> a(static_cast<size_t>(n * n)), b(a.size()), cs(a.size()), cp(a.size());
    fill(a, rng);
    fill(b, rng);

    auto t0 = Clock::now();
    for (int r = 0; r < reps; ++r)
        cmc::kernels::matmulSerial(a.data(), b.data(), cs.data(), n, n, n);
    auto t1 = Clock::now();
    double serial = seconds(t0, t1) / reps;

    cmc::kernels::setWorkers(static_cast<int>(std::thread::hardware_concurrency()));
    t0 = Clock::now();
    for (int r = 0; r < reps; ++r)
        cmc::kernels::matmulParallel(a.data(), b.data(), cp.data(), n, n, n);
    t1 = Clock::now();
    double parallel = seconds(t0, t1) / reps;

    bool identical = true;
    for (size_t i = 0; i < cs.size(); ++i)
        if (cs[i] != cp[i]) {
            identical = false;
            break;
        }

    std::printf("matmul %lldx%lld, %d reps\n", static_cast<long long>(n),
                static_cast<long long>(n), reps);
    std::printf("serial:   %.4f s\n", serial);
    std::printf("parallel: %.4f s (%d workers)\n", parallel, cmc::kernels::workers());
    std::printf("speedup:  %.2fx\n", serial / parallel);
    std::printf("bit-identical: %s\n", identical ? "yes" : "NO");
    return identical ? 0 : 1;
}
