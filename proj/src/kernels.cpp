#include "cmc/kernels.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace cmc::kernels {

namespace {
int g_workers = 1;
}

void setWorkers(int n) { g_workers = n < 1 ? 1 : n; }
int workers() { return g_workers; }

void matmulSerial(const double* a, const double* b, double* c,
                  int64_t m, int64_t k, int64_t n) {
    for (int64_t i = 0; i < m; ++i) {
        double* ci = c + i * n;
        for (int64_t j = 0; j < n; ++j) ci[j] = 0.0;
        const double* ai = a + i * k;
        for (int64_t p = 0; p < k; ++p) {
            double aip = ai[p];
            const double* bp = b + p * n;
            for (int64_t j = 0; j < n; ++j) ci[j] += aip * bp[j];
        }
    }
}

void matmulParallel(const double* a, const double* b, double* c,
                    int64_t m, int64_t k, int64_t n) {
#ifdef _OPENMP
#pragma omp parallel for schedule(static) num_threads(g_workers)
#endif
    for (int64_t i = 0; i < m; ++i) {
        double* ci = c + i * n;
        for (int64_t j = 0; j < n; ++j) ci[j] = 0.0;
        const double* ai = a + i * k;
        for (int64_t p = 0; p < k; ++p) {
            double aip = ai[p];
            const double* bp = b + p * n;
            for (int64_t j = 0; j < n; ++j) ci[j] += aip * bp[j];
        }
    }
}

void matmul(const double* a, const double* b, double* c,
            int64_t m, int64_t k, int64_t n) {
    if (g_workers > 1 && m > 1)
        matmulParallel(a, b, c, m, k, n);
    else
        matmulSerial(a, b, c, m, k, n);
}

void matmulTBSerial(const double* a, const double* b, double* c,
                    int64_t m, int64_t k, int64_t n) {
    for (int64_t i = 0; i < m; ++i) {
        const double* ai = a + i * k;
        for (int64_t j = 0; j < n; ++j) {
            const double* bj = b + j * k;
            double s = 0.0;
            for (int64_t p = 0; p < k; ++p) s += ai[p] * bj[p];
            c[i * n + j] = s;
        }
    }
}

void matmulTBParallel(const double* a, const double* b, double* c,
                      int64_t m, int64_t k, int64_t n) {
#ifdef _OPENMP
#pragma omp parallel for schedule(static) num_threads(g_workers)
#endif
    for (int64_t i = 0; i < m; ++i) {
        const double* ai = a + i * k;
        for (int64_t j = 0; j < n; ++j) {
            const double* bj = b + j * k;
            double s = 0.0;
            for (int64_t p = 0; p < k; ++p) s += ai[p] * bj[p];
            c[i * n + j] = s;
        }
    }
}

void matmulTB(const double* a, const double* b, double* c,
              int64_t m, int64_t k, int64_t n) {
    if (g_workers > 1 && m > 1)
        matmulTBParallel(a, b, c, m, k, n);
    else
        matmulTBSerial(a, b, c, m, k, n);
}

void parallelFor(int64_t n, const std::function<void(int64_t)>& body) {
#ifdef _OPENMP
    if (g_workers > 1) {
#pragma omp parallel for schedule(static) num_threads(g_workers)
        for (int64_t i = 0; i < n; ++i) body(i);
        return;
    }
#endif
    for (int64_t i = 0; i < n; ++i) body(i);
}

double pairwiseSum(const double* x, int64_t n) {
    if (n <= 8) {
        double s = 0.0;
        for (int64_t i = 0; i < n; ++i) s += x[i];
        return s;
    }
    int64_t half = n / 2;
    return pairwiseSum(x, half) + pairwiseSum(x + half, n - half);
}

}  // namespace cmc::kernels
