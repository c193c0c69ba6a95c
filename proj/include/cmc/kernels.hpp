#pragma once

#include <cstdint>
#include <functional>

#include "cmc/tensor.hpp"

namespace cmc::kernels {

/// Number of worker threads used by the OpenMP kernels. 1 selects the serial
/// reference path. Defaults to 1; the CLI raises it from CMC_WORKERS.
void setWorkers(int n);
int workers();

/// C[m,n] = A[m,k] * B[k,n]. Serial reference implementation.
void matmulSerial(const double* a, const double* b, double* c,
                  int64_t m, int64_t k, int64_t n);

/// Same contract as matmulSerial, rows distributed over OpenMP threads.
/// Each output row is computed by exactly one thread with the serial inner
/// loop, so results are bit-identical to the reference for any thread count.
void matmulParallel(const double* a, const double* b, double* c,
                    int64_t m, int64_t k, int64_t n);

/// Dispatches to the serial or parallel kernel based on workers().
void matmul(const double* a, const double* b, double* c,
            int64_t m, int64_t k, int64_t n);

/// C[m,n] = A[m,k] * B[n,k]^T.
void matmulTBSerial(const double* a, const double* b, double* c,
                    int64_t m, int64_t k, int64_t n);
void matmulTBParallel(const double* a, const double* b, double* c,
                      int64_t m, int64_t k, int64_t n);
void matmulTB(const double* a, const double* b, double* c,
              int64_t m, int64_t k, int64_t n);

/// Runs body(i) for i in [0, n), distributed over OpenMP threads when
/// workers() > 1. Iterations must be independent and write disjoint state.
void parallelFor(int64_t n, const std::function<void(int64_t)>& body);

/// Fixed-order pairwise summation; deterministic for a given input order.
double pairwiseSum(const double* x, int64_t n);

}  // namespace cmc::kernels
