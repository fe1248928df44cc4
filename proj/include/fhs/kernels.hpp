#pragma once

#include <cstdint>

// Dense numeric inner loops. Every kernel exists twice: a serial reference
// in kernels::serial and an OpenMP version in kernels::parallel. The
// parallel versions split work so that each output element is still
// accumulated in the same order as the serial code, so the two produce
// bitwise-identical results; tests/test_kernels.cpp asserts this and
// benchmarks/bench_kernels.cpp compares their speed.
//
// The unqualified functions dispatch on the process-wide mode (default:
// parallel when OpenMP is compiled in). FHS_THREADS caps the worker count.

namespace fhs::kernels {

enum class Mode { serial, parallel };

void set_mode(Mode m);
Mode mode();

// Worker cap: min(FHS_THREADS if set, omp_get_max_threads()). 1 without OpenMP.
int max_threads();

namespace serial {
// c[m x n] = a[m x k] * b[k x n]
void matmul(const double* a, const double* b, double* c, int m, int k, int n);
// da[m x k] += g[m x n] * b[k x n]^T
void matmul_acc_nt(const double* g, const double* b, double* da, int m, int k, int n);
// db[k x n] += a[m x k]^T * g[m x n]
void matmul_acc_tn(const double* a, const double* g, double* db, int m, int k, int n);
void add(const double* a, const double* b, double* c, std::int64_t n);
void mul(const double* a, const double* b, double* c, std::int64_t n);
void relu(const double* a, double* c, std::int64_t n);
// da += g where a > 0 (subgradient at 0 is 0)
void relu_backward_acc(const double* a, const double* g, double* da, std::int64_t n);
// y += alpha * x
void axpy(double alpha, const double* x, double* y, std::int64_t n);
}  // namespace serial

namespace parallel {
void matmul(const double* a, const double* b, double* c, int m, int k, int n);
void matmul_acc_nt(const double* g, const double* b, double* da, int m, int k, int n);
void matmul_acc_tn(const double* a, const double* g, double* db, int m, int k, int n);
void add(const double* a, const double* b, double* c, std::int64_t n);
void mul(const double* a, const double* b, double* c, std::int64_t n);
void relu(const double* a, double* c, std::int64_t n);
void relu_backward_acc(const double* a, const double* g, double* da, std::int64_t n);
void axpy(double alpha, const double* x, double* y, std::int64_t n);
}  // namespace parallel

void matmul(const double* a, const double* b, double* c, int m, int k, int n);
void matmul_acc_nt(const double* g, const double* b, double* da, int m, int k, int n);
void matmul_acc_tn(const double* a, const double* g, double* db, int m, int k, int n);
void add(const double* a, const double* b, double* c, std::int64_t n);
void mul(const double* a, const double* b, double* c, std::int64_t n);
void relu(const double* a, double* c, std::int64_t n);
void relu_backward_acc(const double* a, const double* g, double* da, std::int64_t n);
void axpy(double alpha, const double* x, double* y, std::int64_t n);

}  // namespace fhs::kernels
