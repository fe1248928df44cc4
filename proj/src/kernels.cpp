#include "fhs/kernels.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <string>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace fhs::kernels {

namespace {

std::atomic<Mode> g_mode{
#ifdef _OPENMP
    Mode::parallel
#else
    Mode::serial
#endif
};

// Tiny workloads lose more to fork/join than they gain; keep them serial.
constexpr std::int64_t kParallelCutoff = 16 * 1024;

int detect_max_threads() {
#ifdef _OPENMP
  int n = omp_get_max_threads();
#else
  int n = 1;
#endif
  if (const char* env = std::getenv("FHS_THREADS")) {
    int cap = std::atoi(env);
    if (cap >= 1) n = std::min(n, cap);
  }
  return std::max(1, n);
}

}  // namespace

void set_mode(Mode m) { g_mode.store(m, std::memory_order_relaxed); }
Mode mode() { return g_mode.load(std::memory_order_relaxed); }

int max_threads() {
  static int n = detect_max_threads();
  return n;
}

namespace serial {

void matmul(const double* a, const double* b, double* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    double* ci = c + static_cast<std::int64_t>(i) * n;
    std::fill(ci, ci + n, 0.0);
    const double* ai = a + static_cast<std::int64_t>(i) * k;
    for (int p = 0; p < k; ++p) {
      const double aik = ai[p];
      const double* bp = b + static_cast<std::int64_t>(p) * n;
      for (int j = 0; j < n; ++j) ci[j] += aik * bp[j];
    }
  }
}

void matmul_acc_nt(const double* g, const double* b, double* da, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const double* gi = g + static_cast<std::int64_t>(i) * n;
    double* dai = da + static_cast<std::int64_t>(i) * k;
    for (int p = 0; p < k; ++p) {
      const double* bp = b + static_cast<std::int64_t>(p) * n;
      double acc = 0.0;
      for (int j = 0; j < n; ++j) acc += gi[j] * bp[j];
      dai[p] += acc;
    }
  }
}

void matmul_acc_tn(const double* a, const double* g, double* db, int m, int k, int n) {
  // db[p][j] += sum_i a[i][p] * g[i][j]; loop order keeps the i-sum serial per element
  for (int p = 0; p < k; ++p) {
    double* dbp = db + static_cast<std::int64_t>(p) * n;
    for (int i = 0; i < m; ++i) {
      const double aip = a[static_cast<std::int64_t>(i) * k + p];
      const double* gi = g + static_cast<std::int64_t>(i) * n;
      for (int j = 0; j < n; ++j) dbp[j] += aip * gi[j];
    }
  }
}

void add(const double* a, const double* b, double* c, std::int64_t n) {
  for (std::int64_t i = 0; i < n; ++i) c[i] = a[i] + b[i];
}

void mul(const double* a, const double* b, double* c, std::int64_t n) {
  for (std::int64_t i = 0; i < n; ++i) c[i] = a[i] * b[i];
}

void relu(const double* a, double* c, std::int64_t n) {
  for (std::int64_t i = 0; i < n; ++i) c[i] = a[i] > 0.0 ? a[i] : 0.0;
}

void relu_backward_acc(const double* a, const double* g, double* da, std::int64_t n) {
  for (std::int64_t i = 0; i < n; ++i)
    if (a[i] > 0.0) da[i] += g[i];
}

void axpy(double alpha, const double* x, double* y, std::int64_t n) {
  for (std::int64_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

}  // namespace serial

namespace parallel {

void matmul(const double* a, const double* b, double* c, int m, int k, int n) {
  const std::int64_t work = static_cast<std::int64_t>(m) * k * n;
  if (work < kParallelCutoff || max_threads() == 1) {
    serial::matmul(a, b, c, m, k, n);
    return;
  }
#pragma omp parallel for schedule(static) num_threads(max_threads())
  for (int i = 0; i < m; ++i) {
    double* ci = c + static_cast<std::int64_t>(i) * n;
    std::fill(ci, ci + n, 0.0);
    const double* ai = a + static_cast<std::int64_t>(i) * k;
    for (int p = 0; p < k; ++p) {
      const double aik = ai[p];
      const double* bp = b + static_cast<std::int64_t>(p) * n;
      for (int j = 0; j < n; ++j) ci[j] += aik * bp[j];
    }
  }
}

void matmul_acc_nt(const double* g, const double* b, double* da, int m, int k, int n) {
  const std::int64_t work = static_cast<std::int64_t>(m) * k * n;
  if (work < kParallelCutoff || max_threads() == 1) {
    serial::matmul_acc_nt(g, b, da, m, k, n);
    return;
  }
#pragma omp parallel for schedule(static) num_threads(max_threads())
  for (int i = 0; i < m; ++i) {
    const double* gi = g + static_cast<std::int64_t>(i) * n;
    double* dai = da + static_cast<std::int64_t>(i) * k;
    for (int p = 0; p < k; ++p) {
      const double* bp = b + static_cast<std::int64_t>(p) * n;
      double acc = 0.0;
      for (int j = 0; j < n; ++j) acc += gi[j] * bp[j];
      dai[p] += acc;
    }
  }
}

void matmul_acc_tn(const double* a, const double* g, double* db, int m, int k, int n) {
  const std::int64_t work = static_cast<std::int64_t>(m) * k * n;
  if (work < kParallelCutoff || max_threads() == 1) {
    serial::matmul_acc_tn(a, g, db, m, k, n);
    return;
  }
  // rows of db are independent; the per-element i-sum stays in serial order
#pragma omp parallel for schedule(static) num_threads(max_threads())
  for (int p = 0; p < k; ++p) {
    double* dbp = db + static_cast<std::int64_t>(p) * n;
    for (int i = 0; i < m; ++i) {
      const double aip = a[static_cast<std::int64_t>(i) * k + p];
      const double* gi = g + static_cast<std::int64_t>(i) * n;
      for (int j = 0; j < n; ++j) dbp[j] += aip * gi[j];
    }
  }
}

void add(const double* a, const double* b, double* c, std::int64_t n) {
  if (n < kParallelCutoff || max_threads() == 1) {
    serial::add(a, b, c, n);
    return;
  }
#pragma omp parallel for schedule(static) num_threads(max_threads())
  for (std::int64_t i = 0; i < n; ++i) c[i] = a[i] + b[i];
}

void mul(const double* a, const double* b, double* c, std::int64_t n) {
  if (n < kParallelCutoff || max_threads() == 1) {
    serial::mul(a, b, c, n);
    return;
  }
#pragma omp parallel for schedule(static) num_threads(max_threads())
  for (std::int64_t i = 0; i < n; ++i) c[i] = a[i] * b[i];
}

void relu(const double* a, double* c, std::int64_t n) {
  if (n < kParallelCutoff || max_threads() == 1) {
    serial::relu(a, c, n);
    return;
  }
#pragma omp parallel for schedule(static) num_threads(max_threads())
  for (std::int64_t i = 0; i < n; ++i) c[i] = a[i] > 0.0 ? a[i] : 0.0;
}

void relu_backward_acc(const double* a, const double* g, double* da, std::int64_t n) {
  if (n < kParallelCutoff || max_threads() == 1) {
    serial::relu_backward_acc(a, g, da, n);
    return;
  }
#pragma omp parallel for schedule(static) num_threads(max_threads())
  for (std::int64_t i = 0; i < n; ++i)
    if (a[i] > 0.0) da[i] += g[i];
}

void axpy(double alpha, const double* x, double* y, std::int64_t n) {
  if (n < kParallelCutoff || max_threads() == 1) {
    serial::axpy(alpha, x, y, n);
    return;
  }
#pragma omp parallel for schedule(static) num_threads(max_threads())
  for (std::int64_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

}  // namespace parallel

#define FHS_DISPATCH(fn, ...)                  \
  do {                                         \
    if (mode() == Mode::serial)                \
      serial::fn(__VA_ARGS__);                 \
    else                                       \
      parallel::fn(__VA_ARGS__);               \
  } while (0)

void matmul(const double* a, const double* b, double* c, int m, int k, int n) {
  FHS_DISPATCH(matmul, a, b, c, m, k, n);
}
void matmul_acc_nt(const double* g, const double* b, double* da, int m, int k, int n) {
  FHS_DISPATCH(matmul_acc_nt, g, b, da, m, k, n);
}
void matmul_acc_tn(const double* a, const double* g, double* db, int m, int k, int n) {
  FHS_DISPATCH(matmul_acc_tn, a, g, db, m, k, n);
}
void add(const double* a, const double* b, double* c, std::int64_t n) {
  FHS_DISPATCH(add, a, b, c, n);
}
void mul(const double* a, const double* b, double* c, std::int64_t n) {
  FHS_DISPATCH(mul, a, b, c, n);
}
void relu(const double* a, double* c, std::int64_t n) {
  FHS_DISPATCH(relu, a, c, n);
}
void relu_backward_acc(const double* a, const double* g, double* da, std::int64_t n) {
  FHS_DISPATCH(relu_backward_acc, a, g, da, n);
}
void axpy(double alpha, const double* x, double* y, std::int64_t n) {
  FHS_DISPATCH(axpy, alpha, x, y, n);
}

#undef FHS_DISPATCH

}  // namespace fhs::kernels
