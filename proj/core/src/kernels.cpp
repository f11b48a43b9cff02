#include "dtp/detail/kernels.hpp"

#include <cblas.h>

#include <algorithm>
#include <cstdlib>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

namespace dtp::detail {

namespace {

// Multi-threaded BLAS may change which micro-kernel touches an element
// depending on the partition, so it always runs on one thread.
void pin_blas_threads() {
  static std::once_flag once;
  std::call_once(once, [] { openblas_set_num_threads(1); });
}

CBLAS_TRANSPOSE tr(bool t) { return t ? CblasTrans : CblasNoTrans; }

}  // namespace

template <>
void gemm<float>(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
                 float alpha, const float* a, std::size_t lda, const float* b,
                 std::size_t ldb, float beta, float* c, std::size_t ldc) {
  if (m == 0 || n == 0) return;
  pin_blas_threads();
  cblas_sgemm(CblasRowMajor, tr(trans_a), tr(trans_b), static_cast<int>(m),
              static_cast<int>(n), static_cast<int>(k), alpha, a, static_cast<int>(lda), b,
              static_cast<int>(ldb), beta, c, static_cast<int>(ldc));
}

// Not BLAS: OpenBLAS 0.3.20's AVX-512 dgemm returns wrong sums for some
// transposed shapes (64x576x64 NT, for one). Double only backs the checks, so
// a plain packed loop is fast enough.
template <>
void gemm<double>(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
                  double alpha, const double* a, std::size_t lda, const double* b,
                  std::size_t ldb, double beta, double* c, std::size_t ldc) {
  if (m == 0 || n == 0) return;
  std::vector<double> pa(m * k), pb(k * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p) pa[i * k + p] = trans_a ? a[p * lda + i] : a[i * lda + p];
  for (std::size_t p = 0; p < k; ++p)
    for (std::size_t j = 0; j < n; ++j) pb[p * n + j] = trans_b ? b[j * ldb + p] : b[p * ldb + j];
  std::vector<double> acc(n);
  for (std::size_t i = 0; i < m; ++i) {
    std::fill(acc.begin(), acc.end(), 0.0);
    for (std::size_t p = 0; p < k; ++p) {
      const double av = pa[i * k + p];
      const double* brow = pb.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) acc[j] += av * brow[j];
    }
    double* crow = c + i * ldc;
    for (std::size_t j = 0; j < n; ++j) {
      crow[j] = (beta == 0.0 ? 0.0 : beta * crow[j]) + alpha * acc[j];
    }
  }
}

std::size_t thread_count() {
  static const std::size_t count = [] {
    std::size_t hw = std::max(1u, std::thread::hardware_concurrency());
    const char* env = std::getenv("DTP_THREADS");
    if (env == nullptr) return std::size_t{1};
    try {
      long v = std::stol(env);
      if (v < 1) return std::size_t{1};
      return std::min(static_cast<std::size_t>(v), hw);
    } catch (...) {
      return std::size_t{1};
    }
  }();
  return count;
}

void parallel_for(std::size_t n, std::size_t grain,
                  const std::function<void(std::size_t, std::size_t)>& fn) {
  if (n == 0) return;
  grain = std::max<std::size_t>(grain, 1);
  std::size_t chunks = (n + grain - 1) / grain;
  std::size_t workers = std::min(thread_count(), chunks);
  auto run_chunk = [&](std::size_t c) { fn(c * grain, std::min(n, (c + 1) * grain)); };
  if (workers <= 1) {
    for (std::size_t c = 0; c < chunks; ++c) run_chunk(c);
    return;
  }
  std::vector<std::jthread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      for (std::size_t c = w; c < chunks; c += workers) run_chunk(c);
    });
  }
}

}  // namespace dtp::detail
