#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>

namespace dtp::detail {

/// Row-major C = alpha * op(A) * op(B) + beta * C (BLAS-backed, single thread).
template <typename T>
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
          T alpha, const T* a, std::size_t lda, const T* b, std::size_t ldb, T beta,
          T* c, std::size_t ldc);

/// Worker count from DTP_THREADS (default 1, clamped to hardware threads).
std::size_t thread_count();

/// Runs fn(begin, end) over [0, n) in fixed chunks of `grain`. Chunk
/// boundaries do not depend on the thread count, so results are identical
/// for any DTP_THREADS as long as fn writes disjoint outputs per index.
void parallel_for(std::size_t n, std::size_t grain,
                  const std::function<void(std::size_t, std::size_t)>& fn);

/// Half-pixel source coordinate for bilinear resize, edge-clamped.
struct BilinearTap {
  std::size_t i0;
  std::size_t i1;
  double w1;  // weight of i1; i0 gets 1 - w1
};

inline BilinearTap bilinear_tap(std::size_t dst, std::size_t in, std::size_t out) {
  double src = (static_cast<double>(dst) + 0.5) * static_cast<double>(in) /
                   static_cast<double>(out) - 0.5;
  src = std::clamp(src, 0.0, static_cast<double>(in - 1));
  auto i0 = static_cast<std::size_t>(std::floor(src));
  std::size_t i1 = std::min(i0 + 1, in - 1);
  return {i0, i1, src - static_cast<double>(i0)};
}

/// Resizes one plane (strided by `in_w` / `out_w`), separable rows then cols.
template <typename T>
void resize_plane(const T* src, std::size_t in_h, std::size_t in_w, T* dst,
                  std::size_t out_h, std::size_t out_w) {
  for (std::size_t y = 0; y < out_h; ++y) {
    auto ty = bilinear_tap(y, in_h, out_h);
    const T* r0 = src + ty.i0 * in_w;
    const T* r1 = src + ty.i1 * in_w;
    T wy = static_cast<T>(ty.w1);
    for (std::size_t x = 0; x < out_w; ++x) {
      auto tx = bilinear_tap(x, in_w, out_w);
      T wx = static_cast<T>(tx.w1);
      // lerp form keeps constants exact and outputs inside [min, max]
      T top = r0[tx.i0] + wx * (r0[tx.i1] - r0[tx.i0]);
      T bot = r1[tx.i0] + wx * (r1[tx.i1] - r1[tx.i0]);
      dst[y * out_w + x] = top + wy * (bot - top);
    }
  }
}

}  // namespace dtp::detail
