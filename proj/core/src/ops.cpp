#include "dtp/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "dtp/detail/kernels.hpp"

namespace dtp {

namespace {

using detail::gemm;
using detail::parallel_for;

template <typename T>
void check_finite(const Tensor<T>& t, const char* op) {
  for (auto v : t.data()) {
    if (!std::isfinite(v)) {
      throw NumericError(std::string(op) + " produced a non-finite value");
    }
  }
}

[[noreturn]] void fail(const std::string& op, const std::string& msg) {
  throw ContractError(op + ": " + msg);
}

template <typename T>
void require_rank(const Tensor<T>& t, std::size_t rank, const char* op, const char* what) {
  if (!t.defined()) fail(op, std::string(what) + " is undefined");
  if (t.rank() != rank) {
    fail(op, std::string(what) + " must have rank " + std::to_string(rank) + ", got " +
                 shape_str(t.shape()));
  }
}

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape()) {
    fail(op, "shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

// --- conv helpers -------------------------------------------------------------

struct ConvGeom {
  std::size_t c, h, w, k, stride, pad, ho, wo;
};

template <typename T>
void im2col(const T* x, const ConvGeom& g, T* col) {
  const std::size_t plane = g.ho * g.wo;
  parallel_for(g.c, 8, [&](std::size_t c0, std::size_t c1) {
    for (std::size_t c = c0; c < c1; ++c) {
      const T* xc = x + c * g.h * g.w;
      for (std::size_t ky = 0; ky < g.k; ++ky) {
        for (std::size_t kx = 0; kx < g.k; ++kx) {
          T* dst = col + ((c * g.k + ky) * g.k + kx) * plane;
          for (std::size_t oy = 0; oy < g.ho; ++oy) {
            long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
            T* drow = dst + oy * g.wo;
            if (iy < 0 || iy >= static_cast<long>(g.h)) {
              std::fill(drow, drow + g.wo, T(0));
              continue;
            }
            const T* srow = xc + static_cast<std::size_t>(iy) * g.w;
            for (std::size_t ox = 0; ox < g.wo; ++ox) {
              long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.pad);
              drow[ox] = (ix < 0 || ix >= static_cast<long>(g.w))
                             ? T(0)
                             : srow[static_cast<std::size_t>(ix)];
            }
          }
        }
      }
    }
  });
}

template <typename T>
void col2im_add(const T* col, const ConvGeom& g, T* dx) {
  const std::size_t plane = g.ho * g.wo;
  parallel_for(g.c, 8, [&](std::size_t c0, std::size_t c1) {
    for (std::size_t c = c0; c < c1; ++c) {
      T* xc = dx + c * g.h * g.w;
      for (std::size_t ky = 0; ky < g.k; ++ky) {
        for (std::size_t kx = 0; kx < g.k; ++kx) {
          const T* src = col + ((c * g.k + ky) * g.k + kx) * plane;
          for (std::size_t oy = 0; oy < g.ho; ++oy) {
            long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
            if (iy < 0 || iy >= static_cast<long>(g.h)) continue;
            T* xrow = xc + static_cast<std::size_t>(iy) * g.w;
            const T* srow = src + oy * g.wo;
            for (std::size_t ox = 0; ox < g.wo; ++ox) {
              long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.pad);
              if (ix >= 0 && ix < static_cast<long>(g.w)) {
                xrow[static_cast<std::size_t>(ix)] += srow[ox];
              }
            }
          }
        }
      }
    }
  });
}

bool is_pointwise(const ConvGeom& g) { return g.k == 1 && g.stride == 1 && g.pad == 0; }

}  // namespace

// --- conv2d -----------------------------------------------------------------------

template <typename T>
Tensor<T> conv2d(Graph<T>& graph, const Tensor<T>& input, const Tensor<T>& weight,
                 const Tensor<T>& bias, std::size_t stride, std::size_t pad) {
  constexpr const char* op = "conv2d";
  require_rank(input, 4, op, "input");
  require_rank(weight, 4, op, "weight");
  require_rank(bias, 1, op, "bias");
  if (stride == 0) fail(op, "stride must be positive");
  const std::size_t n = input.dim(0), cin = input.dim(1), h = input.dim(2), w = input.dim(3);
  const std::size_t cout = weight.dim(0), k = weight.dim(2);
  if (weight.dim(1) != cin) {
    fail(op, "input channels " + std::to_string(cin) + " != weight in-channels " +
                 std::to_string(weight.dim(1)) + " (input " + shape_str(input.shape()) +
                 ", weight " + shape_str(weight.shape()) + ")");
  }
  if (weight.dim(3) != k) fail(op, "kernel must be square, got " + shape_str(weight.shape()));
  if (bias.dim(0) != cout) {
    fail(op, "bias length " + std::to_string(bias.dim(0)) + " != out-channels " +
                 std::to_string(cout));
  }
  if (h + 2 * pad < k || w + 2 * pad < k) {
    fail(op, "non-positive output extent for input " + shape_str(input.shape()) +
                 " with kernel " + std::to_string(k) + " and pad " + std::to_string(pad));
  }
  ConvGeom geo{cin, h, w, k, stride, pad, (h + 2 * pad - k) / stride + 1,
               (w + 2 * pad - k) / stride + 1};
  const std::size_t plane = geo.ho * geo.wo, ckk = cin * k * k;

  Tensor<T> out({n, cout, geo.ho, geo.wo});
  std::vector<T> col(is_pointwise(geo) ? 0 : ckk * plane);
  for (std::size_t b = 0; b < n; ++b) {
    const T* x = input.data().data() + b * cin * h * w;
    T* y = out.data().data() + b * cout * plane;
    const T* cols = x;
    if (!is_pointwise(geo)) {
      im2col(x, geo, col.data());
      cols = col.data();
    }
    gemm<T>(false, false, cout, plane, ckk, T(1), weight.data().data(), ckk, cols, plane, T(0),
            y, plane);
    for (std::size_t c = 0; c < cout; ++c) {
      T bc = bias[c];
      T* yc = y + c * plane;
      for (std::size_t i = 0; i < plane; ++i) yc[i] += bc;
    }
  }
  check_finite(out, op);

  if (Graph<T>::any_requires_grad({&input, &weight, &bias})) {
    graph.record(op, {input, weight, bias}, out,
                 [input, weight, bias, out, geo, n, cout]() mutable {
                   const std::size_t plane = geo.ho * geo.wo, ckk = geo.c * geo.k * geo.k;
                   const std::size_t in_sz = geo.c * geo.h * geo.w;
                   auto gy = out.grad();
                   std::vector<T> col(is_pointwise(geo) ? 0 : ckk * plane);
                   std::vector<T> dcol(ckk * plane);
                   for (std::size_t b = 0; b < n; ++b) {
                     const T* dy = gy.data() + b * cout * plane;
                     if (weight.requires_grad()) {
                       const T* cols = input.data().data() + b * in_sz;
                       if (!is_pointwise(geo)) {
                         im2col(cols, geo, col.data());
                         cols = col.data();
                       }
                       gemm<T>(false, true, cout, ckk, plane, T(1), dy, plane, cols, plane, T(1),
                               weight.ensure_grad().data(), ckk);
                     }
                     if (bias.requires_grad()) {
                       auto gb = bias.ensure_grad();
                       for (std::size_t c = 0; c < cout; ++c) {
                         T s = 0;
                         for (std::size_t i = 0; i < plane; ++i) s += dy[c * plane + i];
                         gb[c] += s;
                       }
                     }
                     if (input.requires_grad()) {
                       T* dx = input.ensure_grad().data() + b * in_sz;
                       if (is_pointwise(geo)) {
                         gemm<T>(true, false, ckk, plane, cout, T(1), weight.data().data(), ckk,
                                 dy, plane, T(1), dx, plane);
                       } else {
                         gemm<T>(true, false, ckk, plane, cout, T(1), weight.data().data(), ckk,
                                 dy, plane, T(0), dcol.data(), plane);
                         col2im_add(dcol.data(), geo, dx);
                       }
                     }
                   }
                 });
  }
  return out;
}

// --- maxpool ----------------------------------------------------------------------

template <typename T>
Tensor<T> maxpool2d_2x2(Graph<T>& graph, const Tensor<T>& input) {
  constexpr const char* op = "maxpool2d_2x2";
  require_rank(input, 4, op, "input");
  const std::size_t n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  if (h % 2 != 0 || w % 2 != 0) {
    fail(op, "spatial extents must be even, got " + shape_str(input.shape()));
  }
  const std::size_t ho = h / 2, wo = w / 2, planes = n * c;
  Tensor<T> out({n, c, ho, wo});
  // Input offset of the winning element per output, for the backward pass.
  auto argmax = std::make_shared<std::vector<std::size_t>>(out.numel());
  const T* x = input.data().data();
  T* y = out.data().data();
  parallel_for(planes, 16, [&](std::size_t p0, std::size_t p1) {
    for (std::size_t p = p0; p < p1; ++p) {
      for (std::size_t oy = 0; oy < ho; ++oy) {
        for (std::size_t ox = 0; ox < wo; ++ox) {
          std::size_t base = p * h * w + 2 * oy * w + 2 * ox;
          const std::size_t cand[4] = {base, base + 1, base + w, base + w + 1};
          std::size_t best = cand[0];
          for (int i = 1; i < 4; ++i) {
            if (x[cand[i]] > x[best]) best = cand[i];  // strict: first max wins
          }
          std::size_t o = p * ho * wo + oy * wo + ox;
          y[o] = x[best];
          (*argmax)[o] = best;
        }
      }
    }
  });
  check_finite(out, op);
  if (input.requires_grad()) {
    graph.record(op, {input}, out, [input, out, argmax]() mutable {
      auto gy = out.grad();
      auto gx = input.ensure_grad();
      for (std::size_t i = 0; i < gy.size(); ++i) gx[(*argmax)[i]] += gy[i];
    });
  }
  return out;
}

// --- relu ------------------------------------------------------------------------------

template <typename T>
Tensor<T> relu(Graph<T>& graph, const Tensor<T>& input) {
  Tensor<T> out(input.shape());
  auto x = input.data();
  auto y = out.data();
  // NaN must survive so the finite check sees it
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] < T(0) ? T(0) : x[i];
  check_finite(out, "relu");
  if (input.requires_grad()) {
    graph.record("relu", {input}, out, [input, out]() mutable {
      auto gy = out.grad();
      auto gx = input.ensure_grad();
      auto x = input.data();
      for (std::size_t i = 0; i < gy.size(); ++i) {
        if (x[i] > T(0)) gx[i] += gy[i];
      }
    });
  }
  return out;
}

// --- bilinear resize ----------------------------------------------------------------------

template <typename T>
Tensor<T> resize_bilinear(Graph<T>& graph, const Tensor<T>& input, std::size_t out_h,
                          std::size_t out_w) {
  constexpr const char* op = "resize_bilinear";
  if (!input.defined() || input.rank() < 2) fail(op, "input needs at least two axes");
  if (out_h == 0 || out_w == 0) fail(op, "output extents must be positive");
  const std::size_t r = input.rank();
  const std::size_t h = input.dim(r - 2), w = input.dim(r - 1);
  if (h == 0 || w == 0) fail(op, "input extents must be positive");
  const std::size_t planes = input.numel() / (h * w);
  Shape shape = input.shape();
  shape[r - 2] = out_h;
  shape[r - 1] = out_w;
  Tensor<T> out(shape);
  parallel_for(planes, 16, [&](std::size_t p0, std::size_t p1) {
    for (std::size_t p = p0; p < p1; ++p) {
      detail::resize_plane(input.data().data() + p * h * w, h, w,
                           out.data().data() + p * out_h * out_w, out_h, out_w);
    }
  });
  check_finite(out, op);
  if (input.requires_grad()) {
    graph.record(op, {input}, out, [input, out, planes, h, w, out_h, out_w]() mutable {
      auto gy = out.grad();
      auto gx = input.ensure_grad();
      std::vector<detail::BilinearTap> tx(out_w);
      for (std::size_t x = 0; x < out_w; ++x) tx[x] = detail::bilinear_tap(x, w, out_w);
      for (std::size_t p = 0; p < planes; ++p) {
        T* dx = gx.data() + p * h * w;
        const T* dy = gy.data() + p * out_h * out_w;
        for (std::size_t y = 0; y < out_h; ++y) {
          auto ty = detail::bilinear_tap(y, h, out_h);
          T wy1 = static_cast<T>(ty.w1), wy0 = T(1) - wy1;
          for (std::size_t x = 0; x < out_w; ++x) {
            T g = dy[y * out_w + x];
            T wx1 = static_cast<T>(tx[x].w1), wx0 = T(1) - wx1;
            dx[ty.i0 * w + tx[x].i0] += g * wy0 * wx0;
            dx[ty.i0 * w + tx[x].i1] += g * wy0 * wx1;
            dx[ty.i1 * w + tx[x].i0] += g * wy1 * wx0;
            dx[ty.i1 * w + tx[x].i1] += g * wy1 * wx1;
          }
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> upsample_bilinear_2x(Graph<T>& graph, const Tensor<T>& input) {
  if (!input.defined() || input.rank() < 2) {
    fail("upsample_bilinear_2x", "input needs at least two axes");
  }
  const std::size_t r = input.rank();
  return resize_bilinear(graph, input, 2 * input.dim(r - 2), 2 * input.dim(r - 1));
}

// --- matmul / transpose ---------------------------------------------------------------------

template <typename T>
Tensor<T> matmul(Graph<T>& graph, const Tensor<T>& a, const Tensor<T>& b) {
  constexpr const char* op = "matmul";
  require_rank(a, 2, op, "lhs");
  require_rank(b, 2, op, "rhs");
  const std::size_t p = a.dim(0), q = a.dim(1), r = b.dim(1);
  if (b.dim(0) != q) {
    fail(op, "inner dimensions differ: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  Tensor<T> out({p, r});
  gemm<T>(false, false, p, r, q, T(1), a.data().data(), q, b.data().data(), r, T(0),
          out.data().data(), r);
  check_finite(out, op);
  if (Graph<T>::any_requires_grad({&a, &b})) {
    graph.record(op, {a, b}, out, [a, b, out, p, q, r]() mutable {
      const T* gy = out.grad().data();
      if (a.requires_grad()) {
        gemm<T>(false, true, p, q, r, T(1), gy, r, b.data().data(), r, T(1),
                a.ensure_grad().data(), q);
      }
      if (b.requires_grad()) {
        gemm<T>(true, false, q, r, p, T(1), a.data().data(), q, gy, r, T(1),
                b.ensure_grad().data(), r);
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> transpose(Graph<T>& graph, const Tensor<T>& a) {
  require_rank(a, 2, "transpose", "input");
  const std::size_t p = a.dim(0), q = a.dim(1);
  Tensor<T> out({q, p});
  auto x = a.data();
  auto y = out.data();
  for (std::size_t i = 0; i < p; ++i) {
    for (std::size_t j = 0; j < q; ++j) y[j * p + i] = x[i * q + j];
  }
  if (a.requires_grad()) {
    graph.record("transpose", {a}, out, [a, out, p, q]() mutable {
      auto gy = out.grad();
      auto gx = a.ensure_grad();
      for (std::size_t i = 0; i < p; ++i) {
        for (std::size_t j = 0; j < q; ++j) gx[i * q + j] += gy[j * p + i];
      }
    });
  }
  return out;
}

// --- softmax ------------------------------------------------------------------------------------

template <typename T>
Tensor<T> softmax_rows(Graph<T>& graph, const Tensor<T>& logits, T scale) {
  constexpr const char* op = "softmax_rows";
  require_rank(logits, 2, op, "logits");
  if (!(scale > T(0))) fail(op, "scale must be positive, got " + std::to_string(scale));
  const std::size_t p = logits.dim(0), q = logits.dim(1);
  Tensor<T> out({p, q});
  const T inv = T(1) / scale;
  parallel_for(p, 64, [&](std::size_t r0, std::size_t r1) {
    for (std::size_t i = r0; i < r1; ++i) {
      const T* x = logits.data().data() + i * q;
      T* y = out.data().data() + i * q;
      T mx = *std::max_element(x, x + q);
      T s = 0;
      for (std::size_t j = 0; j < q; ++j) {
        y[j] = std::exp((x[j] - mx) * inv);
        s += y[j];
      }
      for (std::size_t j = 0; j < q; ++j) y[j] /= s;
    }
  });
  check_finite(out, op);
  if (logits.requires_grad()) {
    graph.record(op, {logits}, out, [logits, out, p, q, inv]() mutable {
      auto gy = out.grad();
      auto gx = logits.ensure_grad();
      auto y = out.data();
      for (std::size_t i = 0; i < p; ++i) {
        T dot = 0;
        for (std::size_t j = 0; j < q; ++j) dot += gy[i * q + j] * y[i * q + j];
        for (std::size_t j = 0; j < q; ++j) {
          gx[i * q + j] += y[i * q + j] * (gy[i * q + j] - dot) * inv;
        }
      }
    });
  }
  return out;
}

// --- reduce -------------------------------------------------------------------------------------

template <typename T>
Tensor<T> reduce(Graph<T>& graph, const Tensor<T>& input, ReduceKind kind,
                 std::vector<std::size_t> axes) {
  constexpr const char* op = "reduce";
  if (!input.defined()) fail(op, "input is undefined");
  const std::size_t r = input.rank();
  std::vector<bool> reduced(r, axes.empty());
  for (auto a : axes) {
    if (a >= r) {
      fail(op, "axis " + std::to_string(a) + " out of range for " + shape_str(input.shape()));
    }
    reduced[a] = true;
  }
  Shape out_shape;
  std::size_t count = 1;
  for (std::size_t a = 0; a < r; ++a) {
    if (reduced[a]) {
      count *= input.dim(a);
    } else {
      out_shape.push_back(input.dim(a));
    }
  }
  // Map each input element to its output slot (row-major walk keeps order fixed).
  std::vector<std::size_t> out_stride(r, 0);
  {
    std::size_t s = 1;
    for (std::size_t a = r; a-- > 0;) {
      if (!reduced[a]) {
        out_stride[a] = s;
        s *= input.dim(a);
      }
    }
  }
  auto slot_of = [&, r](std::size_t flat) {
    std::size_t slot = 0;
    for (std::size_t a = r; a-- > 0;) {
      std::size_t d = input.dim(a);
      slot += (flat % d) * out_stride[a];
      flat /= d;
    }
    return slot;
  };
  Tensor<T> out(out_shape);
  std::vector<double> acc(out.numel(), 0.0);
  auto x = input.data();
  const bool full = out.numel() == 1;
  for (std::size_t i = 0; i < x.size(); ++i) acc[full ? 0 : slot_of(i)] += x[i];
  const double div = (kind == ReduceKind::kMean && count > 0) ? static_cast<double>(count) : 1.0;
  for (std::size_t i = 0; i < acc.size(); ++i) out[i] = static_cast<T>(acc[i] / div);
  check_finite(out, op);
  if (input.requires_grad()) {
    std::vector<std::size_t> slots;
    if (!full) {
      slots.resize(x.size());
      for (std::size_t i = 0; i < x.size(); ++i) slots[i] = slot_of(i);
    }
    graph.record(op, {input}, out,
                 [input, out, slots = std::move(slots), div, full]() mutable {
                   auto gy = out.grad();
                   auto gx = input.ensure_grad();
                   T inv = static_cast<T>(1.0 / div);
                   for (std::size_t i = 0; i < gx.size(); ++i) {
                     gx[i] += gy[full ? 0 : slots[i]] * inv;
                   }
                 });
  }
  return out;
}

// --- elementwise -----------------------------------------------------------------------------

template <typename T>
Tensor<T> axpby(Graph<T>& graph, T alpha, const Tensor<T>& a, T beta, const Tensor<T>& b) {
  require_same_shape(a, b, "axpby");
  Tensor<T> out(a.shape());
  auto x = a.data(), z = b.data();
  auto y = out.data();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = alpha * x[i] + beta * z[i];
  check_finite(out, "axpby");
  if (Graph<T>::any_requires_grad({&a, &b})) {
    graph.record("axpby", {a, b}, out, [a, b, out, alpha, beta]() mutable {
      auto gy = out.grad();
      if (a.requires_grad()) {
        auto ga = a.ensure_grad();
        for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += alpha * gy[i];
      }
      if (b.requires_grad()) {
        auto gb = b.ensure_grad();
        for (std::size_t i = 0; i < gy.size(); ++i) gb[i] += beta * gy[i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> add(Graph<T>& graph, const Tensor<T>& a, const Tensor<T>& b) {
  return axpby(graph, T(1), a, T(1), b);
}

template <typename T>
Tensor<T> sub(Graph<T>& graph, const Tensor<T>& a, const Tensor<T>& b) {
  return axpby(graph, T(1), a, T(-1), b);
}

template <typename T>
Tensor<T> mul(Graph<T>& graph, const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "mul");
  Tensor<T> out(a.shape());
  auto x = a.data(), z = b.data();
  auto y = out.data();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = x[i] * z[i];
  check_finite(out, "mul");
  if (Graph<T>::any_requires_grad({&a, &b})) {
    graph.record("mul", {a, b}, out, [a, b, out]() mutable {
      auto gy = out.grad();
      if (a.requires_grad()) {
        auto ga = a.ensure_grad();
        auto z = b.data();
        for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i] * z[i];
      }
      if (b.requires_grad()) {
        auto gb = b.ensure_grad();
        auto x = a.data();
        for (std::size_t i = 0; i < gy.size(); ++i) gb[i] += gy[i] * x[i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> scale(Graph<T>& graph, const Tensor<T>& a, T alpha) {
  Tensor<T> out(a.shape());
  auto x = a.data();
  auto y = out.data();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = alpha * x[i];
  check_finite(out, "scale");
  if (a.requires_grad()) {
    graph.record("scale", {a}, out, [a, out, alpha]() mutable {
      auto gy = out.grad();
      auto ga = a.ensure_grad();
      for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += alpha * gy[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> clamp(Graph<T>& graph, const Tensor<T>& a, T lo, T hi) {
  if (lo > hi) fail("clamp", "lo > hi");
  Tensor<T> out(a.shape());
  auto x = a.data();
  auto y = out.data();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = std::clamp(x[i], lo, hi);
  check_finite(out, "clamp");
  if (a.requires_grad()) {
    graph.record("clamp", {a}, out, [a, out, lo, hi]() mutable {
      auto gy = out.grad();
      auto ga = a.ensure_grad();
      auto x = a.data();
      for (std::size_t i = 0; i < gy.size(); ++i) {
        if (x[i] >= lo && x[i] <= hi) ga[i] += gy[i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> channel_affine(Graph<T>& graph, const Tensor<T>& a, const std::vector<T>& mul_c,
                         const std::vector<T>& add_c) {
  constexpr const char* op = "channel_affine";
  require_rank(a, 4, op, "input");
  const std::size_t n = a.dim(0), c = a.dim(1), plane = a.dim(2) * a.dim(3);
  if (mul_c.size() != c || add_c.size() != c) {
    fail(op, "expected " + std::to_string(c) + " per-channel coefficients");
  }
  Tensor<T> out(a.shape());
  auto x = a.data();
  auto y = out.data();
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      std::size_t base = (b * c + ch) * plane;
      for (std::size_t i = 0; i < plane; ++i) y[base + i] = x[base + i] * mul_c[ch] + add_c[ch];
    }
  }
  check_finite(out, op);
  if (a.requires_grad()) {
    graph.record(op, {a}, out, [a, out, mul_c, n, c, plane]() mutable {
      auto gy = out.grad();
      auto ga = a.ensure_grad();
      for (std::size_t b = 0; b < n; ++b) {
        for (std::size_t ch = 0; ch < c; ++ch) {
          std::size_t base = (b * c + ch) * plane;
          for (std::size_t i = 0; i < plane; ++i) ga[base + i] += gy[base + i] * mul_c[ch];
        }
      }
    });
  }
  return out;
}

// --- layout ---------------------------------------------------------------------------------------

template <typename T>
Tensor<T> reshape(Graph<T>& graph, const Tensor<T>& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    fail("reshape", "cannot reshape " + shape_str(a.shape()) + " to " + shape_str(shape));
  }
  Tensor<T> out(std::move(shape), std::vector<T>(a.data().begin(), a.data().end()));
  if (a.requires_grad()) {
    graph.record("reshape", {a}, out, [a, out]() mutable {
      auto gy = out.grad();
      auto ga = a.ensure_grad();
      for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> flatten_positions(Graph<T>& graph, const Tensor<T>& a) {
  constexpr const char* op = "flatten_positions";
  require_rank(a, 4, op, "input");
  if (a.dim(0) != 1) fail(op, "batch must be 1, got " + shape_str(a.shape()));
  const std::size_t c = a.dim(1), hw = a.dim(2) * a.dim(3);
  Tensor<T> out({hw, c});
  auto x = a.data();
  auto y = out.data();
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t u = 0; u < hw; ++u) y[u * c + ch] = x[ch * hw + u];
  }
  if (a.requires_grad()) {
    graph.record(op, {a}, out, [a, out, c, hw]() mutable {
      auto gy = out.grad();
      auto ga = a.ensure_grad();
      for (std::size_t ch = 0; ch < c; ++ch) {
        for (std::size_t u = 0; u < hw; ++u) ga[ch * hw + u] += gy[u * c + ch];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> unflatten_positions(Graph<T>& graph, const Tensor<T>& a, std::size_t h,
                              std::size_t w) {
  constexpr const char* op = "unflatten_positions";
  require_rank(a, 2, op, "input");
  const std::size_t hw = a.dim(0), c = a.dim(1);
  if (h * w != hw) {
    fail(op, std::to_string(hw) + " positions cannot form " + std::to_string(h) + "x" +
                 std::to_string(w));
  }
  Tensor<T> out({1, c, h, w});
  auto x = a.data();
  auto y = out.data();
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t u = 0; u < hw; ++u) y[ch * hw + u] = x[u * c + ch];
  }
  if (a.requires_grad()) {
    graph.record(op, {a}, out, [a, out, c, hw]() mutable {
      auto gy = out.grad();
      auto ga = a.ensure_grad();
      for (std::size_t ch = 0; ch < c; ++ch) {
        for (std::size_t u = 0; u < hw; ++u) ga[u * c + ch] += gy[ch * hw + u];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> extract_patches(Graph<T>& graph, const Tensor<T>& a, std::size_t k) {
  constexpr const char* op = "extract_patches";
  require_rank(a, 4, op, "input");
  if (a.dim(0) != 1) fail(op, "batch must be 1, got " + shape_str(a.shape()));
  const std::size_t c = a.dim(1), h = a.dim(2), w = a.dim(3);
  if (k == 0 || k > h || k > w) {
    fail(op, "patch " + std::to_string(k) + " larger than feature map " + shape_str(a.shape()));
  }
  const std::size_t ph = h - k + 1, pw = w - k + 1, d = c * k * k;
  Tensor<T> out({ph * pw, d});
  auto x = a.data();
  auto y = out.data();
  for (std::size_t py = 0; py < ph; ++py) {
    for (std::size_t px = 0; px < pw; ++px) {
      T* row = y.data() + (py * pw + px) * d;
      for (std::size_t ch = 0; ch < c; ++ch) {
        for (std::size_t dy = 0; dy < k; ++dy) {
          const T* src = x.data() + (ch * h + py + dy) * w + px;
          std::copy(src, src + k, row + (ch * k + dy) * k);
        }
      }
    }
  }
  if (a.requires_grad()) {
    graph.record(op, {a}, out, [a, out, c, h, w, k, ph, pw, d]() mutable {
      auto gy = out.grad();
      auto ga = a.ensure_grad();
      for (std::size_t py = 0; py < ph; ++py) {
        for (std::size_t px = 0; px < pw; ++px) {
          const T* row = gy.data() + (py * pw + px) * d;
          for (std::size_t ch = 0; ch < c; ++ch) {
            for (std::size_t dy = 0; dy < k; ++dy) {
              T* dst = ga.data() + (ch * h + py + dy) * w + px;
              const T* src = row + (ch * k + dy) * k;
              for (std::size_t dx = 0; dx < k; ++dx) dst[dx] += src[dx];
            }
          }
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> gather_rows(Graph<T>& graph, const Tensor<T>& a, const std::vector<std::size_t>& rows) {
  constexpr const char* op = "gather_rows";
  require_rank(a, 2, op, "input");
  const std::size_t p = a.dim(0), q = a.dim(1);
  for (auto r : rows) {
    if (r >= p) fail(op, "row " + std::to_string(r) + " out of range for " + shape_str(a.shape()));
  }
  Tensor<T> out({rows.size(), q});
  auto x = a.data();
  auto y = out.data();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    std::copy_n(x.data() + rows[i] * q, q, y.data() + i * q);
  }
  if (a.requires_grad()) {
    graph.record(op, {a}, out, [a, out, rows, q]() mutable {
      auto gy = out.grad();
      auto ga = a.ensure_grad();
      for (std::size_t i = 0; i < rows.size(); ++i) {
        const T* src = gy.data() + i * q;
        T* dst = ga.data() + rows[i] * q;
        for (std::size_t j = 0; j < q; ++j) dst[j] += src[j];
      }
    });
  }
  return out;
}

// --- feature statistics ----------------------------------------------------------------------------

template <typename T>
Tensor<T> center_columns(Graph<T>& graph, const Tensor<T>& a) {
  constexpr const char* op = "center_columns";
  require_rank(a, 2, op, "input");
  const std::size_t p = a.dim(0), q = a.dim(1);
  if (p == 0) fail(op, "needs at least one row");
  std::vector<double> mean(q, 0.0);
  auto x = a.data();
  for (std::size_t i = 0; i < p; ++i) {
    for (std::size_t j = 0; j < q; ++j) mean[j] += x[i * q + j];
  }
  for (auto& m : mean) m /= static_cast<double>(p);
  Tensor<T> out({p, q});
  auto y = out.data();
  for (std::size_t i = 0; i < p; ++i) {
    for (std::size_t j = 0; j < q; ++j) y[i * q + j] = x[i * q + j] - static_cast<T>(mean[j]);
  }
  if (a.requires_grad()) {
    graph.record(op, {a}, out, [a, out, p, q]() mutable {
      auto gy = out.grad();
      auto ga = a.ensure_grad();
      std::vector<double> gmean(q, 0.0);
      for (std::size_t i = 0; i < p; ++i) {
        for (std::size_t j = 0; j < q; ++j) gmean[j] += gy[i * q + j];
      }
      for (auto& m : gmean) m /= static_cast<double>(p);
      for (std::size_t i = 0; i < p; ++i) {
        for (std::size_t j = 0; j < q; ++j) {
          ga[i * q + j] += gy[i * q + j] - static_cast<T>(gmean[j]);
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> normalize_rows(Graph<T>& graph, const Tensor<T>& a, T eps) {
  constexpr const char* op = "normalize_rows";
  require_rank(a, 2, op, "input");
  const std::size_t p = a.dim(0), q = a.dim(1);
  auto norms = std::make_shared<std::vector<T>>(p);
  Tensor<T> out({p, q});
  auto x = a.data();
  auto y = out.data();
  for (std::size_t i = 0; i < p; ++i) {
    double s = 0;
    for (std::size_t j = 0; j < q; ++j) s += static_cast<double>(x[i * q + j]) * x[i * q + j];
    T n = static_cast<T>(std::sqrt(s));
    (*norms)[i] = n;
    T d = std::max(n, eps);
    for (std::size_t j = 0; j < q; ++j) y[i * q + j] = x[i * q + j] / d;
  }
  check_finite(out, op);
  if (a.requires_grad()) {
    graph.record(op, {a}, out, [a, out, norms, p, q, eps]() mutable {
      auto gy = out.grad();
      auto ga = a.ensure_grad();
      auto y = out.data();
      for (std::size_t i = 0; i < p; ++i) {
        T n = (*norms)[i];
        if (n > eps) {
          T dot = 0;
          for (std::size_t j = 0; j < q; ++j) dot += y[i * q + j] * gy[i * q + j];
          for (std::size_t j = 0; j < q; ++j) {
            ga[i * q + j] += (gy[i * q + j] - y[i * q + j] * dot) / n;
          }
        } else {
          for (std::size_t j = 0; j < q; ++j) ga[i * q + j] += gy[i * q + j] / eps;
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> contrastive_nll(Graph<T>& graph, const Tensor<T>& q, const Tensor<T>& k, T scale) {
  constexpr const char* op = "contrastive_nll";
  require_rank(q, 2, op, "query");
  require_rank(k, 2, op, "keys");
  require_same_shape(q, k, op);
  if (!(scale > T(0))) fail(op, "scale must be positive");
  const std::size_t p = q.dim(0), c = q.dim(1);
  static constexpr std::size_t kBlock = 128;
  const T inv = T(1) / scale;
  auto lse = std::make_shared<std::vector<T>>(p);
  std::vector<T> s(std::min(kBlock, p) * p);
  double total = 0;
  for (std::size_t r0 = 0; r0 < p; r0 += kBlock) {
    std::size_t b = std::min(kBlock, p - r0);
    gemm<T>(false, true, b, p, c, inv, q.data().data() + r0 * c, c, k.data().data(), c, T(0),
            s.data(), p);
    for (std::size_t i = 0; i < b; ++i) {
      const T* row = s.data() + i * p;
      T mx = *std::max_element(row, row + p);
      double acc = 0;
      for (std::size_t j = 0; j < p; ++j) acc += std::exp(static_cast<double>(row[j] - mx));
      T l = mx + static_cast<T>(std::log(acc));
      (*lse)[r0 + i] = l;
      total += static_cast<double>(l) - static_cast<double>(row[r0 + i]);
    }
  }
  Tensor<T> out = Tensor<T>::scalar(static_cast<T>(total));
  check_finite(out, op);
  if (Graph<T>::any_requires_grad({&q, &k})) {
    graph.record(op, {q, k}, out, [q, k, out, lse, p, c, inv]() mutable {
      const T g = out.grad()[0];
      std::vector<T> s(std::min(kBlock, p) * p);
      T* gq = q.requires_grad() ? q.ensure_grad().data() : nullptr;
      T* gk = k.requires_grad() ? k.ensure_grad().data() : nullptr;
      for (std::size_t r0 = 0; r0 < p; r0 += kBlock) {
        std::size_t b = std::min(kBlock, p - r0);
        const T* qb = q.data().data() + r0 * c;
        gemm<T>(false, true, b, p, c, inv, qb, c, k.data().data(), c, T(0), s.data(), p);
        for (std::size_t i = 0; i < b; ++i) {
          T* row = s.data() + i * p;
          T l = (*lse)[r0 + i];
          for (std::size_t j = 0; j < p; ++j) row[j] = std::exp(row[j] - l);
          row[r0 + i] -= T(1);
        }
        if (gq != nullptr) {
          gemm<T>(false, false, b, c, p, g * inv, s.data(), p, k.data().data(), c, T(1),
                  gq + r0 * c, c);
        }
        if (gk != nullptr) {
          gemm<T>(true, false, p, c, b, g * inv, s.data(), p, qb, c, T(1), gk, c);
        }
      }
    });
  }
  return out;
}

#define DTP_INSTANTIATE_OPS(T)                                                              \
  template Tensor<T> conv2d(Graph<T>&, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, \
                            std::size_t, std::size_t);                                      \
  template Tensor<T> maxpool2d_2x2(Graph<T>&, const Tensor<T>&);                           \
  template Tensor<T> relu(Graph<T>&, const Tensor<T>&);                                    \
  template Tensor<T> gather_rows(Graph<T>&, const Tensor<T>&, const std::vector<std::size_t>&);                                    \
  template Tensor<T> resize_bilinear(Graph<T>&, const Tensor<T>&, std::size_t, std::size_t); \
  template Tensor<T> upsample_bilinear_2x(Graph<T>&, const Tensor<T>&);                    \
  template Tensor<T> matmul(Graph<T>&, const Tensor<T>&, const Tensor<T>&);                \
  template Tensor<T> transpose(Graph<T>&, const Tensor<T>&);                               \
  template Tensor<T> softmax_rows(Graph<T>&, const Tensor<T>&, T);                         \
  template Tensor<T> reduce(Graph<T>&, const Tensor<T>&, ReduceKind, std::vector<std::size_t>); \
  template Tensor<T> add(Graph<T>&, const Tensor<T>&, const Tensor<T>&);                   \
  template Tensor<T> sub(Graph<T>&, const Tensor<T>&, const Tensor<T>&);                   \
  template Tensor<T> mul(Graph<T>&, const Tensor<T>&, const Tensor<T>&);                   \
  template Tensor<T> scale(Graph<T>&, const Tensor<T>&, T);                                \
  template Tensor<T> axpby(Graph<T>&, T, const Tensor<T>&, T, const Tensor<T>&);           \
  template Tensor<T> clamp(Graph<T>&, const Tensor<T>&, T, T);                             \
  template Tensor<T> channel_affine(Graph<T>&, const Tensor<T>&, const std::vector<T>&,    \
                                    const std::vector<T>&);                                \
  template Tensor<T> reshape(Graph<T>&, const Tensor<T>&, Shape);                          \
  template Tensor<T> flatten_positions(Graph<T>&, const Tensor<T>&);                       \
  template Tensor<T> unflatten_positions(Graph<T>&, const Tensor<T>&, std::size_t,         \
                                         std::size_t);                                     \
  template Tensor<T> extract_patches(Graph<T>&, const Tensor<T>&, std::size_t);            \
  template Tensor<T> center_columns(Graph<T>&, const Tensor<T>&);                          \
  template Tensor<T> normalize_rows(Graph<T>&, const Tensor<T>&, T);                       \
  template Tensor<T> contrastive_nll(Graph<T>&, const Tensor<T>&, const Tensor<T>&, T);

DTP_INSTANTIATE_OPS(float)
DTP_INSTANTIATE_OPS(double)

#undef DTP_INSTANTIATE_OPS

}  // namespace dtp
