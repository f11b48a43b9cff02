#pragma once

#include <cstddef>
#include <vector>

#include "dtp/graph.hpp"
#include "dtp/tensor.hpp"

// Differentiable operations. Every op takes the graph it records into; when
// no input requires a gradient the op runs as a plain kernel and records
// nothing. Outputs are checked for non-finite values (NumericError).

namespace dtp {

enum class ReduceKind { kSum, kMean };

// --- convolutional stack -------------------------------------------------

/// Cross-correlation with zero padding plus per-channel bias.
/// input N x Cin x H x W, weight Cout x Cin x k x k, bias Cout.
template <typename T>
Tensor<T> conv2d(Graph<T>& g, const Tensor<T>& input, const Tensor<T>& weight,
                 const Tensor<T>& bias, std::size_t stride, std::size_t pad);

/// Non-overlapping 2x2 max. Ties route the gradient to the first element in
/// row-major window order.
template <typename T>
Tensor<T> maxpool2d_2x2(Graph<T>& g, const Tensor<T>& input);

template <typename T>
Tensor<T> relu(Graph<T>& g, const Tensor<T>& input);

/// Bilinear resize of the two trailing axes with half-pixel centres:
/// src = (dst + 0.5) * in / out - 0.5, clamped to the edge.
template <typename T>
Tensor<T> resize_bilinear(Graph<T>& g, const Tensor<T>& input,
                          std::size_t out_h, std::size_t out_w);

template <typename T>
Tensor<T> upsample_bilinear_2x(Graph<T>& g, const Tensor<T>& input);

// --- linear algebra ----------------------------------------------------------

template <typename T>
Tensor<T> matmul(Graph<T>& g, const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> transpose(Graph<T>& g, const Tensor<T>& a);

/// Row-wise softmax of logits / scale, max-subtracted.
template <typename T>
Tensor<T> softmax_rows(Graph<T>& g, const Tensor<T>& logits, T scale);

/// Fixed-order sum or mean over `axes`; reduced axes are dropped. An empty
/// axis list reduces everything to a rank-0 scalar.
template <typename T>
Tensor<T> reduce(Graph<T>& g, const Tensor<T>& input, ReduceKind kind,
                 std::vector<std::size_t> axes = {});

template <typename T>
Tensor<T> sum(Graph<T>& g, const Tensor<T>& input) {
  return reduce(g, input, ReduceKind::kSum);
}

// --- elementwise ---------------------------------------------------------------

template <typename T>
Tensor<T> add(Graph<T>& g, const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> sub(Graph<T>& g, const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> mul(Graph<T>& g, const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> scale(Graph<T>& g, const Tensor<T>& a, T alpha);
/// alpha * a + beta * b.
template <typename T>
Tensor<T> axpby(Graph<T>& g, T alpha, const Tensor<T>& a, T beta, const Tensor<T>& b);
/// Clamp with zero gradient outside [lo, hi].
template <typename T>
Tensor<T> clamp(Graph<T>& g, const Tensor<T>& a, T lo, T hi);
/// y[n,c,...] = x[n,c,...] * mul[c] + add[c] on an N x C x H x W tensor.
template <typename T>
Tensor<T> channel_affine(Graph<T>& g, const Tensor<T>& a,
                         const std::vector<T>& mul, const std::vector<T>& add);

// --- layout --------------------------------------------------------------------

template <typename T>
Tensor<T> reshape(Graph<T>& g, const Tensor<T>& a, Shape shape);

/// 1 x C x H x W -> (H*W) x C, position index u = h * W + w.
template <typename T>
Tensor<T> flatten_positions(Graph<T>& g, const Tensor<T>& a);

/// (H*W) x C -> 1 x C x H x W.
template <typename T>
Tensor<T> unflatten_positions(Graph<T>& g, const Tensor<T>& a, std::size_t h,
                              std::size_t w);

/// 1 x C x H x W -> P x (C*k*k) valid k x k patches, P = (H-k+1)(W-k+1),
/// row index y * (W-k+1) + x, column index c*k*k + dy*k + dx.
template <typename T>
Tensor<T> extract_patches(Graph<T>& g, const Tensor<T>& a, std::size_t k);

/// out[i] = a[rows[i]] on a P x Q tensor; gradients scatter-add back.
template <typename T>
Tensor<T> gather_rows(Graph<T>& g, const Tensor<T>& a, const std::vector<std::size_t>& rows);

// --- feature statistics ----------------------------------------------------------

/// Subtracts each column's mean over rows (P x Q).
template <typename T>
Tensor<T> center_columns(Graph<T>& g, const Tensor<T>& a);

/// Divides each row by max(||row||, eps).
template <typename T>
Tensor<T> normalize_rows(Graph<T>& g, const Tensor<T>& a, T eps);

/// Sum over rows u of  logsumexp_v(<q_u, k_v> / scale) - <q_u, k_u> / scale.
/// q and k are P x C. Evaluated in row blocks so P x P is never stored.
template <typename T>
Tensor<T> contrastive_nll(Graph<T>& g, const Tensor<T>& q, const Tensor<T>& k,
                          T scale);

}  // namespace dtp
