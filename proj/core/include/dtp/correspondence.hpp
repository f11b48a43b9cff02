#pragma once

#include <cstddef>
#include <iosfwd>

#include "dtp/graph.hpp"
#include "dtp/tensor.hpp"

namespace dtp {

/// A C x H x W feature map viewed as an (H*W) x C matrix, u = h * W + w.
template <typename T>
struct FlatFeature {
  Tensor<T> rows;
  std::size_t height = 0;
  std::size_t width = 0;

  std::size_t positions() const { return rows.dim(0); }
  std::size_t channels() const { return rows.dim(1); }
};

/// 1 x C x H x W map -> flat view.
template <typename T>
FlatFeature<T> flatten(Graph<T>& g, const Tensor<T>& map);

/// Flat view -> 1 x C x H x W map.
template <typename T>
Tensor<T> unflatten(Graph<T>& g, const FlatFeature<T>& f);

/// Subtracts the spatial mean of every channel.
template <typename T>
FlatFeature<T> centralize(Graph<T>& g, const FlatFeature<T>& f);

/// Cosine similarity of centralized content rows against centralized style rows.
template <typename T>
struct CorrelationMatrix {
  Tensor<T> m;  // HW_c x HW_s
  T tau;
  std::size_t content_h = 0;
  std::size_t content_w = 0;
};

/// Norm floor in the cosine denominator; defines constant features as 0.
inline constexpr double kCosineEps = 1e-8;

template <typename T>
CorrelationMatrix<T> correlation(Graph<T>& g, const FlatFeature<T>& fc,
                                 const FlatFeature<T>& fs, T tau);

/// Row-stochastic weights softmax(M(u, .) / tau), shared by both warps.
template <typename T>
Tensor<T> warp_weights(Graph<T>& g, const CorrelationMatrix<T>& corr);

/// r(u) = sum_v W(u, v) f_S(v).
template <typename T>
FlatFeature<T> warp_feature(Graph<T>& g, const CorrelationMatrix<T>& corr,
                            const FlatFeature<T>& fs);
template <typename T>
FlatFeature<T> apply_warp(Graph<T>& g, const Tensor<T>& weights, const FlatFeature<T>& fs,
                          std::size_t content_h, std::size_t content_w);

/// Warps style pixels (1 x 3 x h x w, h * w == HW_s) onto the content grid.
template <typename T>
Tensor<T> warp_image(Graph<T>& g, const CorrelationMatrix<T>& corr,
                     const Tensor<T>& style_lowres);
template <typename T>
Tensor<T> apply_warp_image(Graph<T>& g, const Tensor<T>& weights, const Tensor<T>& style_lowres,
                           std::size_t content_h, std::size_t content_w);

template <typename T>
struct CycleReconstruction {
  FlatFeature<T> r_c;  // content rows sent to style grid and back
  FlatFeature<T> r_s;  // style rows sent to content grid and back
};

/// Forward-then-backward warp composition. The forward weights softmax over
/// style positions (rows of M); the backward weights softmax over content
/// positions (columns of M).
template <typename T>
CycleReconstruction<T> cycle_reconstruct(Graph<T>& g, const CorrelationMatrix<T>& corr,
                                         const FlatFeature<T>& fs, const FlatFeature<T>& fc);

/// Debug dump of the hard matches, one "u,argmax_v,similarity" row per
/// content position (first index wins ties).
template <typename T>
void write_matches_csv(const CorrelationMatrix<T>& corr, std::ostream& out);

}  // namespace dtp
