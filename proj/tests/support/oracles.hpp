#pragma once

// Independent reference implementations. Plain loops in double precision,
// written from the definitions without reusing any engine kernel.

#include <cstddef>
#include <vector>

#include "dtp/image.hpp"
#include "dtp/tensor.hpp"

namespace dtp::testing {

/// Deterministic uniform tensor in [lo, hi).
template <typename T>
Tensor<T> random_tensor(const Shape& shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0);

/// Six nested loops over N, Cout, y, x, Cin, ky/kx.
std::vector<double> conv2d_direct(const Tensor<double>& x, const Tensor<double>& w,
                                  const Tensor<double>& b, std::size_t stride, std::size_t pad);

/// C x H x W feature maps (batch 1) as position-major rows.
std::vector<std::vector<double>> positions_of(const Tensor<double>& map);

/// Cosine between centralized content and style rows; the hard match is the
/// first style position with the maximum; returns the gathered style rows.
std::vector<std::vector<double>> hard_warp(const Tensor<double>& fc_map,
                                           const Tensor<double>& fs_map);

/// Sum over layers of squared distance to the cosine-nearest style patch.
double style_loss_oracle(const std::vector<Tensor<double>>& out_maps,
                         const std::vector<Tensor<double>>& style_maps, std::size_t k);

/// -sum_u log(s(c_u, o_u) / sum_v s(c_u, o_v)) with s = exp(cos / tau).
double content_loss_oracle(const std::vector<Tensor<double>>& content_maps,
                           const std::vector<Tensor<double>>& out_maps, double tau);

/// Elementwise sum of squares.
double cycle_loss_oracle(const Tensor<double>& fc, const Tensor<double>& fs,
                         const Tensor<double>& rc, const Tensor<double>& rs);

/// Slides the full 11 x 11 Gaussian window over every valid position.
double ssim_oracle(const Image& a, const Image& b);

}  // namespace dtp::testing
