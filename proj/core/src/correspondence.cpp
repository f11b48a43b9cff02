#include "dtp/correspondence.hpp"

#include <iomanip>
#include <ostream>

#include "dtp/ops.hpp"

namespace dtp {

template <typename T>
FlatFeature<T> flatten(Graph<T>& g, const Tensor<T>& map) {
  if (map.rank() != 4 || map.dim(0) != 1) {
    throw ContractError("flatten: expected 1xCxHxW, got " + shape_str(map.shape()));
  }
  return {flatten_positions(g, map), map.dim(2), map.dim(3)};
}

template <typename T>
Tensor<T> unflatten(Graph<T>& g, const FlatFeature<T>& f) {
  return unflatten_positions(g, f.rows, f.height, f.width);
}

template <typename T>
FlatFeature<T> centralize(Graph<T>& g, const FlatFeature<T>& f) {
  return {center_columns(g, f.rows), f.height, f.width};
}

template <typename T>
CorrelationMatrix<T> correlation(Graph<T>& g, const FlatFeature<T>& fc,
                                 const FlatFeature<T>& fs, T tau) {
  if (fc.channels() != fs.channels()) {
    throw ContractError("correlation: channel mismatch " + std::to_string(fc.channels()) +
                        " vs " + std::to_string(fs.channels()));
  }
  if (!(tau > T(0))) throw ContractError("correlation: tau must be positive");
  const T eps = static_cast<T>(kCosineEps);
  auto c = normalize_rows(g, center_columns(g, fc.rows), eps);
  auto s = normalize_rows(g, center_columns(g, fs.rows), eps);
  return {matmul(g, c, transpose(g, s)), tau, fc.height, fc.width};
}

template <typename T>
Tensor<T> warp_weights(Graph<T>& g, const CorrelationMatrix<T>& corr) {
  return softmax_rows(g, corr.m, corr.tau);
}

template <typename T>
FlatFeature<T> apply_warp(Graph<T>& g, const Tensor<T>& weights, const FlatFeature<T>& fs,
                          std::size_t content_h, std::size_t content_w) {
  if (weights.rank() != 2 || weights.dim(1) != fs.positions()) {
    throw ContractError("warp: weights " + shape_str(weights.shape()) + " do not match " +
                        std::to_string(fs.positions()) + " style positions");
  }
  if (weights.dim(0) != content_h * content_w) {
    throw ContractError("warp: weights rows do not match the content grid");
  }
  return {matmul(g, weights, fs.rows), content_h, content_w};
}

template <typename T>
FlatFeature<T> warp_feature(Graph<T>& g, const CorrelationMatrix<T>& corr,
                            const FlatFeature<T>& fs) {
  return apply_warp(g, warp_weights(g, corr), fs, corr.content_h, corr.content_w);
}

template <typename T>
Tensor<T> apply_warp_image(Graph<T>& g, const Tensor<T>& weights, const Tensor<T>& style_lowres,
                           std::size_t content_h, std::size_t content_w) {
  if (style_lowres.rank() != 4 || style_lowres.dim(0) != 1) {
    throw ContractError("warp_image: expected 1xCxhxw style image, got " +
                        shape_str(style_lowres.shape()));
  }
  auto flat = flatten(g, style_lowres);
  return unflatten(g, apply_warp(g, weights, flat, content_h, content_w));
}

template <typename T>
Tensor<T> warp_image(Graph<T>& g, const CorrelationMatrix<T>& corr,
                     const Tensor<T>& style_lowres) {
  return apply_warp_image(g, warp_weights(g, corr), style_lowres, corr.content_h,
                          corr.content_w);
}

template <typename T>
CycleReconstruction<T> cycle_reconstruct(Graph<T>& g, const CorrelationMatrix<T>& corr,
                                         const FlatFeature<T>& fs, const FlatFeature<T>& fc) {
  const std::size_t hwc = corr.m.dim(0), hws = corr.m.dim(1);
  if (fc.positions() != hwc || fs.positions() != hws || fc.channels() != fs.channels()) {
    throw ContractError("cycle_reconstruct: M " + shape_str(corr.m.shape()) +
                        " inconsistent with features " + shape_str(fc.rows.shape()) + " / " +
                        shape_str(fs.rows.shape()));
  }
  auto to_content = softmax_rows(g, corr.m, corr.tau);             // HWc x HWs
  auto to_style = softmax_rows(g, transpose(g, corr.m), corr.tau);  // HWs x HWc
  auto s_on_c = matmul(g, to_content, fs.rows);
  auto c_on_s = matmul(g, to_style, fc.rows);
  return {{matmul(g, to_content, c_on_s), fc.height, fc.width},
          {matmul(g, to_style, s_on_c), fs.height, fs.width}};
}

template <typename T>
void write_matches_csv(const CorrelationMatrix<T>& corr, std::ostream& out) {
  const std::size_t p = corr.m.dim(0), q = corr.m.dim(1);
  auto m = corr.m.data();
  out << "u,argmax_v,similarity\n";
  out << std::setprecision(9);
  for (std::size_t u = 0; u < p; ++u) {
    std::size_t best = 0;
    for (std::size_t v = 1; v < q; ++v) {
      if (m[u * q + v] > m[u * q + best]) best = v;
    }
    out << u << ',' << best << ',' << m[u * q + best] << '\n';
  }
}

#define DTP_INSTANTIATE(T)                                                                    \
  template FlatFeature<T> flatten(Graph<T>&, const Tensor<T>&);                               \
  template Tensor<T> unflatten(Graph<T>&, const FlatFeature<T>&);                             \
  template FlatFeature<T> centralize(Graph<T>&, const FlatFeature<T>&);                       \
  template CorrelationMatrix<T> correlation(Graph<T>&, const FlatFeature<T>&,                 \
                                            const FlatFeature<T>&, T);                        \
  template Tensor<T> warp_weights(Graph<T>&, const CorrelationMatrix<T>&);                    \
  template FlatFeature<T> warp_feature(Graph<T>&, const CorrelationMatrix<T>&,                \
                                       const FlatFeature<T>&);                                \
  template FlatFeature<T> apply_warp(Graph<T>&, const Tensor<T>&, const FlatFeature<T>&,      \
                                     std::size_t, std::size_t);                               \
  template Tensor<T> warp_image(Graph<T>&, const CorrelationMatrix<T>&, const Tensor<T>&);    \
  template Tensor<T> apply_warp_image(Graph<T>&, const Tensor<T>&, const Tensor<T>&,          \
                                      std::size_t, std::size_t);                              \
  template CycleReconstruction<T> cycle_reconstruct(Graph<T>&, const CorrelationMatrix<T>&,   \
                                                    const FlatFeature<T>&,                    \
                                                    const FlatFeature<T>&);                   \
  template void write_matches_csv(const CorrelationMatrix<T>&, std::ostream&);

DTP_INSTANTIATE(float)
DTP_INSTANTIATE(double)

#undef DTP_INSTANTIATE

}  // namespace dtp
