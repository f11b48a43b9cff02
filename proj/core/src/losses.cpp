#include "dtp/losses.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "dtp/correspondence.hpp"
#include "dtp/detail/kernels.hpp"
#include "dtp/nn.hpp"
#include "dtp/ops.hpp"

namespace dtp {

namespace {

template <typename T>
const Tensor<T>& tap(const TapMap<T>& taps, const std::string& name, const char* which) {
  auto it = taps.find(name);
  if (it == taps.end()) {
    throw ContractError(std::string(which) + " taps are missing \"" + name + "\"");
  }
  return it->second;
}

void check_tap_name(const std::string& name) {
  const auto& names = encoder_tap_names();
  if (std::find(names.begin(), names.end(), name) == names.end()) {
    throw ContractError("unknown encoder tap \"" + name + "\"");
  }
}

template <typename T>
std::vector<T> unit_rows(const Tensor<T>& a) {
  const std::size_t p = a.dim(0), q = a.dim(1);
  std::vector<T> out(a.data().begin(), a.data().end());
  for (std::size_t i = 0; i < p; ++i) {
    double s = 0;
    for (std::size_t j = 0; j < q; ++j) s += static_cast<double>(out[i * q + j]) * out[i * q + j];
    T d = static_cast<T>(std::max(std::sqrt(s), 1e-8));
    for (std::size_t j = 0; j < q; ++j) out[i * q + j] /= d;
  }
  return out;
}

}  // namespace

void LossWeights::validate() const {
  if (!(lambda_c >= 0.0 && lambda_c <= 1.0)) {
    throw ContractError("lambda_c must lie in [0, 1], got " + std::to_string(lambda_c));
  }
  if (!(lambda_cyc >= 0.0)) throw ContractError("lambda_cyc must be non-negative");
  if (!(tau > 0.0)) throw ContractError("tau must be positive");
}

void LayerSet::validate() const {
  for (const auto& n : content_layers) check_tap_name(n);
  for (const auto& n : style_layers) check_tap_name(n);
  if (patch_size == 0 || patch_size % 2 == 0) {
    throw ContractError("patch_size must be odd and >= 1, got " + std::to_string(patch_size));
  }
}

double similarity_s(std::span<const double> f, std::span<const double> g, double tau) {
  if (f.size() != g.size()) throw ContractError("similarity_s: length mismatch");
  double dot = 0, nf = 0, ng = 0;
  for (std::size_t i = 0; i < f.size(); ++i) {
    dot += f[i] * g[i];
    nf += f[i] * f[i];
    ng += g[i] * g[i];
  }
  double cos = dot / (std::max(std::sqrt(nf), kCosineEps) * std::max(std::sqrt(ng), kCosineEps));
  return std::exp(cos / tau);
}

template <typename T>
Tensor<T> content_loss(Graph<T>& g, const TapMap<T>& content, const TapMap<T>& output,
                       const LayerSet& layers, T tau) {
  Tensor<T> total;
  const T eps = static_cast<T>(kCosineEps);
  for (const auto& name : layers.content_layers) {
    const auto& fc = tap(content, name, "content");
    const auto& fo = tap(output, name, "output");
    if (fc.shape() != fo.shape()) {
      throw ContractError("content_loss: " + name + " shapes differ " + shape_str(fc.shape()) +
                          " vs " + shape_str(fo.shape()));
    }
    auto q = normalize_rows(g, flatten_positions(g, fc), eps);
    auto k = normalize_rows(g, flatten_positions(g, fo), eps);
    auto l = contrastive_nll(g, q, k, tau);
    total = total.defined() ? add(g, total, l) : l;
  }
  return total.defined() ? total : Tensor<T>::scalar(T(0));
}

template <typename T>
std::vector<std::size_t> nearest_rows_cosine(const Tensor<T>& queries, const Tensor<T>& keys) {
  if (queries.rank() != 2 || keys.rank() != 2 || queries.dim(1) != keys.dim(1)) {
    throw ContractError("nearest_rows_cosine: incompatible " + shape_str(queries.shape()) +
                        " / " + shape_str(keys.shape()));
  }
  const std::size_t nq = queries.dim(0), nk = keys.dim(0), d = queries.dim(1);
  auto qn = unit_rows(queries);
  auto kn = unit_rows(keys);
  std::vector<std::size_t> best(nq, 0);
  constexpr std::size_t kBlock = 128;
  detail::parallel_for(nq, kBlock, [&](std::size_t r0, std::size_t r1) {
    std::vector<T> sim((r1 - r0) * nk);
    detail::gemm<T>(false, true, r1 - r0, nk, d, T(1), qn.data() + r0 * d, d, kn.data(), d, T(0),
                    sim.data(), nk);
    for (std::size_t i = r0; i < r1; ++i) {
      const T* row = sim.data() + (i - r0) * nk;
      best[i] = static_cast<std::size_t>(std::max_element(row, row + nk) - row);
    }
  });
  return best;
}

template <typename T>
Tensor<T> style_loss(Graph<T>& g, const TapMap<T>& output, const TapMap<T>& style,
                     const LayerSet& layers) {
  Tensor<T> total;
  for (const auto& name : layers.style_layers) {
    const auto& fo = tap(output, name, "output");
    const auto& fs = tap(style, name, "style");
    if (fo.rank() != 4 || fs.rank() != 4 || fo.dim(1) != fs.dim(1)) {
      throw ContractError("style_loss: " + name + " channel mismatch " + shape_str(fo.shape()) +
                          " vs " + shape_str(fs.shape()));
    }
    auto po = extract_patches(g, fo, layers.patch_size);
    auto ps = extract_patches(g, fs, layers.patch_size);
    // only the assignment is frozen; the matched style patches still carry gradient
    auto target = gather_rows(g, ps, nearest_rows_cosine(po.detach(), ps.detach()));
    auto diff = sub(g, po, target);
    auto l = sum(g, mul(g, diff, diff));
    total = total.defined() ? add(g, total, l) : l;
  }
  return total.defined() ? total : Tensor<T>::scalar(T(0));
}

template <typename T>
Tensor<T> cycle_loss(Graph<T>& g, const Tensor<T>& fc, const Tensor<T>& fs, const Tensor<T>& r_c,
                     const Tensor<T>& r_s) {
  if (fc.shape() != r_c.shape() || fs.shape() != r_s.shape()) {
    throw ContractError("cycle_loss: shape mismatch " + shape_str(fc.shape()) + "/" +
                        shape_str(r_c.shape()) + ", " + shape_str(fs.shape()) + "/" +
                        shape_str(r_s.shape()));
  }
  auto dc = sub(g, fc, r_c);
  auto ds = sub(g, fs, r_s);
  return add(g, sum(g, mul(g, dc, dc)), sum(g, mul(g, ds, ds)));
}

template <typename T>
Tensor<T> total_loss(Graph<T>& g, const Tensor<T>& l_cont, const Tensor<T>& l_style,
                     const Tensor<T>& l_cyc, const LossWeights& w) {
  auto a = axpby(g, static_cast<T>(1.0 - w.lambda_c), l_cont, static_cast<T>(w.lambda_c), l_style);
  return axpby(g, T(1), a, static_cast<T>(w.lambda_cyc), l_cyc);
}

double total_loss_value(double l_cont, double l_style, double l_cyc, const LossWeights& w) {
  return (1.0 - w.lambda_c) * l_cont + w.lambda_c * l_style + w.lambda_cyc * l_cyc;
}

#define DTP_INSTANTIATE(T)                                                                   \
  template Tensor<T> content_loss(Graph<T>&, const TapMap<T>&, const TapMap<T>&,             \
                                  const LayerSet&, T);                                       \
  template std::vector<std::size_t> nearest_rows_cosine(const Tensor<T>&, const Tensor<T>&); \
  template Tensor<T> style_loss(Graph<T>&, const TapMap<T>&, const TapMap<T>&,               \
                                const LayerSet&);                                            \
  template Tensor<T> cycle_loss(Graph<T>&, const Tensor<T>&, const Tensor<T>&,               \
                                const Tensor<T>&, const Tensor<T>&);                         \
  template Tensor<T> total_loss(Graph<T>&, const Tensor<T>&, const Tensor<T>&,               \
                                const Tensor<T>&, const LossWeights&);

DTP_INSTANTIATE(float)
DTP_INSTANTIATE(double)

#undef DTP_INSTANTIATE

}  // namespace dtp
