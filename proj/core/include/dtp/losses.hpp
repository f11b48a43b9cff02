#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "dtp/graph.hpp"
#include "dtp/tensor.hpp"

namespace dtp {

template <typename T>
using TapMap = std::map<std::string, Tensor<T>>;

struct LossWeights {
  double lambda_c = 1.0 / 5.0;  // weight of the style term; content gets 1 - lambda_c
  double lambda_cyc = 1.0;
  double tau = 0.07;

  void validate() const;
};

struct LayerSet {
  std::vector<std::string> content_layers{"relu2_2", "relu3_4", "relu4_2"};
  std::vector<std::string> style_layers{"relu2_2", "relu3_4", "relu4_2"};
  std::size_t patch_size = 3;

  void validate() const;
};

/// exp(cos(f, g) / tau), norms floored at 1e-8.
double similarity_s(std::span<const double> f, std::span<const double> g, double tau);

/// Contrastive content loss: for every layer and content position u the
/// co-located output feature is the positive, all output positions v of the
/// same layer form the denominator.
template <typename T>
Tensor<T> content_loss(Graph<T>& g, const TapMap<T>& content, const TapMap<T>& output,
                       const LayerSet& layers, T tau);

/// Index of the most cosine-similar key row for every query row (first index
/// on ties). Plain kernel, no graph.
template <typename T>
std::vector<std::size_t> nearest_rows_cosine(const Tensor<T>& queries, const Tensor<T>& keys);

/// Patch nearest-neighbour style loss. The matching is held constant; gradient
/// flows into both the output patches and the matched style patches.
template <typename T>
Tensor<T> style_loss(Graph<T>& g, const TapMap<T>& output, const TapMap<T>& style,
                     const LayerSet& layers);

/// sum ||f_c - r_c||^2 + ||f_s - r_s||^2 over positions; inputs are P x C.
template <typename T>
Tensor<T> cycle_loss(Graph<T>& g, const Tensor<T>& fc, const Tensor<T>& fs,
                     const Tensor<T>& r_c, const Tensor<T>& r_s);

/// (1 - lambda_c) * content + lambda_c * style + lambda_cyc * cycle.
template <typename T>
Tensor<T> total_loss(Graph<T>& g, const Tensor<T>& l_cont, const Tensor<T>& l_style,
                     const Tensor<T>& l_cyc, const LossWeights& w);

double total_loss_value(double l_cont, double l_style, double l_cyc, const LossWeights& w);

}  // namespace dtp
