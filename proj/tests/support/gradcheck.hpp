#pragma once

#include <functional>
#include <string>
#include <vector>

#include "dtp/graph.hpp"
#include "dtp/tensor.hpp"

namespace dtp::testing {

using LossFn = std::function<Tensor<double>(Graph<double>&, const std::vector<Tensor<double>>&)>;

struct GradCheckResult {
  std::string name;
  double worst_rel = 0;  // max over inputs of ||analytic - numeric|| / max(norms)
  std::size_t coords = 0;
  bool ok = false;
};

/// Central differences on up to `max_coords` evenly spaced coordinates of
/// every input (all of them when the input is small enough).
GradCheckResult gradcheck(const std::string& name, std::vector<Tensor<double>> inputs,
                          const LossFn& f, std::size_t max_coords = 96, double h = 1e-5,
                          double tol = 1e-4);

/// Contracts a tensor to a scalar with fixed pseudo-random weights, so every
/// output element contributes a distinct amount to the loss.
Tensor<double> project(Graph<double>& g, const Tensor<double>& out, std::uint64_t seed = 99);

struct GradCase {
  std::string name;
  std::function<GradCheckResult()> run;
};

/// Every differentiable op, the warp and all three losses; shapes stay at or
/// below 2 x 4 x 8 x 8.
const std::vector<GradCase>& gradient_cases();

}  // namespace dtp::testing
