#pragma once

#include <functional>
#include <string_view>
#include <vector>

#include "dtp/tensor.hpp"

namespace dtp {

/// Append-only tape of differentiable ops.
///
/// Nodes are recorded in execution order, so parents always precede their
/// children; backward() walks the tape in exact reverse order, which keeps
/// gradient accumulation order (and therefore bits) fixed run to run.
template <typename T>
class Graph {
 public:
  using BackwardFn = std::function<void()>;

  struct Node {
    std::string_view op;
    std::vector<Tensor<T>> parents;
    Tensor<T> output;
    BackwardFn backward;
  };

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;
  Graph(Graph&&) noexcept = default;
  Graph& operator=(Graph&&) noexcept = default;

  /// True when any parent needs a gradient, i.e. the op must be recorded.
  static bool any_requires_grad(std::initializer_list<const Tensor<T>*> parents);

  /// Records `output` as produced by `op`. Marks output as requiring grad.
  /// `backward` reads output.grad() and accumulates into parents that
  /// require grad.
  void record(std::string_view op, std::vector<Tensor<T>> parents,
              Tensor<T>& output, BackwardFn backward);

  /// Seeds d(loss)/d(loss) = 1 and propagates to every reachable leaf.
  void backward(const Tensor<T>& loss);

  std::size_t size() const noexcept { return nodes_.size(); }
  const std::vector<Node>& nodes() const noexcept { return nodes_; }
  void clear() { nodes_.clear(); }

 private:
  std::vector<Node> nodes_;
};

extern template class Graph<float>;
extern template class Graph<double>;

}  // namespace dtp
