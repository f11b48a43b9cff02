#include "dtp/graph.hpp"

namespace dtp {

template <typename T>
bool Graph<T>::any_requires_grad(std::initializer_list<const Tensor<T>*> parents) {
  for (const auto* p : parents) {
    if (p != nullptr && p->defined() && p->requires_grad()) return true;
  }
  return false;
}

template <typename T>
void Graph<T>::record(std::string_view op, std::vector<Tensor<T>> parents,
                      Tensor<T>& output, BackwardFn backward) {
  output.set_requires_grad(true);
  nodes_.push_back(Node{op, std::move(parents), output, std::move(backward)});
}

template <typename T>
void Graph<T>::backward(const Tensor<T>& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ContractError("backward() needs a scalar loss, got shape " +
                        (loss.defined() ? shape_str(loss.shape()) : std::string("<undefined>")));
  }
  // Intermediate gradients belong to this pass only.
  for (auto& node : nodes_) node.output.clear_grad();
  Tensor<T> seed = loss;
  if (!seed.requires_grad()) return;
  seed.ensure_grad()[0] += T(1);
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    if (!it->output.has_grad()) continue;
    it->backward();
  }
}

template class Graph<float>;
template class Graph<double>;

}  // namespace dtp
