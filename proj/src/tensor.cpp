#include "pstyle/tensor.hpp"

#include <sstream>

namespace pstyle {

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ')';
  return os.str();
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (int d : shape) {
    if (d < 0) throw ShapeError("negative extent in shape " + shape_str(shape));
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

ShapeError::ShapeError(std::string_view op, const Shape& a, const Shape& b)
    : std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b)) {}

namespace {
template <typename T>
Graph<T>*& active_graph() {
  thread_local Graph<T>* g = nullptr;
  return g;
}
}  // namespace

template <typename T>
Graph<T>* Graph<T>::active() {
  return active_graph<T>();
}

template <typename T>
void Graph<T>::backward(const Tensor<T>& loss) {
  if (loss.numel() != 1) {
    throw ShapeError("backward: loss must be a scalar, got shape " + shape_str(loss.shape()));
  }
  if (!loss.requires_grad()) return;
  // Intermediate gradients are per-pass; parameters keep accumulating.
  for (auto& r : records_) r.output.zero_grad();
  Tensor<T> seed = loss;
  seed.grad_mut()[0] += T(1);
  for (auto it = records_.rbegin(); it != records_.rend(); ++it) {
    if (!it->output.has_grad()) continue;
    it->backward();
  }
}

template <typename T>
GraphScope<T>::GraphScope(Graph<T>& g) : previous_(active_graph<T>()) {
  active_graph<T>() = &g;
}

template <typename T>
GraphScope<T>::~GraphScope() {
  active_graph<T>() = previous_;
}

template <typename T>
NoGradScope<T>::NoGradScope() : previous_(active_graph<T>()) {
  active_graph<T>() = nullptr;
}

template <typename T>
NoGradScope<T>::~NoGradScope() {
  active_graph<T>() = previous_;
}

template class Graph<float>;
template class Graph<double>;
template class GraphScope<float>;
template class GraphScope<double>;
template class NoGradScope<float>;
template class NoGradScope<double>;

}  // namespace pstyle
