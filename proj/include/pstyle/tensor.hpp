#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace pstyle {

using Shape = std::vector<int>;

std::string shape_str(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

/// Raised by any primitive whose operand shapes are incompatible.
class ShapeError : public std::invalid_argument {
 public:
  ShapeError(std::string_view op, const Shape& a, const Shape& b);
  explicit ShapeError(const std::string& what) : std::invalid_argument(what) {}
};

namespace detail {

template <typename T>
struct TensorImpl {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until the first accumulation
  bool requires_grad = false;
};

}  // namespace detail

/// Dense row-major array with shared storage. Copies are handles to the same
/// buffer; use clone() for a deep copy.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  Tensor(Shape shape, std::vector<T> values, bool requires_grad = false)
      : impl_(std::make_shared<detail::TensorImpl<T>>()) {
    if (shape_numel(shape) != values.size()) {
      throw ShapeError("tensor: shape " + shape_str(shape) + " does not hold " +
                       std::to_string(values.size()) + " values");
    }
    impl_->shape = std::move(shape);
    impl_->data = std::move(values);
    impl_->requires_grad = requires_grad;
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    const auto n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<T>(n, T(0)), requires_grad);
  }
  static Tensor full(Shape shape, T value, bool requires_grad = false) {
    const auto n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<T>(n, value), requires_grad);
  }
  static Tensor scalar(T value) { return Tensor(Shape{}, {value}); }

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::size_t numel() const { return impl_->data.size(); }
  int ndim() const { return static_cast<int>(impl_->shape.size()); }

  /// Leading extent when viewed as a matrix; 1-D and scalar tensors are one row.
  int rows() const {
    const auto& s = impl_->shape;
    return s.size() >= 2 ? static_cast<int>(numel() / static_cast<std::size_t>(s.back())) : 1;
  }
  int cols() const {
    const auto& s = impl_->shape;
    return s.empty() ? 1 : s.back();
  }

  std::span<const T> data() const { return impl_->data; }
  std::span<T> data_mut() { return impl_->data; }
  T item() const {
    if (numel() != 1) throw ShapeError("item: tensor of shape " + shape_str(shape()) + " is not a scalar");
    return impl_->data[0];
  }
  T at(int r, int c) const { return impl_->data[static_cast<std::size_t>(r) * cols() + c]; }

  bool requires_grad() const { return impl_ && impl_->requires_grad; }
  void set_requires_grad(bool v) { impl_->requires_grad = v; }

  bool has_grad() const { return !impl_->grad.empty(); }
  std::span<const T> grad() const { return impl_->grad; }
  /// Allocates a zero gradient on first use. Gradients live in the shared
  /// storage, so a const handle may still accumulate into them.
  std::span<T> grad_mut() const {
    if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), T(0));
    return impl_->grad;
  }
  void zero_grad() { impl_->grad.clear(); }

  Tensor clone() const { return Tensor(shape(), impl_->data, requires_grad()); }
  Tensor detach() const { return Tensor(shape(), impl_->data, false); }

  bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

 private:
  std::shared_ptr<detail::TensorImpl<T>> impl_;
};

/// Tape of operation records in creation order (a valid topological order).
/// Primitives record into the graph bound by the innermost GraphScope; with no
/// scope active nothing is recorded and outputs never require gradients.
template <typename T>
class Graph {
 public:
  using BackwardFn = std::function<void()>;

  struct Record {
    std::string_view op;
    std::vector<Tensor<T>> inputs;
    Tensor<T> output;
    BackwardFn backward;
  };

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  void record(std::string_view op, std::vector<Tensor<T>> inputs, Tensor<T> output, BackwardFn fn) {
    records_.push_back(Record{op, std::move(inputs), std::move(output), std::move(fn)});
  }

  /// Accumulates d(loss)/dp into p.grad for every reachable tensor with
  /// requires_grad. Forward values are never written.
  void backward(const Tensor<T>& loss);

  std::size_t size() const { return records_.size(); }
  const std::vector<Record>& records() const { return records_; }
  void clear() { records_.clear(); }

  static Graph* active();

 private:
  std::vector<Record> records_;
};

template <typename T>
class GraphScope {
 public:
  explicit GraphScope(Graph<T>& g);
  ~GraphScope();
  GraphScope(const GraphScope&) = delete;
  GraphScope& operator=(const GraphScope&) = delete;

 private:
  Graph<T>* previous_;
};

/// Temporarily suspends recording (used for detached generation).
template <typename T>
class NoGradScope {
 public:
  NoGradScope();
  ~NoGradScope();
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

 private:
  Graph<T>* previous_;
};

}  // namespace pstyle
