#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "pstyle/tensor.hpp"

namespace pstyle {

template <typename T>
struct NamedTensor {
  std::string name;
  Tensor<T> tensor;
};

/// Named parameter tensors in registration order. Whether a tensor is
/// trainable is its requires_grad flag; groups are name prefixes such as
/// "backbone." or "discriminator.".
template <typename T>
class ParamStore {
 public:
  Tensor<T>& add(const std::string& name, Tensor<T> value);
  Tensor<T>& add_normal(const std::string& name, Shape shape, double stddev, std::mt19937_64& rng);
  Tensor<T>& add_constant(const std::string& name, Shape shape, T value);

  bool contains(std::string_view name) const;
  const Tensor<T>& get(std::string_view name) const;
  Tensor<T>& get(std::string_view name);

  const std::vector<NamedTensor<T>>& entries() const { return entries_; }
  std::vector<NamedTensor<T>> group(std::string_view prefix) const;

  void set_trainable(std::string_view prefix, bool trainable);
  void zero_grad();

  std::size_t count(std::string_view prefix = "") const;
  std::size_t trainable_count() const;

  /// Deep copy, optionally converting the element type.
  template <typename U>
  ParamStore<U> cast() const {
    ParamStore<U> out;
    for (const auto& e : entries_) {
      std::vector<U> values(e.tensor.data().begin(), e.tensor.data().end());
      out.add(e.name, Tensor<U>(e.tensor.shape(), std::move(values), e.tensor.requires_grad()));
    }
    return out;
  }

  /// Copies values (not gradients or flags) from a store with the same names.
  void assign_from(const ParamStore<T>& other, std::string_view prefix = "");

 private:
  std::vector<NamedTensor<T>> entries_;
  std::map<std::string, std::size_t, std::less<>> index_;
};

/// Bitwise copy of every tensor under `prefix`, for freeze checks.
template <typename T>
std::vector<std::vector<T>> snapshot(const ParamStore<T>& store, std::string_view prefix = "");
template <typename T>
bool bitwise_equal(const std::vector<std::vector<T>>& a, const std::vector<std::vector<T>>& b);

}  // namespace pstyle
