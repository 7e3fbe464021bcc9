#include "pstyle/params.hpp"

#include <cstring>
#include <stdexcept>

namespace pstyle {

template <typename T>
Tensor<T>& ParamStore<T>::add(const std::string& name, Tensor<T> value) {
  if (index_.count(name)) throw std::invalid_argument("duplicate parameter " + name);
  index_.emplace(name, entries_.size());
  entries_.push_back({name, std::move(value)});
  return entries_.back().tensor;
}

template <typename T>
Tensor<T>& ParamStore<T>::add_normal(const std::string& name, Shape shape, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  std::vector<T> values(shape_numel(shape));
  for (auto& v : values) v = static_cast<T>(dist(rng));
  return add(name, Tensor<T>(std::move(shape), std::move(values), true));
}

template <typename T>
Tensor<T>& ParamStore<T>::add_constant(const std::string& name, Shape shape, T value) {
  return add(name, Tensor<T>::full(std::move(shape), value, true));
}

template <typename T>
bool ParamStore<T>::contains(std::string_view name) const {
  return index_.find(name) != index_.end();
}

template <typename T>
const Tensor<T>& ParamStore<T>::get(std::string_view name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("unknown parameter " + std::string(name));
  return entries_[it->second].tensor;
}

template <typename T>
Tensor<T>& ParamStore<T>::get(std::string_view name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("unknown parameter " + std::string(name));
  return entries_[it->second].tensor;
}

template <typename T>
std::vector<NamedTensor<T>> ParamStore<T>::group(std::string_view prefix) const {
  std::vector<NamedTensor<T>> out;
  for (const auto& e : entries_) {
    if (e.name.starts_with(prefix)) out.push_back(e);
  }
  return out;
}

template <typename T>
void ParamStore<T>::set_trainable(std::string_view prefix, bool trainable) {
  for (auto& e : entries_) {
    if (e.name.starts_with(prefix)) {
      e.tensor.set_requires_grad(trainable);
      if (!trainable) e.tensor.zero_grad();
    }
  }
}

template <typename T>
void ParamStore<T>::zero_grad() {
  for (auto& e : entries_) e.tensor.zero_grad();
}

template <typename T>
std::size_t ParamStore<T>::count(std::string_view prefix) const {
  std::size_t n = 0;
  for (const auto& e : entries_) {
    if (e.name.starts_with(prefix)) n += e.tensor.numel();
  }
  return n;
}

template <typename T>
std::size_t ParamStore<T>::trainable_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) {
    if (e.tensor.requires_grad()) n += e.tensor.numel();
  }
  return n;
}

template <typename T>
void ParamStore<T>::assign_from(const ParamStore<T>& other, std::string_view prefix) {
  for (auto& e : entries_) {
    if (!e.name.starts_with(prefix)) continue;
    const auto& src = other.get(e.name);
    if (src.shape() != e.tensor.shape()) throw ShapeError("assign " + e.name, e.tensor.shape(), src.shape());
    std::copy(src.data().begin(), src.data().end(), e.tensor.data_mut().begin());
  }
}

template <typename T>
std::vector<std::vector<T>> snapshot(const ParamStore<T>& store, std::string_view prefix) {
  std::vector<std::vector<T>> out;
  for (const auto& e : store.entries()) {
    if (e.name.starts_with(prefix)) out.emplace_back(e.tensor.data().begin(), e.tensor.data().end());
  }
  return out;
}

template <typename T>
bool bitwise_equal(const std::vector<std::vector<T>>& a, const std::vector<std::vector<T>>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].size() != b[i].size()) return false;
    if (!a[i].empty() && std::memcmp(a[i].data(), b[i].data(), a[i].size() * sizeof(T)) != 0) return false;
  }
  return true;
}

template class ParamStore<float>;
template class ParamStore<double>;
template std::vector<std::vector<float>> snapshot(const ParamStore<float>&, std::string_view);
template std::vector<std::vector<double>> snapshot(const ParamStore<double>&, std::string_view);
template bool bitwise_equal(const std::vector<std::vector<float>>&, const std::vector<std::vector<float>>&);
template bool bitwise_equal(const std::vector<std::vector<double>>&, const std::vector<std::vector<double>>&);

}  // namespace pstyle
