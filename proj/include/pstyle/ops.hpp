#pragma once

#include <span>
#include <vector>

#include "pstyle/tensor.hpp"

// Differentiable primitives. Every function records an exact backward rule
// into the active Graph when at least one operand requires a gradient.
// Matrices are row-major; a 1-D tensor of length n acts as a single row.

namespace pstyle {

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);
/// a · bᵀ
template <typename T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b);

/// Elementwise. `b` may also be a single row broadcast over the rows of `a`.
template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor);

template <typename T>
Tensor<T> tanh(const Tensor<T>& a);
/// tanh approximation used by GPT-2.
template <typename T>
Tensor<T> gelu(const Tensor<T>& a);

/// Softmax along the last axis, computed with max subtraction. Entries equal
/// to -inf receive zero probability.
template <typename T>
Tensor<T> softmax(const Tensor<T>& a);
template <typename T>
Tensor<T> log_softmax(const Tensor<T>& a);

/// Attention mask for a score matrix whose columns are `prefix_len` prefix
/// keys followed by sentence keys. Query row i sits at sentence position
/// `query_offset + i` and sees every prefix key plus sentence keys <= its
/// own position; hidden entries become -inf.
template <typename T>
Tensor<T> causal_mask(const Tensor<T>& scores, int prefix_len, int query_offset);

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps = T(1e-5));

/// Row gather: out[i] = table[ids[i]].
template <typename T>
Tensor<T> embedding(const Tensor<T>& table, std::span<const int> ids);

template <typename T>
Tensor<T> concat_rows(std::span<const Tensor<T>> parts);
template <typename T>
Tensor<T> concat_cols(std::span<const Tensor<T>> parts);
template <typename T>
Tensor<T> slice_rows(const Tensor<T>& x, int start, int count);
template <typename T>
Tensor<T> slice_cols(const Tensor<T>& x, int start, int count);
template <typename T>
Tensor<T> repeat_rows(const Tensor<T>& row, int count);
template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape);

/// Mean over rows: (m, n) -> (1, n).
template <typename T>
Tensor<T> mean_rows(const Tensor<T>& x);
template <typename T>
Tensor<T> sum(const Tensor<T>& x);

/// Σ_i −log softmax(logits_i)[targets_i], a scalar.
template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const int> targets);

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
  return add(matmul(x, weight), bias);
}

template <typename T>
Tensor<T> concat_rows(const std::vector<Tensor<T>>& parts) {
  return concat_rows(std::span<const Tensor<T>>(parts));
}
template <typename T>
Tensor<T> concat_cols(const std::vector<Tensor<T>>& parts) {
  return concat_cols(std::span<const Tensor<T>>(parts));
}

/// One-hot rows at `ids` in the forward pass; the gradient passes to `probs`
/// unchanged (straight-through estimator).
template <typename T>
Tensor<T> straight_through(const Tensor<T>& probs, std::span<const int> ids);

/// Registers a user-defined primitive; `backward` runs when the output has
/// received a gradient. Returns `output` marked as requiring a gradient when
/// recorded.
template <typename T>
Tensor<T> record_custom(std::string_view name, std::vector<Tensor<T>> inputs, Tensor<T> output,
                        typename Graph<T>::BackwardFn backward);

}  // namespace pstyle
