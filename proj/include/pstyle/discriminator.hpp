#pragma once

#include <random>
#include <span>
#include <vector>

#include "pstyle/backbone.hpp"
#include "pstyle/params.hpp"
#include "pstyle/prefix.hpp"

namespace pstyle {

/// Three-way classifier over {style 0, style 1, fake} running the shared
/// backbone behind its own learned prefix. Parameters live under
/// "discriminator.".
template <typename T>
class Discriminator {
 public:
  static constexpr const char* kNamespace = "discriminator.";
  static constexpr int kFakeClass = 2;
  static constexpr int kNumClasses = 3;

  Discriminator() = default;
  Discriminator(const ModelConfig& model, const ParamStore<T>& store, const Backbone<T>* backbone);

  static void init_params(const ModelConfig& model, int num_tokens, int projection_hidden, ParamStore<T>& store,
                          std::mt19937_64& rng);

  PrefixBlock<T> prefix() const;
  /// (1, 3) class logits from the mean of the last-layer sentence states.
  Tensor<T> logits(const Tensor<T>& x_embeddings, const PrefixBlock<T>& prefix) const;
  Tensor<T> classify(const Tensor<T>& x_embeddings) const;  // (1, 3) probabilities
  Tensor<T> classify_ids(std::span<const int> ids) const;
  Tensor<T> classify_soft(const Tensor<T>& distributions) const;

  /// −log P(target | X) for one input.
  Tensor<T> nll(const Tensor<T>& x_embeddings, int target, const PrefixBlock<T>& prefix) const;
  /// −log P(style | X) renormalised over the two real classes.
  Tensor<T> style_nll(const Tensor<T>& x_embeddings, int style, const PrefixBlock<T>& prefix) const;

  int num_tokens() const { return tokens_.rows(); }
  const Backbone<T>& backbone() const { return *backbone_; }

 private:
  ModelConfig model_;
  const Backbone<T>* backbone_ = nullptr;
  Tensor<T> tokens_, head_w_, head_b_;
  ProjectionNet<T> proj_;
};

}  // namespace pstyle
