#pragma once

#include <cstdint>
#include <memory>
#include <random>
#include <span>
#include <vector>

#include "pstyle/backbone.hpp"
#include "pstyle/config.hpp"
#include "pstyle/discriminator.hpp"
#include "pstyle/params.hpp"
#include "pstyle/prefix.hpp"

namespace pstyle {

inline constexpr const char* kBackboneNs = "backbone.";
inline constexpr const char* kGeneratorNs = "generator.";
inline constexpr const char* kGeneratorBackboneNs = "generator.backbone.";
inline constexpr const char* kDiscriminatorNs = "discriminator.";

/// The frozen backbone, the generator's prefix networks and the
/// discriminator, all bound to one parameter store. Under full fine-tuning
/// the generator runs on its own copy of the backbone ("generator.backbone.")
/// while the discriminator keeps the frozen original.
template <typename T>
class StyleModel {
 public:
  StyleModel(const RunConfig& config, ParamStore<T> store);
  StyleModel(const StyleModel&) = delete;
  StyleModel& operator=(const StyleModel&) = delete;

  /// Adds freshly initialised generator and discriminator parameters to a
  /// store that already holds "backbone.*".
  static void init_trainable(const RunConfig& config, ParamStore<T>& store, std::mt19937_64& rng);

  const RunConfig& config() const { return config_; }
  ParamStore<T>& store() { return store_; }
  const ParamStore<T>& store() const { return store_; }
  const Backbone<T>& frozen_backbone() const { return backbone_; }
  const Backbone<T>& generator_backbone() const { return config_.ablation.full_finetune ? gen_backbone_ : backbone_; }
  PrefixSystem<T>& prefix() { return prefix_; }
  const PrefixSystem<T>& prefix() const { return prefix_; }
  const Discriminator<T>& discriminator() const { return disc_; }

  /// Marks exactly one group trainable: "generator." or "discriminator.".
  void train_only(const std::string& group);

  /// Greedy transfer of X to `target_style`.
  std::vector<int> transfer(std::span<const int> x, int target_style) const;

 private:
  RunConfig config_;
  ParamStore<T> store_;
  Backbone<T> backbone_, gen_backbone_;
  PrefixSystem<T> prefix_;
  Discriminator<T> disc_;
};

template <typename T>
struct GeneratorLosses {
  Tensor<T> self, cycle, style;
  std::vector<int> transferred;  // argmax ids of the soft output
};

std::vector<int> reconstruction_target(std::span<const int> x, bool score_eos);

/// −log P(X | prefixes for (X, s)), teacher forced.
template <typename T>
Tensor<T> loss_self(const StyleModel<T>& m, const typename PrefixSystem<T>::Static& parts, std::span<const int> x,
                    int style, const PrefixBlock<T>* content = nullptr);

/// Differentiable soft transfer of X to `target_style`. `noise_seed` drives
/// the Gumbel perturbation when generate.gumbel_scale > 0.
template <typename T>
Generation<T> soft_transfer(const StyleModel<T>& m, const typename PrefixSystem<T>::Static& parts,
                            std::span<const int> x, int target_style, const PrefixBlock<T>* content = nullptr,
                            std::uint64_t noise_seed = 0);

/// −log P_dis(target_style | Y) with Y a soft sequence.
template <typename T>
Tensor<T> loss_style(const StyleModel<T>& m, const Tensor<T>& y_soft, int target_style,
                     const PrefixBlock<T>& dis_prefix);

/// −log P(X | prefixes for (Y, s)) with Y fed as a soft sequence.
template <typename T>
Tensor<T> loss_cycle(const StyleModel<T>& m, const typename PrefixSystem<T>::Static& parts, const Tensor<T>& y_soft,
                     std::span<const int> x, int style);

/// All three generator terms for one item, sharing the content prefix of X
/// and one soft transfer to the opposite style.
template <typename T>
GeneratorLosses<T> generator_losses(const StyleModel<T>& m, const typename PrefixSystem<T>::Static& parts,
                                    const PrefixBlock<T>& dis_prefix, std::span<const int> x, int style,
                                    std::uint64_t noise_seed = 0);

/// λ₁·self + λ₂·cycle + λ₃·style.
template <typename T>
Tensor<T> combine(const LossWeights& w, const Tensor<T>& self, const Tensor<T>& cycle, const Tensor<T>& style);

/// Mean over a batch of −log P_dis(target | X_i); `inputs` are embeddings.
template <typename T>
Tensor<T> dis_loss(const Discriminator<T>& d, std::span<const Tensor<T>> inputs, std::span<const int> targets,
                   const PrefixBlock<T>& dis_prefix);

}  // namespace pstyle
