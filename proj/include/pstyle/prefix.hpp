#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "pstyle/backbone.hpp"
#include "pstyle/params.hpp"

namespace pstyle {

struct PrefixConfig {
  int shared_len = 10;
  int style_len = 20;
  int pre_len = 20;
  int projection_hidden = 128;
  int num_styles = 2;
  /// One ProjectionNet for every path instead of {shared+style, pre, content}.
  bool tie_projections = false;

  void validate() const;
  std::string canonical() const;
  bool operator==(const PrefixConfig&) const = default;
};

struct AblationFlags {
  bool disable_shared_prefix = false;
  bool disable_style_prefix = false;
  bool use_style_embedding_instead = false;
  bool disable_content_prefix = false;
  bool full_finetune = false;

  void validate() const;
  std::string canonical() const;
  bool operator==(const AblationFlags&) const = default;
};

/// Two-layer map d -> hidden -> L*2*d applied row-wise.
template <typename T>
struct ProjectionNet {
  Tensor<T> w1, b1, w2, b2;

  static void init_params(ParamStore<T>& store, const std::string& ns, int model_dim, int hidden, int out_dim,
                          std::mt19937_64& rng);
  static ProjectionNet bind(const ParamStore<T>& store, const std::string& ns);
  Tensor<T> operator()(const Tensor<T>& x) const;
};

/// What the generator feeds the backbone: the assembled prefix and the
/// context embeddings (X, or [style pseudo-token ‖ X] in the embedding variant).
template <typename T>
struct Conditioning {
  PrefixBlock<T> prefix;
  Tensor<T> context;
};

/// Builds the generator's prefixes. Parameters live under
/// "generator.prefix."; `backbone` is the network consumed by the
/// content-extraction pass and by decoding.
template <typename T>
class PrefixSystem {
 public:
  static constexpr const char* kNamespace = "generator.prefix.";

  PrefixSystem() = default;
  PrefixSystem(const ModelConfig& model, const PrefixConfig& config, const AblationFlags& flags,
               const ParamStore<T>& store, const Backbone<T>* backbone);

  static void init_params(const ModelConfig& model, const PrefixConfig& config, ParamStore<T>& store,
                          std::mt19937_64& rng);

  PrefixBlock<T> shared() const;
  PrefixBlock<T> style(int target_style) const;
  PrefixBlock<T> pre() const;
  /// Backbone pass over (PRE_pre, X); one prefix position per sentence position.
  PrefixBlock<T> content(const Tensor<T>& x_embeddings, const PrefixBlock<T>& pre_prefix) const;
  PrefixBlock<T> content(const Tensor<T>& x_embeddings) const { return content(x_embeddings, pre()); }

  /// [shared ‖ style ‖ content]; blocks may be empty.
  static PrefixBlock<T> assemble(const PrefixBlock<T>& shared, const PrefixBlock<T>& style,
                                 const PrefixBlock<T>& content);

  /// Input-independent pieces, reusable across a batch.
  struct Static {
    PrefixBlock<T> shared;
    PrefixBlock<T> pre;
    std::vector<PrefixBlock<T>> styles;
  };
  Static build_static() const;

  /// Applies the ablation flags. `content` may be passed in when it was
  /// already computed for this X (it does not depend on the target style).
  Conditioning<T> condition(const Static& parts, const Tensor<T>& x_embeddings, int target_style,
                            const PrefixBlock<T>* content = nullptr) const;
  Conditioning<T> condition(const Tensor<T>& x_embeddings, int target_style) const {
    return condition(build_static(), x_embeddings, target_style);
  }
  /// Content prefix under the current flags (empty when disabled).
  PrefixBlock<T> content_for(const Static& parts, const Tensor<T>& x_embeddings) const;

  const Backbone<T>& backbone() const { return *backbone_; }
  const PrefixConfig& config() const { return config_; }
  const AblationFlags& flags() const { return flags_; }
  const Tensor<T>& style_embeddings() const { return style_emb_; }

  long content_passes() const { return content_passes_; }
  void reset_counters() { content_passes_ = 0; }

 private:
  ModelConfig model_;
  PrefixConfig config_;
  AblationFlags flags_;
  const Backbone<T>* backbone_ = nullptr;
  Tensor<T> shared_tokens_, style_emb_, style_offsets_, fusion_w_, fusion_b_;
  ProjectionNet<T> proj_main_, proj_pre_, proj_content_;
  mutable long content_passes_ = 0;
};

/// Closed-form parameter counts.
struct ParamTally {
  std::size_t backbone = 0;
  std::size_t generator = 0;      // prefix networks (plus a backbone copy under full fine-tuning)
  std::size_t discriminator = 0;  // PRE_dis and the class head
  std::size_t projection_net = 0;
  std::size_t projection_nets = 0;

  std::size_t trainable() const { return generator + discriminator; }
  /// Generator parameters over everything the generator runs on.
  double generator_ratio() const {
    return static_cast<double>(generator) / static_cast<double>(backbone + generator);
  }
  double trainable_ratio() const {
    return static_cast<double>(trainable()) / static_cast<double>(backbone + trainable());
  }
  std::string describe() const;
};

std::size_t backbone_param_count(const ModelConfig& model);
ParamTally tally_params(const ModelConfig& model, const PrefixConfig& prefix, int discriminator_tokens,
                        bool full_finetune = false);

}  // namespace pstyle
