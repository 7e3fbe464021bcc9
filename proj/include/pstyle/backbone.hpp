#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "pstyle/params.hpp"
#include "pstyle/tensor.hpp"

namespace pstyle {

/// Reserved token ids shared by the vocabulary and the model.
namespace tokens {
inline constexpr int kPad = 0;
inline constexpr int kBos = 1;
inline constexpr int kEos = 2;
inline constexpr int kSep = 3;
inline constexpr int kUnk = 4;
inline constexpr int kNumReserved = 5;
}  // namespace tokens

struct ModelConfig {
  int num_layers = 4;
  int num_heads = 4;
  int model_dim = 128;
  int ff_dim = 512;
  int vocab_size = 0;
  int max_positions = 128;

  int head_dim() const { return model_dim / num_heads; }
  void validate() const;
  /// Stable `key = value` lines; used in checkpoint headers and hashing.
  std::string canonical() const;
  bool operator==(const ModelConfig&) const = default;
};

enum class PrefixSource { kShared, kStyle, kPre, kContent, kDiscriminator, kAssembled };
const char* to_string(PrefixSource s);

/// Per-layer key/value activations injected ahead of the sentence positions.
/// keys[l] and values[l] are (length, model_dim); heads are column blocks.
template <typename T>
struct PrefixBlock {
  PrefixSource source = PrefixSource::kAssembled;
  std::vector<Tensor<T>> keys;
  std::vector<Tensor<T>> values;

  int length() const { return keys.empty() ? 0 : keys.front().rows(); }
  int num_layers() const { return static_cast<int>(keys.size()); }
};

/// Splits a (P, L*2*d) projection output into a P-position block: columns
/// [l*2d, l*2d+d) are layer l's keys, the next d its values.
template <typename T>
PrefixBlock<T> prefix_from_projection(const Tensor<T>& projected, int num_layers, int model_dim, PrefixSource source);

/// Concatenates blocks position-wise in the given order. Empty blocks are skipped.
template <typename T>
PrefixBlock<T> concat_prefixes(std::span<const PrefixBlock<T>> blocks);

template <typename T>
struct HiddenStates {
  std::vector<Tensor<T>> layers;  // residual stream after each block, (n, d)
  std::vector<Tensor<T>> keys;    // per-layer keys of the sentence positions
  std::vector<Tensor<T>> values;
  Tensor<T> final_hidden;         // after the final layer norm
  Tensor<T> logits;               // (n, V); undefined when not requested
};

enum class DecodeMode { kGreedy, kSample, kSoft };

struct GenerateOptions {
  DecodeMode mode = DecodeMode::kGreedy;
  int max_len = 0;
  int min_len = 0;  // EOS is not chosen before this many tokens
  double temperature = 1.0;
  /// Soft mode: feed the one-hot argmax forward and pass gradients to the
  /// tempered distribution.
  bool straight_through = false;
  /// Soft mode: scale of Gumbel noise added to the logits before the argmax
  /// and the tempered softmax (0 = none).
  double gumbel_scale = 0.0;
  std::uint64_t seed = 0;
};

template <typename T>
struct Generation {
  std::vector<int> ids;  // greedy/sample output; argmax ids in soft mode
  Tensor<T> soft;        // soft mode: (len, V) distributions, differentiable
  int length() const { return static_cast<int>(ids.size()); }
};

/// Decoder-only transformer with pre-layer-norm blocks, learned sentence
/// positions, and an output head tied to the token embedding.
template <typename T>
class Backbone {
 public:
  Backbone() = default;
  /// Binds to parameters already present in `store` under `ns`.
  Backbone(const ModelConfig& config, const ParamStore<T>& store, std::string ns = "backbone.");

  static void init_params(const ModelConfig& config, ParamStore<T>& store, std::mt19937_64& rng,
                          const std::string& ns = "backbone.");

  const ModelConfig& config() const { return config_; }
  const std::string& name_prefix() const { return ns_; }
  const Tensor<T>& token_table() const { return tok_emb_; }

  /// Token embeddings without positions.
  Tensor<T> embed_ids(std::span<const int> ids) const;
  /// Probability-weighted mixtures of token embeddings; rows of `probs` are
  /// distributions over the vocabulary.
  Tensor<T> embed_soft(const Tensor<T>& probs) const;

  /// Runs the sentence (token embeddings, positions start at
  /// `position_offset`) after `prefix`. Sentence positions attend to every
  /// prefix position and to earlier sentence positions.
  HiddenStates<T> forward(const Tensor<T>& embeddings, const PrefixBlock<T>* prefix, bool want_logits = true,
                          int position_offset = 0) const;
  HiddenStates<T> forward_ids(std::span<const int> ids, const PrefixBlock<T>* prefix, bool want_logits = true) const;

  Tensor<T> logits(const Tensor<T>& final_hidden) const;

  /// Σ_t −log p(target_t | prefix, context, SEP, target_<t) with teacher forcing.
  Tensor<T> sequence_nll(const PrefixBlock<T>* prefix, const Tensor<T>& context_embeddings,
                         std::span<const int> target) const;
  double sequence_log_prob(std::span<const int> target, const PrefixBlock<T>* prefix,
                           std::span<const int> context) const;

  /// Autoregressive decoding after [prefix ‖ context ‖ SEP]; stops at EOS
  /// (argmax EOS in soft mode) or max_len.
  Generation<T> generate(const PrefixBlock<T>* prefix, const Tensor<T>& context_embeddings,
                         const GenerateOptions& options) const;

 private:
  struct Layer {
    Tensor<T> ln1_g, ln1_b, w_qkv, b_qkv, w_o, b_o, ln2_g, ln2_b, w_fc, b_fc, w_proj, b_proj;
  };
  struct Cache {
    const PrefixBlock<T>* prefix = nullptr;
    std::vector<std::vector<Tensor<T>>> k_blocks;
    std::vector<std::vector<Tensor<T>>> v_blocks;
    int length = 0;
    int position_offset = 0;
  };

  Cache start(const PrefixBlock<T>* prefix, int position_offset) const;
  HiddenStates<T> extend(Cache& cache, const Tensor<T>& embeddings, bool want_logits) const;

  ModelConfig config_;
  std::string ns_;
  Tensor<T> tok_emb_, pos_emb_, lnf_g_, lnf_b_;
  std::vector<Layer> layers_;
};

}  // namespace pstyle
