#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pstyle/backbone.hpp"
#include "pstyle/kv_file.hpp"
#include "pstyle/prefix.hpp"

namespace pstyle {

struct LossWeights {
  double self = 0.25;
  double cycle = 0.5;
  double style = 1.0;
  bool operator==(const LossWeights&) const = default;
};

struct Schedule {
  int dis_steps = 10;
  int gen_steps = 5;
  int batch_size = 8;
  int total_steps = 10000;
  int checkpoint_every = 500;
  bool operator==(const Schedule&) const = default;
};

struct OptimConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double clip_norm = 1.0;  // global norm; 0 disables
  bool operator==(const OptimConfig&) const = default;
};

struct PretrainConfig {
  int steps = 3000;
  int batch_size = 16;
  double lr = 1e-3;
  double copy_fraction = 0.5;
  bool operator==(const PretrainConfig&) const = default;
};

/// Everything that determines a run. Paths are not part of it, so the same
/// configuration hashes identically wherever its files are written.
struct RunConfig {
  ModelConfig model;
  PrefixConfig prefix;
  AblationFlags ablation;
  LossWeights weights;
  Schedule schedule;
  OptimConfig optim;
  PretrainConfig pretrain;
  int discriminator_tokens = 10;
  double soft_temperature = 1.0;
  bool straight_through = false;
  double gumbel_scale = 0.0;
  int max_len_extra = 8;  // decoding budget beyond the input length
  bool score_eos = true;  // reconstruction targets end with EOS
  bool style_loss_real_only = false;  // L_style over {style 0, style 1} instead of all three classes
  int max_sentence_len = 32;
  int min_freq = 1;
  std::uint64_t seed = 1;

  /// Sets one key; throws invalid_argument on an unknown key or bad value.
  void set(const std::string& key, const std::string& value);
  void apply(const KeyValueFile& kv);
  static RunConfig from_text(const std::string& text);

  void validate() const;
  std::string canonical() const;
  std::string hash() const { return fnv1a_hex(canonical()); }
  std::vector<std::string> keys() const;
  bool operator==(const RunConfig&) const = default;
};

}  // namespace pstyle
