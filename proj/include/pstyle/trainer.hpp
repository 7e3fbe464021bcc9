#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "pstyle/checkpoint.hpp"
#include "pstyle/config.hpp"
#include "pstyle/corpus.hpp"
#include "pstyle/model.hpp"

namespace pstyle {

/// Adam with bias correction over a fixed list of parameters. Parameters
/// without a gradient count as having a zero gradient.
class Adam {
 public:
  Adam() = default;
  Adam(std::vector<NamedTensor<float>> params, const OptimConfig& config);

  /// Global L2 norm of the current gradients.
  double grad_norm() const;
  /// Scales gradients so their global norm is at most `max_norm`; returns the
  /// norm before scaling.
  double clip(double max_norm);
  bool grads_finite() const;
  void step();
  void zero_grad();

  long steps() const { return steps_; }
  const std::vector<NamedTensor<float>>& params() const { return params_; }

  /// Moments as tensors named `<prefix>m.<param>` / `<prefix>v.<param>`.
  void save(Checkpoint& ck, const std::string& prefix) const;
  void load(const Checkpoint& ck, const std::string& prefix);

 private:
  std::vector<NamedTensor<float>> params_;
  std::vector<std::vector<float>> m_, v_;
  OptimConfig config_;
  long steps_ = 0;
};

/// Next-token training of the backbone before it is frozen.
class Pretrainer {
 public:
  Pretrainer(const ModelConfig& model, ParamStore<float>& store, const PretrainConfig& config);

  /// One optimizer step; returns the mean next-token loss of the batch.
  double step(const std::vector<Sentence>& batch);
  /// Mean next-token loss without updating anything.
  double loss(const std::vector<Sentence>& batch) const;
  void freeze();
  bool frozen() const { return frozen_; }

 private:
  ParamStore<float>* store_;
  Backbone<float> lm_;
  Adam adam_;
  bool frozen_ = false;
};

struct StepRecord {
  long step = 0;
  std::string phase;  // "dis" or "gen"
  double loss_self = 0, loss_cycle = 0, loss_style = 0, loss_gen = 0, loss_dis = 0;
  double grad_norm = 0;
  int source_style = -1;  // generator steps: style of the batch being transferred
  bool aborted = false;
  std::string abort_reason;
};

/// Validation score for model selection (higher is better).
using Validator = std::function<double(const StyleModel<float>&)>;

/// Alternating adversarial training: `dis_steps` discriminator updates, then
/// `gen_steps` generator updates, repeated.
class Trainer {
 public:
  /// `out_dir` may be empty for in-memory use (no log or checkpoints).
  Trainer(StyleModel<float>& model, const Dataset& data, std::filesystem::path out_dir = {});

  StepRecord discriminator_step(const Batch& batch);
  StepRecord generator_step(const Batch& batch);
  std::uint64_t noise_seed(int item) const;

  /// Phase of global step k under the schedule.
  std::string phase_of(long step) const;
  /// Runs one scheduled step (drawing the next batch) and logs it.
  StepRecord run_step();
  /// Trains until `total_steps`, checkpointing along the way.
  void run(long total_steps, const Validator& validate = {});

  /// Restores parameters, optimizer moments, counters and iterator positions.
  void resume(const std::filesystem::path& checkpoint);
  Checkpoint snapshot() const;

  long step() const { return step_; }
  const std::vector<StepRecord>& history() const { return history_; }
  std::string header_json() const;
  std::string record_json(const StepRecord& r) const;

 private:
  void open_log(bool append);
  void write_log(const std::string& line);
  void save_checkpoints(const Validator& validate);

  StyleModel<float>& model_;
  const Dataset& data_;
  std::filesystem::path out_dir_;
  std::vector<Example> by_style_[2];
  BatchIterator mixed_, styled_[2];
  Adam gen_adam_, dis_adam_;
  long step_ = 0;
  long gen_batches_ = 0;
  double best_score_ = -1.0;
  std::vector<StepRecord> history_;
  std::unique_ptr<std::ofstream> log_;
};

}  // namespace pstyle
