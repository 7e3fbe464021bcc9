#pragma once

#include <filesystem>
#include <memory>
#include <ostream>
#include <string>

#include "pstyle/checkpoint.hpp"
#include "pstyle/config.hpp"
#include "pstyle/corpus.hpp"
#include "pstyle/eval.hpp"
#include "pstyle/model.hpp"
#include "pstyle/trainer.hpp"

namespace pstyle {

struct PretrainResult {
  double initial_loss = 0;  // on a fixed probe batch
  double final_loss = 0;
};

/// Initialises "backbone.*" in `store` from cfg.seed and trains it on the
/// training split. One JSON record per step goes to `log` when given.
PretrainResult pretrain_backbone(const RunConfig& cfg, const Dataset& data, ParamStore<float>& store,
                                 std::ostream* log = nullptr);

Checkpoint backbone_checkpoint(const RunConfig& cfg, const Vocab& vocab, const ParamStore<float>& store);

/// Vocabulary stored in a checkpoint.
Vocab vocab_from_checkpoint(const Checkpoint& ck);

/// A fresh model for `cfg` on top of a pretrained backbone checkpoint; the
/// model section of `cfg` is taken from the checkpoint.
std::unique_ptr<StyleModel<float>> model_on_backbone(RunConfig cfg, const Checkpoint& backbone);

/// Rebuilds a trained model (kind = model) exactly as saved.
std::unique_ptr<StyleModel<float>> model_from_checkpoint(const Checkpoint& ck);

/// Content hash of an artifact file.
std::string file_id(const std::filesystem::path& path);

/// Metrics for greedy transfer of every item in `split`.
MetricsReport evaluate_model(const StyleModel<float>& model, const Evaluator& evaluator, const Split& split,
                             const Vocab& vocab);

/// ACC × self-BLEU / 100 on the development split.
Validator dev_validator(const Evaluator& evaluator, const Split& dev, const Vocab& vocab);

}  // namespace pstyle
