#include "pstyle/pipeline.hpp"

#include <nlohmann/json.hpp>
#include <stdexcept>

#include "pstyle/log.hpp"

namespace pstyle {

PretrainResult pretrain_backbone(const RunConfig& cfg, const Dataset& data, ParamStore<float>& store,
                                 std::ostream* log) {
  std::mt19937_64 rng(cfg.seed);
  Backbone<float>::init_params(cfg.model, store, rng);
  Pretrainer pt(cfg.model, store, cfg.pretrain);
  BatchIterator it(&data.train.items, cfg.pretrain.batch_size, cfg.seed ^ 0x5eedULL);
  std::mt19937_64 format_rng(cfg.seed + 17);

  std::vector<Example> probe_items(data.train.items.begin(),
                                   data.train.items.begin() + std::min<std::ptrdiff_t>(64, std::ssize(data.train.items)));
  std::mt19937_64 probe_rng(cfg.seed + 29);
  const auto probe = pretraining_sequences(probe_items, cfg.pretrain.copy_fraction, probe_rng);

  PretrainResult result;
  result.initial_loss = pt.loss(probe);
  if (log) {
    nlohmann::ordered_json h;
    h["type"] = "header";
    h["config_hash"] = cfg.hash();
    h["params_backbone"] = backbone_param_count(cfg.model);
    h["probe_loss"] = result.initial_loss;
    *log << h.dump() << '\n';
  }
  for (int step = 0; step < cfg.pretrain.steps; ++step) {
    const auto batch = it.next();
    std::vector<Example> items;
    for (int i = 0; i < batch.size(); ++i) items.push_back(data.train.items[static_cast<std::size_t>(batch.indices[i])]);
    const double loss = pt.step(pretraining_sequences(items, cfg.pretrain.copy_fraction, format_rng));
    if (log) {
      nlohmann::ordered_json j;
      j["type"] = "step";
      j["config_hash"] = cfg.hash();
      j["step"] = step;
      j["loss"] = loss;
      *log << j.dump() << '\n';
    }
    if ((step + 1) % 200 == 0) log_info("pretrain step ", step + 1, " loss ", loss);
  }
  pt.freeze();
  result.final_loss = pt.loss(probe);
  return result;
}

Checkpoint backbone_checkpoint(const RunConfig& cfg, const Vocab& vocab, const ParamStore<float>& store) {
  Checkpoint ck;
  ck.config_text = cfg.canonical();
  ck.config_hash = cfg.hash();
  ck.vocab = vocab.tokens();
  ck.set_meta("kind", "backbone");
  ck.add_tensors(store, kBackboneNs);
  return ck;
}

Vocab vocab_from_checkpoint(const Checkpoint& ck) {
  if (static_cast<int>(ck.vocab.size()) < tokens::kNumReserved) throw std::runtime_error("checkpoint has no vocabulary");
  return Vocab::from_tokens(std::vector<std::string>(ck.vocab.begin() + tokens::kNumReserved, ck.vocab.end()));
}

namespace {

ParamStore<float> store_from(const Checkpoint& ck, const std::string& prefix) {
  ParamStore<float> store;
  for (const auto& t : ck.tensors) {
    if (t.name.rfind(prefix, 0) == 0) store.add(t.name, t.tensor.clone());
  }
  return store;
}

}  // namespace

std::unique_ptr<StyleModel<float>> model_on_backbone(RunConfig cfg, const Checkpoint& backbone) {
  if (!backbone.has_meta("kind") || backbone.get_meta("kind") != "backbone") {
    throw std::runtime_error("not a backbone checkpoint");
  }
  cfg.model = RunConfig::from_text(backbone.config_text).model;
  auto store = store_from(backbone, kBackboneNs);
  std::mt19937_64 rng(cfg.seed);
  StyleModel<float>::init_trainable(cfg, store, rng);
  return std::make_unique<StyleModel<float>>(cfg, std::move(store));
}

std::unique_ptr<StyleModel<float>> model_from_checkpoint(const Checkpoint& ck) {
  if (!ck.has_meta("kind") || ck.get_meta("kind") != "model") throw std::runtime_error("not a model checkpoint");
  const auto cfg = RunConfig::from_text(ck.config_text);
  ParamStore<float> store;
  for (const auto& t : ck.tensors) {
    if (t.name.rfind("adam.", 0) != 0) store.add(t.name, t.tensor.clone());
  }
  return std::make_unique<StyleModel<float>>(cfg, std::move(store));
}

std::string file_id(const std::filesystem::path& path) { return fnv1a_hex(read_file(path)); }

MetricsReport evaluate_model(const StyleModel<float>& model, const Evaluator& evaluator, const Split& split,
                             const Vocab& vocab) {
  auto report = evaluator.evaluate(split, vocab, [&](const Sentence& x, int target) { return model.transfer(x, target); });
  report.config_hash = model.config().hash();
  return report;
}

Validator dev_validator(const Evaluator& evaluator, const Split& dev, const Vocab& vocab) {
  return [&evaluator, &dev, &vocab](const StyleModel<float>& m) {
    const auto r = evaluate_model(m, evaluator, dev, vocab);
    log_info("dev: acc=", r.acc, " self_bleu=", r.self_bleu, " ppl=", r.ppl);
    return r.acc * r.self_bleu / 100.0;
  };
}

}  // namespace pstyle
