#include "pstyle/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <nlohmann/json.hpp>
#include <sstream>
#include <stdexcept>

#include "pstyle/log.hpp"
#include "pstyle/ops.hpp"

namespace pstyle {

namespace {

std::string fmt17(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

bool finite(double v) { return std::isfinite(v); }

std::vector<NamedTensor<float>> trainable_group(const ParamStore<float>& store, const std::string& prefix) {
  return store.group(prefix);
}

}  // namespace

Adam::Adam(std::vector<NamedTensor<float>> params, const OptimConfig& config)
    : params_(std::move(params)), config_(config) {
  for (const auto& p : params_) {
    m_.emplace_back(p.tensor.numel(), 0.f);
    v_.emplace_back(p.tensor.numel(), 0.f);
  }
}

double Adam::grad_norm() const {
  double sq = 0.0;
  for (const auto& p : params_) {
    if (!p.tensor.has_grad()) continue;
    for (float g : p.tensor.grad()) sq += static_cast<double>(g) * g;
  }
  return std::sqrt(sq);
}

bool Adam::grads_finite() const {
  for (const auto& p : params_) {
    if (!p.tensor.has_grad()) continue;
    for (float g : p.tensor.grad()) {
      if (!std::isfinite(g)) return false;
    }
  }
  return true;
}

double Adam::clip(double max_norm) {
  const double norm = grad_norm();
  if (max_norm > 0 && norm > max_norm) {
    const float factor = static_cast<float>(max_norm / norm);
    for (auto& p : params_) {
      if (!p.tensor.has_grad()) continue;
      for (auto& g : p.tensor.grad_mut()) g *= factor;
    }
  }
  return norm;
}

void Adam::step() {
  ++steps_;
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(steps_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(steps_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& t = params_[i].tensor;
    auto data = t.data_mut();
    const bool has = t.has_grad();
    const auto grad = has ? t.grad() : std::span<const float>();
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t j = 0; j < data.size(); ++j) {
      const double g = has ? grad[j] : 0.0;
      m[j] = static_cast<float>(b1 * m[j] + (1.0 - b1) * g);
      v[j] = static_cast<float>(b2 * v[j] + (1.0 - b2) * g * g);
      const double mhat = m[j] / c1;
      const double vhat = v[j] / c2;
      data[j] = static_cast<float>(data[j] - config_.lr * mhat / (std::sqrt(vhat) + config_.eps));
    }
  }
}

void Adam::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

void Adam::save(Checkpoint& ck, const std::string& prefix) const {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    ck.tensors.push_back({prefix + "m." + params_[i].name, Tensor<float>(params_[i].tensor.shape(), m_[i])});
    ck.tensors.push_back({prefix + "v." + params_[i].name, Tensor<float>(params_[i].tensor.shape(), v_[i])});
  }
  ck.set_meta(prefix + "steps", std::to_string(steps_));
}

void Adam::load(const Checkpoint& ck, const std::string& prefix) {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const auto* m = ck.find(prefix + "m." + params_[i].name);
    const auto* v = ck.find(prefix + "v." + params_[i].name);
    if (m == nullptr || v == nullptr) throw std::runtime_error("checkpoint lacks optimizer state for " + params_[i].name);
    m_[i].assign(m->data().begin(), m->data().end());
    v_[i].assign(v->data().begin(), v->data().end());
  }
  steps_ = std::stol(ck.get_meta(prefix + "steps"));
}

Pretrainer::Pretrainer(const ModelConfig& model, ParamStore<float>& store, const PretrainConfig& config)
    : store_(&store), lm_(model, store, kBackboneNs) {
  store.set_trainable(kBackboneNs, true);
  OptimConfig oc;
  oc.lr = config.lr;
  adam_ = Adam(store.group(kBackboneNs), oc);
}

double Pretrainer::loss(const std::vector<Sentence>& batch) const {
  NoGradScope<float> no_grad;
  double total = 0.0;
  long count = 0;
  for (const auto& seq : batch) {
    if (seq.size() < 2) continue;
    std::span<const int> s(seq);
    auto hs = lm_.forward_ids(s.first(s.size() - 1), nullptr);
    total += cross_entropy(hs.logits, s.subspan(1)).item();
    count += static_cast<long>(seq.size()) - 1;
  }
  return count ? total / static_cast<double>(count) : 0.0;
}

double Pretrainer::step(const std::vector<Sentence>& batch) {
  if (frozen_) throw std::logic_error("pretrain_step: the backbone is frozen");
  Graph<float> graph;
  GraphScope<float> scope(graph);
  Tensor<float> total;
  long count = 0;
  for (const auto& seq : batch) {
    if (seq.size() < 2) continue;
    std::span<const int> s(seq);
    auto hs = lm_.forward_ids(s.first(s.size() - 1), nullptr);
    auto ce = cross_entropy(hs.logits, s.subspan(1));
    total = total.defined() ? add(total, ce) : ce;
    count += static_cast<long>(seq.size()) - 1;
  }
  if (count == 0) return 0.0;
  auto mean = scale(total, 1.f / static_cast<float>(count));
  graph.backward(mean);
  adam_.clip(1.0);
  adam_.step();
  adam_.zero_grad();
  return mean.item();
}

void Pretrainer::freeze() {
  store_->set_trainable(kBackboneNs, false);
  frozen_ = true;
}

Trainer::Trainer(StyleModel<float>& model, const Dataset& data, std::filesystem::path out_dir)
    : model_(model), data_(data), out_dir_(std::move(out_dir)) {
  const auto& cfg = model.config();
  by_style_[0] = filter_style(data.train.items, 0);
  by_style_[1] = filter_style(data.train.items, 1);
  const auto seed = cfg.seed;
  mixed_ = BatchIterator(&data.train.items, cfg.schedule.batch_size, seed * 3 + 0);
  styled_[0] = BatchIterator(&by_style_[0], cfg.schedule.batch_size, seed * 3 + 1);
  styled_[1] = BatchIterator(&by_style_[1], cfg.schedule.batch_size, seed * 3 + 2);
  gen_adam_ = Adam(trainable_group(model.store(), kGeneratorNs), cfg.optim);
  dis_adam_ = Adam(trainable_group(model.store(), kDiscriminatorNs), cfg.optim);
}

std::string Trainer::phase_of(long step) const {
  const auto& s = model_.config().schedule;
  return (step % (s.dis_steps + s.gen_steps)) < s.dis_steps ? "dis" : "gen";
}

// Depends only on (seed, step, item) so a resumed run draws the same noise.
std::uint64_t Trainer::noise_seed(int item) const {
  std::uint64_t z = model_.config().seed * 0x9E3779B97F4A7C15ULL + static_cast<std::uint64_t>(step_) * 1024 +
                    static_cast<std::uint64_t>(item);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

StepRecord Trainer::discriminator_step(const Batch& batch) {
  StepRecord rec;
  rec.step = step_;
  rec.phase = "dis";
  model_.train_only(kDiscriminatorNs);
  const auto& d = model_.discriminator();
  const auto& frozen = model_.frozen_backbone();

  // Fakes: transfers to the opposite style, generated without a graph.
  std::vector<Tensor<float>> fakes;
  {
    NoGradScope<float> no_grad;
    auto parts = model_.prefix().build_static();
    for (int i = 0; i < batch.size(); ++i) {
      const PrefixBlock<float>* content = nullptr;  // derived from X inside
      auto y = soft_transfer(model_, parts, batch.row(i), 1 - batch.styles[i], content, noise_seed(i));
      fakes.push_back(y.soft.detach());
    }
  }

  Graph<float> graph;
  GraphScope<float> scope(graph);
  auto prefix = d.prefix();
  std::vector<Tensor<float>> inputs;
  std::vector<int> targets;
  for (int i = 0; i < batch.size(); ++i) {
    inputs.push_back(frozen.embed_ids(batch.row(i)));
    targets.push_back(batch.styles[i]);
    inputs.push_back(frozen.embed_soft(fakes[static_cast<std::size_t>(i)]));
    targets.push_back(Discriminator<float>::kFakeClass);
  }
  auto loss = dis_loss(d, std::span<const Tensor<float>>(inputs), std::span<const int>(targets), prefix);
  rec.loss_dis = loss.item();
  if (!finite(rec.loss_dis)) {
    rec.aborted = true;
    rec.abort_reason = "non-finite discriminator loss";
    return rec;
  }
  graph.backward(loss);
  if (!dis_adam_.grads_finite()) {
    dis_adam_.zero_grad();
    rec.aborted = true;
    rec.abort_reason = "non-finite discriminator gradient";
    return rec;
  }
  rec.grad_norm = dis_adam_.clip(model_.config().optim.clip_norm);
  dis_adam_.step();
  dis_adam_.zero_grad();
  return rec;
}

StepRecord Trainer::generator_step(const Batch& batch) {
  StepRecord rec;
  rec.step = step_;
  rec.phase = "gen";
  rec.source_style = batch.size() > 0 ? batch.styles[0] : -1;
  model_.train_only(kGeneratorNs);
  const auto& cfg = model_.config();

  Graph<float> graph;
  GraphScope<float> scope(graph);
  auto parts = model_.prefix().build_static();
  auto dis_prefix = model_.discriminator().prefix();
  Tensor<float> self_sum, cycle_sum, style_sum;
  auto acc = [](Tensor<float>& sum, const Tensor<float>& v) { sum = sum.defined() ? add(sum, v) : v; };
  for (int i = 0; i < batch.size(); ++i) {
    auto l = generator_losses(model_, parts, dis_prefix, batch.row(i), batch.styles[i], noise_seed(i));
    acc(self_sum, l.self);
    acc(cycle_sum, l.cycle);
    acc(style_sum, l.style);
  }
  const float inv = 1.f / static_cast<float>(batch.size());
  auto self = scale(self_sum, inv), cycle = scale(cycle_sum, inv), style = scale(style_sum, inv);
  auto total = combine(cfg.weights, self, cycle, style);
  rec.loss_self = self.item();
  rec.loss_cycle = cycle.item();
  rec.loss_style = style.item();
  // Recorded from the logged terms in double so the log is self-consistent.
  rec.loss_gen = cfg.weights.self * rec.loss_self + cfg.weights.cycle * rec.loss_cycle + cfg.weights.style * rec.loss_style;
  if (!finite(rec.loss_gen)) {
    rec.aborted = true;
    rec.abort_reason = "non-finite generator loss";
    return rec;
  }
  graph.backward(total);
  if (!gen_adam_.grads_finite()) {
    gen_adam_.zero_grad();
    rec.aborted = true;
    rec.abort_reason = "non-finite generator gradient";
    return rec;
  }
  rec.grad_norm = gen_adam_.clip(cfg.optim.clip_norm);
  gen_adam_.step();
  gen_adam_.zero_grad();
  return rec;
}

StepRecord Trainer::run_step() {
  StepRecord rec;
  if (phase_of(step_) == "dis") {
    rec = discriminator_step(mixed_.next());
  } else {
    const int style = static_cast<int>(gen_batches_ % 2);
    ++gen_batches_;
    rec = generator_step(styled_[style].next());
  }
  if (rec.aborted) log_warn("step ", rec.step, " aborted: ", rec.abort_reason);
  history_.push_back(rec);
  if (log_) write_log(record_json(rec));
  ++step_;
  return rec;
}

std::string Trainer::header_json() const {
  const auto& cfg = model_.config();
  const auto tally = tally_params(cfg.model, cfg.prefix, cfg.discriminator_tokens, cfg.ablation.full_finetune);
  std::string layout;
  auto part = [&](const std::string& s) { layout += (layout.empty() ? "" : " + ") + s; };
  if (!cfg.ablation.disable_shared_prefix) part(std::to_string(cfg.prefix.shared_len));
  if (!cfg.ablation.disable_style_prefix) part(std::to_string(cfg.prefix.style_len));
  if (!cfg.ablation.disable_content_prefix) part("n");
  if (layout.empty()) layout = "0";
  nlohmann::ordered_json j;
  j["type"] = "header";
  j["config_hash"] = cfg.hash();
  j["prefix_length"] = layout;
  j["params_backbone"] = tally.backbone;
  j["params_generator"] = tally.generator;
  j["params_discriminator"] = tally.discriminator;
  j["generator_ratio"] = tally.generator_ratio();
  j["trainable_ratio"] = tally.trainable_ratio();
  j["dis_steps"] = cfg.schedule.dis_steps;
  j["gen_steps"] = cfg.schedule.gen_steps;
  return j.dump();
}

std::string Trainer::record_json(const StepRecord& r) const {
  nlohmann::ordered_json j;
  j["type"] = "step";
  j["config_hash"] = model_.config().hash();
  j["step"] = r.step;
  j["phase"] = r.phase;
  if (r.phase == "dis") {
    j["loss_dis"] = r.loss_dis;
  } else {
    j["source_style"] = r.source_style;
    j["loss_self"] = r.loss_self;
    j["loss_cycle"] = r.loss_cycle;
    j["loss_style"] = r.loss_style;
    j["loss_gen"] = r.loss_gen;
  }
  j["grad_norm"] = r.grad_norm;
  if (r.aborted) j["aborted"] = r.abort_reason;
  return j.dump();
}

void Trainer::open_log(bool append) {
  if (out_dir_.empty()) return;
  std::filesystem::create_directories(out_dir_);
  const auto path = out_dir_ / "train_log.jsonl";
  if (append) {
    // Keep the header and records before the resume point.
    std::vector<std::string> kept;
    if (std::filesystem::exists(path)) {
      std::ifstream is(path);
      std::string line;
      while (std::getline(is, line)) {
        if (line.empty()) continue;
        auto j = nlohmann::json::parse(line);
        if (j.value("type", "") == "header" || j.value("step", 0L) < step_) kept.push_back(line);
      }
    }
    log_ = std::make_unique<std::ofstream>(path, std::ios::trunc);
    for (const auto& l : kept) *log_ << l << '\n';
  } else {
    log_ = std::make_unique<std::ofstream>(path, std::ios::trunc);
    *log_ << header_json() << '\n';
  }
  log_->flush();
}

void Trainer::write_log(const std::string& line) {
  *log_ << line << '\n';
  log_->flush();
}

Checkpoint Trainer::snapshot() const {
  const auto& cfg = model_.config();
  Checkpoint ck;
  ck.config_text = cfg.canonical();
  ck.config_hash = cfg.hash();
  ck.vocab = data_.vocab.tokens();
  ck.set_meta("kind", "model");
  ck.set_meta("step", std::to_string(step_));
  ck.set_meta("gen_batches", std::to_string(gen_batches_));
  ck.set_meta("best_score", fmt17(best_score_));
  const BatchIterator* its[3] = {&mixed_, &styled_[0], &styled_[1]};
  for (int i = 0; i < 3; ++i) {
    ck.set_meta("iterator." + std::to_string(i),
                std::to_string(its[i]->epoch()) + " " + std::to_string(its[i]->position()));
  }
  ck.add_tensors(model_.store());
  gen_adam_.save(ck, "adam.gen.");
  dis_adam_.save(ck, "adam.dis.");
  return ck;
}

void Trainer::resume(const std::filesystem::path& path) {
  const auto ck = Checkpoint::load(path);
  if (ck.config_hash != model_.config().hash()) {
    throw std::runtime_error("resume: checkpoint " + path.string() + " was written by a different configuration");
  }
  for (auto& e : model_.store().entries()) {
    const auto* t = ck.find(e.name);
    if (t == nullptr || t->shape() != e.tensor.shape()) throw std::runtime_error("resume: missing tensor " + e.name);
    auto dst = e.tensor;
    std::copy(t->data().begin(), t->data().end(), dst.data_mut().begin());
  }
  gen_adam_.load(ck, "adam.gen.");
  dis_adam_.load(ck, "adam.dis.");
  step_ = std::stol(ck.get_meta("step"));
  gen_batches_ = std::stol(ck.get_meta("gen_batches"));
  best_score_ = std::stod(ck.get_meta("best_score"));
  BatchIterator* its[3] = {&mixed_, &styled_[0], &styled_[1]};
  for (int i = 0; i < 3; ++i) {
    std::istringstream is(ck.get_meta("iterator." + std::to_string(i)));
    int epoch = 0, position = 0;
    is >> epoch >> position;
    its[i]->seek(epoch, position);
  }
  open_log(true);
}

void Trainer::save_checkpoints(const Validator& validate) {
  if (out_dir_.empty()) return;
  if (validate) {
    const double score = validate(model_);
    log_info("step ", step_, ": validation score ", score);
    if (score > best_score_) {
      best_score_ = score;
      snapshot().save(out_dir_ / "best.ckpt");
    }
  }
  snapshot().save(out_dir_ / "last.ckpt");
}

void Trainer::run(long total_steps, const Validator& validate) {
  if (!log_) open_log(step_ > 0);
  const auto& cfg = model_.config();
  while (step_ < total_steps) {
    const auto rec = run_step();
    if (rec.phase == "gen" && step_ % 50 == 0) {
      log_info("step ", rec.step, " gen self=", rec.loss_self, " cycle=", rec.loss_cycle, " style=", rec.loss_style);
    }
    if (step_ % cfg.schedule.checkpoint_every == 0) save_checkpoints(validate);
  }
  if (step_ % cfg.schedule.checkpoint_every != 0) save_checkpoints(validate);
}

}  // namespace pstyle
