#include "pstyle/model.hpp"

#include <stdexcept>

#include "pstyle/ops.hpp"

namespace pstyle {

template <typename T>
StyleModel<T>::StyleModel(const RunConfig& config, ParamStore<T> store) : config_(config), store_(std::move(store)) {
  config_.validate();
  backbone_ = Backbone<T>(config_.model, store_, kBackboneNs);
  if (config_.ablation.full_finetune) gen_backbone_ = Backbone<T>(config_.model, store_, kGeneratorBackboneNs);
  prefix_ = PrefixSystem<T>(config_.model, config_.prefix, config_.ablation, store_, &generator_backbone());
  disc_ = Discriminator<T>(config_.model, store_, &backbone_);
  store_.set_trainable("", false);
}

template <typename T>
void StyleModel<T>::init_trainable(const RunConfig& config, ParamStore<T>& store, std::mt19937_64& rng) {
  PrefixSystem<T>::init_params(config.model, config.prefix, store, rng);
  Discriminator<T>::init_params(config.model, config.discriminator_tokens, config.prefix.projection_hidden, store,
                                rng);
  if (config.ablation.full_finetune) {
    const std::string from = kBackboneNs;
    for (const auto& e : store.group(kBackboneNs)) {
      store.add(kGeneratorBackboneNs + e.name.substr(from.size()), e.tensor.clone());
    }
  }
}

template <typename T>
void StyleModel<T>::train_only(const std::string& group) {
  store_.set_trainable("", false);
  store_.set_trainable(group, true);
}

template <typename T>
std::vector<int> StyleModel<T>::transfer(std::span<const int> x, int target_style) const {
  NoGradScope<T> no_grad;
  const auto& gb = generator_backbone();
  auto cond = prefix_.condition(gb.embed_ids(x), target_style);
  GenerateOptions o;
  o.mode = DecodeMode::kGreedy;
  o.max_len = static_cast<int>(x.size()) + config_.max_len_extra;
  return gb.generate(&cond.prefix, cond.context, o).ids;
}

std::vector<int> reconstruction_target(std::span<const int> x, bool score_eos) {
  std::vector<int> t(x.begin(), x.end());
  if (score_eos) t.push_back(tokens::kEos);
  return t;
}

template <typename T>
Tensor<T> loss_self(const StyleModel<T>& m, const typename PrefixSystem<T>::Static& parts, std::span<const int> x,
                    int style, const PrefixBlock<T>* content) {
  const auto& gb = m.generator_backbone();
  auto cond = m.prefix().condition(parts, gb.embed_ids(x), style, content);
  const auto target = reconstruction_target(x, m.config().score_eos);
  return gb.sequence_nll(&cond.prefix, cond.context, target);
}

template <typename T>
Generation<T> soft_transfer(const StyleModel<T>& m, const typename PrefixSystem<T>::Static& parts,
                            std::span<const int> x, int target_style, const PrefixBlock<T>* content,
                            std::uint64_t noise_seed) {
  const auto& gb = m.generator_backbone();
  auto cond = m.prefix().condition(parts, gb.embed_ids(x), target_style, content);
  GenerateOptions o;
  o.mode = DecodeMode::kSoft;
  o.max_len = static_cast<int>(x.size()) + m.config().max_len_extra;
  o.min_len = 1;
  o.temperature = m.config().soft_temperature;
  o.straight_through = m.config().straight_through;
  o.gumbel_scale = m.config().gumbel_scale;
  o.seed = noise_seed;
  return gb.generate(&cond.prefix, cond.context, o);
}

template <typename T>
Tensor<T> loss_style(const StyleModel<T>& m, const Tensor<T>& y_soft, int target_style,
                     const PrefixBlock<T>& dis_prefix) {
  const auto& d = m.discriminator();
  const auto y = d.backbone().embed_soft(y_soft);
  return m.config().style_loss_real_only ? d.style_nll(y, target_style, dis_prefix)
                                         : d.nll(y, target_style, dis_prefix);
}

template <typename T>
Tensor<T> loss_cycle(const StyleModel<T>& m, const typename PrefixSystem<T>::Static& parts, const Tensor<T>& y_soft,
                     std::span<const int> x, int style) {
  const auto& gb = m.generator_backbone();
  auto cond = m.prefix().condition(parts, gb.embed_soft(y_soft), style);
  const auto target = reconstruction_target(x, m.config().score_eos);
  return gb.sequence_nll(&cond.prefix, cond.context, target);
}

template <typename T>
GeneratorLosses<T> generator_losses(const StyleModel<T>& m, const typename PrefixSystem<T>::Static& parts,
                                    const PrefixBlock<T>& dis_prefix, std::span<const int> x, int style,
                                    std::uint64_t noise_seed) {
  const int target = 1 - style;
  const auto content = m.prefix().content_for(parts, m.generator_backbone().embed_ids(x));
  GeneratorLosses<T> out;
  out.self = loss_self(m, parts, x, style, &content);
  auto y = soft_transfer(m, parts, x, target, &content, noise_seed);
  out.transferred = y.ids;
  out.style = loss_style(m, y.soft, target, dis_prefix);
  out.cycle = loss_cycle(m, parts, y.soft, x, style);
  return out;
}

template <typename T>
Tensor<T> combine(const LossWeights& w, const Tensor<T>& self, const Tensor<T>& cycle, const Tensor<T>& style) {
  return add(add(scale(self, T(w.self)), scale(cycle, T(w.cycle))), scale(style, T(w.style)));
}

template <typename T>
Tensor<T> dis_loss(const Discriminator<T>& d, std::span<const Tensor<T>> inputs, std::span<const int> targets,
                   const PrefixBlock<T>& dis_prefix) {
  if (inputs.size() != targets.size() || inputs.empty()) {
    throw std::invalid_argument("dis_loss: need one target per input and a non-empty batch");
  }
  Tensor<T> total;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    auto l = d.nll(inputs[i], targets[i], dis_prefix);
    total = total.defined() ? add(total, l) : l;
  }
  return scale(total, T(1.0 / static_cast<double>(inputs.size())));
}

#define PSTYLE_MODEL_INSTANTIATE(T)                                                                              \
  template class StyleModel<T>;                                                                                  \
  template Tensor<T> loss_self(const StyleModel<T>&, const PrefixSystem<T>::Static&, std::span<const int>, int,  \
                               const PrefixBlock<T>*);                                                           \
  template Generation<T> soft_transfer(const StyleModel<T>&, const PrefixSystem<T>::Static&, std::span<const int>, \
                                       int, const PrefixBlock<T>*, std::uint64_t);                               \
  template Tensor<T> loss_style(const StyleModel<T>&, const Tensor<T>&, int, const PrefixBlock<T>&);             \
  template Tensor<T> loss_cycle(const StyleModel<T>&, const PrefixSystem<T>::Static&, const Tensor<T>&,          \
                                std::span<const int>, int);                                                      \
  template GeneratorLosses<T> generator_losses(const StyleModel<T>&, const PrefixSystem<T>::Static&,             \
                                               const PrefixBlock<T>&, std::span<const int>, int, std::uint64_t); \
  template Tensor<T> combine(const LossWeights&, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);          \
  template Tensor<T> dis_loss(const Discriminator<T>&, std::span<const Tensor<T>>, std::span<const int>,         \
                              const PrefixBlock<T>&);

PSTYLE_MODEL_INSTANTIATE(float)
PSTYLE_MODEL_INSTANTIATE(double)

}  // namespace pstyle
