#include "pstyle/prefix.hpp"

#include <array>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "pstyle/ops.hpp"

namespace pstyle {

void PrefixConfig::validate() const {
  if (shared_len < 1 || style_len < 1 || pre_len < 1 || projection_hidden < 1) {
    throw std::invalid_argument("prefix config: lengths and projection width must be positive");
  }
  if (num_styles != 2) throw std::invalid_argument("prefix config: only two styles are supported");
}

std::string PrefixConfig::canonical() const {
  std::ostringstream os;
  os << "prefix.shared_len = " << shared_len << '\n'
     << "prefix.style_len = " << style_len << '\n'
     << "prefix.pre_len = " << pre_len << '\n'
     << "prefix.projection_hidden = " << projection_hidden << '\n'
     << "prefix.num_styles = " << num_styles << '\n'
     << "prefix.tie_projections = " << (tie_projections ? "true" : "false") << '\n';
  return os.str();
}

void AblationFlags::validate() const {
  if (use_style_embedding_instead && !disable_style_prefix) {
    throw std::invalid_argument("ablation: use_style_embedding_instead requires disable_style_prefix");
  }
}

std::string AblationFlags::canonical() const {
  auto b = [](bool v) { return v ? "true" : "false"; };
  std::ostringstream os;
  os << "ablation.disable_shared_prefix = " << b(disable_shared_prefix) << '\n'
     << "ablation.disable_style_prefix = " << b(disable_style_prefix) << '\n'
     << "ablation.use_style_embedding_instead = " << b(use_style_embedding_instead) << '\n'
     << "ablation.disable_content_prefix = " << b(disable_content_prefix) << '\n'
     << "ablation.full_finetune = " << b(full_finetune) << '\n';
  return os.str();
}

template <typename T>
void ProjectionNet<T>::init_params(ParamStore<T>& store, const std::string& ns, int model_dim, int hidden,
                                   int out_dim, std::mt19937_64& rng) {
  store.add_normal(ns + "w1", {model_dim, hidden}, 1.0 / std::sqrt(static_cast<double>(model_dim)), rng);
  store.add_constant(ns + "b1", {hidden}, T(0));
  store.add_normal(ns + "w2", {hidden, out_dim}, 0.02, rng);
  store.add_constant(ns + "b2", {out_dim}, T(0));
}

template <typename T>
ProjectionNet<T> ProjectionNet<T>::bind(const ParamStore<T>& store, const std::string& ns) {
  return {store.get(ns + "w1"), store.get(ns + "b1"), store.get(ns + "w2"), store.get(ns + "b2")};
}

template <typename T>
Tensor<T> ProjectionNet<T>::operator()(const Tensor<T>& x) const {
  return linear(tanh(linear(x, w1, b1)), w2, b2);
}

template <typename T>
void PrefixSystem<T>::init_params(const ModelConfig& model, const PrefixConfig& config, ParamStore<T>& store,
                                  std::mt19937_64& rng) {
  config.validate();
  const std::string ns = kNamespace;
  const int d = model.model_dim;
  const int out = model.num_layers * 2 * d;
  store.add_normal(ns + "shared_tokens", {config.shared_len, d}, 1.0, rng);
  store.add_normal(ns + "style_emb", {config.num_styles, d}, 1.0, rng);
  store.add_normal(ns + "style_offsets", {config.style_len, d}, 0.1, rng);
  store.add_normal(ns + "fusion.w", {config.num_styles * d, d}, 1.0 / std::sqrt(static_cast<double>(2 * d)), rng);
  store.add_constant(ns + "fusion.b", {d}, T(0));
  ProjectionNet<T>::init_params(store, ns + "proj_main.", d, config.projection_hidden, out, rng);
  if (!config.tie_projections) {
    ProjectionNet<T>::init_params(store, ns + "proj_pre.", d, config.projection_hidden, out, rng);
    ProjectionNet<T>::init_params(store, ns + "proj_content.", d, config.projection_hidden, out, rng);
  }
}

template <typename T>
PrefixSystem<T>::PrefixSystem(const ModelConfig& model, const PrefixConfig& config, const AblationFlags& flags,
                              const ParamStore<T>& store, const Backbone<T>* backbone)
    : model_(model), config_(config), flags_(flags), backbone_(backbone) {
  config.validate();
  flags.validate();
  if (backbone == nullptr) throw std::invalid_argument("prefix system needs a backbone");
  if (!(backbone->config() == model)) throw std::invalid_argument("prefix system: backbone config mismatch");
  const std::string ns = kNamespace;
  shared_tokens_ = store.get(ns + "shared_tokens");
  style_emb_ = store.get(ns + "style_emb");
  style_offsets_ = store.get(ns + "style_offsets");
  fusion_w_ = store.get(ns + "fusion.w");
  fusion_b_ = store.get(ns + "fusion.b");
  proj_main_ = ProjectionNet<T>::bind(store, ns + "proj_main.");
  const bool tied = config.tie_projections;
  proj_pre_ = tied ? proj_main_ : ProjectionNet<T>::bind(store, ns + "proj_pre.");
  proj_content_ = tied ? proj_main_ : ProjectionNet<T>::bind(store, ns + "proj_content.");
  if (shared_tokens_.rows() != config.shared_len || style_offsets_.rows() != config.style_len ||
      style_emb_.rows() != config.num_styles) {
    throw std::invalid_argument("prefix system: stored prefix tables disagree with the prefix config");
  }
}

template <typename T>
PrefixBlock<T> PrefixSystem<T>::shared() const {
  return prefix_from_projection(proj_main_(shared_tokens_), model_.num_layers, model_.model_dim,
                                PrefixSource::kShared);
}

template <typename T>
PrefixBlock<T> PrefixSystem<T>::style(int target_style) const {
  if (target_style < 0 || target_style >= config_.num_styles) {
    throw std::out_of_range("unknown style " + std::to_string(target_style));
  }
  const std::array<int, 1> id{target_style};
  auto rows = add(style_offsets_, embedding(style_emb_, std::span<const int>(id)));
  return prefix_from_projection(proj_main_(rows), model_.num_layers, model_.model_dim, PrefixSource::kStyle);
}

template <typename T>
PrefixBlock<T> PrefixSystem<T>::pre() const {
  auto fused = tanh(linear(reshape(style_emb_, {1, config_.num_styles * model_.model_dim}), fusion_w_, fusion_b_));
  auto projected = repeat_rows(proj_pre_(fused), config_.pre_len);
  return prefix_from_projection(projected, model_.num_layers, model_.model_dim, PrefixSource::kPre);
}

template <typename T>
PrefixBlock<T> PrefixSystem<T>::content(const Tensor<T>& x_embeddings, const PrefixBlock<T>& pre_prefix) const {
  if (x_embeddings.rows() < 1) throw std::invalid_argument("content prefix of an empty sentence");
  ++content_passes_;
  auto hs = backbone_->forward(x_embeddings, &pre_prefix, false);
  return prefix_from_projection(proj_content_(hs.final_hidden), model_.num_layers, model_.model_dim,
                                PrefixSource::kContent);
}

template <typename T>
PrefixBlock<T> PrefixSystem<T>::assemble(const PrefixBlock<T>& shared, const PrefixBlock<T>& style,
                                         const PrefixBlock<T>& content) {
  const std::array<PrefixBlock<T>, 3> parts{shared, style, content};
  return concat_prefixes(std::span<const PrefixBlock<T>>(parts));
}

template <typename T>
typename PrefixSystem<T>::Static PrefixSystem<T>::build_static() const {
  Static s;
  if (!flags_.disable_shared_prefix) s.shared = shared();
  if (!flags_.disable_content_prefix) s.pre = pre();
  if (!flags_.disable_style_prefix) {
    for (int k = 0; k < config_.num_styles; ++k) s.styles.push_back(style(k));
  }
  return s;
}

template <typename T>
PrefixBlock<T> PrefixSystem<T>::content_for(const Static& parts, const Tensor<T>& x_embeddings) const {
  if (flags_.disable_content_prefix) return {};
  return content(x_embeddings, parts.pre);
}

template <typename T>
Conditioning<T> PrefixSystem<T>::condition(const Static& parts, const Tensor<T>& x_embeddings, int target_style,
                                           const PrefixBlock<T>* content) const {
  if (target_style < 0 || target_style >= config_.num_styles) {
    throw std::out_of_range("unknown style " + std::to_string(target_style));
  }
  PrefixBlock<T> own_content;
  if (content == nullptr) {
    own_content = content_for(parts, x_embeddings);
    content = &own_content;
  }
  const PrefixBlock<T> no_style;
  const auto& style_block = flags_.disable_style_prefix ? no_style : parts.styles.at(static_cast<std::size_t>(target_style));
  Conditioning<T> c;
  c.prefix = assemble(parts.shared, style_block, *content);
  if (flags_.use_style_embedding_instead) {
    const std::array<int, 1> id{target_style};
    const std::array<Tensor<T>, 2> rows{embedding(style_emb_, std::span<const int>(id)), x_embeddings};
    c.context = concat_rows(std::span<const Tensor<T>>(rows));
  } else {
    c.context = x_embeddings;
  }
  return c;
}

std::size_t backbone_param_count(const ModelConfig& m) {
  const std::size_t d = m.model_dim, ff = m.ff_dim;
  const std::size_t per_layer = 2 * d + (d * 3 * d + 3 * d) + (d * d + d) + 2 * d + (d * ff + ff) + (ff * d + d);
  return static_cast<std::size_t>(m.vocab_size) * d + static_cast<std::size_t>(m.max_positions) * d + 2 * d +
         static_cast<std::size_t>(m.num_layers) * per_layer;
}

ParamTally tally_params(const ModelConfig& m, const PrefixConfig& p, int discriminator_tokens, bool full_finetune) {
  const std::size_t d = m.model_dim, h = p.projection_hidden;
  const std::size_t out = static_cast<std::size_t>(m.num_layers) * 2 * d;
  ParamTally t;
  t.backbone = backbone_param_count(m);
  t.projection_net = d * h + h + h * out + out;
  t.projection_nets = p.tie_projections ? 1 : 3;
  t.generator = static_cast<std::size_t>(p.shared_len) * d + static_cast<std::size_t>(p.num_styles) * d +
                static_cast<std::size_t>(p.style_len) * d + (static_cast<std::size_t>(p.num_styles) * d * d + d) +
                t.projection_nets * t.projection_net;
  if (full_finetune) t.generator += t.backbone;
  t.discriminator = static_cast<std::size_t>(discriminator_tokens) * d + t.projection_net + (d * 3 + 3);
  return t;
}

std::string ParamTally::describe() const {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(3);
  os << "params: backbone=" << backbone << " generator=" << generator << " discriminator=" << discriminator
     << " projection_net=" << projection_net << " x" << projection_nets
     << " generator/(backbone+generator)=" << 100.0 * generator_ratio() << "%"
     << " trainable/(backbone+trainable)=" << 100.0 * trainable_ratio() << "%";
  return os.str();
}

template struct ProjectionNet<float>;
template struct ProjectionNet<double>;
template class PrefixSystem<float>;
template class PrefixSystem<double>;

}  // namespace pstyle
