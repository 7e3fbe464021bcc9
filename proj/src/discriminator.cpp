#include "pstyle/discriminator.hpp"

#include <array>
#include <stdexcept>

#include "pstyle/ops.hpp"

namespace pstyle {

template <typename T>
void Discriminator<T>::init_params(const ModelConfig& model, int num_tokens, int projection_hidden,
                                   ParamStore<T>& store, std::mt19937_64& rng) {
  if (num_tokens < 1) throw std::invalid_argument("discriminator needs at least one prefix token");
  const std::string ns = kNamespace;
  const int d = model.model_dim;
  store.add_normal(ns + "tokens", {num_tokens, d}, 1.0, rng);
  ProjectionNet<T>::init_params(store, ns + "proj.", d, projection_hidden, model.num_layers * 2 * d, rng);
  store.add_normal(ns + "head.w", {d, kNumClasses}, 0.02, rng);
  store.add_constant(ns + "head.b", {kNumClasses}, T(0));
}

template <typename T>
Discriminator<T>::Discriminator(const ModelConfig& model, const ParamStore<T>& store, const Backbone<T>* backbone)
    : model_(model), backbone_(backbone) {
  if (backbone == nullptr) throw std::invalid_argument("discriminator needs a backbone");
  const std::string ns = kNamespace;
  tokens_ = store.get(ns + "tokens");
  proj_ = ProjectionNet<T>::bind(store, ns + "proj.");
  head_w_ = store.get(ns + "head.w");
  head_b_ = store.get(ns + "head.b");
}

template <typename T>
PrefixBlock<T> Discriminator<T>::prefix() const {
  return prefix_from_projection(proj_(tokens_), model_.num_layers, model_.model_dim, PrefixSource::kDiscriminator);
}

template <typename T>
Tensor<T> Discriminator<T>::logits(const Tensor<T>& x_embeddings, const PrefixBlock<T>& prefix) const {
  if (x_embeddings.rows() < 1 || x_embeddings.numel() == 0) {
    throw std::invalid_argument("discriminator: empty input");
  }
  auto hs = backbone_->forward(x_embeddings, &prefix, false);
  return linear(mean_rows(hs.final_hidden), head_w_, head_b_);
}

template <typename T>
Tensor<T> Discriminator<T>::classify(const Tensor<T>& x_embeddings) const {
  return softmax(logits(x_embeddings, prefix()));
}

template <typename T>
Tensor<T> Discriminator<T>::classify_ids(std::span<const int> ids) const {
  if (ids.empty()) throw std::invalid_argument("discriminator: empty input");
  return classify(backbone_->embed_ids(ids));
}

template <typename T>
Tensor<T> Discriminator<T>::classify_soft(const Tensor<T>& distributions) const {
  return classify(backbone_->embed_soft(distributions));
}

template <typename T>
Tensor<T> Discriminator<T>::nll(const Tensor<T>& x_embeddings, int target, const PrefixBlock<T>& prefix) const {
  if (target < 0 || target >= kNumClasses) throw std::out_of_range("discriminator target " + std::to_string(target));
  const std::array<int, 1> t{target};
  return cross_entropy(logits(x_embeddings, prefix), std::span<const int>(t));
}

template <typename T>
Tensor<T> Discriminator<T>::style_nll(const Tensor<T>& x_embeddings, int style, const PrefixBlock<T>& prefix) const {
  if (style < 0 || style >= kFakeClass) throw std::out_of_range("discriminator style " + std::to_string(style));
  const std::array<int, 1> t{style};
  return cross_entropy(slice_cols(logits(x_embeddings, prefix), 0, kFakeClass), std::span<const int>(t));
}

template class Discriminator<float>;
template class Discriminator<double>;

}  // namespace pstyle
