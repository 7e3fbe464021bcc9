#include "pstyle/backbone.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <sstream>
#include <stdexcept>

#include "pstyle/ops.hpp"

namespace pstyle {

void ModelConfig::validate() const {
  if (num_layers <= 0 || num_heads <= 0 || model_dim <= 0 || ff_dim <= 0 || vocab_size <= 0 || max_positions <= 0) {
    throw std::invalid_argument("model config: all dimensions must be positive\n" + canonical());
  }
  if (model_dim % num_heads != 0) {
    throw std::invalid_argument("model config: model_dim " + std::to_string(model_dim) +
                                " is not divisible by num_heads " + std::to_string(num_heads));
  }
}

std::string ModelConfig::canonical() const {
  std::ostringstream os;
  os << "num_layers = " << num_layers << '\n'
     << "num_heads = " << num_heads << '\n'
     << "model_dim = " << model_dim << '\n'
     << "ff_dim = " << ff_dim << '\n'
     << "vocab_size = " << vocab_size << '\n'
     << "max_positions = " << max_positions << '\n';
  return os.str();
}

const char* to_string(PrefixSource s) {
  switch (s) {
    case PrefixSource::kShared: return "shared";
    case PrefixSource::kStyle: return "style";
    case PrefixSource::kPre: return "pre";
    case PrefixSource::kContent: return "content";
    case PrefixSource::kDiscriminator: return "discriminator";
    case PrefixSource::kAssembled: return "assembled";
  }
  return "?";
}

template <typename T>
PrefixBlock<T> prefix_from_projection(const Tensor<T>& projected, int num_layers, int model_dim, PrefixSource source) {
  if (projected.cols() != num_layers * 2 * model_dim) {
    throw ShapeError("prefix_from_projection: expected " + std::to_string(num_layers * 2 * model_dim) +
                     " columns, got " + shape_str(projected.shape()));
  }
  PrefixBlock<T> block;
  block.source = source;
  for (int l = 0; l < num_layers; ++l) {
    block.keys.push_back(slice_cols(projected, l * 2 * model_dim, model_dim));
    block.values.push_back(slice_cols(projected, l * 2 * model_dim + model_dim, model_dim));
  }
  return block;
}

template <typename T>
PrefixBlock<T> concat_prefixes(std::span<const PrefixBlock<T>> blocks) {
  PrefixBlock<T> out;
  out.source = PrefixSource::kAssembled;
  int layers = -1;
  for (const auto& b : blocks) {
    if (b.length() == 0) continue;
    if (layers < 0) {
      layers = b.num_layers();
    } else if (b.num_layers() != layers) {
      throw std::invalid_argument(std::string("assemble: prefix '") + to_string(b.source) + "' has " +
                                  std::to_string(b.num_layers()) + " layers, expected " + std::to_string(layers));
    }
  }
  if (layers < 0) return out;
  for (int l = 0; l < layers; ++l) {
    std::vector<Tensor<T>> ks, vs;
    for (const auto& b : blocks) {
      if (b.length() == 0) continue;
      ks.push_back(b.keys[l]);
      vs.push_back(b.values[l]);
    }
    out.keys.push_back(ks.size() == 1 ? ks[0] : concat_rows(ks));
    out.values.push_back(vs.size() == 1 ? vs[0] : concat_rows(vs));
  }
  return out;
}

template <typename T>
Backbone<T>::Backbone(const ModelConfig& config, const ParamStore<T>& store, std::string ns)
    : config_(config), ns_(std::move(ns)) {
  config_.validate();
  auto get = [&](const std::string& n) { return store.get(ns_ + n); };
  tok_emb_ = get("tok_emb");
  pos_emb_ = get("pos_emb");
  lnf_g_ = get("ln_f.g");
  lnf_b_ = get("ln_f.b");
  for (int l = 0; l < config_.num_layers; ++l) {
    const std::string p = "h" + std::to_string(l) + ".";
    layers_.push_back(Layer{get(p + "ln1.g"), get(p + "ln1.b"), get(p + "attn.w_qkv"), get(p + "attn.b_qkv"),
                            get(p + "attn.w_o"), get(p + "attn.b_o"), get(p + "ln2.g"), get(p + "ln2.b"),
                            get(p + "mlp.w_fc"), get(p + "mlp.b_fc"), get(p + "mlp.w_proj"), get(p + "mlp.b_proj")});
  }
  if (tok_emb_.rows() != config_.vocab_size || tok_emb_.cols() != config_.model_dim) {
    throw ShapeError("backbone: token table " + shape_str(tok_emb_.shape()) + " does not match config\n" +
                     config_.canonical());
  }
}

template <typename T>
void Backbone<T>::init_params(const ModelConfig& c, ParamStore<T>& store, std::mt19937_64& rng, const std::string& ns) {
  c.validate();
  const int d = c.model_dim;
  const double std_w = 0.02;
  const double std_resid = 0.02 / std::sqrt(2.0 * c.num_layers);
  store.add_normal(ns + "tok_emb", {c.vocab_size, d}, std_w, rng);
  store.add_normal(ns + "pos_emb", {c.max_positions, d}, 0.01, rng);
  for (int l = 0; l < c.num_layers; ++l) {
    const std::string p = ns + "h" + std::to_string(l) + ".";
    store.add_constant(p + "ln1.g", {d}, T(1));
    store.add_constant(p + "ln1.b", {d}, T(0));
    store.add_normal(p + "attn.w_qkv", {d, 3 * d}, std_w, rng);
    store.add_constant(p + "attn.b_qkv", {3 * d}, T(0));
    store.add_normal(p + "attn.w_o", {d, d}, std_resid, rng);
    store.add_constant(p + "attn.b_o", {d}, T(0));
    store.add_constant(p + "ln2.g", {d}, T(1));
    store.add_constant(p + "ln2.b", {d}, T(0));
    store.add_normal(p + "mlp.w_fc", {d, c.ff_dim}, std_w, rng);
    store.add_constant(p + "mlp.b_fc", {c.ff_dim}, T(0));
    store.add_normal(p + "mlp.w_proj", {c.ff_dim, d}, std_resid, rng);
    store.add_constant(p + "mlp.b_proj", {d}, T(0));
  }
  store.add_constant(ns + "ln_f.g", {d}, T(1));
  store.add_constant(ns + "ln_f.b", {d}, T(0));
}

template <typename T>
Tensor<T> Backbone<T>::embed_ids(std::span<const int> ids) const {
  return embedding(tok_emb_, ids);
}

template <typename T>
Tensor<T> Backbone<T>::embed_soft(const Tensor<T>& probs) const {
  if (probs.cols() != config_.vocab_size) {
    throw ShapeError("embed_soft", probs.shape(), tok_emb_.shape());
  }
  return matmul(probs, tok_emb_);
}

template <typename T>
typename Backbone<T>::Cache Backbone<T>::start(const PrefixBlock<T>* prefix, int position_offset) const {
  if (prefix != nullptr && prefix->length() > 0 && prefix->num_layers() != config_.num_layers) {
    throw std::invalid_argument("backbone: prefix has " + std::to_string(prefix->num_layers()) + " layers, model has " +
                                std::to_string(config_.num_layers));
  }
  Cache cache;
  cache.prefix = (prefix != nullptr && prefix->length() > 0) ? prefix : nullptr;
  cache.k_blocks.resize(static_cast<std::size_t>(config_.num_layers));
  cache.v_blocks.resize(static_cast<std::size_t>(config_.num_layers));
  cache.position_offset = position_offset;
  return cache;
}

template <typename T>
HiddenStates<T> Backbone<T>::extend(Cache& cache, const Tensor<T>& embeddings, bool want_logits) const {
  const int m = embeddings.rows();
  const int d = config_.model_dim;
  const int heads = config_.num_heads;
  const int dh = config_.head_dim();
  const int plen = cache.prefix ? cache.prefix->length() : 0;
  if (embeddings.cols() != d) throw ShapeError("backbone.forward", embeddings.shape(), Shape{m, d});
  const int first_pos = cache.position_offset + cache.length;
  if (plen + first_pos + m > config_.max_positions) {
    throw std::length_error("backbone: " + std::to_string(plen) + " prefix positions + " +
                            std::to_string(first_pos + m) + " sentence positions exceed max_positions " +
                            std::to_string(config_.max_positions));
  }

  HiddenStates<T> out;
  Tensor<T> x = add(embeddings, slice_rows(pos_emb_, first_pos, m));
  const T inv_sqrt = T(1) / std::sqrt(T(dh));
  for (int l = 0; l < config_.num_layers; ++l) {
    const Layer& L = layers_[static_cast<std::size_t>(l)];
    auto h = layer_norm(x, L.ln1_g, L.ln1_b);
    auto qkv = linear(h, L.w_qkv, L.b_qkv);
    auto q = slice_cols(qkv, 0, d);
    auto k = slice_cols(qkv, d, d);
    auto v = slice_cols(qkv, 2 * d, d);
    out.keys.push_back(k);
    out.values.push_back(v);

    auto& kb = cache.k_blocks[static_cast<std::size_t>(l)];
    auto& vb = cache.v_blocks[static_cast<std::size_t>(l)];
    kb.push_back(k);
    vb.push_back(v);
    std::vector<Tensor<T>> kparts, vparts;
    if (cache.prefix) {
      kparts.push_back(cache.prefix->keys[static_cast<std::size_t>(l)]);
      vparts.push_back(cache.prefix->values[static_cast<std::size_t>(l)]);
    }
    kparts.insert(kparts.end(), kb.begin(), kb.end());
    vparts.insert(vparts.end(), vb.begin(), vb.end());
    auto keys = kparts.size() == 1 ? kparts[0] : concat_rows(kparts);
    auto vals = vparts.size() == 1 ? vparts[0] : concat_rows(vparts);

    std::vector<Tensor<T>> head_out;
    head_out.reserve(static_cast<std::size_t>(heads));
    for (int hd = 0; hd < heads; ++hd) {
      auto qh = heads == 1 ? q : slice_cols(q, hd * dh, dh);
      auto kh = heads == 1 ? keys : slice_cols(keys, hd * dh, dh);
      auto vh = heads == 1 ? vals : slice_cols(vals, hd * dh, dh);
      auto scores = causal_mask(scale(matmul_nt(qh, kh), inv_sqrt), plen, cache.length);
      head_out.push_back(matmul(softmax(scores), vh));
    }
    auto attn = heads == 1 ? head_out[0] : concat_cols(head_out);
    x = add(x, linear(attn, L.w_o, L.b_o));
    auto h2 = layer_norm(x, L.ln2_g, L.ln2_b);
    x = add(x, linear(gelu(linear(h2, L.w_fc, L.b_fc)), L.w_proj, L.b_proj));
    out.layers.push_back(x);
  }
  cache.length += m;
  out.final_hidden = layer_norm(x, lnf_g_, lnf_b_);
  if (want_logits) out.logits = logits(out.final_hidden);
  return out;
}

template <typename T>
HiddenStates<T> Backbone<T>::forward(const Tensor<T>& embeddings, const PrefixBlock<T>* prefix, bool want_logits,
                                     int position_offset) const {
  auto cache = start(prefix, position_offset);
  return extend(cache, embeddings, want_logits);
}

template <typename T>
HiddenStates<T> Backbone<T>::forward_ids(std::span<const int> ids, const PrefixBlock<T>* prefix,
                                         bool want_logits) const {
  return forward(embed_ids(ids), prefix, want_logits);
}

template <typename T>
Tensor<T> Backbone<T>::logits(const Tensor<T>& final_hidden) const {
  return matmul_nt(final_hidden, tok_emb_);
}

template <typename T>
Tensor<T> Backbone<T>::sequence_nll(const PrefixBlock<T>* prefix, const Tensor<T>& context_embeddings,
                                   std::span<const int> target) const {
  if (target.empty()) throw std::invalid_argument("sequence_nll: empty target");
  for (int id : target) {
    if (id < 0 || id >= config_.vocab_size) {
      throw std::out_of_range("sequence_nll: unknown token id " + std::to_string(id));
    }
  }
  const int n = static_cast<int>(target.size());
  std::vector<int> fed;
  fed.reserve(target.size());
  fed.push_back(tokens::kSep);
  fed.insert(fed.end(), target.begin(), target.end() - 1);
  std::vector<Tensor<T>> parts;
  if (context_embeddings.defined() && context_embeddings.rows() > 0) parts.push_back(context_embeddings);
  parts.push_back(embed_ids(fed));
  auto inputs = parts.size() == 1 ? parts[0] : concat_rows(parts);
  const int ctx = inputs.rows() - n;
  auto hs = forward(inputs, prefix, false);
  auto scored = slice_rows(hs.final_hidden, ctx, n);
  return cross_entropy(logits(scored), target);
}

template <typename T>
double Backbone<T>::sequence_log_prob(std::span<const int> target, const PrefixBlock<T>* prefix,
                                      std::span<const int> context) const {
  NoGradScope<T> no_grad;
  Tensor<T> ctx = context.empty() ? Tensor<T>() : embed_ids(context);
  return -static_cast<double>(sequence_nll(prefix, ctx, target).item());
}

template <typename T>
Generation<T> Backbone<T>::generate(const PrefixBlock<T>* prefix, const Tensor<T>& context_embeddings,
                                    const GenerateOptions& options) const {
  if (options.max_len < 0) throw std::invalid_argument("generate: negative max_len");
  if (options.mode != DecodeMode::kGreedy && !(options.temperature > 0.0)) {
    throw std::invalid_argument("generate: temperature must be positive");
  }
  if (!(options.gumbel_scale >= 0.0)) throw std::invalid_argument("generate: negative gumbel_scale");
  Generation<T> gen;
  if (options.max_len == 0) return gen;

  auto cache = start(prefix, 0);
  const int sep_id = tokens::kSep;
  auto sep = embed_ids(std::span<const int>(&sep_id, 1));
  Tensor<T> first = (context_embeddings.defined() && context_embeddings.rows() > 0)
                        ? concat_rows(std::vector<Tensor<T>>{context_embeddings, sep})
                        : sep;
  auto hs = extend(cache, first, false);
  Tensor<T> last = slice_rows(hs.final_hidden, hs.final_hidden.rows() - 1, 1);

  std::mt19937_64 rng(options.seed);
  std::vector<Tensor<T>> soft_rows;
  const T inv_temp = T(1.0 / options.temperature);
  for (int step = 0; step < options.max_len; ++step) {
    auto lg = logits(last);
    if (options.mode == DecodeMode::kSoft && options.gumbel_scale > 0.0) {
      auto noise = Tensor<T>::zeros(lg.shape());
      std::uniform_real_distribution<double> uniform(std::numeric_limits<double>::min(), 1.0);
      for (auto& v : noise.data_mut()) v = T(-options.gumbel_scale * std::log(-std::log(uniform(rng))));
      lg = add(lg, noise);
    }
    const auto ld = lg.data();
    const bool eos_allowed = step >= options.min_len;
    int argmax = -1;
    for (int j = 0; j < static_cast<int>(ld.size()); ++j) {
      if (j == tokens::kEos && !eos_allowed) continue;
      if (argmax < 0 || ld[static_cast<std::size_t>(j)] > ld[static_cast<std::size_t>(argmax)]) argmax = j;
    }
    Tensor<T> next_embedding;
    if (options.mode == DecodeMode::kSoft) {
      if (argmax == tokens::kEos) break;
      auto probs = softmax(scale(lg, inv_temp));
      if (options.straight_through) probs = straight_through(probs, std::span<const int>(&argmax, 1));
      soft_rows.push_back(probs);
      gen.ids.push_back(argmax);
      next_embedding = embed_soft(probs);
    } else {
      int next = argmax;
      if (options.mode == DecodeMode::kSample) {
        std::vector<double> w(ld.size());
        const double mx = static_cast<double>(ld[static_cast<std::size_t>(argmax)]);
        for (std::size_t j = 0; j < ld.size(); ++j) {
          w[j] = std::exp((static_cast<double>(ld[j]) - mx) / options.temperature);
        }
        if (!eos_allowed && tokens::kEos < static_cast<int>(w.size())) w[tokens::kEos] = 0.0;
        next = std::discrete_distribution<int>(w.begin(), w.end())(rng);
      }
      if (next == tokens::kEos) break;
      gen.ids.push_back(next);
      next_embedding = embed_ids(std::span<const int>(&next, 1));
    }
    if (step + 1 == options.max_len) break;
    auto step_hs = extend(cache, next_embedding, false);
    last = step_hs.final_hidden;
  }
  if (!soft_rows.empty()) gen.soft = concat_rows(soft_rows);
  return gen;
}

template class Backbone<float>;
template class Backbone<double>;
template PrefixBlock<float> prefix_from_projection(const Tensor<float>&, int, int, PrefixSource);
template PrefixBlock<double> prefix_from_projection(const Tensor<double>&, int, int, PrefixSource);
template PrefixBlock<float> concat_prefixes(std::span<const PrefixBlock<float>>);
template PrefixBlock<double> concat_prefixes(std::span<const PrefixBlock<double>>);

}  // namespace pstyle
