#include "pstyle/config.hpp"

#include <charconv>
#include <cstdio>
#include <functional>
#include <map>
#include <sstream>
#include <stdexcept>

namespace pstyle {

namespace {

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

int parse_int(const std::string& key, const std::string& v) {
  int out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) {
    throw std::invalid_argument("config: '" + key + "' expects an integer, got '" + v + "'");
  }
  return out;
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) {
    throw std::invalid_argument("config: '" + key + "' expects an unsigned integer, got '" + v + "'");
  }
  return out;
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    double out = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw std::invalid_argument("config: '" + key + "' expects a number, got '" + v + "'");
  }
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw std::invalid_argument("config: '" + key + "' expects true/false, got '" + v + "'");
}

struct Field {
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&, const std::string&)> set;
};

template <typename M>
Field int_field(M member) {
  return {[member](const RunConfig& c) { return std::to_string(member(const_cast<RunConfig&>(c))); },
          [member](RunConfig& c, const std::string& k, const std::string& v) { member(c) = parse_int(k, v); }};
}
template <typename M>
Field double_field(M member) {
  return {[member](const RunConfig& c) { return fmt_double(member(const_cast<RunConfig&>(c))); },
          [member](RunConfig& c, const std::string& k, const std::string& v) { member(c) = parse_double(k, v); }};
}
template <typename M>
Field bool_field(M member) {
  return {[member](const RunConfig& c) { return std::string(member(const_cast<RunConfig&>(c)) ? "true" : "false"); },
          [member](RunConfig& c, const std::string& k, const std::string& v) { member(c) = parse_bool(k, v); }};
}

#define PSTYLE_REF(expr) [](RunConfig& c) -> auto& { return c.expr; }

// Canonical order is the order of this table.
const std::vector<std::pair<std::string, Field>>& fields() {
  static const std::vector<std::pair<std::string, Field>> table = {
      {"model.num_layers", int_field(PSTYLE_REF(model.num_layers))},
      {"model.num_heads", int_field(PSTYLE_REF(model.num_heads))},
      {"model.model_dim", int_field(PSTYLE_REF(model.model_dim))},
      {"model.ff_dim", int_field(PSTYLE_REF(model.ff_dim))},
      {"model.vocab_size", int_field(PSTYLE_REF(model.vocab_size))},
      {"model.max_positions", int_field(PSTYLE_REF(model.max_positions))},
      {"prefix.shared_len", int_field(PSTYLE_REF(prefix.shared_len))},
      {"prefix.style_len", int_field(PSTYLE_REF(prefix.style_len))},
      {"prefix.pre_len", int_field(PSTYLE_REF(prefix.pre_len))},
      {"prefix.projection_hidden", int_field(PSTYLE_REF(prefix.projection_hidden))},
      {"prefix.tie_projections", bool_field(PSTYLE_REF(prefix.tie_projections))},
      {"ablation.disable_shared_prefix", bool_field(PSTYLE_REF(ablation.disable_shared_prefix))},
      {"ablation.disable_style_prefix", bool_field(PSTYLE_REF(ablation.disable_style_prefix))},
      {"ablation.use_style_embedding_instead", bool_field(PSTYLE_REF(ablation.use_style_embedding_instead))},
      {"ablation.disable_content_prefix", bool_field(PSTYLE_REF(ablation.disable_content_prefix))},
      {"ablation.full_finetune", bool_field(PSTYLE_REF(ablation.full_finetune))},
      {"loss.lambda_self", double_field(PSTYLE_REF(weights.self))},
      {"loss.lambda_cycle", double_field(PSTYLE_REF(weights.cycle))},
      {"loss.lambda_style", double_field(PSTYLE_REF(weights.style))},
      {"loss.score_eos", bool_field(PSTYLE_REF(score_eos))},
      {"schedule.dis_steps", int_field(PSTYLE_REF(schedule.dis_steps))},
      {"schedule.gen_steps", int_field(PSTYLE_REF(schedule.gen_steps))},
      {"schedule.batch_size", int_field(PSTYLE_REF(schedule.batch_size))},
      {"schedule.total_steps", int_field(PSTYLE_REF(schedule.total_steps))},
      {"schedule.checkpoint_every", int_field(PSTYLE_REF(schedule.checkpoint_every))},
      {"optim.lr", double_field(PSTYLE_REF(optim.lr))},
      {"optim.beta1", double_field(PSTYLE_REF(optim.beta1))},
      {"optim.beta2", double_field(PSTYLE_REF(optim.beta2))},
      {"optim.eps", double_field(PSTYLE_REF(optim.eps))},
      {"optim.clip_norm", double_field(PSTYLE_REF(optim.clip_norm))},
      {"pretrain.steps", int_field(PSTYLE_REF(pretrain.steps))},
      {"pretrain.batch_size", int_field(PSTYLE_REF(pretrain.batch_size))},
      {"pretrain.lr", double_field(PSTYLE_REF(pretrain.lr))},
      {"pretrain.copy_fraction", double_field(PSTYLE_REF(pretrain.copy_fraction))},
      {"discriminator.tokens", int_field(PSTYLE_REF(discriminator_tokens))},
      {"generate.soft_temperature", double_field(PSTYLE_REF(soft_temperature))},
      {"generate.straight_through", bool_field(PSTYLE_REF(straight_through))},
      {"generate.gumbel_scale", double_field(PSTYLE_REF(gumbel_scale))},
      {"loss.style_real_only", bool_field(PSTYLE_REF(style_loss_real_only))},
      {"generate.max_len_extra", int_field(PSTYLE_REF(max_len_extra))},
      {"corpus.max_sentence_len", int_field(PSTYLE_REF(max_sentence_len))},
      {"corpus.min_freq", int_field(PSTYLE_REF(min_freq))},
      {"seed",
       {[](const RunConfig& c) { return std::to_string(c.seed); },
        [](RunConfig& c, const std::string& k, const std::string& v) { c.seed = parse_u64(k, v); }}},
  };
  return table;
}

#undef PSTYLE_REF

}  // namespace

void RunConfig::set(const std::string& key, const std::string& value) {
  for (const auto& [name, field] : fields()) {
    if (name == key) {
      field.set(*this, key, value);
      return;
    }
  }
  throw std::invalid_argument("config: unknown key '" + key + "'");
}

void RunConfig::apply(const KeyValueFile& kv) {
  for (const auto& [k, v] : kv.entries()) set(k, v);
}

RunConfig RunConfig::from_text(const std::string& text) {
  RunConfig c;
  c.apply(KeyValueFile::parse(text, "config"));
  return c;
}

std::vector<std::string> RunConfig::keys() const {
  std::vector<std::string> out;
  for (const auto& [name, field] : fields()) out.push_back(name);
  return out;
}

void RunConfig::validate() const {
  model.validate();
  prefix.validate();
  ablation.validate();
  if (weights.self < 0 || weights.cycle < 0 || weights.style < 0) {
    throw std::invalid_argument("config: loss weights must be non-negative");
  }
  if (schedule.dis_steps < 1 || schedule.gen_steps < 1) {
    throw std::invalid_argument("config: schedule step counts must be at least 1");
  }
  if (schedule.batch_size < 1 || schedule.total_steps < 0 || schedule.checkpoint_every < 1) {
    throw std::invalid_argument("config: batch size and checkpoint interval must be positive");
  }
  if (!(optim.lr > 0) || !(optim.eps > 0) || optim.beta1 < 0 || optim.beta1 >= 1 || optim.beta2 < 0 ||
      optim.beta2 >= 1) {
    throw std::invalid_argument("config: invalid optimizer constants");
  }
  if (discriminator_tokens < 1) throw std::invalid_argument("config: discriminator.tokens must be >= 1");
  if (!(soft_temperature > 0)) throw std::invalid_argument("config: generate.soft_temperature must be > 0");
  if (!(gumbel_scale >= 0)) throw std::invalid_argument("config: generate.gumbel_scale must be >= 0");
  if (max_len_extra < 0 || max_sentence_len < 1) throw std::invalid_argument("config: invalid length limits");
}

std::string RunConfig::canonical() const {
  std::ostringstream os;
  for (const auto& [name, field] : fields()) os << name << " = " << field.get(*this) << '\n';
  return os.str();
}

}  // namespace pstyle
