#include "pstyle/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>

#include "pstyle/kv_file.hpp"
#include "pstyle/log.hpp"

namespace pstyle {

namespace {

using NgramCounts = std::map<Words, long>;

NgramCounts count_ngrams(const Words& s, int n) {
  NgramCounts out;
  for (std::size_t i = 0; i + static_cast<std::size_t>(n) <= s.size(); ++i) {
    ++out[Words(s.begin() + static_cast<std::ptrdiff_t>(i), s.begin() + static_cast<std::ptrdiff_t>(i) + n)];
  }
  return out;
}

long closest_ref_length(long hyp_len, const std::vector<Words>& refs) {
  long best = -1;
  for (const auto& r : refs) {
    const long len = static_cast<long>(r.size());
    if (best < 0 || std::labs(len - hyp_len) < std::labs(best - hyp_len) ||
        (std::labs(len - hyp_len) == std::labs(best - hyp_len) && len < best)) {
      best = len;
    }
  }
  return best;
}

std::string fmt17(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

const char kSep = '\x1f';

std::string join_key(const Words& w, std::size_t from, std::size_t to) {
  std::string out;
  for (std::size_t i = from; i < to; ++i) {
    if (i > from) out += kSep;
    out += w[i];
  }
  return out;
}

}  // namespace

BleuStats bleu_stats(const Words& hyp, const std::vector<Words>& refs, int max_n) {
  if (refs.empty()) throw std::invalid_argument("bleu: at least one reference is required");
  BleuStats s;
  s.matches.assign(static_cast<std::size_t>(max_n), 0);
  s.totals.assign(static_cast<std::size_t>(max_n), 0);
  s.hyp_len = static_cast<long>(hyp.size());
  s.ref_len = closest_ref_length(s.hyp_len, refs);
  for (int n = 1; n <= max_n; ++n) {
    const auto h = count_ngrams(hyp, n);
    NgramCounts ref_max;
    for (const auto& r : refs) {
      for (const auto& [g, c] : count_ngrams(r, n)) ref_max[g] = std::max(ref_max[g], c);
    }
    for (const auto& [g, c] : h) {
      s.totals[static_cast<std::size_t>(n - 1)] += c;
      auto it = ref_max.find(g);
      if (it != ref_max.end()) s.matches[static_cast<std::size_t>(n - 1)] += std::min(c, it->second);
    }
  }
  return s;
}

double bleu_from_stats(const BleuStats& s) {
  if (s.hyp_len == 0) return 0.0;
  double log_sum = 0.0;
  const auto max_n = s.matches.size();
  for (std::size_t k = 0; k < max_n; ++k) {
    const double m = static_cast<double>(s.matches[k]);
    const double t = static_cast<double>(s.totals[k]);
    double p;
    if (k == 0) {
      if (m == 0) return 0.0;
      p = m / t;
    } else {
      p = m > 0 ? m / t : 1.0 / (t + 1.0);
    }
    log_sum += std::log(p);
  }
  const double bp = s.hyp_len > s.ref_len
                        ? 1.0
                        : std::exp(1.0 - static_cast<double>(s.ref_len) / static_cast<double>(s.hyp_len));
  return 100.0 * bp * std::exp(log_sum / static_cast<double>(max_n));
}

double bleu(const Words& hyp, const std::vector<Words>& refs, int max_n) {
  if (hyp.empty()) {
    log_warn("bleu: empty hypothesis scores 0");
    return 0.0;
  }
  const auto s = bleu_stats(hyp, refs, max_n);
  // Identical to a reference: every precision is 1 and there is no penalty.
  for (const auto& r : refs) {
    if (r == hyp) return 100.0;
  }
  return bleu_from_stats(s);
}

double corpus_bleu(const std::vector<Words>& hyps, const std::vector<std::vector<Words>>& refs, int max_n) {
  if (hyps.size() != refs.size()) throw std::invalid_argument("corpus_bleu: one reference set per hypothesis");
  BleuStats total;
  total.matches.assign(static_cast<std::size_t>(max_n), 0);
  total.totals.assign(static_cast<std::size_t>(max_n), 0);
  bool all_identical = !hyps.empty();
  for (std::size_t i = 0; i < hyps.size(); ++i) {
    const auto s = bleu_stats(hyps[i], refs[i], max_n);
    for (int k = 0; k < max_n; ++k) {
      total.matches[static_cast<std::size_t>(k)] += s.matches[static_cast<std::size_t>(k)];
      total.totals[static_cast<std::size_t>(k)] += s.totals[static_cast<std::size_t>(k)];
    }
    total.hyp_len += s.hyp_len;
    total.ref_len += s.ref_len;
    all_identical = all_identical && !hyps[i].empty() &&
                    std::find(refs[i].begin(), refs[i].end(), hyps[i]) != refs[i].end();
  }
  if (all_identical) return 100.0;
  return bleu_from_stats(total);
}

long clipped_unigram_matches(const Words& hyp, const std::vector<Words>& refs) {
  return bleu_stats(hyp, refs, 1).matches[0];
}

std::string NGramLM::map(const std::string& w) const { return known_.count(w) ? w : std::string(kUnk); }

NGramLM NGramLM::train(const std::vector<Words>& corpus, int order, double discount) {
  if (corpus.empty()) throw std::invalid_argument("ngram lm: empty training corpus");
  if (order < 1) throw std::invalid_argument("ngram lm: order must be >= 1");
  if (!(discount > 0.0 && discount < 1.0)) throw std::invalid_argument("ngram lm: discount must lie in (0, 1)");
  NGramLM lm;
  lm.order_ = order;
  lm.discount_ = discount;
  std::set<std::string> words;
  for (const auto& s : corpus) words.insert(s.begin(), s.end());
  words.erase(kBos);
  words.insert(kEos);
  words.insert(kUnk);
  lm.vocab_.assign(words.begin(), words.end());
  for (std::size_t i = 0; i < lm.vocab_.size(); ++i) lm.known_[lm.vocab_[i]] = static_cast<int>(i);

  // Raw counts of every order-gram over padded sentences.
  std::map<Words, long> top;
  for (const auto& s : corpus) {
    Words padded(static_cast<std::size_t>(order - 1), kBos);
    for (const auto& w : s) padded.push_back(lm.map(w));
    padded.push_back(kEos);
    for (std::size_t i = 0; i + static_cast<std::size_t>(order) <= padded.size(); ++i) {
      ++top[Words(padded.begin() + static_cast<std::ptrdiff_t>(i),
                  padded.begin() + static_cast<std::ptrdiff_t>(i) + order)];
    }
  }
  lm.levels_.resize(static_cast<std::size_t>(order));
  // Level `order` keeps raw counts; level n < order counts distinct left
  // extensions among the order-(n+1) n-gram types.
  std::map<Words, double> current(top.begin(), top.end());
  for (int n = order; n >= 1; --n) {
    auto& level = lm.levels_[static_cast<std::size_t>(n - 1)];
    std::map<Words, double> lower;
    for (const auto& [g, c] : current) {
      const auto key = join_key(g, 0, g.size());
      const auto ctx = join_key(g, 0, g.size() - 1);
      level.count[key] += c;
      level.context_sum[ctx] += c;
      level.followers[ctx] += 1.0;
      if (n == order && n > 1) {
        Words ctx_words(g.begin(), g.end() - 1);
        if (std::find(lm.contexts_.begin(), lm.contexts_.end(), ctx_words) == lm.contexts_.end()) {
          lm.contexts_.push_back(ctx_words);
        }
      }
      if (n > 1) lower[Words(g.begin() + 1, g.end())] += 1.0;
    }
    current = std::move(lower);
  }
  std::sort(lm.contexts_.begin(), lm.contexts_.end());
  return lm;
}

NGramLM NGramLM::uniform(const std::vector<std::string>& words) {
  NGramLM lm;
  lm.uniform_ = true;
  std::set<std::string> all(words.begin(), words.end());
  all.insert(kEos);
  all.insert(kUnk);
  lm.vocab_.assign(all.begin(), all.end());
  for (std::size_t i = 0; i < lm.vocab_.size(); ++i) lm.known_[lm.vocab_[i]] = static_cast<int>(i);
  return lm;
}

std::vector<Words> NGramLM::contexts() const { return contexts_; }

double NGramLM::prob_level(int n, const Words& ctx, const std::string& w) const {
  const double uniform = 1.0 / static_cast<double>(vocab_.size());
  if (n == 0) return uniform;
  const auto& level = levels_[static_cast<std::size_t>(n - 1)];
  // The last n-1 context words.
  Words gram;
  for (std::size_t i = ctx.size() - static_cast<std::size_t>(n - 1); i < ctx.size(); ++i) gram.push_back(ctx[i]);
  const auto ctx_key = join_key(gram, 0, gram.size());
  gram.push_back(w);
  const auto key = join_key(gram, 0, gram.size());
  const auto lower = prob_level(n - 1, ctx, w);
  auto sum_it = level.context_sum.find(ctx_key);
  if (sum_it == level.context_sum.end() || sum_it->second <= 0.0) return lower;
  const double total = sum_it->second;
  auto c_it = level.count.find(key);
  const double c = c_it == level.count.end() ? 0.0 : c_it->second;
  const double followers = level.followers.at(ctx_key);
  return (std::max(c - discount_, 0.0) + discount_ * followers * lower) / total;
}

double NGramLM::prob(const Words& context, const std::string& word) const {
  if (uniform_) return 1.0 / static_cast<double>(vocab_.size());
  Words ctx;
  for (const auto& w : context) ctx.push_back(w == kBos ? w : map(w));
  while (static_cast<int>(ctx.size()) < order_ - 1) ctx.insert(ctx.begin(), kBos);
  if (static_cast<int>(ctx.size()) > order_ - 1) ctx.erase(ctx.begin(), ctx.end() - (order_ - 1));
  return prob_level(order_, ctx, map(word));
}

double perplexity(const NGramLM& lm, const std::vector<Words>& sentences) {
  double log_sum = 0.0;
  long count = 0;
  const int h = lm.order() - 1;
  for (const auto& s : sentences) {
    Words padded(static_cast<std::size_t>(h), NGramLM::kBos);
    padded.insert(padded.end(), s.begin(), s.end());
    padded.push_back(NGramLM::kEos);
    for (std::size_t i = static_cast<std::size_t>(h); i < padded.size(); ++i) {
      const Words ctx(padded.begin() + static_cast<std::ptrdiff_t>(i) - h, padded.begin() + static_cast<std::ptrdiff_t>(i));
      log_sum += std::log(lm.prob(ctx, padded[i]));
      ++count;
    }
  }
  if (count == 0) throw std::invalid_argument("perplexity: nothing to score");
  return std::exp(-log_sum / static_cast<double>(count));
}

std::vector<std::size_t> StyleClassifier::features(const Words& s) const {
  std::vector<std::size_t> f;
  const auto bucket = [&](const std::string& key) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : key) {
      h ^= c;
      h *= 0x100000001b3ULL;
    }
    return static_cast<std::size_t>(h % static_cast<std::uint64_t>(config_.buckets));
  };
  for (std::size_t i = 0; i < s.size(); ++i) {
    f.push_back(bucket(s[i]));
    if (i + 1 < s.size()) f.push_back(bucket(s[i] + ' ' + s[i + 1]));
  }
  return f;
}

StyleClassifier StyleClassifier::train(const std::vector<Words>& sentences, const std::vector<int>& labels,
                                       const ClassifierConfig& config) {
  if (sentences.size() != labels.size() || sentences.empty()) {
    throw std::invalid_argument("style classifier: need one label per sentence and a non-empty set");
  }
  StyleClassifier c;
  c.config_ = config;
  const auto d = static_cast<std::size_t>(config.dim);
  std::mt19937_64 rng(config.seed);
  c.emb_.resize(static_cast<std::size_t>(config.buckets) * d);
  for (auto& v : c.emb_) v = static_cast<float>((uniform_unit(rng) * 2.0 - 1.0) / static_cast<double>(d));
  c.w_.assign(2 * d, 0.f);
  c.b_.assign(2, 0.f);

  std::vector<std::vector<std::size_t>> feats;
  for (const auto& s : sentences) feats.push_back(c.features(s));
  std::vector<std::size_t> order(sentences.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::vector<double> h(d), dh(d);
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    fisher_yates(order, rng);
    for (std::size_t idx : order) {
      const auto& f = feats[idx];
      if (f.empty()) continue;
      std::fill(h.begin(), h.end(), 0.0);
      for (auto b : f) {
        for (std::size_t k = 0; k < d; ++k) h[k] += c.emb_[b * d + k];
      }
      for (auto& v : h) v /= static_cast<double>(f.size());
      double logits[2];
      for (int y = 0; y < 2; ++y) {
        logits[y] = c.b_[static_cast<std::size_t>(y)];
        for (std::size_t k = 0; k < d; ++k) logits[y] += c.w_[static_cast<std::size_t>(y) * d + k] * h[k];
      }
      const double mx = std::max(logits[0], logits[1]);
      const double z = std::exp(logits[0] - mx) + std::exp(logits[1] - mx);
      double g[2];
      for (int y = 0; y < 2; ++y) g[y] = std::exp(logits[y] - mx) / z - (y == labels[idx] ? 1.0 : 0.0);
      std::fill(dh.begin(), dh.end(), 0.0);
      for (int y = 0; y < 2; ++y) {
        for (std::size_t k = 0; k < d; ++k) {
          auto& w = c.w_[static_cast<std::size_t>(y) * d + k];
          dh[k] += w * g[y];
          w -= static_cast<float>(config.lr * g[y] * h[k]);
        }
        c.b_[static_cast<std::size_t>(y)] -= static_cast<float>(config.lr * g[y]);
      }
      const double share = config.lr / static_cast<double>(f.size());
      for (auto b : f) {
        for (std::size_t k = 0; k < d; ++k) c.emb_[b * d + k] -= static_cast<float>(share * dh[k]);
      }
    }
  }
  return c;
}

std::vector<double> StyleClassifier::probabilities(const Words& s) const {
  const auto d = static_cast<std::size_t>(config_.dim);
  const auto f = features(s);
  std::vector<double> h(d, 0.0);
  for (auto b : f) {
    for (std::size_t k = 0; k < d; ++k) h[k] += emb_[b * d + k];
  }
  if (!f.empty()) {
    for (auto& v : h) v /= static_cast<double>(f.size());
  }
  double logits[2];
  for (int y = 0; y < 2; ++y) {
    logits[y] = b_[static_cast<std::size_t>(y)];
    for (std::size_t k = 0; k < d; ++k) logits[y] += w_[static_cast<std::size_t>(y) * d + k] * h[k];
  }
  const double mx = std::max(logits[0], logits[1]);
  const double e0 = std::exp(logits[0] - mx), e1 = std::exp(logits[1] - mx);
  return {e0 / (e0 + e1), e1 / (e0 + e1)};
}

int StyleClassifier::predict(const Words& s) const {
  const auto p = probabilities(s);
  return p[1] > p[0] ? 1 : 0;
}

double StyleClassifier::accuracy(const std::vector<Words>& sentences, const std::vector<int>& labels) const {
  return style_accuracy(*this, sentences, labels);
}

double style_accuracy(const StyleClassifier& c, const std::vector<Words>& outputs, const std::vector<int>& targets) {
  if (outputs.size() != targets.size() || outputs.empty()) {
    throw std::invalid_argument("style_accuracy: need one target per output and a non-empty set");
  }
  long hits = 0;
  for (std::size_t i = 0; i < outputs.size(); ++i) hits += c.predict(outputs[i]) == targets[i];
  return 100.0 * static_cast<double>(hits) / static_cast<double>(outputs.size());
}

std::string MetricsReport::to_text() const {
  std::ostringstream os;
  os << "# metrics report; fields: config_hash, checkpoint, acc, self_bleu, [ref_bleu], ppl\n"
     << "# bleu: corpus level, n-grams up to 4, clipped counts, brevity penalty,"
     << " add-one smoothing on zero counts for n >= 2\n"
     << "# ppl: 3-gram interpolated Kneser-Ney, discount 0.75, trained on the training split\n"
     << "config_hash = " << config_hash << '\n'
     << "checkpoint = " << checkpoint_id << '\n'
     << "acc = " << fmt17(acc) << '\n'
     << "self_bleu = " << fmt17(self_bleu) << '\n';
  if (ref_bleu) os << "ref_bleu = " << fmt17(*ref_bleu) << '\n';
  os << "ppl = " << fmt17(ppl) << '\n';
  return os.str();
}

MetricsReport MetricsReport::parse(const std::string& text) {
  const auto kv = KeyValueFile::parse(text, "report");
  MetricsReport r;
  r.config_hash = kv.get("config_hash");
  r.checkpoint_id = kv.get("checkpoint");
  r.acc = std::strtod(kv.get("acc").c_str(), nullptr);
  r.self_bleu = std::strtod(kv.get("self_bleu").c_str(), nullptr);
  if (kv.has("ref_bleu")) r.ref_bleu = std::strtod(kv.get("ref_bleu").c_str(), nullptr);
  r.ppl = std::strtod(kv.get("ppl").c_str(), nullptr);
  return r;
}

void MetricsReport::save(const std::filesystem::path& path) const { write_file_atomic(path, to_text()); }

MetricsReport MetricsReport::load(const std::filesystem::path& path) { return parse(read_file(path)); }

std::vector<Words> to_words(const std::vector<Example>& items, const Vocab& vocab) {
  std::vector<Words> out;
  for (const auto& e : items) out.push_back(split_words(vocab.detokenize(e.tokens)));
  return out;
}

Evaluator Evaluator::train(const Dataset& data, const ClassifierConfig& config) {
  const auto words = to_words(data.train.items, data.vocab);
  std::vector<int> labels;
  for (const auto& e : data.train.items) labels.push_back(e.style);
  return Evaluator{StyleClassifier::train(words, labels, config), NGramLM::train(words, 3, 0.75)};
}

MetricsReport Evaluator::score(const std::vector<Words>& inputs, const std::vector<Words>& outputs,
                               const std::vector<int>& targets, const std::vector<Words>& references) const {
  MetricsReport r;
  r.acc = style_accuracy(classifier, outputs, targets);
  std::vector<std::vector<Words>> self_refs;
  for (const auto& x : inputs) self_refs.push_back({x});
  r.self_bleu = corpus_bleu(outputs, self_refs);
  if (!references.empty()) {
    std::vector<std::vector<Words>> refs;
    for (const auto& x : references) refs.push_back({x});
    r.ref_bleu = corpus_bleu(outputs, refs);
  }
  r.ppl = perplexity(lm, outputs);
  return r;
}

}  // namespace pstyle
