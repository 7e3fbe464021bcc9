#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "pstyle/corpus.hpp"
#include "pstyle/kv_file.hpp"

namespace pstyle {

using Words = std::vector<std::string>;

// ---------------------------------------------------------------- BLEU
//
// Clipped n-gram precisions for n = 1..max_n, geometric mean, brevity
// penalty against the closest reference length (ties go to the shorter).
// Smoothing: for n >= 2 an order with no matches uses 1 / (total_n + 1), so
// an order the hypothesis is too short to have counts 1. Scores are in [0, 100].

struct BleuStats {
  std::vector<long> matches, totals;  // per order
  long hyp_len = 0, ref_len = 0;
};

BleuStats bleu_stats(const Words& hyp, const std::vector<Words>& refs, int max_n = 4);
double bleu_from_stats(const BleuStats& s);
double bleu(const Words& hyp, const std::vector<Words>& refs, int max_n = 4);
/// Counts are pooled over the corpus before the precisions are taken.
double corpus_bleu(const std::vector<Words>& hyps, const std::vector<std::vector<Words>>& refs, int max_n = 4);

/// Σ_w min(count_hyp(w), max_ref count(w)).
long clipped_unigram_matches(const Words& hyp, const std::vector<Words>& refs);

// ------------------------------------------------------- n-gram language model
//
// Interpolated Kneser–Ney with one fixed discount. Sentences are padded as
// <s> <s> w1 .. wn </s>. The highest order uses raw counts, lower orders
// continuation counts, and the unigram level interpolates with the uniform
// distribution over the vocabulary (seen words, </s>, <unk>).

class NGramLM {
 public:
  static constexpr const char* kBos = "<s>";
  static constexpr const char* kEos = "</s>";
  static constexpr const char* kUnk = "<unk>";

  static NGramLM train(const std::vector<Words>& corpus, int order = 3, double discount = 0.75);
  /// Every word equally likely; for calibration checks.
  static NGramLM uniform(const std::vector<std::string>& words);

  /// P(w | context); the context holds the preceding (order-1) words.
  double prob(const Words& context, const std::string& word) const;
  /// Words that can be predicted (vocabulary, </s> and <unk>).
  const std::vector<std::string>& vocabulary() const { return vocab_; }
  /// Every (order-1)-word context seen in training.
  std::vector<Words> contexts() const;

  int order() const { return order_; }
  double discount() const { return discount_; }

 private:
  struct Level {
    std::unordered_map<std::string, double> count;        // n-gram -> (continuation) count
    std::unordered_map<std::string, double> context_sum;  // context -> Σ_w count(context w)
    std::unordered_map<std::string, double> followers;    // context -> #{w : count(context w) > 0}
  };
  std::string map(const std::string& w) const;
  double prob_level(int n, const Words& ctx, const std::string& w) const;

  int order_ = 3;
  double discount_ = 0.75;
  bool uniform_ = false;
  std::vector<std::string> vocab_;
  std::unordered_map<std::string, int> known_;
  std::vector<Level> levels_;  // index n-1 holds order-n statistics
  std::vector<Words> contexts_;
};

/// exp(−Σ log p / T) over every token and each sentence's </s>.
double perplexity(const NGramLM& lm, const std::vector<Words>& sentences);

// ----------------------------------------------------------- style classifier
//
// Hashed unigram and bigram embeddings averaged into one vector, then a
// linear two-way softmax; trained by plain SGD.

struct ClassifierConfig {
  int dim = 16;
  int buckets = 1 << 14;
  int epochs = 10;
  double lr = 0.5;
  std::uint64_t seed = 7;
};

class StyleClassifier {
 public:
  static StyleClassifier train(const std::vector<Words>& sentences, const std::vector<int>& labels,
                               const ClassifierConfig& config = {});
  std::vector<double> probabilities(const Words& sentence) const;
  int predict(const Words& sentence) const;
  double accuracy(const std::vector<Words>& sentences, const std::vector<int>& labels) const;

 private:
  std::vector<std::size_t> features(const Words& sentence) const;
  ClassifierConfig config_;
  std::vector<float> emb_;  // buckets × dim
  std::vector<float> w_;    // 2 × dim
  std::vector<float> b_;    // 2
};

/// Percentage of outputs classified as their target style.
double style_accuracy(const StyleClassifier& c, const std::vector<Words>& outputs, const std::vector<int>& targets);

// ------------------------------------------------------------------- report

struct MetricsReport {
  std::string config_hash;
  std::string checkpoint_id;
  double acc = 0;
  double self_bleu = 0;
  std::optional<double> ref_bleu;
  double ppl = 0;

  std::string to_text() const;
  static MetricsReport parse(const std::string& text);
  void save(const std::filesystem::path& path) const;
  static MetricsReport load(const std::filesystem::path& path);
};

/// Trained helpers shared by every evaluation over one corpus.
struct Evaluator {
  StyleClassifier classifier;
  NGramLM lm;

  static Evaluator train(const Dataset& data, const ClassifierConfig& config = {});

  /// `transfer(x, target)` is applied to every item; outputs compared with
  /// the inputs (self-BLEU) and with references when present.
  template <typename TransferFn>
  MetricsReport evaluate(const Split& split, const Vocab& vocab, TransferFn&& transfer) const {
    std::vector<Words> inputs, outputs;
    std::vector<int> targets;
    for (const auto& item : split.items) {
      const int target = 1 - item.style;
      inputs.push_back(split_words(vocab.detokenize(item.tokens)));
      outputs.push_back(split_words(vocab.detokenize(transfer(item.tokens, target))));
      targets.push_back(target);
    }
    std::vector<Words> refs;
    for (const auto& r : split.references) refs.push_back(split_words(vocab.detokenize(r)));
    return score(inputs, outputs, targets, refs);
  }

  MetricsReport score(const std::vector<Words>& inputs, const std::vector<Words>& outputs,
                      const std::vector<int>& targets, const std::vector<Words>& references) const;
};

std::vector<Words> to_words(const std::vector<Example>& items, const Vocab& vocab);

}  // namespace pstyle
