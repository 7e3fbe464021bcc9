#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "pstyle/corpus.hpp"
#include "pstyle/eval.hpp"
#include "pstyle/log.hpp"

using namespace pstyle;
namespace fs = std::filesystem;

namespace {

Words w(const std::string& s) { return split_words(s); }

// Random sentences over a small alphabet so that n-grams repeat often.
Words random_sentence(std::mt19937_64& rng, int max_len, int alphabet) {
  const int len = 1 + static_cast<int>(uniform_index(rng, static_cast<std::size_t>(max_len)));
  Words s;
  for (int i = 0; i < len; ++i) s.push_back(std::string(1, static_cast<char>('a' + uniform_index(rng, alphabet))));
  return s;
}

std::vector<Words> small_corpus() {
  return {w("the cat sat"), w("the dog sat"), w("a cat ran")};
}

// Ten sentences; vocabulary small enough to enumerate every context.
std::vector<Words> ten_sentences() {
  return {w("the cat sat on the mat"), w("the dog sat"),        w("a cat ran"),
          w("a dog ran to the cat"),   w("the mat sat"),        w("cat cat cat"),
          w("on the mat a dog"),       w("ran ran"),            w("to the dog the cat ran"),
          w("a mat")};
}

const Dataset& synthetic() {
  static const Dataset data = [] {
    const auto dir = fs::temp_directory_path() / "pstyle_eval_synth";
    fs::remove_all(dir);
    auto spec = SynthSpec::defaults();
    spec.write_references = true;
    synth_corpus(spec, dir);
    return load_dataset(dir, 32);
  }();
  return data;
}

}  // namespace

// ------------------------------------------------------------------ BLEU

TEST(Bleu, IdenticalSentenceIsExactly100) {
  EXPECT_EQ(bleu(w("the food was good"), {w("the food was good")}), 100.0);
  EXPECT_EQ(bleu(w("short"), {w("short")}), 100.0);
  EXPECT_EQ(corpus_bleu({w("a b c"), w("d")}, {{w("a b c")}, {w("d")}}), 100.0);
}

TEST(Bleu, HandComputedRepeatedWord) {
  // p1 = 1/3, p2 = 1/3 (smoothed), p3 = 1/2 (smoothed), p4 = 1; no penalty.
  const double expected = 100.0 * std::pow(1.0 / 18.0, 0.25);
  EXPECT_NEAR(bleu(w("the the the"), {w("the cat")}), expected, 1e-9);
  EXPECT_NEAR(expected, 48.549177170732335, 1e-12);
}

TEST(Bleu, MatchesReferenceImplementation) {
  // Values from tests/oracles/bleu_oracle.py.
  EXPECT_NEAR(bleu(w("the cat sat on a mat"), {w("the cat sat on the mat")}), 53.728496591177098, 1e-9);
  EXPECT_NEAR(bleu(w("a cat"), {w("the cat sat"), w("a cat is here")}), 60.653065971263345, 1e-9);
  EXPECT_NEAR(bleu(w("a a a b"), {w("a c a a b")}), 49.760938992507128, 1e-9);
}

TEST(Bleu, NoOverlapScoresZero) {
  EXPECT_EQ(bleu(w("x y z"), {w("a b c")}), 0.0);
  EXPECT_EQ(bleu({}, {w("a b c")}), 0.0);
}

TEST(Bleu, ClosestReferenceLengthPrefersShorterOnTie) {
  const auto s = bleu_stats(w("a b c"), {w("a b c d"), w("a b")});
  EXPECT_EQ(s.ref_len, 2);
}

TEST(Bleu, CorpusPoolsCounts) {
  const std::vector<Words> hyps{w("a b"), w("c d e f")};
  const std::vector<std::vector<Words>> refs{{w("a b")}, {w("c d x f")}};
  const auto s1 = bleu_stats(hyps[0], refs[0]);
  const auto s2 = bleu_stats(hyps[1], refs[1]);
  BleuStats pooled = s1;
  for (std::size_t k = 0; k < 4; ++k) {
    pooled.matches[k] += s2.matches[k];
    pooled.totals[k] += s2.totals[k];
  }
  pooled.hyp_len += s2.hyp_len;
  pooled.ref_len += s2.ref_len;
  EXPECT_DOUBLE_EQ(corpus_bleu(hyps, refs), bleu_from_stats(pooled));
}

TEST(BleuProperty, BoundedAndIdentityOnRandomSentences) {
  std::mt19937_64 rng(101);
  for (int trial = 0; trial < 500; ++trial) {
    const auto hyp = random_sentence(rng, 10, 4);
    const auto ref = random_sentence(rng, 10, 4);
    const double b = bleu(hyp, {ref});
    EXPECT_GE(b, 0.0);
    EXPECT_LE(b, 100.0);
    EXPECT_EQ(bleu(hyp, {hyp}), 100.0);
    // Adding the hypothesis itself as a second reference gives 100.
    EXPECT_EQ(bleu(hyp, {ref, hyp}), 100.0);
  }
}

TEST(BleuProperty, DeletionNeverRaisesClippedUnigramMatches) {
  std::mt19937_64 rng(202);
  for (int trial = 0; trial < 500; ++trial) {
    const auto hyp = random_sentence(rng, 10, 4);
    const auto ref = random_sentence(rng, 10, 4);
    const long before = clipped_unigram_matches(hyp, {ref});
    for (std::size_t i = 0; i < hyp.size(); ++i) {
      Words shorter = hyp;
      shorter.erase(shorter.begin() + static_cast<std::ptrdiff_t>(i));
      EXPECT_LE(clipped_unigram_matches(shorter, {ref}), before);
    }
  }
}

TEST(BleuProperty, SentenceScoreCanRiseAfterDeletingAMatchedToken) {
  // With smoothed higher-order precisions the full score is not monotone
  // under deletion, even when the deleted token matches the reference.
  const double before = bleu(w("a a a b"), {w("a c a a b")});
  const double after = bleu(w("a a b"), {w("a c a a b")});
  EXPECT_NEAR(after, 51.341711903259203, 1e-9);
  EXPECT_GT(after, before);
}

// ------------------------------------------------------- Kneser-Ney model

TEST(KneserNey, SingleWordCorpus) {
  // Values from tests/oracles/kn_oracle.py.
  const auto lm = NGramLM::train({w("a a a a")});
  EXPECT_NEAR(lm.prob({NGramLM::kBos, NGramLM::kBos}, "a"), 0.765625, 1e-12);
  EXPECT_NEAR(perplexity(lm, {w("a a")}), 2.0736280734334072, 1e-9);
}

TEST(KneserNey, HandExampleMatchesReferenceImplementation) {
  const auto lm = NGramLM::train(small_corpus());
  EXPECT_NEAR(lm.prob(w("the cat"), "sat"), 0.45097656249999996, 1e-12);
  EXPECT_NEAR(perplexity(lm, {w("the cat ran"), w("a dog sat"), w("the bird sat")}), 3.8569519026201222, 1e-9);
}

TEST(KneserNey, UnknownWordsMapToUnk) {
  const auto lm = NGramLM::train(small_corpus());
  EXPECT_DOUBLE_EQ(lm.prob(w("the cat"), "zebra"), lm.prob(w("the cat"), NGramLM::kUnk));
  EXPECT_DOUBLE_EQ(lm.prob(w("zebra cat"), "sat"), lm.prob(w("<unk> cat"), "sat"));
}

TEST(KneserNey, EverySeenContextSumsToOne) {
  const auto lm = NGramLM::train(ten_sentences());
  ASSERT_FALSE(lm.contexts().empty());
  for (const auto& ctx : lm.contexts()) {
    double total = 0.0;
    for (const auto& word : lm.vocabulary()) total += lm.prob(ctx, word);
    EXPECT_NEAR(total, 1.0, 1e-9);
  }
}

TEST(KneserNey, EveryPossibleContextSumsToOne) {
  const auto lm = NGramLM::train(ten_sentences());
  auto history = lm.vocabulary();
  history.push_back(NGramLM::kBos);
  long checked = 0;
  for (const auto& u : history) {
    for (const auto& v : history) {
      double total = 0.0;
      for (const auto& word : lm.vocabulary()) total += lm.prob({u, v}, word);
      EXPECT_NEAR(total, 1.0, 1e-9) << u << ' ' << v;
      ++checked;
    }
  }
  EXPECT_EQ(checked, static_cast<long>(history.size() * history.size()));
}

TEST(KneserNeyProperty, RandomCorporaNormalise) {
  std::mt19937_64 rng(303);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<Words> corpus;
    for (int i = 0; i < 10; ++i) corpus.push_back(random_sentence(rng, 6, 5));
    const auto lm = NGramLM::train(corpus);
    for (const auto& ctx : lm.contexts()) {
      double total = 0.0;
      for (const auto& word : lm.vocabulary()) {
        const double p = lm.prob(ctx, word);
        EXPECT_GT(p, 0.0);
        total += p;
      }
      EXPECT_NEAR(total, 1.0, 1e-9);
    }
  }
}

TEST(KneserNey, UniformModelPerplexityIsVocabularySize) {
  const auto lm = NGramLM::uniform({"a", "b", "c", "d"});
  EXPECT_EQ(lm.vocabulary().size(), 6u);
  EXPECT_NEAR(perplexity(lm, {w("a b c"), w("d d")}), 6.0, 1e-9);
}

TEST(KneserNey, RejectsBadArguments) {
  EXPECT_THROW(NGramLM::train({}), std::invalid_argument);
  EXPECT_THROW(NGramLM::train(small_corpus(), 3, 1.5), std::invalid_argument);
}

// --------------------------------------------------------- style classifier

TEST(StyleClassifier, SeparatesSyntheticStyles) {
  const auto& data = synthetic();
  const auto ev = Evaluator::train(data);
  std::vector<int> train_labels, test_labels;
  for (const auto& e : data.train.items) train_labels.push_back(e.style);
  for (const auto& e : data.test.items) test_labels.push_back(e.style);
  EXPECT_GE(ev.classifier.accuracy(to_words(data.train.items, data.vocab), train_labels), 99.0);
  EXPECT_GE(ev.classifier.accuracy(to_words(data.test.items, data.vocab), test_labels), 95.0);
}

TEST(StyleClassifier, LexiconSwapFlipsPrediction) {
  const auto& data = synthetic();
  const auto ev = Evaluator::train(data);
  const auto spec = SynthSpec::defaults();
  std::mt19937_64 rng(909);
  int flipped = 0, total = 0;
  for (int style = 0; style < 2; ++style) {
    for (const auto& s : synth_sentences(spec, style, 200, rng)) {
      flipped += ev.classifier.predict(w(s.counterpart)) == 1 - style;
      ++total;
    }
  }
  EXPECT_GE(static_cast<double>(flipped) / total, 0.95);
}

TEST(StyleClassifier, ProbabilitiesSumToOne) {
  const auto& data = synthetic();
  const auto ev = Evaluator::train(data);
  for (const auto& s : {w("the food was good"), w(""), w("never seen words")}) {
    const auto p = ev.classifier.probabilities(s);
    EXPECT_NEAR(p[0] + p[1], 1.0, 1e-12);
  }
}

TEST(Evaluator, IdentityTransferHasNearZeroAccuracy) {
  const auto& data = synthetic();
  const auto ev = Evaluator::train(data);
  const auto r = ev.evaluate(data.test, data.vocab, [](const Sentence& x, int) { return x; });
  EXPECT_LE(r.acc, 5.0);
  EXPECT_EQ(r.self_bleu, 100.0);
  ASSERT_TRUE(r.ref_bleu.has_value());
  EXPECT_LT(*r.ref_bleu, 100.0);
  EXPECT_GT(r.ppl, 1.0);
}

TEST(Evaluator, ReferenceTransferScoresPerfectly) {
  const auto& data = synthetic();
  const auto ev = Evaluator::train(data);
  std::size_t i = 0;
  const auto r = ev.evaluate(data.test, data.vocab, [&](const Sentence&, int) { return data.test.references[i++]; });
  EXPECT_GE(r.acc, 95.0);
  EXPECT_EQ(*r.ref_bleu, 100.0);
}

// ------------------------------------------------------------------ report

TEST(MetricsReport, TextRoundTripIsExact) {
  MetricsReport r;
  r.config_hash = "0123456789abcdef";
  r.checkpoint_id = "fedcba9876543210";
  r.acc = 87.5;
  r.self_bleu = 1.0 / 3.0;
  r.ref_bleu = 21.9;
  r.ppl = std::exp(1.0);
  const auto back = MetricsReport::parse(r.to_text());
  EXPECT_EQ(back.config_hash, r.config_hash);
  EXPECT_EQ(back.checkpoint_id, r.checkpoint_id);
  EXPECT_EQ(back.acc, r.acc);
  EXPECT_EQ(back.self_bleu, r.self_bleu);
  EXPECT_EQ(*back.ref_bleu, *r.ref_bleu);
  EXPECT_EQ(back.ppl, r.ppl);
  EXPECT_EQ(back.to_text(), r.to_text());

  r.ref_bleu.reset();
  EXPECT_FALSE(MetricsReport::parse(r.to_text()).ref_bleu.has_value());
}
