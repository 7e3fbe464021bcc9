#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <random>

#include "pstyle/backbone.hpp"
#include "pstyle/ops.hpp"

using namespace pstyle;

namespace {

ModelConfig tiny_config(int layers = 2, int vocab = 20) {
  ModelConfig c;
  c.num_layers = layers;
  c.num_heads = 2;
  c.model_dim = 16;
  c.ff_dim = 32;
  c.vocab_size = vocab;
  c.max_positions = 40;
  return c;
}

template <typename T>
struct TinyModel {
  ParamStore<T> store;
  Backbone<T> lm;
  explicit TinyModel(const ModelConfig& c, std::uint64_t seed = 11) {
    std::mt19937_64 rng(seed);
    Backbone<T>::init_params(c, store, rng);
    // Larger weights than the GPT-2 init so that outputs are far from uniform.
    for (auto& e : store.entries()) {
      if (e.name.find(".g") == std::string::npos) {
        auto t = e.tensor;
        for (auto& v : t.data_mut()) v *= T(20);
      }
    }
    lm = Backbone<T>(c, store);
  }
};

template <typename T>
bool rows_bit_identical(const Tensor<T>& a, const Tensor<T>& b, int rows) {
  return std::memcmp(a.data().data(), b.data().data(), sizeof(T) * static_cast<std::size_t>(rows) * a.cols()) == 0;
}

}  // namespace

TEST(Backbone, PlainForwardShapes) {
  TinyModel<float> m(tiny_config());
  std::vector<int> ids{5, 6, 7, 8};
  auto hs = m.lm.forward_ids(ids, nullptr);
  EXPECT_EQ(hs.layers.size(), 2u);
  EXPECT_EQ(hs.logits.shape(), (Shape{4, 20}));
  EXPECT_EQ(hs.final_hidden.shape(), (Shape{4, 16}));
}

TEST(Backbone, CausalityAtEveryPosition) {
  TinyModel<float> m(tiny_config());
  std::vector<int> ids{5, 6, 7, 8, 9, 10, 11, 12};
  auto base = m.lm.forward_ids(ids, nullptr).logits;
  for (std::size_t t = 0; t < ids.size(); ++t) {
    auto changed = ids;
    changed[t] = (changed[t] + 3) % 20;
    auto pert = m.lm.forward_ids(changed, nullptr).logits;
    EXPECT_TRUE(rows_bit_identical(base, pert, static_cast<int>(t))) << "position " << t;
    EXPECT_FALSE(rows_bit_identical(base, pert, static_cast<int>(t) + 1)) << "position " << t;
  }
}

TEST(Backbone, OneHotSoftInputMatchesHardInputBitwise) {
  TinyModel<float> m(tiny_config());
  std::vector<int> ids{5, 6, 7, 8, 9};
  auto onehot = Tensor<float>::zeros({5, 20});
  for (int i = 0; i < 5; ++i) onehot.data_mut()[static_cast<std::size_t>(i) * 20 + ids[i]] = 1.f;
  auto hard = m.lm.forward_ids(ids, nullptr).logits;
  auto soft = m.lm.forward(m.lm.embed_soft(onehot), nullptr).logits;
  EXPECT_TRUE(rows_bit_identical(hard, soft, 5));
}

// With one vocabulary entry the reserved markers do not exist, so score the
// teacher-forced logits directly.
TEST(Backbone, SingleTokenVocabularyHasZeroLogProb) {
  auto c = tiny_config(1, 1);
  TinyModel<double> m(c);
  std::vector<int> seq{0, 0, 0, 0};
  auto hs = m.lm.forward_ids(seq, nullptr);
  EXPECT_EQ(cross_entropy(hs.logits, seq).item(), 0.0);
}

TEST(Backbone, UniformModelLogProbIsLengthTimesLogInverseV) {
  auto c = tiny_config(2, 12);
  TinyModel<double> m(c);
  for (auto& v : m.store.get("backbone.tok_emb").data_mut()) v = 0.0;
  std::vector<int> target{5, 6, 7, 8, 9, 10};
  EXPECT_NEAR(m.lm.sequence_log_prob(target, nullptr, std::vector<int>{4, 5}), 6.0 * std::log(1.0 / 12.0), 1e-12);
}

// Independent per-step oracle: re-run the model on each growing prefix and
// take the log-softmax of the last position by hand.
TEST(Backbone, SequenceLogProbMatchesStepwiseOracle) {
  TinyModel<double> m(tiny_config());
  const std::vector<int> context{7, 8, 9};
  const std::vector<int> target{10, 11, 5, 6};
  double oracle = 0.0;
  std::vector<int> fed = context;
  fed.push_back(tokens::kSep);
  for (int t : target) {
    auto lg = m.lm.forward_ids(fed, nullptr).logits;
    const int last = lg.rows() - 1;
    double mx = -1e300;
    for (int j = 0; j < lg.cols(); ++j) mx = std::max(mx, lg.at(last, j));
    double z = 0.0;
    for (int j = 0; j < lg.cols(); ++j) z += std::exp(lg.at(last, j) - mx);
    oracle += lg.at(last, t) - mx - std::log(z);
    fed.push_back(t);
  }
  EXPECT_NEAR(m.lm.sequence_log_prob(target, nullptr, context), oracle, 1e-10);
}

TEST(Backbone, UnknownTokenRejected) {
  TinyModel<float> m(tiny_config());
  std::vector<int> target{5, 99};
  EXPECT_THROW(m.lm.sequence_log_prob(target, nullptr, std::vector<int>{1}), std::out_of_range);
}

TEST(Backbone, PositionOverflowRejectedWithLengths) {
  TinyModel<float> m(tiny_config());
  std::vector<int> ids(41, 5);
  try {
    m.lm.forward_ids(ids, nullptr);
    FAIL() << "expected length_error";
  } catch (const std::length_error& e) {
    EXPECT_NE(std::string(e.what()).find("41"), std::string::npos) << e.what();
  }
}

TEST(Backbone, PrefixEquivalentToPrependedTokensOnOneLayerModel) {
  TinyModel<double> m(tiny_config(1));
  const std::vector<int> a{5, 6, 7};
  const std::vector<int> b{8, 9, 10, 11};
  std::vector<int> ab = a;
  ab.insert(ab.end(), b.begin(), b.end());
  auto full = m.lm.forward_ids(ab, nullptr);
  auto ha = m.lm.forward_ids(a, nullptr);
  PrefixBlock<double> block;
  block.keys = ha.keys;
  block.values = ha.values;
  auto hb = m.lm.forward(m.lm.embed_ids(b), &block, true, static_cast<int>(a.size()));
  for (int r = 0; r < 4; ++r) {
    for (int j = 0; j < 20; ++j) EXPECT_NEAR(hb.logits.at(r, j), full.logits.at(r + 3, j), 1e-12);
  }
}

TEST(Backbone, PrefixLayerCountMismatchRejected) {
  TinyModel<float> m(tiny_config(2));
  PrefixBlock<float> block;
  block.keys = {Tensor<float>::zeros({2, 16})};
  block.values = {Tensor<float>::zeros({2, 16})};
  std::vector<int> ids{5};
  EXPECT_THROW(m.lm.forward_ids(ids, &block), std::invalid_argument);
}

TEST(Generate, ZeroMaxLenIsEmpty) {
  TinyModel<float> m(tiny_config());
  std::vector<int> ctx{5, 6};
  auto g = m.lm.generate(nullptr, m.lm.embed_ids(ctx), {.mode = DecodeMode::kGreedy, .max_len = 0});
  EXPECT_TRUE(g.ids.empty());
}

TEST(Generate, ColdSamplingEqualsGreedy) {
  TinyModel<float> m(tiny_config());
  std::vector<int> ctx{5, 6, 7};
  auto greedy = m.lm.generate(nullptr, m.lm.embed_ids(ctx), {.mode = DecodeMode::kGreedy, .max_len = 10});
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    auto cold = m.lm.generate(nullptr, m.lm.embed_ids(ctx),
                              {.mode = DecodeMode::kSample, .max_len = 10, .temperature = 1e-4, .seed = seed});
    EXPECT_EQ(cold.ids, greedy.ids);
  }
}

TEST(Generate, SoftModeReturnsDistributionsAndMatchesGreedyArgmax) {
  TinyModel<double> m(tiny_config());
  std::vector<int> ctx{5, 6, 7};
  auto soft = m.lm.generate(nullptr, m.lm.embed_ids(ctx), {.mode = DecodeMode::kSoft, .max_len = 6, .temperature = 1e-3});
  auto greedy = m.lm.generate(nullptr, m.lm.embed_ids(ctx), {.mode = DecodeMode::kGreedy, .max_len = 6});
  EXPECT_EQ(soft.ids, greedy.ids);
  if (soft.length() > 0) {
    EXPECT_EQ(soft.soft.rows(), soft.length());
    for (int r = 0; r < soft.soft.rows(); ++r) {
      double s = 0;
      for (int j = 0; j < soft.soft.cols(); ++j) s += soft.soft.at(r, j);
      EXPECT_NEAR(s, 1.0, 1e-12);
    }
  }
}

TEST(Generate, GumbelNoiseIsSeededAndPerturbsTheArgmax) {
  TinyModel<float> m(tiny_config());
  std::vector<int> ctx{5, 6, 7};
  const auto emb = m.lm.embed_ids(ctx);
  GenerateOptions o{.mode = DecodeMode::kSoft, .max_len = 6, .temperature = 1.0, .straight_through = true};
  const auto plain = m.lm.generate(nullptr, emb, o).ids;
  EXPECT_EQ(plain, m.lm.generate(nullptr, emb, {.mode = DecodeMode::kGreedy, .max_len = 6}).ids);
  o.gumbel_scale = 100.0;
  int differ = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    o.seed = seed;
    const auto a = m.lm.generate(nullptr, emb, o).ids;
    EXPECT_EQ(a, m.lm.generate(nullptr, emb, o).ids);
    differ += a != plain;
  }
  EXPECT_GT(differ, 10);
  o.gumbel_scale = -1.0;
  EXPECT_THROW(m.lm.generate(nullptr, emb, o), std::invalid_argument);
}

TEST(Generate, DeterministicAcrossRuns) {
  TinyModel<float> a(tiny_config(), 5);
  TinyModel<float> b(tiny_config(), 5);
  std::vector<int> ctx{8, 9};
  GenerateOptions o{.mode = DecodeMode::kSample, .max_len = 12, .temperature = 1.0, .seed = 99};
  EXPECT_EQ(a.lm.generate(nullptr, a.lm.embed_ids(ctx), o).ids, b.lm.generate(nullptr, b.lm.embed_ids(ctx), o).ids);
}

TEST(Generate, IncrementalDecodingMatchesFullRecompute) {
  TinyModel<double> m(tiny_config());
  std::vector<int> ctx{5, 6, 7};
  auto g = m.lm.generate(nullptr, m.lm.embed_ids(ctx), {.mode = DecodeMode::kGreedy, .max_len = 8});
  std::vector<int> fed = ctx;
  fed.push_back(tokens::kSep);
  for (int id : g.ids) {
    auto lg = m.lm.forward_ids(fed, nullptr).logits;
    const int last = lg.rows() - 1;
    int best = 0;
    for (int j = 1; j < lg.cols(); ++j) {
      if (lg.at(last, j) > lg.at(last, best)) best = j;
    }
    EXPECT_EQ(best, id);
    fed.push_back(id);
  }
}
