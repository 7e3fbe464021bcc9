#include <gtest/gtest.h>

#include <cstring>
#include <random>

#include "pstyle/ops.hpp"
#include "pstyle/prefix.hpp"
#include "test_util.hpp"

using namespace pstyle;
using pstyle::testing::make_model;
using pstyle::testing::random_ids;
using pstyle::testing::tiny_run_config;

namespace {

template <typename T>
bool same_bits(const Tensor<T>& a, const Tensor<T>& b) {
  return a.shape() == b.shape() && std::memcmp(a.data().data(), b.data().data(), sizeof(T) * a.numel()) == 0;
}

template <typename T>
bool rows_equal(const Tensor<T>& a, int a_row, const Tensor<T>& b, int b_row, int count) {
  return std::memcmp(a.data().data() + static_cast<std::size_t>(a_row) * a.cols(),
                     b.data().data() + static_cast<std::size_t>(b_row) * b.cols(),
                     sizeof(T) * static_cast<std::size_t>(count) * a.cols()) == 0;
}

template <typename T>
double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(double(a.data()[i]) - double(b.data()[i])));
  return m;
}

}  // namespace

TEST(Prefix, BlockShapes) {
  const auto cfg = tiny_run_config();
  auto m = make_model<float>(cfg);
  const auto& p = m->prefix();
  const auto shared = p.shared();
  const auto style = p.style(1);
  const auto pre = p.pre();
  EXPECT_EQ(shared.source, PrefixSource::kShared);
  EXPECT_EQ(shared.length(), 3);
  EXPECT_EQ(style.length(), 4);
  EXPECT_EQ(pre.length(), 2);
  for (const auto* b : {&shared, &style, &pre}) {
    ASSERT_EQ(b->num_layers(), 2);
    for (int l = 0; l < 2; ++l) {
      EXPECT_EQ(b->keys[l].shape(), (Shape{b->length(), 16}));
      EXPECT_EQ(b->values[l].shape(), (Shape{b->length(), 16}));
    }
  }
}

TEST(Prefix, StylePrefixesDifferAndRejectUnknownStyles) {
  auto m = make_model<float>(tiny_run_config());
  const auto a = m->prefix().style(0);
  const auto b = m->prefix().style(1);
  EXPECT_GT(max_abs_diff(a.keys[0], b.keys[0]), 0.0);
  EXPECT_THROW(m->prefix().style(2), std::out_of_range);
  EXPECT_THROW(m->prefix().style(-1), std::out_of_range);
}

TEST(PrefixProperty, ContentLengthEqualsSentenceLength) {
  auto m = make_model<float>(tiny_run_config());
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 50; ++trial) {
    const int len = 1 + static_cast<int>(rng() % 12);
    const auto x = random_ids(rng, len, 20);
    const auto c = m->prefix().content(m->frozen_backbone().embed_ids(x));
    EXPECT_EQ(c.source, PrefixSource::kContent);
    EXPECT_EQ(c.length(), len);
    EXPECT_EQ(c.num_layers(), 2);
  }
}

TEST(PrefixProperty, AssembledLengthIsSharedPlusStylePlusSentence) {
  auto m = make_model<float>(tiny_run_config());
  std::mt19937_64 rng(18);
  for (int trial = 0; trial < 50; ++trial) {
    const int len = 1 + static_cast<int>(rng() % 12);
    const auto x = random_ids(rng, len, 20);
    const auto cond = m->prefix().condition(m->frozen_backbone().embed_ids(x), static_cast<int>(rng() % 2));
    EXPECT_EQ(cond.prefix.length(), 3 + 4 + len);
    EXPECT_EQ(cond.context.rows(), len);
  }
}

TEST(Prefix, AssembledOrderIsSharedStyleContent) {
  auto m = make_model<float>(tiny_run_config());
  const std::vector<int> x{7, 8, 9};
  const auto& p = m->prefix();
  const auto e = m->frozen_backbone().embed_ids(x);
  const auto cond = p.condition(e, 1);
  const auto shared = p.shared();
  const auto style = p.style(1);
  const auto content = p.content(e);
  for (int l = 0; l < 2; ++l) {
    EXPECT_TRUE(rows_equal(cond.prefix.keys[l], 0, shared.keys[l], 0, 3));
    EXPECT_TRUE(rows_equal(cond.prefix.keys[l], 3, style.keys[l], 0, 4));
    EXPECT_TRUE(rows_equal(cond.prefix.keys[l], 7, content.keys[l], 0, 3));
    EXPECT_TRUE(rows_equal(cond.prefix.values[l], 7, content.values[l], 0, 3));
  }
}

TEST(Prefix, SharedAndStyleAreInputIndependent) {
  auto m = make_model<float>(tiny_run_config());
  const auto& bb = m->frozen_backbone();
  const auto a = m->prefix().condition(bb.embed_ids(std::vector<int>{5, 6, 7}), 0);
  const auto b = m->prefix().condition(bb.embed_ids(std::vector<int>{11, 12, 13, 14, 15}), 0);
  for (int l = 0; l < 2; ++l) EXPECT_TRUE(rows_equal(a.prefix.keys[l], 0, b.prefix.keys[l], 0, 7));
}

TEST(Prefix, ContentDependsOnInput) {
  auto m = make_model<float>(tiny_run_config());
  const auto& bb = m->frozen_backbone();
  const auto a = m->prefix().content(bb.embed_ids(std::vector<int>{5, 6, 7}));
  const auto b = m->prefix().content(bb.embed_ids(std::vector<int>{5, 6, 8}));
  // Causal: the first two positions see identical inputs.
  EXPECT_TRUE(rows_equal(a.keys[0], 0, b.keys[0], 0, 2));
  EXPECT_FALSE(rows_equal(a.keys[0], 2, b.keys[0], 2, 1));
}

TEST(Prefix, ContentDependsOnPrePrefix) {
  const auto cfg = tiny_run_config();
  auto m = make_model<float>(cfg);
  const auto e = m->frozen_backbone().embed_ids(std::vector<int>{5, 6, 7});
  const auto before = m->prefix().content(e);
  // The pre-prefix is a function of both style embeddings.
  auto emb = m->store().get("generator.prefix.style_emb");
  for (auto& v : emb.data_mut()) v += 0.5f;
  const auto pre = m->prefix().pre();
  const auto after = m->prefix().content(e, pre);
  EXPECT_GT(max_abs_diff(before.keys[1], after.keys[1]), 1e-6);
}

TEST(Prefix, PrePrefixRepeatsOneFusedRow) {
  auto m = make_model<float>(tiny_run_config());
  const auto pre = m->prefix().pre();
  EXPECT_EQ(pre.source, PrefixSource::kPre);
  for (int l = 0; l < 2; ++l) EXPECT_TRUE(rows_equal(pre.keys[l], 0, pre.keys[l], 1, 1));
}

TEST(Prefix, SelfLossReachesEveryGeneratorParameter) {
  const auto cfg = tiny_run_config();
  auto m = make_model<double>(cfg);
  m->train_only(kGeneratorNs);
  Graph<double> g;
  {
    GraphScope<double> scope(g);
    const auto parts = m->prefix().build_static();
    const std::vector<int> x{5, 9, 6, 12};
    g.backward(loss_self(*m, parts, x, 0));
  }
  for (const auto& e : m->store().group("generator.prefix.")) {
    // style_emb row 1 is only reached through the pre-prefix fusion.
    ASSERT_TRUE(e.tensor.has_grad()) << e.name;
    double norm = 0;
    for (auto v : e.tensor.grad()) norm += v * v;
    EXPECT_GT(norm, 0.0) << e.name;
  }
}

TEST(Prefix, ContentPassCounter) {
  auto m = make_model<float>(tiny_run_config());
  auto& p = m->prefix();
  p.reset_counters();
  const auto e = m->frozen_backbone().embed_ids(std::vector<int>{5, 6, 7});
  p.condition(e, 0);
  EXPECT_EQ(p.content_passes(), 1);
  const auto parts = p.build_static();
  const auto c = p.content_for(parts, e);
  p.condition(parts, e, 0, &c);
  p.condition(parts, e, 1, &c);
  EXPECT_EQ(p.content_passes(), 2);
  p.reset_counters();
  EXPECT_EQ(p.content_passes(), 0);
}

TEST(PrefixAblation, FlagsRemoveTheirBlocks) {
  auto cfg = tiny_run_config();
  const std::vector<int> x{5, 6, 7, 8};

  cfg.ablation.disable_shared_prefix = true;
  auto a = make_model<float>(cfg);
  EXPECT_EQ(a->prefix().condition(a->frozen_backbone().embed_ids(x), 0).prefix.length(), 4 + 4);

  cfg = tiny_run_config();
  cfg.ablation.disable_style_prefix = true;
  auto b = make_model<float>(cfg);
  EXPECT_EQ(b->prefix().condition(b->frozen_backbone().embed_ids(x), 0).prefix.length(), 3 + 4);

  cfg = tiny_run_config();
  cfg.ablation.disable_content_prefix = true;
  auto c = make_model<float>(cfg);
  c->prefix().reset_counters();
  EXPECT_EQ(c->prefix().condition(c->frozen_backbone().embed_ids(x), 0).prefix.length(), 3 + 4);
  EXPECT_EQ(c->prefix().content_passes(), 0);
}

TEST(PrefixAblation, StyleEmbeddingVariantPrependsOneContextRow) {
  auto cfg = tiny_run_config();
  cfg.ablation.disable_style_prefix = true;
  cfg.ablation.use_style_embedding_instead = true;
  auto m = make_model<float>(cfg);
  const std::vector<int> x{5, 6, 7};
  const auto e = m->frozen_backbone().embed_ids(x);
  const auto cond = m->prefix().condition(e, 1);
  EXPECT_EQ(cond.prefix.length(), 3 + 3);
  ASSERT_EQ(cond.context.rows(), 4);
  EXPECT_TRUE(rows_equal(cond.context, 0, m->prefix().style_embeddings(), 1, 1));
  EXPECT_TRUE(rows_equal(cond.context, 1, e, 0, 3));

  AblationFlags bad;
  bad.use_style_embedding_instead = true;
  EXPECT_THROW(bad.validate(), std::invalid_argument);
}

TEST(PrefixTally, MatchesStoredParameterCounts) {
  for (bool tied : {false, true}) {
    for (bool full : {false, true}) {
      auto cfg = tiny_run_config();
      cfg.prefix.tie_projections = tied;
      cfg.ablation.full_finetune = full;
      auto m = make_model<float>(cfg);
      const auto t = tally_params(cfg.model, cfg.prefix, cfg.discriminator_tokens, full);
      EXPECT_EQ(t.backbone, m->store().count(kBackboneNs));
      EXPECT_EQ(t.generator, m->store().count(kGeneratorNs));
      EXPECT_EQ(t.discriminator, m->store().count(kDiscriminatorNs));
      EXPECT_EQ(t.projection_nets, tied ? 1u : 3u);
      EXPECT_EQ(backbone_param_count(cfg.model), t.backbone);
    }
  }
}

TEST(PrefixTally, TiedStoreHasOneProjection) {
  auto cfg = tiny_run_config();
  cfg.prefix.tie_projections = true;
  auto m = make_model<float>(cfg);
  EXPECT_TRUE(m->store().contains("generator.prefix.proj_main.w1"));
  EXPECT_FALSE(m->store().contains("generator.prefix.proj_pre.w1"));
  EXPECT_FALSE(m->store().contains("generator.prefix.proj_content.w1"));
}

TEST(PrefixConfig, RejectsNonPositiveLengths) {
  PrefixConfig c;
  c.style_len = 0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = PrefixConfig{};
  c.num_styles = 3;
  EXPECT_THROW(c.validate(), std::invalid_argument);
}
