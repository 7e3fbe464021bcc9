#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <random>

#include "pstyle/grad_check.hpp"
#include "pstyle/ops.hpp"
#include "pstyle/params.hpp"

using namespace pstyle;

namespace {

Tensor<double> random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0,
                             bool requires_grad = true) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = u(rng);
  return Tensor<double>(std::move(shape), std::move(v), requires_grad);
}

}  // namespace

TEST(Ops, SoftmaxOfUniformLogitsIsUniform) {
  auto y = softmax(Tensor<float>({1, 3}, {0.f, 0.f, 0.f}));
  for (float v : y.data()) EXPECT_FLOAT_EQ(v, 1.f / 3.f);
}

TEST(Ops, SoftmaxRowsSumToOne) {
  std::mt19937_64 rng(1);
  auto x = random_tensor({5, 7}, rng, -30, 30, false);
  auto y = softmax(x);
  for (int r = 0; r < 5; ++r) {
    double s = 0;
    for (int j = 0; j < 7; ++j) s += y.at(r, j);
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(Ops, LayerNormOfConstantVectorIsZero) {
  auto x = Tensor<float>::full({1, 8}, 3.5f);
  auto y = layer_norm(x, Tensor<float>::full({8}, 1.f), Tensor<float>::zeros({8}));
  for (float v : y.data()) EXPECT_NEAR(v, 0.f, 1e-6f);
}

TEST(Ops, MatmulShapeAlgebra) {
  auto c = matmul(Tensor<float>::zeros({2, 3}), Tensor<float>::zeros({3, 4}));
  EXPECT_EQ(c.shape(), (Shape{2, 4}));
}

TEST(Ops, ShapeMismatchReportsBothShapes) {
  try {
    matmul(Tensor<float>::zeros({2, 3}), Tensor<float>::zeros({4, 5}));
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("(2,3)"), std::string::npos) << msg;
    EXPECT_NE(msg.find("(4,5)"), std::string::npos) << msg;
  }
  EXPECT_THROW(add(Tensor<float>::zeros({2, 3}), Tensor<float>::zeros({3, 2})), ShapeError);
}

TEST(Ops, CausalMaskHidesFutureSentenceKeysOnly) {
  auto s = causal_mask(Tensor<double>::zeros({3, 5}), 2, 0);
  EXPECT_TRUE(std::isfinite(s.at(0, 0)));
  EXPECT_TRUE(std::isfinite(s.at(0, 2)));
  EXPECT_TRUE(std::isinf(s.at(0, 3)));
  EXPECT_TRUE(std::isfinite(s.at(2, 4)));
  auto p = softmax(s);
  EXPECT_DOUBLE_EQ(p.at(0, 0), 1.0 / 3.0);
  EXPECT_DOUBLE_EQ(p.at(0, 4), 0.0);
}

TEST(Backward, SumOfSquaresHasGradientTwoW) {
  Tensor<double> w({2}, {1.0, 2.0}, true);
  Graph<double> g;
  {
    GraphScope<double> scope(g);
    auto loss = sum(mul(w, w));
    g.backward(loss);
  }
  EXPECT_DOUBLE_EQ(w.grad()[0], 2.0);
  EXPECT_DOUBLE_EQ(w.grad()[1], 4.0);
}

TEST(Ops, StraightThroughIsOneHotForwardAndIdentityBackward) {
  Tensor<double> p({2, 3}, {0.2, 0.5, 0.3, 0.6, 0.1, 0.3}, true);
  Tensor<double> w({2, 3}, {1, 2, 3, 4, 5, 6});
  Graph<double> g;
  GraphScope<double> scope(g);
  const std::vector<int> ids{1, 0};
  auto y = straight_through(p, ids);
  EXPECT_EQ(std::vector<double>(y.data().begin(), y.data().end()), (std::vector<double>{0, 1, 0, 1, 0, 0}));
  g.backward(sum(mul(y, w)));
  EXPECT_EQ(std::vector<double>(p.grad().begin(), p.grad().end()), (std::vector<double>{1, 2, 3, 4, 5, 6}));
  EXPECT_THROW(straight_through(p, std::vector<int>{1}), std::invalid_argument);
  EXPECT_THROW(straight_through(p, std::vector<int>{1, 3}), std::out_of_range);
}

TEST(Backward, UnusedParameterGetsNoGradient) {
  Tensor<double> w({2}, {1.0, 2.0}, true);
  Tensor<double> p({3}, {1.0, 1.0, 1.0}, true);
  Graph<double> g;
  GraphScope<double> scope(g);
  g.backward(sum(mul(w, w)));
  for (double v : p.grad()) EXPECT_EQ(v, 0.0);
  EXPECT_FALSE(p.has_grad());
}

TEST(Backward, TwoUsesAccumulate) {
  Tensor<double> w({1, 2}, {3.0, -1.0}, true);
  Graph<double> g;
  GraphScope<double> scope(g);
  auto loss = add(sum(scale(w, 2.0)), sum(scale(w, 5.0)));
  g.backward(loss);
  EXPECT_DOUBLE_EQ(w.grad()[0], 7.0);
  EXPECT_DOUBLE_EQ(w.grad()[1], 7.0);
}

TEST(Backward, NonScalarLossRejected) {
  Tensor<double> w({2}, {1.0, 2.0}, true);
  Graph<double> g;
  GraphScope<double> scope(g);
  auto y = mul(w, w);
  EXPECT_THROW(g.backward(y), ShapeError);
}

TEST(Backward, NothingRecordedWithoutScope) {
  Tensor<double> w({2}, {1.0, 2.0}, true);
  auto y = mul(w, w);
  EXPECT_FALSE(y.requires_grad());
}

TEST(Backward, ForwardValuesAndFrozenTensorsUntouched) {
  std::mt19937_64 rng(3);
  auto w = random_tensor({4, 6}, rng);
  auto frozen = random_tensor({6, 5}, rng, -1, 1, false);
  const std::vector<double> frozen_before(frozen.data().begin(), frozen.data().end());
  Graph<double> g;
  GraphScope<double> scope(g);
  auto h = gelu(matmul(w, frozen));
  auto out = log_softmax(h);
  const std::vector<double> fwd_before(out.data().begin(), out.data().end());
  g.backward(sum(out));
  EXPECT_EQ(std::vector<double>(out.data().begin(), out.data().end()), fwd_before);
  EXPECT_EQ(std::vector<double>(frozen.data().begin(), frozen.data().end()), frozen_before);
  EXPECT_FALSE(frozen.has_grad());
}

TEST(GradCheck, SquareAtThree) {
  Tensor<double> p({1}, {3.0}, true);
  std::vector<NamedTensor<double>> params{{"p", p}};
  auto r = grad_check([&] { return sum(mul(p, p)); }, params, {.step = 1e-5});
  EXPECT_LT(r.max_rel_error, 1e-8);
  EXPECT_NEAR(r.worst_analytic, 6.0, 1e-12);
  EXPECT_NEAR(r.worst_numeric, 6.0, 1e-9);
}

TEST(GradCheck, CorruptedBackwardIsDetected) {
  // tanh with a backward rule scaled by 1.5.
  auto bad_tanh = [](const Tensor<double>& x) {
    auto y = tanh(x.detach());
    auto out = y.clone();
    return record_custom<double>("bad_tanh", {x}, out, [x, out]() mutable {
      const auto g = out.grad();
      const auto yd = out.data();
      auto gx = x.grad_mut();
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += 1.5 * g[i] * (1.0 - yd[i] * yd[i]);
    });
  };
  std::mt19937_64 rng(5);
  auto p = random_tensor({3, 4}, rng);
  std::vector<NamedTensor<double>> params{{"p", p}};
  auto r = grad_check([&] { return sum(bad_tanh(p)); }, params);
  EXPECT_GT(r.max_rel_error, 1e-1);
}

TEST(GradCheck, NonFiniteLossNamesParameter) {
  Tensor<double> p({1}, {0.0}, true);
  std::vector<NamedTensor<double>> params{{"bad.param", p}};
  // log of a softmax entry that underflows once p moves.
  auto f = [&] {
    auto scaled = scale(p, 1e308);
    return sum(mul(scaled, scaled));
  };
  try {
    grad_check(f, params);
    FAIL() << "expected GradCheckError";
  } catch (const GradCheckError& e) {
    EXPECT_NE(std::string(e.what()).find("bad.param"), std::string::npos) << e.what();
  }
}

// Property: every primitive's gradient matches central differences on random
// shapes and values (64-bit).
TEST(GradCheck, EveryPrimitiveMatchesFiniteDifferences) {
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<int> dim(1, 5);
  constexpr int kPrimitives = 19;
  int trials = 0;
  for (int round = 0; round < 7; ++round) {
    for (int op = 0; op < kPrimitives; ++op, ++trials) {
      const int m = dim(rng), k = dim(rng), n = dim(rng);
      auto a = random_tensor({m, k}, rng);
      auto b = random_tensor({k, n}, rng);
      auto same = random_tensor({m, k}, rng);
      auto row = random_tensor({k}, rng);
      auto c = random_tensor({n, k}, rng);
      std::vector<int> ids(static_cast<std::size_t>(n));
      for (auto& id : ids) id = std::uniform_int_distribution<int>(0, m - 1)(rng);
      std::vector<int> targets(static_cast<std::size_t>(m));
      for (auto& t : targets) t = std::uniform_int_distribution<int>(0, k - 1)(rng);

      std::function<Tensor<double>()> fn;
      std::vector<NamedTensor<double>> params;
      auto weights_for = [&](const Shape& s) { return random_tensor(s, rng, -1, 1, false); };
      // Weighted sum so that upstream gradients are non-uniform.
      auto reduce = [](const Tensor<double>& t, const Tensor<double>& w) { return sum(mul(t, w)); };
      switch (op) {
        case 0: { auto w = weights_for({m, n}); fn = [=] { return reduce(matmul(a, b), w); }; params = {{"a", a}, {"b", b}}; break; }
        case 1: { auto w = weights_for({m, n}); fn = [=] { return reduce(matmul_nt(a, c), w); }; params = {{"a", a}, {"c", c}}; break; }
        case 2: { auto w = weights_for({m, k}); fn = [=] { return reduce(add(a, same), w); }; params = {{"a", a}, {"s", same}}; break; }
        case 3: { auto w = weights_for({m, k}); fn = [=] { return reduce(add(a, row), w); }; params = {{"a", a}, {"row", row}}; break; }
        case 4: { auto w = weights_for({m, k}); fn = [=] { return reduce(sub(a, same), w); }; params = {{"a", a}, {"s", same}}; break; }
        case 5: { auto w = weights_for({m, k}); fn = [=] { return reduce(mul(a, row), w); }; params = {{"a", a}, {"row", row}}; break; }
        case 6: { auto w = weights_for({m, k}); fn = [=] { return reduce(tanh(scale(a, 1.7)), w); }; params = {{"a", a}}; break; }
        case 7: { auto w = weights_for({m, k}); fn = [=] { return reduce(gelu(scale(a, 2.0)), w); }; params = {{"a", a}}; break; }
        case 8: { auto w = weights_for({m, k}); fn = [=] { return reduce(softmax(scale(a, 3.0)), w); }; params = {{"a", a}}; break; }
        case 9: { auto w = weights_for({m, k}); fn = [=] { return reduce(log_softmax(scale(a, 3.0)), w); }; params = {{"a", a}}; break; }
        case 10: {
          auto w = weights_for({m, k});
          auto g = random_tensor({k}, rng, 0.5, 1.5);
          auto be = random_tensor({k}, rng);
          fn = [=] { return reduce(layer_norm(scale(a, 2.0), g, be), w); };
          params = {{"a", a}, {"gamma", g}, {"beta", be}};
          break;
        }
        case 11: { auto w = weights_for({n, k}); fn = [=] { return reduce(embedding(a, ids), w); }; params = {{"table", a}}; break; }
        case 12: {
          auto w = weights_for({2 * m, k});
          fn = [=] { return reduce(concat_rows(std::vector<Tensor<double>>{a, same}), w); };
          params = {{"a", a}, {"s", same}};
          break;
        }
        case 13: {
          auto extra = random_tensor({m, n}, rng);
          auto w = weights_for({m, k + n});
          fn = [=] { return reduce(concat_cols(std::vector<Tensor<double>>{a, extra}), w); };
          params = {{"a", a}, {"extra", extra}};
          break;
        }
        case 14: {
          const int start = std::uniform_int_distribution<int>(0, k - 1)(rng);
          const int cnt = k - start;
          auto w = weights_for({m, cnt});
          auto w2 = weights_for({1, k});
          fn = [=] { return add(reduce(slice_cols(a, start, cnt), w), reduce(slice_rows(a, m - 1, 1), w2)); };
          params = {{"a", a}};
          break;
        }
        case 15: {
          auto w = weights_for({n, k});
          auto r1 = random_tensor({1, k}, rng);
          fn = [=] { return reduce(repeat_rows(r1, n), w); };
          params = {{"row", r1}};
          break;
        }
        case 16: { auto w = weights_for({1, k}); fn = [=] { return reduce(mean_rows(a), w); }; params = {{"a", a}}; break; }
        case 17: { fn = [=] { return cross_entropy(scale(a, 2.0), targets); }; params = {{"a", a}}; break; }
        case 18: {
          const int plen = std::uniform_int_distribution<int>(0, 2)(rng);
          auto sc = random_tensor({m, plen + m}, rng);
          auto w = weights_for({m, plen + m});
          fn = [=] { return reduce(softmax(causal_mask(sc, plen, 0)), w); };
          params = {{"scores", sc}};
          break;
        }
      }
      auto r = grad_check(fn, params, {.step = 1e-6, .samples_per_tensor = 1000});
      EXPECT_LT(r.max_rel_error, 1e-4) << "primitive " << op << " worst " << r.worst_param << "[" << r.worst_index
                                       << "] analytic " << r.worst_analytic << " numeric " << r.worst_numeric;
    }
  }
  EXPECT_GE(trials, 100);
}

TEST(ParamStore, CastPreservesValuesAndFlags) {
  ParamStore<float> store;
  std::mt19937_64 rng(1);
  store.add_normal("a.w", {3, 2}, 1.0, rng);
  store.add_constant("b.w", {2}, 0.5f).set_requires_grad(false);
  auto d = store.cast<double>();
  EXPECT_EQ(d.count(), 8u);
  EXPECT_EQ(d.trainable_count(), 6u);
  EXPECT_EQ(static_cast<float>(d.get("a.w").data()[3]), store.get("a.w").data()[3]);
  EXPECT_THROW(store.add_constant("a.w", {1}, 0.f), std::invalid_argument);
}
