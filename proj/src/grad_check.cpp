#include "pstyle/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "pstyle/ops.hpp"

namespace pstyle {

namespace {

double evaluate(const std::function<Tensor<double>()>& loss_fn, const std::string& param) {
  NoGradScope<double> no_grad;
  const double v = loss_fn().item();
  if (!std::isfinite(v)) throw GradCheckError("grad_check: non-finite loss while perturbing " + param);
  return v;
}

double central(const std::function<Tensor<double>()>& loss_fn, const std::string& param, Tensor<double>& t,
               std::size_t idx, double h) {
  auto data = t.data_mut();
  const double orig = data[idx];
  data[idx] = orig + h;
  const double up = evaluate(loss_fn, param);
  data[idx] = orig - h;
  const double down = evaluate(loss_fn, param);
  data[idx] = orig;
  return (up - down) / (2.0 * h);
}

// Neville tableau over shrinking steps; stops once higher orders get worse.
double ridders(const std::function<Tensor<double>()>& loss_fn, const std::string& param, Tensor<double>& t,
               std::size_t idx, double h, int levels) {
  constexpr double kShrink = 1.4, kShrink2 = kShrink * kShrink, kSafe = 2.0;
  std::vector<std::vector<double>> a(levels, std::vector<double>(levels));
  a[0][0] = central(loss_fn, param, t, idx, h);
  double best = a[0][0];
  double err = std::numeric_limits<double>::max();
  for (int i = 1; i < levels; ++i) {
    h /= kShrink;
    a[0][i] = central(loss_fn, param, t, idx, h);
    double fac = kShrink2;
    for (int j = 1; j <= i; ++j) {
      a[j][i] = (a[j - 1][i] * fac - a[j - 1][i - 1]) / (fac - 1.0);
      fac *= kShrink2;
      const double e = std::max(std::abs(a[j][i] - a[j - 1][i]), std::abs(a[j][i] - a[j - 1][i - 1]));
      if (e <= err) {
        err = e;
        best = a[j][i];
      }
    }
    if (std::abs(a[i][i] - a[i - 1][i - 1]) >= kSafe * err) break;
  }
  return best;
}

}  // namespace

GradCheckResult grad_check(const std::function<Tensor<double>()>& loss_fn,
                           std::span<const NamedTensor<double>> params, const GradCheckOptions& options) {
  std::vector<Tensor<double>> handles;
  for (const auto& p : params) {
    handles.push_back(p.tensor);
    handles.back().zero_grad();
  }

  {
    Graph<double> graph;
    GraphScope<double> scope(graph);
    auto loss = loss_fn();
    if (!std::isfinite(loss.item())) throw GradCheckError("grad_check: non-finite loss at the base point");
    graph.backward(loss);
  }

  GradCheckResult result;
  std::mt19937_64 rng(options.seed);
  const double h = options.step;
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& t = handles[k];
    const std::size_t n = t.numel();
    std::vector<std::size_t> coords(n);
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (n > static_cast<std::size_t>(options.samples_per_tensor)) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(static_cast<std::size_t>(options.samples_per_tensor));
    }
    const std::vector<double> analytic =
        t.has_grad() ? std::vector<double>(t.grad().begin(), t.grad().end()) : std::vector<double>(n, 0.0);
    for (std::size_t idx : coords) {
      const double numeric = options.ridders ? ridders(loss_fn, params[k].name, t, idx, h, options.ridders_levels)
                                             : central(loss_fn, params[k].name, t, idx, h);
      const double a = analytic[idx];
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
      const double rel = std::abs(a - numeric) / denom;
      ++result.coordinates_checked;
      if (rel > result.max_rel_error || result.worst_param.empty()) {
        result.max_rel_error = std::max(rel, result.max_rel_error);
        if (rel >= result.max_rel_error) {
          result.worst_param = params[k].name;
          result.worst_index = idx;
          result.worst_analytic = a;
          result.worst_numeric = numeric;
        }
      }
    }
  }
  return result;
}

}  // namespace pstyle
