#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "pstyle/params.hpp"

namespace pstyle {

struct GradCheckOptions {
  double step = 1e-5;
  /// Ridders' extrapolation: central differences at step, step/1.4, ...
  /// combined by Richardson extrapolation, keeping the estimate with the
  /// smallest error bound. `step` is then the initial (largest) step.
  bool ridders = false;
  int ridders_levels = 10;
  /// Coordinates sampled per tensor; tensors smaller than this are checked exhaustively.
  int samples_per_tensor = 6;
  std::uint64_t seed = 7;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t coordinates_checked = 0;
};

class GradCheckError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Compares reverse-mode gradients of `loss_fn` against central differences
/// (f(p+h) - f(p-h)) / 2h, optionally refined by Ridders' method. Relative error per coordinate is
/// |a - n| / max(|a|, |n|, 1e-8). `loss_fn` must be deterministic; it is
/// evaluated once under a recording graph and twice per sampled coordinate
/// without one.
GradCheckResult grad_check(const std::function<Tensor<double>()>& loss_fn,
                           std::span<const NamedTensor<double>> params, const GradCheckOptions& options = {});

}  // namespace pstyle
