#include "pstyle/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>

namespace pstyle {

namespace {

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<Mat<T>>;
template <typename T>
using CMatMap = Eigen::Map<const Mat<T>>;

template <typename T>
CMatMap<T> cmat(const Tensor<T>& t) {
  return CMatMap<T>(t.data().data(), t.rows(), t.cols());
}
template <typename T>
MatMap<T> gmat(const Tensor<T>& t) {
  return MatMap<T>(t.grad_mut().data(), t.rows(), t.cols());
}
template <typename T>
CMatMap<T> cgmat(const Tensor<T>& t) {
  return CMatMap<T>(t.grad().data(), t.rows(), t.cols());
}

template <typename T>
bool recording(std::initializer_list<const Tensor<T>*> inputs) {
  if (Graph<T>::active() == nullptr) return false;
  for (const auto* t : inputs) {
    if (t->requires_grad()) return true;
  }
  return false;
}

template <typename T>
void require_matrix(std::string_view op, const Tensor<T>& t) {
  if (t.ndim() > 2) throw ShapeError(std::string(op) + ": expected a matrix, got " + shape_str(t.shape()));
}

template <typename T>
Tensor<T> finish(std::string_view op, std::vector<Tensor<T>> inputs, Tensor<T> out,
                 typename Graph<T>::BackwardFn fn) {
  out.set_requires_grad(true);
  Graph<T>::active()->record(op, std::move(inputs), out, std::move(fn));
  return out;
}

// True when `b` is a single row matching the columns of `a` but not a's shape.
template <typename T>
bool row_broadcast(std::string_view op, const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() == b.shape()) return false;
  if (b.rows() == 1 && b.ndim() <= 2 && b.cols() == a.cols() && a.ndim() >= 1) return true;
  throw ShapeError(op, a.shape(), b.shape());
}

}  // namespace

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  require_matrix("matmul", a);
  require_matrix("matmul", b);
  if (b.ndim() != 2 || a.cols() != b.rows()) throw ShapeError("matmul", a.shape(), b.shape());
  const int m = a.rows(), n = b.cols();
  auto out = Tensor<T>::zeros({m, n});
  MatMap<T>(out.data_mut().data(), m, n).noalias() = cmat(a) * cmat(b);
  if (!recording({&a, &b})) return out;
  return finish<T>("matmul", {a, b}, out, [a, b, out]() mutable {
    if (a.requires_grad()) gmat(a).noalias() += cgmat(out) * cmat(b).transpose();
    if (b.requires_grad()) gmat(b).noalias() += cmat(a).transpose() * cgmat(out);
  });
}

template <typename T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b) {
  require_matrix("matmul_nt", a);
  require_matrix("matmul_nt", b);
  if (a.cols() != b.cols()) throw ShapeError("matmul_nt", a.shape(), b.shape());
  const int m = a.rows(), n = b.rows();
  auto out = Tensor<T>::zeros({m, n});
  MatMap<T>(out.data_mut().data(), m, n).noalias() = cmat(a) * cmat(b).transpose();
  if (!recording({&a, &b})) return out;
  return finish<T>("matmul_nt", {a, b}, out, [a, b, out]() mutable {
    if (a.requires_grad()) gmat(a).noalias() += cgmat(out) * cmat(b);
    if (b.requires_grad()) gmat(b).noalias() += cgmat(out).transpose() * cmat(a);
  });
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  const bool bcast = row_broadcast("add", a, b);
  auto out = a.clone();
  out.set_requires_grad(false);
  auto od = out.data_mut();
  const auto bd = b.data();
  if (bcast) {
    const std::size_t n = static_cast<std::size_t>(a.cols());
    for (std::size_t i = 0; i < od.size(); ++i) od[i] += bd[i % n];
  } else {
    for (std::size_t i = 0; i < od.size(); ++i) od[i] += bd[i];
  }
  if (!recording({&a, &b})) return out;
  return finish<T>("add", {a, b}, out, [a, b, out, bcast]() mutable {
    const auto g = out.grad();
    if (a.requires_grad()) {
      auto ga = a.grad_mut();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (b.requires_grad()) {
      auto gb = b.grad_mut();
      if (bcast) {
        const std::size_t n = gb.size();
        for (std::size_t i = 0; i < g.size(); ++i) gb[i % n] += g[i];
      } else {
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
      }
    }
  });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) throw ShapeError("sub", a.shape(), b.shape());
  auto out = a.clone();
  out.set_requires_grad(false);
  auto od = out.data_mut();
  const auto bd = b.data();
  for (std::size_t i = 0; i < od.size(); ++i) od[i] -= bd[i];
  if (!recording({&a, &b})) return out;
  return finish<T>("sub", {a, b}, out, [a, b, out]() mutable {
    const auto g = out.grad();
    if (a.requires_grad()) {
      auto ga = a.grad_mut();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (b.requires_grad()) {
      auto gb = b.grad_mut();
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  const bool bcast = row_broadcast("mul", a, b);
  const std::size_t n = bcast ? static_cast<std::size_t>(a.cols()) : a.numel();
  auto out = a.clone();
  out.set_requires_grad(false);
  auto od = out.data_mut();
  const auto bd = b.data();
  for (std::size_t i = 0; i < od.size(); ++i) od[i] *= bd[i % n];
  if (!recording({&a, &b})) return out;
  return finish<T>("mul", {a, b}, out, [a, b, out, n]() mutable {
    const auto g = out.grad();
    const auto ad = a.data();
    const auto bd2 = b.data();
    if (a.requires_grad()) {
      auto ga = a.grad_mut();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bd2[i % n];
    }
    if (b.requires_grad()) {
      auto gb = b.grad_mut();
      for (std::size_t i = 0; i < g.size(); ++i) gb[i % n] += g[i] * ad[i];
    }
  });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
  auto out = a.clone();
  out.set_requires_grad(false);
  for (auto& v : out.data_mut()) v *= factor;
  if (!recording({&a})) return out;
  return finish<T>("scale", {a}, out, [a, out, factor]() mutable {
    const auto g = out.grad();
    auto ga = a.grad_mut();
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * factor;
  });
}

template <typename T>
Tensor<T> tanh(const Tensor<T>& a) {
  auto out = a.clone();
  out.set_requires_grad(false);
  for (auto& v : out.data_mut()) v = std::tanh(v);
  if (!recording({&a})) return out;
  return finish<T>("tanh", {a}, out, [a, out]() mutable {
    const auto g = out.grad();
    const auto y = out.data();
    auto ga = a.grad_mut();
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * (T(1) - y[i] * y[i]);
  });
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& a) {
  constexpr T c = T(0.7978845608028654);  // sqrt(2/pi)
  constexpr T k = T(0.044715);
  auto out = a.clone();
  out.set_requires_grad(false);
  for (auto& v : out.data_mut()) v = T(0.5) * v * (T(1) + std::tanh(c * (v + k * v * v * v)));
  if (!recording({&a})) return out;
  return finish<T>("gelu", {a}, out, [a, out]() mutable {
    const auto g = out.grad();
    const auto x = a.data();
    auto ga = a.grad_mut();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const T xi = x[i];
      const T th = std::tanh(c * (xi + k * xi * xi * xi));
      const T d = T(0.5) * (T(1) + th) + T(0.5) * xi * (T(1) - th * th) * c * (T(1) + T(3) * k * xi * xi);
      ga[i] += g[i] * d;
    }
  });
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& a) {
  const int m = a.rows(), n = a.cols();
  auto out = a.clone();
  out.set_requires_grad(false);
  auto od = out.data_mut();
  for (int r = 0; r < m; ++r) {
    T* row = od.data() + static_cast<std::size_t>(r) * n;
    const T mx = *std::max_element(row, row + n);
    T total = 0;
    for (int j = 0; j < n; ++j) {
      row[j] = std::exp(row[j] - mx);
      total += row[j];
    }
    for (int j = 0; j < n; ++j) row[j] /= total;
  }
  if (!recording({&a})) return out;
  return finish<T>("softmax", {a}, out, [a, out, m, n]() mutable {
    const auto g = out.grad();
    const auto y = out.data();
    auto ga = a.grad_mut();
    for (int r = 0; r < m; ++r) {
      const std::size_t base = static_cast<std::size_t>(r) * n;
      T dot = 0;
      for (int j = 0; j < n; ++j) dot += g[base + j] * y[base + j];
      for (int j = 0; j < n; ++j) ga[base + j] += y[base + j] * (g[base + j] - dot);
    }
  });
}

template <typename T>
Tensor<T> log_softmax(const Tensor<T>& a) {
  const int m = a.rows(), n = a.cols();
  auto out = a.clone();
  out.set_requires_grad(false);
  auto od = out.data_mut();
  for (int r = 0; r < m; ++r) {
    T* row = od.data() + static_cast<std::size_t>(r) * n;
    const T mx = *std::max_element(row, row + n);
    T total = 0;
    for (int j = 0; j < n; ++j) total += std::exp(row[j] - mx);
    const T lse = mx + std::log(total);
    for (int j = 0; j < n; ++j) row[j] -= lse;
  }
  if (!recording({&a})) return out;
  return finish<T>("log_softmax", {a}, out, [a, out, m, n]() mutable {
    const auto g = out.grad();
    const auto y = out.data();
    auto ga = a.grad_mut();
    for (int r = 0; r < m; ++r) {
      const std::size_t base = static_cast<std::size_t>(r) * n;
      T gsum = 0;
      for (int j = 0; j < n; ++j) gsum += g[base + j];
      for (int j = 0; j < n; ++j) ga[base + j] += g[base + j] - std::exp(y[base + j]) * gsum;
    }
  });
}

template <typename T>
Tensor<T> causal_mask(const Tensor<T>& scores, int prefix_len, int query_offset) {
  require_matrix("causal_mask", scores);
  const int m = scores.rows(), n = scores.cols();
  if (prefix_len < 0 || prefix_len > n) {
    throw ShapeError("causal_mask: prefix length " + std::to_string(prefix_len) + " exceeds key count " +
                     std::to_string(n));
  }
  auto out = scores.clone();
  out.set_requires_grad(false);
  auto od = out.data_mut();
  constexpr T ninf = -std::numeric_limits<T>::infinity();
  for (int r = 0; r < m; ++r) {
    const int visible = prefix_len + query_offset + r + 1;
    for (int j = std::max(visible, 0); j < n; ++j) od[static_cast<std::size_t>(r) * n + j] = ninf;
  }
  if (!recording({&scores})) return out;
  return finish<T>("causal_mask", {scores}, out, [scores, out, m, n, prefix_len, query_offset]() mutable {
    const auto g = out.grad();
    auto ga = scores.grad_mut();
    for (int r = 0; r < m; ++r) {
      const int visible = std::min(prefix_len + query_offset + r + 1, n);
      for (int j = 0; j < visible; ++j) ga[static_cast<std::size_t>(r) * n + j] += g[static_cast<std::size_t>(r) * n + j];
    }
  });
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps) {
  const int m = x.rows(), n = x.cols();
  if (static_cast<int>(gamma.numel()) != n) throw ShapeError("layer_norm", x.shape(), gamma.shape());
  if (static_cast<int>(beta.numel()) != n) throw ShapeError("layer_norm", x.shape(), beta.shape());
  auto out = Tensor<T>::zeros(x.shape());
  std::vector<T> xhat(x.numel());
  std::vector<T> rstd(static_cast<std::size_t>(m));
  const auto xd = x.data();
  const auto gd = gamma.data();
  const auto bd = beta.data();
  auto od = out.data_mut();
  for (int r = 0; r < m; ++r) {
    const std::size_t base = static_cast<std::size_t>(r) * n;
    T mean = 0;
    for (int j = 0; j < n; ++j) mean += xd[base + j];
    mean /= T(n);
    T var = 0;
    for (int j = 0; j < n; ++j) {
      const T d = xd[base + j] - mean;
      var += d * d;
    }
    var /= T(n);
    const T rs = T(1) / std::sqrt(var + eps);
    rstd[r] = rs;
    for (int j = 0; j < n; ++j) {
      xhat[base + j] = (xd[base + j] - mean) * rs;
      od[base + j] = xhat[base + j] * gd[j] + bd[j];
    }
  }
  if (!recording({&x, &gamma, &beta})) return out;
  return finish<T>("layer_norm", {x, gamma, beta}, out,
                   [x, gamma, beta, out, m, n, xhat = std::move(xhat), rstd = std::move(rstd)]() mutable {
                     const auto g = out.grad();
                     const auto gd2 = gamma.data();
                     if (gamma.requires_grad()) {
                       auto gg = gamma.grad_mut();
                       for (std::size_t i = 0; i < g.size(); ++i) gg[i % n] += g[i] * xhat[i];
                     }
                     if (beta.requires_grad()) {
                       auto gb = beta.grad_mut();
                       for (std::size_t i = 0; i < g.size(); ++i) gb[i % n] += g[i];
                     }
                     if (x.requires_grad()) {
                       auto gx = x.grad_mut();
                       for (int r = 0; r < m; ++r) {
                         const std::size_t base = static_cast<std::size_t>(r) * n;
                         T mean_d = 0, mean_dx = 0;
                         for (int j = 0; j < n; ++j) {
                           const T d = g[base + j] * gd2[j];
                           mean_d += d;
                           mean_dx += d * xhat[base + j];
                         }
                         mean_d /= T(n);
                         mean_dx /= T(n);
                         for (int j = 0; j < n; ++j) {
                           const T d = g[base + j] * gd2[j];
                           gx[base + j] += rstd[r] * (d - mean_d - xhat[base + j] * mean_dx);
                         }
                       }
                     }
                   });
}

template <typename T>
Tensor<T> embedding(const Tensor<T>& table, std::span<const int> ids) {
  require_matrix("embedding", table);
  const int vocab = table.rows(), d = table.cols();
  const int n = static_cast<int>(ids.size());
  auto out = Tensor<T>::zeros({n, d});
  auto od = out.data_mut();
  const auto td = table.data();
  for (int i = 0; i < n; ++i) {
    if (ids[i] < 0 || ids[i] >= vocab) {
      throw std::out_of_range("embedding: token id " + std::to_string(ids[i]) + " outside vocabulary of size " +
                              std::to_string(vocab));
    }
    std::copy_n(td.begin() + static_cast<std::ptrdiff_t>(ids[i]) * d, d, od.begin() + static_cast<std::ptrdiff_t>(i) * d);
  }
  if (!recording({&table})) return out;
  std::vector<int> idv(ids.begin(), ids.end());
  return finish<T>("embedding", {table}, out, [table, out, d, idv = std::move(idv)]() mutable {
    const auto g = out.grad();
    auto gt = table.grad_mut();
    for (std::size_t i = 0; i < idv.size(); ++i) {
      for (int j = 0; j < d; ++j) gt[static_cast<std::size_t>(idv[i]) * d + j] += g[i * d + j];
    }
  });
}

template <typename T>
Tensor<T> concat_rows(std::span<const Tensor<T>> parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no operands");
  const int n = parts[0].cols();
  int m = 0;
  bool any_grad = false;
  for (const auto& p : parts) {
    if (p.cols() != n) throw ShapeError("concat_rows", parts[0].shape(), p.shape());
    m += p.rows();
    any_grad = any_grad || p.requires_grad();
  }
  auto out = Tensor<T>::zeros({m, n});
  auto od = out.data_mut();
  std::size_t off = 0;
  for (const auto& p : parts) {
    std::copy(p.data().begin(), p.data().end(), od.begin() + static_cast<std::ptrdiff_t>(off));
    off += p.numel();
  }
  if (!any_grad || Graph<T>::active() == nullptr) return out;
  std::vector<Tensor<T>> ins(parts.begin(), parts.end());
  return finish<T>("concat_rows", ins, out, [ins, out]() mutable {
    const auto g = out.grad();
    std::size_t off2 = 0;
    for (auto& p : ins) {
      if (p.requires_grad()) {
        auto gp = p.grad_mut();
        for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += g[off2 + i];
      }
      off2 += p.numel();
    }
  });
}

template <typename T>
Tensor<T> concat_cols(std::span<const Tensor<T>> parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no operands");
  const int m = parts[0].rows();
  int n = 0;
  bool any_grad = false;
  for (const auto& p : parts) {
    if (p.rows() != m) throw ShapeError("concat_cols", parts[0].shape(), p.shape());
    n += p.cols();
    any_grad = any_grad || p.requires_grad();
  }
  auto out = Tensor<T>::zeros({m, n});
  auto od = out.data_mut();
  int col = 0;
  for (const auto& p : parts) {
    const int w = p.cols();
    const auto pd = p.data();
    for (int r = 0; r < m; ++r) {
      std::copy_n(pd.begin() + static_cast<std::ptrdiff_t>(r) * w, w,
                  od.begin() + static_cast<std::ptrdiff_t>(r) * n + col);
    }
    col += w;
  }
  if (!any_grad || Graph<T>::active() == nullptr) return out;
  std::vector<Tensor<T>> ins(parts.begin(), parts.end());
  return finish<T>("concat_cols", ins, out, [ins, out, m, n]() mutable {
    const auto g = out.grad();
    int col2 = 0;
    for (auto& p : ins) {
      const int w = p.cols();
      if (p.requires_grad()) {
        auto gp = p.grad_mut();
        for (int r = 0; r < m; ++r) {
          for (int j = 0; j < w; ++j) gp[static_cast<std::size_t>(r) * w + j] += g[static_cast<std::size_t>(r) * n + col2 + j];
        }
      }
      col2 += w;
    }
  });
}

template <typename T>
Tensor<T> slice_rows(const Tensor<T>& x, int start, int count) {
  const int m = x.rows(), n = x.cols();
  if (start < 0 || count < 0 || start + count > m) {
    throw ShapeError("slice_rows: rows [" + std::to_string(start) + ", " + std::to_string(start + count) +
                     ") outside " + shape_str(x.shape()));
  }
  auto out = Tensor<T>::zeros({count, n});
  std::copy_n(x.data().begin() + static_cast<std::ptrdiff_t>(start) * n, static_cast<std::size_t>(count) * n,
              out.data_mut().begin());
  if (!recording({&x})) return out;
  return finish<T>("slice_rows", {x}, out, [x, out, start, n]() mutable {
    const auto g = out.grad();
    auto gx = x.grad_mut();
    const std::size_t base = static_cast<std::size_t>(start) * n;
    for (std::size_t i = 0; i < g.size(); ++i) gx[base + i] += g[i];
  });
}

template <typename T>
Tensor<T> slice_cols(const Tensor<T>& x, int start, int count) {
  const int m = x.rows(), n = x.cols();
  if (start < 0 || count < 0 || start + count > n) {
    throw ShapeError("slice_cols: columns [" + std::to_string(start) + ", " + std::to_string(start + count) +
                     ") outside " + shape_str(x.shape()));
  }
  auto out = Tensor<T>::zeros({m, count});
  auto od = out.data_mut();
  const auto xd = x.data();
  for (int r = 0; r < m; ++r) {
    std::copy_n(xd.begin() + static_cast<std::ptrdiff_t>(r) * n + start, count,
                od.begin() + static_cast<std::ptrdiff_t>(r) * count);
  }
  if (!recording({&x})) return out;
  return finish<T>("slice_cols", {x}, out, [x, out, start, m, n, count]() mutable {
    const auto g = out.grad();
    auto gx = x.grad_mut();
    for (int r = 0; r < m; ++r) {
      for (int j = 0; j < count; ++j) {
        gx[static_cast<std::size_t>(r) * n + start + j] += g[static_cast<std::size_t>(r) * count + j];
      }
    }
  });
}

template <typename T>
Tensor<T> repeat_rows(const Tensor<T>& row, int count) {
  if (row.rows() != 1) throw ShapeError("repeat_rows: expected a single row, got " + shape_str(row.shape()));
  const int n = row.cols();
  auto out = Tensor<T>::zeros({count, n});
  auto od = out.data_mut();
  for (int r = 0; r < count; ++r) std::copy(row.data().begin(), row.data().end(), od.begin() + static_cast<std::ptrdiff_t>(r) * n);
  if (!recording({&row})) return out;
  return finish<T>("repeat_rows", {row}, out, [row, out, n]() mutable {
    const auto g = out.grad();
    auto gr = row.grad_mut();
    for (std::size_t i = 0; i < g.size(); ++i) gr[i % n] += g[i];
  });
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) throw ShapeError("reshape", x.shape(), shape);
  auto out = Tensor<T>(std::move(shape), std::vector<T>(x.data().begin(), x.data().end()));
  if (!recording({&x})) return out;
  return finish<T>("reshape", {x}, out, [x, out]() mutable {
    const auto g = out.grad();
    auto gx = x.grad_mut();
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
  });
}

template <typename T>
Tensor<T> mean_rows(const Tensor<T>& x) {
  const int m = x.rows(), n = x.cols();
  if (m == 0) throw ShapeError("mean_rows: empty operand " + shape_str(x.shape()));
  auto out = Tensor<T>::zeros({1, n});
  auto od = out.data_mut();
  const auto xd = x.data();
  for (int r = 0; r < m; ++r) {
    for (int j = 0; j < n; ++j) od[j] += xd[static_cast<std::size_t>(r) * n + j];
  }
  for (auto& v : od) v /= T(m);
  if (!recording({&x})) return out;
  return finish<T>("mean_rows", {x}, out, [x, out, m, n]() mutable {
    const auto g = out.grad();
    auto gx = x.grad_mut();
    for (int r = 0; r < m; ++r) {
      for (int j = 0; j < n; ++j) gx[static_cast<std::size_t>(r) * n + j] += g[j] / T(m);
    }
  });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  T total = 0;
  for (T v : x.data()) total += v;
  auto out = Tensor<T>::scalar(total);
  if (!recording({&x})) return out;
  return finish<T>("sum", {x}, out, [x, out]() mutable {
    const T g = out.grad()[0];
    for (auto& v : x.grad_mut()) v += g;
  });
}

template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const int> targets) {
  const int m = logits.rows(), n = logits.cols();
  if (static_cast<int>(targets.size()) != m) {
    throw ShapeError("cross_entropy: " + std::to_string(targets.size()) + " targets for logits " +
                     shape_str(logits.shape()));
  }
  const auto ld = logits.data();
  std::vector<T> probs(logits.numel());
  T total = 0;
  for (int r = 0; r < m; ++r) {
    if (targets[r] < 0 || targets[r] >= n) {
      throw std::out_of_range("cross_entropy: target " + std::to_string(targets[r]) + " outside " +
                              std::to_string(n) + " classes");
    }
    const std::size_t base = static_cast<std::size_t>(r) * n;
    T mx = ld[base];
    for (int j = 1; j < n; ++j) mx = std::max(mx, ld[base + j]);
    T z = 0;
    for (int j = 0; j < n; ++j) {
      probs[base + j] = std::exp(ld[base + j] - mx);
      z += probs[base + j];
    }
    for (int j = 0; j < n; ++j) probs[base + j] /= z;
    total += mx + std::log(z) - ld[base + targets[r]];
  }
  auto out = Tensor<T>::scalar(total);
  if (!recording({&logits})) return out;
  std::vector<int> tv(targets.begin(), targets.end());
  return finish<T>("cross_entropy", {logits}, out,
                   [logits, out, n, tv = std::move(tv), probs = std::move(probs)]() mutable {
                     const T g = out.grad()[0];
                     auto gl = logits.grad_mut();
                     for (std::size_t i = 0; i < probs.size(); ++i) gl[i] += g * probs[i];
                     for (std::size_t r = 0; r < tv.size(); ++r) gl[r * n + tv[r]] -= g;
                   });
}

template <typename T>
Tensor<T> straight_through(const Tensor<T>& probs, std::span<const int> ids) {
  const int m = probs.rows(), n = probs.cols();
  if (static_cast<int>(ids.size()) != m) throw std::invalid_argument("straight_through: one id per row");
  auto out = Tensor<T>::zeros({m, n});
  for (int r = 0; r < m; ++r) {
    if (ids[r] < 0 || ids[r] >= n) throw std::out_of_range("straight_through: id out of range");
    out.data_mut()[static_cast<std::size_t>(r) * n + ids[r]] = T(1);
  }
  if (!recording({&probs})) return out;
  return finish<T>("straight_through", {probs}, out, [probs, out]() mutable {
    const auto g = out.grad();
    auto gp = probs.grad_mut();
    for (std::size_t i = 0; i < g.size(); ++i) gp[i] += g[i];
  });
}

template <typename T>
Tensor<T> record_custom(std::string_view name, std::vector<Tensor<T>> inputs, Tensor<T> output,
                        typename Graph<T>::BackwardFn backward) {
  if (Graph<T>::active() == nullptr) return output;
  bool any = false;
  for (const auto& t : inputs) any = any || t.requires_grad();
  if (!any) return output;
  return finish<T>(name, std::move(inputs), std::move(output), std::move(backward));
}

#define PSTYLE_INSTANTIATE(T)                                                                    \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                                 \
  template Tensor<T> matmul_nt(const Tensor<T>&, const Tensor<T>&);                              \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                    \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                    \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                    \
  template Tensor<T> scale(const Tensor<T>&, T);                                                 \
  template Tensor<T> tanh(const Tensor<T>&);                                                     \
  template Tensor<T> gelu(const Tensor<T>&);                                                     \
  template Tensor<T> softmax(const Tensor<T>&);                                                  \
  template Tensor<T> log_softmax(const Tensor<T>&);                                              \
  template Tensor<T> causal_mask(const Tensor<T>&, int, int);                                    \
  template Tensor<T> layer_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);        \
  template Tensor<T> embedding(const Tensor<T>&, std::span<const int>);                          \
  template Tensor<T> concat_rows(std::span<const Tensor<T>>);                                    \
  template Tensor<T> concat_cols(std::span<const Tensor<T>>);                                    \
  template Tensor<T> slice_rows(const Tensor<T>&, int, int);                                     \
  template Tensor<T> slice_cols(const Tensor<T>&, int, int);                                     \
  template Tensor<T> repeat_rows(const Tensor<T>&, int);                                         \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                                           \
  template Tensor<T> mean_rows(const Tensor<T>&);                                                \
  template Tensor<T> sum(const Tensor<T>&);                                                      \
  template Tensor<T> cross_entropy(const Tensor<T>&, std::span<const int>);                      \
  template Tensor<T> straight_through(const Tensor<T>&, std::span<const int>);                  \
  template Tensor<T> record_custom(std::string_view, std::vector<Tensor<T>>, Tensor<T>,          \
                                   typename Graph<T>::BackwardFn);

PSTYLE_INSTANTIATE(float)
PSTYLE_INSTANTIATE(double)

#undef PSTYLE_INSTANTIATE

}  // namespace pstyle
