#include "t2c/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace t2c {
namespace {

template <typename T>
bool any_requires_grad(std::initializer_list<const Tensor<T>*> inputs) {
  return std::any_of(inputs.begin(), inputs.end(),
                     [](const Tensor<T>* t) { return t->requires_grad(); });
}

// Records `rule` for `out` on the active tape when some input needs grads.
// The rule runs only if the output actually received a gradient.
template <typename T, typename Rule>
void attach(Tensor<T>& out, std::initializer_list<const Tensor<T>*> inputs, Rule rule) {
  Tape<T>* tape = Tape<T>::active();
  if (tape == nullptr || !any_requires_grad(inputs)) {
    return;
  }
  tape->record(out, [out, rule = std::move(rule)]() mutable {
    if (out.has_grad()) {
      rule(out.grad());
    }
  });
}

template <typename T>
[[noreturn]] void shape_error(const char* op, const Tensor<T>& a, const Tensor<T>& b) {
  throw DimensionError(std::string(op) + ": incompatible shapes " + shape_str(a.shape()) +
                       " and " + shape_str(b.shape()));
}

enum class Broadcast { exact, row };

template <typename T>
Broadcast broadcast_kind(const char* op, const Tensor<T>& a, const Tensor<T>& b) {
  if (a.cols() == b.cols()) {
    if (a.rows() == b.rows()) {
      return Broadcast::exact;
    }
    if (b.rows() == 1) {
      return Broadcast::row;
    }
  }
  shape_error(op, a, b);
}

// C[m x n] += A[m x k] * B[k x n]
template <typename T>
void gemm_nn(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    T* crow = c + i * n;
    const T* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = arow[p];
      if (av == T{0}) {
        continue;
      }
      const T* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) {
        crow[j] += av * brow[j];
      }
    }
  }
}

// C[m x k] += A[m x n] * B[k x n]^T
template <typename T>
void gemm_nt(const T* a, const T* b, T* c, std::size_t m, std::size_t n, std::size_t k) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* arow = a + i * n;
    T* crow = c + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const T* brow = b + p * n;
      T acc{0};
      for (std::size_t j = 0; j < n; ++j) {
        acc += arow[j] * brow[j];
      }
      crow[p] += acc;
    }
  }
}

// C[k x n] += A[m x k]^T * B[m x n]
template <typename T>
void gemm_tn(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* arow = a + i * k;
    const T* brow = b + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = arow[p];
      if (av == T{0}) {
        continue;
      }
      T* crow = c + p * n;
      for (std::size_t j = 0; j < n; ++j) {
        crow[j] += av * brow[j];
      }
    }
  }
}

template <typename T, typename Fwd, typename Deriv>
Tensor<T> unary(const Tensor<T>& x, Fwd fwd, Deriv deriv) {
  std::vector<T> y(x.numel());
  auto xs = x.data();
  for (std::size_t i = 0; i < y.size(); ++i) {
    y[i] = fwd(xs[i]);
  }
  Tensor<T> out(x.shape(), std::move(y));
  // deriv(x, y) -> dy/dx
  attach(out, {&x}, [x, out_values = out, deriv](std::span<const T> g) mutable {
    auto gx = x.grad_mut();
    auto xs = x.data();
    auto ys = out_values.data();
    for (std::size_t i = 0; i < gx.size(); ++i) {
      gx[i] += g[i] * deriv(xs[i], ys[i]);
    }
  });
  return out;
}

template <typename T>
T stable_sigmoid(T v) {
  if (v >= T{0}) {
    return T{1} / (T{1} + std::exp(-v));
  }
  const T e = std::exp(v);
  return e / (T{1} + e);
}

}  // namespace

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.dim() > 2 || b.dim() > 2 || a.cols() != b.rows()) {
    shape_error("matmul", a, b);
  }
  const std::size_t m = a.rows();
  const std::size_t k = a.cols();
  const std::size_t n = b.cols();
  Tensor<T> out = Tensor<T>::zeros({m, n});
  gemm_nn(a.data().data(), b.data().data(), out.data().data(), m, k, n);
  attach(out, {&a, &b}, [a, b, m, k, n](std::span<const T> g) mutable {
    if (a.requires_grad()) {
      gemm_nt(g.data(), b.data().data(), a.grad_mut().data(), m, n, k);
    }
    if (b.requires_grad()) {
      gemm_tn(a.data().data(), g.data(), b.grad_mut().data(), m, k, n);
    }
  });
  return out;
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  const Broadcast kind = broadcast_kind("add", a, b);
  const std::size_t n = a.cols();
  std::vector<T> y(a.data().begin(), a.data().end());
  auto bs = b.data();
  for (std::size_t i = 0; i < y.size(); ++i) {
    y[i] += bs[kind == Broadcast::exact ? i : i % n];
  }
  Tensor<T> out(a.shape(), std::move(y));
  attach(out, {&a, &b}, [a, b, kind, n](std::span<const T> g) mutable {
    if (a.requires_grad()) {
      auto ga = a.grad_mut();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (b.requires_grad()) {
      auto gb = b.grad_mut();
      for (std::size_t i = 0; i < g.size(); ++i) gb[kind == Broadcast::exact ? i : i % n] += g[i];
    }
  });
  return out;
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  const Broadcast kind = broadcast_kind("sub", a, b);
  const std::size_t n = a.cols();
  std::vector<T> y(a.data().begin(), a.data().end());
  auto bs = b.data();
  for (std::size_t i = 0; i < y.size(); ++i) {
    y[i] -= bs[kind == Broadcast::exact ? i : i % n];
  }
  Tensor<T> out(a.shape(), std::move(y));
  attach(out, {&a, &b}, [a, b, kind, n](std::span<const T> g) mutable {
    if (a.requires_grad()) {
      auto ga = a.grad_mut();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (b.requires_grad()) {
      auto gb = b.grad_mut();
      for (std::size_t i = 0; i < g.size(); ++i) gb[kind == Broadcast::exact ? i : i % n] -= g[i];
    }
  });
  return out;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  const Broadcast kind = broadcast_kind("mul", a, b);
  const std::size_t n = a.cols();
  std::vector<T> y(a.data().begin(), a.data().end());
  auto bs = b.data();
  for (std::size_t i = 0; i < y.size(); ++i) {
    y[i] *= bs[kind == Broadcast::exact ? i : i % n];
  }
  Tensor<T> out(a.shape(), std::move(y));
  attach(out, {&a, &b}, [a, b, kind, n](std::span<const T> g) mutable {
    auto as = a.data();
    auto bs = b.data();
    if (a.requires_grad()) {
      auto ga = a.grad_mut();
      for (std::size_t i = 0; i < g.size(); ++i) {
        ga[i] += g[i] * bs[kind == Broadcast::exact ? i : i % n];
      }
    }
    if (b.requires_grad()) {
      auto gb = b.grad_mut();
      for (std::size_t i = 0; i < g.size(); ++i) {
        gb[kind == Broadcast::exact ? i : i % n] += g[i] * as[i];
      }
    }
  });
  return out;
}

template <typename T>
Tensor<T> tanh(const Tensor<T>& x) {
  return unary(x, [](T v) { return std::tanh(v); }, [](T, T y) { return T{1} - y * y; });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  return unary(x, [](T v) { return stable_sigmoid(v); }, [](T, T y) { return y * (T{1} - y); });
}

template <typename T>
Tensor<T> exp(const Tensor<T>& x) {
  if (!all_finite(x)) {
    throw NumericError("exp: non-finite input");
  }
  Tensor<T> out = unary(x, [](T v) { return std::exp(v); }, [](T, T y) { return y; });
  if (!all_finite(out)) {
    throw NumericError("exp: result overflowed");
  }
  return out;
}

template <typename T>
Tensor<T> log(const Tensor<T>& x) {
  for (T v : x.data()) {
    if (!std::isfinite(v) || v <= T{0}) {
      throw NumericError("log: input outside (0, inf): " + std::to_string(v));
    }
  }
  return unary(x, [](T v) { return std::log(v); }, [](T v, T) { return T{1} / v; });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor) {
  return unary(x, [factor](T v) { return v * factor; }, [factor](T, T) { return factor; });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  T total{0};
  for (T v : x.data()) total += v;
  Tensor<T> out = Tensor<T>::scalar(total);
  attach(out, {&x}, [x](std::span<const T> g) mutable {
    for (T& v : x.grad_mut()) v += g[0];
  });
  return out;
}

namespace {

template <typename T>
void softmax_backward(std::span<const T> y, std::span<const T> g, std::span<T> gx, std::size_t m,
                      std::size_t n) {
  for (std::size_t r = 0; r < m; ++r) {
    const T* yr = y.data() + r * n;
    const T* gr = g.data() + r * n;
    T dot{0};
    for (std::size_t j = 0; j < n; ++j) dot += gr[j] * yr[j];
    T* out = gx.data() + r * n;
    for (std::size_t j = 0; j < n; ++j) out[j] += yr[j] * (gr[j] - dot);
  }
}

}  // namespace

template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& x) {
  const std::size_t m = x.rows();
  const std::size_t n = x.cols();
  std::vector<T> y(x.numel());
  auto xs = x.data();
  for (std::size_t r = 0; r < m; ++r) {
    const T* row = xs.data() + r * n;
    const T mx = *std::max_element(row, row + n);
    T z{0};
    for (std::size_t j = 0; j < n; ++j) {
      y[r * n + j] = std::exp(row[j] - mx);
      z += y[r * n + j];
    }
    for (std::size_t j = 0; j < n; ++j) y[r * n + j] /= z;
  }
  Tensor<T> out(x.shape(), std::move(y));
  attach(out, {&x}, [x, y = out, m, n](std::span<const T> g) mutable {
    softmax_backward<T>(y.data(), g, x.grad_mut(), m, n);
  });
  return out;
}

template <typename T>
Tensor<T> masked_softmax_rows(const Tensor<T>& x, std::span<const std::uint8_t> mask) {
  const std::size_t m = x.rows();
  const std::size_t n = x.cols();
  if (mask.size() != x.numel()) {
    throw DimensionError("masked_softmax_rows: mask has " + std::to_string(mask.size()) +
                         " entries for shape " + shape_str(x.shape()));
  }
  std::vector<T> y(x.numel(), T{0});
  auto xs = x.data();
  for (std::size_t r = 0; r < m; ++r) {
    const T* row = xs.data() + r * n;
    const std::uint8_t* mrow = mask.data() + r * n;
    T mx = -std::numeric_limits<T>::infinity();
    bool any = false;
    for (std::size_t j = 0; j < n; ++j) {
      if (mrow[j]) {
        mx = std::max(mx, row[j]);
        any = true;
      }
    }
    if (!any) {
      throw ContractError("masked_softmax_rows: row " + std::to_string(r) + " is fully masked");
    }
    T z{0};
    for (std::size_t j = 0; j < n; ++j) {
      if (mrow[j]) {
        y[r * n + j] = std::exp(row[j] - mx);
        z += y[r * n + j];
      }
    }
    for (std::size_t j = 0; j < n; ++j) y[r * n + j] /= z;
  }
  Tensor<T> out(x.shape(), std::move(y));
  // Masked entries have y == 0, so the shared softmax backward leaves them at zero.
  attach(out, {&x}, [x, y = out, m, n](std::span<const T> g) mutable {
    softmax_backward<T>(y.data(), g, x.grad_mut(), m, n);
  });
  return out;
}

template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const TokenId> targets,
                        TokenId ignore_id) {
  const std::size_t m = logits.rows();
  const std::size_t v = logits.cols();
  if (targets.size() != m) {
    throw DimensionError("cross_entropy: " + std::to_string(targets.size()) + " targets for logits " +
                         shape_str(logits.shape()));
  }
  std::size_t counted = 0;
  for (TokenId t : targets) {
    if (t == ignore_id) continue;
    if (t < 0 || static_cast<std::size_t>(t) >= v) {
      throw ContractError("cross_entropy: target id " + std::to_string(t) + " outside [0, " +
                          std::to_string(v) + ")");
    }
    ++counted;
  }
  if (counted == 0) {
    throw DegenerateBatchError("cross_entropy: every target equals the ignore id");
  }
  // Softmax of counted rows is cached for the backward pass.
  auto probs = std::make_shared<std::vector<T>>(m * v, T{0});
  auto xs = logits.data();
  T total{0};
  for (std::size_t r = 0; r < m; ++r) {
    if (targets[r] == ignore_id) continue;
    const T* row = xs.data() + r * v;
    const T mx = *std::max_element(row, row + v);
    T z{0};
    T* p = probs->data() + r * v;
    for (std::size_t j = 0; j < v; ++j) {
      p[j] = std::exp(row[j] - mx);
      z += p[j];
    }
    for (std::size_t j = 0; j < v; ++j) p[j] /= z;
    total += -(row[targets[r]] - mx - std::log(z));
  }
  const T inv = T{1} / static_cast<T>(counted);
  Tensor<T> out = Tensor<T>::scalar(total * inv);
  std::vector<TokenId> tgt(targets.begin(), targets.end());
  attach(out, {&logits}, [logits, probs, tgt = std::move(tgt), ignore_id, inv, m, v](
                             std::span<const T> g) mutable {
    auto gl = logits.grad_mut();
    const T s = g[0] * inv;
    for (std::size_t r = 0; r < m; ++r) {
      if (tgt[r] == ignore_id) continue;
      const T* p = probs->data() + r * v;
      T* out = gl.data() + r * v;
      for (std::size_t j = 0; j < v; ++j) out[j] += s * p[j];
      out[tgt[r]] -= s;
    }
  });
  return out;
}

template <typename T>
Tensor<T> slice_cols(const Tensor<T>& x, std::size_t begin, std::size_t width) {
  const std::size_t m = x.rows();
  const std::size_t n = x.cols();
  if (width == 0 || begin + width > n) {
    throw DimensionError("slice_cols: [" + std::to_string(begin) + ", " +
                         std::to_string(begin + width) + ") outside " + shape_str(x.shape()));
  }
  std::vector<T> y(m * width);
  auto xs = x.data();
  for (std::size_t r = 0; r < m; ++r) {
    std::copy_n(xs.data() + r * n + begin, width, y.data() + r * width);
  }
  Tensor<T> out({m, width}, std::move(y));
  attach(out, {&x}, [x, begin, width, m, n](std::span<const T> g) mutable {
    auto gx = x.grad_mut();
    for (std::size_t r = 0; r < m; ++r) {
      for (std::size_t j = 0; j < width; ++j) gx[r * n + begin + j] += g[r * width + j];
    }
  });
  return out;
}

template <typename T>
Tensor<T> slice_rows(const Tensor<T>& x, std::size_t begin, std::size_t count) {
  const std::size_t n = x.cols();
  if (count == 0 || begin + count > x.rows()) {
    throw DimensionError("slice_rows: [" + std::to_string(begin) + ", " +
                         std::to_string(begin + count) + ") outside " + shape_str(x.shape()));
  }
  auto xs = x.data();
  std::vector<T> y(xs.begin() + begin * n, xs.begin() + (begin + count) * n);
  Tensor<T> out({count, n}, std::move(y));
  attach(out, {&x}, [x, begin, n](std::span<const T> g) mutable {
    auto gx = x.grad_mut();
    for (std::size_t i = 0; i < g.size(); ++i) gx[begin * n + i] += g[i];
  });
  return out;
}

template <typename T>
Tensor<T> concat_cols(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) {
    throw ContractError("concat_cols: no inputs");
  }
  const std::size_t m = parts.front().rows();
  std::size_t total = 0;
  for (const auto& p : parts) {
    if (p.rows() != m) shape_error("concat_cols", parts.front(), p);
    total += p.cols();
  }
  std::vector<T> y(m * total);
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const std::size_t w = p.cols();
    for (std::size_t r = 0; r < m; ++r) {
      std::copy_n(p.data().data() + r * w, w, y.data() + r * total + offset);
    }
    offset += w;
  }
  Tensor<T> out({m, total}, std::move(y));
  Tape<T>* tape = Tape<T>::active();
  const bool needs = std::any_of(parts.begin(), parts.end(), [](const auto& p) { return p.requires_grad(); });
  if (tape != nullptr && needs) {
    tape->record(out, [out, parts, m, total]() mutable {
      if (!out.has_grad()) return;
      auto g = out.grad();
      std::size_t offset = 0;
      for (auto& p : parts) {
        const std::size_t w = p.cols();
        if (p.requires_grad()) {
          auto gp = p.grad_mut();
          for (std::size_t r = 0; r < m; ++r) {
            for (std::size_t j = 0; j < w; ++j) gp[r * w + j] += g[r * total + offset + j];
          }
        }
        offset += w;
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> concat_rows(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) {
    throw ContractError("concat_rows: no inputs");
  }
  const std::size_t n = parts.front().cols();
  std::size_t rows = 0;
  for (const auto& p : parts) {
    if (p.cols() != n) shape_error("concat_rows", parts.front(), p);
    rows += p.rows();
  }
  std::vector<T> y;
  y.reserve(rows * n);
  for (const auto& p : parts) {
    y.insert(y.end(), p.data().begin(), p.data().end());
  }
  Tensor<T> out({rows, n}, std::move(y));
  Tape<T>* tape = Tape<T>::active();
  const bool needs = std::any_of(parts.begin(), parts.end(), [](const auto& p) { return p.requires_grad(); });
  if (tape != nullptr && needs) {
    tape->record(out, [out, parts]() mutable {
      if (!out.has_grad()) return;
      auto g = out.grad();
      std::size_t offset = 0;
      for (auto& p : parts) {
        if (p.requires_grad()) {
          auto gp = p.grad_mut();
          for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += g[offset + i];
        }
        offset += p.numel();
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> embedding(const Tensor<T>& table, std::span<const TokenId> ids) {
  const std::size_t vocab = table.rows();
  const std::size_t d = table.cols();
  if (ids.empty()) {
    throw ContractError("embedding: empty id list");
  }
  std::vector<T> y(ids.size() * d);
  auto ts = table.data();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= vocab) {
      throw ContractError("embedding: id " + std::to_string(ids[i]) + " outside table of " +
                          std::to_string(vocab) + " rows");
    }
    std::copy_n(ts.data() + static_cast<std::size_t>(ids[i]) * d, d, y.data() + i * d);
  }
  Tensor<T> out({ids.size(), d}, std::move(y));
  std::vector<TokenId> idv(ids.begin(), ids.end());
  attach(out, {&table}, [table, idv = std::move(idv), d](std::span<const T> g) mutable {
    auto gt = table.grad_mut();
    for (std::size_t i = 0; i < idv.size(); ++i) {
      T* row = gt.data() + static_cast<std::size_t>(idv[i]) * d;
      for (std::size_t j = 0; j < d; ++j) row[j] += g[i * d + j];
    }
  });
  return out;
}

template <typename T>
Tensor<T> mask_rows(const Tensor<T>& x, std::span<const T> mask) {
  const std::size_t m = x.rows();
  const std::size_t n = x.cols();
  if (mask.size() != m) {
    throw DimensionError("mask_rows: " + std::to_string(mask.size()) + " factors for shape " +
                         shape_str(x.shape()));
  }
  std::vector<T> y(x.data().begin(), x.data().end());
  for (std::size_t r = 0; r < m; ++r) {
    for (std::size_t j = 0; j < n; ++j) y[r * n + j] *= mask[r];
  }
  Tensor<T> out(x.shape(), std::move(y));
  std::vector<T> mv(mask.begin(), mask.end());
  attach(out, {&x}, [x, mv = std::move(mv), n](std::span<const T> g) mutable {
    auto gx = x.grad_mut();
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * mv[i / n];
  });
  return out;
}

template <typename T>
Tensor<T> dropout(const Tensor<T>& x, T p, Rng& rng) {
  if (p < T{0} || p >= T{1}) {
    throw ContractError("dropout: probability must lie in [0, 1)");
  }
  if (p == T{0}) {
    return x;
  }
  const T keep_scale = T{1} / (T{1} - p);
  auto factors = std::make_shared<std::vector<T>>(x.numel());
  std::vector<T> y(x.data().begin(), x.data().end());
  for (std::size_t i = 0; i < y.size(); ++i) {
    (*factors)[i] = rng.uniform() < static_cast<double>(p) ? T{0} : keep_scale;
    y[i] *= (*factors)[i];
  }
  Tensor<T> out(x.shape(), std::move(y));
  attach(out, {&x}, [x, factors](std::span<const T> g) mutable {
    auto gx = x.grad_mut();
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * (*factors)[i];
  });
  return out;
}

template <typename T>
Tensor<T> stack_steps(const std::vector<Tensor<T>>& steps) {
  if (steps.empty()) {
    throw ContractError("stack_steps: no inputs");
  }
  const std::size_t b = steps.front().rows();
  const std::size_t d = steps.front().cols();
  const std::size_t s = steps.size();
  for (const auto& st : steps) {
    if (st.rows() != b || st.cols() != d) shape_error("stack_steps", steps.front(), st);
  }
  std::vector<T> y(b * s * d);
  for (std::size_t j = 0; j < s; ++j) {
    auto src = steps[j].data();
    for (std::size_t r = 0; r < b; ++r) {
      std::copy_n(src.data() + r * d, d, y.data() + (r * s + j) * d);
    }
  }
  Tensor<T> out({b, s, d}, std::move(y));
  Tape<T>* tape = Tape<T>::active();
  const bool needs = std::any_of(steps.begin(), steps.end(), [](const auto& p) { return p.requires_grad(); });
  if (tape != nullptr && needs) {
    tape->record(out, [out, steps, b, s, d]() mutable {
      if (!out.has_grad()) return;
      auto g = out.grad();
      for (std::size_t j = 0; j < s; ++j) {
        if (!steps[j].requires_grad()) continue;
        auto gs = steps[j].grad_mut();
        for (std::size_t r = 0; r < b; ++r) {
          for (std::size_t k = 0; k < d; ++k) gs[r * d + k] += g[(r * s + j) * d + k];
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> batched_dot(const Tensor<T>& memory, const Tensor<T>& query) {
  if (memory.dim() != 3 || query.rows() != memory.shape()[0] ||
      query.cols() != memory.shape()[2]) {
    shape_error("batched_dot", memory, query);
  }
  const std::size_t b = memory.shape()[0];
  const std::size_t s = memory.shape()[1];
  const std::size_t d = memory.shape()[2];
  std::vector<T> y(b * s);
  auto ms = memory.data();
  auto qs = query.data();
  for (std::size_t r = 0; r < b; ++r) {
    for (std::size_t j = 0; j < s; ++j) {
      T acc{0};
      for (std::size_t k = 0; k < d; ++k) acc += ms[(r * s + j) * d + k] * qs[r * d + k];
      y[r * s + j] = acc;
    }
  }
  Tensor<T> out({b, s}, std::move(y));
  attach(out, {&memory, &query}, [memory, query, b, s, d](std::span<const T> g) mutable {
    auto ms = memory.data();
    auto qs = query.data();
    if (memory.requires_grad()) {
      auto gm = memory.grad_mut();
      for (std::size_t r = 0; r < b; ++r)
        for (std::size_t j = 0; j < s; ++j)
          for (std::size_t k = 0; k < d; ++k) gm[(r * s + j) * d + k] += g[r * s + j] * qs[r * d + k];
    }
    if (query.requires_grad()) {
      auto gq = query.grad_mut();
      for (std::size_t r = 0; r < b; ++r)
        for (std::size_t j = 0; j < s; ++j)
          for (std::size_t k = 0; k < d; ++k) gq[r * d + k] += g[r * s + j] * ms[(r * s + j) * d + k];
    }
  });
  return out;
}

template <typename T>
Tensor<T> batched_weighted_sum(const Tensor<T>& weights, const Tensor<T>& memory) {
  if (memory.dim() != 3 || weights.rows() != memory.shape()[0] ||
      weights.cols() != memory.shape()[1]) {
    shape_error("batched_weighted_sum", weights, memory);
  }
  const std::size_t b = memory.shape()[0];
  const std::size_t s = memory.shape()[1];
  const std::size_t d = memory.shape()[2];
  std::vector<T> y(b * d, T{0});
  auto ms = memory.data();
  auto ws = weights.data();
  for (std::size_t r = 0; r < b; ++r)
    for (std::size_t j = 0; j < s; ++j) {
      const T w = ws[r * s + j];
      for (std::size_t k = 0; k < d; ++k) y[r * d + k] += w * ms[(r * s + j) * d + k];
    }
  Tensor<T> out({b, d}, std::move(y));
  attach(out, {&weights, &memory}, [weights, memory, b, s, d](std::span<const T> g) mutable {
    auto ms = memory.data();
    auto ws = weights.data();
    if (weights.requires_grad()) {
      auto gw = weights.grad_mut();
      for (std::size_t r = 0; r < b; ++r)
        for (std::size_t j = 0; j < s; ++j) {
          T acc{0};
          for (std::size_t k = 0; k < d; ++k) acc += g[r * d + k] * ms[(r * s + j) * d + k];
          gw[r * s + j] += acc;
        }
    }
    if (memory.requires_grad()) {
      auto gm = memory.grad_mut();
      for (std::size_t r = 0; r < b; ++r)
        for (std::size_t j = 0; j < s; ++j)
          for (std::size_t k = 0; k < d; ++k) gm[(r * s + j) * d + k] += ws[r * s + j] * g[r * d + k];
    }
  });
  return out;
}

template <typename T>
std::vector<TokenId> argmax_rows(const Tensor<T>& x) {
  const std::size_t m = x.rows();
  const std::size_t n = x.cols();
  std::vector<TokenId> best(m);
  auto xs = x.data();
  for (std::size_t r = 0; r < m; ++r) {
    const T* row = xs.data() + r * n;
    // max_element returns the first maximum.
    best[r] = static_cast<TokenId>(std::max_element(row, row + n) - row);
  }
  return best;
}

template <typename T>
bool all_finite(const Tensor<T>& x) {
  return std::all_of(x.data().begin(), x.data().end(), [](T v) { return std::isfinite(v); });
}

#define T2C_INSTANTIATE_OPS(T)                                                                  \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                                \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                   \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                   \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                   \
  template Tensor<T> tanh(const Tensor<T>&);                                                    \
  template Tensor<T> sigmoid(const Tensor<T>&);                                                 \
  template Tensor<T> exp(const Tensor<T>&);                                                     \
  template Tensor<T> log(const Tensor<T>&);                                                     \
  template Tensor<T> scale(const Tensor<T>&, T);                                                \
  template Tensor<T> sum(const Tensor<T>&);                                                     \
  template Tensor<T> softmax_rows(const Tensor<T>&);                                            \
  template Tensor<T> masked_softmax_rows(const Tensor<T>&, std::span<const std::uint8_t>);      \
  template Tensor<T> cross_entropy(const Tensor<T>&, std::span<const TokenId>, TokenId);        \
  template Tensor<T> slice_cols(const Tensor<T>&, std::size_t, std::size_t);                    \
  template Tensor<T> slice_rows(const Tensor<T>&, std::size_t, std::size_t);                    \
  template Tensor<T> concat_cols(const std::vector<Tensor<T>>&);                                \
  template Tensor<T> concat_rows(const std::vector<Tensor<T>>&);                                \
  template Tensor<T> embedding(const Tensor<T>&, std::span<const TokenId>);                     \
  template Tensor<T> mask_rows(const Tensor<T>&, std::span<const T>);                           \
  template Tensor<T> dropout(const Tensor<T>&, T, Rng&);                                        \
  template Tensor<T> stack_steps(const std::vector<Tensor<T>>&);                                \
  template Tensor<T> batched_dot(const Tensor<T>&, const Tensor<T>&);                           \
  template Tensor<T> batched_weighted_sum(const Tensor<T>&, const Tensor<T>&);                  \
  template std::vector<TokenId> argmax_rows(const Tensor<T>&);                                  \
  template bool all_finite(const Tensor<T>&);

T2C_INSTANTIATE_OPS(float)
T2C_INSTANTIATE_OPS(double)

}  // namespace t2c
