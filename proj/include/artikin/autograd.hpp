#pragma once

// Minimal reverse-mode differentiation over dense double tensors. Every tensor is a
// row-major array; most ops treat it as a matrix [rows, cols] with cols = last dim.
// Feature maps use [B, H, W, C] layout.

#include <Eigen/Dense>

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

namespace artikin::ag {

using Shape = std::vector<std::int64_t>;

inline std::int64_t numel_of(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::int64_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "," : "") + std::to_string(s[i]);
  return out + "]";
}

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;
  bool requires_grad = false;

  std::vector<double>& ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
    return grad;
  }
};

namespace detail {
inline bool& grad_enabled_flag() {
  thread_local bool enabled = true;
  return enabled;
}
}  // namespace detail

/// Disables graph recording in scope.
class NoGradGuard {
 public:
  NoGradGuard() : prev_(detail::grad_enabled_flag()) { detail::grad_enabled_flag() = false; }
  ~NoGradGuard() { detail::grad_enabled_flag() = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

inline bool grad_enabled() { return detail::grad_enabled_flag(); }

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node> n) : node_(std::move(n)) {}

  static Tensor constant(Shape shape, std::vector<double> value) {
    if (numel_of(shape) != std::int64_t(value.size()))
      throw std::invalid_argument("tensor value size does not match shape " + shape_str(shape));
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->value = std::move(value);
    return Tensor(std::move(n));
  }
  static Tensor constant(Shape shape, double fill = 0.0) {
    const auto count = numel_of(shape);
    return constant(std::move(shape), std::vector<double>(std::size_t(count), fill));
  }
  static Tensor scalar(double v) { return constant({1}, std::vector<double>{v}); }
  static Tensor parameter(Shape shape, std::vector<double> value) {
    Tensor t = constant(std::move(shape), std::move(value));
    t.node_->requires_grad = true;
    return t;
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::int64_t dim(int i) const { return node_->shape[i < 0 ? node_->shape.size() + i : i]; }
  std::int64_t numel() const { return std::int64_t(node_->value.size()); }
  std::int64_t cols() const { return node_->shape.empty() ? 1 : node_->shape.back(); }
  std::int64_t rows() const { return numel() / std::max<std::int64_t>(cols(), 1); }
  bool requires_grad() const { return node_->requires_grad; }

  std::span<const double> data() const { return node_->value; }
  std::span<double> mutable_data() { return node_->value; }
  const std::vector<double>& values() const { return node_->value; }
  std::span<const double> grad() const { return node_->grad; }
  bool has_grad() const { return node_->grad.size() == node_->value.size(); }
  double item() const { return node_->value.at(0); }
  double operator[](std::size_t i) const { return node_->value[i]; }

  void zero_grad() { node_->grad.assign(node_->value.size(), 0.0); }
  Tensor detach() const { return constant(shape(), node_->value); }

  Node& node() const { return *node_; }
  const std::shared_ptr<Node>& ptr() const { return node_; }

  /// Accumulates d(this)/d(leaf) into every reachable tensor that requires grad.
  void backward() const;

 private:
  std::shared_ptr<Node> node_;
};

/// Creates the result of an op. The backward callback receives the result node with its
/// grad populated and adds into `self.parents[i]->grad` for each input that requires grad.
inline Tensor make_op(Shape shape, std::vector<double> value, std::vector<Tensor> inputs, std::function<void(Node&)> bw) {
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  if (grad_enabled()) {
    bool any = false;
    for (const Tensor& t : inputs) any = any || t.requires_grad();
    if (any) {
      n->requires_grad = true;
      for (const Tensor& t : inputs) n->parents.push_back(t.ptr());
      n->backward_fn = std::move(bw);
    }
  }
  return Tensor(std::move(n));
}

inline void Tensor::backward() const {
  if (!node_->requires_grad) return;
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, bool>> stack{{node_.get(), false}};
  while (!stack.empty()) {
    auto [n, expanded] = stack.back();
    stack.pop_back();
    if (expanded) {
      order.push_back(n);
      continue;
    }
    if (!seen.insert(n).second) continue;
    stack.push_back({n, true});
    for (const auto& p : n->parents)
      if (p->requires_grad && !seen.count(p.get())) stack.push_back({p.get(), false});
  }
  auto& g = node_->ensure_grad();
  std::fill(g.begin(), g.end(), 0.0);
  g[0] = 1.0;
  if (g.size() != 1) std::fill(g.begin(), g.end(), 1.0);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (!n->backward_fn || n->grad.empty()) continue;
    for (const auto& p : n->parents)
      if (p->requires_grad) p->ensure_grad();
    n->backward_fn(*n);
  }
}

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

// ---------------------------------------------------------------- elementwise

enum class Broadcast { Same, Row, Scalar };

inline Broadcast broadcast_kind(const Tensor& a, const Tensor& b, const char* op) {
  if (b.numel() == a.numel() && b.shape() == a.shape()) return Broadcast::Same;
  if (b.numel() == 1) return Broadcast::Scalar;
  if (b.numel() == a.cols()) return Broadcast::Row;
  throw std::invalid_argument(std::string(op) + ": incompatible shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
}

inline std::size_t bindex(Broadcast k, std::size_t i, std::size_t cols) {
  switch (k) {
    case Broadcast::Same: return i;
    case Broadcast::Row: return i % cols;
    case Broadcast::Scalar: return 0;
  }
  return i;
}

/// a + b, with b broadcast as a row vector over a's last dim or as a scalar.
inline Tensor add(const Tensor& a, const Tensor& b) {
  const Broadcast k = broadcast_kind(a, b, "add");
  const std::size_t n = a.numel(), cols = a.cols();
  std::vector<double> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = a[i] + b[bindex(k, i, cols)];
  return make_op(a.shape(), std::move(v), {a, b}, [k, n, cols](Node& self) {
    auto& ga = self.parents[0];
    auto& gb = self.parents[1];
    if (ga->requires_grad)
      for (std::size_t i = 0; i < n; ++i) ga->grad[i] += self.grad[i];
    if (gb->requires_grad)
      for (std::size_t i = 0; i < n; ++i) gb->grad[bindex(k, i, cols)] += self.grad[i];
  });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  const Broadcast k = broadcast_kind(a, b, "mul");
  const std::size_t n = a.numel(), cols = a.cols();
  std::vector<double> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = a[i] * b[bindex(k, i, cols)];
  return make_op(a.shape(), std::move(v), {a, b}, [k, n, cols](Node& self) {
    auto& pa = self.parents[0];
    auto& pb = self.parents[1];
    if (pa->requires_grad)
      for (std::size_t i = 0; i < n; ++i) pa->grad[i] += self.grad[i] * pb->value[bindex(k, i, cols)];
    if (pb->requires_grad)
      for (std::size_t i = 0; i < n; ++i) pb->grad[bindex(k, i, cols)] += self.grad[i] * pa->value[i];
  });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  const Broadcast k = broadcast_kind(a, b, "sub");
  const std::size_t n = a.numel(), cols = a.cols();
  std::vector<double> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = a[i] - b[bindex(k, i, cols)];
  return make_op(a.shape(), std::move(v), {a, b}, [k, n, cols](Node& self) {
    auto& pa = self.parents[0];
    auto& pb = self.parents[1];
    if (pa->requires_grad)
      for (std::size_t i = 0; i < n; ++i) pa->grad[i] += self.grad[i];
    if (pb->requires_grad)
      for (std::size_t i = 0; i < n; ++i) pb->grad[bindex(k, i, cols)] -= self.grad[i];
  });
}

inline Tensor div(const Tensor& a, const Tensor& b) {
  const Broadcast k = broadcast_kind(a, b, "div");
  const std::size_t n = a.numel(), cols = a.cols();
  std::vector<double> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = a[i] / b[bindex(k, i, cols)];
  return make_op(a.shape(), std::move(v), {a, b}, [k, n, cols](Node& self) {
    auto& pa = self.parents[0];
    auto& pb = self.parents[1];
    for (std::size_t i = 0; i < n; ++i) {
      const double bv = pb->value[bindex(k, i, cols)];
      if (pa->requires_grad) pa->grad[i] += self.grad[i] / bv;
      if (pb->requires_grad) pb->grad[bindex(k, i, cols)] -= self.grad[i] * pa->value[i] / (bv * bv);
    }
  });
}

inline Tensor scale(const Tensor& a, double c) {
  std::vector<double> v(a.values());
  for (double& x : v) x *= c;
  return make_op(a.shape(), std::move(v), {a}, [c](Node& self) {
    auto& p = self.parents[0];
    for (std::size_t i = 0; i < self.grad.size(); ++i) p->grad[i] += c * self.grad[i];
  });
}

inline Tensor add_scalar(const Tensor& a, double c) {
  std::vector<double> v(a.values());
  for (double& x : v) x += c;
  return make_op(a.shape(), std::move(v), {a}, [](Node& self) {
    auto& p = self.parents[0];
    for (std::size_t i = 0; i < self.grad.size(); ++i) p->grad[i] += self.grad[i];
  });
}

inline Tensor neg(const Tensor& a) { return scale(a, -1.0); }

/// Elementwise y = f(x) with derivative df(x, y).
template <class F, class DF>
Tensor unary(const Tensor& a, F f, DF df) {
  std::vector<double> v(a.numel());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = f(a[i]);
  return make_op(a.shape(), std::move(v), {a}, [df](Node& self) {
    auto& p = self.parents[0];
    for (std::size_t i = 0; i < self.grad.size(); ++i) p->grad[i] += self.grad[i] * df(p->value[i], self.value[i]);
  });
}

inline Tensor relu(const Tensor& a) {
  return unary(a, [](double x) { return x > 0 ? x : 0.0; }, [](double x, double) { return x > 0 ? 1.0 : 0.0; });
}
inline Tensor gelu(const Tensor& a) {
  // tanh approximation
  constexpr double c = 0.7978845608028654;
  return unary(
      a, [](double x) { return 0.5 * x * (1.0 + std::tanh(c * (x + 0.044715 * x * x * x))); },
      [](double x, double) {
        const double u = c * (x + 0.044715 * x * x * x);
        const double t = std::tanh(u);
        return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * c * (1.0 + 3 * 0.044715 * x * x);
      });
}
inline Tensor sigmoid(const Tensor& a) {
  return unary(a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); }, [](double, double y) { return y * (1.0 - y); });
}
inline Tensor softplus(const Tensor& a) {
  return unary(
      a, [](double x) { return x > 30 ? x : std::log1p(std::exp(x)); }, [](double x, double) { return 1.0 / (1.0 + std::exp(-x)); });
}
inline Tensor exp(const Tensor& a) {
  return unary(a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}
inline Tensor log(const Tensor& a) {
  return unary(a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}
inline Tensor tanh(const Tensor& a) {
  return unary(a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}
inline Tensor sqrt(const Tensor& a) {
  return unary(a, [](double x) { return std::sqrt(x); }, [](double, double y) { return 0.5 / y; });
}
inline Tensor square(const Tensor& a) {
  return unary(a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}
inline Tensor abs(const Tensor& a) {
  return unary(a, [](double x) { return std::abs(x); }, [](double x, double) { return x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0); });
}
inline Tensor clamp_min(const Tensor& a, double lo) {
  return unary(a, [lo](double x) { return x < lo ? lo : x; }, [lo](double x, double) { return x < lo ? 0.0 : 1.0; });
}
inline Tensor sin(const Tensor& a) {
  return unary(a, [](double x) { return std::sin(x); }, [](double x, double) { return std::cos(x); });
}
inline Tensor cos(const Tensor& a) {
  return unary(a, [](double x) { return std::cos(x); }, [](double x, double) { return -std::sin(x); });
}
/// Huber with threshold delta: ½x² for |x| <= delta, delta(|x| - ½delta) beyond.
inline Tensor huber(const Tensor& a, double delta) {
  return unary(
      a, [delta](double x) { return std::abs(x) <= delta ? 0.5 * x * x : delta * (std::abs(x) - 0.5 * delta); },
      [delta](double x, double) { return std::abs(x) <= delta ? x : (x > 0 ? delta : -delta); });
}

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator*(const Tensor& a, double c) { return scale(a, c); }
inline Tensor operator*(double c, const Tensor& a) { return scale(a, c); }
inline Tensor operator+(const Tensor& a, double c) { return add_scalar(a, c); }
inline Tensor operator-(const Tensor& a, double c) { return add_scalar(a, -c); }
inline Tensor operator-(const Tensor& a) { return neg(a); }

// ---------------------------------------------------------------- reductions

inline Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double x : a.data()) s += x;
  return make_op({1}, {s}, {a}, [](Node& self) {
    auto& p = self.parents[0];
    for (double& g : p->grad) g += self.grad[0];
  });
}

inline Tensor mean(const Tensor& a) {
  const double n = double(a.numel());
  return scale(sum(a), 1.0 / n);
}

/// Per-row sum: [rows, cols] -> [rows, 1].
inline Tensor sum_cols(const Tensor& a) {
  const std::size_t r = a.rows(), c = a.cols();
  std::vector<double> v(r, 0.0);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) v[i] += a[i * c + j];
  return make_op({std::int64_t(r), 1}, std::move(v), {a}, [r, c](Node& self) {
    auto& p = self.parents[0];
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) p->grad[i * c + j] += self.grad[i];
  });
}

/// Column means over rows: [rows, cols] -> [cols].
inline Tensor mean_rows(const Tensor& a) {
  const std::size_t r = a.rows(), c = a.cols();
  std::vector<double> v(c, 0.0);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) v[j] += a[i * c + j] / double(r);
  return make_op({std::int64_t(c)}, std::move(v), {a}, [r, c](Node& self) {
    auto& p = self.parents[0];
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) p->grad[i * c + j] += self.grad[j] / double(r);
  });
}

// ---------------------------------------------------------------- shape ops

inline Tensor reshape(const Tensor& a, Shape shape) {
  require(numel_of(shape) == a.numel(), "reshape: element count mismatch " + shape_str(a.shape()) + " -> " + shape_str(shape));
  return make_op(std::move(shape), a.values(), {a}, [](Node& self) {
    auto& p = self.parents[0];
    for (std::size_t i = 0; i < self.grad.size(); ++i) p->grad[i] += self.grad[i];
  });
}

/// Columns [c0, c1) of a [rows, cols] view; keeps leading dims.
inline Tensor slice_cols(const Tensor& a, std::int64_t c0, std::int64_t c1) {
  const std::size_t r = a.rows(), c = a.cols(), w = std::size_t(c1 - c0);
  require(c0 >= 0 && c1 <= std::int64_t(c) && c0 < c1, "slice_cols: range out of bounds");
  std::vector<double> v(r * w);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < w; ++j) v[i * w + j] = a[i * c + c0 + j];
  Shape s = a.shape();
  s.back() = std::int64_t(w);
  return make_op(std::move(s), std::move(v), {a}, [r, c, w, c0](Node& self) {
    auto& p = self.parents[0];
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < w; ++j) p->grad[i * c + c0 + j] += self.grad[i * w + j];
  });
}

inline Tensor concat_cols(const std::vector<Tensor>& parts) {
  require(!parts.empty(), "concat_cols: no inputs");
  const std::size_t r = parts[0].rows();
  std::size_t total = 0;
  for (const Tensor& t : parts) {
    require(std::size_t(t.rows()) == r, "concat_cols: row mismatch");
    total += t.cols();
  }
  std::vector<double> v(r * total);
  std::size_t off = 0;
  std::vector<std::size_t> offsets;
  for (const Tensor& t : parts) {
    offsets.push_back(off);
    const std::size_t c = t.cols();
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) v[i * total + off + j] = t[i * c + j];
    off += c;
  }
  Shape s = parts[0].shape();
  s.back() = std::int64_t(total);
  return make_op(std::move(s), std::move(v), parts, [r, total, offsets](Node& self) {
    for (std::size_t k = 0; k < self.parents.size(); ++k) {
      auto& p = self.parents[k];
      if (!p->requires_grad) continue;
      const std::size_t c = p->shape.back();
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) p->grad[i * c + j] += self.grad[i * total + offsets[k] + j];
    }
  });
}

/// Rows [r0, r1) of the [rows, cols] view, returned as [r1 - r0, cols].
inline Tensor slice_rows(const Tensor& a, std::int64_t r0, std::int64_t r1) {
  const std::size_t c = a.cols();
  require(r0 >= 0 && r1 <= a.rows() && r0 <= r1, "slice_rows: range out of bounds");
  std::vector<double> v(a.values().begin() + r0 * c, a.values().begin() + r1 * c);
  return make_op({r1 - r0, std::int64_t(c)}, std::move(v), {a}, [r0, c](Node& self) {
    auto& p = self.parents[0];
    for (std::size_t i = 0; i < self.grad.size(); ++i) p->grad[r0 * c + i] += self.grad[i];
  });
}

inline Tensor concat_rows(const std::vector<Tensor>& parts) {
  require(!parts.empty(), "concat_rows: no inputs");
  const std::size_t c = parts[0].cols();
  std::vector<double> v;
  std::vector<std::size_t> offsets;
  for (const Tensor& t : parts) {
    require(std::size_t(t.cols()) == c, "concat_rows: column mismatch");
    offsets.push_back(v.size());
    v.insert(v.end(), t.values().begin(), t.values().end());
  }
  const std::int64_t rows = std::int64_t(v.size() / c);
  return make_op({rows, std::int64_t(c)}, std::move(v), parts, [offsets](Node& self) {
    for (std::size_t k = 0; k < self.parents.size(); ++k) {
      auto& p = self.parents[k];
      if (!p->requires_grad) continue;
      for (std::size_t i = 0; i < p->grad.size(); ++i) p->grad[i] += self.grad[offsets[k] + i];
    }
  });
}

/// Selects rows by index (repeats allowed): [rows, cols] -> [idx.size(), cols].
inline Tensor gather_rows(const Tensor& a, std::vector<std::int64_t> idx) {
  const std::size_t c = a.cols();
  std::vector<double> v(idx.size() * c);
  for (std::size_t i = 0; i < idx.size(); ++i)
    std::copy_n(a.values().begin() + idx[i] * c, c, v.begin() + i * c);
  const std::int64_t n = std::int64_t(idx.size());
  return make_op({n, std::int64_t(c)}, std::move(v), {a}, [idx = std::move(idx), c](Node& self) {
    auto& p = self.parents[0];
    for (std::size_t i = 0; i < idx.size(); ++i)
      for (std::size_t j = 0; j < c; ++j) p->grad[idx[i] * c + j] += self.grad[i * c + j];
  });
}

/// 2-D transpose of the [rows, cols] view.
inline Tensor transpose(const Tensor& a) {
  const std::size_t r = a.rows(), c = a.cols();
  std::vector<double> v(r * c);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) v[j * r + i] = a[i * c + j];
  return make_op({std::int64_t(c), std::int64_t(r)}, std::move(v), {a}, [r, c](Node& self) {
    auto& p = self.parents[0];
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) p->grad[i * c + j] += self.grad[j * r + i];
  });
}

// ---------------------------------------------------------------- linear algebra

/// [.., K] x [K, N] -> [.., N].
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  require(b.shape().size() == 2, "matmul: right operand must be 2-D");
  const std::int64_t m = a.rows(), k = a.cols(), n = b.cols();
  require(b.dim(0) == k, "matmul: inner dimensions differ " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  std::vector<double> v(std::size_t(m * n));
  MapMat(v.data(), m, n).noalias() = CMapMat(a.data().data(), m, k) * CMapMat(b.data().data(), k, n);
  Shape s = a.shape();
  s.back() = n;
  return make_op(std::move(s), std::move(v), {a, b}, [m, k, n](Node& self) {
    auto& pa = self.parents[0];
    auto& pb = self.parents[1];
    CMapMat g(self.grad.data(), m, n);
    if (pa->requires_grad) MapMat(pa->grad.data(), m, k).noalias() += g * CMapMat(pb->value.data(), k, n).transpose();
    if (pb->requires_grad) MapMat(pb->grad.data(), k, n).noalias() += CMapMat(pa->value.data(), m, k).transpose() * g;
  });
}

/// Per-row small matrix products: a [N, r*k] times b [N, k*c] -> [N, r*c], all row-major.
/// `b` may hold a single row shared by every a-row.
inline Tensor bmm(const Tensor& a, const Tensor& b, int r, int k, int c) {
  const std::int64_t n = a.rows();
  require(a.cols() == r * k && b.cols() == k * c, "bmm: block sizes do not match");
  const bool shared = b.rows() == 1 && n != 1;
  require(shared || b.rows() == n, "bmm: row count mismatch");
  std::vector<double> v(std::size_t(n * r * c), 0.0);
  for (std::int64_t i = 0; i < n; ++i) {
    const double* pa = a.data().data() + i * r * k;
    const double* pb = b.data().data() + (shared ? 0 : i * k * c);
    double* o = v.data() + i * r * c;
    for (int x = 0; x < r; ++x)
      for (int y = 0; y < c; ++y) {
        double s = 0.0;
        for (int z = 0; z < k; ++z) s += pa[x * k + z] * pb[z * c + y];
        o[x * c + y] = s;
      }
  }
  return make_op({n, std::int64_t(r * c)}, std::move(v), {a, b}, [n, r, k, c, shared](Node& self) {
    auto& na = self.parents[0];
    auto& nb = self.parents[1];
    for (std::int64_t i = 0; i < n; ++i) {
      const double* g = self.grad.data() + i * r * c;
      const double* pa = na->value.data() + i * r * k;
      const std::int64_t boff = shared ? 0 : i * k * c;
      const double* pb = nb->value.data() + boff;
      for (int x = 0; x < r; ++x)
        for (int y = 0; y < c; ++y)
          for (int z = 0; z < k; ++z) {
            if (na->requires_grad) na->grad[i * r * k + x * k + z] += g[x * c + y] * pb[z * c + y];
            if (nb->requires_grad) nb->grad[boff + z * c + y] += g[x * c + y] * pa[x * k + z];
          }
    }
  });
}

/// Euclidean norm of each row -> [r,1]. Gradient is zero at the origin.
inline Tensor row_norm(const Tensor& a) {
  const std::size_t r = std::size_t(a.rows()), c = std::size_t(a.cols());
  std::vector<double> v(r);
  for (std::size_t i = 0; i < r; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) s += a[i * c + j] * a[i * c + j];
    v[i] = std::sqrt(s);
  }
  return make_op({std::int64_t(r), 1}, v, {a}, [r, c, v](Node& self) {
    auto& in = *self.parents[0];
    for (std::size_t i = 0; i < r; ++i) {
      if (!(v[i] > 0)) continue;
      for (std::size_t j = 0; j < c; ++j) in.grad[i * c + j] += self.grad[i] * in.value[i * c + j] / v[i];
    }
  });
}

/// Layer normalization over the last dim with learned gain and bias.
inline Tensor layernorm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5) {
  const std::size_t r = x.rows(), c = x.cols();
  require(gamma.numel() == std::int64_t(c) && beta.numel() == std::int64_t(c), "layernorm: parameter size mismatch");
  std::vector<double> v(r * c), xhat(r * c), inv_std(r);
  for (std::size_t i = 0; i < r; ++i) {
    double mu = 0.0;
    for (std::size_t j = 0; j < c; ++j) mu += x[i * c + j];
    mu /= double(c);
    double var = 0.0;
    for (std::size_t j = 0; j < c; ++j) var += (x[i * c + j] - mu) * (x[i * c + j] - mu);
    var /= double(c);
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < c; ++j) {
      xhat[i * c + j] = (x[i * c + j] - mu) * inv_std[i];
      v[i * c + j] = xhat[i * c + j] * gamma[j] + beta[j];
    }
  }
  return make_op(x.shape(), std::move(v), {x, gamma, beta},
                 [r, c, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& self) {
                   auto& px = self.parents[0];
                   auto& pg = self.parents[1];
                   auto& pb = self.parents[2];
                   for (std::size_t i = 0; i < r; ++i) {
                     const double* g = self.grad.data() + i * c;
                     const double* xh = xhat.data() + i * c;
                     if (pg->requires_grad)
                       for (std::size_t j = 0; j < c; ++j) pg->grad[j] += g[j] * xh[j];
                     if (pb->requires_grad)
                       for (std::size_t j = 0; j < c; ++j) pb->grad[j] += g[j];
                     if (!px->requires_grad) continue;
                     double s1 = 0.0, s2 = 0.0;
                     for (std::size_t j = 0; j < c; ++j) {
                       const double gh = g[j] * pg->value[j];
                       s1 += gh;
                       s2 += gh * xh[j];
                     }
                     for (std::size_t j = 0; j < c; ++j) {
                       const double gh = g[j] * pg->value[j];
                       px->grad[i * c + j] += inv_std[i] * (gh - s1 / double(c) - xh[j] * s2 / double(c));
                     }
                   }
                 });
}

/// Row-wise L2 normalization.
inline Tensor normalize_rows(const Tensor& a, double eps = 1e-12) {
  const std::size_t r = a.rows(), c = a.cols();
  std::vector<double> v(r * c), norms(r);
  for (std::size_t i = 0; i < r; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) s += a[i * c + j] * a[i * c + j];
    norms[i] = std::max(std::sqrt(s), eps);
    for (std::size_t j = 0; j < c; ++j) v[i * c + j] = a[i * c + j] / norms[i];
  }
  return make_op(a.shape(), std::move(v), {a}, [r, c, norms = std::move(norms)](Node& self) {
    auto& p = self.parents[0];
    for (std::size_t i = 0; i < r; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < c; ++j) dot += self.grad[i * c + j] * self.value[i * c + j];
      for (std::size_t j = 0; j < c; ++j) p->grad[i * c + j] += (self.grad[i * c + j] - dot * self.value[i * c + j]) / norms[i];
    }
  });
}

/// Per-row cross-entropy of logits against integer class targets: [N, K] -> [N, 1].
inline Tensor cross_entropy_rows(const Tensor& logits, std::vector<int> target) {
  const std::size_t r = logits.rows(), c = logits.cols();
  require(target.size() == r, "cross_entropy_rows: one target per row required");
  std::vector<double> v(r), prob(r * c);
  for (std::size_t i = 0; i < r; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < c; ++j) mx = std::max(mx, logits[i * c + j]);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) z += std::exp(logits[i * c + j] - mx);
    for (std::size_t j = 0; j < c; ++j) prob[i * c + j] = std::exp(logits[i * c + j] - mx) / z;
    v[i] = -(logits[i * c + target[i]] - mx - std::log(z));
  }
  return make_op({std::int64_t(r), 1}, std::move(v), {logits},
                 [r, c, prob = std::move(prob), target = std::move(target)](Node& self) {
                   auto& p = self.parents[0];
                   for (std::size_t i = 0; i < r; ++i)
                     for (std::size_t j = 0; j < c; ++j)
                       p->grad[i * c + j] += self.grad[i] * (prob[i * c + j] - (int(j) == target[i] ? 1.0 : 0.0));
                 });
}

// ---------------------------------------------------------------- attention

/// Observer for attention probabilities (rows of one head, T x S), used by tests.
using AttentionObserver = std::function<void(std::span<const double> probs, std::int64_t t, std::int64_t s)>;

inline AttentionObserver& attention_observer() {
  thread_local AttentionObserver obs;
  return obs;
}

/// Multi-head scaled dot-product attention. q [T, D], k and v [S, D]; `mask` (T x S,
/// optional) marks allowed pairs. Heads split D evenly.
inline Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, int heads,
                        std::shared_ptr<const std::vector<std::uint8_t>> mask = nullptr) {
  const std::int64_t T = q.rows(), S = k.rows(), D = q.cols();
  require(k.cols() == D && v.cols() == D && v.rows() == S, "attention: shape mismatch");
  require(heads > 0 && D % heads == 0, "attention: D must be divisible by heads");
  require(!mask || std::int64_t(mask->size()) == T * S, "attention: mask size mismatch");
  const std::int64_t dh = D / heads;
  const double sc = 1.0 / std::sqrt(double(dh));
  std::vector<double> out(std::size_t(T * D), 0.0);
  auto probs = std::make_shared<std::vector<double>>(std::size_t(heads * T * S));
  RowMat qh(T, dh), kh(S, dh), vh(S, dh);
  for (int h = 0; h < heads; ++h) {
    for (std::int64_t i = 0; i < T; ++i)
      for (std::int64_t j = 0; j < dh; ++j) qh(i, j) = q[i * D + h * dh + j];
    for (std::int64_t i = 0; i < S; ++i)
      for (std::int64_t j = 0; j < dh; ++j) {
        kh(i, j) = k[i * D + h * dh + j];
        vh(i, j) = v[i * D + h * dh + j];
      }
    RowMat logits = (qh * kh.transpose()) * sc;
    MapMat P(probs->data() + std::size_t(h * T * S), T, S);
    for (std::int64_t i = 0; i < T; ++i) {
      double mx = -std::numeric_limits<double>::infinity();
      for (std::int64_t j = 0; j < S; ++j)
        if (!mask || (*mask)[i * S + j]) mx = std::max(mx, logits(i, j));
      double z = 0.0;
      for (std::int64_t j = 0; j < S; ++j) {
        const double e = (!mask || (*mask)[i * S + j]) ? std::exp(logits(i, j) - mx) : 0.0;
        P(i, j) = e;
        z += e;
      }
      for (std::int64_t j = 0; j < S; ++j) P(i, j) /= z;
    }
    if (attention_observer()) attention_observer()(std::span<const double>(P.data(), std::size_t(T * S)), T, S);
    RowMat o = P * vh;
    for (std::int64_t i = 0; i < T; ++i)
      for (std::int64_t j = 0; j < dh; ++j) out[i * D + h * dh + j] = o(i, j);
  }
  return make_op(q.shape(), std::move(out), {q, k, v}, [T, S, D, dh, heads, sc, probs](Node& self) {
    auto& pq = self.parents[0];
    auto& pk = self.parents[1];
    auto& pv = self.parents[2];
    RowMat qh(T, dh), kh(S, dh), vh(S, dh), go(T, dh);
    for (int h = 0; h < heads; ++h) {
      for (std::int64_t i = 0; i < T; ++i)
        for (std::int64_t j = 0; j < dh; ++j) {
          qh(i, j) = pq->value[i * D + h * dh + j];
          go(i, j) = self.grad[i * D + h * dh + j];
        }
      for (std::int64_t i = 0; i < S; ++i)
        for (std::int64_t j = 0; j < dh; ++j) {
          kh(i, j) = pk->value[i * D + h * dh + j];
          vh(i, j) = pv->value[i * D + h * dh + j];
        }
      CMapMat P(probs->data() + std::size_t(h * T * S), T, S);
      if (pv->requires_grad) {
        RowMat gv = P.transpose() * go;
        for (std::int64_t i = 0; i < S; ++i)
          for (std::int64_t j = 0; j < dh; ++j) pv->grad[i * D + h * dh + j] += gv(i, j);
      }
      if (!pq->requires_grad && !pk->requires_grad) continue;
      RowMat gp = go * vh.transpose();
      RowMat gl(T, S);
      for (std::int64_t i = 0; i < T; ++i) {
        double dot = 0.0;
        for (std::int64_t j = 0; j < S; ++j) dot += gp(i, j) * P(i, j);
        for (std::int64_t j = 0; j < S; ++j) gl(i, j) = P(i, j) * (gp(i, j) - dot) * sc;
      }
      if (pq->requires_grad) {
        RowMat gq = gl * kh;
        for (std::int64_t i = 0; i < T; ++i)
          for (std::int64_t j = 0; j < dh; ++j) pq->grad[i * D + h * dh + j] += gq(i, j);
      }
      if (pk->requires_grad) {
        RowMat gk = gl.transpose() * qh;
        for (std::int64_t i = 0; i < S; ++i)
          for (std::int64_t j = 0; j < dh; ++j) pk->grad[i * D + h * dh + j] += gk(i, j);
      }
    }
  });
}

// ---------------------------------------------------------------- feature maps [B, H, W, C]

/// 3x3 patches with zero padding: [B, H, W, C] -> [B, H, W, 9C] (tap-major, then channel).
inline Tensor im2col3x3(const Tensor& x) {
  require(x.shape().size() == 4, "im2col3x3: expected [B,H,W,C]");
  const std::int64_t B = x.dim(0), H = x.dim(1), W = x.dim(2), C = x.dim(3);
  std::vector<double> v(std::size_t(B * H * W * 9 * C), 0.0);
  auto src_index = [=](std::int64_t b, std::int64_t y, std::int64_t xx, std::int64_t c) { return ((b * H + y) * W + xx) * C + c; };
  for (std::int64_t b = 0; b < B; ++b)
    for (std::int64_t y = 0; y < H; ++y)
      for (std::int64_t xx = 0; xx < W; ++xx) {
        double* dst = v.data() + ((b * H + y) * W + xx) * 9 * C;
        for (int t = 0; t < 9; ++t) {
          const std::int64_t sy = y + t / 3 - 1, sx = xx + t % 3 - 1;
          if (sy < 0 || sy >= H || sx < 0 || sx >= W) continue;
          for (std::int64_t c = 0; c < C; ++c) dst[t * C + c] = x[src_index(b, sy, sx, c)];
        }
      }
  return make_op({B, H, W, 9 * C}, std::move(v), {x}, [=](Node& self) {
    auto& p = self.parents[0];
    for (std::int64_t b = 0; b < B; ++b)
      for (std::int64_t y = 0; y < H; ++y)
        for (std::int64_t xx = 0; xx < W; ++xx) {
          const double* g = self.grad.data() + ((b * H + y) * W + xx) * 9 * C;
          for (int t = 0; t < 9; ++t) {
            const std::int64_t sy = y + t / 3 - 1, sx = xx + t % 3 - 1;
            if (sy < 0 || sy >= H || sx < 0 || sx >= W) continue;
            for (std::int64_t c = 0; c < C; ++c) p->grad[src_index(b, sy, sx, c)] += g[t * C + c];
          }
        }
  });
}

/// Bilinear 2x upsampling with half-pixel centers: [B, H, W, C] -> [B, 2H, 2W, C].
inline Tensor upsample2x(const Tensor& x) {
  require(x.shape().size() == 4, "upsample2x: expected [B,H,W,C]");
  const std::int64_t B = x.dim(0), H = x.dim(1), W = x.dim(2), C = x.dim(3);
  const std::int64_t H2 = 2 * H, W2 = 2 * W;
  // Each output pixel mixes four source pixels with fixed weights.
  struct Tap {
    std::int64_t y0, y1, x0, x1;
    double wy, wx;
  };
  auto tap = [=](std::int64_t oy, std::int64_t ox) {
    const double sy = std::clamp((oy + 0.5) / 2.0 - 0.5, 0.0, double(H - 1));
    const double sx = std::clamp((ox + 0.5) / 2.0 - 0.5, 0.0, double(W - 1));
    Tap t;
    t.y0 = std::int64_t(std::floor(sy));
    t.x0 = std::int64_t(std::floor(sx));
    t.y1 = std::min(t.y0 + 1, H - 1);
    t.x1 = std::min(t.x0 + 1, W - 1);
    t.wy = sy - double(t.y0);
    t.wx = sx - double(t.x0);
    return t;
  };
  std::vector<double> v(std::size_t(B * H2 * W2 * C));
  for (std::int64_t b = 0; b < B; ++b)
    for (std::int64_t oy = 0; oy < H2; ++oy)
      for (std::int64_t ox = 0; ox < W2; ++ox) {
        const Tap t = tap(oy, ox);
        const double w00 = (1 - t.wy) * (1 - t.wx), w01 = (1 - t.wy) * t.wx, w10 = t.wy * (1 - t.wx), w11 = t.wy * t.wx;
        const double* p00 = x.data().data() + ((b * H + t.y0) * W + t.x0) * C;
        const double* p01 = x.data().data() + ((b * H + t.y0) * W + t.x1) * C;
        const double* p10 = x.data().data() + ((b * H + t.y1) * W + t.x0) * C;
        const double* p11 = x.data().data() + ((b * H + t.y1) * W + t.x1) * C;
        double* dst = v.data() + ((b * H2 + oy) * W2 + ox) * C;
        for (std::int64_t c = 0; c < C; ++c) dst[c] = w00 * p00[c] + w01 * p01[c] + w10 * p10[c] + w11 * p11[c];
      }
  return make_op({B, H2, W2, C}, std::move(v), {x}, [=](Node& self) {
    auto& p = self.parents[0];
    for (std::int64_t b = 0; b < B; ++b)
      for (std::int64_t oy = 0; oy < H2; ++oy)
        for (std::int64_t ox = 0; ox < W2; ++ox) {
          const Tap t = tap(oy, ox);
          const double w00 = (1 - t.wy) * (1 - t.wx), w01 = (1 - t.wy) * t.wx, w10 = t.wy * (1 - t.wx), w11 = t.wy * t.wx;
          const double* g = self.grad.data() + ((b * H2 + oy) * W2 + ox) * C;
          double* g00 = p->grad.data() + ((b * H + t.y0) * W + t.x0) * C;
          double* g01 = p->grad.data() + ((b * H + t.y0) * W + t.x1) * C;
          double* g10 = p->grad.data() + ((b * H + t.y1) * W + t.x0) * C;
          double* g11 = p->grad.data() + ((b * H + t.y1) * W + t.x1) * C;
          for (std::int64_t c = 0; c < C; ++c) {
            g00[c] += w00 * g[c];
            g01[c] += w01 * g[c];
            g10[c] += w10 * g[c];
            g11[c] += w11 * g[c];
          }
        }
  });
}

/// 2x2 average pooling: [B, H, W, C] -> [B, H/2, W/2, C].
inline Tensor avgpool2x(const Tensor& x) {
  require(x.shape().size() == 4 && x.dim(1) % 2 == 0 && x.dim(2) % 2 == 0, "avgpool2x: expected [B,H,W,C] with even H, W");
  const std::int64_t B = x.dim(0), H = x.dim(1), W = x.dim(2), C = x.dim(3);
  const std::int64_t Ho = H / 2, Wo = W / 2;
  std::vector<double> v(std::size_t(B * Ho * Wo * C), 0.0);
  for (std::int64_t b = 0; b < B; ++b)
    for (std::int64_t y = 0; y < H; ++y)
      for (std::int64_t xx = 0; xx < W; ++xx)
        for (std::int64_t c = 0; c < C; ++c) v[((b * Ho + y / 2) * Wo + xx / 2) * C + c] += 0.25 * x[((b * H + y) * W + xx) * C + c];
  return make_op({B, Ho, Wo, C}, std::move(v), {x}, [=](Node& self) {
    auto& p = self.parents[0];
    for (std::int64_t b = 0; b < B; ++b)
      for (std::int64_t y = 0; y < H; ++y)
        for (std::int64_t xx = 0; xx < W; ++xx)
          for (std::int64_t c = 0; c < C; ++c)
            p->grad[((b * H + y) * W + xx) * C + c] += 0.25 * self.grad[((b * Ho + y / 2) * Wo + xx / 2) * C + c];
  });
}

// ---------------------------------------------------------------- checking

/// Central finite-difference gradient of a scalar function of `input`'s values.
inline std::vector<double> numeric_gradient(Tensor input, const std::function<double()>& f, double h,
                                            std::span<const std::size_t> indices) {
  std::vector<double> out;
  auto vals = input.mutable_data();
  for (std::size_t i : indices) {
    const double orig = vals[i];
    vals[i] = orig + h;
    const double fp = f();
    vals[i] = orig - h;
    const double fm = f();
    vals[i] = orig;
    out.push_back((fp - fm) / (2 * h));
  }
  return out;
}

}  // namespace artikin::ag
