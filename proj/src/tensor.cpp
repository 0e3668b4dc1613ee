#include "objvid/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <sstream>
#include <unordered_set>
#include <utility>

#include "objvid/errors.hpp"

namespace objvid {

std::size_t shape_size(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t d : s) n *= d;
  return n;
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << ",";
    os << s[i];
  }
  os << "]";
  return os.str();
}

namespace {

thread_local bool g_grad_enabled = true;

std::vector<double>& gbuf(TensorImpl& t) {
  if (t.grad.size() != t.data.size()) t.grad.assign(t.data.size(), 0.0);
  return t.grad;
}

Tensor make_node(Shape shape, std::vector<double> data, const char* op,
                 std::vector<NodePtr> parents,
                 std::function<void(TensorImpl&)> backward_fn) {
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(data);
  impl->op = op;
  bool rg = false;
  if (g_grad_enabled) {
    for (const auto& p : parents) {
      if (p && p->requires_grad) rg = true;
    }
  }
  impl->requires_grad = rg;
  if (rg) {
    impl->parents = std::move(parents);
    impl->backward_fn = std::move(backward_fn);
  }
  return Tensor::wrap(std::move(impl));
}

void check_defined(const Tensor& t, const char* op) {
  if (!t.defined()) throw ContractError(std::string(op) + ": undefined tensor");
}

void check_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shapes differ: " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
  }
}

struct AxisView {
  std::size_t outer, len, inner;
};

AxisView axis_view(const Shape& s, std::size_t axis, const char* op) {
  if (axis >= s.size()) {
    throw DimensionError(std::string(op) + ": axis " + std::to_string(axis) +
                         " out of range for shape " + shape_str(s));
  }
  AxisView v{1, s[axis], 1};
  for (std::size_t i = 0; i < axis; ++i) v.outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) v.inner *= s[i];
  return v;
}

// Sum of nonnegative values in descending order: the result depends only on
// the multiset of values, never on their layout.
double canonical_sum(std::vector<double>& vals) {
  std::sort(vals.begin(), vals.end(), std::greater<double>());
  double s = 0.0;
  for (double v : vals) s += v;
  return s;
}

}  // namespace

// ---------------------------------------------------------------------------
// Tensor basics
// ---------------------------------------------------------------------------

Tensor Tensor::zeros(const Shape& shape, bool requires_grad) {
  return from_data(shape, std::vector<double>(shape_size(shape), 0.0), requires_grad);
}

Tensor Tensor::full(const Shape& shape, double value, bool requires_grad) {
  return from_data(shape, std::vector<double>(shape_size(shape), value), requires_grad);
}

Tensor Tensor::from_data(const Shape& shape, std::vector<double> data, bool requires_grad) {
  if (data.size() != shape_size(shape)) {
    throw DimensionError("from_data: data length " + std::to_string(data.size()) +
                         " does not match shape " + shape_str(shape));
  }
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = shape;
  impl->data = std::move(data);
  impl->requires_grad = requires_grad;
  return Tensor::wrap(std::move(impl));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from_data({}, {value}, requires_grad);
}

const Shape& Tensor::shape() const {
  check_defined(*this, "shape");
  return impl_->shape;
}

std::size_t Tensor::size() const {
  check_defined(*this, "size");
  return impl_->data.size();
}

std::size_t Tensor::dim(std::size_t i) const {
  const Shape& s = shape();
  if (i >= s.size()) {
    throw DimensionError("dim: index " + std::to_string(i) + " out of range for shape " +
                         shape_str(s));
  }
  return s[i];
}

std::vector<double>& Tensor::data() {
  check_defined(*this, "data");
  return impl_->data;
}

const std::vector<double>& Tensor::data() const {
  check_defined(*this, "data");
  return impl_->data;
}

double Tensor::value() const {
  if (size() != 1) {
    throw ContractError("value: tensor of shape " + shape_str(shape()) + " is not a scalar");
  }
  return impl_->data[0];
}

bool Tensor::requires_grad() const {
  check_defined(*this, "requires_grad");
  return impl_->requires_grad;
}

bool Tensor::has_grad() const {
  check_defined(*this, "has_grad");
  return impl_->grad.size() == impl_->data.size() && !impl_->data.empty();
}

const std::vector<double>& Tensor::grad() const {
  check_defined(*this, "grad");
  return impl_->grad;
}

void Tensor::zero_grad() {
  check_defined(*this, "zero_grad");
  impl_->grad.assign(impl_->data.size(), 0.0);
}

void Tensor::backward() const {
  check_defined(*this, "backward");
  if (impl_->data.size() != 1) {
    throw ContractError("backward requires a scalar output, got shape " +
                        shape_str(impl_->shape));
  }
  if (!impl_->requires_grad) {
    throw ContractError("backward on a tensor that does not require grad");
  }

  // Post-order DFS gives a topological order (inputs before consumers);
  // the reverse sweep then sees every node after all of its consumers.
  std::vector<TensorImpl*> order;
  std::unordered_set<TensorImpl*> visited;
  struct Frame {
    TensorImpl* node;
    std::size_t next;
  };
  std::vector<Frame> stack;
  visited.insert(impl_.get());
  stack.push_back({impl_.get(), 0});
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next < f.node->parents.size()) {
      TensorImpl* p = f.node->parents[f.next++].get();
      if (p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        stack.push_back({p, 0});
      }
    } else {
      order.push_back(f.node);
      stack.pop_back();
    }
  }

  for (TensorImpl* n : order) n->grad.assign(n->data.size(), 0.0);
  impl_->grad[0] = 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if ((*it)->backward_fn) (*it)->backward_fn(**it);
  }
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

bool grad_enabled() { return g_grad_enabled; }

// ---------------------------------------------------------------------------
// Elementwise ops
// ---------------------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  check_defined(a, "add");
  check_defined(b, "add");
  check_same_shape("add", a, b);
  const std::size_t n = a.size();
  std::vector<double> out(n);
  const auto& ad = a.data();
  const auto& bd = b.data();
  for (std::size_t i = 0; i < n; ++i) out[i] = ad[i] + bd[i];
  NodePtr pa = a.impl(), pb = b.impl();
  return make_node(a.shape(), std::move(out), "add", {pa, pb}, [pa, pb, n](TensorImpl& self) {
    if (pa->requires_grad) {
      auto& g = gbuf(*pa);
      for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[i];
    }
    if (pb->requires_grad) {
      auto& g = gbuf(*pb);
      for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_defined(a, "sub");
  check_defined(b, "sub");
  check_same_shape("sub", a, b);
  const std::size_t n = a.size();
  std::vector<double> out(n);
  const auto& ad = a.data();
  const auto& bd = b.data();
  for (std::size_t i = 0; i < n; ++i) out[i] = ad[i] - bd[i];
  NodePtr pa = a.impl(), pb = b.impl();
  return make_node(a.shape(), std::move(out), "sub", {pa, pb}, [pa, pb, n](TensorImpl& self) {
    if (pa->requires_grad) {
      auto& g = gbuf(*pa);
      for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[i];
    }
    if (pb->requires_grad) {
      auto& g = gbuf(*pb);
      for (std::size_t i = 0; i < n; ++i) g[i] -= self.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_defined(a, "mul");
  check_defined(b, "mul");
  check_same_shape("mul", a, b);
  const std::size_t n = a.size();
  std::vector<double> out(n);
  const auto& ad = a.data();
  const auto& bd = b.data();
  for (std::size_t i = 0; i < n; ++i) out[i] = ad[i] * bd[i];
  NodePtr pa = a.impl(), pb = b.impl();
  return make_node(a.shape(), std::move(out), "mul", {pa, pb}, [pa, pb, n](TensorImpl& self) {
    if (pa->requires_grad) {
      auto& g = gbuf(*pa);
      const auto& bd2 = pb->data;
      for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[i] * bd2[i];
    }
    if (pb->requires_grad) {
      auto& g = gbuf(*pb);
      const auto& ad2 = pa->data;
      for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[i] * ad2[i];
    }
  });
}

Tensor affine(const Tensor& x, double mul_coeff, double add_coeff) {
  check_defined(x, "affine");
  const std::size_t n = x.size();
  std::vector<double> out(n);
  const auto& xd = x.data();
  for (std::size_t i = 0; i < n; ++i) out[i] = mul_coeff * xd[i] + add_coeff;
  NodePtr px = x.impl();
  return make_node(x.shape(), std::move(out), "affine", {px},
                   [px, mul_coeff, n](TensorImpl& self) {
                     if (!px->requires_grad) return;
                     auto& g = gbuf(*px);
                     for (std::size_t i = 0; i < n; ++i) g[i] += mul_coeff * self.grad[i];
                   });
}

Tensor scale(const Tensor& x, double c) { return affine(x, c, 0.0); }

Tensor neg(const Tensor& x) { return affine(x, -1.0, 0.0); }

// ---------------------------------------------------------------------------
// Linear algebra
// ---------------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  check_defined(a, "matmul");
  check_defined(b, "matmul");
  if (a.rank() != 2 || b.rank() != 2) {
    throw DimensionError("matmul: expected rank-2 operands, got " + shape_str(a.shape()) +
                         " and " + shape_str(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw DimensionError("matmul: inner dimensions differ: " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
  std::vector<double> out(m * n, 0.0);
  {
    const double* A = a.data().data();
    const double* B = b.data().data();
    for (std::size_t i = 0; i < m; ++i) {
      double* crow = &out[i * n];
      const double* arow = &A[i * k];
      for (std::size_t p = 0; p < k; ++p) {
        const double av = arow[p];
        const double* brow = &B[p * n];
        for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
      }
    }
  }
  NodePtr pa = a.impl(), pb = b.impl();
  return make_node({m, n}, std::move(out), "matmul", {pa, pb},
                   [pa, pb, m, k, n](TensorImpl& self) {
                     const double* G = self.grad.data();
                     if (pa->requires_grad) {
                       auto& ga = gbuf(*pa);
                       const double* B = pb->data.data();
                       for (std::size_t i = 0; i < m; ++i) {
                         const double* grow = &G[i * n];
                         double* garow = &ga[i * k];
                         for (std::size_t p = 0; p < k; ++p) {
                           const double* brow = &B[p * n];
                           double acc = 0.0;
                           for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
                           garow[p] += acc;
                         }
                       }
                     }
                     if (pb->requires_grad) {
                       auto& gb = gbuf(*pb);
                       const double* A = pa->data.data();
                       for (std::size_t i = 0; i < m; ++i) {
                         const double* arow = &A[i * k];
                         const double* grow = &G[i * n];
                         for (std::size_t p = 0; p < k; ++p) {
                           const double av = arow[p];
                           if (av == 0.0) continue;
                           double* gbrow = &gb[p * n];
                           for (std::size_t j = 0; j < n; ++j) gbrow[j] += av * grow[j];
                         }
                       }
                     }
                   });
}

Tensor transpose(const Tensor& x) {
  check_defined(x, "transpose");
  if (x.rank() != 2) {
    throw DimensionError("transpose: expected rank-2 tensor, got " + shape_str(x.shape()));
  }
  const std::size_t m = x.dim(0), n = x.dim(1);
  std::vector<double> out(m * n);
  const auto& xd = x.data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = xd[i * n + j];
  }
  NodePtr px = x.impl();
  return make_node({n, m}, std::move(out), "transpose", {px}, [px, m, n](TensorImpl& self) {
    if (!px->requires_grad) return;
    auto& g = gbuf(*px);
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < n; ++j) g[i * n + j] += self.grad[j * m + i];
    }
  });
}

// ---------------------------------------------------------------------------
// Normalizations
// ---------------------------------------------------------------------------

Tensor softmax(const Tensor& x, std::size_t axis) {
  check_defined(x, "softmax");
  const AxisView v = axis_view(x.shape(), axis, "softmax");
  const std::size_t len = v.len;
  std::vector<double> out(x.size());
  const auto& xd = x.data();
  std::vector<double> line(len);
  for (std::size_t o = 0; o < v.outer; ++o) {
    for (std::size_t i = 0; i < v.inner; ++i) {
      const std::size_t base = o * len * v.inner + i;
      double mx = xd[base];
      for (std::size_t a = 1; a < len; ++a) mx = std::max(mx, xd[base + a * v.inner]);
      for (std::size_t a = 0; a < len; ++a) line[a] = std::exp(xd[base + a * v.inner] - mx);
      std::vector<double> sorted(line);
      const double denom = canonical_sum(sorted);
      for (std::size_t a = 0; a < len; ++a) out[base + a * v.inner] = line[a] / denom;
    }
  }
  NodePtr px = x.impl();
  return make_node(x.shape(), std::move(out), "softmax", {px}, [px, v, len](TensorImpl& self) {
    if (!px->requires_grad) return;
    auto& g = gbuf(*px);
    const double* y = self.data.data();
    const double* gy = self.grad.data();
    for (std::size_t o = 0; o < v.outer; ++o) {
      for (std::size_t i = 0; i < v.inner; ++i) {
        const std::size_t base = o * len * v.inner + i;
        double s = 0.0;
        for (std::size_t a = 0; a < len; ++a) s += gy[base + a * v.inner] * y[base + a * v.inner];
        for (std::size_t a = 0; a < len; ++a) {
          const std::size_t idx = base + a * v.inner;
          g[idx] += (gy[idx] - s) * y[idx];
        }
      }
    }
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias) {
  check_defined(x, "layer_norm");
  check_defined(gain, "layer_norm");
  check_defined(bias, "layer_norm");
  if (x.rank() < 1) {
    throw DimensionError("layer_norm: expected rank >= 1, got " + shape_str(x.shape()));
  }
  const std::size_t d = x.shape().back();
  if (d == 0) {
    throw DimensionError("layer_norm: empty last dimension in shape " + shape_str(x.shape()));
  }
  if (gain.shape() != Shape{d} || bias.shape() != Shape{d}) {
    throw DimensionError("layer_norm: gain/bias shapes " + shape_str(gain.shape()) + "/" +
                         shape_str(bias.shape()) + " do not match feature dim " +
                         std::to_string(d));
  }
  const std::size_t rows = x.size() / d;
  std::vector<double> out(x.size());
  std::vector<double> mus(rows), sigmas(rows);
  const auto& xd = x.data();
  const auto& gd = gain.data();
  const auto& bd = bias.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = &xd[r * d];
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += xr[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double c = xr[j] - mu;
      var += c * c;
    }
    var /= static_cast<double>(d);
    const double sigma = std::sqrt(var + kLayerNormEps);
    mus[r] = mu;
    sigmas[r] = sigma;
    double* yr = &out[r * d];
    for (std::size_t j = 0; j < d; ++j) yr[j] = (xr[j] - mu) / sigma * gd[j] + bd[j];
  }
  NodePtr px = x.impl(), pg = gain.impl(), pb = bias.impl();
  return make_node(
      x.shape(), std::move(out), "layer_norm", {px, pg, pb},
      [px, pg, pb, rows, d, mus = std::move(mus), sigmas = std::move(sigmas)](TensorImpl& self) {
        const double* gy = self.grad.data();
        const double* xd2 = px->data.data();
        const double* gd2 = pg->data.data();
        std::vector<double> xhat(d), dxhat(d);
        for (std::size_t r = 0; r < rows; ++r) {
          const double* xr = &xd2[r * d];
          const double* gr = &gy[r * d];
          const double inv_sigma = 1.0 / sigmas[r];
          for (std::size_t j = 0; j < d; ++j) {
            xhat[j] = (xr[j] - mus[r]) * inv_sigma;
            dxhat[j] = gr[j] * gd2[j];
          }
          if (px->requires_grad) {
            double m1 = 0.0, m2 = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
              m1 += dxhat[j];
              m2 += dxhat[j] * xhat[j];
            }
            m1 /= static_cast<double>(d);
            m2 /= static_cast<double>(d);
            auto& gx = gbuf(*px);
            double* gxr = &gx[r * d];
            for (std::size_t j = 0; j < d; ++j) {
              gxr[j] += (dxhat[j] - m1 - xhat[j] * m2) * inv_sigma;
            }
          }
          if (pg->requires_grad) {
            auto& gg = gbuf(*pg);
            for (std::size_t j = 0; j < d; ++j) gg[j] += gr[j] * xhat[j];
          }
          if (pb->requires_grad) {
            auto& gb = gbuf(*pb);
            for (std::size_t j = 0; j < d; ++j) gb[j] += gr[j];
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Activations
// ---------------------------------------------------------------------------

Tensor sigmoid(const Tensor& x) {
  check_defined(x, "sigmoid");
  const std::size_t n = x.size();
  std::vector<double> out(n);
  const auto& xd = x.data();
  for (std::size_t i = 0; i < n; ++i) out[i] = 1.0 / (1.0 + std::exp(-xd[i]));
  NodePtr px = x.impl();
  return make_node(x.shape(), std::move(out), "sigmoid", {px}, [px, n](TensorImpl& self) {
    if (!px->requires_grad) return;
    auto& g = gbuf(*px);
    const double* y = self.data.data();
    for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[i] * y[i] * (1.0 - y[i]);
  });
}

Tensor tanh(const Tensor& x) {
  check_defined(x, "tanh");
  const std::size_t n = x.size();
  std::vector<double> out(n);
  const auto& xd = x.data();
  for (std::size_t i = 0; i < n; ++i) out[i] = std::tanh(xd[i]);
  NodePtr px = x.impl();
  return make_node(x.shape(), std::move(out), "tanh", {px}, [px, n](TensorImpl& self) {
    if (!px->requires_grad) return;
    auto& g = gbuf(*px);
    const double* y = self.data.data();
    for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[i] * (1.0 - y[i] * y[i]);
  });
}

Tensor relu(const Tensor& x) {
  check_defined(x, "relu");
  const std::size_t n = x.size();
  std::vector<double> out(n);
  const auto& xd = x.data();
  for (std::size_t i = 0; i < n; ++i) out[i] = xd[i] > 0.0 ? xd[i] : 0.0;
  NodePtr px = x.impl();
  return make_node(x.shape(), std::move(out), "relu", {px}, [px, n](TensorImpl& self) {
    if (!px->requires_grad) return;
    auto& g = gbuf(*px);
    const double* xd2 = px->data.data();
    for (std::size_t i = 0; i < n; ++i) {
      if (xd2[i] > 0.0) g[i] += self.grad[i];
    }
  });
}

Tensor gelu(const Tensor& x) {
  check_defined(x, "gelu");
  const std::size_t n = x.size();
  std::vector<double> out(n);
  const auto& xd = x.data();
  constexpr double kInvSqrt2 = 0.70710678118654752440;
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = 0.5 * xd[i] * (1.0 + std::erf(xd[i] * kInvSqrt2));
  }
  NodePtr px = x.impl();
  return make_node(x.shape(), std::move(out), "gelu", {px}, [px, n](TensorImpl& self) {
    if (!px->requires_grad) return;
    auto& g = gbuf(*px);
    const double* xd2 = px->data.data();
    constexpr double kInvSqrt2Pi = 0.39894228040143267794;
    for (std::size_t i = 0; i < n; ++i) {
      const double v = xd2[i];
      const double cdf = 0.5 * (1.0 + std::erf(v * 0.70710678118654752440));
      const double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
      g[i] += self.grad[i] * (cdf + v * pdf);
    }
  });
}

// ---------------------------------------------------------------------------
// Shape ops
// ---------------------------------------------------------------------------

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw ContractError("concat: empty input list");
  for (const Tensor& t : parts) check_defined(t, "concat");
  const Shape& first = parts[0].shape();
  if (axis >= first.size()) {
    throw DimensionError("concat: axis " + std::to_string(axis) + " out of range for shape " +
                         shape_str(first));
  }
  Shape out_shape = first;
  std::size_t total_len = 0;
  for (const Tensor& t : parts) {
    const Shape& s = t.shape();
    if (s.size() != first.size()) {
      throw DimensionError("concat: rank mismatch: " + shape_str(first) + " vs " + shape_str(s));
    }
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (i != axis && s[i] != first[i]) {
        throw DimensionError("concat: shapes differ off-axis: " + shape_str(first) + " vs " +
                             shape_str(s));
      }
    }
    total_len += s[axis];
  }
  out_shape[axis] = total_len;

  const AxisView v = axis_view(first, axis, "concat");  // len refers to parts[0]
  const std::size_t outer = v.outer, inner = v.inner;
  std::vector<double> out(shape_size(out_shape));
  std::vector<std::size_t> lens(parts.size());
  for (std::size_t pi = 0; pi < parts.size(); ++pi) lens[pi] = parts[pi].dim(axis);
  for (std::size_t o = 0; o < outer; ++o) {
    std::size_t cursor = 0;
    for (std::size_t pi = 0; pi < parts.size(); ++pi) {
      const std::size_t blk = lens[pi] * inner;
      const double* src = &parts[pi].data()[o * blk];
      double* dst = &out[o * total_len * inner + cursor];
      std::copy(src, src + blk, dst);
      cursor += blk;
    }
  }
  std::vector<NodePtr> impls;
  impls.reserve(parts.size());
  for (const Tensor& t : parts) impls.push_back(t.impl());
  return make_node(out_shape, std::move(out), "concat", impls,
                   [impls, lens, outer, inner, total_len](TensorImpl& self) {
                     for (std::size_t o = 0; o < outer; ++o) {
                       std::size_t cursor = 0;
                       for (std::size_t pi = 0; pi < impls.size(); ++pi) {
                         const std::size_t blk = lens[pi] * inner;
                         if (impls[pi]->requires_grad) {
                           auto& g = gbuf(*impls[pi]);
                           const double* src = &self.grad[o * total_len * inner + cursor];
                           double* dst = &g[o * blk];
                           for (std::size_t j = 0; j < blk; ++j) dst[j] += src[j];
                         }
                         cursor += blk;
                       }
                     }
                   });
}

Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t len) {
  check_defined(x, "slice");
  const AxisView v = axis_view(x.shape(), axis, "slice");
  if (len == 0 || start + len > v.len) {
    throw DimensionError("slice: range [" + std::to_string(start) + "," +
                         std::to_string(start + len) + ") out of bounds for axis " +
                         std::to_string(axis) + " of shape " + shape_str(x.shape()));
  }
  Shape out_shape = x.shape();
  out_shape[axis] = len;
  std::vector<double> out(shape_size(out_shape));
  const auto& xd = x.data();
  for (std::size_t o = 0; o < v.outer; ++o) {
    const double* src = &xd[(o * v.len + start) * v.inner];
    double* dst = &out[o * len * v.inner];
    std::copy(src, src + len * v.inner, dst);
  }
  NodePtr px = x.impl();
  return make_node(out_shape, std::move(out), "slice", {px},
                   [px, v, start, len](TensorImpl& self) {
                     if (!px->requires_grad) return;
                     auto& g = gbuf(*px);
                     for (std::size_t o = 0; o < v.outer; ++o) {
                       const double* src = &self.grad[o * len * v.inner];
                       double* dst = &g[(o * v.len + start) * v.inner];
                       for (std::size_t j = 0; j < len * v.inner; ++j) dst[j] += src[j];
                     }
                   });
}

Tensor reshape(const Tensor& x, const Shape& shape) {
  check_defined(x, "reshape");
  if (shape_size(shape) != x.size()) {
    throw DimensionError("reshape: cannot view " + shape_str(x.shape()) + " as " +
                         shape_str(shape));
  }
  std::vector<double> out(x.data());
  NodePtr px = x.impl();
  return make_node(shape, std::move(out), "reshape", {px}, [px](TensorImpl& self) {
    if (!px->requires_grad) return;
    auto& g = gbuf(*px);
    for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
  });
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

namespace {

Tensor reduce_axis(const Tensor& x, std::size_t axis, bool take_mean, const char* op) {
  const AxisView v = axis_view(x.shape(), axis, op);
  Shape out_shape;
  for (std::size_t i = 0; i < x.rank(); ++i) {
    if (i != axis) out_shape.push_back(x.dim(i));
  }
  const double inv = take_mean ? 1.0 / static_cast<double>(v.len) : 1.0;
  std::vector<double> out(v.outer * v.inner, 0.0);
  const auto& xd = x.data();
  for (std::size_t o = 0; o < v.outer; ++o) {
    for (std::size_t a = 0; a < v.len; ++a) {
      const double* src = &xd[(o * v.len + a) * v.inner];
      double* dst = &out[o * v.inner];
      for (std::size_t i = 0; i < v.inner; ++i) dst[i] += src[i];
    }
  }
  if (take_mean) {
    for (double& e : out) e *= inv;
  }
  NodePtr px = x.impl();
  return make_node(out_shape, std::move(out), op, {px}, [px, v, inv](TensorImpl& self) {
    if (!px->requires_grad) return;
    auto& g = gbuf(*px);
    for (std::size_t o = 0; o < v.outer; ++o) {
      for (std::size_t a = 0; a < v.len; ++a) {
        double* dst = &g[(o * v.len + a) * v.inner];
        const double* src = &self.grad[o * v.inner];
        for (std::size_t i = 0; i < v.inner; ++i) dst[i] += src[i] * inv;
      }
    }
  });
}

Tensor reduce_all(const Tensor& x, bool take_mean, const char* op) {
  check_defined(x, op);
  const std::size_t n = x.size();
  if (n == 0) throw DimensionError(std::string(op) + ": empty tensor");
  double acc = 0.0;
  const auto& xd = x.data();
  for (std::size_t i = 0; i < n; ++i) acc += xd[i];
  const double inv = take_mean ? 1.0 / static_cast<double>(n) : 1.0;
  acc *= inv;
  NodePtr px = x.impl();
  return make_node({}, {acc}, op, {px}, [px, n, inv](TensorImpl& self) {
    if (!px->requires_grad) return;
    auto& g = gbuf(*px);
    const double gv = self.grad[0] * inv;
    for (std::size_t i = 0; i < n; ++i) g[i] += gv;
  });
}

}  // namespace

Tensor mean(const Tensor& x, std::size_t axis) { return reduce_axis(x, axis, true, "mean"); }
Tensor sum(const Tensor& x, std::size_t axis) { return reduce_axis(x, axis, false, "sum"); }
Tensor mean_all(const Tensor& x) { return reduce_all(x, true, "mean_all"); }
Tensor sum_all(const Tensor& x) { return reduce_all(x, false, "sum_all"); }

Tensor sum_list(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ContractError("sum_list: empty input list");
  for (const Tensor& t : parts) check_defined(t, "sum_list");
  const Shape& s = parts[0].shape();
  for (const Tensor& t : parts) check_same_shape("sum_list", parts[0], t);
  const std::size_t n = parts[0].size();
  std::vector<double> out(n, 0.0);
  for (const Tensor& t : parts) {
    const auto& td = t.data();
    for (std::size_t i = 0; i < n; ++i) out[i] += td[i];
  }
  std::vector<NodePtr> impls;
  impls.reserve(parts.size());
  for (const Tensor& t : parts) impls.push_back(t.impl());
  return make_node(s, std::move(out), "sum_list", impls, [impls, n](TensorImpl& self) {
    for (const NodePtr& p : impls) {
      if (!p->requires_grad) continue;
      auto& g = gbuf(*p);
      for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[i];
    }
  });
}

Tensor mean_list(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ContractError("mean_list: empty input list");
  for (const Tensor& t : parts) check_defined(t, "mean_list");
  const Shape& s = parts[0].shape();
  for (const Tensor& t : parts) check_same_shape("mean_list", parts[0], t);
  const std::size_t n = parts[0].size();
  const double inv = 1.0 / static_cast<double>(parts.size());
  std::vector<double> out(n, 0.0);
  for (const Tensor& t : parts) {
    const auto& td = t.data();
    for (std::size_t i = 0; i < n; ++i) out[i] += td[i];
  }
  for (double& e : out) e *= inv;
  std::vector<NodePtr> impls;
  impls.reserve(parts.size());
  for (const Tensor& t : parts) impls.push_back(t.impl());
  return make_node(s, std::move(out), "mean_list", impls, [impls, n, inv](TensorImpl& self) {
    for (const NodePtr& p : impls) {
      if (!p->requires_grad) continue;
      auto& g = gbuf(*p);
      for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[i] * inv;
    }
  });
}

// ---------------------------------------------------------------------------
// Norms and similarities
// ---------------------------------------------------------------------------

Tensor l2_norm(const Tensor& x, std::size_t axis) {
  check_defined(x, "l2_norm");
  const AxisView v = axis_view(x.shape(), axis, "l2_norm");
  Shape out_shape;
  for (std::size_t i = 0; i < x.rank(); ++i) {
    if (i != axis) out_shape.push_back(x.dim(i));
  }
  std::vector<double> out(v.outer * v.inner);
  const auto& xd = x.data();
  for (std::size_t o = 0; o < v.outer; ++o) {
    for (std::size_t i = 0; i < v.inner; ++i) {
      double acc = 0.0;
      for (std::size_t a = 0; a < v.len; ++a) {
        const double e = xd[(o * v.len + a) * v.inner + i];
        acc += e * e;
      }
      out[o * v.inner + i] = std::sqrt(acc);
    }
  }
  NodePtr px = x.impl();
  return make_node(out_shape, std::move(out), "l2_norm", {px}, [px, v](TensorImpl& self) {
    if (!px->requires_grad) return;
    auto& g = gbuf(*px);
    const double* xd2 = px->data.data();
    for (std::size_t o = 0; o < v.outer; ++o) {
      for (std::size_t i = 0; i < v.inner; ++i) {
        const double norm = self.data[o * v.inner + i];
        if (norm < 1e-300) continue;  // zero-vector subgradient
        const double gv = self.grad[o * v.inner + i] / norm;
        for (std::size_t a = 0; a < v.len; ++a) {
          const std::size_t idx = (o * v.len + a) * v.inner + i;
          g[idx] += gv * xd2[idx];
        }
      }
    }
  });
}

namespace {

constexpr double kCosineNormFloor = 1e-12;

void check_norm(double n, const char* op) {
  if (n < kCosineNormFloor) {
    throw NumericError(std::string(op) + ": zero-norm vector (norm " + std::to_string(n) + ")");
  }
}

}  // namespace

Tensor cosine(const Tensor& a, const Tensor& b, std::size_t axis) {
  check_defined(a, "cosine");
  check_defined(b, "cosine");
  check_same_shape("cosine", a, b);
  const AxisView v = axis_view(a.shape(), axis, "cosine");
  Shape out_shape;
  for (std::size_t i = 0; i < a.rank(); ++i) {
    if (i != axis) out_shape.push_back(a.dim(i));
  }
  const std::size_t lines = v.outer * v.inner;
  std::vector<double> out(lines), nas(lines), nbs(lines);
  const auto& ad = a.data();
  const auto& bd = b.data();
  for (std::size_t o = 0; o < v.outer; ++o) {
    for (std::size_t i = 0; i < v.inner; ++i) {
      double na = 0.0, nb = 0.0, dot = 0.0;
      for (std::size_t x = 0; x < v.len; ++x) {
        const std::size_t idx = (o * v.len + x) * v.inner + i;
        na += ad[idx] * ad[idx];
        nb += bd[idx] * bd[idx];
        dot += ad[idx] * bd[idx];
      }
      na = std::sqrt(na);
      nb = std::sqrt(nb);
      check_norm(na, "cosine");
      check_norm(nb, "cosine");
      const std::size_t li = o * v.inner + i;
      nas[li] = na;
      nbs[li] = nb;
      out[li] = dot / (na * nb);
    }
  }
  NodePtr pa = a.impl(), pb = b.impl();
  return make_node(out_shape, std::move(out), "cosine", {pa, pb},
                   [pa, pb, v, nas = std::move(nas), nbs = std::move(nbs)](TensorImpl& self) {
                     const double* ad2 = pa->data.data();
                     const double* bd2 = pb->data.data();
                     for (std::size_t o = 0; o < v.outer; ++o) {
                       for (std::size_t i = 0; i < v.inner; ++i) {
                         const std::size_t li = o * v.inner + i;
                         const double na = nas[li], nb = nbs[li];
                         const double y = self.data[li];
                         const double gv = self.grad[li];
                         if (gv == 0.0) continue;
                         for (std::size_t x = 0; x < v.len; ++x) {
                           const std::size_t idx = (o * v.len + x) * v.inner + i;
                           if (pa->requires_grad) {
                             gbuf(*pa)[idx] +=
                                 gv * (bd2[idx] / (na * nb) - y * ad2[idx] / (na * na));
                           }
                           if (pb->requires_grad) {
                             gbuf(*pb)[idx] +=
                                 gv * (ad2[idx] / (na * nb) - y * bd2[idx] / (nb * nb));
                           }
                         }
                       }
                     }
                   });
}

Tensor cosine_rows(const Tensor& m, const Tensor& v) {
  check_defined(m, "cosine_rows");
  check_defined(v, "cosine_rows");
  if (v.rank() != 1) {
    throw DimensionError("cosine_rows: expected rank-1 vector, got " + shape_str(v.shape()));
  }
  if (m.rank() < 1 || m.shape().back() != v.dim(0)) {
    throw DimensionError("cosine_rows: last dim of " + shape_str(m.shape()) +
                         " does not match vector " + shape_str(v.shape()));
  }
  const std::size_t d = v.dim(0);
  const std::size_t rows = m.size() / d;
  Shape out_shape(m.shape().begin(), m.shape().end() - 1);
  const auto& md = m.data();
  const auto& vd = v.data();
  double nv = 0.0;
  for (std::size_t j = 0; j < d; ++j) nv += vd[j] * vd[j];
  nv = std::sqrt(nv);
  check_norm(nv, "cosine_rows");
  std::vector<double> out(rows), nms(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* mr = &md[r * d];
    double nm = 0.0, dot = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      nm += mr[j] * mr[j];
      dot += mr[j] * vd[j];
    }
    nm = std::sqrt(nm);
    check_norm(nm, "cosine_rows");
    nms[r] = nm;
    out[r] = dot / (nm * nv);
  }
  NodePtr pm = m.impl(), pv = v.impl();
  return make_node(out_shape, std::move(out), "cosine_rows", {pm, pv},
                   [pm, pv, rows, d, nv, nms = std::move(nms)](TensorImpl& self) {
                     const double* md2 = pm->data.data();
                     const double* vd2 = pv->data.data();
                     for (std::size_t r = 0; r < rows; ++r) {
                       const double gv = self.grad[r];
                       if (gv == 0.0) continue;
                       const double y = self.data[r];
                       const double nm = nms[r];
                       const double* mr = &md2[r * d];
                       if (pm->requires_grad) {
                         auto& g = gbuf(*pm);
                         double* gr = &g[r * d];
                         for (std::size_t j = 0; j < d; ++j) {
                           gr[j] += gv * (vd2[j] / (nm * nv) - y * mr[j] / (nm * nm));
                         }
                       }
                       if (pv->requires_grad) {
                         auto& g = gbuf(*pv);
                         for (std::size_t j = 0; j < d; ++j) {
                           g[j] += gv * (mr[j] / (nm * nv) - y * vd2[j] / (nv * nv));
                         }
                       }
                     }
                   });
}

// ---------------------------------------------------------------------------
// Loss primitives
// ---------------------------------------------------------------------------

Tensor cross_entropy_with_logits(const Tensor& logits, std::size_t label) {
  check_defined(logits, "cross_entropy_with_logits");
  if (logits.rank() != 1 || logits.size() == 0) {
    throw DimensionError("cross_entropy_with_logits: expected non-empty rank-1 logits, got " +
                         shape_str(logits.shape()));
  }
  const std::size_t k = logits.size();
  if (label >= k) {
    throw DimensionError("cross_entropy_with_logits: label " + std::to_string(label) +
                         " out of range for " + std::to_string(k) + " classes");
  }
  const auto& zd = logits.data();
  double mx = zd[0];
  for (std::size_t i = 1; i < k; ++i) mx = std::max(mx, zd[i]);
  double acc = 0.0;
  for (std::size_t i = 0; i < k; ++i) acc += std::exp(zd[i] - mx);
  const double lse = mx + std::log(acc);
  NodePtr pz = logits.impl();
  return make_node({}, {lse - zd[label]}, "cross_entropy", {pz},
                   [pz, k, label, lse](TensorImpl& self) {
                     if (!pz->requires_grad) return;
                     auto& g = gbuf(*pz);
                     const double gv = self.grad[0];
                     const double* zd2 = pz->data.data();
                     for (std::size_t i = 0; i < k; ++i) {
                       const double p = std::exp(zd2[i] - lse);
                       g[i] += gv * (p - (i == label ? 1.0 : 0.0));
                     }
                   });
}

Tensor logsumexp(const Tensor& x) {
  check_defined(x, "logsumexp");
  if (x.rank() != 1 || x.size() == 0) {
    throw DimensionError("logsumexp: expected non-empty rank-1 tensor, got " +
                         shape_str(x.shape()));
  }
  const std::size_t k = x.size();
  const auto& xd = x.data();
  double mx = xd[0];
  for (std::size_t i = 1; i < k; ++i) mx = std::max(mx, xd[i]);
  double acc = 0.0;
  for (std::size_t i = 0; i < k; ++i) acc += std::exp(xd[i] - mx);
  const double lse = mx + std::log(acc);
  NodePtr px = x.impl();
  return make_node({}, {lse}, "logsumexp", {px}, [px, k, lse](TensorImpl& self) {
    if (!px->requires_grad) return;
    auto& g = gbuf(*px);
    const double gv = self.grad[0];
    const double* xd2 = px->data.data();
    for (std::size_t i = 0; i < k; ++i) g[i] += gv * std::exp(xd2[i] - lse);
  });
}

Tensor add_bias(const Tensor& x, const Tensor& b) {
  check_defined(x, "add_bias");
  check_defined(b, "add_bias");
  if (b.rank() != 1) {
    throw DimensionError("add_bias: expected rank-1 bias, got " + shape_str(b.shape()));
  }
  const std::size_t d = b.dim(0);
  if (x.rank() < 1 || x.shape().back() != d) {
    throw DimensionError("add_bias: last dim of " + shape_str(x.shape()) +
                         " does not match bias " + shape_str(b.shape()));
  }
  const std::size_t rows = x.size() / d;
  std::vector<double> out(x.size());
  const auto& xd = x.data();
  const auto& bd = b.data();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < d; ++j) out[r * d + j] = xd[r * d + j] + bd[j];
  }
  NodePtr px = x.impl(), pb = b.impl();
  return make_node(x.shape(), std::move(out), "add_bias", {px, pb},
                   [px, pb, rows, d](TensorImpl& self) {
                     if (px->requires_grad) {
                       auto& g = gbuf(*px);
                       for (std::size_t i = 0; i < rows * d; ++i) g[i] += self.grad[i];
                     }
                     if (pb->requires_grad) {
                       auto& g = gbuf(*pb);
                       for (std::size_t r = 0; r < rows; ++r) {
                         for (std::size_t j = 0; j < d; ++j) g[j] += self.grad[r * d + j];
                       }
                     }
                   });
}

Tensor row_normalize(const Tensor& x, double eps) {
  check_defined(x, "row_normalize");
  if (x.rank() < 1) {
    throw DimensionError("row_normalize: expected rank >= 1, got " + shape_str(x.shape()));
  }
  const std::size_t d = x.shape().back();
  if (d == 0) {
    throw DimensionError("row_normalize: empty last dimension in shape " + shape_str(x.shape()));
  }
  const std::size_t rows = x.size() / d;
  std::vector<double> out(x.size());
  std::vector<double> denoms(rows);
  const auto& xd = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) s += xd[r * d + j];
    const double denom = s + eps;
    denoms[r] = denom;
    for (std::size_t j = 0; j < d; ++j) out[r * d + j] = xd[r * d + j] / denom;
  }
  NodePtr px = x.impl();
  return make_node(x.shape(), std::move(out), "row_normalize", {px},
                   [px, rows, d, denoms = std::move(denoms)](TensorImpl& self) {
                     if (!px->requires_grad) return;
                     auto& g = gbuf(*px);
                     const double* xd2 = px->data.data();
                     for (std::size_t r = 0; r < rows; ++r) {
                       const double denom = denoms[r];
                       double s = 0.0;
                       for (std::size_t j = 0; j < d; ++j) {
                         s += self.grad[r * d + j] * xd2[r * d + j];
                       }
                       const double corr = s / (denom * denom);
                       for (std::size_t j = 0; j < d; ++j) {
                         g[r * d + j] += self.grad[r * d + j] / denom - corr;
                       }
                     }
                   });
}

// ---------------------------------------------------------------------------
// Temporal depthwise convolution
// ---------------------------------------------------------------------------

Tensor temporal_dwconv3(const Tensor& x, const Tensor& kernel) {
  check_defined(x, "temporal_dwconv3");
  check_defined(kernel, "temporal_dwconv3");
  if (x.rank() != 3) {
    throw DimensionError("temporal_dwconv3: expected rank-3 input, got " + shape_str(x.shape()));
  }
  const std::size_t t_len = x.dim(0), s_len = x.dim(1), d = x.dim(2);
  if (kernel.shape() != Shape{3, d}) {
    throw DimensionError("temporal_dwconv3: kernel shape " + shape_str(kernel.shape()) +
                         " does not match [3," + std::to_string(d) + "]");
  }
  std::vector<double> out(x.size(), 0.0);
  const auto& xd = x.data();
  const auto& kd = kernel.data();
  const std::size_t frame = s_len * d;
  for (std::size_t t = 0; t < t_len; ++t) {
    for (std::size_t u = 0; u < 3; ++u) {
      const long src_t = static_cast<long>(t) + static_cast<long>(u) - 1;
      if (src_t < 0 || src_t >= static_cast<long>(t_len)) continue;
      const double* src = &xd[static_cast<std::size_t>(src_t) * frame];
      const double* ku = &kd[u * d];
      double* dst = &out[t * frame];
      for (std::size_t s = 0; s < s_len; ++s) {
        for (std::size_t j = 0; j < d; ++j) dst[s * d + j] += ku[j] * src[s * d + j];
      }
    }
  }
  NodePtr px = x.impl(), pk = kernel.impl();
  return make_node(x.shape(), std::move(out), "temporal_dwconv3", {px, pk},
                   [px, pk, t_len, s_len, d, frame](TensorImpl& self) {
                     const double* gy = self.grad.data();
                     if (pk->requires_grad) {
                       auto& gk = gbuf(*pk);
                       const double* xd2 = px->data.data();
                       for (std::size_t t = 0; t < t_len; ++t) {
                         for (std::size_t u = 0; u < 3; ++u) {
                           const long src_t = static_cast<long>(t) + static_cast<long>(u) - 1;
                           if (src_t < 0 || src_t >= static_cast<long>(t_len)) continue;
                           const double* src = &xd2[static_cast<std::size_t>(src_t) * frame];
                           const double* grow = &gy[t * frame];
                           double* gku = &gk[u * d];
                           for (std::size_t s = 0; s < s_len; ++s) {
                             for (std::size_t j = 0; j < d; ++j) {
                               gku[j] += grow[s * d + j] * src[s * d + j];
                             }
                           }
                         }
                       }
                     }
                     if (px->requires_grad) {
                       auto& gx = gbuf(*px);
                       const double* kd2 = pk->data.data();
                       for (std::size_t t = 0; t < t_len; ++t) {
                         for (std::size_t u = 0; u < 3; ++u) {
                           const long src_t = static_cast<long>(t) + static_cast<long>(u) - 1;
                           if (src_t < 0 || src_t >= static_cast<long>(t_len)) continue;
                           const double* grow = &gy[t * frame];
                           const double* ku = &kd2[u * d];
                           double* dst = &gx[static_cast<std::size_t>(src_t) * frame];
                           for (std::size_t s = 0; s < s_len; ++s) {
                             for (std::size_t j = 0; j < d; ++j) {
                               dst[s * d + j] += ku[j] * grow[s * d + j];
                             }
                           }
                         }
                       }
                     }
                   });
}

// ---------------------------------------------------------------------------
// GRU cell (composite of primitives; backward comes from the graph)
// ---------------------------------------------------------------------------

namespace {

void check_gru_param(const Tensor& w, std::size_t d, const char* name, bool is_bias) {
  const Shape want = is_bias ? Shape{d} : Shape{d, d};
  if (!w.defined() || w.shape() != want) {
    throw DimensionError(std::string("gru_cell: parameter ") + name + " has shape " +
                         (w.defined() ? shape_str(w.shape()) : "<undefined>") + ", expected " +
                         shape_str(want));
  }
}

}  // namespace

Tensor gru_cell(const Tensor& x, const Tensor& h, const GruParams& p) {
  check_defined(x, "gru_cell");
  check_defined(h, "gru_cell");
  check_same_shape("gru_cell", x, h);
  if (x.rank() != 2) {
    throw DimensionError("gru_cell: expected rank-2 input, got " + shape_str(x.shape()));
  }
  const std::size_t d = x.dim(1);
  check_gru_param(p.wz, d, "wz", false);
  check_gru_param(p.uz, d, "uz", false);
  check_gru_param(p.bz, d, "bz", true);
  check_gru_param(p.wr, d, "wr", false);
  check_gru_param(p.ur, d, "ur", false);
  check_gru_param(p.br, d, "br", true);
  check_gru_param(p.wn, d, "wn", false);
  check_gru_param(p.un, d, "un", false);
  check_gru_param(p.bn, d, "bn", true);

  Tensor z = sigmoid(add_bias(add(matmul(x, p.wz), matmul(h, p.uz)), p.bz));
  Tensor r = sigmoid(add_bias(add(matmul(x, p.wr), matmul(h, p.ur)), p.br));
  Tensor n = tanh(add_bias(add(matmul(x, p.wn), mul(r, matmul(h, p.un))), p.bn));
  return add(mul(affine(z, -1.0, 1.0), n), mul(z, h));
}

}  // namespace objvid
