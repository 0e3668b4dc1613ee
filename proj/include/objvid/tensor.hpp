#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace objvid {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& s);
std::string shape_str(const Shape& s);

struct TensorImpl;
using NodePtr = std::shared_ptr<TensorImpl>;

// One node of the computation graph. Leaves are parameters or constants;
// interior nodes record the producing op, its inputs, and a closure that
// routes the node's gradient to its parents.
struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  bool requires_grad = false;
  std::vector<double> grad;  // sized lazily during backward
  std::vector<NodePtr> parents;
  std::function<void(TensorImpl&)> backward_fn;
  const char* op = "leaf";
};

// Value-semantic handle on a graph node. Copies share the node.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(const Shape& shape, bool requires_grad = false);
  static Tensor full(const Shape& shape, double value, bool requires_grad = false);
  static Tensor from_data(const Shape& shape, std::vector<double> data,
                          bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t size() const;
  std::size_t dim(std::size_t i) const;

  std::vector<double>& data();
  const std::vector<double>& data() const;
  double value() const;  // scalar read; throws ContractError on non-scalars

  bool requires_grad() const;
  bool has_grad() const;
  const std::vector<double>& grad() const;
  void zero_grad();

  // Reverse-mode sweep from a scalar node. Visits the reachable subgraph in
  // reverse topological order exactly once; grads of visited nodes are reset
  // before accumulation, so each call reports this graph's gradients alone.
  void backward() const;

  NodePtr impl() const { return impl_; }
  static Tensor wrap(NodePtr p) { return Tensor(std::move(p)); }

 private:
  explicit Tensor(NodePtr p) : impl_(std::move(p)) {}
  NodePtr impl_;
};

// Forward-only evaluation: while a guard is alive, new nodes record neither
// parents nor backward closures.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

// ---------------------------------------------------------------------------
// Primitive ops. All operate on 64-bit reals and are deterministic:
// identical inputs produce bit-identical outputs.
// ---------------------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
// y = mul_coeff * x + add_coeff, elementwise.
Tensor affine(const Tensor& x, double mul_coeff, double add_coeff);
Tensor scale(const Tensor& x, double c);
Tensor neg(const Tensor& x);

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& x);

// Max-subtracted softmax along `axis`. The denominator is accumulated in
// descending value order, which keeps the result invariant under any
// permutation of the entries along the axis.
Tensor softmax(const Tensor& x, std::size_t axis);

// Per-row normalization over the last axis with epsilon 1e-5 under the
// variance square root, then elementwise affine with gain and bias.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias);

Tensor sigmoid(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor gelu(const Tensor& x);  // exact erf form

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t len);
Tensor reshape(const Tensor& x, const Shape& shape);

Tensor mean(const Tensor& x, std::size_t axis);
Tensor sum(const Tensor& x, std::size_t axis);
Tensor mean_all(const Tensor& x);
Tensor sum_all(const Tensor& x);

// Elementwise sum / mean of same-shape tensors; one graph node regardless of
// list length.
Tensor sum_list(const std::vector<Tensor>& parts);
Tensor mean_list(const std::vector<Tensor>& parts);

Tensor l2_norm(const Tensor& x, std::size_t axis);

// Cosine similarity along `axis` between same-shape tensors.
Tensor cosine(const Tensor& a, const Tensor& b, std::size_t axis);
// Cosine of every row of m (last axis D) against a single vector v[D].
// Both variants raise NumericError on (near-)zero-norm inputs.
Tensor cosine_rows(const Tensor& m, const Tensor& v);

Tensor cross_entropy_with_logits(const Tensor& logits, std::size_t label);

// Broadcast-add a vector b[D] over the last axis of x[...xD].
Tensor add_bias(const Tensor& x, const Tensor& b);

// y_ij = x_ij / (sum_j x_ij + eps) over the last axis.
Tensor row_normalize(const Tensor& x, double eps);

// log(sum(exp(x))) over a rank-1 tensor, max-subtracted.
Tensor logsumexp(const Tensor& x);

// Depthwise temporal convolution: x[TxHWxD], kernel[3xD], zero padding in t.
Tensor temporal_dwconv3(const Tensor& x, const Tensor& kernel);

// Shared GRU parameters; each weight is DxD, each bias D.
struct GruParams {
  Tensor wz, uz, bz;  // update gate
  Tensor wr, ur, br;  // reset gate
  Tensor wn, un, bn;  // candidate
};

// Row-wise GRU update with shared parameters:
//   z = sigm(x Wz + h Uz + bz), r = sigm(x Wr + h Ur + br),
//   n = tanh(x Wn + r*(h Un) + bn), h' = (1-z)*n + z*h.
// The reset gate multiplies the recurrent product before the candidate
// nonlinearity (the convention is pinned, not configurable).
Tensor gru_cell(const Tensor& x, const Tensor& h, const GruParams& p);

constexpr double kLayerNormEps = 1e-5;

}  // namespace objvid
