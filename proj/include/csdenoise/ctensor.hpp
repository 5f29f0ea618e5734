#pragma once

#include <functional>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "csdenoise/tensor.hpp"

namespace csd {

// Split-form complex tensor: value = re + j*im, both parts dense row-major
// real tensors of identical shape. A tensor built "purely real" carries an
// all-zero imaginary part.
struct CTensor {
  RTensor re, im;

  CTensor() = default;
  CTensor(RTensor r, RTensor i);
  static CTensor real(RTensor r);
  static CTensor zeros(const Shape& s) { return CTensor(RTensor(s), RTensor(s)); }
  static CTensor scalar(double r, double i = 0.0);

  const Shape& shape() const { return re.shape; }
  int64_t numel() const { return re.numel(); }
  bool all_finite() const { return re.all_finite() && im.all_finite(); }
  bool imag_is_zero() const;
};

class Node;
using NodePtr = std::shared_ptr<Node>;

// One vertex of the reverse-mode graph. `backward` reads this node's cotangent
// and accumulates into the parents' cotangents; parts (re, im) are treated as
// independent real variables throughout.
class Node {
 public:
  CTensor value;
  CTensor grad;  // allocated on first accumulation
  bool requires_grad = false;
  bool grad_defined = false;
  std::string name;  // non-empty for parameters
  std::vector<NodePtr> parents;
  std::function<void(Node&)> backward;

  void accum_grad_re(const RTensor& g);
  void accum_grad_im(const RTensor& g);
  void ensure_grad();
};

// Shared handle to a graph node. Copies alias the same node.
class Var {
 public:
  Var() = default;
  explicit Var(CTensor v, bool requires_grad = false);

  static Var parameter(CTensor v, std::string name = "");
  static Var constant(CTensor v) { return Var(std::move(v), false); }

  bool defined() const { return node_ != nullptr; }
  const CTensor& value() const { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  int64_t numel() const { return node_->value.numel(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  bool has_grad() const { return node_ && node_->grad_defined; }
  const CTensor& grad() const;
  void zero_grad();
  const std::string& name() const { return node_->name; }

  // scalar access (for loss values); requires numel()==1
  double item() const;

  NodePtr node() const { return node_; }
  explicit Var(NodePtr n) : node_(std::move(n)) {}

 private:
  NodePtr node_;
};

// When disabled, ops compute values but record no graph (inference mode).
bool grad_enabled();
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();

 private:
  bool prev_;
};

// Reverse-mode sweep from a real scalar loss (numel 1, imag exactly 0).
// Populates grad on every requires_grad node reachable from `loss`.
void backward(const Var& loss);

// ---------------------------------------------------------------------------
// Lifting: CO(T) = O(re) + j*O(im), both parts through the same real op.
// ---------------------------------------------------------------------------

// A real-tensor operation with a hand-written vector-Jacobian product.
class RealTensorOp {
 public:
  virtual ~RealTensorOp() = default;
  virtual RTensor forward(const RTensor& x) const = 0;
  // cotangent of x given input x, output y and cotangent g of y
  virtual RTensor vjp(const RTensor& x, const RTensor& y, const RTensor& g) const = 0;
  virtual std::string name() const { return "real_op"; }
};

Var lift(const RealTensorOp& op, const Var& t);

// ---------------------------------------------------------------------------
// Core op surface. Every op validates shapes and, with grad enabled, records
// its backward closure.
// ---------------------------------------------------------------------------

// arithmetic (elementwise, equal shapes)
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var cmul(const Var& a, const Var& b);   // complex product per element
Var rdiv(const Var& a, const Var& b);   // real parts only; imag of result is 0
Var scale(const Var& a, double s);      // both parts * s
Var add_scalar(const Var& a, double s); // re + s
Var add_to_real(const Var& a, const Var& b);  // re_a + re_b, im_a unchanged
Var neg(const Var& a);

// complex structure
Var cabs(const Var& t);   // sqrt(re^2+im^2); subgradient 0 at the origin
Var creal(const Var& t);  // real part as a purely real tensor
Var cimag(const Var& t);  // imaginary part as a purely real tensor
Var conj(const Var& t);   // re - j*im

// real-path pointwise
Var log_real(const Var& t);               // ln of re (im must be zero)
Var clamp_max_real(const Var& t, double hi);

// reductions -> shape [1]
Var sum(const Var& t);
Var mean(const Var& t);

// data movement
Var reshape(const Var& t, Shape s);
using IndexMap = std::shared_ptr<const std::vector<int64_t>>;
// out.flat[i] = in.flat[(*idx)[i]]; indices may repeat (broadcast); backward
// scatter-adds.
Var gather(const Var& t, IndexMap idx, Shape out_shape);
Var concat_last(const Var& a, const Var& b);

// linear algebra: batched complex matmul, [*,m,k] x [*,k,n] -> [*,m,n]
Var cmatmul(const Var& a, const Var& b, bool transpose_b = false);

// lifted nonlinearities
Var relu(const Var& t);
Var gelu(const Var& t);
Var sigmoid(const Var& t);
Var softmax_last(const Var& t);

// lifted parametric layers; weights/biases are real parameters shared by both
// parts. Additive parameters (bias, beta) touch the real part only so the
// real subspace maps to itself (see module docs).
Var linear(const Var& x, const Var& w, const Var& b);  // w [out,in], b [out] or empty Var
Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-5);
Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad);  // w [Co,Ci,kh,kw]
Var dropout(const Var& t, double p, std::mt19937_64& rng, bool shared_mask = false);

// separable valid-mode filter along H and W of an NCHW tensor (fixed kernel)
Var sepconv_valid(const Var& x, const std::vector<double>& kernel);

// linear resample along one axis
struct Interp1D {
  int64_t src_len = 0, dst_len = 0;
  std::vector<int64_t> i0, i1;  // per output index
  std::vector<double> w;        // weight of i1; (1-w) of i0
};
Interp1D make_interp(int64_t src_len, int64_t dst_len);  // half-pixel bilinear
Var axis_interp(const Var& x, size_t axis, const Interp1D& plan);

// value-level helpers (no graph)
CTensor cmatmul_value(const CTensor& a, const CTensor& b, bool transpose_b = false);
RTensor matmul_value(const RTensor& a, const RTensor& b, bool transpose_b = false);

}  // namespace csd
