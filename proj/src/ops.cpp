#include <Eigen/Core>
#include <cmath>
#include <utility>

#include "csdenoise/ctensor.hpp"

namespace csd {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using CMap = Eigen::Map<const RowMat>;
using MMap = Eigen::Map<RowMat>;

// c += alpha * op(a) * op(b); all row-major dense blocks
void gemm_acc(const double* a, int64_t ar, int64_t ac, bool ta, const double* b, int64_t br,
              int64_t bc, bool tb, double alpha, double* c, int64_t cr, int64_t cc) {
  CMap A(a, ar, ac);
  CMap B(b, br, bc);
  MMap C(c, cr, cc);
  if (!ta && !tb)
    C.noalias() += alpha * A * B;
  else if (!ta && tb)
    C.noalias() += alpha * A * B.transpose();
  else if (ta && !tb)
    C.noalias() += alpha * A.transpose() * B;
  else
    C.noalias() += alpha * A.transpose() * B.transpose();
}

Var make_node(CTensor value, std::vector<Var> parents, std::function<void(Node&)> bw) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  if (grad_enabled()) {
    bool req = false;
    for (const auto& p : parents) req = req || p.requires_grad();
    if (req) {
      n->requires_grad = true;
      for (const auto& p : parents) n->parents.push_back(p.node());
      n->backward = std::move(bw);
    }
  }
  return Var(n);
}

void check_same_shape(const char* op, const Var& a, const Var& b) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
}

void accum(Node& dst, const RTensor& g_re, const RTensor& g_im) {
  dst.accum_grad_re(g_re);
  dst.accum_grad_im(g_im);
}

}  // namespace

// ---------------------------------------------------------------------------
// arithmetic
// ---------------------------------------------------------------------------

Var add(const Var& a, const Var& b) {
  check_same_shape("add", a, b);
  CTensor out = CTensor::zeros(a.shape());
  const int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) {
    out.re[i] = a.value().re[i] + b.value().re[i];
    out.im[i] = a.value().im[i] + b.value().im[i];
  }
  return make_node(std::move(out), {a, b}, [a, b](Node& nd) {
    if (a.requires_grad()) accum(*a.node(), nd.grad.re, nd.grad.im);
    if (b.requires_grad()) accum(*b.node(), nd.grad.re, nd.grad.im);
  });
}

Var sub(const Var& a, const Var& b) {
  check_same_shape("sub", a, b);
  CTensor out = CTensor::zeros(a.shape());
  const int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) {
    out.re[i] = a.value().re[i] - b.value().re[i];
    out.im[i] = a.value().im[i] - b.value().im[i];
  }
  return make_node(std::move(out), {a, b}, [a, b](Node& nd) {
    if (a.requires_grad()) accum(*a.node(), nd.grad.re, nd.grad.im);
    if (b.requires_grad()) {
      b.node()->ensure_grad();
      for (int64_t i = 0; i < nd.grad.numel(); ++i) {
        b.node()->grad.re[i] -= nd.grad.re[i];
        b.node()->grad.im[i] -= nd.grad.im[i];
      }
    }
  });
}

Var cmul(const Var& a, const Var& b) {
  check_same_shape("cmul", a, b);
  CTensor out = CTensor::zeros(a.shape());
  const int64_t n = a.numel();
  const CTensor &av = a.value(), &bv = b.value();
  for (int64_t i = 0; i < n; ++i) {
    out.re[i] = av.re[i] * bv.re[i] - av.im[i] * bv.im[i];
    out.im[i] = av.re[i] * bv.im[i] + av.im[i] * bv.re[i];
  }
  return make_node(std::move(out), {a, b}, [a, b](Node& nd) {
    const int64_t n = nd.grad.numel();
    const CTensor &av = a.node()->value, &bv = b.node()->value;
    if (a.requires_grad()) {
      a.node()->ensure_grad();
      CTensor& g = a.node()->grad;
      for (int64_t i = 0; i < n; ++i) {
        g.re[i] += nd.grad.re[i] * bv.re[i] + nd.grad.im[i] * bv.im[i];
        g.im[i] += -nd.grad.re[i] * bv.im[i] + nd.grad.im[i] * bv.re[i];
      }
    }
    if (b.requires_grad()) {
      b.node()->ensure_grad();
      CTensor& g = b.node()->grad;
      for (int64_t i = 0; i < n; ++i) {
        g.re[i] += nd.grad.re[i] * av.re[i] + nd.grad.im[i] * av.im[i];
        g.im[i] += -nd.grad.re[i] * av.im[i] + nd.grad.im[i] * av.re[i];
      }
    }
  });
}

Var rdiv(const Var& a, const Var& b) {
  check_same_shape("rdiv", a, b);
  CTensor out = CTensor::zeros(a.shape());
  const int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) out.re[i] = a.value().re[i] / b.value().re[i];
  return make_node(std::move(out), {a, b}, [a, b](Node& nd) {
    const int64_t n = nd.grad.numel();
    const RTensor &ar = a.node()->value.re, &br = b.node()->value.re;
    if (a.requires_grad()) {
      a.node()->ensure_grad();
      for (int64_t i = 0; i < n; ++i) a.node()->grad.re[i] += nd.grad.re[i] / br[i];
    }
    if (b.requires_grad()) {
      b.node()->ensure_grad();
      for (int64_t i = 0; i < n; ++i)
        b.node()->grad.re[i] -= nd.grad.re[i] * ar[i] / (br[i] * br[i]);
    }
  });
}

Var scale(const Var& a, double s) {
  CTensor out = CTensor::zeros(a.shape());
  const int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) {
    out.re[i] = a.value().re[i] * s;
    out.im[i] = a.value().im[i] * s;
  }
  return make_node(std::move(out), {a}, [a, s](Node& nd) {
    a.node()->ensure_grad();
    for (int64_t i = 0; i < nd.grad.numel(); ++i) {
      a.node()->grad.re[i] += nd.grad.re[i] * s;
      a.node()->grad.im[i] += nd.grad.im[i] * s;
    }
  });
}

Var neg(const Var& a) { return scale(a, -1.0); }

Var add_scalar(const Var& a, double s) {
  CTensor out = a.value();
  for (auto& v : out.re.data) v += s;
  return make_node(std::move(out), {a}, [a](Node& nd) {
    if (a.requires_grad()) accum(*a.node(), nd.grad.re, nd.grad.im);
  });
}

Var add_to_real(const Var& a, const Var& b) {
  const int64_t nb = b.numel();
  if (nb == 0 || a.numel() % nb != 0)
    throw ShapeError("add_to_real: " + shape_str(b.shape()) + " does not tile " +
                     shape_str(a.shape()));
  CTensor out = a.value();
  for (int64_t i = 0; i < out.numel(); ++i) out.re[i] += b.value().re[i % nb];
  return make_node(std::move(out), {a, b}, [a, b, nb](Node& nd) {
    if (a.requires_grad()) accum(*a.node(), nd.grad.re, nd.grad.im);
    if (b.requires_grad()) {
      b.node()->ensure_grad();
      for (int64_t i = 0; i < nd.grad.numel(); ++i)
        b.node()->grad.re[i % nb] += nd.grad.re[i];
    }
  });
}

// ---------------------------------------------------------------------------
// complex structure
// ---------------------------------------------------------------------------

Var cabs(const Var& t) {
  CTensor out = CTensor::zeros(t.shape());
  const int64_t n = t.numel();
  for (int64_t i = 0; i < n; ++i)
    out.re[i] = std::sqrt(t.value().re[i] * t.value().re[i] + t.value().im[i] * t.value().im[i]);
  return make_node(std::move(out), {t}, [t](Node& nd) {
    t.node()->ensure_grad();
    const CTensor& v = t.node()->value;
    for (int64_t i = 0; i < nd.grad.numel(); ++i) {
      const double r = nd.value.re[i];
      if (r == 0.0) continue;  // subgradient 0 at the origin
      t.node()->grad.re[i] += nd.grad.re[i] * v.re[i] / r;
      t.node()->grad.im[i] += nd.grad.re[i] * v.im[i] / r;
    }
  });
}

Var creal(const Var& t) {
  CTensor out = CTensor::real(t.value().re);
  return make_node(std::move(out), {t},
                   [t](Node& nd) { t.node()->accum_grad_re(nd.grad.re); });
}

Var cimag(const Var& t) {
  CTensor out = CTensor::real(t.value().im);
  return make_node(std::move(out), {t},
                   [t](Node& nd) { t.node()->accum_grad_im(nd.grad.re); });
}

Var conj(const Var& t) {
  CTensor out = t.value();
  for (auto& v : out.im.data) v = -v;
  return make_node(std::move(out), {t}, [t](Node& nd) {
    t.node()->ensure_grad();
    for (int64_t i = 0; i < nd.grad.numel(); ++i) {
      t.node()->grad.re[i] += nd.grad.re[i];
      t.node()->grad.im[i] -= nd.grad.im[i];
    }
  });
}

Var log_real(const Var& t) {
  CTensor out = CTensor::zeros(t.shape());
  for (int64_t i = 0; i < t.numel(); ++i) {
    const double x = t.value().re[i];
    if (x <= 0.0) throw ValueError("log_real: non-positive argument " + std::to_string(x));
    out.re[i] = std::log(x);
  }
  return make_node(std::move(out), {t}, [t](Node& nd) {
    t.node()->ensure_grad();
    for (int64_t i = 0; i < nd.grad.numel(); ++i)
      t.node()->grad.re[i] += nd.grad.re[i] / t.node()->value.re[i];
  });
}

Var clamp_max_real(const Var& t, double hi) {
  CTensor out = t.value();
  for (auto& v : out.re.data) v = std::min(v, hi);
  return make_node(std::move(out), {t}, [t, hi](Node& nd) {
    t.node()->ensure_grad();
    for (int64_t i = 0; i < nd.grad.numel(); ++i) {
      if (t.node()->value.re[i] < hi) t.node()->grad.re[i] += nd.grad.re[i];
      t.node()->grad.im[i] += nd.grad.im[i];
    }
  });
}

// ---------------------------------------------------------------------------
// reductions
// ---------------------------------------------------------------------------

Var sum(const Var& t) {
  double sr = 0.0, si = 0.0;
  for (int64_t i = 0; i < t.numel(); ++i) {
    sr += t.value().re[i];
    si += t.value().im[i];
  }
  return make_node(CTensor::scalar(sr, si), {t}, [t](Node& nd) {
    t.node()->ensure_grad();
    const double gr = nd.grad.re[0], gi = nd.grad.im[0];
    for (int64_t i = 0; i < t.numel(); ++i) {
      t.node()->grad.re[i] += gr;
      t.node()->grad.im[i] += gi;
    }
  });
}

Var mean(const Var& t) { return scale(sum(t), 1.0 / static_cast<double>(t.numel())); }

// ---------------------------------------------------------------------------
// data movement
// ---------------------------------------------------------------------------

Var reshape(const Var& t, Shape s) {
  if (shape_numel(s) != t.numel())
    throw ShapeError("reshape: cannot view " + shape_str(t.shape()) + " as " + shape_str(s));
  CTensor out(RTensor(s, t.value().re.data), RTensor(s, t.value().im.data));
  return make_node(std::move(out), {t}, [t](Node& nd) {
    t.node()->ensure_grad();
    for (int64_t i = 0; i < nd.grad.numel(); ++i) {
      t.node()->grad.re[i] += nd.grad.re[i];
      t.node()->grad.im[i] += nd.grad.im[i];
    }
  });
}

Var gather(const Var& t, IndexMap idx, Shape out_shape) {
  const int64_t n_out = shape_numel(out_shape);
  if (static_cast<int64_t>(idx->size()) != n_out)
    throw ShapeError("gather: index size " + std::to_string(idx->size()) +
                     " does not match output " + shape_str(out_shape));
  CTensor out = CTensor::zeros(out_shape);
  const CTensor& v = t.value();
  const int64_t n_in = t.numel();
  for (int64_t i = 0; i < n_out; ++i) {
    const int64_t j = (*idx)[i];
    if (j < 0 || j >= n_in) throw ValueError("gather: index out of range");
    out.re[i] = v.re[j];
    out.im[i] = v.im[j];
  }
  return make_node(std::move(out), {t}, [t, idx](Node& nd) {
    t.node()->ensure_grad();
    CTensor& g = t.node()->grad;
    for (int64_t i = 0; i < nd.grad.numel(); ++i) {
      const int64_t j = (*idx)[i];
      g.re[j] += nd.grad.re[i];
      g.im[j] += nd.grad.im[i];
    }
  });
}

Var concat_last(const Var& a, const Var& b) {
  const Shape &sa = a.shape(), &sb = b.shape();
  if (sa.size() != sb.size() || sa.empty())
    throw ShapeError("concat_last: rank mismatch " + shape_str(sa) + " vs " + shape_str(sb));
  for (size_t i = 0; i + 1 < sa.size(); ++i)
    if (sa[i] != sb[i])
      throw ShapeError("concat_last: shapes " + shape_str(sa) + " vs " + shape_str(sb));
  const int64_t la = sa.back(), lb = sb.back();
  Shape so = sa;
  so.back() = la + lb;
  const int64_t rows = shape_numel(sa) / la;
  CTensor out = CTensor::zeros(so);
  for (int64_t r = 0; r < rows; ++r) {
    for (int64_t i = 0; i < la; ++i) {
      out.re[r * (la + lb) + i] = a.value().re[r * la + i];
      out.im[r * (la + lb) + i] = a.value().im[r * la + i];
    }
    for (int64_t i = 0; i < lb; ++i) {
      out.re[r * (la + lb) + la + i] = b.value().re[r * lb + i];
      out.im[r * (la + lb) + la + i] = b.value().im[r * lb + i];
    }
  }
  return make_node(std::move(out), {a, b}, [a, b, rows, la, lb](Node& nd) {
    if (a.requires_grad()) {
      a.node()->ensure_grad();
      for (int64_t r = 0; r < rows; ++r)
        for (int64_t i = 0; i < la; ++i) {
          a.node()->grad.re[r * la + i] += nd.grad.re[r * (la + lb) + i];
          a.node()->grad.im[r * la + i] += nd.grad.im[r * (la + lb) + i];
        }
    }
    if (b.requires_grad()) {
      b.node()->ensure_grad();
      for (int64_t r = 0; r < rows; ++r)
        for (int64_t i = 0; i < lb; ++i) {
          b.node()->grad.re[r * lb + i] += nd.grad.re[r * (la + lb) + la + i];
          b.node()->grad.im[r * lb + i] += nd.grad.im[r * (la + lb) + la + i];
        }
    }
  });
}

// ---------------------------------------------------------------------------
// batched complex matmul
// ---------------------------------------------------------------------------

namespace {

struct MatmulDims {
  int64_t batch, m, k, n;
};

MatmulDims matmul_dims(const Shape& sa, const Shape& sb, bool tb) {
  if (sa.size() < 2 || sb.size() != sa.size())
    throw ShapeError("cmatmul: need matching ranks >= 2, got " + shape_str(sa) + " x " +
                     shape_str(sb));
  int64_t batch = 1;
  for (size_t i = 0; i + 2 < sa.size(); ++i) {
    if (sa[i] != sb[i])
      throw ShapeError("cmatmul: batch dims differ: " + shape_str(sa) + " x " + shape_str(sb));
    batch *= sa[i];
  }
  const int64_t m = sa[sa.size() - 2], k = sa[sa.size() - 1];
  const int64_t kb = tb ? sb[sb.size() - 1] : sb[sb.size() - 2];
  const int64_t n = tb ? sb[sb.size() - 2] : sb[sb.size() - 1];
  if (k != kb)
    throw ShapeError("cmatmul: inner dims disagree: " + shape_str(sa) + " x " + shape_str(sb) +
                     (tb ? " (b transposed)" : ""));
  return {batch, m, k, n};
}

}  // namespace

RTensor matmul_value(const RTensor& a, const RTensor& b, bool tb) {
  const MatmulDims d = matmul_dims(a.shape, b.shape, tb);
  Shape so(a.shape.begin(), a.shape.end() - 2);
  so.push_back(d.m);
  so.push_back(d.n);
  RTensor out(so);
  const int64_t sa = d.m * d.k, sb = d.k * d.n, sc = d.m * d.n;
  for (int64_t t = 0; t < d.batch; ++t)
    gemm_acc(a.ptr() + t * sa, d.m, d.k, false, b.ptr() + t * sb, tb ? d.n : d.k, tb ? d.k : d.n,
             tb, 1.0, out.ptr() + t * sc, d.m, d.n);
  return out;
}

CTensor cmatmul_value(const CTensor& a, const CTensor& b, bool tb) {
  Var r = cmatmul(Var::constant(a), Var::constant(b), tb);
  return r.value();
}

Var cmatmul(const Var& a, const Var& b, bool tb) {
  const MatmulDims d = matmul_dims(a.shape(), b.shape(), tb);
  Shape so(a.shape().begin(), a.shape().end() - 2);
  so.push_back(d.m);
  so.push_back(d.n);
  CTensor out = CTensor::zeros(so);
  const int64_t stra = d.m * d.k, strb = d.k * d.n, strc = d.m * d.n;
  const CTensor &av = a.value(), &bv = b.value();
  for (int64_t t = 0; t < d.batch; ++t) {
    const double *ar = av.re.ptr() + t * stra, *ai = av.im.ptr() + t * stra;
    const double *br = bv.re.ptr() + t * strb, *bi = bv.im.ptr() + t * strb;
    double *cr = out.re.ptr() + t * strc, *ci = out.im.ptr() + t * strc;
    const int64_t brows = tb ? d.n : d.k, bcols = tb ? d.k : d.n;
    // re = ar*br - ai*bi ; im = ar*bi + ai*br
    gemm_acc(ar, d.m, d.k, false, br, brows, bcols, tb, 1.0, cr, d.m, d.n);
    gemm_acc(ai, d.m, d.k, false, bi, brows, bcols, tb, -1.0, cr, d.m, d.n);
    gemm_acc(ar, d.m, d.k, false, bi, brows, bcols, tb, 1.0, ci, d.m, d.n);
    gemm_acc(ai, d.m, d.k, false, br, brows, bcols, tb, 1.0, ci, d.m, d.n);
  }
  return make_node(std::move(out), {a, b}, [a, b, d, tb, stra, strb, strc](Node& nd) {
    const CTensor &av = a.node()->value, &bv = b.node()->value;
    for (int64_t t = 0; t < d.batch; ++t) {
      const double *gr = nd.grad.re.ptr() + t * strc, *gi = nd.grad.im.ptr() + t * strc;
      const double *ar = av.re.ptr() + t * stra, *ai = av.im.ptr() + t * stra;
      const double *br = bv.re.ptr() + t * strb, *bi = bv.im.ptr() + t * strb;
      const int64_t brows = tb ? d.n : d.k, bcols = tb ? d.k : d.n;
      if (a.requires_grad()) {
        a.node()->ensure_grad();
        double *dar = a.node()->grad.re.ptr() + t * stra, *dai = a.node()->grad.im.ptr() + t * stra;
        // d(ar) = gr*op(br)^T + gi*op(bi)^T ; d(ai) = -gr*op(bi)^T + gi*op(br)^T
        gemm_acc(gr, d.m, d.n, false, br, brows, bcols, !tb, 1.0, dar, d.m, d.k);
        gemm_acc(gi, d.m, d.n, false, bi, brows, bcols, !tb, 1.0, dar, d.m, d.k);
        gemm_acc(gr, d.m, d.n, false, bi, brows, bcols, !tb, -1.0, dai, d.m, d.k);
        gemm_acc(gi, d.m, d.n, false, br, brows, bcols, !tb, 1.0, dai, d.m, d.k);
      }
      if (b.requires_grad()) {
        b.node()->ensure_grad();
        double *dbr = b.node()->grad.re.ptr() + t * strb, *dbi = b.node()->grad.im.ptr() + t * strb;
        if (!tb) {
          // d(br) = ar^T*gr + ai^T*gi ; d(bi) = -ai^T*gr + ar^T*gi
          gemm_acc(ar, d.m, d.k, true, gr, d.m, d.n, false, 1.0, dbr, d.k, d.n);
          gemm_acc(ai, d.m, d.k, true, gi, d.m, d.n, false, 1.0, dbr, d.k, d.n);
          gemm_acc(ai, d.m, d.k, true, gr, d.m, d.n, false, -1.0, dbi, d.k, d.n);
          gemm_acc(ar, d.m, d.k, true, gi, d.m, d.n, false, 1.0, dbi, d.k, d.n);
        } else {
          // y = a*b^T: d(br) = gr^T*ar + gi^T*ai ; d(bi) = -gr^T*ai + gi^T*ar
          gemm_acc(gr, d.m, d.n, true, ar, d.m, d.k, false, 1.0, dbr, d.n, d.k);
          gemm_acc(gi, d.m, d.n, true, ai, d.m, d.k, false, 1.0, dbr, d.n, d.k);
          gemm_acc(gr, d.m, d.n, true, ai, d.m, d.k, false, -1.0, dbi, d.n, d.k);
          gemm_acc(gi, d.m, d.n, true, ar, d.m, d.k, false, 1.0, dbi, d.n, d.k);
        }
      }
    }
  });
}

// ---------------------------------------------------------------------------
// lifted elementwise nonlinearities
// ---------------------------------------------------------------------------

namespace {

// elementwise lift with pointwise derivative df(x, y)
template <typename F, typename DF>
Var lift_unary(const Var& t, F f, DF df) {
  CTensor out = CTensor::zeros(t.shape());
  for (int64_t i = 0; i < t.numel(); ++i) {
    out.re[i] = f(t.value().re[i]);
    out.im[i] = f(t.value().im[i]);
  }
  return make_node(std::move(out), {t}, [t, df](Node& nd) {
    t.node()->ensure_grad();
    const CTensor& v = t.node()->value;
    for (int64_t i = 0; i < nd.grad.numel(); ++i) {
      t.node()->grad.re[i] += nd.grad.re[i] * df(v.re[i], nd.value.re[i]);
      t.node()->grad.im[i] += nd.grad.im[i] * df(v.im[i], nd.value.im[i]);
    }
  });
}

constexpr double kInvSqrt2 = 0.7071067811865475244;
constexpr double kInvSqrt2Pi = 0.3989422804014326779;

}  // namespace

Var relu(const Var& t) {
  return lift_unary(
      t, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var gelu(const Var& t) {
  return lift_unary(
      t, [](double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); },
      [](double x, double) {
        const double cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
        return cdf + x * kInvSqrt2Pi * std::exp(-0.5 * x * x);
      });
}

Var sigmoid(const Var& t) {
  return lift_unary(
      t, [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
      [](double, double y) { return y * (1.0 - y); });
}

Var softmax_last(const Var& t) {
  const Shape& s = t.shape();
  if (s.empty()) throw ShapeError("softmax_last: scalar input");
  const int64_t cols = s.back(), rows = t.numel() / cols;
  CTensor out = CTensor::zeros(s);
  auto run = [&](const RTensor& x, RTensor& y) {
    for (int64_t r = 0; r < rows; ++r) {
      const double* xr = x.ptr() + r * cols;
      double* yr = y.ptr() + r * cols;
      double mx = xr[0];
      for (int64_t i = 1; i < cols; ++i) mx = std::max(mx, xr[i]);
      double z = 0.0;
      for (int64_t i = 0; i < cols; ++i) {
        yr[i] = std::exp(xr[i] - mx);
        z += yr[i];
      }
      for (int64_t i = 0; i < cols; ++i) yr[i] /= z;
    }
  };
  run(t.value().re, out.re);
  run(t.value().im, out.im);
  return make_node(std::move(out), {t}, [t, rows, cols](Node& nd) {
    t.node()->ensure_grad();
    auto back = [&](const RTensor& y, const RTensor& g, RTensor& gx) {
      for (int64_t r = 0; r < rows; ++r) {
        const double* yr = y.ptr() + r * cols;
        const double* gr = g.ptr() + r * cols;
        double* gxr = gx.ptr() + r * cols;
        double dot = 0.0;
        for (int64_t i = 0; i < cols; ++i) dot += gr[i] * yr[i];
        for (int64_t i = 0; i < cols; ++i) gxr[i] += yr[i] * (gr[i] - dot);
      }
    };
    back(nd.value.re, nd.grad.re, t.node()->grad.re);
    back(nd.value.im, nd.grad.im, t.node()->grad.im);
  });
}

// ---------------------------------------------------------------------------
// lifted parametric layers
// ---------------------------------------------------------------------------

Var linear(const Var& x, const Var& w, const Var& b) {
  const Shape& sx = x.shape();
  const Shape& sw = w.shape();
  if (sx.empty() || sw.size() != 2)
    throw ShapeError("linear: x " + shape_str(sx) + ", w " + shape_str(sw));
  const int64_t in = sx.back(), out_dim = sw[0];
  if (sw[1] != in)
    throw ShapeError("linear: weight " + shape_str(sw) + " incompatible with input " +
                     shape_str(sx));
  if (b.defined() && (b.shape() != Shape{out_dim}))
    throw ShapeError("linear: bias " + shape_str(b.shape()) + " vs out dim " +
                     std::to_string(out_dim));
  const int64_t rows = x.numel() / in;
  Shape so = sx;
  so.back() = out_dim;
  CTensor out = CTensor::zeros(so);
  // y_part = x_part * W^T (+ bias on the real part)
  gemm_acc(x.value().re.ptr(), rows, in, false, w.value().re.ptr(), out_dim, in, true, 1.0,
           out.re.ptr(), rows, out_dim);
  gemm_acc(x.value().im.ptr(), rows, in, false, w.value().re.ptr(), out_dim, in, true, 1.0,
           out.im.ptr(), rows, out_dim);
  if (b.defined())
    for (int64_t r = 0; r < rows; ++r)
      for (int64_t o = 0; o < out_dim; ++o) out.re[r * out_dim + o] += b.value().re[o];

  std::vector<Var> parents = b.defined() ? std::vector<Var>{x, w, b} : std::vector<Var>{x, w};
  return make_node(std::move(out), std::move(parents), [x, w, b, rows, in, out_dim](Node& nd) {
    if (x.requires_grad()) {
      x.node()->ensure_grad();
      gemm_acc(nd.grad.re.ptr(), rows, out_dim, false, w.node()->value.re.ptr(), out_dim, in,
               false, 1.0, x.node()->grad.re.ptr(), rows, in);
      gemm_acc(nd.grad.im.ptr(), rows, out_dim, false, w.node()->value.re.ptr(), out_dim, in,
               false, 1.0, x.node()->grad.im.ptr(), rows, in);
    }
    if (w.requires_grad()) {
      w.node()->ensure_grad();
      gemm_acc(nd.grad.re.ptr(), rows, out_dim, true, x.node()->value.re.ptr(), rows, in, false,
               1.0, w.node()->grad.re.ptr(), out_dim, in);
      gemm_acc(nd.grad.im.ptr(), rows, out_dim, true, x.node()->value.im.ptr(), rows, in, false,
               1.0, w.node()->grad.re.ptr(), out_dim, in);
    }
    if (b.defined() && b.requires_grad()) {
      b.node()->ensure_grad();
      for (int64_t r = 0; r < rows; ++r)
        for (int64_t o = 0; o < out_dim; ++o) b.node()->grad.re[o] += nd.grad.re[r * out_dim + o];
    }
  });
}

Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps) {
  const Shape& s = x.shape();
  if (s.empty()) throw ShapeError("layer_norm: scalar input");
  const int64_t c = s.back(), rows = x.numel() / c;
  if (gamma.shape() != Shape{c} || beta.shape() != Shape{c})
    throw ShapeError("layer_norm: affine params must be [" + std::to_string(c) + "]");
  CTensor out = CTensor::zeros(s);
  RTensor inv_std_re(Shape{rows}), inv_std_im(Shape{rows});
  auto run = [&](const RTensor& xp, RTensor& yp, RTensor& inv_std, bool add_beta) {
    for (int64_t r = 0; r < rows; ++r) {
      const double* xr = xp.ptr() + r * c;
      double* yr = yp.ptr() + r * c;
      double mu = 0.0;
      for (int64_t i = 0; i < c; ++i) mu += xr[i];
      mu /= c;
      double var = 0.0;
      for (int64_t i = 0; i < c; ++i) var += (xr[i] - mu) * (xr[i] - mu);
      var /= c;
      const double is = 1.0 / std::sqrt(var + eps);
      inv_std[r] = is;
      for (int64_t i = 0; i < c; ++i) {
        const double xhat = (xr[i] - mu) * is;
        yr[i] = gamma.value().re[i] * xhat + (add_beta ? beta.value().re[i] : 0.0);
      }
    }
  };
  run(x.value().re, out.re, inv_std_re, true);
  run(x.value().im, out.im, inv_std_im, false);
  return make_node(
      std::move(out), {x, gamma, beta},
      [x, gamma, beta, rows, c, inv_std_re, inv_std_im](Node& nd) {
        auto back = [&](const RTensor& xp, const RTensor& inv_std, const RTensor& g, RTensor* gx,
                        RTensor* ggamma, RTensor* gbeta) {
          for (int64_t r = 0; r < rows; ++r) {
            const double* xr = xp.ptr() + r * c;
            const double* gr = g.ptr() + r * c;
            const double is = inv_std[r];
            double mu = 0.0;
            for (int64_t i = 0; i < c; ++i) mu += xr[i];
            mu /= c;
            double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
            for (int64_t i = 0; i < c; ++i) {
              const double xhat = (xr[i] - mu) * is;
              const double dxhat = gr[i] * gamma.value().re[i];
              mean_dxhat += dxhat;
              mean_dxhat_xhat += dxhat * xhat;
              if (ggamma) (*ggamma)[i] += gr[i] * xhat;
              if (gbeta) (*gbeta)[i] += gr[i];
            }
            mean_dxhat /= c;
            mean_dxhat_xhat /= c;
            if (gx) {
              double* gxr = gx->ptr() + r * c;
              for (int64_t i = 0; i < c; ++i) {
                const double xhat = (xr[i] - mu) * is;
                const double dxhat = gr[i] * gamma.value().re[i];
                gxr[i] += is * (dxhat - mean_dxhat - xhat * mean_dxhat_xhat);
              }
            }
          }
        };
        RTensor* gg = nullptr;
        RTensor* gb = nullptr;
        if (gamma.requires_grad()) {
          gamma.node()->ensure_grad();
          gg = &gamma.node()->grad.re;
        }
        if (beta.requires_grad()) {
          beta.node()->ensure_grad();
          gb = &beta.node()->grad.re;
        }
        RTensor* gxr = nullptr;
        RTensor* gxi = nullptr;
        if (x.requires_grad()) {
          x.node()->ensure_grad();
          gxr = &x.node()->grad.re;
          gxi = &x.node()->grad.im;
        }
        back(x.node()->value.re, inv_std_re, nd.grad.re, gxr, gg, gb);
        back(x.node()->value.im, inv_std_im, nd.grad.im, gxi, gg, nullptr);
      });
}

namespace {

struct ConvDims {
  int64_t n, ci, h, w, co, kh, kw, ho, wo;
  int stride, pad;
};

ConvDims conv_dims(const Shape& sx, const Shape& sw, int stride, int pad) {
  if (sx.size() != 4 || sw.size() != 4)
    throw ShapeError("conv2d: need NCHW x [Co,Ci,kh,kw], got " + shape_str(sx) + " and " +
                     shape_str(sw));
  if (sx[1] != sw[1])
    throw ShapeError("conv2d: channel mismatch " + shape_str(sx) + " vs " + shape_str(sw));
  ConvDims d;
  d.n = sx[0];
  d.ci = sx[1];
  d.h = sx[2];
  d.w = sx[3];
  d.co = sw[0];
  d.kh = sw[2];
  d.kw = sw[3];
  d.stride = stride;
  d.pad = pad;
  d.ho = (d.h + 2 * pad - d.kh) / stride + 1;
  d.wo = (d.w + 2 * pad - d.kw) / stride + 1;
  if (d.ho <= 0 || d.wo <= 0) throw ShapeError("conv2d: kernel larger than padded input");
  return d;
}

void conv_forward_part(const ConvDims& d, const double* x, const double* w, double* y) {
  for (int64_t n = 0; n < d.n; ++n)
    for (int64_t co = 0; co < d.co; ++co)
      for (int64_t ci = 0; ci < d.ci; ++ci) {
        const double* xp = x + (n * d.ci + ci) * d.h * d.w;
        const double* wp = w + (co * d.ci + ci) * d.kh * d.kw;
        double* yp = y + (n * d.co + co) * d.ho * d.wo;
        for (int64_t oh = 0; oh < d.ho; ++oh)
          for (int64_t ow = 0; ow < d.wo; ++ow) {
            double acc = 0.0;
            for (int64_t u = 0; u < d.kh; ++u) {
              const int64_t ih = oh * d.stride - d.pad + u;
              if (ih < 0 || ih >= d.h) continue;
              for (int64_t v = 0; v < d.kw; ++v) {
                const int64_t iw = ow * d.stride - d.pad + v;
                if (iw < 0 || iw >= d.w) continue;
                acc += xp[ih * d.w + iw] * wp[u * d.kw + v];
              }
            }
            yp[oh * d.wo + ow] += acc;
          }
      }
}

void conv_backward_part(const ConvDims& d, const double* x, const double* w, const double* g,
                        double* gx, double* gw) {
  for (int64_t n = 0; n < d.n; ++n)
    for (int64_t co = 0; co < d.co; ++co)
      for (int64_t ci = 0; ci < d.ci; ++ci) {
        const double* xp = x + (n * d.ci + ci) * d.h * d.w;
        const double* wp = w + (co * d.ci + ci) * d.kh * d.kw;
        const double* gp = g + (n * d.co + co) * d.ho * d.wo;
        double* gxp = gx ? gx + (n * d.ci + ci) * d.h * d.w : nullptr;
        double* gwp = gw ? gw + (co * d.ci + ci) * d.kh * d.kw : nullptr;
        for (int64_t oh = 0; oh < d.ho; ++oh)
          for (int64_t ow = 0; ow < d.wo; ++ow) {
            const double go = gp[oh * d.wo + ow];
            if (go == 0.0) continue;
            for (int64_t u = 0; u < d.kh; ++u) {
              const int64_t ih = oh * d.stride - d.pad + u;
              if (ih < 0 || ih >= d.h) continue;
              for (int64_t v = 0; v < d.kw; ++v) {
                const int64_t iw = ow * d.stride - d.pad + v;
                if (iw < 0 || iw >= d.w) continue;
                if (gxp) gxp[ih * d.w + iw] += go * wp[u * d.kw + v];
                if (gwp) gwp[u * d.kw + v] += go * xp[ih * d.w + iw];
              }
            }
          }
      }
}

}  // namespace

Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad) {
  const ConvDims d = conv_dims(x.shape(), w.shape(), stride, pad);
  if (b.defined() && b.shape() != Shape{d.co})
    throw ShapeError("conv2d: bias " + shape_str(b.shape()));
  CTensor out = CTensor::zeros(Shape{d.n, d.co, d.ho, d.wo});
  conv_forward_part(d, x.value().re.ptr(), w.value().re.ptr(), out.re.ptr());
  conv_forward_part(d, x.value().im.ptr(), w.value().re.ptr(), out.im.ptr());
  if (b.defined())
    for (int64_t n = 0; n < d.n; ++n)
      for (int64_t co = 0; co < d.co; ++co) {
        double* yp = out.re.ptr() + (n * d.co + co) * d.ho * d.wo;
        for (int64_t i = 0; i < d.ho * d.wo; ++i) yp[i] += b.value().re[co];
      }
  std::vector<Var> parents = b.defined() ? std::vector<Var>{x, w, b} : std::vector<Var>{x, w};
  return make_node(std::move(out), std::move(parents), [x, w, b, d](Node& nd) {
    double* gx_re = nullptr;
    double* gx_im = nullptr;
    double* gw = nullptr;
    if (x.requires_grad()) {
      x.node()->ensure_grad();
      gx_re = x.node()->grad.re.ptr();
      gx_im = x.node()->grad.im.ptr();
    }
    if (w.requires_grad()) {
      w.node()->ensure_grad();
      gw = w.node()->grad.re.ptr();
    }
    if (gx_re || gw) {
      conv_backward_part(d, x.node()->value.re.ptr(), w.node()->value.re.ptr(), nd.grad.re.ptr(),
                         gx_re, gw);
      conv_backward_part(d, x.node()->value.im.ptr(), w.node()->value.re.ptr(), nd.grad.im.ptr(),
                         gx_im, gw);
    }
    if (b.defined() && b.requires_grad()) {
      b.node()->ensure_grad();
      for (int64_t n = 0; n < d.n; ++n)
        for (int64_t co = 0; co < d.co; ++co) {
          const double* gp = nd.grad.re.ptr() + (n * d.co + co) * d.ho * d.wo;
          for (int64_t i = 0; i < d.ho * d.wo; ++i) b.node()->grad.re[co] += gp[i];
        }
    }
  });
}

Var dropout(const Var& t, double p, std::mt19937_64& rng, bool shared_mask) {
  if (p <= 0.0) return t;
  if (p >= 1.0) throw ValueError("dropout: p must be < 1");
  const double keep = 1.0 - p;
  const double inv_keep = 1.0 / keep;
  std::bernoulli_distribution dist(keep);
  const int64_t n = t.numel();
  auto mask_re = std::make_shared<std::vector<double>>(n);
  auto mask_im = shared_mask ? mask_re : std::make_shared<std::vector<double>>(n);
  for (int64_t i = 0; i < n; ++i) (*mask_re)[i] = dist(rng) ? inv_keep : 0.0;
  if (!shared_mask)
    for (int64_t i = 0; i < n; ++i) (*mask_im)[i] = dist(rng) ? inv_keep : 0.0;
  CTensor out = CTensor::zeros(t.shape());
  for (int64_t i = 0; i < n; ++i) {
    out.re[i] = t.value().re[i] * (*mask_re)[i];
    out.im[i] = t.value().im[i] * (*mask_im)[i];
  }
  return make_node(std::move(out), {t}, [t, mask_re, mask_im](Node& nd) {
    t.node()->ensure_grad();
    for (int64_t i = 0; i < nd.grad.numel(); ++i) {
      t.node()->grad.re[i] += nd.grad.re[i] * (*mask_re)[i];
      t.node()->grad.im[i] += nd.grad.im[i] * (*mask_im)[i];
    }
  });
}

// ---------------------------------------------------------------------------
// fixed-kernel separable filter (SSIM windows)
// ---------------------------------------------------------------------------

namespace {

// valid-mode 1-D pass along the last axis of a [rows, len] view
void sep_pass_valid(const double* x, int64_t rows, int64_t len, const std::vector<double>& k,
                    double* y) {
  const int64_t klen = static_cast<int64_t>(k.size());
  const int64_t out_len = len - klen + 1;
  for (int64_t r = 0; r < rows; ++r) {
    const double* xr = x + r * len;
    double* yr = y + r * out_len;
    for (int64_t j = 0; j < out_len; ++j) {
      double acc = 0.0;
      for (int64_t u = 0; u < klen; ++u) acc += k[u] * xr[j + u];
      yr[j] = acc;
    }
  }
}

// adjoint of the valid pass: scatter g back over the window extent
void sep_pass_valid_adj(const double* g, int64_t rows, int64_t len, const std::vector<double>& k,
                        double* gx) {
  const int64_t klen = static_cast<int64_t>(k.size());
  const int64_t out_len = len - klen + 1;
  for (int64_t r = 0; r < rows; ++r) {
    const double* gr = g + r * out_len;
    double* gxr = gx + r * len;
    for (int64_t j = 0; j < out_len; ++j) {
      const double gv = gr[j];
      if (gv == 0.0) continue;
      for (int64_t u = 0; u < klen; ++u) gxr[j + u] += k[u] * gv;
    }
  }
}

// transpose last two axes of a [rows, a, b] buffer
void transpose_hw(const double* x, int64_t rows, int64_t a, int64_t b, double* y) {
  for (int64_t r = 0; r < rows; ++r) {
    const double* xr = x + r * a * b;
    double* yr = y + r * a * b;
    for (int64_t i = 0; i < a; ++i)
      for (int64_t j = 0; j < b; ++j) yr[j * a + i] = xr[i * b + j];
  }
}

}  // namespace

Var sepconv_valid(const Var& x, const std::vector<double>& kernel) {
  const Shape& s = x.shape();
  if (s.size() != 4) throw ShapeError("sepconv_valid: need NCHW, got " + shape_str(s));
  const int64_t nmaps = s[0] * s[1], h = s[2], w = s[3];
  const int64_t klen = static_cast<int64_t>(kernel.size());
  if (h < klen || w < klen)
    throw ShapeError("sepconv_valid: image " + shape_str(s) + " smaller than window " +
                     std::to_string(klen));
  const int64_t ho = h - klen + 1, wo = w - klen + 1;
  auto apply = [&](const RTensor& xin) {
    // pass along W, transpose, pass along H (now last), transpose back
    RTensor t1(Shape{nmaps, h, wo});
    sep_pass_valid(xin.ptr(), nmaps * h, w, kernel, t1.ptr());
    RTensor t2(Shape{nmaps, wo, h});
    transpose_hw(t1.ptr(), nmaps, h, wo, t2.ptr());
    RTensor t3(Shape{nmaps, wo, ho});
    sep_pass_valid(t2.ptr(), nmaps * wo, h, kernel, t3.ptr());
    RTensor y(Shape{s[0], s[1], ho, wo});
    transpose_hw(t3.ptr(), nmaps, wo, ho, y.ptr());
    return y;
  };
  CTensor out(apply(x.value().re), apply(x.value().im));
  auto k = std::make_shared<std::vector<double>>(kernel);
  return make_node(std::move(out), {x}, [x, k, nmaps, h, w, ho, wo](Node& nd) {
    x.node()->ensure_grad();
    auto adj = [&](const RTensor& g, RTensor& gx) {
      RTensor t3(Shape{nmaps, wo, ho});
      transpose_hw(g.ptr(), nmaps, ho, wo, t3.ptr());
      RTensor t2(Shape{nmaps, wo, h}, 0.0);
      sep_pass_valid_adj(t3.ptr(), nmaps * wo, h, *k, t2.ptr());
      RTensor t1(Shape{nmaps, h, wo});
      transpose_hw(t2.ptr(), nmaps, wo, h, t1.ptr());
      RTensor gfull(Shape{nmaps, h, w}, 0.0);
      sep_pass_valid_adj(t1.ptr(), nmaps * h, w, *k, gfull.ptr());
      for (int64_t i = 0; i < gx.numel(); ++i) gx[i] += gfull[i];
    };
    adj(nd.grad.re, x.node()->grad.re);
    adj(nd.grad.im, x.node()->grad.im);
  });
}

// ---------------------------------------------------------------------------
// linear resample along one axis
// ---------------------------------------------------------------------------

Interp1D make_interp(int64_t src_len, int64_t dst_len) {
  if (src_len <= 0 || dst_len <= 0) throw ValueError("make_interp: non-positive length");
  Interp1D p;
  p.src_len = src_len;
  p.dst_len = dst_len;
  p.i0.resize(dst_len);
  p.i1.resize(dst_len);
  p.w.resize(dst_len);
  const double scale = static_cast<double>(src_len) / static_cast<double>(dst_len);
  for (int64_t j = 0; j < dst_len; ++j) {
    double xpos = (j + 0.5) * scale - 0.5;
    xpos = std::min(std::max(xpos, 0.0), static_cast<double>(src_len - 1));
    const auto i0 = static_cast<int64_t>(std::floor(xpos));
    p.i0[j] = i0;
    p.i1[j] = std::min(i0 + 1, src_len - 1);
    p.w[j] = xpos - static_cast<double>(i0);
  }
  return p;
}

Var axis_interp(const Var& x, size_t axis, const Interp1D& plan) {
  const Shape& s = x.shape();
  if (axis >= s.size()) throw ShapeError("axis_interp: axis out of range");
  if (s[axis] != plan.src_len)
    throw ShapeError("axis_interp: axis extent " + std::to_string(s[axis]) +
                     " does not match plan " + std::to_string(plan.src_len));
  int64_t outer = 1, inner = 1;
  for (size_t i = 0; i < axis; ++i) outer *= s[i];
  for (size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  Shape so = s;
  so[axis] = plan.dst_len;
  CTensor out = CTensor::zeros(so);
  auto run = [&](const RTensor& xin, RTensor& y) {
    for (int64_t o = 0; o < outer; ++o)
      for (int64_t j = 0; j < plan.dst_len; ++j) {
        const double* x0 = xin.ptr() + (o * plan.src_len + plan.i0[j]) * inner;
        const double* x1 = xin.ptr() + (o * plan.src_len + plan.i1[j]) * inner;
        double* yr = y.ptr() + (o * plan.dst_len + j) * inner;
        const double wj = plan.w[j];
        for (int64_t i = 0; i < inner; ++i) yr[i] = (1.0 - wj) * x0[i] + wj * x1[i];
      }
  };
  run(x.value().re, out.re);
  run(x.value().im, out.im);
  auto plan_copy = std::make_shared<Interp1D>(plan);
  return make_node(std::move(out), {x}, [x, plan_copy, outer, inner](Node& nd) {
    x.node()->ensure_grad();
    const Interp1D& p = *plan_copy;
    auto adj = [&](const RTensor& g, RTensor& gx) {
      for (int64_t o = 0; o < outer; ++o)
        for (int64_t j = 0; j < p.dst_len; ++j) {
          const double* gr = g.ptr() + (o * p.dst_len + j) * inner;
          double* g0 = gx.ptr() + (o * p.src_len + p.i0[j]) * inner;
          double* g1 = gx.ptr() + (o * p.src_len + p.i1[j]) * inner;
          const double wj = p.w[j];
          for (int64_t i = 0; i < inner; ++i) {
            g0[i] += (1.0 - wj) * gr[i];
            g1[i] += wj * gr[i];
          }
        }
    };
    adj(nd.grad.re, x.node()->grad.re);
    adj(nd.grad.im, x.node()->grad.im);
  });
}

// ---------------------------------------------------------------------------
// generic lifting entry point (Eq.-2 contract)
// ---------------------------------------------------------------------------

Var lift(const RealTensorOp& op, const Var& t) {
  RTensor yre = op.forward(t.value().re);
  RTensor yim = op.forward(t.value().im);
  if (!yre.same_shape(yim))
    throw ShapeError("lift(" + op.name() + "): op produced inconsistent shapes " +
                     shape_str(yre.shape) + " vs " + shape_str(yim.shape));
  CTensor out(std::move(yre), std::move(yim));
  const RealTensorOp* opp = &op;  // callers keep the op alive for backward
  return make_node(std::move(out), {t}, [t, opp](Node& nd) {
    t.node()->ensure_grad();
    RTensor gre = opp->vjp(t.node()->value.re, nd.value.re, nd.grad.re);
    RTensor gim = opp->vjp(t.node()->value.im, nd.value.im, nd.grad.im);
    accum(*t.node(), gre, gim);
  });
}

}  // namespace csd
