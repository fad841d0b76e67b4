#include "dscene/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include <Eigen/Core>

#include "dscene/error.hpp"

namespace dscene::ad {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

[[noreturn]] void shape_fail(const std::string& op, const Shape& a, const Shape& b) {
  throw ShapeError(op + ": incompatible shapes " + shape_str(a) + " and " + shape_str(b));
}

void require_same(const std::string& op, const Tensor& a, const Tensor& b) {
  if (&a.tape() != &b.tape()) throw ShapeError(op + ": operands live on different tapes");
  if (a.shape() != b.shape()) shape_fail(op, a.shape(), b.shape());
}

std::vector<std::size_t> strides_of(const Shape& s) {
  std::vector<std::size_t> st(s.size(), 1);
  for (std::size_t i = s.size(); i-- > 1;) st[i - 1] = st[i] * s[i];
  return st;
}

// Elementwise unary op with derivative expressed through input x and output y.
template <typename F, typename D>
Tensor unary(const Tensor& a, F f, D dfdx) {
  Tape& tape = a.tape();
  const auto& x = a.values();
  std::vector<double> y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = f(x[i]);
  const std::size_t pa = a.id();
  return tape.record(a.shape(), std::move(y), {pa}, [pa, dfdx](Tape& t, std::size_t self) {
    const auto& g = t.grad(self);
    const auto& xv = t.value(pa);
    const auto& yv = t.value(self);
    auto& ga = t.grad_mut(pa);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * dfdx(xv[i], yv[i]);
  });
}

}  // namespace

std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? ", " : "") << shape[i];
  os << "]";
  return os.str();
}

const Shape& Tensor::shape() const { return tape_->shape(id_); }
std::size_t Tensor::size() const { return tape_->value(id_).size(); }
std::span<const double> Tensor::values() const { return tape_->value(id_); }
std::span<const double> Tensor::grad() const { return tape_->grad(id_); }

double Tensor::item() const {
  if (size() != 1) throw ShapeError("item: tensor of shape " + shape_str(shape()) + " is not a scalar");
  return values()[0];
}

Tensor Tape::record(Shape shape, std::vector<double> value, std::vector<std::size_t> parents, BackwardFn fn) {
  if (numel(shape) != value.size()) {
    throw ShapeError("tape: value count " + std::to_string(value.size()) + " does not match shape " + shape_str(shape));
  }
  nodes_.push_back(Node{std::move(shape), std::move(value), {}, std::move(parents), std::move(fn)});
  return Tensor(this, nodes_.size() - 1);
}

Tensor Tape::leaf(Shape shape, std::vector<double> values) { return record(std::move(shape), std::move(values), {}, {}); }
Tensor Tape::constant(Shape shape, std::vector<double> values) {
  return record(std::move(shape), std::move(values), {}, {});
}
Tensor Tape::zeros(Shape shape) { return filled(std::move(shape), 0.0); }
Tensor Tape::filled(Shape shape, double value) {
  const std::size_t n = numel(shape);
  return record(std::move(shape), std::vector<double>(n, value), {}, {});
}

void Tape::backward(const Tensor& root) {
  if (&root.tape() != this) throw ShapeError("backward: root belongs to another tape");
  if (root.size() != 1) throw ShapeError("backward: root must be a scalar, got shape " + shape_str(root.shape()));
  for (auto& n : nodes_) n.grad.assign(n.value.size(), 0.0);
  nodes_[root.id()].grad[0] = 1.0;
  for (std::size_t i = root.id() + 1; i-- > 0;) {
    if (nodes_[i].backward) nodes_[i].backward(*this, i);
  }
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (&a.tape() != &b.tape()) throw ShapeError("matmul: operands live on different tapes");
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.size() < 2 || sb.size() < 2) shape_fail("matmul", sa, sb);
  Tape& tape = a.tape();
  const std::size_t pa = a.id();
  const std::size_t pb = b.id();

  if (sb.size() == 2) {
    const std::size_t k = sa.back();
    if (k != sb[0]) shape_fail("matmul", sa, sb);
    const std::size_t n = sb[1];
    const std::size_t rows = numel(sa) / k;
    Shape out_shape(sa.begin(), sa.end() - 1);
    out_shape.push_back(n);
    std::vector<double> out(rows * n);
    MutMap(out.data(), rows, n).noalias() = ConstMap(a.values().data(), rows, k) * ConstMap(b.values().data(), k, n);
    return tape.record(std::move(out_shape), std::move(out), {pa, pb}, [pa, pb, rows, k, n](Tape& t, std::size_t self) {
      ConstMap g(t.grad(self).data(), rows, n);
      MutMap(t.grad_mut(pa).data(), rows, k).noalias() += g * ConstMap(t.value(pb).data(), k, n).transpose();
      MutMap(t.grad_mut(pb).data(), k, n).noalias() += ConstMap(t.value(pa).data(), rows, k).transpose() * g;
    });
  }

  if (sa.size() != sb.size() || !std::equal(sa.begin(), sa.end() - 2, sb.begin())) shape_fail("matmul", sa, sb);
  const std::size_t m = sa[sa.size() - 2];
  const std::size_t k = sa.back();
  if (k != sb[sb.size() - 2]) shape_fail("matmul", sa, sb);
  const std::size_t n = sb.back();
  const std::size_t batch = numel(sa) / (m * k);
  Shape out_shape(sa.begin(), sa.end() - 1);
  out_shape.push_back(n);
  std::vector<double> out(batch * m * n);
  for (std::size_t q = 0; q < batch; ++q) {
    MutMap(out.data() + q * m * n, m, n).noalias() =
        ConstMap(a.values().data() + q * m * k, m, k) * ConstMap(b.values().data() + q * k * n, k, n);
  }
  return tape.record(std::move(out_shape), std::move(out), {pa, pb}, [pa, pb, batch, m, k, n](Tape& t, std::size_t self) {
    for (std::size_t q = 0; q < batch; ++q) {
      ConstMap g(t.grad(self).data() + q * m * n, m, n);
      MutMap(t.grad_mut(pa).data() + q * m * k, m, k).noalias() +=
          g * ConstMap(t.value(pb).data() + q * k * n, k, n).transpose();
      MutMap(t.grad_mut(pb).data() + q * k * n, k, n).noalias() +=
          ConstMap(t.value(pa).data() + q * m * k, m, k).transpose() * g;
    }
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same("add", a, b);
  const auto& x = a.values();
  const auto& y = b.values();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + y[i];
  const std::size_t pa = a.id();
  const std::size_t pb = b.id();
  return a.tape().record(a.shape(), std::move(out), {pa, pb}, [pa, pb](Tape& t, std::size_t self) {
    const auto& g = t.grad(self);
    auto& ga = t.grad_mut(pa);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    auto& gb = t.grad_mut(pb);
    for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same("sub", a, b);
  const auto& x = a.values();
  const auto& y = b.values();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] - y[i];
  const std::size_t pa = a.id();
  const std::size_t pb = b.id();
  return a.tape().record(a.shape(), std::move(out), {pa, pb}, [pa, pb](Tape& t, std::size_t self) {
    const auto& g = t.grad(self);
    auto& ga = t.grad_mut(pa);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    auto& gb = t.grad_mut(pb);
    for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same("mul", a, b);
  const auto& x = a.values();
  const auto& y = b.values();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * y[i];
  const std::size_t pa = a.id();
  const std::size_t pb = b.id();
  return a.tape().record(a.shape(), std::move(out), {pa, pb}, [pa, pb](Tape& t, std::size_t self) {
    const auto& g = t.grad(self);
    const auto& xv = t.value(pa);
    const auto& yv = t.value(pb);
    auto& ga = t.grad_mut(pa);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * yv[i];
    auto& gb = t.grad_mut(pb);
    for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * xv[i];
  });
}

Tensor mul_scalar(const Tensor& a, double s) {
  return unary(a, [s](double x) { return x * s; }, [s](double, double) { return s; });
}

Tensor add_scalar(const Tensor& a, double s) {
  return unary(a, [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

Tensor relu(const Tensor& a) {
  return unary(a, [](double x) { return x > 0.0 ? x : 0.0; }, [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor sigmoid(const Tensor& a) {
  return unary(
      a,
      [](double x) {
        if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor square(const Tensor& a) {
  return unary(a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Tensor add_bias(const Tensor& a, const Tensor& bias) {
  if (&a.tape() != &bias.tape()) throw ShapeError("add_bias: operands live on different tapes");
  if (a.rank() < 1 || bias.rank() != 1 || bias.dim(0) != a.shape().back()) shape_fail("add_bias", a.shape(), bias.shape());
  const std::size_t n = bias.dim(0);
  const auto& x = a.values();
  const auto& bv = bias.values();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + bv[i % n];
  const std::size_t pa = a.id();
  const std::size_t pb = bias.id();
  return a.tape().record(a.shape(), std::move(out), {pa, pb}, [pa, pb, n](Tape& t, std::size_t self) {
    const auto& g = t.grad(self);
    auto& ga = t.grad_mut(pa);
    auto& gb = t.grad_mut(pb);
    for (std::size_t i = 0; i < g.size(); ++i) {
      ga[i] += g[i];
      gb[i % n] += g[i];
    }
  });
}

Tensor softmax_lastdim(const Tensor& a) {
  if (a.rank() < 1 || a.shape().back() == 0) throw ShapeError("softmax_lastdim: needs a nonempty last axis");
  const std::size_t n = a.shape().back();
  const std::size_t rows = a.size() / n;
  const auto& x = a.values();
  std::vector<double> y(x.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = x.data() + r * n;
    double* yr = y.data() + r * n;
    const double mx = *std::max_element(xr, xr + n);
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      yr[j] = std::exp(xr[j] - mx);
      s += yr[j];
    }
    for (std::size_t j = 0; j < n; ++j) yr[j] /= s;
  }
  const std::size_t pa = a.id();
  return a.tape().record(a.shape(), std::move(y), {pa}, [pa, rows, n](Tape& t, std::size_t self) {
    const auto& g = t.grad(self);
    const auto& yv = t.value(self);
    auto& ga = t.grad_mut(pa);
    for (std::size_t r = 0; r < rows; ++r) {
      const std::size_t o = r * n;
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += g[o + j] * yv[o + j];
      for (std::size_t j = 0; j < n; ++j) ga[o + j] += yv[o + j] * (g[o + j] - dot);
    }
  });
}

Tensor layer_norm_lastdim(const Tensor& a, const Tensor& gain, const Tensor& bias, double eps) {
  if (a.rank() < 1) throw ShapeError("layer_norm_lastdim: rank-0 input");
  const std::size_t n = a.shape().back();
  if (gain.rank() != 1 || gain.dim(0) != n) shape_fail("layer_norm_lastdim (gain)", a.shape(), gain.shape());
  if (bias.rank() != 1 || bias.dim(0) != n) shape_fail("layer_norm_lastdim (bias)", a.shape(), bias.shape());
  const std::size_t rows = a.size() / n;
  const auto& x = a.values();
  const auto& gv = gain.values();
  const auto& bv = bias.values();
  std::vector<double> xhat(x.size());
  std::vector<double> inv(rows);
  std::vector<double> y(x.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = x.data() + r * n;
    double mu = 0.0;
    for (std::size_t j = 0; j < n; ++j) mu += xr[j];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= static_cast<double>(n);
    inv[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < n; ++j) {
      xhat[r * n + j] = (xr[j] - mu) * inv[r];
      y[r * n + j] = xhat[r * n + j] * gv[j] + bv[j];
    }
  }
  const std::size_t pa = a.id();
  const std::size_t pg = gain.id();
  const std::size_t pb = bias.id();
  return a.tape().record(
      a.shape(), std::move(y), {pa, pg, pb},
      [pa, pg, pb, rows, n, xhat = std::move(xhat), inv = std::move(inv)](Tape& t, std::size_t self) {
        const auto& g = t.grad(self);
        const auto& gv2 = t.value(pg);
        auto& ga = t.grad_mut(pa);
        auto& gg = t.grad_mut(pg);
        auto& gb = t.grad_mut(pb);
        const double inv_n = 1.0 / static_cast<double>(n);
        for (std::size_t r = 0; r < rows; ++r) {
          const std::size_t o = r * n;
          double m1 = 0.0;
          double m2 = 0.0;
          for (std::size_t j = 0; j < n; ++j) {
            const double dxh = g[o + j] * gv2[j];
            m1 += dxh;
            m2 += dxh * xhat[o + j];
            gg[j] += g[o + j] * xhat[o + j];
            gb[j] += g[o + j];
          }
          m1 *= inv_n;
          m2 *= inv_n;
          for (std::size_t j = 0; j < n; ++j) {
            const double dxh = g[o + j] * gv2[j];
            ga[o + j] += inv[r] * (dxh - m1 - xhat[o + j] * m2);
          }
        }
      });
}

Tensor concat(const Tensor& a, const Tensor& b, std::size_t axis) {
  if (&a.tape() != &b.tape()) throw ShapeError("concat: operands live on different tapes");
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.size() != sb.size() || axis >= sa.size()) shape_fail("concat", sa, sb);
  for (std::size_t i = 0; i < sa.size(); ++i)
    if (i != axis && sa[i] != sb[i]) shape_fail("concat", sa, sb);
  std::size_t outer = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= sa[i];
  std::size_t inner = 1;
  for (std::size_t i = axis + 1; i < sa.size(); ++i) inner *= sa[i];
  const std::size_t ca = sa[axis] * inner;
  const std::size_t cb = sb[axis] * inner;
  Shape out_shape = sa;
  out_shape[axis] = sa[axis] + sb[axis];
  std::vector<double> out(outer * (ca + cb));
  const auto& x = a.values();
  const auto& y = b.values();
  for (std::size_t o = 0; o < outer; ++o) {
    std::copy_n(x.data() + o * ca, ca, out.data() + o * (ca + cb));
    std::copy_n(y.data() + o * cb, cb, out.data() + o * (ca + cb) + ca);
  }
  const std::size_t pa = a.id();
  const std::size_t pb = b.id();
  return a.tape().record(std::move(out_shape), std::move(out), {pa, pb}, [pa, pb, outer, ca, cb](Tape& t, std::size_t self) {
    const auto& g = t.grad(self);
    auto& ga = t.grad_mut(pa);
    auto& gb = t.grad_mut(pb);
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t i = 0; i < ca; ++i) ga[o * ca + i] += g[o * (ca + cb) + i];
      for (std::size_t i = 0; i < cb; ++i) gb[o * cb + i] += g[o * (ca + cb) + ca + i];
    }
  });
}

Tensor concat_lastdim(const Tensor& a, const Tensor& b) {
  if (a.rank() == 0) throw ShapeError("concat_lastdim: rank-0 input");
  return concat(a, b, a.rank() - 1);
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (numel(shape) != a.size()) shape_fail("reshape", a.shape(), shape);
  std::vector<double> out(a.values().begin(), a.values().end());
  const std::size_t pa = a.id();
  return a.tape().record(std::move(shape), std::move(out), {pa}, [pa](Tape& t, std::size_t self) {
    const auto& g = t.grad(self);
    auto& ga = t.grad_mut(pa);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  });
}

Tensor permute(const Tensor& a, const std::vector<std::size_t>& axes) {
  const Shape& s = a.shape();
  if (axes.size() != s.size()) throw ShapeError("permute: axis list " + shape_str(axes) + " for shape " + shape_str(s));
  std::vector<bool> seen(s.size(), false);
  for (auto ax : axes) {
    if (ax >= s.size() || seen[ax]) throw ShapeError("permute: invalid axis list " + shape_str(axes));
    seen[ax] = true;
  }
  Shape out_shape(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) out_shape[i] = s[axes[i]];
  const auto in_strides = strides_of(s);
  // src_index[i] maps output linear index i to input linear index.
  std::vector<std::size_t> src(a.size());
  std::vector<std::size_t> idx(s.size(), 0);
  for (std::size_t lin = 0; lin < src.size(); ++lin) {
    std::size_t off = 0;
    for (std::size_t d = 0; d < s.size(); ++d) off += idx[d] * in_strides[axes[d]];
    src[lin] = off;
    for (std::size_t d = s.size(); d-- > 0;) {
      if (++idx[d] < out_shape[d]) break;
      idx[d] = 0;
    }
  }
  const auto& x = a.values();
  std::vector<double> out(src.size());
  for (std::size_t i = 0; i < src.size(); ++i) out[i] = x[src[i]];
  const std::size_t pa = a.id();
  return a.tape().record(std::move(out_shape), std::move(out), {pa}, [pa, src = std::move(src)](Tape& t, std::size_t self) {
    const auto& g = t.grad(self);
    auto& ga = t.grad_mut(pa);
    for (std::size_t i = 0; i < g.size(); ++i) ga[src[i]] += g[i];
  });
}

Tensor transpose(const Tensor& a) {
  if (a.rank() < 2) throw ShapeError("transpose: needs rank >= 2, got " + shape_str(a.shape()));
  std::vector<std::size_t> axes(a.rank());
  std::iota(axes.begin(), axes.end(), std::size_t{0});
  std::swap(axes[a.rank() - 1], axes[a.rank() - 2]);
  return permute(a, axes);
}

Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.values()) s += v;
  const std::size_t pa = a.id();
  return a.tape().record({}, {s}, {pa}, [pa](Tape& t, std::size_t self) {
    const double g = t.grad(self)[0];
    for (auto& v : t.grad_mut(pa)) v += g;
  });
}

Tensor mean(const Tensor& a) {
  if (a.size() == 0) throw ShapeError("mean: empty tensor");
  return mul_scalar(sum(a), 1.0 / static_cast<double>(a.size()));
}

Tensor binary_cross_entropy(const Tensor& prob, const Tensor& target, double eps) {
  require_same("binary_cross_entropy", prob, target);
  if (prob.size() == 0) throw ShapeError("binary_cross_entropy: empty tensor");
  const auto& p = prob.values();
  const auto& y = target.values();
  const double inv_n = 1.0 / static_cast<double>(p.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double q = std::clamp(p[i], eps, 1.0 - eps);
    acc += y[i] * std::log(q) + (1.0 - y[i]) * std::log(1.0 - q);
  }
  const std::size_t pp = prob.id();
  return prob.tape().record({}, {-acc * inv_n}, {pp, target.id()}, [pp, pt = target.id(), eps, inv_n](Tape& t, std::size_t self) {
    const double g = t.grad(self)[0];
    const auto& pv = t.value(pp);
    const auto& yv = t.value(pt);
    auto& gp = t.grad_mut(pp);
    for (std::size_t i = 0; i < pv.size(); ++i) {
      if (pv[i] < eps || pv[i] > 1.0 - eps) continue;
      gp[i] += g * inv_n * (-yv[i] / pv[i] + (1.0 - yv[i]) / (1.0 - pv[i]));
    }
  });
}

}  // namespace dscene::ad
