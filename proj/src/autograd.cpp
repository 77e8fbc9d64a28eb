#include "anyglyph/autograd.hpp"

#include <algorithm>
#include <cmath>

namespace anyglyph {

using RowMatrix = Tensor::RowMatrix;

const Tensor& Var::value() const { return tape_->value(id_); }
const Tensor& Var::grad() const { return tape_->grad(id_); }
const std::vector<int>& Var::dims() const { return value().dims(); }
bool Var::requires_grad() const { return tape_->requires_grad(id_); }

Var Tape::constant(Tensor value) { return record(std::move(value), false, nullptr); }

Var Tape::input(Tensor value) { return record(std::move(value), true, nullptr); }

Var Tape::param(Parameter& p) {
  if (auto it = param_nodes_.find(&p); it != param_nodes_.end()) return Var(this, it->second);
  Var v = record(p.value, p.trainable, nullptr);
  param_nodes_.emplace(&p, v.id());
  return v;
}

Var Tape::record(Tensor value, bool requires_grad, Backward backward) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  if (requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

const Tensor& Tape::grad(int id) const {
  const Node& n = nodes_[static_cast<std::size_t>(id)];
  return n.grad.empty() ? empty_ : n.grad;
}

void Tape::accumulate(int id, const Tensor& g) { accumulate(id, g.data()); }

void Tape::accumulate(int id, const Eigen::Ref<const Tensor::Vector>& g) {
  Node& n = nodes_[static_cast<std::size_t>(id)];
  if (!n.requires_grad) return;
  if (n.grad.empty()) {
    n.grad = Tensor(n.value.dims(), Tensor::Vector(g));
  } else {
    n.grad.data() += g;
  }
}

void Tape::backward(const Var& out) {
  if (out.tape() != this) throw Error("backward: variable belongs to another tape");
  if (value(out.id()).size() != 1) throw ShapeMismatch("backward: output must be a single element");
  if (!requires_grad(out.id())) return;
  accumulate(out.id(), Tensor({1}, 1.0));
  for (int i = out.id(); i >= 0; --i) {
    Node& n = nodes_[static_cast<std::size_t>(i)];
    if (!n.requires_grad || n.grad.empty() || !n.backward) continue;
    // Copy: the callback may accumulate into other nodes but never into itself.
    const Tensor g = n.grad;
    n.backward(*this, g);
  }
  for (auto& [p, id] : param_nodes_) {
    if (!p->trainable) continue;
    const Tensor& g = grad(id);
    if (g.empty()) continue;
    if (p->grad.empty()) p->grad = Tensor(p->value.dims());
    p->grad.data() += g.data();
  }
}

namespace ag {
namespace {

Tape& tape_of(const Var& a) {
  if (!a.valid()) throw Error("operation on an unbound variable");
  return *a.tape();
}

Tape& tape_of(const Var& a, const Var& b) {
  Tape& t = tape_of(a);
  if (b.tape() != &t) throw Error("operands recorded on different tapes");
  return t;
}

bool any_grad(std::initializer_list<Var> vs) {
  for (const Var& v : vs) {
    if (v.valid() && v.requires_grad()) return true;
  }
  return false;
}

template <class F>
Var unary(const Var& a, Tensor out, F&& dfdx) {
  Tape& t = tape_of(a);
  const int ia = a.id();
  return t.record(std::move(out), a.requires_grad(),
                  [ia, dfdx = std::forward<F>(dfdx)](Tape& tp, const Tensor& g) {
                    tp.accumulate(ia, dfdx(tp.value(ia), g));
                  });
}

}  // namespace

Var add(const Var& a, const Var& b) {
  Tape& t = tape_of(a, b);
  require_same_shape(a.value(), b.value(), "add");
  Tensor out(a.dims(), Tensor::Vector(a.value().data() + b.value().data()));
  const int ia = a.id(), ib = b.id();
  return t.record(std::move(out), any_grad({a, b}), [ia, ib](Tape& tp, const Tensor& g) {
    tp.accumulate(ia, g);
    tp.accumulate(ib, g);
  });
}

Var sub(const Var& a, const Var& b) {
  Tape& t = tape_of(a, b);
  require_same_shape(a.value(), b.value(), "sub");
  Tensor out(a.dims(), Tensor::Vector(a.value().data() - b.value().data()));
  const int ia = a.id(), ib = b.id();
  return t.record(std::move(out), any_grad({a, b}), [ia, ib](Tape& tp, const Tensor& g) {
    tp.accumulate(ia, g);
    tp.accumulate(ib, Tensor::Vector(-g.data()));
  });
}

Var mul(const Var& a, const Var& b) {
  Tape& t = tape_of(a, b);
  require_same_shape(a.value(), b.value(), "mul");
  Tensor out(a.dims(), Tensor::Vector(a.value().array() * b.value().array()));
  const int ia = a.id(), ib = b.id();
  return t.record(std::move(out), any_grad({a, b}), [ia, ib](Tape& tp, const Tensor& g) {
    if (tp.requires_grad(ia)) tp.accumulate(ia, Tensor::Vector(g.array() * tp.value(ib).array()));
    if (tp.requires_grad(ib)) tp.accumulate(ib, Tensor::Vector(g.array() * tp.value(ia).array()));
  });
}

Var scale(const Var& a, double s) {
  Tensor out(a.dims(), Tensor::Vector(a.value().data() * s));
  return unary(a, std::move(out), [s](const Tensor&, const Tensor& g) { return Tensor::Vector(g.data() * s); });
}

Var add_scalar(const Var& a, double s) {
  Tensor out(a.dims(), Tensor::Vector(a.value().array() + s));
  return unary(a, std::move(out), [](const Tensor&, const Tensor& g) { return Tensor::Vector(g.data()); });
}

Var sum(const Var& a) {
  Tensor out({1}, a.value().data().sum());
  return unary(a, std::move(out), [](const Tensor& x, const Tensor& g) {
    return Tensor::Vector(Tensor::Vector::Constant(x.size(), g[0]));
  });
}

Var mean(const Var& a) {
  const double n = static_cast<double>(a.value().size());
  Tensor out({1}, a.value().data().sum() / n);
  return unary(a, std::move(out), [n](const Tensor& x, const Tensor& g) {
    return Tensor::Vector(Tensor::Vector::Constant(x.size(), g[0] / n));
  });
}

Var square(const Var& a) {
  Tensor out(a.dims(), Tensor::Vector(a.value().array().square()));
  return unary(a, std::move(out), [](const Tensor& x, const Tensor& g) {
    return Tensor::Vector(2.0 * x.array() * g.array());
  });
}

Var abs(const Var& a) {
  Tensor out(a.dims(), Tensor::Vector(a.value().array().abs()));
  return unary(a, std::move(out), [](const Tensor& x, const Tensor& g) {
    return Tensor::Vector(x.array().sign() * g.array());
  });
}

Var silu(const Var& a) {
  const auto& x = a.value().array();
  Tensor out(a.dims(), Tensor::Vector(x / (1.0 + (-x).exp())));
  return unary(a, std::move(out), [](const Tensor& xt, const Tensor& g) {
    const auto x = xt.array();
    const Eigen::ArrayXd s = 1.0 / (1.0 + (-x).exp());
    return Tensor::Vector(g.array() * s * (1.0 + x * (1.0 - s)));
  });
}

Var tanh(const Var& a) {
  Tensor out(a.dims(), Tensor::Vector(a.value().array().tanh()));
  return unary(a, std::move(out), [](const Tensor& x, const Tensor& g) {
    return Tensor::Vector(g.array() * (1.0 - x.array().tanh().square()));
  });
}

Var clamp(const Var& a, double lo, double hi) {
  Tensor out(a.dims(), Tensor::Vector(a.value().array().max(lo).min(hi)));
  return unary(a, std::move(out), [lo, hi](const Tensor& x, const Tensor& g) {
    const auto inside = (x.array() >= lo && x.array() <= hi).cast<double>();
    return Tensor::Vector(g.array() * inside);
  });
}

Var mse(const Var& a, const Var& b) { return mean(square(sub(a, b))); }

Var l1(const Var& a, const Var& b) { return mean(abs(sub(a, b))); }

Var reshape(const Var& a, std::vector<int> dims) {
  Tensor out = a.value().reshaped(std::move(dims));
  return unary(a, std::move(out), [](const Tensor&, const Tensor& g) { return Tensor::Vector(g.data()); });
}

Var transpose(const Var& a) {
  if (a.value().rank() != 2) throw ShapeMismatch("transpose: rank-2 operand required, got " + a.value().shape());
  const int m = a.dim(0), n = a.dim(1);
  Tensor out({n, m});
  out.matrix(n, m) = a.value().matrix(m, n).transpose();
  return unary(a, std::move(out), [m, n](const Tensor&, const Tensor& g) {
    Tensor r({m, n});
    r.matrix(m, n) = g.matrix(n, m).transpose();
    return Tensor::Vector(r.data());
  });
}

Var matmul(const Var& a, const Var& b, bool trans_a, bool trans_b) {
  Tape& t = tape_of(a, b);
  if (a.value().rank() != 2 || b.value().rank() != 2) {
    throw ShapeMismatch("matmul: rank-2 operands required, got " + a.value().shape() + " and " + b.value().shape());
  }
  const int ar = a.dim(0), ac = a.dim(1), br = b.dim(0), bc = b.dim(1);
  const int m = trans_a ? ac : ar, k = trans_a ? ar : ac;
  const int k2 = trans_b ? bc : br, n = trans_b ? br : bc;
  if (k != k2) throw ShapeMismatch("matmul: inner dimensions differ: " + a.value().shape() + " * " + b.value().shape());
  auto A = a.value().matrix(ar, ac);
  auto B = b.value().matrix(br, bc);
  Tensor out({m, n});
  auto O = out.matrix(m, n);
  if (!trans_a && !trans_b) O.noalias() = A * B;
  else if (trans_a && !trans_b) O.noalias() = A.transpose() * B;
  else if (!trans_a && trans_b) O.noalias() = A * B.transpose();
  else O.noalias() = A.transpose() * B.transpose();

  const int ia = a.id(), ib = b.id();
  return t.record(std::move(out), any_grad({a, b}),
                  [=](Tape& tp, const Tensor& g) {
                    auto G = g.matrix(m, n);
                    auto A = tp.value(ia).matrix(ar, ac);
                    auto B = tp.value(ib).matrix(br, bc);
                    if (tp.requires_grad(ia)) {
                      Tensor ga({ar, ac});
                      auto GA = ga.matrix(ar, ac);
                      // d(op(A)) = G * op(B)^T
                      if (!trans_a) {
                        if (!trans_b) GA.noalias() = G * B.transpose();
                        else GA.noalias() = G * B;
                      } else {
                        if (!trans_b) GA.noalias() = B * G.transpose();
                        else GA.noalias() = B.transpose() * G.transpose();
                      }
                      tp.accumulate(ia, ga);
                    }
                    if (tp.requires_grad(ib)) {
                      Tensor gb({br, bc});
                      auto GB = gb.matrix(br, bc);
                      // d(op(B)) = op(A)^T * G
                      if (!trans_b) {
                        if (!trans_a) GB.noalias() = A.transpose() * G;
                        else GB.noalias() = A * G;
                      } else {
                        if (!trans_a) GB.noalias() = G.transpose() * A;
                        else GB.noalias() = G.transpose() * A.transpose();
                      }
                      tp.accumulate(ib, gb);
                    }
                  });
}

Var add_channel_bias(const Var& a, const Var& b) {
  Tape& t = tape_of(a, b);
  const int c = a.dim(0);
  if (b.value().size() != c) {
    throw ShapeMismatch("add_channel_bias: bias " + b.value().shape() + " vs input " + a.value().shape());
  }
  const Eigen::Index s = a.value().size() / c;
  Tensor out = a.value();
  out.matrix(c, s).colwise() += b.value().data();
  const int ia = a.id(), ib = b.id();
  return t.record(std::move(out), any_grad({a, b}), [ia, ib, c, s](Tape& tp, const Tensor& g) {
    tp.accumulate(ia, g);
    if (tp.requires_grad(ib)) tp.accumulate(ib, Tensor::Vector(g.matrix(c, s).rowwise().sum()));
  });
}

Var add_row_bias(const Var& a, const Var& b) {
  Tape& t = tape_of(a, b);
  if (a.value().rank() != 2 || b.value().size() != a.dim(1)) {
    throw ShapeMismatch("add_row_bias: bias " + b.value().shape() + " vs input " + a.value().shape());
  }
  const int n = a.dim(0), d = a.dim(1);
  Tensor out = a.value();
  out.matrix(n, d).rowwise() += b.value().data().transpose();
  const int ia = a.id(), ib = b.id();
  return t.record(std::move(out), any_grad({a, b}), [ia, ib, n, d](Tape& tp, const Tensor& g) {
    tp.accumulate(ia, g);
    if (tp.requires_grad(ib)) tp.accumulate(ib, Tensor::Vector(g.matrix(n, d).colwise().sum().transpose()));
  });
}

namespace {

struct ConvGeom {
  int cin, h, w, k, stride, pad, ho, wo;
};

void im2col(const double* x, const ConvGeom& g, double* cols) {
  const Eigen::Index ncol = Eigen::Index(g.ho) * g.wo;
  for (int c = 0; c < g.cin; ++c) {
    for (int ky = 0; ky < g.k; ++ky) {
      for (int kx = 0; kx < g.k; ++kx) {
        double* row = cols + ((Eigen::Index(c) * g.k + ky) * g.k + kx) * ncol;
        for (int oy = 0; oy < g.ho; ++oy) {
          const int iy = oy * g.stride - g.pad + ky;
          double* dst = row + Eigen::Index(oy) * g.wo;
          if (iy < 0 || iy >= g.h) {
            std::fill(dst, dst + g.wo, 0.0);
            continue;
          }
          const double* src = x + (Eigen::Index(c) * g.h + iy) * g.w;
          for (int ox = 0; ox < g.wo; ++ox) {
            const int ix = ox * g.stride - g.pad + kx;
            dst[ox] = (ix >= 0 && ix < g.w) ? src[ix] : 0.0;
          }
        }
      }
    }
  }
}

void col2im(const double* cols, const ConvGeom& g, double* x) {
  const Eigen::Index ncol = Eigen::Index(g.ho) * g.wo;
  for (int c = 0; c < g.cin; ++c) {
    for (int ky = 0; ky < g.k; ++ky) {
      for (int kx = 0; kx < g.k; ++kx) {
        const double* row = cols + ((Eigen::Index(c) * g.k + ky) * g.k + kx) * ncol;
        for (int oy = 0; oy < g.ho; ++oy) {
          const int iy = oy * g.stride - g.pad + ky;
          if (iy < 0 || iy >= g.h) continue;
          const double* src = row + Eigen::Index(oy) * g.wo;
          double* dst = x + (Eigen::Index(c) * g.h + iy) * g.w;
          for (int ox = 0; ox < g.wo; ++ox) {
            const int ix = ox * g.stride - g.pad + kx;
            if (ix >= 0 && ix < g.w) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

}  // namespace

Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad) {
  Tape& t = tape_of(x, w);
  const Tensor& xv = x.value();
  const Tensor& wv = w.value();
  if (xv.rank() != 3 || wv.rank() != 4 || wv.dim(1) != xv.dim(0) || wv.dim(2) != wv.dim(3)) {
    throw ShapeMismatch("conv2d: input " + xv.shape() + " incompatible with weight " + wv.shape());
  }
  ConvGeom g{xv.dim(0), xv.dim(1), xv.dim(2), wv.dim(2), stride, pad, 0, 0};
  g.ho = (g.h + 2 * pad - g.k) / stride + 1;
  g.wo = (g.w + 2 * pad - g.k) / stride + 1;
  if (g.ho <= 0 || g.wo <= 0) throw ShapeMismatch("conv2d: input " + xv.shape() + " too small for kernel");
  const int cout = wv.dim(0);
  const Eigen::Index krows = Eigen::Index(g.cin) * g.k * g.k;
  const Eigen::Index ncol = Eigen::Index(g.ho) * g.wo;
  const bool pointwise = g.k == 1 && stride == 1 && pad == 0;

  Tensor cols;
  if (!pointwise) {
    cols = Tensor({static_cast<int>(krows), static_cast<int>(ncol)});
    im2col(xv.ptr(), g, cols.ptr());
  }
  const Tensor& colsv = pointwise ? xv : cols;

  Tensor out({cout, g.ho, g.wo});
  out.matrix(cout, ncol).noalias() = wv.matrix(cout, krows) * colsv.matrix(krows, ncol);
  const bool has_bias = b.valid();
  if (has_bias) {
    if (b.value().size() != cout) throw ShapeMismatch("conv2d: bias " + b.value().shape());
    out.matrix(cout, ncol).colwise() += b.value().data();
  }

  const int ix = x.id(), iw = w.id(), ib = has_bias ? b.id() : -1;
  const bool rg = any_grad({x, w, b});
  return t.record(std::move(out), rg,
                  [=, cols = std::move(cols)](Tape& tp, const Tensor& gout) {
                    auto G = gout.matrix(cout, ncol);
                    const Tensor& cv = pointwise ? tp.value(ix) : cols;
                    if (tp.requires_grad(iw)) {
                      Tensor gw(tp.value(iw).dims());
                      gw.matrix(cout, krows).noalias() = G * cv.matrix(krows, ncol).transpose();
                      tp.accumulate(iw, gw);
                    }
                    if (ib >= 0 && tp.requires_grad(ib)) tp.accumulate(ib, Tensor::Vector(G.rowwise().sum()));
                    if (tp.requires_grad(ix)) {
                      const Tensor& wv = tp.value(iw);
                      if (pointwise) {
                        Tensor gx({g.cin, g.h, g.w});
                        gx.matrix(g.cin, ncol).noalias() = wv.matrix(cout, krows).transpose() * G;
                        tp.accumulate(ix, gx);
                      } else {
                        Tensor gcols({static_cast<int>(krows), static_cast<int>(ncol)});
                        gcols.matrix(krows, ncol).noalias() = wv.matrix(cout, krows).transpose() * G;
                        Tensor gx({g.cin, g.h, g.w});
                        col2im(gcols.ptr(), g, gx.ptr());
                        tp.accumulate(ix, gx);
                      }
                    }
                  });
}

Var upsample_nearest2x(const Var& x) {
  const Tensor& xv = x.value();
  if (xv.rank() != 3) throw ShapeMismatch("upsample_nearest2x: rank-3 input required");
  const int c = xv.dim(0), h = xv.dim(1), w = xv.dim(2);
  Tensor out({c, 2 * h, 2 * w});
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < 2 * h; ++y)
      for (int xx = 0; xx < 2 * w; ++xx) out.at(ch, y, xx) = xv.at(ch, y / 2, xx / 2);
  return unary(x, std::move(out), [c, h, w](const Tensor&, const Tensor& g) {
    Tensor r({c, h, w});
    for (int ch = 0; ch < c; ++ch)
      for (int y = 0; y < 2 * h; ++y)
        for (int xx = 0; xx < 2 * w; ++xx) r.at(ch, y / 2, xx / 2) += g.at(ch, y, xx);
    return Tensor::Vector(r.data());
  });
}

Var avg_pool2x(const Var& x) {
  const Tensor& xv = x.value();
  if (xv.rank() != 3 || xv.dim(1) % 2 || xv.dim(2) % 2) {
    throw ShapeMismatch("avg_pool2x: even spatial dims required, got " + xv.shape());
  }
  const int c = xv.dim(0), h = xv.dim(1) / 2, w = xv.dim(2) / 2;
  Tensor out({c, h, w});
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < h; ++y)
      for (int xx = 0; xx < w; ++xx)
        out.at(ch, y, xx) = 0.25 * (xv.at(ch, 2 * y, 2 * xx) + xv.at(ch, 2 * y + 1, 2 * xx) +
                                    xv.at(ch, 2 * y, 2 * xx + 1) + xv.at(ch, 2 * y + 1, 2 * xx + 1));
  return unary(x, std::move(out), [c, h, w](const Tensor&, const Tensor& g) {
    Tensor r({c, 2 * h, 2 * w});
    for (int ch = 0; ch < c; ++ch)
      for (int y = 0; y < 2 * h; ++y)
        for (int xx = 0; xx < 2 * w; ++xx) r.at(ch, y, xx) = 0.25 * g.at(ch, y / 2, xx / 2);
    return Tensor::Vector(r.data());
  });
}

Var concat(const Var& a, const Var& b) {
  Tape& t = tape_of(a, b);
  const auto& da = a.dims();
  const auto& db = b.dims();
  if (da.size() != db.size() || !std::equal(da.begin() + 1, da.end(), db.begin() + 1)) {
    throw ShapeMismatch("concat: " + a.value().shape() + " vs " + b.value().shape());
  }
  std::vector<int> dims = da;
  dims[0] += db[0];
  const Eigen::Index na = a.value().size(), nb = b.value().size();
  Tensor::Vector v(na + nb);
  v << a.value().data(), b.value().data();
  const int ia = a.id(), ib = b.id();
  return t.record(Tensor(std::move(dims), std::move(v)), any_grad({a, b}),
                  [ia, ib, na, nb](Tape& tp, const Tensor& g) {
                    tp.accumulate(ia, g.data().head(na));
                    tp.accumulate(ib, g.data().tail(nb));
                  });
}

Var group_norm(const Var& x, int groups, const Var& gamma, const Var& beta, double eps) {
  Tape& t = tape_of(x, gamma);
  const int c = x.dim(0);
  if (groups <= 0 || c % groups) throw ShapeMismatch("group_norm: channels not divisible by groups");
  if (gamma.value().size() != c || beta.value().size() != c) throw ShapeMismatch("group_norm: affine size");
  const Eigen::Index s = x.value().size() / c;
  const Eigen::Index gsize = s * (c / groups);
  Tensor xhat(x.dims());
  Eigen::ArrayXd inv_std(groups);
  for (int gi = 0; gi < groups; ++gi) {
    auto seg = x.value().data().segment(gi * gsize, gsize).array();
    const double mu = seg.mean();
    const double var = (seg - mu).square().mean();
    inv_std[gi] = 1.0 / std::sqrt(var + eps);
    xhat.data().segment(gi * gsize, gsize).array() = (seg - mu) * inv_std[gi];
  }
  Tensor out(x.dims());
  out.matrix(c, s) = (xhat.matrix(c, s).array().colwise() * gamma.value().data().array()).colwise() +
                     beta.value().data().array();
  const int ix = x.id(), igm = gamma.id(), ibt = beta.id();
  return t.record(std::move(out), any_grad({x, gamma, beta}),
                  [=, xhat = std::move(xhat)](Tape& tp, const Tensor& g) {
                    auto G = g.matrix(c, s).array();
                    auto XH = xhat.matrix(c, s).array();
                    if (tp.requires_grad(igm)) tp.accumulate(igm, Tensor::Vector((G * XH).rowwise().sum()));
                    if (tp.requires_grad(ibt)) tp.accumulate(ibt, Tensor::Vector(G.rowwise().sum()));
                    if (!tp.requires_grad(ix)) return;
                    Tensor dxhat(xhat.dims());
                    dxhat.matrix(c, s).array() = G.colwise() * tp.value(igm).data().array();
                    Tensor gx(xhat.dims());
                    for (int gi = 0; gi < groups; ++gi) {
                      auto dh = dxhat.data().segment(gi * gsize, gsize).array();
                      auto xh = xhat.data().segment(gi * gsize, gsize).array();
                      const double m1 = dh.mean();
                      const double m2 = (dh * xh).mean();
                      gx.data().segment(gi * gsize, gsize).array() = inv_std[gi] * (dh - m1 - xh * m2);
                    }
                    tp.accumulate(ix, gx);
                  });
}

Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps) {
  Tape& t = tape_of(x, gamma);
  if (x.value().rank() != 2) throw ShapeMismatch("layer_norm: rank-2 input required");
  const int n = x.dim(0), d = x.dim(1);
  if (gamma.value().size() != d || beta.value().size() != d) throw ShapeMismatch("layer_norm: affine size");
  auto X = x.value().matrix(n, d).array();
  Tensor xhat({n, d});
  Eigen::ArrayXd inv_std(n);
  for (int r = 0; r < n; ++r) {
    const double mu = X.row(r).mean();
    const double var = (X.row(r) - mu).square().mean();
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    xhat.matrix(n, d).row(r).array() = (X.row(r) - mu) * inv_std[r];
  }
  Tensor out({n, d});
  out.matrix(n, d) = ((xhat.matrix(n, d).array().rowwise() * gamma.value().data().array().transpose()).rowwise() +
                      beta.value().data().array().transpose())
                         .matrix();
  const int ix = x.id(), igm = gamma.id(), ibt = beta.id();
  return t.record(std::move(out), any_grad({x, gamma, beta}),
                  [=, xhat = std::move(xhat)](Tape& tp, const Tensor& g) {
                    auto G = g.matrix(n, d).array();
                    auto XH = xhat.matrix(n, d).array();
                    if (tp.requires_grad(igm))
                      tp.accumulate(igm, Tensor::Vector((G * XH).colwise().sum().transpose()));
                    if (tp.requires_grad(ibt)) tp.accumulate(ibt, Tensor::Vector(G.colwise().sum().transpose()));
                    if (!tp.requires_grad(ix)) return;
                    Tensor gx({n, d});
                    const Eigen::ArrayXXd dh = G.rowwise() * tp.value(igm).data().array().transpose();
                    for (int r = 0; r < n; ++r) {
                      const double m1 = dh.row(r).mean();
                      const double m2 = (dh.row(r) * XH.row(r)).mean();
                      gx.matrix(n, d).row(r).array() = inv_std[r] * (dh.row(r) - m1 - XH.row(r) * m2);
                    }
                    tp.accumulate(ix, gx);
                  });
}

Var softmax_rows(const Var& x) {
  if (x.value().rank() != 2) throw ShapeMismatch("softmax_rows: rank-2 input required");
  const int n = x.dim(0), m = x.dim(1);
  Tensor out({n, m});
  auto X = x.value().matrix(n, m);
  auto Y = out.matrix(n, m);
  for (int r = 0; r < n; ++r) {
    Y.row(r) = (X.row(r).array() - X.row(r).maxCoeff()).exp().matrix();
    Y.row(r) /= Y.row(r).sum();
  }
  Tape& t = tape_of(x);
  const int ix = x.id();
  const int iy = static_cast<int>(t.size());
  return t.record(std::move(out), x.requires_grad(), [ix, iy, n, m](Tape& tp, const Tensor& g) {
    auto Y = tp.value(iy).matrix(n, m).array();
    auto G = g.matrix(n, m).array();
    const Eigen::ArrayXd dot = (G * Y).rowwise().sum();
    Tensor gx({n, m});
    gx.matrix(n, m).array() = Y * (G.colwise() - dot);
    tp.accumulate(ix, gx);
  });
}

Var embedding(const Var& table, const std::vector<int>& ids) {
  if (table.value().rank() != 2) throw ShapeMismatch("embedding: table must be rank 2");
  const int v = table.dim(0), d = table.dim(1);
  const int n = static_cast<int>(ids.size());
  Tensor out({n, d});
  for (int i = 0; i < n; ++i) {
    if (ids[i] < 0 || ids[i] >= v) throw ShapeMismatch("embedding: id out of range");
    out.matrix(n, d).row(i) = table.value().matrix(v, d).row(ids[i]);
  }
  return unary(table, std::move(out), [ids, v, d, n](const Tensor&, const Tensor& g) {
    Tensor r({v, d});
    for (int i = 0; i < n; ++i) r.matrix(v, d).row(ids[i]) += g.matrix(n, d).row(i);
    return Tensor::Vector(r.data());
  });
}

Var gather(const Var& a, std::vector<Eigen::Index> index, std::vector<int> dims) {
  if (static_cast<Eigen::Index>(index.size()) != Tensor::count(dims)) {
    throw ShapeMismatch("gather: index size does not match output shape");
  }
  const Eigen::Index na = a.value().size();
  Tensor out(dims);
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] < 0 || index[i] >= na) throw ShapeMismatch("gather: index out of range");
    out[static_cast<Eigen::Index>(i)] = a.value()[index[i]];
  }
  return unary(a, std::move(out), [index = std::move(index), na](const Tensor&, const Tensor& g) {
    Tensor::Vector r = Tensor::Vector::Zero(na);
    for (std::size_t i = 0; i < index.size(); ++i) r[index[i]] += g[static_cast<Eigen::Index>(i)];
    return r;
  });
}

}  // namespace ag
}  // namespace anyglyph
