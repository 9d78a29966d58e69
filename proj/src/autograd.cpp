#include "apiarius/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace apiarius::ag {

// --- shapes and tensors -----------------------------------------------------------

Eigen::Index Shape::size() const {
  Eigen::Index n = 1;
  for (int i = 0; i < rank; ++i) n *= dims[i];
  return n;
}

std::string Shape::str() const {
  std::ostringstream os;
  os << '(';
  for (int i = 0; i < rank; ++i) os << (i ? "," : "") << dims[i];
  os << ')';
  return os.str();
}

Eigen::Index Tensor::storage_rows(const Shape& s) {
  switch (s.rank) {
    case 0: return 1;
    case 1: return s[0];
    case 2: return s[1];
    case 4: return s[1];
    default: throw ShapeError("unsupported tensor rank " + std::to_string(s.rank));
  }
}

Eigen::Index Tensor::storage_cols(const Shape& s) {
  switch (s.rank) {
    case 0: return 1;
    case 1: return 1;
    case 2: return s[0];
    case 4: return static_cast<Eigen::Index>(s[0]) * s[2] * s[3];
    default: throw ShapeError("unsupported tensor rank " + std::to_string(s.rank));
  }
}

Tensor::Tensor(Shape s, Eigen::MatrixXd d) : shape(s), data(std::move(d)) {
  if (data.rows() != storage_rows(shape) || data.cols() != storage_cols(shape)) {
    throw ShapeError("tensor storage " + std::to_string(data.rows()) + "x" +
                     std::to_string(data.cols()) + " does not match shape " + shape.str());
  }
}

Tensor Tensor::zeros(Shape s) {
  return Tensor(s, Eigen::MatrixXd::Zero(storage_rows(s), storage_cols(s)));
}

Parameter::Parameter(std::string n, Tensor v) : name(std::move(n)), value(std::move(v)) {
  zero_grad();
}

const Tensor& Var::value() const { return tape->value(id); }
const Shape& Var::shape() const { return tape->value(id).shape; }
double Var::item() const {
  const auto& d = value().data;
  if (d.size() != 1) throw ShapeError("item() on non-scalar " + shape().str());
  return d(0, 0);
}

// --- tape ---------------------------------------------------------------------------

Var Tape::constant(Tensor t) {
  nodes_.push_back(Node{std::move(t), {}, false, nullptr, nullptr});
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Var Tape::variable(Tensor t) {
  nodes_.push_back(Node{std::move(t), {}, true, nullptr, nullptr});
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Var Tape::param(Parameter& p) {
  nodes_.push_back(Node{p.value, {}, true, nullptr, &p});
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Var Tape::record(Tensor value, bool requires_grad, Backward backward) {
  nodes_.push_back(Node{std::move(value), {}, requires_grad,
                        requires_grad ? std::move(backward) : nullptr, nullptr});
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

void Tape::backward(Var output) {
  if (output.value().data.size() != 1) {
    throw ShapeError("backward() without a seed needs a scalar output, got " +
                     output.shape().str());
  }
  backward(output, Eigen::MatrixXd::Ones(1, 1));
}

void Tape::backward(Var output, const Eigen::MatrixXd& seed) {
  if (output.tape != this) throw Error("backward(): variable belongs to another tape");
  Node& out = nodes_[output.id];
  if (seed.rows() != out.value.data.rows() || seed.cols() != out.value.data.cols()) {
    throw ShapeError("backward(): seed shape mismatch for output " + out.value.shape.str());
  }
  if (!out.requires_grad) return;
  accumulate(output.id, seed);
  for (int i = output.id; i >= 0; --i) {
    Node& n = nodes_[i];
    if (n.grad.size() == 0) continue;
    if (n.backward) {
      n.backward(*this, n.grad);
      n.grad.resize(0, 0);
    } else if (n.param) {
      if (n.param->grad.size() == 0) {
        n.param->grad = n.grad;
      } else {
        n.param->grad += n.grad;
      }
    }
  }
}

namespace {

bool any_grad(std::initializer_list<Var> vars) {
  for (const Var& v : vars) {
    if (v.tape->requires_grad(v.id)) return true;
  }
  return false;
}

void require_same_tape(Var a, Var b) {
  if (a.tape != b.tape) throw Error("operands recorded on different tapes");
}

void require_same_shape(const char* op, Var a, Var b) {
  require_same_tape(a, b);
  if (!(a.shape() == b.shape())) {
    throw ShapeError(std::string(op) + ": shape mismatch " + a.shape().str() + " vs " +
                     b.shape().str());
  }
}

/// Gathers k x k patches: (k*k*C) x (N*ho*wo).
Eigen::MatrixXd im2col(const Eigen::MatrixXd& x, int n, int c, int h, int w, int k, int stride,
                       int pad, int ho, int wo) {
  const Eigen::Index rows = static_cast<Eigen::Index>(k) * k * c;
  Eigen::MatrixXd col(rows, static_cast<Eigen::Index>(n) * ho * wo);
  const double* in = x.data();
  double* out = col.data();
  const std::size_t bytes = sizeof(double) * static_cast<std::size_t>(c);
  for (int b = 0; b < n; ++b) {
    for (int oy = 0; oy < ho; ++oy) {
      for (int ox = 0; ox < wo; ++ox) {
        double* dst = out + ((static_cast<Eigen::Index>(b) * ho + oy) * wo + ox) * rows;
        for (int ky = 0; ky < k; ++ky) {
          const int iy = oy * stride - pad + ky;
          for (int kx = 0; kx < k; ++kx) {
            const int ix = ox * stride - pad + kx;
            double* d = dst + static_cast<Eigen::Index>(ky * k + kx) * c;
            if (iy < 0 || iy >= h || ix < 0 || ix >= w) {
              std::memset(d, 0, bytes);
            } else {
              std::memcpy(d, in + ((static_cast<Eigen::Index>(b) * h + iy) * w + ix) * c, bytes);
            }
          }
        }
      }
    }
  }
  return col;
}

/// Adjoint of im2col: scatter-adds patches back into a C x (N*h*w) image.
Eigen::MatrixXd col2im(const Eigen::MatrixXd& col, int n, int c, int h, int w, int k, int stride,
                       int pad, int ho, int wo) {
  const Eigen::Index rows = static_cast<Eigen::Index>(k) * k * c;
  Eigen::MatrixXd img = Eigen::MatrixXd::Zero(c, static_cast<Eigen::Index>(n) * h * w);
  const double* in = col.data();
  double* out = img.data();
  for (int b = 0; b < n; ++b) {
    for (int oy = 0; oy < ho; ++oy) {
      for (int ox = 0; ox < wo; ++ox) {
        const double* src = in + ((static_cast<Eigen::Index>(b) * ho + oy) * wo + ox) * rows;
        for (int ky = 0; ky < k; ++ky) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= h) continue;
          for (int kx = 0; kx < k; ++kx) {
            const int ix = ox * stride - pad + kx;
            if (ix < 0 || ix >= w) continue;
            const double* s = src + static_cast<Eigen::Index>(ky * k + kx) * c;
            double* d = out + ((static_cast<Eigen::Index>(b) * h + iy) * w + ix) * c;
            for (int ch = 0; ch < c; ++ch) d[ch] += s[ch];
          }
        }
      }
    }
  }
  return img;
}

void require_map(const char* op, Var x) {
  if (x.shape().rank != 4) {
    throw ShapeError(std::string(op) + ": expected a (N,C,H,W) feature map, got " +
                     x.shape().str());
  }
}

}  // namespace

// --- convolution family ---------------------------------------------------------

Var conv2d(Var x, Var kernel, Var bias, int k, int stride, int pad) {
  require_same_tape(x, kernel);
  require_same_tape(x, bias);
  require_map("conv2d", x);
  const Shape xs = x.shape();
  const int n = xs[0], cin = xs[1], h = xs[2], w = xs[3];
  const Eigen::MatrixXd& kw = kernel.value().data;
  const Eigen::MatrixXd& kb = bias.value().data;
  const int cout = static_cast<int>(kw.rows());
  if (kw.cols() != static_cast<Eigen::Index>(k) * k * cin || kb.rows() != cout || kb.cols() != 1) {
    throw ShapeError("conv2d: input " + xs.str() + " incompatible with kernel " +
                     kernel.shape().str() + " / bias " + bias.shape().str());
  }
  const int ho = (h + 2 * pad - k) / stride + 1;
  const int wo = (w + 2 * pad - k) / stride + 1;
  auto col = std::make_shared<Eigen::MatrixXd>(
      im2col(x.value().data, n, cin, h, w, k, stride, pad, ho, wo));
  Eigen::MatrixXd out = kw * (*col);
  out.colwise() += kb.col(0);
  const int xi = x.id, ki = kernel.id, bi = bias.id;
  return x.tape->record(
      Tensor(Shape::map(n, cout, ho, wo), std::move(out)), any_grad({x, kernel, bias}),
      [=](Tape& t, const Eigen::MatrixXd& g) {
        if (t.requires_grad(ki)) t.accumulate(ki, g * col->transpose());
        if (t.requires_grad(bi)) t.accumulate(bi, g.rowwise().sum());
        if (t.requires_grad(xi)) {
          const Eigen::MatrixXd gcol = t.value(ki).data.transpose() * g;
          t.accumulate(xi, col2im(gcol, n, cin, h, w, k, stride, pad, ho, wo));
        }
      });
}

Var tconv2d(Var x, Var kernel, Var bias, int k, int stride, int pad) {
  require_same_tape(x, kernel);
  require_same_tape(x, bias);
  require_map("tconv2d", x);
  const Shape xs = x.shape();
  const int n = xs[0], cin = xs[1], hi = xs[2], wi = xs[3];
  const Eigen::MatrixXd& kw = kernel.value().data;
  const Eigen::MatrixXd& kb = bias.value().data;
  const int cout = static_cast<int>(kb.rows());
  if (kw.cols() != cin || kw.rows() != static_cast<Eigen::Index>(k) * k * cout || kb.cols() != 1) {
    throw ShapeError("tconv2d: input " + xs.str() + " incompatible with kernel " +
                     kernel.shape().str() + " / bias " + bias.shape().str());
  }
  const int ho = (hi - 1) * stride - 2 * pad + k;
  const int wo = (wi - 1) * stride - 2 * pad + k;
  const Eigen::MatrixXd cols = kw * x.value().data;
  Eigen::MatrixXd out = col2im(cols, n, cout, ho, wo, k, stride, pad, hi, wi);
  out.colwise() += kb.col(0);
  const int xi = x.id, ki = kernel.id, bi = bias.id;
  return x.tape->record(
      Tensor(Shape::map(n, cout, ho, wo), std::move(out)), any_grad({x, kernel, bias}),
      [=](Tape& t, const Eigen::MatrixXd& g) {
        const Eigen::MatrixXd gcols = im2col(g, n, cout, ho, wo, k, stride, pad, hi, wi);
        if (t.requires_grad(ki)) t.accumulate(ki, gcols * t.value(xi).data.transpose());
        if (t.requires_grad(bi)) t.accumulate(bi, g.rowwise().sum());
        if (t.requires_grad(xi)) t.accumulate(xi, t.value(ki).data.transpose() * gcols);
      });
}

Var maxpool2(Var x) {
  require_map("maxpool2", x);
  const Shape xs = x.shape();
  const int n = xs[0], c = xs[1], h = xs[2], w = xs[3];
  const int ho = h / 2, wo = w / 2;
  if (ho == 0 || wo == 0) throw ShapeError("maxpool2: input too small " + xs.str());
  const Eigen::MatrixXd& in = x.value().data;
  Eigen::MatrixXd out(c, static_cast<Eigen::Index>(n) * ho * wo);
  auto arg = std::make_shared<std::vector<Eigen::Index>>(static_cast<std::size_t>(out.size()));
  for (int b = 0; b < n; ++b) {
    for (int oy = 0; oy < ho; ++oy) {
      for (int ox = 0; ox < wo; ++ox) {
        const Eigen::Index op = (static_cast<Eigen::Index>(b) * ho + oy) * wo + ox;
        const Eigen::Index p00 = (static_cast<Eigen::Index>(b) * h + 2 * oy) * w + 2 * ox;
        const Eigen::Index cand[4] = {p00, p00 + 1, p00 + w, p00 + w + 1};
        for (int ch = 0; ch < c; ++ch) {
          Eigen::Index best = cand[0];
          double bv = in(ch, best);
          for (int q = 1; q < 4; ++q) {
            const double v = in(ch, cand[q]);
            if (v > bv) {
              bv = v;
              best = cand[q];
            }
          }
          out(ch, op) = bv;
          (*arg)[static_cast<std::size_t>(op * c + ch)] = best;
        }
      }
    }
  }
  const int xi = x.id;
  return x.tape->record(Tensor(Shape::map(n, c, ho, wo), std::move(out)), any_grad({x}),
                        [=](Tape& t, const Eigen::MatrixXd& g) {
                          Eigen::MatrixXd gx =
                              Eigen::MatrixXd::Zero(c, static_cast<Eigen::Index>(n) * h * w);
                          for (Eigen::Index op = 0; op < g.cols(); ++op) {
                            for (int ch = 0; ch < c; ++ch) {
                              gx(ch, (*arg)[static_cast<std::size_t>(op * c + ch)]) += g(ch, op);
                            }
                          }
                          t.accumulate(xi, gx);
                        });
}

Var dense(Var x, Var weight, Var bias) {
  require_same_tape(x, weight);
  require_same_tape(x, bias);
  if (x.shape().rank != 2) throw ShapeError("dense: expected (N,F) input, got " + x.shape().str());
  const Eigen::MatrixXd& wm = weight.value().data;
  const Eigen::MatrixXd& bm = bias.value().data;
  if (wm.cols() != x.shape()[1] || bm.rows() != wm.rows() || bm.cols() != 1) {
    throw ShapeError("dense: input " + x.shape().str() + " incompatible with weight " +
                     weight.shape().str() + " / bias " + bias.shape().str());
  }
  Eigen::MatrixXd out = wm * x.value().data;
  out.colwise() += bm.col(0);
  const int xi = x.id, wi = weight.id, bi = bias.id;
  return x.tape->record(Tensor(Shape::mat(x.shape()[0], static_cast<int>(wm.rows())), std::move(out)),
                        any_grad({x, weight, bias}), [=](Tape& t, const Eigen::MatrixXd& g) {
                          if (t.requires_grad(wi)) t.accumulate(wi, g * t.value(xi).data.transpose());
                          if (t.requires_grad(bi)) t.accumulate(bi, g.rowwise().sum());
                          if (t.requires_grad(xi)) t.accumulate(xi, t.value(wi).data.transpose() * g);
                        });
}

Var reshape(Var x, Shape shape) {
  if (shape.size() != x.shape().size()) {
    throw ShapeError("reshape: cannot view " + x.shape().str() + " as " + shape.str());
  }
  const Eigen::Index rows = Tensor::storage_rows(shape), cols = Tensor::storage_cols(shape);
  const Eigen::MatrixXd& d = x.value().data;
  Eigen::MatrixXd out = Eigen::Map<const Eigen::MatrixXd>(d.data(), rows, cols);
  const int xi = x.id;
  const Eigen::Index r0 = d.rows(), c0 = d.cols();
  return x.tape->record(Tensor(shape, std::move(out)), any_grad({x}),
                        [=](Tape& t, const Eigen::MatrixXd& g) {
                          t.accumulate(xi, Eigen::Map<const Eigen::MatrixXd>(g.data(), r0, c0));
                        });
}

Var flatten(Var x) {
  require_map("flatten", x);
  const Shape s = x.shape();
  return reshape(x, Shape::mat(s[0], s[1] * s[2] * s[3]));
}

Var unflatten(Var x, int c, int h, int w) {
  if (x.shape().rank != 2 || x.shape()[1] != c * h * w) {
    throw ShapeError("unflatten: cannot view " + x.shape().str() + " as C,H,W = " +
                     std::to_string(c) + "," + std::to_string(h) + "," + std::to_string(w));
  }
  return reshape(x, Shape::map(x.shape()[0], c, h, w));
}

// --- elementwise ----------------------------------------------------------------

Var relu(Var x) {
  Eigen::MatrixXd out = x.value().data.cwiseMax(0.0);
  const int xi = x.id, self = static_cast<int>(x.tape->size());
  return x.tape->record(Tensor(x.shape(), std::move(out)), any_grad({x}),
                        [=](Tape& t, const Eigen::MatrixXd& g) {
                          t.accumulate(xi, (t.value(self).data.array() > 0.0)
                                               .select(g.array(), 0.0)
                                               .matrix());
                        });
}

Var sigmoid(Var x) {
  Eigen::MatrixXd out =
      x.value().data.unaryExpr([](double v) { return 1.0 / (1.0 + std::exp(-v)); });
  const int xi = x.id, self = static_cast<int>(x.tape->size());
  return x.tape->record(Tensor(x.shape(), std::move(out)), any_grad({x}),
                        [=](Tape& t, const Eigen::MatrixXd& g) {
                          const auto y = t.value(self).data.array();
                          t.accumulate(xi, (g.array() * y * (1.0 - y)).matrix());
                        });
}

Var exp(Var x) {
  Eigen::MatrixXd out = x.value().data.array().exp().matrix();
  const int xi = x.id, self = static_cast<int>(x.tape->size());
  return x.tape->record(Tensor(x.shape(), std::move(out)), any_grad({x}),
                        [=](Tape& t, const Eigen::MatrixXd& g) {
                          t.accumulate(xi, g.cwiseProduct(t.value(self).data));
                        });
}

Var clamp(Var x, double lo, double hi) {
  Eigen::MatrixXd out = x.value().data.cwiseMax(lo).cwiseMin(hi);
  const int xi = x.id;
  return x.tape->record(Tensor(x.shape(), std::move(out)), any_grad({x}),
                        [=](Tape& t, const Eigen::MatrixXd& g) {
                          const auto v = t.value(xi).data.array();
                          t.accumulate(xi, ((v >= lo) && (v <= hi)).select(g.array(), 0.0).matrix());
                        });
}

Var add(Var a, Var b) {
  require_same_shape("add", a, b);
  Eigen::MatrixXd out = a.value().data + b.value().data;
  const int ai = a.id, bi = b.id;
  return a.tape->record(Tensor(a.shape(), std::move(out)), any_grad({a, b}),
                        [=](Tape& t, const Eigen::MatrixXd& g) {
                          t.accumulate(ai, g);
                          t.accumulate(bi, g);
                        });
}

Var sub(Var a, Var b) {
  require_same_shape("sub", a, b);
  Eigen::MatrixXd out = a.value().data - b.value().data;
  const int ai = a.id, bi = b.id;
  return a.tape->record(Tensor(a.shape(), std::move(out)), any_grad({a, b}),
                        [=](Tape& t, const Eigen::MatrixXd& g) {
                          t.accumulate(ai, g);
                          t.accumulate(bi, -g);
                        });
}

Var mul(Var a, Var b) {
  require_same_shape("mul", a, b);
  Eigen::MatrixXd out = a.value().data.cwiseProduct(b.value().data);
  const int ai = a.id, bi = b.id;
  return a.tape->record(Tensor(a.shape(), std::move(out)), any_grad({a, b}),
                        [=](Tape& t, const Eigen::MatrixXd& g) {
                          if (t.requires_grad(ai)) t.accumulate(ai, g.cwiseProduct(t.value(bi).data));
                          if (t.requires_grad(bi)) t.accumulate(bi, g.cwiseProduct(t.value(ai).data));
                        });
}

Var scale(Var x, double s) {
  Eigen::MatrixXd out = x.value().data * s;
  const int xi = x.id;
  return x.tape->record(Tensor(x.shape(), std::move(out)), any_grad({x}),
                        [=](Tape& t, const Eigen::MatrixXd& g) { t.accumulate(xi, g * s); });
}

Var sum(Var x) {
  Eigen::MatrixXd out(1, 1);
  out(0, 0) = x.value().data.sum();
  const int xi = x.id;
  const Eigen::Index r = x.value().data.rows(), c = x.value().data.cols();
  return x.tape->record(Tensor(Shape::scalar(), std::move(out)), any_grad({x}),
                        [=](Tape& t, const Eigen::MatrixXd& g) {
                          t.accumulate(xi, Eigen::MatrixXd::Constant(r, c, g(0, 0)));
                        });
}

Var mean(Var x) { return scale(sum(x), 1.0 / static_cast<double>(x.value().data.size())); }

Var slice_features(Var x, int start, int count) {
  if (x.shape().rank != 2 || start < 0 || start + count > x.shape()[1]) {
    throw ShapeError("slice_features: [" + std::to_string(start) + ", " +
                     std::to_string(start + count) + ") out of range for " + x.shape().str());
  }
  Eigen::MatrixXd out = x.value().data.middleRows(start, count);
  const int xi = x.id;
  const Eigen::Index rows = x.value().data.rows();
  return x.tape->record(Tensor(Shape::mat(x.shape()[0], count), std::move(out)), any_grad({x}),
                        [=](Tape& t, const Eigen::MatrixXd& g) {
                          Eigen::MatrixXd full = Eigen::MatrixXd::Zero(rows, g.cols());
                          full.middleRows(start, count) = g;
                          t.accumulate(xi, full);
                        });
}

Var concat_features(Var a, Var b) {
  require_same_tape(a, b);
  if (a.shape().rank != 2 || b.shape().rank != 2 || a.shape()[0] != b.shape()[0]) {
    throw ShapeError("concat_features: incompatible " + a.shape().str() + " and " +
                     b.shape().str());
  }
  const int fa = a.shape()[1], fb = b.shape()[1];
  Eigen::MatrixXd out(fa + fb, a.shape()[0]);
  out.topRows(fa) = a.value().data;
  out.bottomRows(fb) = b.value().data;
  const int ai = a.id, bi = b.id;
  return a.tape->record(Tensor(Shape::mat(a.shape()[0], fa + fb), std::move(out)),
                        any_grad({a, b}), [=](Tape& t, const Eigen::MatrixXd& g) {
                          t.accumulate(ai, g.topRows(fa));
                          t.accumulate(bi, g.bottomRows(fb));
                        });
}

Var gather_samples(Var x, std::span<const int> index) {
  if (x.shape().rank != 2) {
    throw ShapeError("gather_samples: expected (N,F) input, got " + x.shape().str());
  }
  const Eigen::MatrixXd& d = x.value().data;
  std::vector<int> idx(index.begin(), index.end());
  Eigen::MatrixXd out(d.rows(), static_cast<Eigen::Index>(idx.size()));
  for (std::size_t j = 0; j < idx.size(); ++j) {
    if (idx[j] < 0 || idx[j] >= d.cols()) throw ShapeError("gather_samples: index out of range");
    out.col(static_cast<Eigen::Index>(j)) = d.col(idx[j]);
  }
  const int xi = x.id;
  const Eigen::Index n = d.cols();
  return x.tape->record(Tensor(Shape::mat(static_cast<int>(idx.size()), x.shape()[1]), std::move(out)),
                        any_grad({x}), [=](Tape& t, const Eigen::MatrixXd& g) {
                          Eigen::MatrixXd full = Eigen::MatrixXd::Zero(g.rows(), n);
                          for (std::size_t j = 0; j < idx.size(); ++j) {
                            full.col(idx[j]) += g.col(static_cast<Eigen::Index>(j));
                          }
                          t.accumulate(xi, full);
                        });
}

// --- losses ---------------------------------------------------------------------

Var bce(Var recon, Var target) {
  require_same_shape("bce", recon, target);
  const auto r = recon.value().data.array().cwiseMax(kBceClamp).cwiseMin(1.0 - kBceClamp);
  const auto tg = target.value().data.array();
  const double m = static_cast<double>(recon.value().data.size());
  Eigen::MatrixXd out(1, 1);
  out(0, 0) = -(tg * r.log() + (1.0 - tg) * (1.0 - r).log()).sum() / m;
  const int ri = recon.id, ti = target.id;
  return recon.tape->record(
      Tensor(Shape::scalar(), std::move(out)), any_grad({recon, target}),
      [=](Tape& t, const Eigen::MatrixXd& g) {
        const auto raw = t.value(ri).data.array();
        const auto rc = raw.cwiseMax(kBceClamp).cwiseMin(1.0 - kBceClamp);
        const auto tv = t.value(ti).data.array();
        const double s = g(0, 0) / m;
        if (t.requires_grad(ri)) {
          const auto inside = (raw >= kBceClamp) && (raw <= 1.0 - kBceClamp);
          t.accumulate(ri, inside.select((-tv / rc + (1.0 - tv) / (1.0 - rc)) * s, 0.0).matrix());
        }
        if (t.requires_grad(ti)) t.accumulate(ti, (-(rc.log() - (1.0 - rc).log()) * s).matrix());
      });
}

Var kl_diag_gauss(Var mu, Var logvar) {
  require_same_shape("kl_diag_gauss", mu, logvar);
  const auto m = mu.value().data.array();
  const auto lv = logvar.value().data.array();
  const double batch = static_cast<double>(mu.value().data.cols());
  Eigen::MatrixXd out(1, 1);
  out(0, 0) = -0.5 * (1.0 + lv - m.square() - lv.exp()).sum() / batch;
  const int mi = mu.id, li = logvar.id;
  return mu.tape->record(Tensor(Shape::scalar(), std::move(out)), any_grad({mu, logvar}),
                         [=](Tape& t, const Eigen::MatrixXd& g) {
                           const double s = g(0, 0) / batch;
                           t.accumulate(mi, t.value(mi).data * s);
                           t.accumulate(li, ((t.value(li).data.array().exp() - 1.0) * 0.5 * s).matrix());
                         });
}

Var softmax_ce(Var logits, std::span<const int> classes) {
  if (logits.shape().rank != 2) {
    throw ShapeError("softmax_ce: expected (N,K) logits, got " + logits.shape().str());
  }
  const Eigen::MatrixXd& z = logits.value().data;
  const Eigen::Index k = z.rows(), n = z.cols();
  if (static_cast<Eigen::Index>(classes.size()) != n) {
    throw ShapeError("softmax_ce: " + std::to_string(classes.size()) + " labels for " +
                     std::to_string(n) + " samples");
  }
  Eigen::MatrixXd probs(k, n);
  double total = 0.0;
  std::vector<int> cls(classes.begin(), classes.end());
  for (Eigen::Index j = 0; j < n; ++j) {
    if (cls[j] < 0 || cls[j] >= k) throw Error("softmax_ce: class index out of range");
    const double top = z.col(j).maxCoeff();
    const Eigen::VectorXd e = (z.col(j).array() - top).exp();
    const double norm = e.sum();
    probs.col(j) = e / norm;
    total += top + std::log(norm) - z(cls[j], j);
  }
  Eigen::MatrixXd out(1, 1);
  out(0, 0) = total / static_cast<double>(n);
  const int li = logits.id;
  return logits.tape->record(Tensor(Shape::scalar(), std::move(out)), any_grad({logits}),
                             [=](Tape& t, const Eigen::MatrixXd& g) {
                               Eigen::MatrixXd d = probs;
                               for (Eigen::Index j = 0; j < n; ++j) d(cls[j], j) -= 1.0;
                               t.accumulate(li, d * (g(0, 0) / static_cast<double>(n)));
                             });
}

Var huber(Var pred, Var target, double delta) {
  require_same_shape("huber", pred, target);
  if (!(delta > 0.0)) throw Error("huber: delta must be positive");
  const Eigen::ArrayXXd r = (pred.value().data - target.value().data).array();
  const double m = static_cast<double>(r.size());
  const Eigen::ArrayXXd a = r.abs();
  Eigen::MatrixXd out(1, 1);
  out(0, 0) = (a <= delta).select(0.5 * r.square(), delta * (a - 0.5 * delta)).sum() / m;
  const int pi = pred.id, ti = target.id;
  return pred.tape->record(Tensor(Shape::scalar(), std::move(out)), any_grad({pred, target}),
                           [=](Tape& t, const Eigen::MatrixXd& g) {
                             const Eigen::MatrixXd d =
                                 (r.cwiseMax(-delta).cwiseMin(delta) * (g(0, 0) / m)).matrix();
                             t.accumulate(pi, d);
                             t.accumulate(ti, -d);
                           });
}

// --- optimizer ------------------------------------------------------------------

void adam_step(Parameter& p, AdamState& s, double lr, const AdamConfig& cfg) {
  const Eigen::MatrixXd& g = p.grad;
  if (g.rows() != p.value.data.rows() || g.cols() != p.value.data.cols()) {
    throw ShapeError("adam_step: gradient shape mismatch for " + p.name);
  }
  if (s.m.size() == 0) {
    s.m = Eigen::MatrixXd::Zero(g.rows(), g.cols());
    s.v = Eigen::MatrixXd::Zero(g.rows(), g.cols());
  }
  ++s.t;
  s.m = cfg.beta1 * s.m + (1.0 - cfg.beta1) * g;
  s.v = cfg.beta2 * s.v + (1.0 - cfg.beta2) * g.cwiseAbs2();
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(s.t));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(s.t));
  p.value.data.array() -= lr * (s.m.array() / c1) / ((s.v.array() / c2).sqrt() + cfg.eps);
}

void Adam::step(std::span<Parameter* const> params, double lr) {
  for (Parameter* p : params) adam_step(*p, states_[p], lr, cfg_);
}

const AdamState& Adam::state(const Parameter& p) const {
  auto it = states_.find(&p);
  if (it == states_.end()) throw Error("Adam: no state for parameter " + p.name);
  return it->second;
}

// --- gradient checking ----------------------------------------------------------

double grad_check(const ScalarFn& fn, const std::vector<Tensor>& inputs, double h) {
  std::vector<Eigen::MatrixXd> analytic;
  {
    Tape tape;
    std::vector<Var> vars;
    for (const Tensor& in : inputs) vars.push_back(tape.variable(in));
    Var out = fn(tape, vars);
    tape.backward(out);
    for (const Var& v : vars) {
      const Eigen::MatrixXd& g = tape.grad(v);
      analytic.push_back(g.size() ? g : Eigen::MatrixXd::Zero(v.value().data.rows(),
                                                              v.value().data.cols()));
    }
  }
  auto evaluate = [&](const std::vector<Tensor>& xs) {
    Tape tape;
    std::vector<Var> vars;
    for (const Tensor& in : xs) vars.push_back(tape.constant(in));
    return fn(tape, vars).item();
  };
  double worst = 0.0;
  std::vector<Tensor> probe = inputs;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    for (Eigen::Index j = 0; j < inputs[i].data.size(); ++j) {
      const double orig = inputs[i].data(j);
      probe[i].data(j) = orig + h;
      const double up = evaluate(probe);
      probe[i].data(j) = orig - h;
      const double down = evaluate(probe);
      probe[i].data(j) = orig;
      const double numeric = (up - down) / (2.0 * h);
      const double a = analytic[i](j);
      worst = std::max(worst, std::abs(a - numeric) / std::max(1e-8, std::abs(a) + std::abs(numeric)));
    }
  }
  return worst;
}

// --- checkpoints ----------------------------------------------------------------

namespace {

constexpr char kCheckpointMagic[4] = {'A', 'P', 'C', 'K'};

template <typename T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T get(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!in) throw IoError("truncated checkpoint");
  return v;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, std::span<const Parameter* const> params) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(kCheckpointMagic, 4);
  put<uint8_t>(out, kCheckpointVersion);
  put<uint32_t>(out, static_cast<uint32_t>(params.size()));
  for (const Parameter* p : params) {
    put<uint16_t>(out, static_cast<uint16_t>(p->name.size()));
    out.write(p->name.data(), static_cast<std::streamsize>(p->name.size()));
    const Shape& s = p->value.shape;
    put<uint8_t>(out, static_cast<uint8_t>(s.rank));
    for (int i = 0; i < s.rank; ++i) put<int32_t>(out, s[i]);
    out.write(reinterpret_cast<const char*>(p->value.data.data()),
              static_cast<std::streamsize>(p->value.data.size() * sizeof(double)));
  }
  if (!out) throw IoError("write failed for " + path.string());
}

std::vector<Parameter> read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kCheckpointMagic, 4) != 0) {
    throw IoError(path.string() + ": not a checkpoint");
  }
  const auto version = get<uint8_t>(in);
  if (version != kCheckpointVersion) {
    throw IoError(path.string() + ": unsupported checkpoint version " + std::to_string(version));
  }
  const auto count = get<uint32_t>(in);
  std::vector<Parameter> params;
  for (uint32_t i = 0; i < count; ++i) {
    const auto len = get<uint16_t>(in);
    std::string name(len, '\0');
    in.read(name.data(), len);
    Shape s;
    s.rank = get<uint8_t>(in);
    if (s.rank > 4) throw IoError(path.string() + ": bad rank for " + name);
    for (int d = 0; d < s.rank; ++d) s.dims[d] = get<int32_t>(in);
    Eigen::MatrixXd data(Tensor::storage_rows(s), Tensor::storage_cols(s));
    in.read(reinterpret_cast<char*>(data.data()),
            static_cast<std::streamsize>(data.size() * sizeof(double)));
    if (!in) throw IoError(path.string() + ": truncated payload for " + name);
    params.emplace_back(std::move(name), Tensor(s, std::move(data)));
  }
  return params;
}

void load_checkpoint(const std::filesystem::path& path, std::span<Parameter* const> params) {
  auto loaded = read_checkpoint(path);
  for (Parameter* p : params) {
    auto it = std::find_if(loaded.begin(), loaded.end(),
                           [&](const Parameter& q) { return q.name == p->name; });
    if (it == loaded.end()) throw IoError(path.string() + ": missing parameter " + p->name);
    if (!(it->value.shape == p->value.shape)) {
      throw ShapeError(path.string() + ": parameter " + p->name + " has shape " +
                       it->value.shape.str() + ", expected " + p->value.shape.str());
    }
    p->value = it->value;
    p->zero_grad();
  }
}

void he_init(Parameter& p, int fan_in, Rng& rng) {
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / fan_in));
  for (Eigen::Index i = 0; i < p.value.data.size(); ++i) p.value.data(i) = dist(rng);
}

}  // namespace apiarius::ag
