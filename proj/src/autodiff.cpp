#include "flowprior/autodiff.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <numeric>
#include <cmath>

#include "flowprior/errors.hpp"

namespace flowprior {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;

void accumulate(Tensor& into, const Tensor& g) {
  auto dst = into.data();
  auto src = g.data();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

void accumulate_scaled(Tensor& into, const Tensor& g, double k) {
  auto dst = into.data();
  auto src = g.data();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += k * src[i];
}

double total(const Tensor& t) {
  double s = 0.0;
  for (double v : t.data()) s += v;
  return s;
}

Tape& same_tape(Var a, Var b) {
  if (!a.valid() || !b.valid()) throw ContractError("operation on an invalid Var");
  if (&a.tape() != &b.tape()) throw ContractError("operands live on different tapes");
  return a.tape();
}

Tape& tape_of(Var a) {
  if (!a.valid()) throw ContractError("operation on an invalid Var");
  return a.tape();
}

void require_rank4(const Tensor& t, const char* what) {
  if (t.rank() != 4) {
    throw ShapeError(std::string(what) + " expects an (N, C, H, W) tensor, got " +
                     to_string(t.shape()));
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Var / GradientMap / Tape

const Tensor& Var::value() const {
  if (!valid()) throw ContractError("value() on an invalid Var");
  return tape_->value(id_);
}

bool Var::requires_grad() const { return valid() && tape_->requires_grad(id_); }

const Tensor& GradientMap::at(Var leaf) const {
  auto it = grads_.find(leaf.id());
  if (it == grads_.end()) throw ContractError("no gradient recorded for this node");
  return it->second;
}

Var Tape::push(Node node) {
  nodes_.push_back(std::move(node));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::constant(Tensor value) {
  Node n;
  n.value = std::move(value);
  n.leaf = true;
  return push(std::move(n));
}

Var Tape::leaf(Tensor value, bool requires_grad) {
  Node n;
  n.value = std::move(value);
  n.leaf = true;
  n.requires_grad = requires_grad;
  return push(std::move(n));
}

Var Tape::param(const Tensor& parameter) {
  auto it = params_.find(&parameter);
  if (it != params_.end()) return Var(this, it->second);
  Var v = leaf(parameter, trainable_params_);
  params_.emplace(&parameter, v.id());
  return v;
}

Var Tape::find_param(const Tensor& parameter) {
  auto it = params_.find(&parameter);
  if (it == params_.end()) return {};
  return Var(this, it->second);
}

Var Tape::record(Tensor value, const std::vector<Var>& parents, BackwardFn backward) {
  Node n;
  n.value = std::move(value);
  n.parents.reserve(parents.size());
  for (Var p : parents) {
    if (!p.valid()) {
      n.parents.push_back(-1);
      continue;
    }
    if (&p.tape() != this) throw ContractError("parent node belongs to another tape");
    n.parents.push_back(p.id());
    n.requires_grad = n.requires_grad || p.requires_grad();
  }
  if (n.requires_grad) n.backward = std::move(backward);
  return push(std::move(n));
}

GradientMap Tape::backprop(Var loss) const {
  if (!loss.valid() || &loss.tape() != this) throw ContractError("loss is not on this tape");
  if (loss.value().size() != 1) {
    throw ContractError("backprop needs a scalar loss, got shape " + to_string(loss.shape()));
  }
  std::vector<Tensor> grads(nodes_.size());
  const auto root = static_cast<std::size_t>(loss.id());
  grads[root] = Tensor(nodes_[root].value.shape(), 1.0);

  for (std::size_t i = root + 1; i-- > 0;) {
    const Node& node = nodes_[i];
    if (node.leaf || !node.requires_grad || grads[i].empty()) continue;
    std::vector<Tensor*> slots;
    slots.reserve(node.parents.size());
    for (int p : node.parents) {
      if (p < 0 || !nodes_[static_cast<std::size_t>(p)].requires_grad) {
        slots.push_back(nullptr);
        continue;
      }
      Tensor& g = grads[static_cast<std::size_t>(p)];
      if (g.empty()) g = Tensor(nodes_[static_cast<std::size_t>(p)].value.shape(), 0.0);
      slots.push_back(&g);
    }
    GradSink sink(std::move(slots));
    node.backward(*this, node.value, grads[i], sink);
    if (!node.leaf) grads[i] = Tensor();  // consumed; keeps the working set small
  }

  GradientMap out;
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    const Node& node = nodes_[i];
    if (!node.leaf || !node.requires_grad) continue;
    if (grads[i].empty()) grads[i] = Tensor(node.value.shape(), 0.0);
    out.grads_.emplace(static_cast<int>(i), std::move(grads[i]));
  }
  return out;
}

namespace ops {

// ---------------------------------------------------------------------------
// Elementwise

namespace {

enum class Broadcast { none, left_scalar, right_scalar };

Broadcast check_binary(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() == b.shape()) return Broadcast::none;
  if (b.size() == 1) return Broadcast::right_scalar;
  if (a.size() == 1) return Broadcast::left_scalar;
  throw ShapeError(std::string(what) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                   to_string(b.shape()));
}

template <typename F>
Tensor binary_values(const Tensor& a, const Tensor& b, Broadcast bc, F f) {
  Tensor out(bc == Broadcast::left_scalar ? b.shape() : a.shape());
  auto o = out.data();
  for (std::size_t i = 0; i < o.size(); ++i) {
    const double x = bc == Broadcast::left_scalar ? a[0] : a[i];
    const double y = bc == Broadcast::right_scalar ? b[0] : b[i];
    o[i] = f(x, y);
  }
  return out;
}

// Adds g (shape of the output) into a parent gradient that may be a scalar.
void reduce_into(Tensor* slot, const Tensor& g, double k = 1.0) {
  if (!slot) return;
  if (slot->size() == g.size()) {
    accumulate_scaled(*slot, g, k);
  } else {
    (*slot)[0] += k * total(g);
  }
}

template <typename F>
Var unary(Var a, Tensor value, F grad_fn) {
  return tape_of(a).record(std::move(value), {a},
                           [grad_fn](const Tape& t, const Tensor& out, const Tensor& g, GradSink& s) {
                             (void)t;
                             grad_fn(out, g, *s[0]);
                           });
}

}  // namespace

Var add(Var a, Var b) {
  Tape& tape = same_tape(a, b);
  const Broadcast bc = check_binary(a.value(), b.value(), "add");
  Tensor v = binary_values(a.value(), b.value(), bc, [](double x, double y) { return x + y; });
  return tape.record(std::move(v), {a, b},
                     [](const Tape&, const Tensor&, const Tensor& g, GradSink& s) {
                       reduce_into(s[0], g);
                       reduce_into(s[1], g);
                     });
}

Var sub(Var a, Var b) {
  Tape& tape = same_tape(a, b);
  const Broadcast bc = check_binary(a.value(), b.value(), "sub");
  Tensor v = binary_values(a.value(), b.value(), bc, [](double x, double y) { return x - y; });
  return tape.record(std::move(v), {a, b},
                     [](const Tape&, const Tensor&, const Tensor& g, GradSink& s) {
                       reduce_into(s[0], g);
                       reduce_into(s[1], g, -1.0);
                     });
}

Var mul(Var a, Var b) {
  Tape& tape = same_tape(a, b);
  const Broadcast bc = check_binary(a.value(), b.value(), "mul");
  Tensor v = binary_values(a.value(), b.value(), bc, [](double x, double y) { return x * y; });
  const int ia = a.id();
  const int ib = b.id();
  return tape.record(
      std::move(v), {a, b}, [ia, ib, bc](const Tape& t, const Tensor&, const Tensor& g, GradSink& s) {
        const Tensor& av = t.value(ia);
        const Tensor& bv = t.value(ib);
        if (Tensor* ga = s[0]) {
          if (bc == Broadcast::left_scalar) {
            double acc = 0.0;
            for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * bv[i];
            (*ga)[0] += acc;
          } else {
            for (std::size_t i = 0; i < g.size(); ++i) {
              (*ga)[i] += g[i] * (bc == Broadcast::right_scalar ? bv[0] : bv[i]);
            }
          }
        }
        if (Tensor* gb = s[1]) {
          if (bc == Broadcast::right_scalar) {
            double acc = 0.0;
            for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * av[i];
            (*gb)[0] += acc;
          } else {
            for (std::size_t i = 0; i < g.size(); ++i) {
              (*gb)[i] += g[i] * (bc == Broadcast::left_scalar ? av[0] : av[i]);
            }
          }
        }
      });
}

Var scale(Var a, double factor) {
  Tensor v = a.value();
  for (double& x : v.data()) x *= factor;
  return unary(a, std::move(v), [factor](const Tensor&, const Tensor& g, Tensor& ga) {
    accumulate_scaled(ga, g, factor);
  });
}

Var add_scalar(Var a, double offset) {
  Tensor v = a.value();
  for (double& x : v.data()) x += offset;
  return unary(a, std::move(v), [](const Tensor&, const Tensor& g, Tensor& ga) { accumulate(ga, g); });
}

Var neg(Var a) { return scale(a, -1.0); }

Var exp(Var a) {
  Tensor v = a.value();
  for (double& x : v.data()) x = std::exp(x);
  return unary(a, std::move(v), [](const Tensor& out, const Tensor& g, Tensor& ga) {
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * out[i];
  });
}

Var log(Var a) {
  Tensor v = a.value();
  for (double& x : v.data()) {
    if (!(x > 0.0)) throw DomainError("log of non-positive value " + std::to_string(x));
    x = std::log(x);
  }
  const int ia = a.id();
  return tape_of(a).record(std::move(v), {a},
                           [ia](const Tape& t, const Tensor&, const Tensor& g, GradSink& s) {
                             const Tensor& av = t.value(ia);
                             Tensor& ga = *s[0];
                             for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] / av[i];
                           });
}

Var relu(Var a) {
  Tensor v = a.value();
  for (double& x : v.data()) x = x > 0.0 ? x : 0.0;
  return unary(a, std::move(v), [](const Tensor& out, const Tensor& g, Tensor& ga) {
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (out[i] > 0.0) ga[i] += g[i];
    }
  });
}

Var square(Var a) {
  Tensor v = a.value();
  for (double& x : v.data()) x = x * x;
  const int ia = a.id();
  return tape_of(a).record(std::move(v), {a},
                           [ia](const Tape& t, const Tensor&, const Tensor& g, GradSink& s) {
                             const Tensor& av = t.value(ia);
                             Tensor& ga = *s[0];
                             for (std::size_t i = 0; i < g.size(); ++i) ga[i] += 2.0 * g[i] * av[i];
                           });
}

Var elementwise(ElementwiseOp op, Var a, Var b, double factor) {
  const bool binary = op == ElementwiseOp::add || op == ElementwiseOp::sub || op == ElementwiseOp::mul;
  if (binary && !b.valid()) throw ContractError("binary elementwise op needs two operands");
  switch (op) {
    case ElementwiseOp::add: return add(a, b);
    case ElementwiseOp::sub: return sub(a, b);
    case ElementwiseOp::mul: return mul(a, b);
    case ElementwiseOp::exp: return exp(a);
    case ElementwiseOp::log: return log(a);
    case ElementwiseOp::relu: return relu(a);
    case ElementwiseOp::scale: return scale(a, factor);
  }
  throw ContractError("unknown elementwise op");
}

// ---------------------------------------------------------------------------
// Reductions

Var sum(Var a) {
  const double s = total(a.value());
  return unary(a, Tensor::scalar(s), [](const Tensor&, const Tensor& g, Tensor& ga) {
    for (double& x : ga.data()) x += g[0];
  });
}

Var mean(Var a) {
  const double n = static_cast<double>(a.value().size());
  const double s = total(a.value()) / n;
  return unary(a, Tensor::scalar(s), [n](const Tensor&, const Tensor& g, Tensor& ga) {
    for (double& x : ga.data()) x += g[0] / n;
  });
}

Var l2_norm(Var a) {
  double sq = 0.0;
  for (double x : a.value().data()) sq += x * x;
  const int ia = a.id();
  return tape_of(a).record(Tensor::scalar(std::sqrt(sq)), {a},
                           [ia](const Tape& t, const Tensor& out, const Tensor& g, GradSink& s) {
                             const double norm = out[0];
                             if (norm == 0.0) return;
                             const Tensor& av = t.value(ia);
                             accumulate_scaled(*s[0], av, g[0] / norm);
                           });
}

Var reduce(ReduceOp op, Var a) {
  switch (op) {
    case ReduceOp::sum: return sum(a);
    case ReduceOp::mean: return mean(a);
    case ReduceOp::l2_norm: return l2_norm(a);
  }
  throw ContractError("unknown reduce op");
}

Var sum_per_sample(Var a) {
  const Tensor& av = a.value();
  const int n = av.dim(0);
  const std::size_t per = av.size() / static_cast<std::size_t>(n);
  Tensor out({n}, 0.0);
  for (int i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < per; ++j) s += av[i * per + j];
    out[static_cast<std::size_t>(i)] = s;
  }
  return unary(a, std::move(out), [n, per](const Tensor&, const Tensor& g, Tensor& ga) {
    for (int i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < per; ++j) ga[i * per + j] += g[static_cast<std::size_t>(i)];
    }
  });
}

Var l2_norm_per_sample(Var a) {
  const Tensor& av = a.value();
  const int n = av.dim(0);
  const std::size_t per = av.size() / static_cast<std::size_t>(n);
  Tensor out({n}, 0.0);
  for (int i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < per; ++j) s += av[i * per + j] * av[i * per + j];
    out[static_cast<std::size_t>(i)] = std::sqrt(s);
  }
  const int ia = a.id();
  return tape_of(a).record(
      std::move(out), {a}, [ia, n, per](const Tape& t, const Tensor& o, const Tensor& g, GradSink& s) {
        const Tensor& x = t.value(ia);
        Tensor& ga = *s[0];
        for (int i = 0; i < n; ++i) {
          const double norm = o[static_cast<std::size_t>(i)];
          if (norm == 0.0) continue;
          const double k = g[static_cast<std::size_t>(i)] / norm;
          for (std::size_t j = 0; j < per; ++j) ga[i * per + j] += k * x[i * per + j];
        }
      });
}

// ---------------------------------------------------------------------------
// Convolution

namespace {

// Unfolds one (C, H, W) image into a (C*9, H*W) patch matrix, zero padded.
void im2col3(const double* x, int channels, int height, int width, double* col) {
  const int hw = height * width;
  for (int c = 0; c < channels; ++c) {
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        double* row = col + static_cast<std::size_t>((c * 3 + ky) * 3 + kx) * hw;
        const double* plane = x + static_cast<std::size_t>(c) * hw;
        for (int y = 0; y < height; ++y) {
          const int iy = y + ky - 1;
          double* dst = row + static_cast<std::size_t>(y) * width;
          if (iy < 0 || iy >= height) {
            std::fill(dst, dst + width, 0.0);
            continue;
          }
          const double* src = plane + static_cast<std::size_t>(iy) * width + (kx - 1);
          const int x0 = std::max(0, 1 - kx);
          const int x1 = std::min(width, width + 1 - kx);
          if (x0 > 0) dst[0] = 0.0;
          std::copy(src + x0, src + x1, dst + x0);
          if (x1 < width) dst[width - 1] = 0.0;
        }
      }
    }
  }
}

// Adjoint of im2col3: scatters patch-matrix gradients back onto the image.
void col2im3(const double* col, int channels, int height, int width, double* x) {
  const int hw = height * width;
  for (int c = 0; c < channels; ++c) {
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        const double* row = col + static_cast<std::size_t>((c * 3 + ky) * 3 + kx) * hw;
        double* plane = x + static_cast<std::size_t>(c) * hw;
        for (int y = 0; y < height; ++y) {
          const int iy = y + ky - 1;
          if (iy < 0 || iy >= height) continue;
          const double* src = row + static_cast<std::size_t>(y) * width;
          double* dst = plane + static_cast<std::size_t>(iy) * width;
          const int x0 = std::max(0, 1 - kx);
          const int x1 = std::min(width, width + 1 - kx);
          for (int xx = x0; xx < x1; ++xx) dst[xx + kx - 1] += src[xx];
        }
      }
    }
  }
}

}  // namespace

Var conv2d(Var input, Var weight, Var bias, int kernel) {
  Tape& tape = same_tape(input, weight);
  if (kernel != 1 && kernel != 3) throw ShapeError("conv2d kernel must be 1 or 3");
  const Tensor& x = input.value();
  const Tensor& w = weight.value();
  require_rank4(x, "conv2d input");
  if (w.rank() != 4 || w.dim(2) != kernel || w.dim(3) != kernel || w.dim(1) != x.dim(1)) {
    throw ShapeError("conv2d weight " + to_string(w.shape()) + " incompatible with input " +
                     to_string(x.shape()) + " for kernel " + std::to_string(kernel));
  }
  const int n = x.dim(0), cin = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const int cout = w.dim(0);
  if (bias.valid()) {
    if (&bias.tape() != &tape) throw ContractError("conv2d bias on another tape");
    if (bias.value().shape() != Shape{cout}) {
      throw ShapeError("conv2d bias " + to_string(bias.value().shape()) + " does not match " +
                       std::to_string(cout) + " output channels");
    }
  }
  const int hw = h * wd;
  const int rows = cin * kernel * kernel;
  Tensor out({n, cout, h, wd}, 0.0);
  ConstMatrixMap wm(w.data().data(), cout, rows);
  std::vector<double> col(kernel == 3 ? static_cast<std::size_t>(rows) * hw : 0);
  for (int i = 0; i < n; ++i) {
    const double* xi = x.data().data() + static_cast<std::size_t>(i) * cin * hw;
    MatrixMap om(out.data().data() + static_cast<std::size_t>(i) * cout * hw, cout, hw);
    if (kernel == 1) {
      om.noalias() = wm * ConstMatrixMap(xi, cin, hw);
    } else {
      im2col3(xi, cin, h, wd, col.data());
      om.noalias() = wm * ConstMatrixMap(col.data(), rows, hw);
    }
    if (bias.valid()) {
      const Tensor& b = bias.value();
      for (int c = 0; c < cout; ++c) om.row(c).array() += b[static_cast<std::size_t>(c)];
    }
  }

  const int ix = input.id(), iw = weight.id();
  return tape.record(
      std::move(out), {input, weight, bias},
      [=](const Tape& t, const Tensor&, const Tensor& g, GradSink& s) {
        const Tensor& xv = t.value(ix);
        const Tensor& wv = t.value(iw);
        ConstMatrixMap wmat(wv.data().data(), cout, rows);
        std::vector<double> colbuf(kernel == 3 ? static_cast<std::size_t>(rows) * hw : 0);
        std::vector<double> dcol(kernel == 3 && s[0] ? static_cast<std::size_t>(rows) * hw : 0);
        for (int i = 0; i < n; ++i) {
          ConstMatrixMap gm(g.data().data() + static_cast<std::size_t>(i) * cout * hw, cout, hw);
          const double* xi = xv.data().data() + static_cast<std::size_t>(i) * cin * hw;
          if (Tensor* gx = s[0]) {
            double* gxi = gx->data().data() + static_cast<std::size_t>(i) * cin * hw;
            if (kernel == 1) {
              MatrixMap(gxi, cin, hw).noalias() += wmat.transpose() * gm;
            } else {
              MatrixMap dc(dcol.data(), rows, hw);
              dc.noalias() = wmat.transpose() * gm;
              col2im3(dcol.data(), cin, h, wd, gxi);
            }
          }
          if (Tensor* gw = s[1]) {
            MatrixMap gwm(gw->data().data(), cout, rows);
            if (kernel == 1) {
              gwm.noalias() += gm * ConstMatrixMap(xi, cin, hw).transpose();
            } else {
              im2col3(xi, cin, h, wd, colbuf.data());
              gwm.noalias() += gm * ConstMatrixMap(colbuf.data(), rows, hw).transpose();
            }
          }
          if (Tensor* gb = s[2]) {
            // Plain loop: Eigen's vectorized sum depends on buffer alignment,
            // which would make runs differ in the last bit.
            for (int c = 0; c < cout; ++c) {
              const double* row = g.data().data() + (static_cast<std::size_t>(i) * cout + c) * hw;
              (*gb)[static_cast<std::size_t>(c)] += std::accumulate(row, row + hw, 0.0);
            }
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Channel broadcast, batch tiling, slicing

Var mul_channel(Var x, Var v) {
  Tape& tape = same_tape(x, v);
  const Tensor& xv = x.value();
  require_rank4(xv, "mul_channel");
  const int n = xv.dim(0), c = xv.dim(1);
  const std::size_t hw = static_cast<std::size_t>(xv.dim(2)) * xv.dim(3);
  if (v.value().shape() != Shape{c}) throw ShapeError("mul_channel: vector must have shape (C)");
  Tensor out = xv;
  const Tensor& vv = v.value();
  for (int i = 0; i < n; ++i)
    for (int k = 0; k < c; ++k) {
      double* p = out.data().data() + (static_cast<std::size_t>(i) * c + k) * hw;
      for (std::size_t j = 0; j < hw; ++j) p[j] *= vv[static_cast<std::size_t>(k)];
    }
  const int ix = x.id(), iv = v.id();
  return tape.record(std::move(out), {x, v},
                     [=](const Tape& t, const Tensor&, const Tensor& g, GradSink& s) {
                       const Tensor& xval = t.value(ix);
                       const Tensor& vval = t.value(iv);
                       for (int i = 0; i < n; ++i)
                         for (int k = 0; k < c; ++k) {
                           const std::size_t base = (static_cast<std::size_t>(i) * c + k) * hw;
                           if (s[0]) {
                             for (std::size_t j = 0; j < hw; ++j)
                               (*s[0])[base + j] += g[base + j] * vval[static_cast<std::size_t>(k)];
                           }
                           if (s[1]) {
                             double acc = 0.0;
                             for (std::size_t j = 0; j < hw; ++j) acc += g[base + j] * xval[base + j];
                             (*s[1])[static_cast<std::size_t>(k)] += acc;
                           }
                         }
                     });
}

Var add_channel(Var x, Var v) {
  Tape& tape = same_tape(x, v);
  const Tensor& xv = x.value();
  require_rank4(xv, "add_channel");
  const int n = xv.dim(0), c = xv.dim(1);
  const std::size_t hw = static_cast<std::size_t>(xv.dim(2)) * xv.dim(3);
  if (v.value().shape() != Shape{c}) throw ShapeError("add_channel: vector must have shape (C)");
  Tensor out = xv;
  const Tensor& vv = v.value();
  for (int i = 0; i < n; ++i)
    for (int k = 0; k < c; ++k) {
      double* p = out.data().data() + (static_cast<std::size_t>(i) * c + k) * hw;
      for (std::size_t j = 0; j < hw; ++j) p[j] += vv[static_cast<std::size_t>(k)];
    }
  return tape.record(std::move(out), {x, v},
                     [=](const Tape&, const Tensor&, const Tensor& g, GradSink& s) {
                       if (s[0]) accumulate(*s[0], g);
                       if (s[1]) {
                         for (int i = 0; i < n; ++i)
                           for (int k = 0; k < c; ++k) {
                             const std::size_t base = (static_cast<std::size_t>(i) * c + k) * hw;
                             double acc = 0.0;
                             for (std::size_t j = 0; j < hw; ++j) acc += g[base + j];
                             (*s[1])[static_cast<std::size_t>(k)] += acc;
                           }
                       }
                     });
}

Var tile_batch(Var x, int n) {
  const Tensor& xv = x.value();
  if (xv.dim(0) != 1) throw ShapeError("tile_batch expects a leading extent of 1, got " +
                                       to_string(xv.shape()));
  if (n < 1) throw ShapeError("tile_batch count must be >= 1");
  Shape shape = xv.shape();
  shape[0] = n;
  std::vector<double> data;
  data.reserve(xv.size() * static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) data.insert(data.end(), xv.values().begin(), xv.values().end());
  const std::size_t per = xv.size();
  return unary(x, Tensor(shape, std::move(data)), [n, per](const Tensor&, const Tensor& g, Tensor& gx) {
    for (int i = 0; i < n; ++i)
      for (std::size_t j = 0; j < per; ++j) gx[j] += g[i * per + j];
  });
}

Var slice_channels(Var x, int begin, int end) {
  const Tensor& xv = x.value();
  require_rank4(xv, "slice_channels");
  const int n = xv.dim(0), c = xv.dim(1);
  if (begin < 0 || end > c || begin >= end) {
    throw ShapeError("slice_channels [" + std::to_string(begin) + ", " + std::to_string(end) +
                     ") out of range for " + to_string(xv.shape()));
  }
  const std::size_t hw = static_cast<std::size_t>(xv.dim(2)) * xv.dim(3);
  const int k = end - begin;
  Tensor out({n, k, xv.dim(2), xv.dim(3)});
  for (int i = 0; i < n; ++i) {
    const double* src = xv.data().data() + (static_cast<std::size_t>(i) * c + begin) * hw;
    std::copy(src, src + k * hw, out.data().data() + static_cast<std::size_t>(i) * k * hw);
  }
  return unary(x, std::move(out), [=](const Tensor&, const Tensor& g, Tensor& gx) {
    for (int i = 0; i < n; ++i) {
      const double* src = g.data().data() + static_cast<std::size_t>(i) * k * hw;
      double* dst = gx.data().data() + (static_cast<std::size_t>(i) * c + begin) * hw;
      for (std::size_t j = 0; j < k * hw; ++j) dst[j] += src[j];
    }
  });
}

Var concat_channels(Var a, Var b) {
  Tape& tape = same_tape(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_rank4(av, "concat_channels");
  require_rank4(bv, "concat_channels");
  if (av.dim(0) != bv.dim(0) || av.dim(2) != bv.dim(2) || av.dim(3) != bv.dim(3)) {
    throw ShapeError("concat_channels: shape mismatch " + to_string(av.shape()) + " vs " +
                     to_string(bv.shape()));
  }
  const int n = av.dim(0), ca = av.dim(1), cb = bv.dim(1);
  const std::size_t hw = static_cast<std::size_t>(av.dim(2)) * av.dim(3);
  Tensor out({n, ca + cb, av.dim(2), av.dim(3)});
  for (int i = 0; i < n; ++i) {
    double* dst = out.data().data() + static_cast<std::size_t>(i) * (ca + cb) * hw;
    const double* sa = av.data().data() + static_cast<std::size_t>(i) * ca * hw;
    const double* sb = bv.data().data() + static_cast<std::size_t>(i) * cb * hw;
    std::copy(sa, sa + ca * hw, dst);
    std::copy(sb, sb + cb * hw, dst + ca * hw);
  }
  return tape.record(std::move(out), {a, b},
                     [=](const Tape&, const Tensor&, const Tensor& g, GradSink& s) {
                       for (int i = 0; i < n; ++i) {
                         const double* src = g.data().data() + static_cast<std::size_t>(i) * (ca + cb) * hw;
                         if (s[0]) {
                           double* d = s[0]->data().data() + static_cast<std::size_t>(i) * ca * hw;
                           for (std::size_t j = 0; j < ca * hw; ++j) d[j] += src[j];
                         }
                         if (s[1]) {
                           double* d = s[1]->data().data() + static_cast<std::size_t>(i) * cb * hw;
                           for (std::size_t j = 0; j < cb * hw; ++j) d[j] += src[ca * hw + j];
                         }
                       }
                     });
}

Var reshape(Var x, Shape shape) {
  Tensor out = x.value().reshaped(std::move(shape));
  return unary(x, std::move(out), [](const Tensor&, const Tensor& g, Tensor& gx) {
    accumulate(gx, g);
  });
}

Var squeeze2(Var x) {
  return unary(x, flowprior::squeeze2(x.value()), [](const Tensor&, const Tensor& g, Tensor& gx) {
    accumulate(gx, flowprior::unsqueeze2(g));
  });
}

Var unsqueeze2(Var x) {
  return unary(x, flowprior::unsqueeze2(x.value()), [](const Tensor&, const Tensor& g, Tensor& gx) {
    accumulate(gx, flowprior::squeeze2(g));
  });
}

// ---------------------------------------------------------------------------
// Small dense matrices

namespace {

int square_extent(const Tensor& m, const char* what) {
  if (m.rank() != 2 || m.dim(0) != m.dim(1)) {
    throw ShapeError(std::string(what) + " expects a square matrix, got " + to_string(m.shape()));
  }
  return m.dim(0);
}

}  // namespace

Var mat_inverse(Var m) {
  const Tensor& mv = m.value();
  const int c = square_extent(mv, "mat_inverse");
  Eigen::PartialPivLU<RowMatrix> lu(ConstMatrixMap(mv.data().data(), c, c));
  if (lu.determinant() == 0.0) throw SingularityError("mat_inverse of a singular matrix");
  Tensor out({c, c});
  MatrixMap(out.data().data(), c, c) = lu.inverse();
  return unary(m, std::move(out), [c](const Tensor& inv, const Tensor& g, Tensor& gm) {
    ConstMatrixMap iv(inv.data().data(), c, c);
    ConstMatrixMap gv(g.data().data(), c, c);
    MatrixMap(gm.data().data(), c, c).noalias() -= iv.transpose() * gv * iv.transpose();
  });
}

Var log_abs_det(Var m) {
  const Tensor& mv = m.value();
  const int c = square_extent(mv, "log_abs_det");
  Eigen::PartialPivLU<RowMatrix> lu(ConstMatrixMap(mv.data().data(), c, c));
  const RowMatrix& packed = lu.matrixLU();
  double acc = 0.0;
  for (int i = 0; i < c; ++i) {
    const double d = std::abs(packed(i, i));
    if (d == 0.0) throw DomainError("log_abs_det of a singular matrix");
    acc += std::log(d);
  }
  RowMatrix inv_t = lu.inverse().transpose();
  return unary(m, Tensor::scalar(acc), [c, inv_t](const Tensor&, const Tensor& g, Tensor& gm) {
    MatrixMap(gm.data().data(), c, c) += g[0] * inv_t;
  });
}

Var dropout(Var x, const Tensor& keep_mask, double p) {
  require_same_shape(x.value(), keep_mask, "dropout");
  if (p < 0.0 || p >= 1.0) throw ParameterError("dropout probability must be in [0, 1)");
  Tensor scaled = keep_mask;
  for (double& v : scaled.data()) v /= (1.0 - p);
  Var mask = tape_of(x).constant(std::move(scaled));
  return mul(x, mask);
}

}  // namespace ops

// ---------------------------------------------------------------------------

Tensor squeeze2(const Tensor& x) {
  require_rank4(x, "squeeze");
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (h % 2 != 0 || w % 2 != 0) {
    throw ShapeError("squeeze needs even height and width, got " + to_string(x.shape()));
  }
  const int h2 = h / 2, w2 = w / 2;
  Tensor out({n, 4 * c, h2, w2});
  for (int i = 0; i < n; ++i)
    for (int k = 0; k < c; ++k)
      for (int y = 0; y < h2; ++y)
        for (int xx = 0; xx < w2; ++xx)
          for (int dy = 0; dy < 2; ++dy)
            for (int dx = 0; dx < 2; ++dx)
              out.at(i, k * 4 + dy * 2 + dx, y, xx) = x.at(i, k, 2 * y + dy, 2 * xx + dx);
  return out;
}

Tensor unsqueeze2(const Tensor& x) {
  require_rank4(x, "unsqueeze");
  const int n = x.dim(0), c4 = x.dim(1), h2 = x.dim(2), w2 = x.dim(3);
  if (c4 % 4 != 0) {
    throw ShapeError("unsqueeze needs a channel count divisible by 4, got " + to_string(x.shape()));
  }
  const int c = c4 / 4;
  Tensor out({n, c, 2 * h2, 2 * w2});
  for (int i = 0; i < n; ++i)
    for (int k = 0; k < c; ++k)
      for (int y = 0; y < h2; ++y)
        for (int xx = 0; xx < w2; ++xx)
          for (int dy = 0; dy < 2; ++dy)
            for (int dx = 0; dx < 2; ++dx)
              out.at(i, k, 2 * y + dy, 2 * xx + dx) = x.at(i, k * 4 + dy * 2 + dx, y, xx);
  return out;
}

double grad_check(const std::function<Var(Tape&, Var)>& f, const Tensor& x, double step) {
  if (!(step > 0.0)) throw ParameterError("grad_check step must be positive");
  Tensor analytic;
  {
    Tape tape;
    Var leaf = tape.leaf(x);
    Var loss = f(tape, leaf);
    analytic = tape.backprop(loss).at(leaf);
  }
  auto eval = [&](const Tensor& point) {
    Tape tape;
    Var leaf = tape.leaf(point, false);
    return f(tape, leaf).value().item();
  };
  double worst = 0.0;
  Tensor probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    probe[i] = x[i] + step;
    const double up = eval(probe);
    probe[i] = x[i] - step;
    const double down = eval(probe);
    probe[i] = x[i];
    const double numeric = (up - down) / (2.0 * step);
    worst = std::max(worst, std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(numeric)));
  }
  return worst;
}

}  // namespace flowprior
