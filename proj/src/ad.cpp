#include "sama/ad.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <Eigen/Dense>

namespace sama::ad {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

void require_same_tape(Var a, Var b) {
  if (a.tape != b.tape || a.tape == nullptr) throw std::invalid_argument("ad: operands live on different tapes");
}

void require_same_shape(Var a, Var b, const char* op) {
  if (a.shape() != b.shape())
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                                shape_str(b.shape()));
}

std::size_t last_dim(const Shape& s) {
  if (s.empty()) throw std::invalid_argument("ad: operation needs rank >= 1");
  return s.back();
}

}  // namespace

const Tensor& Var::value() const { return tape->value(*this); }
const Shape& Var::shape() const { return tape->value(*this).shape; }

std::uint64_t& mac_counter() {
  thread_local std::uint64_t counter = 0;
  return counter;
}

// ---------------------------------------------------------------------------

Var Tape::constant(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, false, false, nullptr, {}});
  return Var{this, nodes_.size() - 1};
}

Var Tape::variable(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, false, grad_enabled_, nullptr, {}});
  return Var{this, nodes_.size() - 1};
}

Var Tape::param(Param& p) {
  if (!grad_enabled_) return constant(p.value);
  nodes_.push_back(Node{p.value, {}, false, true, &p, {}});
  return Var{this, nodes_.size() - 1};
}

Var Tape::record(Tensor value, std::initializer_list<Var> inputs, Vjp vjp) {
  bool needs = false;
  for (const auto& in : inputs) {
    if (in.tape != this) throw std::invalid_argument("ad: input recorded on a different tape");
    needs = needs || nodes_.at(in.id).needs_grad;
  }
  nodes_.push_back(Node{std::move(value), {}, false, needs, nullptr, needs ? std::move(vjp) : Vjp{}});
  return Var{this, nodes_.size() - 1};
}

Tensor* Tape::grad_slot(Var v) {
  auto& node = nodes_.at(v.id);
  if (!node.needs_grad) return nullptr;
  if (!node.has_grad) {
    node.grad = Tensor(node.value.shape, 0.0);
    node.has_grad = true;
  }
  return &node.grad;
}

Tensor Tape::grad(Var v) const {
  const auto& node = nodes_.at(v.id);
  if (node.has_grad) return node.grad;
  return Tensor(node.value.shape, 0.0);
}

void Tape::backward(Var output, const Tensor& cotangent) {
  if (output.tape != this) throw std::invalid_argument("backward: output belongs to another tape");
  auto& out = nodes_.at(output.id);
  if (cotangent.shape != out.value.shape)
    throw std::invalid_argument("backward: cotangent shape " + shape_str(cotangent.shape) + " does not match output " +
                                shape_str(out.value.shape));
  for (auto& n : nodes_) {
    n.has_grad = false;
    n.grad = Tensor();
  }
  if (!out.needs_grad) return;
  out.grad = cotangent;
  out.has_grad = true;
  for (std::size_t i = output.id + 1; i-- > 0;) {
    auto& node = nodes_[i];
    if (!node.has_grad) continue;
    if (node.vjp) node.vjp(*this, node.grad);
    if (node.param) {
      auto& g = node.param->grad;
      if (g.shape != node.value.shape) g = Tensor(node.value.shape, 0.0);
      for (std::size_t k = 0; k < g.size(); ++k) g[k] += node.grad[k];
    }
  }
}

void Tape::backward(Var output) {
  if (output.size() != 1) throw std::invalid_argument("backward: implicit cotangent needs a scalar output");
  backward(output, Tensor(output.shape(), 1.0));
}

// ---------------------------------------------------------------------------

double softplus_value(double x) {
  // log(1 + e^x) without overflow; for x > 30 the correction is below 1e-13
  if (x > 30.0) return x + std::exp(-x);
  return std::log1p(std::exp(x));
}

double sigmoid_value(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

Var add(Var a, Var b) {
  require_same_tape(a, b);
  require_same_shape(a, b, "add");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
  return a.tape->record(std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g) {
    for (Var v : {a, b})
      if (auto* s = t.grad_slot(v))
        for (std::size_t i = 0; i < g.size(); ++i) (*s)[i] += g[i];
  });
}

Var sub(Var a, Var b) {
  require_same_tape(a, b);
  require_same_shape(a, b, "sub");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
  return a.tape->record(std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g) {
    if (auto* s = t.grad_slot(a))
      for (std::size_t i = 0; i < g.size(); ++i) (*s)[i] += g[i];
    if (auto* s = t.grad_slot(b))
      for (std::size_t i = 0; i < g.size(); ++i) (*s)[i] -= g[i];
  });
}

Var mul(Var a, Var b) {
  require_same_tape(a, b);
  require_same_shape(a, b, "mul");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  return a.tape->record(std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g) {
    const auto& av = t.value(a);
    const auto& bv = t.value(b);
    if (auto* s = t.grad_slot(a))
      for (std::size_t i = 0; i < g.size(); ++i) (*s)[i] += g[i] * bv[i];
    if (auto* s = t.grad_slot(b))
      for (std::size_t i = 0; i < g.size(); ++i) (*s)[i] += g[i] * av[i];
  });
}

Var scale(Var a, double c) {
  Tensor out = a.value();
  for (auto& v : out.data) v *= c;
  return a.tape->record(std::move(out), {a}, [a, c](Tape& t, const Tensor& g) {
    if (auto* s = t.grad_slot(a))
      for (std::size_t i = 0; i < g.size(); ++i) (*s)[i] += c * g[i];
  });
}

Var add_last(Var x, Var v) {
  require_same_tape(x, v);
  const std::size_t d = last_dim(x.shape());
  if (v.shape() != Shape{d}) throw std::invalid_argument("add_last: vector must have shape [" + std::to_string(d) + "]");
  Tensor out = x.value();
  const auto& vv = v.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += vv[i % d];
  return x.tape->record(std::move(out), {x, v}, [x, v, d](Tape& t, const Tensor& g) {
    if (auto* s = t.grad_slot(x))
      for (std::size_t i = 0; i < g.size(); ++i) (*s)[i] += g[i];
    if (auto* s = t.grad_slot(v))
      for (std::size_t i = 0; i < g.size(); ++i) (*s)[i % d] += g[i];
  });
}

Var mul_last(Var x, Var v) {
  require_same_tape(x, v);
  const std::size_t d = last_dim(x.shape());
  if (v.shape() != Shape{d}) throw std::invalid_argument("mul_last: vector must have shape [" + std::to_string(d) + "]");
  Tensor out = x.value();
  const auto& vv = v.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= vv[i % d];
  return x.tape->record(std::move(out), {x, v}, [x, v, d](Tape& t, const Tensor& g) {
    const auto& xv = t.value(x);
    const auto& vv = t.value(v);
    if (auto* s = t.grad_slot(x))
      for (std::size_t i = 0; i < g.size(); ++i) (*s)[i] += g[i] * vv[i % d];
    if (auto* s = t.grad_slot(v))
      for (std::size_t i = 0; i < g.size(); ++i) (*s)[i % d] += g[i] * xv[i];
  });
}

Var softplus(Var x) {
  Tensor out = x.value();
  for (auto& v : out.data) v = softplus_value(v);
  return x.tape->record(std::move(out), {x}, [x](Tape& t, const Tensor& g) {
    const auto& xv = t.value(x);
    if (auto* s = t.grad_slot(x))
      for (std::size_t i = 0; i < g.size(); ++i) (*s)[i] += g[i] * sigmoid_value(xv[i]);
  });
}

Var exp(Var x) {
  Tensor out = x.value();
  for (auto& v : out.data) v = std::exp(v);
  Tensor saved = out;
  return x.tape->record(std::move(out), {x}, [x, saved = std::move(saved)](Tape& t, const Tensor& g) {
    if (auto* s = t.grad_slot(x))
      for (std::size_t i = 0; i < g.size(); ++i) (*s)[i] += g[i] * saved[i];
  });
}

Var gelu(Var x) {
  constexpr double k = 0.7978845608028654;  // sqrt(2/pi)
  constexpr double c = 0.044715;
  Tensor out = x.value();
  for (auto& v : out.data) v = 0.5 * v * (1.0 + std::tanh(k * (v + c * v * v * v)));
  return x.tape->record(std::move(out), {x}, [x](Tape& t, const Tensor& g) {
    const auto& xv = t.value(x);
    if (auto* s = t.grad_slot(x)) {
      for (std::size_t i = 0; i < g.size(); ++i) {
        const double v = xv[i];
        const double u = k * (v + c * v * v * v);
        const double th = std::tanh(u);
        const double du = k * (1.0 + 3.0 * c * v * v);
        (*s)[i] += g[i] * (0.5 * (1.0 + th) + 0.5 * v * (1.0 - th * th) * du);
      }
    }
  });
}

Var sum(Var x) {
  double acc = 0.0;
  for (double v : x.value().data) acc += v;
  return x.tape->record(Tensor::scalar(acc), {x}, [x](Tape& t, const Tensor& g) {
    if (auto* s = t.grad_slot(x))
      for (auto& v : s->data) v += g[0];
  });
}

Var mean(Var x) {
  const double n = static_cast<double>(x.size());
  return scale(sum(x), 1.0 / n);
}

Var reshape(Var x, Shape shape) {
  if (shape_numel(shape) != x.size())
    throw std::invalid_argument("reshape: " + shape_str(x.shape()) + " -> " + shape_str(shape));
  Tensor out(std::move(shape), x.value().data);
  return x.tape->record(std::move(out), {x}, [x](Tape& t, const Tensor& g) {
    if (auto* s = t.grad_slot(x))
      for (std::size_t i = 0; i < g.size(); ++i) (*s)[i] += g[i];
  });
}

Var swap_axes12(Var x) {
  const auto& sh = x.shape();
  if (sh.size() != 4) throw std::invalid_argument("swap_axes12: expects rank 4");
  const std::size_t A = sh[0], B = sh[1], C = sh[2], D = sh[3];
  const auto& in = x.value();
  Tensor out({A, C, B, D});
  for (std::size_t a = 0; a < A; ++a)
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t c = 0; c < C; ++c)
        std::copy_n(&in.data[((a * B + b) * C + c) * D], D, &out.data[((a * C + c) * B + b) * D]);
  return x.tape->record(std::move(out), {x}, [x, A, B, C, D](Tape& t, const Tensor& g) {
    if (auto* s = t.grad_slot(x))
      for (std::size_t a = 0; a < A; ++a)
        for (std::size_t b = 0; b < B; ++b)
          for (std::size_t c = 0; c < C; ++c)
            for (std::size_t e = 0; e < D; ++e) (*s)[((a * B + b) * C + c) * D + e] += g[((a * C + c) * B + b) * D + e];
  });
}

Var shift_prev(Var x) {
  const auto& sh = x.shape();
  if (sh.size() != 3) throw std::invalid_argument("shift_prev: expects [S][L][d]");
  const std::size_t S = sh[0], L = sh[1], d = sh[2];
  const auto& in = x.value();
  Tensor out(sh, 0.0);
  for (std::size_t s = 0; s < S; ++s)
    for (std::size_t l = 1; l < L; ++l) std::copy_n(&in.data[(s * L + l - 1) * d], d, &out.data[(s * L + l) * d]);
  return x.tape->record(std::move(out), {x}, [x, S, L, d](Tape& t, const Tensor& g) {
    if (auto* sl = t.grad_slot(x))
      for (std::size_t s = 0; s < S; ++s)
        for (std::size_t l = 1; l < L; ++l)
          for (std::size_t c = 0; c < d; ++c) (*sl)[(s * L + l - 1) * d + c] += g[(s * L + l) * d + c];
  });
}

// ---------------------------------------------------------------------------

Var affine(Var x, Var w, std::optional<Var> b) {
  require_same_tape(x, w);
  const auto& ws = w.shape();
  if (ws.size() != 2) throw std::invalid_argument("affine: weight must be [in][out]");
  const std::size_t in = ws[0], out_dim = ws[1];
  if (last_dim(x.shape()) != in)
    throw std::invalid_argument("affine: input width " + std::to_string(last_dim(x.shape())) + " != " +
                                std::to_string(in));
  if (b && b->shape() != Shape{out_dim}) throw std::invalid_argument("affine: bias shape mismatch");
  const std::size_t rows = x.size() / in;
  Shape out_shape = x.shape();
  out_shape.back() = out_dim;
  Tensor out(out_shape);
  MapMat Y(out.data.data(), rows, out_dim);
  CMapMat X(x.value().data.data(), rows, in);
  CMapMat W(w.value().data.data(), in, out_dim);
  Y.noalias() = X * W;
  if (b) Y.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(b->value().data.data(), out_dim);
  mac_counter() += rows * in * out_dim;

  auto vjp = [x, w, b, rows, in, out_dim](Tape& t, const Tensor& g) {
    CMapMat G(g.data.data(), rows, out_dim);
    if (auto* s = t.grad_slot(x)) {
      MapMat GX(s->data.data(), rows, in);
      GX.noalias() += G * CMapMat(t.value(w).data.data(), in, out_dim).transpose();
    }
    if (auto* s = t.grad_slot(w)) {
      MapMat GW(s->data.data(), in, out_dim);
      GW.noalias() += CMapMat(t.value(x).data.data(), rows, in).transpose() * G;
    }
    if (b) {
      if (auto* s = t.grad_slot(*b)) Eigen::Map<Eigen::RowVectorXd>(s->data.data(), out_dim) += G.colwise().sum();
    }
  };
  if (b) return x.tape->record(std::move(out), {x, w, *b}, std::move(vjp));
  return x.tape->record(std::move(out), {x, w}, std::move(vjp));
}

Var mix_rows(Var x, Var m) {
  require_same_tape(x, m);
  const auto& xs = x.shape();
  if (xs.size() != 3) throw std::invalid_argument("mix_rows: x must be [S][L][d]");
  const std::size_t S = xs[0], L = xs[1], d = xs[2];
  if (m.shape() != Shape{L, L}) throw std::invalid_argument("mix_rows: m must be [L][L]");
  Tensor out(xs);
  CMapMat M(m.value().data.data(), L, L);
  for (std::size_t s = 0; s < S; ++s) {
    MapMat(out.data.data() + s * L * d, L, d).noalias() = M * CMapMat(x.value().data.data() + s * L * d, L, d);
  }
  mac_counter() += S * L * L * d;
  return x.tape->record(std::move(out), {x, m}, [x, m, S, L, d](Tape& t, const Tensor& g) {
    CMapMat M(t.value(m).data.data(), L, L);
    auto* gx = t.grad_slot(x);
    auto* gm = t.grad_slot(m);
    for (std::size_t s = 0; s < S; ++s) {
      CMapMat G(g.data.data() + s * L * d, L, d);
      if (gx) MapMat(gx->data.data() + s * L * d, L, d).noalias() += M.transpose() * G;
      if (gm)
        MapMat(gm->data.data(), L, L).noalias() += G * CMapMat(t.value(x).data.data() + s * L * d, L, d).transpose();
    }
  });
}

Var softmax_last(Var x) {
  const std::size_t d = last_dim(x.shape());
  const std::size_t rows = x.size() / d;
  Tensor out = x.value();
  for (std::size_t r = 0; r < rows; ++r) {
    double* p = out.row(r, d);
    const double mx = *std::max_element(p, p + d);
    double z = 0.0;
    for (std::size_t i = 0; i < d; ++i) z += (p[i] = std::exp(p[i] - mx));
    for (std::size_t i = 0; i < d; ++i) p[i] /= z;
  }
  Tensor saved = out;
  return x.tape->record(std::move(out), {x}, [x, saved = std::move(saved), rows, d](Tape& t, const Tensor& g) {
    if (auto* s = t.grad_slot(x)) {
      for (std::size_t r = 0; r < rows; ++r) {
        const double* p = saved.row(r, d);
        const double* gr = g.row(r, d);
        double dot = 0.0;
        for (std::size_t i = 0; i < d; ++i) dot += p[i] * gr[i];
        double* sr = s->row(r, d);
        for (std::size_t i = 0; i < d; ++i) sr[i] += p[i] * (gr[i] - dot);
      }
    }
  });
}

Var layer_norm(Var x, Var gamma, Var beta, double eps) {
  require_same_tape(x, gamma);
  const std::size_t d = last_dim(x.shape());
  if (gamma.shape() != Shape{d} || beta.shape() != Shape{d})
    throw std::invalid_argument("layer_norm: gamma/beta must be [d]");
  const std::size_t rows = x.size() / d;
  Tensor xhat(x.shape());
  std::vector<double> inv_std(rows);
  const auto& xv = x.value();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* p = xv.row(r, d);
    double mu = 0.0;
    for (std::size_t i = 0; i < d; ++i) mu += p[i];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t i = 0; i < d; ++i) var += (p[i] - mu) * (p[i] - mu);
    var /= static_cast<double>(d);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    double* h = xhat.row(r, d);
    for (std::size_t i = 0; i < d; ++i) h[i] = (p[i] - mu) * inv_std[r];
  }
  Tensor out = xhat;
  const auto& gv = gamma.value();
  const auto& bv = beta.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = out[i] * gv[i % d] + bv[i % d];
  return x.tape->record(
      std::move(out), {x, gamma, beta},
      [x, gamma, beta, xhat = std::move(xhat), inv_std = std::move(inv_std), rows, d](Tape& t, const Tensor& g) {
        const auto& gv = t.value(gamma);
        if (auto* s = t.grad_slot(gamma))
          for (std::size_t i = 0; i < g.size(); ++i) (*s)[i % d] += g[i] * xhat[i];
        if (auto* s = t.grad_slot(beta))
          for (std::size_t i = 0; i < g.size(); ++i) (*s)[i % d] += g[i];
        if (auto* s = t.grad_slot(x)) {
          std::vector<double> gh(d);
          for (std::size_t r = 0; r < rows; ++r) {
            const double* gr = g.row(r, d);
            const double* h = xhat.row(r, d);
            double m1 = 0.0, m2 = 0.0;
            for (std::size_t i = 0; i < d; ++i) {
              gh[i] = gr[i] * gv[i];
              m1 += gh[i];
              m2 += gh[i] * h[i];
            }
            m1 /= static_cast<double>(d);
            m2 /= static_cast<double>(d);
            double* sr = s->row(r, d);
            for (std::size_t i = 0; i < d; ++i) sr[i] += inv_std[r] * (gh[i] - m1 - h[i] * m2);
          }
        }
      });
}

}  // namespace sama::ad
