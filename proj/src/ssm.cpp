#include "sama/ssm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <Eigen/Dense>

#include "sama/ad.hpp"

namespace sama::ssm {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using CMapMat = Eigen::Map<const RowMat>;
using MapMat = Eigen::Map<RowMat>;

void check_shapes(const Tensor& x, const SsdParams& p) {
  const std::size_t T = p.length();
  if (x.rank() != 2 || x.dim(0) != T) throw std::invalid_argument("scan: x must be [T][p] with T = alpha.size()");
  if (p.b.rank() != 2 || p.b.dim(0) != T || p.c.shape != p.b.shape)
    throw std::invalid_argument("scan: b and c must both be [T][n]");
}

}  // namespace

double zoh_gain(double delta, double a) {
  const double z = delta * a;
  if (std::abs(z) < kZohTaylorThreshold) return delta * (1.0 + 0.5 * z);
  return std::expm1(z) / a;
}

std::pair<double, double> zoh_gain_partials(double delta, double a) {
  const double z = delta * a;
  if (std::abs(z) < kZohTaylorThreshold) return {1.0 + z, 0.5 * delta * delta};
  const double e = std::exp(z);
  return {e, (z * e - std::expm1(z)) / (a * a)};
}

ZohResult zoh_discretize(std::span<const double> delta, double a_log, const Tensor& b_raw) {
  const std::size_t T = delta.size();
  if (b_raw.rank() != 2 || b_raw.dim(0) != T) throw std::invalid_argument("zoh_discretize: b_raw must be [T][n]");
  const double a = decay_rate(a_log);
  const std::size_t n = b_raw.dim(1);
  ZohResult r{std::vector<double>(T), b_raw};
  for (std::size_t t = 0; t < T; ++t) {
    if (!(delta[t] > 0.0)) throw std::invalid_argument("zoh_discretize: delta must be positive");
    r.alpha[t] = std::exp(delta[t] * a);
    const double g = zoh_gain(delta[t], a);
    for (std::size_t k = 0; k < n; ++k) r.b_bar[t * n + k] *= g;
  }
  return r;
}

SsdParams discretize_with_delta(const Tensor& x, const SelectiveWeights& w, std::span<const double> delta) {
  if (x.rank() != 2) throw std::invalid_argument("selective_project: x must be [T][d]");
  const std::size_t T = x.dim(0), d = x.dim(1);
  if (w.w_b.shape.size() != 2 || w.w_b.dim(0) != d || w.w_c.shape != w.w_b.shape)
    throw std::invalid_argument("selective_project: W_b / W_c must be [d][n]");
  const std::size_t n = w.w_b.dim(1);
  CMapMat X(x.data.data(), T, d);
  Tensor b({T, n}), c({T, n});
  MapMat(b.data.data(), T, n) = X * CMapMat(w.w_b.data.data(), d, n);
  MapMat(c.data.data(), T, n) = X * CMapMat(w.w_c.data.data(), d, n);
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t k = 0; k < n; ++k) {
      b[t * n + k] += w.bias_b[k];
      c[t * n + k] += w.bias_c[k];
    }
  auto z = zoh_discretize(delta, w.a_log, b);
  return SsdParams{std::move(z.alpha), std::move(z.b_bar), std::move(c), {delta.begin(), delta.end()}, w.a_log};
}

SsdParams selective_project(const Tensor& x, const SelectiveWeights& w) {
  if (x.rank() != 2) throw std::invalid_argument("selective_project: x must be [T][d]");
  const std::size_t T = x.dim(0), d = x.dim(1);
  if (w.w_delta.shape != Shape{d}) throw std::invalid_argument("selective_project: w_delta must be [d]");
  std::vector<double> delta(T);
  for (std::size_t t = 0; t < T; ++t) {
    double s = w.delta_bias;
    for (std::size_t i = 0; i < d; ++i) s += x[t * d + i] * w.w_delta[i];
    delta[t] = ad::softplus_value(s);
  }
  return discretize_with_delta(x, w, delta);
}

Tensor scan_recurrent_states(const Tensor& x, const SsdParams& p, Tensor* states) {
  check_shapes(x, p);
  const std::size_t T = x.dim(0), P = x.dim(1), n = p.state_dim();
  Tensor y({T, P});
  std::vector<double> h(P * n, 0.0);
  if (states) *states = Tensor({T, P, n});
  for (std::size_t t = 0; t < T; ++t) {
    const double a = p.alpha[t];
    const double* xt = x.row(t, P);
    const double* bt = p.b.row(t, n);
    const double* ct = p.c.row(t, n);
    double* yt = y.row(t, P);
    for (std::size_t i = 0; i < P; ++i) {
      double* hi = &h[i * n];
      double acc = 0.0;
      for (std::size_t k = 0; k < n; ++k) {
        hi[k] = a * hi[k] + xt[i] * bt[k];
        acc += hi[k] * ct[k];
      }
      yt[i] = acc;
    }
    if (states) std::copy(h.begin(), h.end(), states->data.begin() + t * P * n);
  }
  return y;
}

Tensor scan_recurrent(const Tensor& x, const SsdParams& p) { return scan_recurrent_states(x, p, nullptr); }

Tensor build_mask(std::span<const double> alpha) {
  const std::size_t T = alpha.size();
  Tensor mask({T, T}, 0.0);
  std::vector<double> log_a(T);
  for (std::size_t t = 0; t < T; ++t) {
    if (!(alpha[t] >= 0.0 && alpha[t] <= 1.0)) throw std::invalid_argument("build_mask: alpha must lie in [0, 1]");
    log_a[t] = alpha[t] > 0.0 ? std::log(alpha[t]) : -std::numeric_limits<double>::infinity();
  }
  // segment sums accumulated directly (no difference of prefix sums), so a
  // zero alpha yields exact zeros below it instead of inf - inf
  for (std::size_t j = 0; j < T; ++j) {
    double seg = 0.0;
    mask[j * T + j] = 1.0;
    for (std::size_t i = j + 1; i < T; ++i) {
      seg += log_a[i];
      mask[i * T + j] = std::exp(seg);
    }
  }
  return mask;
}

Tensor scan_quadratic(const Tensor& x, const SsdParams& p) {
  check_shapes(x, p);
  const std::size_t T = x.dim(0), P = x.dim(1), n = p.state_dim();
  if (T > kQuadraticMaxLen)
    throw std::length_error("scan_quadratic: T = " + std::to_string(T) + " exceeds " + std::to_string(kQuadraticMaxLen));
  Tensor mask = build_mask(p.alpha);
  MapMat G(mask.data.data(), T, T);
  RowMat CB = CMapMat(p.c.data.data(), T, n) * CMapMat(p.b.data.data(), T, n).transpose();
  G.array() *= CB.array();
  Tensor y({T, P});
  MapMat(y.data.data(), T, P).noalias() = G.triangularView<Eigen::Lower>() * CMapMat(x.data.data(), T, P);
  return y;
}

Tensor scan_chunked(const Tensor& x, const SsdParams& p, std::size_t chunk) {
  if (chunk == 0) throw std::invalid_argument("scan_chunked: chunk must be positive");
  check_shapes(x, p);
  const std::size_t T = x.dim(0), P = x.dim(1), n = p.state_dim();
  Tensor y({T, P});
  RowMat state = RowMat::Zero(P, n);  // h at the end of the previous block
  std::vector<double> head_decay, tail_decay;
  for (std::size_t start = 0; start < T; start += chunk) {
    const std::size_t L = std::min(chunk, T - start);
    std::span<const double> a(p.alpha.data() + start, L);
    CMapMat Xb(x.data.data() + start * P, L, P);
    CMapMat Bb(p.b.data.data() + start * n, L, n);
    CMapMat Cb(p.c.data.data() + start * n, L, n);
    MapMat Yb(y.data.data() + start * P, L, P);

    // intra-block: quadratic form on the block
    Tensor mask = build_mask(a);
    MapMat G(mask.data.data(), L, L);
    G.array() *= (Cb * Bb.transpose()).array();
    Yb.noalias() = G.triangularView<Eigen::Lower>() * Xb;

    // decay from the block start through step i, and from step j+1 through the block end
    head_decay.assign(L, 1.0);
    tail_decay.assign(L, 1.0);
    double run = 1.0;
    for (std::size_t i = 0; i < L; ++i) head_decay[i] = (run *= a[i]);
    run = 1.0;
    for (std::size_t j = L; j-- > 0;) {
      tail_decay[j] = run;
      run *= a[j];
    }
    const double block_decay = run;

    // inter-block: contribution of the carried state
    RowMat carried = Cb * state.transpose();  // [L][P]
    for (std::size_t i = 0; i < L; ++i) Yb.row(i) += head_decay[i] * carried.row(i);

    // state at the block end
    RowMat weighted = Xb;
    for (std::size_t j = 0; j < L; ++j) weighted.row(j) *= tail_decay[j];
    state = block_decay * state + weighted.transpose() * Bb;
  }
  return y;
}

double max_relative_deviation(const Tensor& a, const Tensor& b) {
  if (a.shape != b.shape) throw std::invalid_argument("max_relative_deviation: shape mismatch");
  double diff = 0.0, scale = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff = std::max(diff, std::abs(a[i] - b[i]));
    scale = std::max(scale, std::abs(b[i]));
  }
  return diff / std::max(scale, std::numeric_limits<double>::min());
}

}  // namespace sama::ssm
