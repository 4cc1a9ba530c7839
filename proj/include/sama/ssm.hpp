#pragma once

// Scalar-decay selective state-space kernels (Mamba2 / SSD restriction
// A_bar = alpha_t * I). A single head is processed per call: x is [T][p], the
// state h_t is [p][n] and
//
//   h_t = alpha_t * h_{t-1} + x_t (outer) b_t,   y_t = h_t * c_t.
//
// The same map has a quadratic "masked attention" form
//   y = (P o (C B^T)) x,  P_ij = alpha_{j+1} * ... * alpha_i  (i >= j)
// and a chunked form that runs the quadratic form inside blocks and carries
// the state between blocks.
//
// P's index convention: the product runs over positions j+1..i, i.e. the
// decays applied after x_j was absorbed up to and including step i.

#include <cmath>
#include <span>
#include <vector>

#include "sama/core.hpp"

namespace sama::ssm {

/// |delta * a| below which the ZOH gain uses its Taylor expansion.
inline constexpr double kZohTaylorThreshold = 1e-4;
/// Largest sequence the quadratic form will materialise.
inline constexpr std::size_t kQuadraticMaxLen = 4096;

/// Continuous decay a = -exp(a_log) (negative by construction).
inline double decay_rate(double a_log) { return -std::exp(a_log); }

/// ZOH input gain (exp(delta*a) - 1) / a; Taylor branch delta*(1 + delta*a/2)
/// when |delta*a| < kZohTaylorThreshold.
double zoh_gain(double delta, double a);
/// d gain / d delta and d gain / d a, consistent with the branch used.
std::pair<double, double> zoh_gain_partials(double delta, double a);

struct ZohResult {
  std::vector<double> alpha;  // [T]
  Tensor b_bar;               // [T][n]
};

/// alpha_t = exp(delta_t * a), b_bar_t = zoh_gain(delta_t, a) * b_raw_t with
/// a = -exp(a_log). Throws std::invalid_argument on non-positive delta.
ZohResult zoh_discretize(std::span<const double> delta, double a_log, const Tensor& b_raw);

/// Per-step selective parameters. `b` holds the discretised B_bar_t that the
/// scans consume.
struct SsdParams {
  std::vector<double> alpha;  // [T] in [0, 1]
  Tensor b;                   // [T][n]
  Tensor c;                   // [T][n]
  std::vector<double> delta;  // [T] > 0
  double a_log = 0.0;

  std::size_t length() const { return alpha.size(); }
  std::size_t state_dim() const { return b.rank() == 2 ? b.dim(1) : 0; }
};

/// Affine selection maps of a single head.
struct SelectiveWeights {
  Tensor w_b;      // [d][n]
  Tensor bias_b;   // [n]
  Tensor w_c;      // [d][n]
  Tensor bias_c;   // [n]
  Tensor w_delta;  // [d]
  double delta_bias = 0.0;
  double a_log = 0.0;
};

/// b_t = x_t W_b + bias_b, c_t = x_t W_c + bias_c,
/// delta_t = softplus(x_t . w_delta + delta_bias), then zoh_discretize.
SsdParams selective_project(const Tensor& x, const SelectiveWeights& w);

/// Builds SsdParams from an explicit timescale (used by the motion modulator).
SsdParams discretize_with_delta(const Tensor& x, const SelectiveWeights& w, std::span<const double> delta);

/// Sequential recurrence, O(T p n).
Tensor scan_recurrent(const Tensor& x, const SsdParams& p);

/// Recurrence that also returns every state h_t, as [T][p][n].
Tensor scan_recurrent_states(const Tensor& x, const SsdParams& p, Tensor* states);

/// Materialised dual form, O(T^2 (n + p)). Throws std::length_error when
/// T > kQuadraticMaxLen.
Tensor scan_quadratic(const Tensor& x, const SsdParams& p);

/// Block-decomposed form: quadratic inside blocks of `chunk` steps, state
/// carried across blocks. Throws std::invalid_argument when chunk == 0.
Tensor scan_chunked(const Tensor& x, const SsdParams& p, std::size_t chunk);

/// [T][T] lower-triangular decay mask P, via segment sums of log(alpha).
Tensor build_mask(std::span<const double> alpha);

/// Max |a - b| / max(max|b|, tiny).
double max_relative_deviation(const Tensor& a, const Tensor& b);

}  // namespace sama::ssm
