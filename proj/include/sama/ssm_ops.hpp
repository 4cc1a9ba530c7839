#pragma once

// Differentiable SSD pieces and the mixer block shared by the spatial
// integrator, the temporal modulator and the plain baseline.
//
// Batched layout: x is [S][L][d], S independent sequences of length L. The d
// channels split into `heads` contiguous groups of p = d / heads; each head has
// its own timescale and decay, while B_t and C_t ([S][L][n]) are shared by all
// heads.

#include <optional>
#include <string>

#include "sama/ad.hpp"
#include "sama/core.hpp"

namespace sama::ssm {

/// alpha = exp(delta * a_h), a_h = -exp(a_log[h]); delta [S][L][H], a_log [H].
ad::Var zoh_alpha(ad::Var delta, ad::Var a_log);
/// ZOH gain (exp(delta a) - 1) / a per head, with the Taylor branch.
ad::Var zoh_gain(ad::Var delta, ad::Var a_log);
/// b_bar[s][l][h][k] = gain[s][l][h] * b[s][l][k].
ad::Var head_outer(ad::Var gain, ad::Var b);

/// Recurrent scan over axis 1. With `fusion` (an [L][L] matrix M) every
/// position reads the fused state H_a = h_a + sum_k M_ak h_k collected after
/// the full recurrence; without it y_l = h_l c_l.
ad::Var ssd_scan(ad::Var x, ad::Var alpha, ad::Var b_bar, ad::Var c, std::optional<ad::Var> fusion = std::nullopt);

/// Inverse softplus, used to place softplus(bias) at a target timescale.
double softplus_inverse(double y);

/// Learnable selective SSD mixer:
///   B = x W_b + b_b, C = x W_c + b_c, delta = softplus(pre_delta),
///   pre_delta = x W_delta + b_delta unless overridden,
///   y = scan(x) (+ D o x), out = y W_out + b_out.
class SsdMixer {
 public:
  SsdMixer() = default;
  SsdMixer(ParamStore& store, const std::string& prefix, const ModelConfig& cfg);

  /// The per-head pre-activation of the timescale from x alone, [S][L][H].
  ad::Var default_delta_pre(ad::Tape& tape, ad::Var x) const;

  struct Trace {
    Tensor delta;  // [S][L][H]
  };

  ad::Var forward(ad::Tape& tape, ad::Var x, std::optional<ad::Var> delta_pre = std::nullopt,
                  std::optional<ad::Var> fusion = std::nullopt, Trace* trace = nullptr) const;

  std::size_t heads() const { return heads_; }

 private:
  std::size_t dim_ = 0, state_ = 0, heads_ = 0;
  Param* w_b_ = nullptr;
  Param* bias_b_ = nullptr;
  Param* w_c_ = nullptr;
  Param* bias_c_ = nullptr;
  Param* w_delta_ = nullptr;
  Param* bias_delta_ = nullptr;
  Param* a_log_ = nullptr;
  Param* d_skip_ = nullptr;
  Param* w_out_ = nullptr;
  Param* bias_out_ = nullptr;
};

}  // namespace sama::ssm
