#pragma once

// Motion-adaptive state modulator: a temporal SSD scan over one joint's
// trajectory whose timescale is computed from the current and previous
// frame's features (zero left padding at t = 0).

#include <string>

#include "sama/ad.hpp"
#include "sama/core.hpp"
#include "sama/ssm.hpp"
#include "sama/ssm_ops.hpp"

namespace sama::msm {

/// Single-head timescale weights.
///  pointwise_conv: kernel-2 depthwise temporal conv followed by a projection,
///    delta_t = softplus(sum_ch w_ch (k0_ch x_t,ch + k1_ch x_{t-1},ch) + bias)
///  linear: projection of the concatenated pair [x_{t-1} || x_t],
///    delta_t = softplus(w_prev . x_{t-1} + w_cur . x_t + bias)
struct MotionWeights {
  MsmVariant variant = MsmVariant::pointwise_conv;
  Tensor k0, k1;     // [d] conv taps (pointwise_conv)
  Tensor w;          // [d] projection after the conv (pointwise_conv)
  Tensor w_cur;      // [d] (linear)
  Tensor w_prev;     // [d] (linear)
  double bias = 0.0;
};

/// delta [T], strictly positive. Throws std::invalid_argument on size mismatch.
std::vector<double> motion_delta(const Tensor& x, const MotionWeights& w);

/// Temporal selective scan with the motion timescale: B_t, C_t from x_t alone
/// (ssd.w_delta / ssd.delta_bias are ignored), then scan_recurrent.
Tensor msm_scan(const Tensor& x, const MotionWeights& motion, const ssm::SelectiveWeights& ssd,
                const std::optional<Tensor>& d_skip = std::nullopt);

/// Network layer over [S][T][d] (S = batch x joints).
///
/// pointwise_conv: pre_t = (k0 o x_t + k1 o x_{t-1}) W_delta + b_delta, taps
///   initialised to k0 = 1, k1 = 0.
/// linear: pre_t = x_t W_delta + x_{t-1} W_prev + b_delta, W_prev initialised to 0.
/// Both start out equal to the plain input-dependent timescale.
class MsmLayer {
 public:
  MsmLayer() = default;
  MsmLayer(ParamStore& store, const std::string& prefix, const ModelConfig& cfg);

  /// `no_motion` drops the previous-frame path (plain SSD timescale).
  ad::Var forward(ad::Tape& tape, ad::Var x, bool no_motion = false, ssm::SsdMixer::Trace* trace = nullptr) const;

  const ssm::SsdMixer& mixer() const { return mixer_; }

 private:
  MsmVariant variant_ = MsmVariant::pointwise_conv;
  ssm::SsdMixer mixer_;
  Param* k0_ = nullptr;
  Param* k1_ = nullptr;
  Param* w_prev_ = nullptr;
  Param* w_delta_ = nullptr;
  Param* bias_delta_ = nullptr;
};

}  // namespace sama::msm
