#include "sama/msm.hpp"

namespace sama::msm {

std::vector<double> motion_delta(const Tensor& x, const MotionWeights& w) {
  if (x.rank() != 2) throw std::invalid_argument("motion_delta: x must be [T][d]");
  const std::size_t T = x.dim(0), d = x.dim(1);
  auto need = [d](const Tensor& v, const char* what) {
    if (v.shape != Shape{d}) throw std::invalid_argument(std::string("motion_delta: ") + what + " must be [d]");
  };
  std::vector<double> delta(T);
  for (std::size_t t = 0; t < T; ++t) {
    const double* cur = x.row(t, d);
    const double* prev = t > 0 ? x.row(t - 1, d) : nullptr;
    double s = w.bias;
    switch (w.variant) {
      case MsmVariant::pointwise_conv:
        need(w.k0, "k0");
        need(w.k1, "k1");
        need(w.w, "w");
        for (std::size_t ch = 0; ch < d; ++ch) s += w.w[ch] * (w.k0[ch] * cur[ch] + (prev ? w.k1[ch] * prev[ch] : 0.0));
        break;
      case MsmVariant::linear:
        need(w.w_cur, "w_cur");
        need(w.w_prev, "w_prev");
        for (std::size_t ch = 0; ch < d; ++ch) s += w.w_cur[ch] * cur[ch] + (prev ? w.w_prev[ch] * prev[ch] : 0.0);
        break;
    }
    delta[t] = ad::softplus_value(s);
  }
  return delta;
}

Tensor msm_scan(const Tensor& x, const MotionWeights& motion, const ssm::SelectiveWeights& ssd,
                const std::optional<Tensor>& d_skip) {
  const auto delta = motion_delta(x, motion);
  const auto params = ssm::discretize_with_delta(x, ssd, delta);
  Tensor y = ssm::scan_recurrent(x, params);
  if (d_skip) {
    const std::size_t T = x.dim(0), d = x.dim(1);
    if (d_skip->shape != Shape{d}) throw std::invalid_argument("msm_scan: d_skip must be [d]");
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t i = 0; i < d; ++i) y[t * d + i] += (*d_skip)[i] * x[t * d + i];
  }
  return y;
}

MsmLayer::MsmLayer(ParamStore& store, const std::string& prefix, const ModelConfig& cfg)
    : variant_(cfg.msm_variant), mixer_(store, prefix, cfg) {
  w_delta_ = &store.get(prefix + "w_delta");
  bias_delta_ = &store.get(prefix + "bias_delta");
  const auto d = cfg.dim;
  if (variant_ == MsmVariant::pointwise_conv) {
    k0_ = &store.add(prefix + "motion_k0", {d}, InitScheme::constant_value(1.0), cfg.seed);
    k1_ = &store.add(prefix + "motion_k1", {d}, InitScheme::zeros(), cfg.seed);
  } else {
    w_prev_ = &store.add(prefix + "motion_w_prev", {d, cfg.heads}, InitScheme::zeros(), cfg.seed);
  }
}

ad::Var MsmLayer::forward(ad::Tape& tape, ad::Var x, bool no_motion, ssm::SsdMixer::Trace* trace) const {
  if (no_motion) return mixer_.forward(tape, x, std::nullopt, std::nullopt, trace);
  auto prev = ad::shift_prev(x);
  ad::Var pre;
  if (variant_ == MsmVariant::pointwise_conv) {
    auto motion = ad::add(ad::mul_last(x, tape.param(*k0_)), ad::mul_last(prev, tape.param(*k1_)));
    pre = ad::affine(motion, tape.param(*w_delta_), tape.param(*bias_delta_));
  } else {
    pre = ad::add(ad::affine(x, tape.param(*w_delta_), tape.param(*bias_delta_)),
                  ad::affine(prev, tape.param(*w_prev_)));
  }
  return mixer_.forward(tape, x, pre, std::nullopt, trace);
}

}  // namespace sama::msm
