#include "sama/network.hpp"

namespace sama {

SamaModel::SamaModel(ModelConfig cfg) : SamaModel(cfg, JointGraph::preset(cfg.skeleton)) {}

SamaModel::SamaModel(ModelConfig cfg, JointGraph graph)
    : cfg_(std::move(cfg)), graph_(std::move(graph)), params_(std::make_unique<ParamStore>()) {
  cfg_.validate();
  if (!cfg_.joint_weights.empty() && cfg_.joint_weights.size() != graph_.n_joints)
    throw std::invalid_argument("invalid config: joint_weights must have one entry per joint");
  build();
}

void SamaModel::build() {
  auto& store = *params_;
  const auto d = cfg_.dim, seed = cfg_.seed;
  w_in_ = &store.add("input.w", {2, d}, InitScheme::uniform_fan_in(2), seed);
  b_in_ = &store.add("input.b", {d}, InitScheme::zeros(), seed);
  for (std::size_t k = 0; k < cfg_.depth; ++k) {
    const auto layer = "layer" + std::to_string(k) + ".";
    const auto sp = layer + "spatial.";
    spatial_norms_.push_back({&store.add(sp + "norm_gamma", {d}, InitScheme::constant_value(1.0), seed),
                              &store.add(sp + "norm_beta", {d}, InitScheme::zeros(), seed)});
    if (cfg_.use_ssi)
      ssi_.emplace_back(store, sp, cfg_, graph_);
    else
      spatial_plain_.emplace_back(store, sp, cfg_);
    const auto tp = layer + "temporal.";
    temporal_norms_.push_back({&store.add(tp + "norm_gamma", {d}, InitScheme::constant_value(1.0), seed),
                               &store.add(tp + "norm_beta", {d}, InitScheme::zeros(), seed)});
    if (cfg_.use_msm)
      msm_.emplace_back(store, tp, cfg_);
    else
      temporal_plain_.emplace_back(store, tp, cfg_);
  }
  for (std::size_t k = 0; k < cfg_.depth; ++k) {
    const auto layer = "attn" + std::to_string(k) + ".";
    spatial_attn_.emplace_back(store, layer + "spatial.", cfg_);
    temporal_attn_.emplace_back(store, layer + "temporal.", cfg_);
  }
  w_head_ = &store.add("head.w", {d, 3}, InitScheme::uniform_fan_in(d), seed);
  b_head_ = &store.add("head.b", {3}, InitScheme::zeros(), seed);
}

ad::Var SamaModel::forward(ad::Tape& tape, const Tensor& input, ForwardTrace* trace) const {
  if (input.rank() != 4 || input.dim(3) != 2) throw std::invalid_argument("forward: input must be [B][T][N][2]");
  const std::size_t B = input.dim(0), T = input.dim(1), N = input.dim(2), d = cfg_.dim;
  if (N != graph_.n_joints)
    throw std::invalid_argument("forward: input has " + std::to_string(N) + " joints, model expects " +
                                std::to_string(graph_.n_joints));
  if (!input.all_finite()) throw std::invalid_argument("forward: input contains non-finite values");
  if (B == 0 || T == 0) throw std::invalid_argument("forward: empty batch or sequence");

  auto p = [&tape](Param* param) { return tape.param(*param); };
  // x is kept as [B*T][N][d] (spatial layout) between stages
  auto x = ad::reshape(ad::affine(tape.constant(input), p(w_in_), p(b_in_)), {B * T, N, d});
  auto to_temporal = [&](ad::Var v) { return ad::reshape(ad::swap_axes12(ad::reshape(v, {B, T, N, d})), {B * N, T, d}); };
  auto to_spatial = [&](ad::Var v) { return ad::reshape(ad::swap_axes12(ad::reshape(v, {B, N, T, d})), {B * T, N, d}); };

  for (std::size_t k = 0; k < cfg_.depth; ++k) {
    auto h = ad::layer_norm(x, p(spatial_norms_[k].norm_g), p(spatial_norms_[k].norm_b));
    auto y = cfg_.use_ssi ? ssi_[k].forward(tape, h, cfg_.debug_zero_fusion) : spatial_plain_[k].forward(tape, h);
    x = to_temporal(ad::add(x, y));

    h = ad::layer_norm(x, p(temporal_norms_[k].norm_g), p(temporal_norms_[k].norm_b));
    ssm::SsdMixer::Trace tr;
    auto* trp = trace ? &tr : nullptr;
    y = cfg_.use_msm ? msm_[k].forward(tape, h, cfg_.debug_no_motion, trp)
                     : temporal_plain_[k].forward(tape, h, std::nullopt, std::nullopt, trp);
    if (trace) {
      tr.delta.shape = {B, N, T, cfg_.heads};
      trace->temporal_delta.push_back(std::move(tr.delta));
    }
    x = to_spatial(ad::add(x, y));
  }
  for (std::size_t k = 0; k < cfg_.depth; ++k) {
    x = spatial_attn_[k].forward(tape, x);
    x = to_spatial(temporal_attn_[k].forward(tape, to_temporal(x)));
  }
  auto out = ad::affine(x, p(w_head_), p(b_head_));
  return ad::reshape(ad::scale(out, cfg_.output_scale), {B, T, N, 3});
}

PoseSeq SamaModel::predict(const PoseSeq& pose2d, ForwardTrace* trace) const {
  if (pose2d.coords() != 2) throw std::invalid_argument("predict: expects a 2D pose sequence");
  pose2d.require_finite("predict");
  ad::Tape tape;
  tape.set_grad_enabled(false);
  Tensor input({1, pose2d.frames(), pose2d.joints(), 2}, pose2d.values());
  auto out = forward(tape, input, trace);
  return PoseSeq(pose2d.frames(), pose2d.joints(), 3, out.value().data);
}

std::vector<Tensor> SamaModel::adjacency_matrices() const {
  std::vector<Tensor> out;
  for (const auto& layer : ssi_) out.push_back(layer.adjacency().m());
  return out;
}

// ---------------------------------------------------------------------------

std::size_t count_params(const ModelConfig& cfg) {
  const std::size_t N = JointGraph::preset(cfg.skeleton).n_joints;
  const std::size_t d = cfg.dim, n = cfg.state_dim, H = cfg.heads;
  const std::size_t mixer = 2 * (d * n + n) + d * H + 2 * H + d * d + d + (cfg.skip_d ? d : 0);
  const std::size_t ssd_stage = 2 * d + mixer;
  std::size_t per_layer = 2 * ssd_stage;
  if (cfg.use_ssi) per_layer += N * N;
  if (cfg.use_msm) per_layer += cfg.msm_variant == MsmVariant::pointwise_conv ? 2 * d : d * H;
  const std::size_t attention_block = 8 * d * d + 10 * d;
  return 3 * d + (3 * d + 3) + cfg.depth * (per_layer + 2 * attention_block);
}

std::uint64_t count_macs_per_frame(const ModelConfig& cfg, std::size_t joints, std::size_t frames) {
  const std::uint64_t N = joints, T = frames, d = cfg.dim, n = cfg.state_dim, H = cfg.heads;
  const std::uint64_t tokens = T * N;
  // affines of one mixer: B, C, delta, out
  const std::uint64_t mixer_affine = tokens * (2 * d * n + d * H + d * d);
  const std::uint64_t scan = 2 * tokens * d * n;
  std::uint64_t spatial = mixer_affine + scan;
  if (cfg.use_ssi && !cfg.debug_zero_fusion) spatial += T * N * N * d * n + T * N * N * d;
  std::uint64_t temporal = mixer_affine + scan;
  if (cfg.use_msm && !cfg.debug_no_motion && cfg.msm_variant == MsmVariant::linear) temporal += tokens * d * H;
  const std::uint64_t block_affine = tokens * (4 * d * d + 4 * d * d);
  const std::uint64_t attn = block_affine + 2 * T * N * N * d + block_affine + 2 * N * T * T * d;
  const std::uint64_t total = tokens * 2 * d + cfg.depth * (spatial + temporal + attn) + tokens * d * 3;
  return total / T;
}

}  // namespace sama
