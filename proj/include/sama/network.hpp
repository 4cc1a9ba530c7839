#pragma once

// Full pose-lifting network:
//   input projection 2 -> d (no positional embeddings)
//   K x [ spatial SSD over joints (per frame) -> temporal SSD over frames (per joint) ]
//   K x [ spatial attention block -> temporal attention block ]
//   head d -> 3, scaled by output_scale to millimeters
// Every SSD sub-block is pre-norm residual: x = x + Block(norm(x)).

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "sama/ad.hpp"
#include "sama/attention.hpp"
#include "sama/core.hpp"
#include "sama/msm.hpp"
#include "sama/ssi.hpp"
#include "sama/ssm_ops.hpp"

namespace sama {

struct ForwardTrace {
  /// Per temporal layer, softplus timescales as [B][N][T][H].
  std::vector<Tensor> temporal_delta;
};

class SamaModel {
 public:
  explicit SamaModel(ModelConfig cfg);
  SamaModel(ModelConfig cfg, JointGraph graph);

  SamaModel(const SamaModel&) = delete;
  SamaModel& operator=(const SamaModel&) = delete;
  SamaModel(SamaModel&&) = default;
  SamaModel& operator=(SamaModel&&) = default;

  const ModelConfig& config() const { return cfg_; }
  ModelConfig& mutable_config() { return cfg_; }
  const JointGraph& graph() const { return graph_; }
  ParamStore& params() { return *params_; }
  const ParamStore& params() const { return *params_; }

  /// input [B][T][N][2] -> [B][T][N][3] millimeters. Throws on a joint-count
  /// mismatch or non-finite input.
  ad::Var forward(ad::Tape& tape, const Tensor& input, ForwardTrace* trace = nullptr) const;

  /// Inference on one sequence with gradients disabled.
  PoseSeq predict(const PoseSeq& pose2d, ForwardTrace* trace = nullptr) const;

  /// Current adjacency m of every SSI layer (empty without SSI).
  std::vector<Tensor> adjacency_matrices() const;

 private:
  void build();

  ModelConfig cfg_;
  JointGraph graph_;
  std::unique_ptr<ParamStore> params_;

  Param *w_in_ = nullptr, *b_in_ = nullptr, *w_head_ = nullptr, *b_head_ = nullptr;
  struct SsdStage {
    Param *norm_g = nullptr, *norm_b = nullptr;
  };
  std::vector<SsdStage> spatial_norms_, temporal_norms_;
  std::vector<ssi::SsiLayer> ssi_;
  std::vector<ssm::SsdMixer> spatial_plain_;
  std::vector<msm::MsmLayer> msm_;
  std::vector<ssm::SsdMixer> temporal_plain_;
  std::vector<attn::AttentionBlock> spatial_attn_, temporal_attn_;
};

/// Exact number of scalar parameters for a config (skeleton from cfg.skeleton):
///   input 3d, head 3d + 3,
///   per layer: 2 SSD stages of (norm 2d + mixer) with
///     mixer = 2(dn + n) + dH + 2H + d^2 + d (+ d with skip_d),
///     + N^2 adjacency with SSI, + 2d (pointwise_conv) or dH (linear) with MSM,
///   and 2 attention blocks of 8d^2 + 10d (no key bias: softmax is invariant to it).
std::size_t count_params(const ModelConfig& cfg);

/// Multiply-accumulates of one forward pass divided by the frame count, for a
/// clip of `frames` frames. Counts matrix products, the scans (2 T N d n per
/// SSD stage, plus T N^2 d n for SSI state fusion and T N^2 d for SSI feature
/// fusion) and attention (2 L^2 d per sequence); elementwise work is ignored.
std::uint64_t count_macs_per_frame(const ModelConfig& cfg, std::size_t joints, std::size_t frames);

// Checkpoint container:
//   "SAMA1" | u64 json_len | config json | u64 count |
//   count x (u32 name_len | name | u32 rank | u64 dims[rank] | f64 values[])
// All integers and reals little-endian.
inline constexpr char kCheckpointMagic[] = "SAMA1";

void save_checkpoint(const SamaModel& model, const std::filesystem::path& path);
SamaModel load_checkpoint(const std::filesystem::path& path);

}  // namespace sama
