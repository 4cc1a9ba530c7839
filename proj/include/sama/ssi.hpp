#pragma once

// Structure-aware state integrator: a spatial SSD scan over the joints of one
// frame whose input features and final hidden states are both mixed through a
// learnable, row-stochastic joint adjacency.

#include <optional>
#include <string>

#include "sama/ad.hpp"
#include "sama/core.hpp"
#include "sama/ssm.hpp"
#include "sama/ssm_ops.hpp"

namespace sama::ssi {

/// D^-1/2 (M_o + I) D^-1/2 with D the degree in M_o + I; throws on a zero degree.
Tensor normalized_adjacency(const JointGraph& graph);

/// Row-wise softmax of an [N][N] matrix.
Tensor row_softmax(const Tensor& pre);

/// Learnable adjacency: pre_softmax is the trained Param, m = row_softmax(pre).
struct LearnableAdjacency {
  Param* pre_softmax = nullptr;

  Tensor m() const { return row_softmax(pre_softmax->value); }
  ad::Var m(ad::Tape& tape) const { return ad::softmax_last(tape.param(*pre_softmax)); }
};

/// Registers `name` in the store, initialised to normalized_adjacency(graph).
LearnableAdjacency build_adjacency(const JointGraph& graph, ParamStore& store, const std::string& name);

/// x'_a = x_a + sum_k m_ak x_k for x [N][d].
Tensor fuse_features(const Tensor& x, const Tensor& m);

/// Single-head reference pipeline on one frame, x [N][d]:
///   x' = fuse_features(x, m); selective parameters from x';
///   h_a = alpha_a h_{a-1} + x'_a (outer) b_bar_a over the canonical joint order;
///   H_a = h_a + sum_k m_ak h_k over the final states; y_a = H_a c_a (+ d o x'_a).
/// `zero_fusion` skips both mixing steps (reduces to scan_recurrent).
Tensor ssi_scan(const Tensor& x, const Tensor& m, const ssm::SelectiveWeights& w,
                const std::optional<Tensor>& d_skip = std::nullopt, bool zero_fusion = false);

/// Network layer: adjacency + SSD mixer applied to [S][N][d] (S = frames).
class SsiLayer {
 public:
  SsiLayer() = default;
  SsiLayer(ParamStore& store, const std::string& prefix, const ModelConfig& cfg, const JointGraph& graph);

  ad::Var forward(ad::Tape& tape, ad::Var x, bool zero_fusion = false) const;

  const LearnableAdjacency& adjacency() const { return adjacency_; }
  const ssm::SsdMixer& mixer() const { return mixer_; }

 private:
  LearnableAdjacency adjacency_;
  ssm::SsdMixer mixer_;
};

}  // namespace sama::ssi
