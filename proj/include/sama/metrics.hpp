#pragma once

// Pose errors (millimeters) and the training objective
//   L = L_w + lambda_m * L_m + lambda_n * L_n
// with L_w weighted MPJPE, L_m MPJVE and L_n scale-normalised MPJPE.

#include <span>
#include <vector>

#include <json.hpp>

#include "sama/ad.hpp"
#include "sama/core.hpp"

namespace sama::metrics {

/// Mean over frames of sum_j w_j ||pred_tj - gt_tj|| / sum_j w_j.
/// Empty weights mean uniform. Throws on negative or all-zero weights.
double weighted_mpjpe(const PoseSeq& pred, const PoseSeq& gt, std::span<const double> joint_weights = {});
double mpjpe(const PoseSeq& pred, const PoseSeq& gt);
/// MPJPE of first-order temporal differences. Throws std::invalid_argument for T < 2.
double mpjve(const PoseSeq& pred, const PoseSeq& gt);
/// MPJPE after scaling pred by <pred, gt> / <pred, pred> (one scale per
/// sequence). Throws std::domain_error for an all-zero pred.
double n_mpjpe(const PoseSeq& pred, const PoseSeq& gt);
/// Least-squares optimal global scale used by n_mpjpe.
double optimal_scale(const PoseSeq& pred, const PoseSeq& gt);

struct ProcrustesResult {
  double value = 0.0;
  /// Frames whose cross-covariance was rank deficient; they were aligned by
  /// translation only.
  std::size_t fallback_frames = 0;
};

/// Per-frame similarity (rotation, scale, translation) Procrustes alignment of
/// pred onto gt, reflection-corrected, then MPJPE.
ProcrustesResult p_mpjpe(const PoseSeq& pred, const PoseSeq& gt);

struct PckAuc {
  double pck = 0.0;  // percent
  double auc = 0.0;  // percent
};

/// PCK at `threshold_mm`; AUC = mean PCK over 0, 5, ..., 150 mm. A joint is
/// correct when its error is at most the threshold.
PckAuc pck_auc(const PoseSeq& pred, const PoseSeq& gt, double threshold_mm = 150.0);

struct MetricSet {
  double mpjpe = 0.0, p_mpjpe = 0.0, n_mpjpe = 0.0, mpjve = 0.0, pck = 0.0, auc = 0.0;
  std::size_t p_mpjpe_fallback_frames = 0;
};

void to_json(nlohmann::json& j, const MetricSet& m);

/// Frame-weighted average over sequences (MPJVE needs T >= 2 per sequence).
MetricSet evaluate(std::span<const PoseSeq> preds, std::span<const PoseSeq> gts);

/// Spearman rank correlation (average ranks for ties). 0 when either side is
/// constant. Throws std::invalid_argument on a size mismatch or fewer than 2 values.
double spearman(std::span<const double> a, std::span<const double> b);

/// L_w + lambda_m L_m + lambda_n L_n for precomputed components.
double combine_loss(double l_w, double l_m, double l_n, double lambda_m, double lambda_n);

/// Full objective on a single sequence.
double total_loss(const PoseSeq& pred, const PoseSeq& gt, const ModelConfig& cfg);

// ---------------------------------------------------------------------------
// Differentiable versions on batches pred [B][T][N][3] (gt is data). Each is
// the mean over the batch of the per-sequence value. At a zero residual the
// norm uses the subgradient 0.

ad::Var weighted_mpjpe_loss(ad::Var pred, const Tensor& gt, std::span<const double> joint_weights = {});
ad::Var mpjve_loss(ad::Var pred, const Tensor& gt);
ad::Var n_mpjpe_loss(ad::Var pred, const Tensor& gt);
ad::Var total_loss(ad::Var pred, const Tensor& gt, const ModelConfig& cfg);

}  // namespace sama::metrics
