#pragma once

// Optimiser, training loop, held-out evaluation and the linear baseline.

#include <functional>
#include <vector>

#include "sama/data.hpp"
#include "sama/metrics.hpp"
#include "sama/network.hpp"

namespace sama::train {

/// Adam with decoupled weight decay:
///   m = b1 m + (1-b1) g,  v = b2 v + (1-b2) g^2,
///   p -= lr * (m_hat / (sqrt(v_hat) + eps) + wd * p)
class AdamW {
 public:
  explicit AdamW(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(ParamStore& params, double lr, double weight_decay);
  std::size_t steps() const { return t_; }

 private:
  double beta1_, beta2_, eps_;
  std::size_t t_ = 0;
  std::vector<Tensor> m_, v_;
};

/// Every fourth sequence (index % 4 == 3) is held out; with fewer than two
/// sequences the held-out set is empty.
std::pair<data::Dataset, data::Dataset> split_dataset(const data::Dataset& all);

struct EpochLog {
  std::size_t epoch = 0;      // 1-based
  double train_loss = 0.0;    // mean minibatch objective during the epoch
  double eval_mpjpe = 0.0;    // held-out MPJPE after the epoch (0 without a held-out set)
  double learning_rate = 0.0; // rate used during the epoch
};

struct TrainResult {
  std::vector<EpochLog> log;
  /// Objective over the fixed training clips before the first and after the
  /// last update (same clips, no sampling noise).
  double initial_train_loss = 0.0;
  double final_train_loss = 0.0;
};

using EpochCallback = std::function<void(const EpochLog&, const SamaModel&)>;

/// Trains for cfg.epochs with the clip length and batch size from the config.
/// Deterministic per cfg.seed. Throws std::invalid_argument when a sequence's
/// joint count does not match the model skeleton.
TrainResult fit(SamaModel& model, const data::Dataset& train_set, const data::Dataset& heldout,
                const EpochCallback& on_epoch = {});

/// Mean objective over the strided clips of `dataset`.
double dataset_loss(const SamaModel& model, const data::Dataset& dataset);

/// Metrics over the strided clips of `dataset` (clip_len from the config),
/// evaluated in parallel over up to cfg.threads workers.
metrics::MetricSet evaluate(const SamaModel& model, const data::Dataset& dataset);

/// Same clips with the ground truth itself as prediction.
metrics::MetricSet evaluate_oracle(const data::Dataset& dataset, std::size_t clip_len);

/// Per-joint affine least squares (u, v, 1) -> (X, Y, Z), root-relative
/// targets, fit over every training frame.
class LinearBaseline {
 public:
  static LinearBaseline fit(const data::Dataset& train_set);
  PoseSeq predict(const PoseSeq& pose2d) const;
  /// Same strided clips as evaluate().
  metrics::MetricSet evaluate(const data::Dataset& dataset, std::size_t clip_len) const;

 private:
  std::vector<std::array<double, 9>> w_;  // per joint, rows u, v, 1
};

struct DeltaStats {
  std::vector<double> mean_delta;      // per joint, over temporal layers, heads, frames, sequences
  std::vector<double> mean_motion_2d;  // per joint mean frame-to-frame 2D displacement
  double spearman = 0.0;
};

/// Timescales of the temporal scans on the strided clips of `dataset`.
DeltaStats delta_statistics(const SamaModel& model, const data::Dataset& dataset);

}  // namespace sama::train
