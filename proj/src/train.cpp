#include "sama/train.hpp"

#include <algorithm>
#include <cmath>
#include <thread>

#include <Eigen/Dense>

namespace sama::train {

namespace {

data::BatcherOptions clip_options(const ModelConfig& cfg) {
  return {cfg.batch_size, cfg.clip_len, cfg.clip_len};
}

void check_joints(const SamaModel& model, const data::Dataset& ds) {
  for (const auto& seq : ds)
    if (seq.pose2d.joints() != model.graph().n_joints)
      throw std::invalid_argument("sequence '" + seq.id + "' has " + std::to_string(seq.pose2d.joints()) +
                                  " joints, model skeleton '" + model.graph().name + "' has " +
                                  std::to_string(model.graph().n_joints));
}

// Runs fn(i) for i in [0, n) on up to `threads` workers, static interleaved
// assignment so results written by index are independent of timing.
template <typename Fn>
void parallel_for(std::size_t n, std::size_t threads, Fn fn) {
  threads = std::clamp<std::size_t>(threads, 1, std::max<std::size_t>(n, 1));
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(threads);
  for (std::size_t w = 0; w < threads; ++w)
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < n; i += threads) fn(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

std::vector<PoseSeq> split_batch(const Tensor& t) {
  const std::size_t B = t.dim(0), T = t.dim(1), N = t.dim(2), k = t.dim(3);
  std::vector<PoseSeq> out;
  for (std::size_t b = 0; b < B; ++b)
    out.emplace_back(T, N, k, std::vector<double>(t.data.begin() + b * T * N * k, t.data.begin() + (b + 1) * T * N * k));
  return out;
}

Tensor predict_batch(const SamaModel& model, const Tensor& input, ForwardTrace* trace = nullptr) {
  ad::Tape tape;
  tape.set_grad_enabled(false);
  return model.forward(tape, input, trace).value();
}

}  // namespace

void AdamW::step(ParamStore& params, double lr, double weight_decay) {
  auto& all = params.all();
  if (m_.empty())
    for (const auto& p : all) {
      m_.emplace_back(p.value.shape, 0.0);
      v_.emplace_back(p.value.shape, 0.0);
    }
  if (m_.size() != all.size()) throw std::logic_error("AdamW: parameter set changed between steps");
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  std::size_t i = 0;
  for (auto& p : all) {
    auto& m = m_[i].data;
    auto& v = v_[i].data;
    ++i;
    for (std::size_t k = 0; k < p.value.size(); ++k) {
      const double g = p.grad.data[k];
      m[k] = beta1_ * m[k] + (1.0 - beta1_) * g;
      v[k] = beta2_ * v[k] + (1.0 - beta2_) * g * g;
      const double update = (m[k] / c1) / (std::sqrt(v[k] / c2) + eps_);
      p.value.data[k] -= lr * (update + weight_decay * p.value.data[k]);
    }
  }
}

std::pair<data::Dataset, data::Dataset> split_dataset(const data::Dataset& all) {
  data::Dataset train_set, heldout;
  for (std::size_t i = 0; i < all.size(); ++i) {
    if (all.size() >= 2 && i % 4 == 3)
      heldout.push_back(all[i]);
    else
      train_set.push_back(all[i]);
  }
  return {std::move(train_set), std::move(heldout)};
}

double dataset_loss(const SamaModel& model, const data::Dataset& dataset) {
  check_joints(model, dataset);
  const auto& cfg = model.config();
  const auto batches = data::Batcher(dataset, clip_options(cfg)).eval_batches();
  std::vector<double> losses(batches.size()), weights(batches.size());
  parallel_for(batches.size(), cfg.threads, [&](std::size_t i) {
    ad::Tape tape;
    tape.set_grad_enabled(false);
    auto pred = model.forward(tape, batches[i].input);
    losses[i] = metrics::total_loss(pred, batches[i].target, cfg).value()[0];
    weights[i] = static_cast<double>(batches[i].sequence.size());
  });
  double total = 0.0, count = 0.0;
  for (std::size_t i = 0; i < losses.size(); ++i) {
    total += losses[i] * weights[i];
    count += weights[i];
  }
  return count > 0.0 ? total / count : 0.0;
}

metrics::MetricSet evaluate(const SamaModel& model, const data::Dataset& dataset) {
  check_joints(model, dataset);
  const auto& cfg = model.config();
  const auto batches = data::Batcher(dataset, clip_options(cfg)).eval_batches();
  std::vector<std::vector<PoseSeq>> preds(batches.size());
  parallel_for(batches.size(), cfg.threads, [&](std::size_t i) { preds[i] = split_batch(predict_batch(model, batches[i].input)); });
  std::vector<PoseSeq> all_pred, all_gt;
  for (std::size_t i = 0; i < batches.size(); ++i) {
    for (auto& p : preds[i]) all_pred.push_back(std::move(p));
    for (auto& g : split_batch(batches[i].target)) all_gt.push_back(std::move(g));
  }
  return metrics::evaluate(all_pred, all_gt);
}

metrics::MetricSet evaluate_oracle(const data::Dataset& dataset, std::size_t clip_len) {
  std::vector<PoseSeq> gts;
  for (const auto& b : data::Batcher(dataset, {1, clip_len, clip_len}).eval_batches())
    for (auto& g : split_batch(b.target)) gts.push_back(std::move(g));
  return metrics::evaluate(gts, gts);
}

TrainResult fit(SamaModel& model, const data::Dataset& train_set, const data::Dataset& heldout,
                const EpochCallback& on_epoch) {
  const auto& cfg = model.config();
  cfg.validate();
  check_joints(model, train_set);
  check_joints(model, heldout);
  if (train_set.empty()) throw std::invalid_argument("fit: empty training set");

  data::Batcher batcher(train_set, clip_options(cfg));
  Rng rng = seeded_rng(derive_seed(cfg.seed, "train.batches"));
  AdamW opt;
  TrainResult result;
  result.initial_train_loss = dataset_loss(model, train_set);

  double lr = cfg.learning_rate;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    double loss_sum = 0.0;
    std::size_t items = 0;
    for (const auto& batch : batcher.train_batches(rng)) {
      model.params().zero_grad();
      ad::Tape tape;
      auto loss = metrics::total_loss(model.forward(tape, batch.input), batch.target, cfg);
      tape.backward(loss);
      const double value = loss.value()[0];
      if (!std::isfinite(value)) throw std::runtime_error("fit: non-finite loss at epoch " + std::to_string(epoch));
      loss_sum += value * static_cast<double>(batch.sequence.size());
      items += batch.sequence.size();
      opt.step(model.params(), lr, cfg.weight_decay);
    }
    EpochLog row{epoch, loss_sum / static_cast<double>(items), heldout.empty() ? 0.0 : evaluate(model, heldout).mpjpe, lr};
    result.log.push_back(row);
    if (on_epoch) on_epoch(row, model);
    lr *= cfg.lr_decay;
  }
  result.final_train_loss = dataset_loss(model, train_set);
  return result;
}

// ---------------------------------------------------------------------------

LinearBaseline LinearBaseline::fit(const data::Dataset& train_set) {
  if (train_set.empty()) throw std::invalid_argument("LinearBaseline: empty training set");
  const std::size_t N = train_set.front().pose2d.joints();
  LinearBaseline out;
  out.w_.resize(N);
  for (std::size_t j = 0; j < N; ++j) {
    Eigen::Matrix3d ata = Eigen::Matrix3d::Zero();
    Eigen::Matrix3d aty = Eigen::Matrix3d::Zero();
    for (const auto& seq : train_set) {
      if (!seq.pose3d) throw std::invalid_argument("LinearBaseline: sequence without 3D targets");
      if (seq.pose2d.joints() != N) throw std::invalid_argument("LinearBaseline: mixed joint counts");
      for (std::size_t t = 0; t < seq.pose2d.frames(); ++t) {
        const Eigen::Vector3d a(seq.pose2d.at(t, j, 0), seq.pose2d.at(t, j, 1), 1.0);
        Eigen::Vector3d y;
        for (int c = 0; c < 3; ++c) y(c) = seq.pose3d->at(t, j, c) - seq.pose3d->at(t, 0, c);
        ata += a * a.transpose();
        aty += a * y.transpose();
      }
    }
    const Eigen::Matrix3d w = ata.completeOrthogonalDecomposition().solve(aty);
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) out.w_[j][r * 3 + c] = w(r, c);
  }
  return out;
}

PoseSeq LinearBaseline::predict(const PoseSeq& pose2d) const {
  if (pose2d.joints() != w_.size()) throw std::invalid_argument("LinearBaseline: joint count mismatch");
  PoseSeq out(pose2d.frames(), pose2d.joints(), 3);
  for (std::size_t t = 0; t < pose2d.frames(); ++t)
    for (std::size_t j = 0; j < w_.size(); ++j) {
      const double a[3] = {pose2d.at(t, j, 0), pose2d.at(t, j, 1), 1.0};
      for (std::size_t c = 0; c < 3; ++c)
        out.at(t, j, c) = a[0] * w_[j][c] + a[1] * w_[j][3 + c] + a[2] * w_[j][6 + c];
    }
  return out;
}

metrics::MetricSet LinearBaseline::evaluate(const data::Dataset& dataset, std::size_t clip_len) const {
  std::vector<PoseSeq> preds, gts;
  for (const auto& b : data::Batcher(dataset, {1, clip_len, clip_len}).eval_batches()) {
    preds.push_back(predict(split_batch(b.input).front()));
    gts.push_back(split_batch(b.target).front());
  }
  return metrics::evaluate(preds, gts);
}

// ---------------------------------------------------------------------------

DeltaStats delta_statistics(const SamaModel& model, const data::Dataset& dataset) {
  check_joints(model, dataset);
  const auto& cfg = model.config();
  const std::size_t N = model.graph().n_joints;
  const auto batches = data::Batcher(dataset, clip_options(cfg)).eval_batches();
  std::vector<std::vector<double>> per_batch(batches.size(), std::vector<double>(N, 0.0));
  std::vector<double> counts(batches.size(), 0.0);
  parallel_for(batches.size(), cfg.threads, [&](std::size_t i) {
    ForwardTrace trace;
    predict_batch(model, batches[i].input, &trace);
    for (const auto& delta : trace.temporal_delta) {
      const std::size_t B = delta.dim(0), T = delta.dim(2), H = delta.dim(3);
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t j = 0; j < N; ++j)
          for (std::size_t k = 0; k < T * H; ++k) per_batch[i][j] += delta.data[(b * N + j) * T * H + k];
      counts[i] += static_cast<double>(B * T * H);
    }
  });
  DeltaStats out;
  out.mean_delta.assign(N, 0.0);
  double total = 0.0;
  for (std::size_t i = 0; i < batches.size(); ++i) {
    for (std::size_t j = 0; j < N; ++j) out.mean_delta[j] += per_batch[i][j];
    total += counts[i];
  }
  if (total > 0.0)
    for (auto& v : out.mean_delta) v /= total;

  out.mean_motion_2d.assign(N, 0.0);
  double weight = 0.0;
  for (const auto& seq : dataset) {
    if (seq.pose2d.frames() < 2) continue;
    const auto m = data::motion_intensity(seq.pose2d);
    const double w = static_cast<double>(seq.pose2d.frames() - 1);
    for (std::size_t j = 0; j < N; ++j) out.mean_motion_2d[j] += w * m[j];
    weight += w;
  }
  if (weight > 0.0)
    for (auto& v : out.mean_motion_2d) v /= weight;
  out.spearman = N >= 2 ? metrics::spearman(out.mean_motion_2d, out.mean_delta) : 0.0;
  return out;
}

}  // namespace sama::train
