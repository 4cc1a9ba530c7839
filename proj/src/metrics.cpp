#include "sama/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <Eigen/Dense>

namespace sama::metrics {

namespace {

void require_same(const PoseSeq& pred, const PoseSeq& gt) {
  if (pred.frames() != gt.frames() || pred.joints() != gt.joints() || pred.coords() != gt.coords())
    throw std::invalid_argument("metrics: prediction and ground truth shapes differ");
  if (pred.coords() != 3) throw std::invalid_argument("metrics: expects 3D poses");
  pred.require_finite("metrics prediction");
  gt.require_finite("metrics ground truth");
}

double dist3(const double* a, const double* b) {
  const double dx = a[0] - b[0], dy = a[1] - b[1], dz = a[2] - b[2];
  return std::sqrt(dx * dx + dy * dy + dz * dz);
}

std::vector<double> checked_weights(std::span<const double> w, std::size_t N) {
  if (w.empty()) return std::vector<double>(N, 1.0);
  if (w.size() != N) throw std::invalid_argument("weighted_mpjpe: need one weight per joint");
  double total = 0.0;
  for (double v : w) {
    if (!(v >= 0.0)) throw std::invalid_argument("weighted_mpjpe: negative joint weight");
    total += v;
  }
  if (total <= 0.0) throw std::invalid_argument("weighted_mpjpe: weights sum to zero");
  return {w.begin(), w.end()};
}

struct BatchDims {
  std::size_t B, T, N;
};

BatchDims batch_dims(ad::Var pred, const Tensor& gt) {
  const auto& s = pred.shape();
  if (s.size() != 4 || s[3] != 3) throw std::invalid_argument("loss: pred must be [B][T][N][3]");
  if (gt.shape != s) throw std::invalid_argument("loss: gt shape " + shape_str(gt.shape) + " != " + shape_str(s));
  return {s[0], s[1], s[2]};
}

}  // namespace

double weighted_mpjpe(const PoseSeq& pred, const PoseSeq& gt, std::span<const double> joint_weights) {
  require_same(pred, gt);
  const auto w = checked_weights(joint_weights, gt.joints());
  double wsum = 0.0;
  for (double v : w) wsum += v;
  double acc = 0.0;
  for (std::size_t t = 0; t < gt.frames(); ++t)
    for (std::size_t j = 0; j < gt.joints(); ++j) acc += w[j] * dist3(pred.point(t, j), gt.point(t, j));
  return acc / (wsum * static_cast<double>(gt.frames()));
}

double mpjpe(const PoseSeq& pred, const PoseSeq& gt) {
  require_same(pred, gt);
  double acc = 0.0;
  for (std::size_t t = 0; t < gt.frames(); ++t)
    for (std::size_t j = 0; j < gt.joints(); ++j) acc += dist3(pred.point(t, j), gt.point(t, j));
  return acc / static_cast<double>(gt.frames() * gt.joints());
}

double mpjve(const PoseSeq& pred, const PoseSeq& gt) {
  require_same(pred, gt);
  const std::size_t T = gt.frames(), N = gt.joints();
  if (T < 2) throw std::invalid_argument("mpjve: needs at least 2 frames");
  double acc = 0.0;
  for (std::size_t t = 0; t + 1 < T; ++t)
    for (std::size_t j = 0; j < N; ++j) {
      double e2 = 0.0;
      for (std::size_t c = 0; c < 3; ++c) {
        const double vp = pred.at(t + 1, j, c) - pred.at(t, j, c);
        const double vg = gt.at(t + 1, j, c) - gt.at(t, j, c);
        e2 += (vp - vg) * (vp - vg);
      }
      acc += std::sqrt(e2);
    }
  return acc / static_cast<double>((T - 1) * N);
}

double optimal_scale(const PoseSeq& pred, const PoseSeq& gt) {
  double pg = 0.0, pp = 0.0;
  for (std::size_t i = 0; i < pred.values().size(); ++i) {
    pg += pred.values()[i] * gt.values()[i];
    pp += pred.values()[i] * pred.values()[i];
  }
  if (pp == 0.0) throw std::domain_error("n_mpjpe: prediction has zero norm");
  return pg / pp;
}

double n_mpjpe(const PoseSeq& pred, const PoseSeq& gt) {
  require_same(pred, gt);
  const double s = optimal_scale(pred, gt);
  PoseSeq scaled = pred;
  for (auto& v : scaled.values()) v *= s;
  return mpjpe(scaled, gt);
}

ProcrustesResult p_mpjpe(const PoseSeq& pred, const PoseSeq& gt) {
  require_same(pred, gt);
  const std::size_t T = gt.frames(), N = gt.joints();
  using Mat = Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>;
  ProcrustesResult result;
  double acc = 0.0;
  for (std::size_t t = 0; t < T; ++t) {
    Eigen::Map<const Mat> X(gt.point(t, 0), static_cast<Eigen::Index>(N), 3);
    Eigen::Map<const Mat> Y(pred.point(t, 0), static_cast<Eigen::Index>(N), 3);
    const Eigen::RowVector3d mu_x = X.colwise().mean();
    const Eigen::RowVector3d mu_y = Y.colwise().mean();
    Mat X0 = X.rowwise() - mu_x;
    Mat Y0 = Y.rowwise() - mu_y;
    const double norm_x = X0.norm(), norm_y = Y0.norm();

    Mat aligned;
    bool fallback = norm_x == 0.0 || norm_y == 0.0;
    if (!fallback) {
      X0 /= norm_x;
      Y0 /= norm_y;
      const Eigen::Matrix3d Hm = X0.transpose() * Y0;
      Eigen::JacobiSVD<Eigen::Matrix3d> svd(Hm, Eigen::ComputeFullU | Eigen::ComputeFullV);
      Eigen::Vector3d sv = svd.singularValues();
      // a rotation is only determined when the points span at least a plane
      fallback = sv(1) <= 1e-12 * std::max(sv(0), 1e-300);
      if (!fallback) {
        Eigen::Matrix3d U = svd.matrixU(), V = svd.matrixV();
        Eigen::Matrix3d R = V * U.transpose();
        if (R.determinant() < 0) {
          V.col(2) *= -1.0;
          sv(2) *= -1.0;
          R = V * U.transpose();
        }
        const double scale = sv.sum() * norm_x / norm_y;
        const Eigen::RowVector3d shift = mu_x - scale * mu_y * R;
        aligned = ((scale * (Y * R)).rowwise() + shift).eval();
      }
    }
    if (fallback) {
      ++result.fallback_frames;
      aligned = (Y.rowwise() + (mu_x - mu_y)).eval();
    }
    for (std::size_t j = 0; j < N; ++j) acc += (aligned.row(static_cast<Eigen::Index>(j)) - X.row(static_cast<Eigen::Index>(j))).norm();
  }
  result.value = acc / static_cast<double>(T * N);
  return result;
}

PckAuc pck_auc(const PoseSeq& pred, const PoseSeq& gt, double threshold_mm) {
  require_same(pred, gt);
  std::vector<double> errors;
  errors.reserve(gt.frames() * gt.joints());
  for (std::size_t t = 0; t < gt.frames(); ++t)
    for (std::size_t j = 0; j < gt.joints(); ++j) errors.push_back(dist3(pred.point(t, j), gt.point(t, j)));
  auto pck_at = [&](double thr) {
    std::size_t ok = 0;
    for (double e : errors) ok += e <= thr ? 1 : 0;
    return 100.0 * static_cast<double>(ok) / static_cast<double>(errors.size());
  };
  PckAuc r;
  r.pck = pck_at(threshold_mm);
  double auc = 0.0;
  for (int k = 0; k <= 30; ++k) auc += pck_at(5.0 * k);
  r.auc = auc / 31.0;
  return r;
}

void to_json(nlohmann::json& j, const MetricSet& m) {
  j = nlohmann::json{{"mpjpe", m.mpjpe}, {"p_mpjpe", m.p_mpjpe}, {"n_mpjpe", m.n_mpjpe},
                     {"mpjve", m.mpjve}, {"pck", m.pck},         {"auc", m.auc},
                     {"p_mpjpe_fallback_frames", m.p_mpjpe_fallback_frames}};
}

MetricSet evaluate(std::span<const PoseSeq> preds, std::span<const PoseSeq> gts) {
  if (preds.size() != gts.size() || preds.empty()) throw std::invalid_argument("evaluate: need matching, non-empty sets");
  MetricSet m;
  double frames = 0.0, vel_frames = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const double T = static_cast<double>(gts[i].frames());
    frames += T;
    m.mpjpe += T * mpjpe(preds[i], gts[i]);
    const auto p = p_mpjpe(preds[i], gts[i]);
    m.p_mpjpe += T * p.value;
    m.p_mpjpe_fallback_frames += p.fallback_frames;
    m.n_mpjpe += T * n_mpjpe(preds[i], gts[i]);
    if (gts[i].frames() >= 2) {
      vel_frames += T - 1;
      m.mpjve += (T - 1) * mpjve(preds[i], gts[i]);
    }
    const auto pa = pck_auc(preds[i], gts[i]);
    m.pck += T * pa.pck;
    m.auc += T * pa.auc;
  }
  m.mpjpe /= frames;
  m.p_mpjpe /= frames;
  m.n_mpjpe /= frames;
  m.pck /= frames;
  m.auc /= frames;
  m.mpjve = vel_frames > 0 ? m.mpjve / vel_frames : 0.0;
  return m;
}

namespace {

std::vector<double> average_ranks(std::span<const double> v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> rank(v.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) rank[idx[k]] = r;
    i = j + 1;
  }
  return rank;
}

}  // namespace

double spearman(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.size() < 2) throw std::invalid_argument("spearman: need two equal-length series of >= 2 values");
  const auto ra = average_ranks(a), rb = average_ranks(b);
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / n;
  const double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    sab += (ra[i] - ma) * (rb[i] - mb);
    saa += (ra[i] - ma) * (ra[i] - ma);
    sbb += (rb[i] - mb) * (rb[i] - mb);
  }
  if (saa == 0.0 || sbb == 0.0) return 0.0;
  return sab / std::sqrt(saa * sbb);
}

double combine_loss(double l_w, double l_m, double l_n, double lambda_m, double lambda_n) {
  return l_w + lambda_m * l_m + lambda_n * l_n;
}

double total_loss(const PoseSeq& pred, const PoseSeq& gt, const ModelConfig& cfg) {
  return combine_loss(weighted_mpjpe(pred, gt, cfg.joint_weights), mpjve(pred, gt), n_mpjpe(pred, gt), cfg.lambda_m,
                      cfg.lambda_n);
}

// ---------------------------------------------------------------------------

ad::Var weighted_mpjpe_loss(ad::Var pred, const Tensor& gt, std::span<const double> joint_weights) {
  const auto [B, T, N] = batch_dims(pred, gt);
  auto w = checked_weights(joint_weights, N);
  double wsum = 0.0;
  for (double v : w) wsum += v;
  const double norm = 1.0 / (wsum * static_cast<double>(B * T));
  const auto& pv = pred.value();
  double acc = 0.0;
  for (std::size_t r = 0; r < B * T; ++r)
    for (std::size_t j = 0; j < N; ++j) acc += w[j] * dist3(&pv[(r * N + j) * 3], &gt[(r * N + j) * 3]);
  return pred.tape->record(Tensor::scalar(acc * norm), {pred},
                           [pred, gt, w = std::move(w), norm, B, T, N](ad::Tape& t, const Tensor& g) {
                             auto* s = t.grad_slot(pred);
                             if (!s) return;
                             const auto& pv = t.value(pred);
                             for (std::size_t r = 0; r < B * T; ++r)
                               for (std::size_t j = 0; j < N; ++j) {
                                 const std::size_t o = (r * N + j) * 3;
                                 const double e = dist3(&pv[o], &gt[o]);
                                 if (e == 0.0) continue;
                                 const double k = g[0] * norm * w[j] / e;
                                 for (std::size_t c = 0; c < 3; ++c) (*s)[o + c] += k * (pv[o + c] - gt[o + c]);
                               }
                           });
}

ad::Var mpjve_loss(ad::Var pred, const Tensor& gt) {
  const auto [B, T, N] = batch_dims(pred, gt);
  if (T < 2) throw std::invalid_argument("mpjve: needs at least 2 frames");
  const double norm = 1.0 / static_cast<double>(B * (T - 1) * N);
  // residual of velocities, [B][T-1][N][3]
  const auto& pv = pred.value();
  Tensor resid({B, T - 1, N, 3});
  double acc = 0.0;
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t t = 0; t + 1 < T; ++t)
      for (std::size_t j = 0; j < N; ++j) {
        double e2 = 0.0;
        for (std::size_t c = 0; c < 3; ++c) {
          const std::size_t o0 = ((b * T + t) * N + j) * 3 + c, o1 = o0 + N * 3;
          const double r = (pv[o1] - pv[o0]) - (gt[o1] - gt[o0]);
          resid[((b * (T - 1) + t) * N + j) * 3 + c] = r;
          e2 += r * r;
        }
        acc += std::sqrt(e2);
      }
  return pred.tape->record(Tensor::scalar(acc * norm), {pred},
                           [pred, resid = std::move(resid), norm, B, T, N](ad::Tape& t, const Tensor& g) {
                             auto* s = t.grad_slot(pred);
                             if (!s) return;
                             for (std::size_t b = 0; b < B; ++b)
                               for (std::size_t tt = 0; tt + 1 < T; ++tt)
                                 for (std::size_t j = 0; j < N; ++j) {
                                   const double* r = &resid[((b * (T - 1) + tt) * N + j) * 3];
                                   const double e = std::sqrt(r[0] * r[0] + r[1] * r[1] + r[2] * r[2]);
                                   if (e == 0.0) continue;
                                   const double k = g[0] * norm / e;
                                   for (std::size_t c = 0; c < 3; ++c) {
                                     const std::size_t o0 = ((b * T + tt) * N + j) * 3 + c, o1 = o0 + N * 3;
                                     (*s)[o1] += k * r[c];
                                     (*s)[o0] -= k * r[c];
                                   }
                                 }
                           });
}

ad::Var n_mpjpe_loss(ad::Var pred, const Tensor& gt) {
  const auto [B, T, N] = batch_dims(pred, gt);
  const std::size_t per = T * N * 3;
  const double norm = 1.0 / static_cast<double>(B * T * N);
  const auto& pv = pred.value();
  std::vector<double> scale(B), pp(B);
  double acc = 0.0;
  for (std::size_t b = 0; b < B; ++b) {
    double pg = 0.0;
    for (std::size_t i = b * per; i < (b + 1) * per; ++i) {
      pg += pv[i] * gt[i];
      pp[b] += pv[i] * pv[i];
    }
    if (pp[b] == 0.0) throw std::domain_error("n_mpjpe: prediction has zero norm");
    scale[b] = pg / pp[b];
    for (std::size_t i = b * per; i < (b + 1) * per; i += 3) {
      double e2 = 0.0;
      for (std::size_t c = 0; c < 3; ++c) e2 += (scale[b] * pv[i + c] - gt[i + c]) * (scale[b] * pv[i + c] - gt[i + c]);
      acc += std::sqrt(e2);
    }
  }
  return pred.tape->record(
      Tensor::scalar(acc * norm), {pred},
      [pred, gt, scale = std::move(scale), pp = std::move(pp), norm, B, per](ad::Tape& t, const Tensor& g) {
        auto* s = t.grad_slot(pred);
        if (!s) return;
        const auto& pv = t.value(pred);
        std::vector<double> u(per);
        for (std::size_t b = 0; b < B; ++b) {
          const std::size_t o = b * per;
          const double sc = scale[b];
          // u = d loss / d e (unit residuals), then chain through e = s p - g with s = s(p)
          double up = 0.0;
          for (std::size_t i = 0; i < per; i += 3) {
            double e[3], e2 = 0.0;
            for (std::size_t c = 0; c < 3; ++c) {
              e[c] = sc * pv[o + i + c] - gt[o + i + c];
              e2 += e[c] * e[c];
            }
            const double en = std::sqrt(e2);
            for (std::size_t c = 0; c < 3; ++c) {
              u[i + c] = en == 0.0 ? 0.0 : g[0] * norm * e[c] / en;
              up += u[i + c] * pv[o + i + c];
            }
          }
          for (std::size_t i = 0; i < per; ++i)
            (*s)[o + i] += sc * u[i] + up * (gt[o + i] - 2.0 * sc * pv[o + i]) / pp[b];
        }
      });
}

ad::Var total_loss(ad::Var pred, const Tensor& gt, const ModelConfig& cfg) {
  auto loss = weighted_mpjpe_loss(pred, gt, cfg.joint_weights);
  if (cfg.lambda_m != 0.0) loss = ad::add(loss, ad::scale(mpjve_loss(pred, gt), cfg.lambda_m));
  if (cfg.lambda_n != 0.0) loss = ad::add(loss, ad::scale(n_mpjpe_loss(pred, gt), cfg.lambda_n));
  return loss;
}

}  // namespace sama::metrics
