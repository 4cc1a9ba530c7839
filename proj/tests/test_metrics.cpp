#include <gtest/gtest.h>

#include <Eigen/Geometry>
#include <cmath>

#include "sama/metrics.hpp"
#include "test_util.hpp"

using namespace sama;
using namespace sama::metrics;
using tu::random_pose;

namespace {

PoseSeq transformed(const PoseSeq& p, const Eigen::Matrix3d& R, double s, const Eigen::Vector3d& t) {
  PoseSeq out = p;
  for (std::size_t f = 0; f < p.frames(); ++f)
    for (std::size_t j = 0; j < p.joints(); ++j) {
      const Eigen::Vector3d v(p.at(f, j, 0), p.at(f, j, 1), p.at(f, j, 2));
      const Eigen::Vector3d w = s * R * v + t;
      for (int c = 0; c < 3; ++c) out.at(f, j, c) = w(c);
    }
  return out;
}

PoseSeq offset_all(const PoseSeq& p, double dx) {
  PoseSeq out = p;
  for (std::size_t f = 0; f < p.frames(); ++f)
    for (std::size_t j = 0; j < p.joints(); ++j) out.at(f, j, 0) += dx;
  return out;
}

}  // namespace

TEST(Mpjpe, ExactMatchIsZero) {
  Rng rng(1);
  const auto gt = random_pose(3, 17, 3, rng);
  EXPECT_EQ(weighted_mpjpe(gt, gt), 0.0);
  EXPECT_EQ(mpjpe(gt, gt), 0.0);
}

TEST(Mpjpe, SingleJointOffset) {
  PoseSeq gt(1, 17, 3), pred(1, 17, 3);
  pred.at(0, 4, 0) = 3.0;
  pred.at(0, 4, 1) = 4.0;
  EXPECT_NEAR(weighted_mpjpe(pred, gt), 5.0 / 17.0, 1e-15);
}

TEST(Mpjpe, UniformWeightsMatchLoop) {
  Rng rng(2);
  const auto gt = random_pose(4, 17, 3, rng), pred = random_pose(4, 17, 3, rng);
  double acc = 0.0;
  for (std::size_t f = 0; f < 4; ++f)
    for (std::size_t j = 0; j < 17; ++j) {
      double d2 = 0.0;
      for (std::size_t c = 0; c < 3; ++c) d2 += std::pow(pred.at(f, j, c) - gt.at(f, j, c), 2);
      acc += std::sqrt(d2);
    }
  EXPECT_NEAR(weighted_mpjpe(pred, gt, std::vector<double>(17, 2.0)), acc / 68.0, 1e-12);
  EXPECT_NEAR(mpjpe(pred, gt), acc / 68.0, 1e-12);
}

TEST(Mpjpe, WeightsEmphasiseJoints) {
  PoseSeq gt(1, 2, 3), pred(1, 2, 3);
  pred.at(0, 1, 2) = 6.0;
  EXPECT_NEAR(weighted_mpjpe(pred, gt, std::vector<double>{1.0, 2.0}), 4.0, 1e-15);
  EXPECT_THROW(weighted_mpjpe(pred, gt, std::vector<double>{-1.0, 2.0}), std::invalid_argument);
  EXPECT_THROW(weighted_mpjpe(pred, gt, std::vector<double>{0.0, 0.0}), std::invalid_argument);
}

TEST(Mpjve, TranslationAndIdentity) {
  Rng rng(3);
  const auto gt = random_pose(5, 17, 3, rng);
  EXPECT_NEAR(mpjve(offset_all(gt, 40.0), gt), 0.0, 1e-12);
  EXPECT_EQ(mpjve(gt, gt), 0.0);
  EXPECT_THROW(mpjve(random_pose(1, 17, 3, rng), random_pose(1, 17, 3, rng)), std::invalid_argument);
}

TEST(Mpjve, LinearDrift) {
  Rng rng(4);
  const auto gt = random_pose(6, 17, 3, rng);
  PoseSeq pred = gt;
  for (std::size_t t = 0; t < 6; ++t)
    for (std::size_t j = 0; j < 17; ++j) pred.at(t, j, 0) += static_cast<double>(t);
  EXPECT_NEAR(mpjve(pred, gt), 1.0, 1e-12);
}

TEST(NMpjpe, RemovesPureScale) {
  Rng rng(5);
  const auto gt = random_pose(3, 17, 3, rng);
  const auto pred = transformed(gt, Eigen::Matrix3d::Identity(), 2.0, Eigen::Vector3d::Zero());
  EXPECT_NEAR(optimal_scale(pred, gt), 0.5, 1e-15);
  EXPECT_NEAR(n_mpjpe(pred, gt), 0.0, 1e-12);
  EXPECT_NEAR(optimal_scale(gt, gt), 1.0, 1e-15);
  EXPECT_EQ(n_mpjpe(gt, gt), 0.0);
  EXPECT_THROW(n_mpjpe(PoseSeq(3, 17, 3), gt), std::domain_error);
}

// the scale minimises the squared error: a fine 1-D scan never beats it
TEST(NMpjpe, ScaleIsLeastSquaresOptimal) {
  Rng rng(6);
  for (int rep = 0; rep < 5; ++rep) {
    const auto gt = random_pose(3, 17, 3, rng), pred = random_pose(3, 17, 3, rng, 200.0);
    auto sq = [&](double s) {
      double e = 0.0;
      for (std::size_t i = 0; i < gt.values().size(); ++i) e += std::pow(s * pred.values()[i] - gt.values()[i], 2);
      return e;
    };
    const double s_opt = optimal_scale(pred, gt);
    for (double s = -2.0; s <= 2.0; s += 1e-3) EXPECT_LE(sq(s_opt), sq(s) + 1e-9);
  }
}

TEST(PMpjpe, SimilarityIsRemoved) {
  Rng rng(7);
  const auto gt = random_pose(4, 17, 3, rng, 300.0);
  const Eigen::Matrix3d R = Eigen::AngleAxisd(1.1, Eigen::Vector3d(0.3, -0.5, 0.8).normalized()).toRotationMatrix();
  const auto moved = transformed(gt, R, 1.7, Eigen::Vector3d(300.0, -50.0, 4000.0));
  const auto r = p_mpjpe(moved, gt);
  EXPECT_LT(r.value, 1e-8);
  EXPECT_EQ(r.fallback_frames, 0u);
  EXPECT_LT(p_mpjpe(gt, gt).value, 1e-9);
}

TEST(PMpjpe, ReflectionIsNotAllowed) {
  Rng rng(8);
  const auto gt = random_pose(2, 17, 3, rng, 300.0);
  Eigen::Matrix3d mirror = Eigen::Matrix3d::Identity();
  mirror(0, 0) = -1.0;
  EXPECT_GT(p_mpjpe(transformed(gt, mirror, 1.0, Eigen::Vector3d::Zero()), gt).value, 1.0);
}

TEST(PMpjpe, DegenerateFrameFallsBack) {
  Rng rng(9);
  const auto gt = random_pose(2, 17, 3, rng);
  PoseSeq pred(2, 17, 3);  // every joint at the origin
  const auto r = p_mpjpe(pred, gt);
  EXPECT_EQ(r.fallback_frames, 2u);
  // translation-only alignment moves the collapsed pose to the gt centroid
  double acc = 0.0;
  for (std::size_t f = 0; f < 2; ++f) {
    double cen[3] = {0, 0, 0};
    for (std::size_t j = 0; j < 17; ++j)
      for (int c = 0; c < 3; ++c) cen[c] += gt.at(f, j, c) / 17.0;
    for (std::size_t j = 0; j < 17; ++j) {
      double d2 = 0.0;
      for (int c = 0; c < 3; ++c) d2 += std::pow(gt.at(f, j, c) - cen[c], 2);
      acc += std::sqrt(d2);
    }
  }
  EXPECT_NEAR(r.value, acc / 34.0, 1e-9);
}

// independent random pairs; the chain of nested alignment classes
TEST(Ordering, ProcrustesScaleRaw) {
  Rng rng(10);
  for (int rep = 0; rep < 200; ++rep) {
    const auto gt = random_pose(3, 17, 3, rng, 300.0);
    const auto pred = random_pose(3, 17, 3, rng, rng.uniform(50.0, 500.0));
    const double p = p_mpjpe(pred, gt).value, n = n_mpjpe(pred, gt), m = mpjpe(pred, gt);
    EXPECT_LE(p, n);
    EXPECT_LE(n, m);
  }
}

TEST(Pck, TrivialCases) {
  Rng rng(11);
  const auto gt = random_pose(2, 17, 3, rng);
  const auto exact = pck_auc(gt, gt);
  EXPECT_EQ(exact.pck, 100.0);
  EXPECT_EQ(exact.auc, 100.0);
  const auto far = pck_auc(offset_all(gt, 200.0), gt);
  EXPECT_EQ(far.pck, 0.0);
  EXPECT_EQ(far.auc, 0.0);
}

TEST(Pck, SeventyFiveMillimeters) {
  // integer coordinates keep the 75 mm offset exact
  PoseSeq gt(2, 17, 3);
  for (std::size_t i = 0; i < gt.values().size(); ++i) gt.values()[i] = static_cast<double>(i % 7) * 10.0;
  const auto r = pck_auc(offset_all(gt, 75.0), gt);
  EXPECT_EQ(r.pck, 100.0);
  // thresholds 75, 80, ..., 150 of the 31-point grid
  EXPECT_NEAR(r.auc, 100.0 * 16.0 / 31.0, 1e-12);
  EXPECT_EQ(pck_auc(offset_all(gt, 75.0), gt, 70.0).pck, 0.0);
}

TEST(Loss, Combination) {
  EXPECT_NEAR(combine_loss(1.0, 0.1, 0.8, 20.0, 0.5), 3.4, 1e-15);
  Rng rng(13);
  const auto gt = random_pose(4, 17, 3, rng), pred = random_pose(4, 17, 3, rng);
  ModelConfig cfg;
  EXPECT_EQ(total_loss(gt, gt, cfg), 0.0);
  cfg.lambda_m = cfg.lambda_n = 0.0;
  EXPECT_EQ(total_loss(pred, gt, cfg), weighted_mpjpe(pred, gt));
}

TEST(Loss, TapeVersionsMatchScalarVersions) {
  Rng rng(14);
  const std::size_t B = 2, T = 4, N = 17;
  std::vector<PoseSeq> preds, gts;
  Tensor pred({B, T, N, 3}), gt({B, T, N, 3});
  for (std::size_t b = 0; b < B; ++b) {
    preds.push_back(random_pose(T, N, 3, rng));
    gts.push_back(random_pose(T, N, 3, rng));
    std::copy(preds[b].values().begin(), preds[b].values().end(), pred.data.begin() + b * T * N * 3);
    std::copy(gts[b].values().begin(), gts[b].values().end(), gt.data.begin() + b * T * N * 3);
  }
  ModelConfig cfg;
  ad::Tape tape;
  const ad::Var p = tape.variable(pred);
  double w = 0.0, m = 0.0, n = 0.0, tot = 0.0;
  for (std::size_t b = 0; b < B; ++b) {
    w += weighted_mpjpe(preds[b], gts[b]) / B;
    m += mpjve(preds[b], gts[b]) / B;
    n += n_mpjpe(preds[b], gts[b]) / B;
    tot += total_loss(preds[b], gts[b], cfg) / B;
  }
  EXPECT_NEAR(weighted_mpjpe_loss(p, gt).value()[0], w, 1e-10);
  EXPECT_NEAR(mpjve_loss(p, gt).value()[0], m, 1e-10);
  EXPECT_NEAR(n_mpjpe_loss(p, gt).value()[0], n, 1e-10);
  EXPECT_NEAR(total_loss(p, gt, cfg).value()[0], tot, 1e-10);
}

TEST(Evaluate, FrameWeightedAverage) {
  Rng rng(15);
  const auto g1 = random_pose(2, 17, 3, rng), g2 = random_pose(6, 17, 3, rng);
  const auto p1 = offset_all(g1, 10.0), p2 = offset_all(g2, 30.0);
  const std::vector<PoseSeq> preds = {p1, p2}, gts = {g1, g2};
  const auto m = evaluate(preds, gts);
  EXPECT_NEAR(m.mpjpe, (2 * 10.0 + 6 * 30.0) / 8.0, 1e-12);
  EXPECT_NEAR(m.mpjve, 0.0, 1e-12);
  EXPECT_NEAR(m.p_mpjpe, 0.0, 1e-8);
  EXPECT_EQ(m.pck, 100.0);
  const std::vector<PoseSeq> none;
  EXPECT_THROW(evaluate(none, none), std::invalid_argument);
}

TEST(Spearman, KnownValues) {
  const std::vector<double> a = {1, 2, 3, 4, 5};
  EXPECT_NEAR(spearman(a, std::vector<double>{10, 20, 30, 40, 50}), 1.0, 1e-15);
  EXPECT_NEAR(spearman(a, std::vector<double>{5, 4, 3, 2, 1}), -1.0, 1e-15);
  // ranks 1..5 vs (2,1,4,3,5): 1 - 6*4/(5*24) = 0.8
  EXPECT_NEAR(spearman(a, std::vector<double>{2, 1, 4, 3, 5}), 0.8, 1e-15);
  // monotone transforms do not matter
  EXPECT_NEAR(spearman(a, std::vector<double>{std::exp(1.0), std::exp(2.0), 0.5e3, 1e4, 1e9}), 1.0, 1e-15);
  EXPECT_EQ(spearman(a, std::vector<double>(5, 3.0)), 0.0);
  EXPECT_THROW(spearman(a, std::vector<double>{1, 2}), std::invalid_argument);
  EXPECT_THROW(spearman(std::vector<double>{1}, std::vector<double>{1}), std::invalid_argument);
}

TEST(Spearman, TiesUseAverageRanks) {
  // ranks of b: (1, 2.5, 2.5, 4); Pearson with (1, 2, 3, 4)
  const std::vector<double> a = {1, 2, 3, 4}, b = {0, 7, 7, 9};
  const double rb[] = {1, 2.5, 2.5, 4}, ra[] = {1, 2, 3, 4};
  double num = 0.0, da = 0.0, db = 0.0;
  for (int i = 0; i < 4; ++i) {
    num += (ra[i] - 2.5) * (rb[i] - 2.5);
    da += (ra[i] - 2.5) * (ra[i] - 2.5);
    db += (rb[i] - 2.5) * (rb[i] - 2.5);
  }
  EXPECT_NEAR(spearman(a, b), num / std::sqrt(da * db), 1e-15);
}
