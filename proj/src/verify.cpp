#include "sama/verify.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

#include <Eigen/Geometry>

#include "sama/attention.hpp"
#include "sama/metrics.hpp"
#include "sama/msm.hpp"
#include "sama/network.hpp"
#include "sama/ssi.hpp"
#include "sama/ssm.hpp"
#include "sama/ssm_ops.hpp"

namespace sama::verify {

namespace {

using ad::Var;

Tensor random_tensor(Rng& rng, Shape shape, double lo, double hi) {
  Tensor t(std::move(shape));
  for (auto& v : t.data) v = rng.uniform(lo, hi);
  return t;
}

void jitter_params(ParamStore& store, Rng& rng, double scale) {
  for (auto& p : store.all())
    for (auto& v : p.value.data) v += scale * rng.uniform(-1.0, 1.0);
}

ssm::SelectiveWeights random_selective(Rng& rng, std::size_t d, std::size_t n) {
  ssm::SelectiveWeights w;
  w.w_b = random_tensor(rng, {d, n}, -0.5, 0.5);
  w.bias_b = random_tensor(rng, {n}, -0.2, 0.2);
  w.w_c = random_tensor(rng, {d, n}, -0.5, 0.5);
  w.bias_c = random_tensor(rng, {n}, -0.2, 0.2);
  w.w_delta = random_tensor(rng, {d}, -0.5, 0.5);
  w.delta_bias = rng.uniform(-1.0, 0.5);
  w.a_log = rng.uniform(-0.5, 0.5);
  return w;
}

// -- literal transcriptions of the integrator and modulator equations ------

double literal_softplus(double v) { return std::log(1.0 + std::exp(v)); }

struct LiteralStep {
  std::vector<double> b, c;
  double alpha = 0.0, gain = 0.0;
};

LiteralStep literal_select(const double* xt, std::size_t d, const ssm::SelectiveWeights& w, double delta) {
  const std::size_t n = w.bias_b.size();
  LiteralStep s;
  s.b.assign(n, 0.0);
  s.c.assign(n, 0.0);
  for (std::size_t k = 0; k < n; ++k) {
    s.b[k] = w.bias_b[k];
    s.c[k] = w.bias_c[k];
    for (std::size_t i = 0; i < d; ++i) {
      s.b[k] += xt[i] * w.w_b[i * n + k];
      s.c[k] += xt[i] * w.w_c[i * n + k];
    }
  }
  const double a = -std::exp(w.a_log);
  s.alpha = std::exp(delta * a);
  s.gain = (std::exp(delta * a) - 1.0) / a;
  return s;
}

Tensor literal_ssi(const Tensor& x, const Tensor& m, const ssm::SelectiveWeights& w, const Tensor& dskip) {
  const std::size_t N = x.dim(0), d = x.dim(1), n = w.bias_b.size();
  Tensor xf = x;
  for (std::size_t a = 0; a < N; ++a)
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t k = 0; k < N; ++k) xf[a * d + i] += m[a * N + k] * x[k * d + i];
  std::vector<Tensor> h(N, Tensor({d, n}));
  std::vector<LiteralStep> steps;
  Tensor prev({d, n});
  for (std::size_t a = 0; a < N; ++a) {
    double pre = w.delta_bias;
    for (std::size_t i = 0; i < d; ++i) pre += xf[a * d + i] * w.w_delta[i];
    steps.push_back(literal_select(&xf[a * d], d, w, literal_softplus(pre)));
    const auto& s = steps.back();
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t k = 0; k < n; ++k) h[a][i * n + k] = s.alpha * prev[i * n + k] + xf[a * d + i] * s.gain * s.b[k];
    prev = h[a];
  }
  Tensor y({N, d});
  for (std::size_t a = 0; a < N; ++a)
    for (std::size_t i = 0; i < d; ++i) {
      double acc = 0.0;
      for (std::size_t k = 0; k < n; ++k) {
        double fused = h[a][i * n + k];
        for (std::size_t q = 0; q < N; ++q) fused += m[a * N + q] * h[q][i * n + k];
        acc += fused * steps[a].c[k];
      }
      y[a * d + i] = acc + dskip[i] * xf[a * d + i];
    }
  return y;
}

Tensor literal_msm(const Tensor& x, const msm::MotionWeights& mw, const ssm::SelectiveWeights& w, const Tensor& dskip) {
  const std::size_t T = x.dim(0), d = x.dim(1), n = w.bias_b.size();
  Tensor y({T, d});
  Tensor h({d, n});
  for (std::size_t t = 0; t < T; ++t) {
    double pre = mw.bias;
    for (std::size_t i = 0; i < d; ++i) {
      const double prev = t > 0 ? x[(t - 1) * d + i] : 0.0;
      if (mw.variant == MsmVariant::pointwise_conv)
        pre += mw.w[i] * (mw.k0[i] * x[t * d + i] + mw.k1[i] * prev);
      else
        pre += mw.w_cur[i] * x[t * d + i] + mw.w_prev[i] * prev;
    }
    const auto s = literal_select(&x[t * d], d, w, literal_softplus(pre));
    for (std::size_t i = 0; i < d; ++i) {
      double acc = 0.0;
      for (std::size_t k = 0; k < n; ++k) {
        h[i * n + k] = s.alpha * h[i * n + k] + x[t * d + i] * s.gain * s.b[k];
        acc += h[i * n + k] * s.c[k];
      }
      y[t * d + i] = acc + dskip[i] * x[t * d + i];
    }
  }
  return y;
}

double max_rel(const Tensor& a, const Tensor& b) { return ssm::max_relative_deviation(a, b); }

CheckResult make(std::string name, double err, double tol) { return {std::move(name), err, tol, err <= tol}; }

PoseSeq random_pose(Rng& rng, std::size_t T, std::size_t N, double scale) {
  PoseSeq p(T, N, 3);
  for (auto& v : p.values()) v = scale * rng.normal();
  return p;
}

PoseSeq similarity(const PoseSeq& p, const Eigen::Matrix3d& r, double s, const Eigen::Vector3d& t) {
  PoseSeq out = p;
  for (std::size_t f = 0; f < p.frames(); ++f)
    for (std::size_t j = 0; j < p.joints(); ++j) {
      const Eigen::Vector3d v(p.at(f, j, 0), p.at(f, j, 1), p.at(f, j, 2));
      const Eigen::Vector3d w = s * r * v + t;
      for (int c = 0; c < 3; ++c) out.at(f, j, c) = w(c);
    }
  return out;
}

Eigen::Matrix3d random_rotation(Rng& rng) {
  Eigen::Vector3d axis(rng.normal(), rng.normal(), rng.normal());
  return Eigen::AngleAxisd(rng.uniform(-3.0, 3.0), axis.normalized()).toRotationMatrix();
}

}  // namespace

// ---------------------------------------------------------------------------

std::vector<OpCase> op_cases(std::uint64_t seed) {
  Rng rng(derive_seed(seed, "op_cases"));
  std::vector<OpCase> c;
  auto r = [&](Shape s, double lo = -1.0, double hi = 1.0) { return random_tensor(rng, std::move(s), lo, hi); };

  c.push_back({"add", [](ad::Tape&, std::span<const Var> v) { return ad::add(v[0], v[1]); }, {r({2, 3}), r({2, 3})}});
  c.push_back({"sub", [](ad::Tape&, std::span<const Var> v) { return ad::sub(v[0], v[1]); }, {r({2, 3}), r({2, 3})}});
  c.push_back({"mul", [](ad::Tape&, std::span<const Var> v) { return ad::mul(v[0], v[1]); }, {r({2, 3}), r({2, 3})}});
  c.push_back({"scale", [](ad::Tape&, std::span<const Var> v) { return ad::scale(v[0], -2.5); }, {r({4})}});
  c.push_back({"add_last", [](ad::Tape&, std::span<const Var> v) { return ad::add_last(v[0], v[1]); }, {r({2, 3, 4}), r({4})}});
  c.push_back({"mul_last", [](ad::Tape&, std::span<const Var> v) { return ad::mul_last(v[0], v[1]); }, {r({2, 3, 4}), r({4})}});
  c.push_back({"softplus", [](ad::Tape&, std::span<const Var> v) { return ad::softplus(v[0]); }, {r({2, 5}, -4.0, 4.0)}});
  c.push_back({"exp", [](ad::Tape&, std::span<const Var> v) { return ad::exp(v[0]); }, {r({6})}});
  c.push_back({"gelu", [](ad::Tape&, std::span<const Var> v) { return ad::gelu(v[0]); }, {r({2, 5}, -3.0, 3.0)}});
  c.push_back({"sum", [](ad::Tape&, std::span<const Var> v) { return ad::sum(v[0]); }, {r({3, 2})}});
  c.push_back({"mean", [](ad::Tape&, std::span<const Var> v) { return ad::mean(v[0]); }, {r({3, 2})}});
  c.push_back({"reshape", [](ad::Tape&, std::span<const Var> v) { return ad::reshape(v[0], {3, 2}); }, {r({2, 3})}});
  c.push_back({"swap_axes12", [](ad::Tape&, std::span<const Var> v) { return ad::swap_axes12(v[0]); }, {r({2, 3, 2, 2})}});
  c.push_back({"shift_prev", [](ad::Tape&, std::span<const Var> v) { return ad::shift_prev(v[0]); }, {r({2, 4, 3})}});
  c.push_back({"affine", [](ad::Tape&, std::span<const Var> v) { return ad::affine(v[0], v[1], v[2]); },
               {r({2, 3, 4}), r({4, 5}), r({5})}});
  c.push_back({"mix_rows", [](ad::Tape&, std::span<const Var> v) { return ad::mix_rows(v[0], v[1]); }, {r({2, 3, 4}), r({3, 3})}});
  c.push_back({"softmax_last", [](ad::Tape&, std::span<const Var> v) { return ad::softmax_last(v[0]); }, {r({2, 3, 4}, -2.0, 2.0)}});
  c.push_back({"layer_norm", [](ad::Tape&, std::span<const Var> v) { return ad::layer_norm(v[0], v[1], v[2]); },
               {r({2, 3, 5}), r({5}, 0.5, 1.5), r({5})}});
  c.push_back({"zoh_alpha", [](ad::Tape&, std::span<const Var> v) { return ssm::zoh_alpha(v[0], v[1]); },
               {r({2, 3, 2}, 0.05, 1.0), r({2}, -0.5, 0.5)}});
  c.push_back({"zoh_gain", [](ad::Tape&, std::span<const Var> v) { return ssm::zoh_gain(v[0], v[1]); },
               {r({2, 3, 2}, 0.05, 1.0), r({2}, -0.5, 0.5)}});
  // |delta * a| stays below the Taylor threshold for every probe
  c.push_back({"zoh_gain_taylor", [](ad::Tape&, std::span<const Var> v) { return ssm::zoh_gain(v[0], v[1]); },
               {r({2, 3, 2}, 2e-5, 6e-5), r({2}, -0.2, 0.2)}});
  c.push_back({"head_outer", [](ad::Tape&, std::span<const Var> v) { return ssm::head_outer(v[0], v[1]); },
               {r({2, 3, 2}), r({2, 3, 4})}});
  c.push_back({"ssd_scan", [](ad::Tape&, std::span<const Var> v) { return ssm::ssd_scan(v[0], v[1], v[2], v[3]); },
               {r({2, 5, 4}), r({2, 5, 2}, 0.3, 0.95), r({2, 5, 2, 3}), r({2, 5, 3})}});
  c.push_back({"ssd_scan_fused",
               [](ad::Tape&, std::span<const Var> v) { return ssm::ssd_scan(v[0], v[1], v[2], v[3], v[4]); },
               {r({2, 4, 4}), r({2, 4, 2}, 0.3, 0.95), r({2, 4, 2, 3}), r({2, 4, 3}), r({4, 4}, 0.0, 0.5)}});
  c.push_back({"attention", [](ad::Tape&, std::span<const Var> v) { return attn::attention(v[0], v[1], v[2], 2); },
               {r({2, 3, 4}), r({2, 3, 4}), r({2, 3, 4})}});

  const Tensor gt = r({2, 3, 4, 3}, -2.0, 2.0);
  c.push_back({"weighted_mpjpe_loss",
               [gt](ad::Tape&, std::span<const Var> v) { return metrics::weighted_mpjpe_loss(v[0], gt, std::vector<double>{1, 2, 0.5, 1}); },
               {r({2, 3, 4, 3}, -2.0, 2.0)}});
  c.push_back({"mpjve_loss", [gt](ad::Tape&, std::span<const Var> v) { return metrics::mpjve_loss(v[0], gt); },
               {r({2, 3, 4, 3}, -2.0, 2.0)}});
  c.push_back({"n_mpjpe_loss", [gt](ad::Tape&, std::span<const Var> v) { return metrics::n_mpjpe_loss(v[0], gt); },
               {r({2, 3, 4, 3}, -2.0, 2.0)}});
  c.push_back({"total_loss",
               [gt](ad::Tape&, std::span<const Var> v) { return metrics::total_loss(v[0], gt, ModelConfig{}); },
               {r({2, 3, 4, 3}, -2.0, 2.0)}});
  return c;
}

std::vector<GradCheckReport> layer_grad_checks(std::uint64_t seed, const GradCheckOptions& opts) {
  Rng rng(derive_seed(seed, "layer_checks"));
  ModelConfig cfg;
  cfg.dim = 4;
  cfg.state_dim = 3;
  cfg.heads = 2;
  const auto graph = JointGraph::chain(4);
  std::vector<GradCheckReport> out;

  auto run = [&](const std::string& name, ParamStore& store, Shape in_shape,
                 const std::function<Var(ad::Tape&, Var)>& layer) {
    jitter_params(store, rng, 0.2);
    const Tensor x = random_tensor(rng, std::move(in_shape), -1.0, 1.0);
    out.push_back(grad_check_params(name, store, [&](ad::Tape& t) { return layer(t, t.constant(x)); }, opts));
  };
  {
    ParamStore store;
    ssi::SsiLayer layer(store, "ssi.", cfg, graph);
    run("ssi_layer", store, {2, 4, 4}, [&](ad::Tape& t, Var x) { return layer.forward(t, x); });
  }
  for (auto variant : {MsmVariant::pointwise_conv, MsmVariant::linear}) {
    ParamStore store;
    auto c = cfg;
    c.msm_variant = variant;
    msm::MsmLayer layer(store, "msm.", c);
    run("msm_layer." + to_string(variant), store, {2, 5, 4}, [&](ad::Tape& t, Var x) { return layer.forward(t, x); });
  }
  {
    ParamStore store;
    ssm::SsdMixer mixer(store, "ssd.", cfg);
    run("ssd_mixer", store, {2, 5, 4}, [&](ad::Tape& t, Var x) { return mixer.forward(t, x); });
  }
  {
    ParamStore store;
    attn::AttentionBlock block(store, "attn.", cfg);
    run("attention_block", store, {2, 3, 4}, [&](ad::Tape& t, Var x) { return block.forward(t, x); });
  }
  return out;
}

GradCheckReport full_model_grad_check(const ModelConfig& cfg, std::size_t frames, const GradCheckOptions& opts) {
  SamaModel model(cfg);
  Rng rng(derive_seed(opts.seed, "full_model"));
  jitter_params(model.params(), rng, 0.05);
  const std::size_t N = model.graph().n_joints;
  const Tensor input = random_tensor(rng, {1, frames, N, 2}, -0.3, 0.3);
  return grad_check_params("full_model", model.params(), [&](ad::Tape& t) { return model.forward(t, input); }, opts);
}

DualFormReport dual_form_sweep(std::size_t instances, std::uint64_t seed, bool inject_fault) {
  Rng rng(derive_seed(seed, "dual_form"));
  DualFormReport rep;
  rep.instances = instances;
  for (std::size_t i = 0; i < instances; ++i) {
    const std::size_t T = 1 + rng.index(64), n = 1 + rng.index(8), p = 1 + rng.index(16);
    const Tensor x = random_tensor(rng, {T, p}, -1.0, 1.0);
    const auto w = random_selective(rng, p, n);
    const auto params = ssm::selective_project(x, w);
    const Tensor ref = ssm::scan_recurrent(x, params);
    Tensor quad = ssm::scan_quadratic(x, params);
    if (inject_fault)
      for (auto& v : quad.data) v += 1e-6;
    static constexpr std::size_t kChunks[] = {1, 2, 3, 5, 8, 16};
    const std::size_t pick = rng.index(7);
    const std::size_t chunk = pick < 6 ? kChunks[pick] : T;
    const Tensor chunked = ssm::scan_chunked(x, params, chunk);
    rep.max_quadratic_dev = std::max(rep.max_quadratic_dev, max_rel(quad, ref));
    rep.max_chunked_dev = std::max(rep.max_chunked_dev, max_rel(chunked, ref));
  }
  return rep;
}

std::vector<CheckResult> run_all(const VerifyOptions& opts) {
  std::vector<CheckResult> out;
  const GradCheckOptions gopts{1e-5, 1e-5, 0, opts.seed};

  const auto dual = dual_form_sweep(100, opts.seed, opts.inject_fault);
  out.push_back(make("dual_form.quadratic", dual.max_quadratic_dev, 1e-10));
  out.push_back(make("dual_form.chunked", dual.max_chunked_dev, 1e-10));

  {
    // both sides of the Taylor switch: the first-order value is accurate to
    // (delta a)^2 / 6, its partials to about 2 |delta a| / 3
    double value_jump = 0.0, grad_jump = 0.0;
    for (double a : {-0.5, -1.0, -2.0}) {
      const double d_lo = ssm::kZohTaylorThreshold / -a * (1.0 - 1e-9), d_hi = ssm::kZohTaylorThreshold / -a * (1.0 + 1e-9);
      const auto p_lo = ssm::zoh_gain_partials(d_lo, a), p_hi = ssm::zoh_gain_partials(d_hi, a);
      value_jump = std::max(value_jump, relative_error(ssm::zoh_gain(d_lo, a), ssm::zoh_gain(d_hi, a)));
      grad_jump = std::max({grad_jump, relative_error(p_lo.first, p_hi.first), relative_error(p_lo.second, p_hi.second)});
    }
    out.push_back(make("zoh.branch_value_continuity", value_jump, 1e-8));
    out.push_back(make("zoh.branch_grad_continuity", grad_jump, 1e-4));
  }
  {
    Rng rng(derive_seed(opts.seed, "mask"));
    double worst = 0.0;
    for (int rep = 0; rep < 10; ++rep) {
      std::vector<double> alpha(1 + rng.index(40));
      for (auto& a : alpha) a = rng.uniform(0.2, 1.0);
      const Tensor mask = ssm::build_mask(alpha);
      const std::size_t T = alpha.size();
      for (std::size_t i = 0; i < T; ++i)
        for (std::size_t j = 0; j <= i; ++j) {
          double prod = 1.0;
          for (std::size_t k = j + 1; k <= i; ++k) prod *= alpha[k];
          worst = std::max(worst, relative_error(mask[i * T + j], prod));
        }
    }
    out.push_back(make("ssd.mask_products", worst, 1e-12));
  }

  for (const auto& c : op_cases(opts.seed)) {
    const auto rep = grad_check(c.name, c.fn, c.point, gopts);
    out.push_back(make("grad." + c.name, rep.max_rel_err, gopts.tol));
  }
  for (const auto& rep : layer_grad_checks(opts.seed, gopts)) out.push_back(make("grad." + rep.name, rep.max_rel_err, gopts.tol));
  {
    ModelConfig cfg;
    cfg.skeleton = "chain3";
    cfg.dim = 8;
    cfg.state_dim = 4;
    cfg.depth = 1;
    const auto rep = full_model_grad_check(cfg, 2, gopts);
    out.push_back(make("grad.full_model_toy", rep.max_rel_err, gopts.tol));
  }

  {
    Rng rng(derive_seed(opts.seed, "ssi_literal"));
    double worst = 0.0;
    for (int rep = 0; rep < 20; ++rep) {
      const std::size_t N = 2 + rng.index(8), d = 1 + rng.index(6), n = 1 + rng.index(5);
      const Tensor x = random_tensor(rng, {N, d}, -1.0, 1.0);
      const Tensor m = ssi::row_softmax(random_tensor(rng, {N, N}, -1.0, 1.0));
      const auto w = random_selective(rng, d, n);
      const Tensor dskip = random_tensor(rng, {d}, -1.0, 1.0);
      worst = std::max(worst, max_rel(ssi::ssi_scan(x, m, w, dskip), literal_ssi(x, m, w, dskip)));
    }
    out.push_back(make("oracle.ssi_literal", worst, 1e-12));
  }
  for (auto variant : {MsmVariant::pointwise_conv, MsmVariant::linear}) {
    Rng rng(derive_seed(opts.seed, "msm_literal." + to_string(variant)));
    double worst = 0.0;
    for (int rep = 0; rep < 20; ++rep) {
      const std::size_t T = 2 + rng.index(20), d = 1 + rng.index(6), n = 1 + rng.index(5);
      const Tensor x = random_tensor(rng, {T, d}, -1.0, 1.0);
      msm::MotionWeights mw;
      mw.variant = variant;
      mw.k0 = random_tensor(rng, {d}, -1.0, 1.0);
      mw.k1 = random_tensor(rng, {d}, -1.0, 1.0);
      mw.w = random_tensor(rng, {d}, -1.0, 1.0);
      mw.w_cur = random_tensor(rng, {d}, -1.0, 1.0);
      mw.w_prev = random_tensor(rng, {d}, -1.0, 1.0);
      mw.bias = rng.uniform(-1.0, 0.5);
      const auto w = random_selective(rng, d, n);
      const Tensor dskip = random_tensor(rng, {d}, -1.0, 1.0);
      worst = std::max(worst, max_rel(msm::msm_scan(x, mw, w, dskip), literal_msm(x, mw, w, dskip)));
    }
    out.push_back(make("oracle.msm_literal." + to_string(variant), worst, 1e-12));
  }

  {
    Rng rng(derive_seed(opts.seed, "procrustes"));
    double worst = 0.0;
    for (int rep = 0; rep < 20; ++rep) {
      const auto gt = random_pose(rng, 3, 17, 300.0);
      const auto moved = similarity(gt, random_rotation(rng), rng.uniform(0.5, 2.0),
                                    Eigen::Vector3d(rng.normal(), rng.normal(), rng.normal()) * 500.0);
      worst = std::max(worst, metrics::p_mpjpe(moved, gt).value);
    }
    out.push_back(make("metric.procrustes_similarity", worst, 1e-8));
  }
  {
    Rng rng(derive_seed(opts.seed, "ordering"));
    double violations = 0.0;
    for (int rep = 0; rep < 100; ++rep) {
      // independent pairs: the chain is not a theorem for near-aligned
      // predictions (least-squares scale does not minimise a mean of norms)
      const auto gt = random_pose(rng, 4, 17, 300.0);
      auto pred = random_pose(rng, 4, 17, rng.uniform(50.0, 500.0));
      for (auto& v : pred.values()) v += rng.uniform(-100.0, 100.0);
      const double p = metrics::p_mpjpe(pred, gt).value, nn = metrics::n_mpjpe(pred, gt), m = metrics::mpjpe(pred, gt);
      if (!(p <= nn && nn <= m)) violations += 1.0;
    }
    out.push_back(make("metric.error_ordering", violations, 0.0));
  }
  {
    PoseSeq gt(2, 17, 3);
    for (auto& v : gt.values()) v = 10.0;
    PoseSeq shifted = gt;
    shifted.at(0, 4, 0) += 3.0;
    shifted.at(0, 4, 1) += 4.0;
    PoseSeq one(1, 17, 3), one_shift(1, 17, 3);
    one_shift.at(0, 4, 0) = 3.0;
    one_shift.at(0, 4, 1) = 4.0;
    const auto exact = metrics::pck_auc(gt, gt);
    double err = std::abs(metrics::mpjpe(one_shift, one) - 5.0 / 17.0);
    err = std::max({err, std::abs(exact.pck - 100.0), std::abs(exact.auc - 100.0)});
    PoseSeq far = gt;
    for (std::size_t j = 0; j < 17; ++j) far.at(1, j, 2) += 75.0;
    for (std::size_t j = 0; j < 17; ++j) far.at(0, j, 2) += 75.0;
    err = std::max(err, std::abs(metrics::pck_auc(far, gt).auc - 100.0 * 16.0 / 31.0));
    out.push_back(make("metric.trivial_cases", err, 0.0));
  }
  {
    ModelConfig full;
    full.skeleton = "chain4";
    full.dim = 8;
    full.state_dim = 4;
    full.seed = opts.seed;
    full.debug_zero_fusion = true;
    full.debug_no_motion = true;
    ModelConfig vanilla = full;
    vanilla.use_ssi = false;
    vanilla.use_msm = false;
    vanilla.debug_zero_fusion = vanilla.debug_no_motion = false;
    Rng rng(derive_seed(opts.seed, "reduction"));
    PoseSeq input(6, 4, 2);
    for (auto& v : input.values()) v = rng.uniform(-0.3, 0.3);
    const auto a = SamaModel(full).predict(input), b = SamaModel(vanilla).predict(input);
    double worst = 0.0;
    for (std::size_t i = 0; i < a.values().size(); ++i)
      if (a.values()[i] != b.values()[i]) worst = std::max(worst, std::abs(a.values()[i] - b.values()[i]) + 1e-300);
    out.push_back(make("reduction.debug_flags_bit_exact", worst, 0.0));
  }
  {
    ModelConfig cfg;
    double err = 0.0;
    for (auto variant : {MsmVariant::pointwise_conv, MsmVariant::linear}) {
      cfg.msm_variant = variant;
      err = std::max(err, std::abs(static_cast<double>(SamaModel(cfg).params().scalar_count()) -
                                   static_cast<double>(count_params(cfg))));
    }
    out.push_back(make("network.param_count", err, 0.0));
  }
  return out;
}

std::string format_table(const std::vector<CheckResult>& results) {
  std::ostringstream os;
  char line[160];
  std::snprintf(line, sizeof line, "%-36s %12s %10s  %s\n", "check", "max_err", "tol", "result");
  os << line;
  std::size_t failed = 0;
  for (const auto& r : results) {
    std::snprintf(line, sizeof line, "%-36s %12.3e %10.1e  %s\n", r.name.c_str(), r.error, r.tol, r.pass ? "PASS" : "FAIL");
    os << line;
    failed += r.pass ? 0 : 1;
  }
  os << results.size() << " checks, " << failed << " failed\n";
  return os.str();
}

}  // namespace sama::verify
