#include "sama/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace sama {

double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
  return std::abs(analytic - numeric) / denom;
}

namespace {

Tensor cotangent_for(const Shape& shape, std::uint64_t seed) {
  Tensor w(shape);
  if (w.size() == 1) {
    w[0] = 1.0;
    return w;
  }
  Rng rng(derive_seed(seed, "cotangent"));
  for (auto& v : w.data) v = rng.uniform(-1.0, 1.0);
  return w;
}

double contract(const Tensor& w, const Tensor& y) {
  double acc = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) acc += w[i] * y[i];
  return acc;
}

std::vector<std::size_t> probe_indices(std::size_t n, std::size_t max_probes, Rng& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  if (max_probes == 0 || max_probes >= n) return idx;
  for (std::size_t i = 0; i < max_probes; ++i) std::swap(idx[i], idx[i + rng.index(n - i)]);
  idx.resize(max_probes);
  std::sort(idx.begin(), idx.end());
  return idx;
}

void require_finite(double v, const std::string& name) {
  if (!std::isfinite(v)) throw std::domain_error("grad_check(" + name + "): function is not finite at a probe point");
}

}  // namespace

GradCheckReport grad_check(const std::string& name, const TapeFn& f, std::vector<Tensor> point,
                           const GradCheckOptions& opts) {
  GradCheckReport report{name};
  Tensor weights;
  std::vector<Tensor> analytic;
  {
    ad::Tape tape;
    std::vector<ad::Var> leaves;
    for (const auto& p : point) leaves.push_back(tape.variable(p));
    ad::Var out = f(tape, leaves);
    weights = cotangent_for(out.shape(), opts.seed);
    require_finite(contract(weights, out.value()), name);
    tape.backward(out, weights);
    for (auto v : leaves) analytic.push_back(tape.grad(v));
  }

  auto eval = [&](const std::vector<Tensor>& at) {
    ad::Tape tape;
    std::vector<ad::Var> leaves;
    for (const auto& p : at) leaves.push_back(tape.constant(p));
    const double v = contract(weights, f(tape, leaves).value());
    require_finite(v, name);
    return v;
  };

  Rng rng(derive_seed(opts.seed, "probes"));
  for (std::size_t k = 0; k < point.size(); ++k) {
    for (std::size_t i : probe_indices(point[k].size(), opts.max_probes, rng)) {
      const double orig = point[k][i];
      point[k][i] = orig + opts.step;
      const double fp = eval(point);
      point[k][i] = orig - opts.step;
      const double fm = eval(point);
      point[k][i] = orig;
      const double numeric = (fp - fm) / (2.0 * opts.step);
      report.max_rel_err = std::max(report.max_rel_err, relative_error(analytic[k][i], numeric));
      report.max_abs_err = std::max(report.max_abs_err, std::abs(analytic[k][i] - numeric));
      ++report.probes;
    }
  }
  report.pass = report.max_rel_err < opts.tol;
  return report;
}

GradCheckReport grad_check_params(const std::string& name, ParamStore& params,
                                  const std::function<ad::Var(ad::Tape&)>& build, const GradCheckOptions& opts) {
  GradCheckReport report{name};
  params.zero_grad();
  Tensor weights;
  {
    ad::Tape tape;
    ad::Var out = build(tape);
    weights = cotangent_for(out.shape(), opts.seed);
    require_finite(contract(weights, out.value()), name);
    tape.backward(out, weights);
  }
  auto eval = [&] {
    ad::Tape tape;
    tape.set_grad_enabled(false);
    const double v = contract(weights, build(tape).value());
    require_finite(v, name);
    return v;
  };

  Rng rng(derive_seed(opts.seed, "probes"));
  for (auto& p : params.all()) {
    for (std::size_t i : probe_indices(p.value.size(), opts.max_probes, rng)) {
      const double orig = p.value[i];
      p.value[i] = orig + opts.step;
      const double fp = eval();
      p.value[i] = orig - opts.step;
      const double fm = eval();
      p.value[i] = orig;
      const double numeric = (fp - fm) / (2.0 * opts.step);
      report.max_rel_err = std::max(report.max_rel_err, relative_error(p.grad[i], numeric));
      report.max_abs_err = std::max(report.max_abs_err, std::abs(p.grad[i] - numeric));
      ++report.probes;
    }
  }
  report.pass = report.max_rel_err < opts.tol;
  return report;
}

}  // namespace sama
