#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "sama/ad.hpp"

namespace sama {

struct GradCheckOptions {
  double step = 1e-5;
  double tol = 1e-5;
  /// Probe at most this many coordinates per input tensor (0 = all). Probed
  /// coordinates are drawn without replacement from `seed`.
  std::size_t max_probes = 0;
  std::uint64_t seed = 0;
};

struct GradCheckReport {
  std::string name;
  double max_rel_err = 0.0;
  double max_abs_err = 0.0;
  std::size_t probes = 0;
  bool pass = false;
};

/// Builds the function under test on a fresh tape from the given leaves.
using TapeFn = std::function<ad::Var(ad::Tape&, std::span<const ad::Var>)>;

/// Compares the tape gradient of <w, f(x)> against central differences
/// (f(x+h) - f(x-h)) / 2h for every probed coordinate of every input. The
/// weights w are a fixed pseudo-random cotangent when f is not scalar.
/// Relative error is |a - b| / max(|a|, |b|, 1e-8).
/// Throws std::domain_error if f is not finite at a probe point.
GradCheckReport grad_check(const std::string& name, const TapeFn& f, std::vector<Tensor> point,
                           const GradCheckOptions& opts = {});

/// Same comparison with respect to every Param in `params`; `build` must bind
/// the params it uses through Tape::param.
GradCheckReport grad_check_params(const std::string& name, ParamStore& params,
                                  const std::function<ad::Var(ad::Tape&)>& build,
                                  const GradCheckOptions& opts = {});

double relative_error(double analytic, double numeric);

}  // namespace sama
