#pragma once

// Property suite behind the `verify` subcommand: dual-form equivalence,
// finite-difference gradient checks of every registered op, the full-model
// gradient check, literal-equation and metric oracles, reduction exactness.

#include <cstdint>
#include <string>
#include <vector>

#include "sama/grad_check.hpp"

namespace sama::verify {

/// One registered differentiable op with a random instance.
struct OpCase {
  std::string name;
  TapeFn fn;
  std::vector<Tensor> point;
};

/// Every registered op on a small random instance drawn from `seed`.
std::vector<OpCase> op_cases(std::uint64_t seed);

/// Parameter grad checks of the composite layers (SSI layer, both MSM
/// variants, plain mixer, attention block) on small random inputs.
std::vector<GradCheckReport> layer_grad_checks(std::uint64_t seed, const GradCheckOptions& opts);

/// Grad check of a whole network forward pass (all parameter tensors, probed
/// per opts.max_probes) on one random clip of `frames` frames, parameters
/// jittered away from their structured initial values.
GradCheckReport full_model_grad_check(const ModelConfig& cfg, std::size_t frames, const GradCheckOptions& opts);

struct DualFormReport {
  double max_quadratic_dev = 0.0;  // quadratic vs recurrent
  double max_chunked_dev = 0.0;    // chunked vs recurrent
  std::size_t instances = 0;
};

/// Random single-head instances with T <= 64, n <= 8, p <= 16; chunk sizes
/// drawn from {1, 2, 3, 5, 8, 16, T}. `inject_fault` adds 1e-6 to every
/// quadratic-form output (detector sanity hook).
DualFormReport dual_form_sweep(std::size_t instances, std::uint64_t seed, bool inject_fault = false);

struct CheckResult {
  std::string name;
  double error = 0.0;  // worst deviation (relative where applicable)
  double tol = 0.0;
  bool pass = false;
};

struct VerifyOptions {
  std::uint64_t seed = 0;
  bool inject_fault = false;
};

std::vector<CheckResult> run_all(const VerifyOptions& opts);

/// Fixed-width table: check, error, tolerance, PASS/FAIL.
std::string format_table(const std::vector<CheckResult>& results);

}  // namespace sama::verify
