// Acceptance run: one PASS/FAIL line per criterion.
//
//   acceptance [--epochs N] [--seeds S] [--only 1,2,...]
//
// The defaults are the acceptance protocol; the flags only exist to shorten
// development runs. Exit status is nonzero if any evaluated criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "sama/train.hpp"
#include "sama/verify.hpp"

using namespace sama;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

void report(int id, const Outcome& o) {
  std::printf("criterion %d: %s  %s\n", id, o.pass ? "PASS" : "FAIL", o.detail.c_str());
  std::fflush(stdout);
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// ---------------------------------------------------------------------------

Outcome dual_form() {
  const auto t0 = Clock::now();
  const auto rep = verify::dual_form_sweep(100, 0);
  const double s = seconds_since(t0);
  const bool ok = rep.max_quadratic_dev <= 1e-10 && rep.max_chunked_dev <= 1e-10 && s < 10.0;
  return {ok, fmt("100 instances, quadratic dev %.2e, chunked dev %.2e (tol 1e-10), %.2f s (limit 10 s)",
                  rep.max_quadratic_dev, rep.max_chunked_dev, s)};
}

// Every op on 10 random instances, the composite layers, and the whole toy
// model. The full model has ~42k scalars; probing all of them takes several
// minutes, so each parameter tensor is sampled (fixed before any run).
constexpr std::size_t kFullModelProbes = 64;

Outcome gradients() {
  const GradCheckOptions opts{.step = 1e-5, .tol = 1e-5};
  const auto t0 = Clock::now();
  double worst_op = 0.0;
  std::string worst_op_name;
  std::size_t ops = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    for (const auto& c : verify::op_cases(seed)) {
      const auto rep = grad_check(c.name, c.fn, c.point, opts);
      ++ops;
      if (rep.max_rel_err >= worst_op) {
        worst_op = rep.max_rel_err;
        worst_op_name = c.name;
      }
    }
    for (const auto& rep : verify::layer_grad_checks(seed, opts)) {
      ++ops;
      if (rep.max_rel_err >= worst_op) {
        worst_op = rep.max_rel_err;
        worst_op_name = rep.name;
      }
    }
  }
  ModelConfig toy;  // K=2, d=32, n=8, heads=2 on the 17-joint skeleton
  auto full_opts = opts;
  full_opts.max_probes = kFullModelProbes;
  const auto full = verify::full_model_grad_check(toy, 8, full_opts);
  const double s = seconds_since(t0);
  const bool ok = worst_op < opts.tol && full.max_rel_err < opts.tol && s < 120.0;
  return {ok, fmt("%zu op/layer checks worst %.2e (%s); full toy model %zu probes rel %.2e abs %.2e (tol 1e-5); %.1f s "
                  "(limit 120 s)",
                  ops, worst_op, worst_op_name.c_str(), full.probes, full.max_rel_err, full.max_abs_err, s)};
}

Outcome checks_with_prefix(const std::vector<verify::CheckResult>& all, const std::vector<std::string>& prefixes) {
  Outcome o{true, ""};
  for (const auto& r : all) {
    bool match = false;
    for (const auto& p : prefixes) match = match || r.name.rfind(p, 0) == 0;
    if (!match) continue;
    o.pass = o.pass && r.pass;
    o.detail += fmt("%s%s %.2e/%.0e", o.detail.empty() ? "" : ", ", r.name.c_str(), r.error, r.tol);
  }
  if (o.detail.empty()) return {false, "no checks found"};
  return o;
}

Outcome reduction(const std::vector<verify::CheckResult>& all) {
  auto o = checks_with_prefix(all, {"reduction."});
  // the acceptance toy config on the full skeleton, shared seed
  ModelConfig full;
  full.seed = 7;
  full.debug_zero_fusion = full.debug_no_motion = true;
  ModelConfig vanilla = full;
  vanilla.use_ssi = vanilla.use_msm = false;
  vanilla.debug_zero_fusion = vanilla.debug_no_motion = false;
  Rng rng(derive_seed(7, "acceptance.reduction"));
  PoseSeq input(8, 17, 2);
  for (auto& v : input.values()) v = rng.uniform(-0.3, 0.3);
  const auto a = SamaModel(full).predict(input), b = SamaModel(vanilla).predict(input);
  std::size_t differ = 0;
  for (std::size_t i = 0; i < a.values().size(); ++i) differ += a.values()[i] != b.values()[i];
  o.pass = o.pass && differ == 0;
  o.detail += fmt(", toy h36m17 T=8: %zu of %zu outputs differ", differ, a.values().size());
  return o;
}

// Runs the scan benchmark through the CLI and reads its CSV.
Outcome throughput() {
  const std::string cmd = std::string("\"") + SAMA_CLI_PATH + "\" bench --t 4096 --forms quad,chunk --chunk 64 --reps 3";
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) return {false, "could not start the bench command"};
  std::string out;
  char buf[512];
  while (std::fgets(buf, sizeof buf, pipe)) out += buf;
  if (pclose(pipe) != 0) return {false, "bench command failed"};
  std::map<std::string, std::pair<double, double>> rows;  // form -> (ns per token, dev)
  std::istringstream in(out);
  for (std::string line; std::getline(in, line);) {
    if (line.empty() || line[0] == '#' || line.rfind("form,", 0) == 0) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) f.push_back(cell);
    if (f.size() == 7) rows[f[0]] = {std::stod(f[5]), std::stod(f[6])};
  }
  if (!rows.count("quad") || !rows.count("chunk")) return {false, "bench output missing rows"};
  const auto [quad_ns, quad_dev] = rows["quad"];
  const auto [chunk_ns, chunk_dev] = rows["chunk"];
  const double speedup = quad_ns / chunk_ns;
  const bool ok = speedup >= 2.0 && chunk_dev <= 1e-10 && quad_dev <= 1e-10;
  return {ok, fmt("T=4096 n=8 d=16 chunk=64: quadratic %.1f ns/token, chunked %.1f ns/token, speedup %.2fx (need 2x); "
                  "dev chunked %.2e quadratic %.2e (tol 1e-10)",
                  quad_ns, chunk_ns, speedup, chunk_dev, quad_dev)};
}

// ---------------------------------------------------------------------------

struct Run {
  double heldout_mpjpe = 0.0;
  double initial_loss = 0.0;
  double final_loss = 0.0;
  double spearman = 0.0;
};

struct Variant {
  const char* name;
  bool ssi, msm;
};

constexpr Variant kVariants[] = {{"vanilla", false, false}, {"ssi_only", true, false}, {"msm_only", false, true}, {"full", true, true}};

struct Study {
  std::map<std::string, std::vector<Run>> runs;
  double baseline_mpjpe = 0.0;
};

// The synthetic benchmark: default heterogeneous motion profile, 48
// sequences of 24 frames, every fourth sequence held out.
data::Dataset benchmark_data() {
  data::SyntheticSpec spec;
  spec.n_sequences = 48;
  spec.frames = 24;
  spec.seed = 1;
  return data::generate_synthetic(spec);
}

Study run_study(std::size_t epochs, std::size_t seeds) {
  const auto [train_set, heldout] = train::split_dataset(benchmark_data());
  Study st;
  ModelConfig base;
  st.baseline_mpjpe = train::LinearBaseline::fit(train_set).evaluate(heldout, base.clip_len).mpjpe;
  for (std::size_t seed = 0; seed < seeds; ++seed) {
    for (const auto& v : kVariants) {
      ModelConfig cfg;
      cfg.epochs = epochs;
      cfg.seed = seed;
      cfg.use_ssi = v.ssi;
      cfg.use_msm = v.msm;
      SamaModel model(cfg);
      const auto t0 = Clock::now();
      const auto res = train::fit(model, train_set, heldout);
      Run r;
      r.heldout_mpjpe = res.log.back().eval_mpjpe;
      r.initial_loss = res.initial_train_loss;
      r.final_loss = res.final_train_loss;
      r.spearman = train::delta_statistics(model, heldout).spearman;
      st.runs[v.name].push_back(r);
      std::fprintf(stderr, "  [%s seed %zu] heldout %.3f mm, train loss %.2f -> %.2f, spearman %.3f, %.0f s\n", v.name,
                   seed, r.heldout_mpjpe, r.initial_loss, r.final_loss, r.spearman, seconds_since(t0));
    }
  }
  return st;
}

double median_of(const Study& st, const char* variant, double Run::*field) {
  std::vector<double> v;
  for (const auto& r : st.runs.at(variant)) v.push_back(r.*field);
  return median(v);
}

Outcome ablation(const Study& st) {
  const double van = median_of(st, "vanilla", &Run::heldout_mpjpe), ssi = median_of(st, "ssi_only", &Run::heldout_mpjpe),
               msm = median_of(st, "msm_only", &Run::heldout_mpjpe), full = median_of(st, "full", &Run::heldout_mpjpe);
  const bool ok = full <= ssi && full <= msm && ssi <= van && msm <= van;
  return {ok, fmt("median held-out MPJPE: vanilla %.3f, ssi_only %.3f, msm_only %.3f, full %.3f mm "
                  "(need full <= each single <= vanilla)",
                  van, ssi, msm, full)};
}

Outcome correlation(const Study& st) {
  const double rho = median_of(st, "full", &Run::spearman);
  std::string each;
  for (const auto& r : st.runs.at("full")) each += fmt("%s%.3f", each.empty() ? "" : " ", r.spearman);
  return {rho > 0.0, fmt("median Spearman(motion, delta) over full runs %.3f (runs: %s; need > 0)", rho, each.c_str())};
}

Outcome learning(const Study& st) {
  bool ok = true;
  std::string each;
  for (const auto& r : st.runs.at("full")) {
    const double drop = 1.0 - r.final_loss / r.initial_loss;
    ok = ok && drop >= 0.5 && r.heldout_mpjpe < st.baseline_mpjpe;
    each += fmt("%sloss -%.1f%% heldout %.3f", each.empty() ? "" : "; ", 100.0 * drop, r.heldout_mpjpe);
  }
  return {ok, fmt("full runs: %s; linear baseline %.3f mm (need loss drop >= 50%% and heldout < baseline)", each.c_str(),
                  st.baseline_mpjpe)};
}

}  // namespace

int main(int argc, char** argv) {
  std::size_t epochs = 200, seeds = 3;
  std::set<int> only;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (i + 1 >= argc) {
      std::fprintf(stderr, "usage: acceptance [--epochs N] [--seeds S] [--only 1,2,...]\n");
      return 2;
    }
    const std::string v = argv[++i];
    if (a == "--epochs")
      epochs = std::stoul(v);
    else if (a == "--seeds")
      seeds = std::stoul(v);
    else if (a == "--only") {
      std::stringstream ss(v);
      for (std::string c; std::getline(ss, c, ',');) only.insert(std::stoi(c));
    } else {
      std::fprintf(stderr, "unknown option %s\n", a.c_str());
      return 2;
    }
  }
  auto want = [&](int id) { return only.empty() || only.count(id) > 0; };

  std::map<int, Outcome> results;
  auto emit = [&](int id, const Outcome& o) {
    results[id] = o;
    std::fprintf(stderr, "criterion %d done\n", id);
  };

  if (want(1)) emit(1, dual_form());
  if (want(2)) emit(2, gradients());
  if (want(3) || want(4) || want(8)) {
    const auto checks = verify::run_all({});
    if (want(3)) emit(3, checks_with_prefix(checks, {"oracle."}));
    if (want(4)) emit(4, checks_with_prefix(checks, {"metric."}));
    if (want(8)) emit(8, reduction(checks));
  }
  if (want(9)) emit(9, throughput());
  if (want(5) || want(6) || want(7)) {
    std::fprintf(stderr, "training %zu variants x %zu seeds x %zu epochs\n", std::size(kVariants), seeds, epochs);
    const auto st = run_study(epochs, seeds);
    if (want(5)) emit(5, ablation(st));
    if (want(6)) emit(6, correlation(st));
    if (want(7)) emit(7, learning(st));
  }
  bool all_pass = true;
  for (const auto& [id, o] : results) {
    report(id, o);
    all_pass = all_pass && o.pass;
  }
  return all_pass ? 0 : 1;
}
