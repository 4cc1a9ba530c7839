#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "sama/data.hpp"
#include "sama/network.hpp"
#include "sama/ssm.hpp"
#include "sama/train.hpp"
#include "sama/verify.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace sama;

namespace {

// Validation failures (bad config, data, checkpoint) exit with 1; CLI11 parse
// errors exit with 2.
constexpr int kValidationFailure = 1;
constexpr int kUsageError = 2;

struct ConfigFlags {
  std::string path;
  std::vector<std::string> sets;  // key=json
  std::optional<std::size_t> epochs, batch_size, clip_len, checkpoint_every, threads, depth, dim, state_dim, heads;
  std::optional<std::uint64_t> seed;
  std::optional<double> lr, weight_decay;
  std::optional<bool> use_ssi, use_msm;
  std::optional<std::string> msm_variant, skeleton;

  void attach(CLI::App* app) {
    app->add_option("--config", path, "Model/training config JSON (flags override it)")->check(CLI::ExistingFile);
    app->add_option("--set", sets, "Override any config key: --set key=<json value> (repeatable)");
    app->add_option("--epochs", epochs, "Training epochs");
    app->add_option("--batch-size", batch_size, "Clips per minibatch");
    app->add_option("--clip-len", clip_len, "Frames per clip");
    app->add_option("--checkpoint-every", checkpoint_every, "Write a checkpoint every N epochs (0: final only)");
    app->add_option("--threads", threads, "Worker cap for evaluation");
    app->add_option("--depth", depth, "Number of SSD layer pairs K");
    app->add_option("--dim", dim, "Feature width d");
    app->add_option("--state-dim", state_dim, "SSM state size n");
    app->add_option("--heads", heads, "Heads per SSD mixer and attention block");
    app->add_option("--seed", seed, "Seed for initialisation and clip sampling");
    app->add_option("--lr", lr, "Initial learning rate");
    app->add_option("--weight-decay", weight_decay, "Decoupled weight decay");
    app->add_option("--use-ssi", use_ssi, "Structure-aware spatial integrator (true/false)");
    app->add_option("--use-msm", use_msm, "Motion-adaptive temporal modulator (true/false)");
    app->add_option("--msm-variant", msm_variant, "pointwise_conv or linear")->check(CLI::IsMember({"pointwise_conv", "linear"}));
    app->add_option("--skeleton", skeleton, "Skeleton preset (h36m17, chainN)");
  }

  ModelConfig resolve() const {
    json j = json::object();
    if (!path.empty()) {
      std::ifstream is(path);
      j = json::parse(is);
    }
    for (const auto& kv : sets) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos || eq == 0) throw std::invalid_argument("--set expects key=value, got '" + kv + "'");
      const auto key = kv.substr(0, eq), value = kv.substr(eq + 1);
      json parsed = json::parse(value, nullptr, false);
      j[key] = parsed.is_discarded() ? json(value) : parsed;
    }
    auto put = [&](const char* key, const auto& opt) {
      if (opt) j[key] = *opt;
    };
    put("epochs", epochs);
    put("batch_size", batch_size);
    put("clip_len", clip_len);
    put("checkpoint_every", checkpoint_every);
    put("threads", threads);
    put("depth", depth);
    put("dim", dim);
    put("state_dim", state_dim);
    put("heads", heads);
    put("seed", seed);
    put("learning_rate", lr);
    put("weight_decay", weight_decay);
    put("use_ssi", use_ssi);
    put("use_msm", use_msm);
    put("msm_variant", msm_variant);
    put("skeleton", skeleton);
    ModelConfig cfg = j.get<ModelConfig>();
    cfg.validate();
    return cfg;
  }
};

void write_text(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
    return;
  }
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path);
  os << text;
}

std::vector<std::string> split_csv(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  for (std::string item; std::getline(ss, item, ',');)
    if (!item.empty()) out.push_back(item);
  return out;
}

data::Dataset select_split(const data::Dataset& all, const std::string& split) {
  if (split == "all") return all;
  auto [train_set, heldout] = train::split_dataset(all);
  return split == "train" ? train_set : heldout;
}

// ---------------------------------------------------------------------------

struct GenDataArgs {
  std::string out;
  data::SyntheticSpec spec;
  std::string amplitudes, frequencies;
};

int cmd_gen_data(const GenDataArgs& a) {
  auto spec = a.spec;
  auto parse_list = [](const std::string& s) {
    std::vector<double> v;
    for (const auto& item : split_csv(s)) v.push_back(std::stod(item));
    return v;
  };
  if (!a.amplitudes.empty()) spec.amplitude_mm = parse_list(a.amplitudes);
  if (!a.frequencies.empty()) spec.frequency_hz = parse_list(a.frequencies);
  const auto ds = data::generate_synthetic(spec);
  data::save_dataset(a.out, ds);

  const auto graph = JointGraph::preset(spec.skeleton);
  const auto profile = spec.amplitude_mm.empty() ? data::default_motion_profile(graph) : data::MotionProfile{spec.amplitude_mm, spec.frequency_hz};
  json meta{{"n_sequences", spec.n_sequences},  {"frames", spec.frames},      {"skeleton", spec.skeleton},
            {"fps", spec.fps},                  {"noise_std_2d", spec.noise_std_2d}, {"max_yaw", spec.max_yaw},
            {"seed", spec.seed},                {"camera", {{"focal", spec.camera.focal}, {"depth_offset", spec.camera.depth_offset}}},
            {"amplitude_mm", profile.amplitude_mm}, {"frequency_hz", spec.frequency_hz.empty() ? data::default_motion_profile(graph).frequency_hz : spec.frequency_hz}};
  write_text(a.out + ".meta.json", meta.dump(2) + "\n");
  std::cout << "wrote " << ds.size() << " sequences to " << a.out << "\n";
  return 0;
}

struct TrainArgs {
  ConfigFlags cfg;
  std::string data_path, out_dir = "run";
};

int cmd_train(const TrainArgs& a) {
  const ModelConfig cfg = a.cfg.resolve();
  const auto all = data::load_dataset(a.data_path, cfg.skeleton);
  auto [train_set, heldout] = train::split_dataset(all);
  fs::create_directories(a.out_dir);
  const json cfg_json = cfg;
  write_text((fs::path(a.out_dir) / "config.json").string(), cfg_json.dump(2) + "\n");

  SamaModel model(cfg);
  std::cout << "parameters: " << model.params().scalar_count() << "\n";
  std::ofstream log(fs::path(a.out_dir) / "train_log.csv");
  log << "# config " << cfg_json.dump() << "\n";
  log << "epoch,train_loss,eval_mpjpe\n";
  char line[128];
  auto result = train::fit(model, train_set, heldout, [&](const train::EpochLog& row, const SamaModel& m) {
    std::snprintf(line, sizeof line, "%zu,%.10g,%.10g\n", row.epoch, row.train_loss, row.eval_mpjpe);
    log << line << std::flush;
    std::cout << line;
    if (cfg.checkpoint_every > 0 && row.epoch % cfg.checkpoint_every == 0)
      save_checkpoint(m, fs::path(a.out_dir) / ("model_epoch" + std::to_string(row.epoch) + ".ckpt"));
  });
  save_checkpoint(model, fs::path(a.out_dir) / "model.ckpt");

  json summary{{"config", cfg_json},
               {"parameters", model.params().scalar_count()},
               {"initial_train_loss", result.initial_train_loss},
               {"final_train_loss", result.final_train_loss},
               {"train_sequences", train_set.size()},
               {"heldout_sequences", heldout.size()}};
  if (!heldout.empty()) {
    summary["heldout"] = train::evaluate(model, heldout);
    summary["linear_baseline_heldout"] = train::LinearBaseline::fit(train_set).evaluate(heldout, cfg.clip_len);
  }
  write_text((fs::path(a.out_dir) / "summary.json").string(), summary.dump(2) + "\n");
  return 0;
}

struct EvalArgs {
  std::string checkpoint, data_path, split = "heldout";
  bool oracle = false;
  std::optional<std::size_t> threads;
};

int cmd_eval(const EvalArgs& a) {
  SamaModel model = load_checkpoint(a.checkpoint);
  if (a.threads) model.mutable_config().threads = *a.threads;
  const auto ds = select_split(data::load_dataset(a.data_path, model.config().skeleton), a.split);
  if (ds.empty()) throw std::invalid_argument("eval: the '" + a.split + "' split is empty");
  const auto m = a.oracle ? train::evaluate_oracle(ds, model.config().clip_len) : train::evaluate(model, ds);
  json j = m;
  j["config"] = model.config();
  std::cout << j.dump(2) << "\n";
  return 0;
}

int cmd_verify(std::uint64_t seed, bool inject_fault) {
  const auto results = verify::run_all({seed, inject_fault});
  std::cout << verify::format_table(results);
  for (const auto& r : results)
    if (!r.pass) return kValidationFailure;
  return 0;
}

struct BenchArgs {
  std::size_t t = 1024, n = 8, d = 16, reps = 3;
  std::string forms = "rec,quad,chunk", chunks = "64";
  std::uint64_t seed = 0;
  ConfigFlags cfg;
};

int cmd_bench(const BenchArgs& a) {
  const ModelConfig cfg = a.cfg.resolve();
  const auto forms = split_csv(a.forms);
  for (const auto& f : forms)
    if (f != "rec" && f != "quad" && f != "chunk") throw CLI::ValidationError("--forms", "unknown form '" + f + "'");
  std::vector<std::size_t> chunks;
  for (const auto& c : split_csv(a.chunks)) chunks.push_back(std::stoul(c));

  Rng rng(derive_seed(a.seed, "bench"));
  Tensor x({a.t, a.d});
  for (auto& v : x.data) v = rng.uniform(-1.0, 1.0);
  ssm::SelectiveWeights w;
  auto fill = [&](Shape s, double scale) {
    Tensor t(std::move(s));
    for (auto& v : t.data) v = scale * rng.uniform(-1.0, 1.0);
    return t;
  };
  w.w_b = fill({a.d, a.n}, 0.3);
  w.bias_b = fill({a.n}, 0.1);
  w.w_c = fill({a.d, a.n}, 0.3);
  w.bias_c = fill({a.n}, 0.1);
  w.w_delta = fill({a.d}, 0.3);
  w.delta_bias = -2.0;
  const auto params = ssm::selective_project(x, w);

  auto time_it = [&](auto&& fn) {
    double best = 0.0;
    Tensor out;
    for (std::size_t r = 0; r < std::max<std::size_t>(a.reps, 1); ++r) {
      const auto t0 = std::chrono::steady_clock::now();
      out = fn();
      const double ns = std::chrono::duration<double, std::nano>(std::chrono::steady_clock::now() - t0).count();
      best = r == 0 ? ns : std::min(best, ns);
    }
    return std::pair{best / static_cast<double>(a.t), out};
  };

  const Tensor ref = ssm::scan_recurrent(x, params);
  const json cfg_json = cfg;
  std::cout << "# config " << cfg_json.dump() << "\n";
  std::cout << "# macs_per_frame " << count_macs_per_frame(cfg, JointGraph::preset(cfg.skeleton).n_joints, cfg.clip_len)
            << " (clip_len " << cfg.clip_len << ")\n";
  std::cout << "form,T,n,d,chunk,wall_ns_per_token,max_rel_dev\n";
  char line[160];
  auto row = [&](const char* form, std::size_t chunk, double ns, const Tensor& out) {
    std::snprintf(line, sizeof line, "%s,%zu,%zu,%zu,%zu,%.3f,%.3e\n", form, a.t, a.n, a.d, chunk, ns,
                  ssm::max_relative_deviation(out, ref));
    std::cout << line;
  };
  for (const auto& f : forms) {
    if (f == "rec") {
      auto [ns, out] = time_it([&] { return ssm::scan_recurrent(x, params); });
      row("rec", 0, ns, out);
    } else if (f == "quad") {
      auto [ns, out] = time_it([&] { return ssm::scan_quadratic(x, params); });
      row("quad", 0, ns, out);
    } else {
      for (auto c : chunks) {
        auto [ns, out] = time_it([&] { return ssm::scan_chunked(x, params, c); });
        row("chunk", c, ns, out);
      }
    }
  }
  return 0;
}

int cmd_dump_adjacency(const std::string& checkpoint, const std::string& out) {
  const SamaModel model = load_checkpoint(checkpoint);
  json layers = json::array();
  for (const auto& m : model.adjacency_matrices()) {
    const std::size_t N = m.dim(0);
    json rows = json::array();
    for (std::size_t a = 0; a < N; ++a) rows.push_back(std::vector<double>(m.data.begin() + a * N, m.data.begin() + (a + 1) * N));
    layers.push_back(std::move(rows));
  }
  json j{{"config", model.config()}, {"joints", model.graph().n_joints}, {"layers", layers}};
  write_text(out, j.dump(2) + "\n");
  return 0;
}

int cmd_dump_delta(const std::string& checkpoint, const std::string& data_path, const std::string& split,
                   const std::string& out) {
  const SamaModel model = load_checkpoint(checkpoint);
  const auto ds = select_split(data::load_dataset(data_path, model.config().skeleton), split);
  if (ds.empty()) throw std::invalid_argument("dump-delta: the '" + split + "' split is empty");
  const auto stats = train::delta_statistics(model, ds);
  json j{{"config", model.config()},
         {"mean_delta", stats.mean_delta},
         {"mean_motion_2d", stats.mean_motion_2d},
         {"spearman", stats.spearman}};
  write_text(out, j.dump(2) + "\n");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"SAMA pose lifting: synthetic data, training, evaluation, verification and benchmarks"};
  app.require_subcommand(1);

  GenDataArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "Generate a synthetic JSON-lines dataset");
  gen_cmd->add_option("--out", gen.out, "Output dataset path")->required();
  gen_cmd->add_option("--sequences", gen.spec.n_sequences, "Number of sequences");
  gen_cmd->add_option("--frames", gen.spec.frames, "Frames per sequence");
  gen_cmd->add_option("--skeleton", gen.spec.skeleton, "Skeleton preset");
  gen_cmd->add_option("--fps", gen.spec.fps, "Frame rate");
  gen_cmd->add_option("--noise", gen.spec.noise_std_2d, "2D Gaussian noise (normalised image units)");
  gen_cmd->add_option("--max-yaw", gen.spec.max_yaw, "Half-range of per-sequence yaw (rad)");
  gen_cmd->add_option("--seed", gen.spec.seed, "Generator seed");
  gen_cmd->add_option("--amplitudes", gen.amplitudes, "Comma-separated per-joint amplitudes (mm)");
  gen_cmd->add_option("--frequencies", gen.frequencies, "Comma-separated per-joint frequencies (Hz)");

  TrainArgs tr;
  auto* train_cmd = app.add_subcommand("train", "Train a model; writes checkpoints, train_log.csv and summary.json");
  train_cmd->add_option("--data", tr.data_path, "Dataset (JSON lines)")->required()->check(CLI::ExistingFile);
  train_cmd->add_option("--out-dir", tr.out_dir, "Output directory");
  tr.cfg.attach(train_cmd);

  EvalArgs ev;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint; prints a JSON metrics object");
  eval_cmd->add_option("--checkpoint", ev.checkpoint, "Checkpoint file")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--data", ev.data_path, "Dataset (JSON lines)")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--split", ev.split, "heldout, train or all")->check(CLI::IsMember({"heldout", "train", "all"}));
  eval_cmd->add_flag("--oracle", ev.oracle, "Use the ground truth as prediction");
  eval_cmd->add_option("--threads", ev.threads, "Worker cap");

  std::uint64_t verify_seed = 0;
  bool inject_fault = false;
  auto* verify_cmd = app.add_subcommand("verify", "Run the property suite and print a pass/fail table");
  verify_cmd->add_option("--seed", verify_seed, "Seed of the random instances");
  verify_cmd->add_flag("--inject-fault", inject_fault, "Perturb the quadratic scan output by 1e-6 (detector sanity)");

  BenchArgs bench;
  auto* bench_cmd = app.add_subcommand("bench", "Time the scan forms; CSV on stdout");
  bench_cmd->add_option("--t", bench.t, "Sequence length")->check(CLI::PositiveNumber);
  bench_cmd->add_option("--n", bench.n, "State size")->check(CLI::PositiveNumber);
  bench_cmd->add_option("--d", bench.d, "Channel width")->check(CLI::PositiveNumber);
  bench_cmd->add_option("--forms", bench.forms, "Comma-separated subset of rec,quad,chunk");
  bench_cmd->add_option("--chunk", bench.chunks, "Comma-separated chunk sizes");
  bench_cmd->add_option("--reps", bench.reps, "Repetitions (best time is reported)");
  bench_cmd->add_option("--bench-seed", bench.seed, "Seed of the random instance");
  bench.cfg.attach(bench_cmd);

  std::string adj_ckpt, adj_out = "-";
  auto* adj_cmd = app.add_subcommand("dump-adjacency", "Write the learned adjacency of every SSI layer as JSON");
  adj_cmd->add_option("--checkpoint", adj_ckpt, "Checkpoint file")->required()->check(CLI::ExistingFile);
  adj_cmd->add_option("--out", adj_out, "Output path (- for stdout)");

  std::string dd_ckpt, dd_data, dd_split = "heldout", dd_out = "-";
  auto* dd_cmd = app.add_subcommand("dump-delta", "Per-joint mean timescale and 2D motion intensity as JSON");
  dd_cmd->add_option("--checkpoint", dd_ckpt, "Checkpoint file")->required()->check(CLI::ExistingFile);
  dd_cmd->add_option("--data", dd_data, "Dataset (JSON lines)")->required()->check(CLI::ExistingFile);
  dd_cmd->add_option("--split", dd_split, "heldout, train or all")->check(CLI::IsMember({"heldout", "train", "all"}));
  dd_cmd->add_option("--out", dd_out, "Output path (- for stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsageError;
  }

  try {
    if (*gen_cmd) return cmd_gen_data(gen);
    if (*train_cmd) return cmd_train(tr);
    if (*eval_cmd) return cmd_eval(ev);
    if (*verify_cmd) return cmd_verify(verify_seed, inject_fault);
    if (*bench_cmd) return cmd_bench(bench);
    if (*adj_cmd) return cmd_dump_adjacency(adj_ckpt, adj_out);
    if (*dd_cmd) return cmd_dump_delta(dd_ckpt, dd_data, dd_split, dd_out);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsageError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kValidationFailure;
  }
  return kUsageError;
}
