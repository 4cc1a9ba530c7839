#pragma once

// Domain types, deterministic RNG and the parameter store shared by every
// other module.

#include <cstddef>
#include <cstdint>
#include <deque>
#include <limits>
#include <string_view>
#include <initializer_list>
#include <map>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

namespace sama {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Dense row-major array of doubles.
struct Tensor {
  Shape shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(Shape s, double fill = 0.0);
  Tensor(Shape s, std::vector<double> values);

  static Tensor scalar(double v) { return Tensor(Shape{}, std::vector<double>{v}); }

  std::size_t size() const { return data.size(); }
  std::size_t rank() const { return shape.size(); }
  std::size_t dim(std::size_t i) const { return shape.at(i); }

  double& operator[](std::size_t i) { return data[i]; }
  const double& operator[](std::size_t i) const { return data[i]; }

  std::span<double> span() { return data; }
  std::span<const double> span() const { return data; }

  double* row(std::size_t i, std::size_t width) { return data.data() + i * width; }
  const double* row(std::size_t i, std::size_t width) const { return data.data() + i * width; }

  void fill(double v);
  bool all_finite() const;
};

// ---------------------------------------------------------------------------
// RNG

/// Deterministic random stream. The engine is std::mt19937_64, whose output
/// sequence is fixed by the C++ standard; the conversions to real numbers are
/// implemented here so they do not depend on the standard library vendor.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }
  /// Uniform in [0, 1) with 53 random mantissa bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Standard normal via Box-Muller (one draw per call, second value cached).
  double normal();
  /// Uniform integer in [0, n).
  std::size_t index(std::size_t n);

 private:
  std::mt19937_64 engine_;
  bool has_cached_ = false;
  double cached_ = 0.0;
};

Rng seeded_rng(std::uint64_t seed);

/// Stable child seed for a named sub-stream (FNV-1a of the name mixed with the
/// parent seed through splitmix64).
std::uint64_t derive_seed(std::uint64_t seed, std::string_view name);

// ---------------------------------------------------------------------------
// Pose sequences

/// [T][N][k] keypoint array. k = 2 for normalized image coordinates, k = 3 for
/// root-relative millimeters.
class PoseSeq {
 public:
  PoseSeq() = default;
  PoseSeq(std::size_t frames, std::size_t joints, std::size_t coords);
  PoseSeq(std::size_t frames, std::size_t joints, std::size_t coords, std::vector<double> values);

  std::size_t frames() const { return frames_; }
  std::size_t joints() const { return joints_; }
  std::size_t coords() const { return coords_; }

  double& at(std::size_t t, std::size_t j, std::size_t c) {
    return data_[(t * joints_ + j) * coords_ + c];
  }
  double at(std::size_t t, std::size_t j, std::size_t c) const {
    return data_[(t * joints_ + j) * coords_ + c];
  }
  const double* point(std::size_t t, std::size_t j) const { return &data_[(t * joints_ + j) * coords_]; }
  double* point(std::size_t t, std::size_t j) { return &data_[(t * joints_ + j) * coords_]; }

  const std::vector<double>& values() const { return data_; }
  std::vector<double>& values() { return data_; }

  /// Throws std::invalid_argument on any non-finite entry.
  void require_finite(std::string_view what) const;

  Tensor as_tensor() const { return Tensor({frames_, joints_, coords_}, data_); }

 private:
  std::size_t frames_ = 0;
  std::size_t joints_ = 0;
  std::size_t coords_ = 0;
  std::vector<double> data_;
};

// ---------------------------------------------------------------------------
// Skeleton

struct JointGraph {
  std::string name;
  std::size_t n_joints = 0;
  std::vector<std::pair<std::size_t, std::size_t>> edges;
  std::vector<double> m_o;           // [N][N] binary, zero diagonal
  std::vector<std::size_t> degree;   // degree in M_o + I

  /// Builds and validates a graph (symmetric, no self loops, connected).
  static JointGraph from_edges(std::string name, std::size_t n_joints,
                               std::vector<std::pair<std::size_t, std::size_t>> edges);

  /// 17-joint Human3.6M kinematic tree, root (pelvis) = 0.
  static JointGraph h36m17();
  /// Path 0-1-...-(n-1).
  static JointGraph chain(std::size_t n);
  /// Look up a preset by name ("h36m17", "chainN").
  static JointGraph preset(const std::string& name);

  /// Parent of each joint in the BFS tree rooted at 0 (root maps to itself).
  std::vector<std::size_t> parents() const;
};

// ---------------------------------------------------------------------------
// Parameters

struct Param {
  std::string name;
  Tensor value;
  Tensor grad;

  void zero_grad() { grad.fill(0.0); }
};

enum class InitKind { uniform_fan_in, zeros, constant };

struct InitScheme {
  InitKind kind = InitKind::zeros;
  double constant = 0.0;
  std::size_t fan_in = 0;
  double gain = 1.0;  // uniform_fan_in bound is gain / sqrt(fan_in)

  static InitScheme zeros() { return {InitKind::zeros, 0.0, 0}; }
  static InitScheme constant_value(double c) { return {InitKind::constant, c, 0}; }
  static InitScheme uniform_fan_in(std::size_t fan_in, double gain = 1.0) {
    return {InitKind::uniform_fan_in, 0.0, fan_in, gain};
  }
};

/// Init gain of every projection that writes into the residual stream
/// (mixer output, attention output, MLP second layer). Small branch outputs
/// keep the block near identity at the start of training.
inline constexpr double kResidualOutGain = 0.1;

Param init_param(std::string name, const Shape& shape, const InitScheme& scheme, Rng& rng);

/// Owns every learnable array. Addresses are stable; names are unique.
class ParamStore {
 public:
  /// Adds a parameter whose init stream is derive_seed(seed, name), so a
  /// parameter's initial value does not depend on which others exist.
  Param& add(const std::string& name, const Shape& shape, const InitScheme& scheme, std::uint64_t seed);
  Param& adopt(Param p);

  Param& get(const std::string& name);
  const Param& get(const std::string& name) const;
  Param* find(const std::string& name);
  const Param* find(const std::string& name) const;

  std::deque<Param>& all() { return params_; }
  const std::deque<Param>& all() const { return params_; }

  void zero_grad();
  std::size_t scalar_count() const;

 private:
  std::deque<Param> params_;
  std::map<std::string, std::size_t> index_;
};

// ---------------------------------------------------------------------------
// Configuration

enum class MsmVariant { pointwise_conv, linear };

std::string to_string(MsmVariant v);
MsmVariant msm_variant_from_string(const std::string& s);

struct ModelConfig {
  // architecture
  std::size_t depth = 2;        // K
  std::size_t dim = 32;         // d
  std::size_t state_dim = 8;    // n
  std::size_t heads = 2;
  MsmVariant msm_variant = MsmVariant::pointwise_conv;
  bool use_ssi = true;          // false: plain SSD spatial scan
  bool use_msm = true;          // false: plain SSD temporal scan
  bool skip_d = true;           // learnable feed-through term
  double delta_init = 0.1;      // softplus(delta_bias) at init
  double output_scale = 1000.0; // head output units -> mm
  std::string skeleton = "h36m17";

  // debug switches for reduction tests; they keep the parameters but bypass
  // the corresponding computation
  bool debug_zero_fusion = false;
  bool debug_no_motion = false;

  // objective
  double lambda_m = 20.0;
  double lambda_n = 0.5;
  std::vector<double> joint_weights;  // empty = uniform

  // optimisation
  std::uint64_t seed = 0;
  double learning_rate = 1e-3;
  double weight_decay = 1e-4;
  double lr_decay = 0.99;
  std::size_t epochs = 200;
  std::size_t batch_size = 4;
  std::size_t clip_len = 8;
  std::size_t checkpoint_every = 0;  // 0 = only at the end
  std::size_t threads = 1;

  /// Throws std::invalid_argument naming the first offending field.
  void validate() const;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

}  // namespace sama
