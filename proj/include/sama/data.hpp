#pragma once

// Synthetic pose sequences, the JSON-lines dataset format and clip batching.

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sama/core.hpp"

namespace sama::data {

struct Sequence {
  std::string id;
  std::string skeleton;
  double fps = 50.0;
  PoseSeq pose2d;
  std::optional<PoseSeq> pose3d;  // absent for inference-only sequences
};

using Dataset = std::vector<Sequence>;

/// Pinhole camera looking down +z with the skeleton root `depth_offset` mm in
/// front of it: (u, v) = focal * (X, Y) / (z + depth_offset).
struct Camera {
  double focal = 1.0;
  double depth_offset = 4000.0;
};

struct SyntheticSpec {
  std::size_t n_sequences = 16;
  std::size_t frames = 64;
  std::string skeleton = "h36m17";
  double fps = 50.0;
  /// Per-joint oscillation amplitude (mm of arc at the joint) and frequency
  /// (Hz). Empty = default_motion_profile(). The root entry is ignored.
  std::vector<double> amplitude_mm;
  std::vector<double> frequency_hz;
  double noise_std_2d = 0.0;
  /// Half-range of the random per-sequence yaw, radians.
  double max_yaw = 0.5;
  std::uint64_t seed = 0;
  Camera camera;
};

struct MotionProfile {
  std::vector<double> amplitude_mm;
  std::vector<double> frequency_hz;
};

/// Default per-joint amplitudes: zero at the root, small along the trunk and
/// increasing towards hands and feet.
MotionProfile default_motion_profile(const JointGraph& graph);

/// Rest-pose bone offsets from each joint's parent (mm).
std::vector<std::array<double, 3>> rest_offsets(const JointGraph& graph);

/// Each bone rotates about its parent joint with a sinusoidal angle whose
/// arc amplitude at the child is amplitude_mm; positions follow by forward
/// kinematics, so bone lengths are exact in every frame. 3D poses are root
/// relative; 2D inputs are the camera projection plus Gaussian noise.
Dataset generate_synthetic(const SyntheticSpec& spec);

/// Projects one root-relative 3D pose sequence.
PoseSeq project(const PoseSeq& pose3d, const Camera& camera);

/// Mean frame-to-frame displacement of every joint.
std::vector<double> motion_intensity(const PoseSeq& seq);

/// One JSON object per line:
///   {"id", "skeleton", "fps", "pose2d": [T][N][2], "pose3d": [T][N][3] (optional)}
void save_dataset(const std::filesystem::path& path, const Dataset& dataset);
/// Throws std::runtime_error naming the line on malformed input, or when a
/// sequence's skeleton differs from `expected_skeleton` (if given).
Dataset load_dataset(const std::filesystem::path& path, const std::optional<std::string>& expected_skeleton = std::nullopt);

struct Batch {
  Tensor input;   // [B][T][N][2]
  Tensor target;  // [B][T][N][3], root joint at the origin
  std::vector<std::size_t> sequence;  // source sequence per item
  std::vector<std::size_t> start;     // clip start per item
};

struct BatcherOptions {
  std::size_t batch = 4;
  std::size_t clip_len = 8;
  std::size_t stride = 8;
};

/// Cuts clips of clip_len frames. Every sequence yields
/// (len - clip_len) / stride + 1 clips per epoch: at fixed strided starts in
/// eval mode, at uniform random starts (then shuffled) in train mode.
class Batcher {
 public:
  Batcher(const Dataset& dataset, BatcherOptions options);

  std::vector<Batch> eval_batches() const;
  std::vector<Batch> train_batches(Rng& rng) const;
  std::size_t clips_per_epoch() const;

 private:
  Batch make_batch(std::span<const std::pair<std::size_t, std::size_t>> clips) const;

  const Dataset* dataset_;
  BatcherOptions options_;
};

}  // namespace sama::data
