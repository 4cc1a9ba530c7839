#include "sama/data.hpp"

#include <array>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include <Eigen/Geometry>
#include <json.hpp>

namespace sama::data {

namespace {

using Vec3 = Eigen::Vector3d;

std::vector<std::size_t> topo_order(const std::vector<std::size_t>& parent) {
  std::vector<std::size_t> order{0};
  for (std::size_t i = 0; i < order.size(); ++i)
    for (std::size_t j = 0; j < parent.size(); ++j)
      if (j != 0 && parent[j] == order[i]) order.push_back(j);
  return order;
}

std::pair<Vec3, Vec3> normal_axes(const Vec3& bone) {
  if (bone.norm() == 0.0) return {Vec3::UnitX(), Vec3::UnitZ()};
  const Vec3 u = bone.normalized();
  const Vec3 ref = std::abs(u.z()) < 0.9 ? Vec3::UnitZ() : Vec3::UnitX();
  const Vec3 e1 = u.cross(ref).normalized();
  return {e1, u.cross(e1)};
}

nlohmann::json pose_to_json(const PoseSeq& p) {
  auto frames = nlohmann::json::array();
  for (std::size_t t = 0; t < p.frames(); ++t) {
    auto joints = nlohmann::json::array();
    for (std::size_t j = 0; j < p.joints(); ++j) {
      auto c = nlohmann::json::array();
      for (std::size_t k = 0; k < p.coords(); ++k) c.push_back(p.at(t, j, k));
      joints.push_back(std::move(c));
    }
    frames.push_back(std::move(joints));
  }
  return frames;
}

PoseSeq pose_from_json(const nlohmann::json& j, std::size_t coords, const char* field) {
  if (!j.is_array() || j.empty()) throw std::invalid_argument(std::string(field) + " must be a non-empty [T][N][k] array");
  const std::size_t T = j.size();
  const std::size_t N = j.at(0).size();
  std::vector<double> values;
  values.reserve(T * N * coords);
  for (const auto& frame : j) {
    if (!frame.is_array() || frame.size() != N) throw std::invalid_argument(std::string(field) + ": ragged joint axis");
    for (const auto& pt : frame) {
      if (!pt.is_array() || pt.size() != coords)
        throw std::invalid_argument(std::string(field) + ": expected " + std::to_string(coords) + " coordinates");
      for (const auto& v : pt) {
        if (!v.is_number()) throw std::invalid_argument(std::string(field) + ": non-numeric coordinate");
        values.push_back(v.get<double>());
      }
    }
  }
  PoseSeq p(T, N, coords, std::move(values));
  p.require_finite(field);
  return p;
}

}  // namespace

MotionProfile default_motion_profile(const JointGraph& graph) {
  const std::size_t N = graph.n_joints;
  MotionProfile m;
  if (graph.name == "h36m17") {
    //               root hipR kneeR ankR hipL kneeL ankL spine thor neck head shL  elL  wrL  shR  elR  wrR
    m.amplitude_mm = {0.0, 5.0, 80.0, 130.0, 6.0, 70.0, 115.0, 4.0, 11.0, 13.0, 15.0, 60.0, 90.0, 150.0, 65.0, 95.0, 160.0};
    m.frequency_hz = {0.0, 0.83, 1.03, 1.13, 0.87, 1.07, 1.17, 0.41, 0.47, 0.53, 0.59, 0.91, 1.21, 1.39, 0.97, 1.27, 1.43};
    return m;
  }
  // generic presets: amplitude grows with tree depth
  const auto parent = graph.parents();
  std::vector<std::size_t> depth(N, 0);
  for (auto j : topo_order(parent))
    if (j != 0) depth[j] = depth[parent[j]] + 1;
  m.amplitude_mm.resize(N);
  m.frequency_hz.resize(N);
  for (std::size_t j = 0; j < N; ++j) {
    m.amplitude_mm[j] = 20.0 * static_cast<double>(depth[j]);
    m.frequency_hz[j] = 0.5 + 0.1 * static_cast<double>(depth[j]);
  }
  return m;
}

std::vector<std::array<double, 3>> rest_offsets(const JointGraph& graph) {
  if (graph.name == "h36m17") {
    return {{0, 0, 0},   {-130, 0, 0}, {0, -440, 0}, {0, -440, 0}, {130, 0, 0}, {0, -440, 0},
            {0, -440, 0}, {0, 230, 0}, {0, 250, 0},  {0, 110, 0},  {0, 110, 0}, {150, 0, 0},
            {0, -280, 0}, {0, -250, 0}, {-150, 0, 0}, {0, -280, 0}, {0, -250, 0}};
  }
  std::vector<std::array<double, 3>> off(graph.n_joints, {0.0, 200.0, 0.0});
  off[0] = {0, 0, 0};
  return off;
}

PoseSeq project(const PoseSeq& pose3d, const Camera& camera) {
  PoseSeq out(pose3d.frames(), pose3d.joints(), 2);
  for (std::size_t t = 0; t < pose3d.frames(); ++t)
    for (std::size_t j = 0; j < pose3d.joints(); ++j) {
      const double z = pose3d.at(t, j, 2) + camera.depth_offset;
      if (!(z > 0.0)) throw std::domain_error("project: joint behind the camera");
      out.at(t, j, 0) = camera.focal * pose3d.at(t, j, 0) / z;
      out.at(t, j, 1) = camera.focal * pose3d.at(t, j, 1) / z;
    }
  return out;
}

Dataset generate_synthetic(const SyntheticSpec& spec) {
  const auto graph = JointGraph::preset(spec.skeleton);
  const std::size_t N = graph.n_joints, T = spec.frames;
  if (T < 1) throw std::invalid_argument("generate_synthetic: frames must be positive");
  auto profile = default_motion_profile(graph);
  if (!spec.amplitude_mm.empty()) profile.amplitude_mm = spec.amplitude_mm;
  if (!spec.frequency_hz.empty()) profile.frequency_hz = spec.frequency_hz;
  if (profile.amplitude_mm.size() != N || profile.frequency_hz.size() != N)
    throw std::invalid_argument("generate_synthetic: motion profile needs one entry per joint");
  for (double a : profile.amplitude_mm)
    if (!(a >= 0.0)) throw std::invalid_argument("generate_synthetic: amplitudes must be non-negative");
  if (!(spec.noise_std_2d >= 0.0)) throw std::invalid_argument("generate_synthetic: negative noise");

  const auto parent = graph.parents();
  const auto order = topo_order(parent);
  const auto offsets = rest_offsets(graph);

  Dataset out;
  for (std::size_t s = 0; s < spec.n_sequences; ++s) {
    Rng rng(derive_seed(spec.seed, "sequence" + std::to_string(s)));
    const double yaw = rng.uniform(-spec.max_yaw, spec.max_yaw);
    // one tempo factor per sequence keeps the per-joint intensity ordering
    const double tempo = rng.uniform(0.8, 1.2);
    std::vector<double> phase(N);
    for (std::size_t j = 0; j < N; ++j) {
      phase[j] = rng.uniform(0.0, 2.0 * std::numbers::pi);
    }
    PoseSeq pose3d(T, N, 3);
    std::vector<Eigen::Matrix3d> frame(N);
    std::vector<Vec3> pos(N);
    for (std::size_t t = 0; t < T; ++t) {
      const double time = static_cast<double>(t) / spec.fps;
      frame[0] = Eigen::AngleAxisd(yaw, Vec3::UnitY()).toRotationMatrix();
      pos[0].setZero();
      for (std::size_t idx = 1; idx < order.size(); ++idx) {
        const std::size_t j = order[idx];
        const Vec3 off(offsets[j][0], offsets[j][1], offsets[j][2]);
        const double len = off.norm();
        const double amp = len > 0.0 ? profile.amplitude_mm[j] / len : 0.0;
        const double w = 2.0 * std::numbers::pi * profile.frequency_hz[j] * tempo;
        // quadrature pair about two axes normal to the bone: the child sweeps a
        // cone at constant angular speed, so its mean displacement does not
        // depend on the phase
        const auto [e1, e2] = normal_axes(off);
        const double a1 = amp * std::sin(w * time + phase[j]);
        const double a2 = amp * std::cos(w * time + phase[j]);
        const Eigen::Matrix3d local = (Eigen::AngleAxisd(a1, e1) * Eigen::AngleAxisd(a2, e2)).toRotationMatrix();
        frame[j] = frame[parent[j]] * local;
        pos[j] = pos[parent[j]] + frame[j] * off;
      }
      for (std::size_t j = 0; j < N; ++j)
        for (std::size_t c = 0; c < 3; ++c) pose3d.at(t, j, c) = pos[j](static_cast<Eigen::Index>(c));
    }
    PoseSeq pose2d = project(pose3d, spec.camera);
    if (spec.noise_std_2d > 0.0)
      for (auto& v : pose2d.values()) v += spec.noise_std_2d * rng.normal();
    out.push_back(Sequence{"synthetic_" + std::to_string(s), graph.name, spec.fps, std::move(pose2d), std::move(pose3d)});
  }
  return out;
}

std::vector<double> motion_intensity(const PoseSeq& seq) {
  const std::size_t T = seq.frames(), N = seq.joints(), k = seq.coords();
  std::vector<double> out(N, 0.0);
  if (T < 2) return out;
  for (std::size_t t = 1; t < T; ++t)
    for (std::size_t j = 0; j < N; ++j) {
      double d2 = 0.0;
      for (std::size_t c = 0; c < k; ++c) {
        const double diff = seq.at(t, j, c) - seq.at(t - 1, j, c);
        d2 += diff * diff;
      }
      out[j] += std::sqrt(d2);
    }
  for (auto& v : out) v /= static_cast<double>(T - 1);
  return out;
}

// ---------------------------------------------------------------------------

void save_dataset(const std::filesystem::path& path, const Dataset& dataset) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write dataset " + path.string());
  for (const auto& seq : dataset) {
    nlohmann::json j{{"id", seq.id}, {"skeleton", seq.skeleton}, {"fps", seq.fps}, {"pose2d", pose_to_json(seq.pose2d)}};
    if (seq.pose3d) j["pose3d"] = pose_to_json(*seq.pose3d);
    os << j.dump() << '\n';
  }
  if (!os) throw std::runtime_error("failed writing dataset " + path.string());
}

Dataset load_dataset(const std::filesystem::path& path, const std::optional<std::string>& expected_skeleton) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open dataset " + path.string());
  Dataset out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = path.string() + ":" + std::to_string(line_no) + ": ";
    try {
      const auto j = nlohmann::json::parse(line);
      Sequence seq;
      seq.id = j.at("id").get<std::string>();
      seq.skeleton = j.at("skeleton").get<std::string>();
      seq.fps = j.at("fps").get<double>();
      seq.pose2d = pose_from_json(j.at("pose2d"), 2, "pose2d");
      if (j.contains("pose3d")) {
        seq.pose3d = pose_from_json(j.at("pose3d"), 3, "pose3d");
        if (seq.pose3d->frames() != seq.pose2d.frames() || seq.pose3d->joints() != seq.pose2d.joints())
          throw std::invalid_argument("pose2d and pose3d shapes differ");
      }
      if (expected_skeleton && seq.skeleton != *expected_skeleton)
        throw std::invalid_argument("skeleton mismatch: sequence uses '" + seq.skeleton + "', expected '" +
                                    *expected_skeleton + "'");
      const auto graph = JointGraph::preset(seq.skeleton);
      if (graph.n_joints != seq.pose2d.joints())
        throw std::invalid_argument("skeleton mismatch: '" + seq.skeleton + "' has " + std::to_string(graph.n_joints) +
                                    " joints, sequence has " + std::to_string(seq.pose2d.joints()));
      out.push_back(std::move(seq));
    } catch (const std::exception& e) {
      throw std::runtime_error(where + e.what());
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

Batcher::Batcher(const Dataset& dataset, BatcherOptions options) : dataset_(&dataset), options_(options) {
  if (options_.batch == 0 || options_.clip_len == 0 || options_.stride == 0)
    throw std::invalid_argument("Batcher: batch, clip_len and stride must be positive");
  for (const auto& seq : dataset) {
    if (!seq.pose3d) throw std::invalid_argument("Batcher: sequence '" + seq.id + "' has no 3D targets");
    if (seq.pose2d.frames() < options_.clip_len)
      throw std::invalid_argument("Batcher: sequence '" + seq.id + "' is shorter than the clip length");
  }
}

std::size_t Batcher::clips_per_epoch() const {
  std::size_t n = 0;
  for (const auto& seq : *dataset_) n += (seq.pose2d.frames() - options_.clip_len) / options_.stride + 1;
  return n;
}

Batch Batcher::make_batch(std::span<const std::pair<std::size_t, std::size_t>> clips) const {
  const std::size_t B = clips.size(), T = options_.clip_len;
  const std::size_t N = dataset_->at(clips[0].first).pose2d.joints();
  Batch b{Tensor({B, T, N, 2}), Tensor({B, T, N, 3}), {}, {}};
  for (std::size_t i = 0; i < B; ++i) {
    const auto [s, start] = clips[i];
    const auto& seq = dataset_->at(s);
    if (seq.pose2d.joints() != N) throw std::invalid_argument("Batcher: mixed joint counts in one batch");
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t j = 0; j < N; ++j) {
        for (std::size_t c = 0; c < 2; ++c) b.input[((i * T + t) * N + j) * 2 + c] = seq.pose2d.at(start + t, j, c);
        for (std::size_t c = 0; c < 3; ++c)
          b.target[((i * T + t) * N + j) * 3 + c] = seq.pose3d->at(start + t, j, c) - seq.pose3d->at(start + t, 0, c);
      }
    b.sequence.push_back(s);
    b.start.push_back(start);
  }
  return b;
}

std::vector<Batch> Batcher::eval_batches() const {
  std::vector<std::pair<std::size_t, std::size_t>> clips;
  for (std::size_t s = 0; s < dataset_->size(); ++s) {
    const std::size_t len = (*dataset_)[s].pose2d.frames();
    for (std::size_t start = 0; start + options_.clip_len <= len; start += options_.stride) clips.emplace_back(s, start);
  }
  std::vector<Batch> out;
  for (std::size_t i = 0; i < clips.size(); i += options_.batch)
    out.push_back(make_batch(std::span(clips).subspan(i, std::min(options_.batch, clips.size() - i))));
  return out;
}

std::vector<Batch> Batcher::train_batches(Rng& rng) const {
  std::vector<std::pair<std::size_t, std::size_t>> clips;
  for (std::size_t s = 0; s < dataset_->size(); ++s) {
    const std::size_t len = (*dataset_)[s].pose2d.frames();
    const std::size_t count = (len - options_.clip_len) / options_.stride + 1;
    for (std::size_t c = 0; c < count; ++c) clips.emplace_back(s, rng.index(len - options_.clip_len + 1));
  }
  for (std::size_t i = clips.size(); i > 1; --i) std::swap(clips[i - 1], clips[rng.index(i)]);
  std::vector<Batch> out;
  for (std::size_t i = 0; i < clips.size(); i += options_.batch)
    out.push_back(make_batch(std::span(clips).subspan(i, std::min(options_.batch, clips.size() - i))));
  return out;
}

}  // namespace sama::data
