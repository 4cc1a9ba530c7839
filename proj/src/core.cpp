#include "sama/core.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <queue>
#include <set>
#include <sstream>

namespace sama {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape s, double fill) : shape(std::move(s)), data(shape_numel(shape), fill) {}

Tensor::Tensor(Shape s, std::vector<double> values) : shape(std::move(s)), data(std::move(values)) {
  if (data.size() != shape_numel(shape))
    throw std::invalid_argument("Tensor: " + std::to_string(data.size()) + " values for shape " + shape_str(shape));
}

void Tensor::fill(double v) { std::fill(data.begin(), data.end(), v); }

bool Tensor::all_finite() const {
  return std::all_of(data.begin(), data.end(), [](double v) { return std::isfinite(v); });
}

// ---------------------------------------------------------------------------

double Rng::uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

double Rng::normal() {
  if (has_cached_) {
    has_cached_ = false;
    return cached_;
  }
  double u1 = 0.0;
  do {
    u1 = uniform();
  } while (u1 <= 0.0);
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double theta = 2.0 * std::numbers::pi * u2;
  cached_ = r * std::sin(theta);
  has_cached_ = true;
  return r * std::cos(theta);
}

std::size_t Rng::index(std::size_t n) {
  if (n == 0) throw std::invalid_argument("Rng::index: empty range");
  // rejection sampling keeps the draw unbiased
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % n;
  std::uint64_t v = 0;
  do {
    v = engine_();
  } while (v >= limit);
  return static_cast<std::size_t>(v % n);
}

Rng seeded_rng(std::uint64_t seed) { return Rng(seed); }

namespace {
std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}
}  // namespace

std::uint64_t derive_seed(std::uint64_t seed, std::string_view name) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : name) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return splitmix64(splitmix64(seed) ^ h);
}

// ---------------------------------------------------------------------------

PoseSeq::PoseSeq(std::size_t frames, std::size_t joints, std::size_t coords)
    : PoseSeq(frames, joints, coords, std::vector<double>(frames * joints * coords, 0.0)) {}

PoseSeq::PoseSeq(std::size_t frames, std::size_t joints, std::size_t coords, std::vector<double> values)
    : frames_(frames), joints_(joints), coords_(coords), data_(std::move(values)) {
  if (frames < 1 || joints < 1) throw std::invalid_argument("PoseSeq: need T >= 1 and N >= 1");
  if (coords != 2 && coords != 3) throw std::invalid_argument("PoseSeq: coordinate dimension must be 2 or 3");
  if (data_.size() != frames * joints * coords)
    throw std::invalid_argument("PoseSeq: value count does not match [T][N][k]");
}

void PoseSeq::require_finite(std::string_view what) const {
  for (std::size_t i = 0; i < data_.size(); ++i) {
    if (!std::isfinite(data_[i])) {
      const std::size_t t = i / (joints_ * coords_);
      const std::size_t j = (i / coords_) % joints_;
      throw std::invalid_argument(std::string(what) + ": non-finite value at frame " + std::to_string(t) +
                                  ", joint " + std::to_string(j));
    }
  }
}

// ---------------------------------------------------------------------------

JointGraph JointGraph::from_edges(std::string name, std::size_t n_joints,
                                  std::vector<std::pair<std::size_t, std::size_t>> edges) {
  if (n_joints == 0) throw std::invalid_argument("JointGraph: no joints");
  JointGraph g;
  g.name = std::move(name);
  g.n_joints = n_joints;
  g.m_o.assign(n_joints * n_joints, 0.0);
  std::set<std::pair<std::size_t, std::size_t>> seen;
  for (auto [a, b] : edges) {
    if (a >= n_joints || b >= n_joints) throw std::invalid_argument("JointGraph: edge references unknown joint");
    if (a == b) throw std::invalid_argument("JointGraph: self loop on joint " + std::to_string(a));
    if (!seen.insert(std::minmax(a, b)).second) throw std::invalid_argument("JointGraph: duplicate edge");
    g.m_o[a * n_joints + b] = 1.0;
    g.m_o[b * n_joints + a] = 1.0;
  }
  g.edges = std::move(edges);
  g.degree.assign(n_joints, 1);
  for (std::size_t a = 0; a < n_joints; ++a)
    for (std::size_t b = 0; b < n_joints; ++b) g.degree[a] += static_cast<std::size_t>(g.m_o[a * n_joints + b]);

  // connectivity
  std::vector<bool> reached(n_joints, false);
  std::queue<std::size_t> q;
  q.push(0);
  reached[0] = true;
  std::size_t count = 1;
  while (!q.empty()) {
    const auto a = q.front();
    q.pop();
    for (std::size_t b = 0; b < n_joints; ++b) {
      if (g.m_o[a * n_joints + b] != 0.0 && !reached[b]) {
        reached[b] = true;
        ++count;
        q.push(b);
      }
    }
  }
  if (count != n_joints) throw std::invalid_argument("JointGraph: graph is not connected");
  return g;
}

JointGraph JointGraph::h36m17() {
  return from_edges("h36m17", 17,
                    {{0, 1}, {1, 2}, {2, 3}, {0, 4}, {4, 5}, {5, 6}, {0, 7}, {7, 8},
                     {8, 9}, {9, 10}, {8, 11}, {11, 12}, {12, 13}, {8, 14}, {14, 15}, {15, 16}});
}

JointGraph JointGraph::chain(std::size_t n) {
  std::vector<std::pair<std::size_t, std::size_t>> edges;
  for (std::size_t i = 1; i < n; ++i) edges.emplace_back(i - 1, i);
  return from_edges("chain" + std::to_string(n), n, std::move(edges));
}

JointGraph JointGraph::preset(const std::string& name) {
  if (name == "h36m17") return h36m17();
  if (name.rfind("chain", 0) == 0 && name.size() > 5) {
    const auto n = std::stoul(name.substr(5));
    return chain(n);
  }
  throw std::invalid_argument("unknown skeleton preset '" + name + "'");
}

std::vector<std::size_t> JointGraph::parents() const {
  std::vector<std::size_t> parent(n_joints, n_joints);
  parent[0] = 0;
  std::queue<std::size_t> q;
  q.push(0);
  while (!q.empty()) {
    const auto a = q.front();
    q.pop();
    for (std::size_t b = 0; b < n_joints; ++b) {
      if (m_o[a * n_joints + b] != 0.0 && parent[b] == n_joints) {
        parent[b] = a;
        q.push(b);
      }
    }
  }
  return parent;
}

// ---------------------------------------------------------------------------

Param init_param(std::string name, const Shape& shape, const InitScheme& scheme, Rng& rng) {
  if (shape.empty()) throw std::invalid_argument("init_param: empty shape for " + name);
  Param p{std::move(name), Tensor(shape), Tensor(shape)};
  switch (scheme.kind) {
    case InitKind::zeros:
      break;
    case InitKind::constant:
      p.value.fill(scheme.constant);
      break;
    case InitKind::uniform_fan_in: {
      if (scheme.fan_in == 0) throw std::invalid_argument("init_param: zero fan-in for " + p.name);
      const double bound = scheme.gain / std::sqrt(static_cast<double>(scheme.fan_in));
      for (auto& v : p.value.data) v = rng.uniform(-bound, bound);
      break;
    }
  }
  return p;
}

Param& ParamStore::add(const std::string& name, const Shape& shape, const InitScheme& scheme, std::uint64_t seed) {
  Rng rng(derive_seed(seed, name));
  return adopt(init_param(name, shape, scheme, rng));
}

Param& ParamStore::adopt(Param p) {
  if (index_.count(p.name)) throw std::invalid_argument("ParamStore: duplicate parameter '" + p.name + "'");
  index_[p.name] = params_.size();
  params_.push_back(std::move(p));
  return params_.back();
}

Param* ParamStore::find(const std::string& name) {
  auto it = index_.find(name);
  return it == index_.end() ? nullptr : &params_[it->second];
}

const Param* ParamStore::find(const std::string& name) const {
  auto it = index_.find(name);
  return it == index_.end() ? nullptr : &params_[it->second];
}

Param& ParamStore::get(const std::string& name) {
  if (auto* p = find(name)) return *p;
  throw std::out_of_range("ParamStore: no parameter '" + name + "'");
}

const Param& ParamStore::get(const std::string& name) const {
  if (const auto* p = find(name)) return *p;
  throw std::out_of_range("ParamStore: no parameter '" + name + "'");
}

void ParamStore::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

std::size_t ParamStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

// ---------------------------------------------------------------------------

std::string to_string(MsmVariant v) { return v == MsmVariant::pointwise_conv ? "pointwise_conv" : "linear"; }

MsmVariant msm_variant_from_string(const std::string& s) {
  if (s == "pointwise_conv") return MsmVariant::pointwise_conv;
  if (s == "linear") return MsmVariant::linear;
  throw std::invalid_argument("unknown msm_variant '" + s + "' (expected pointwise_conv or linear)");
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& what) { throw std::invalid_argument("invalid config: " + what); };
  if (dim == 0) fail("dim must be positive");
  if (state_dim == 0) fail("state_dim must be positive");
  if (heads == 0) fail("heads must be positive");
  if (dim % heads != 0) fail("dim must be divisible by heads");
  if (!(delta_init > 0.0)) fail("delta_init must be positive");
  if (!(output_scale > 0.0)) fail("output_scale must be positive");
  if (!(lambda_m >= 0.0) || !(lambda_n >= 0.0)) fail("loss weights must be non-negative");
  if (!(learning_rate >= 0.0)) fail("learning_rate must be non-negative");
  if (!(weight_decay >= 0.0)) fail("weight_decay must be non-negative");
  if (!(lr_decay > 0.0 && lr_decay <= 1.0)) fail("lr_decay must be in (0, 1]");
  if (epochs == 0) fail("epochs must be positive");
  if (batch_size == 0) fail("batch_size must be positive");
  if (clip_len < 2) fail("clip_len must be at least 2 (velocity loss)");
  if (threads == 0) fail("threads must be positive");
  for (double w : joint_weights)
    if (!(w >= 0.0)) fail("joint_weights must be non-negative");
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"depth", c.depth},
                     {"dim", c.dim},
                     {"state_dim", c.state_dim},
                     {"heads", c.heads},
                     {"msm_variant", to_string(c.msm_variant)},
                     {"use_ssi", c.use_ssi},
                     {"use_msm", c.use_msm},
                     {"skip_d", c.skip_d},
                     {"delta_init", c.delta_init},
                     {"output_scale", c.output_scale},
                     {"skeleton", c.skeleton},
                     {"debug_zero_fusion", c.debug_zero_fusion},
                     {"debug_no_motion", c.debug_no_motion},
                     {"lambda_m", c.lambda_m},
                     {"lambda_n", c.lambda_n},
                     {"joint_weights", c.joint_weights},
                     {"seed", c.seed},
                     {"learning_rate", c.learning_rate},
                     {"weight_decay", c.weight_decay},
                     {"lr_decay", c.lr_decay},
                     {"epochs", c.epochs},
                     {"batch_size", c.batch_size},
                     {"clip_len", c.clip_len},
                     {"checkpoint_every", c.checkpoint_every},
                     {"threads", c.threads}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  if (!j.is_object()) throw std::invalid_argument("config must be a JSON object");
  static const std::set<std::string> known = {
      "depth", "dim", "state_dim", "heads", "msm_variant", "use_ssi", "use_msm", "skip_d", "delta_init",
      "output_scale", "skeleton", "debug_zero_fusion", "debug_no_motion", "lambda_m", "lambda_n",
      "joint_weights", "seed", "learning_rate", "weight_decay", "lr_decay", "epochs", "batch_size",
      "clip_len", "checkpoint_every", "threads"};
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!known.count(it.key())) throw std::invalid_argument("unknown config key '" + it.key() + "'");

  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) j.at(key).get_to(field);
  };
  get("depth", c.depth);
  get("dim", c.dim);
  get("state_dim", c.state_dim);
  get("heads", c.heads);
  if (j.contains("msm_variant")) c.msm_variant = msm_variant_from_string(j.at("msm_variant").get<std::string>());
  get("use_ssi", c.use_ssi);
  get("use_msm", c.use_msm);
  get("skip_d", c.skip_d);
  get("delta_init", c.delta_init);
  get("output_scale", c.output_scale);
  get("skeleton", c.skeleton);
  get("debug_zero_fusion", c.debug_zero_fusion);
  get("debug_no_motion", c.debug_no_motion);
  get("lambda_m", c.lambda_m);
  get("lambda_n", c.lambda_n);
  get("joint_weights", c.joint_weights);
  get("seed", c.seed);
  get("learning_rate", c.learning_rate);
  get("weight_decay", c.weight_decay);
  get("lr_decay", c.lr_decay);
  get("epochs", c.epochs);
  get("batch_size", c.batch_size);
  get("clip_len", c.clip_len);
  get("checkpoint_every", c.checkpoint_every);
  get("threads", c.threads);
}

}  // namespace sama
