#include "sama/ssi.hpp"

#include <algorithm>
#include <cmath>

namespace sama::ssi {

Tensor normalized_adjacency(const JointGraph& graph) {
  const std::size_t N = graph.n_joints;
  Tensor out({N, N});
  for (std::size_t a = 0; a < N; ++a) {
    if (graph.degree.at(a) == 0) throw std::invalid_argument("normalized_adjacency: zero degree at joint " + std::to_string(a));
    for (std::size_t k = 0; k < N; ++k) {
      const double link = graph.m_o[a * N + k] + (a == k ? 1.0 : 0.0);
      out[a * N + k] = link / std::sqrt(static_cast<double>(graph.degree[a] * graph.degree[k]));
    }
  }
  return out;
}

Tensor row_softmax(const Tensor& pre) {
  if (pre.rank() != 2) throw std::invalid_argument("row_softmax: expects a matrix");
  const std::size_t R = pre.dim(0), C = pre.dim(1);
  Tensor out = pre;
  for (std::size_t r = 0; r < R; ++r) {
    double* p = out.row(r, C);
    const double mx = *std::max_element(p, p + C);
    double z = 0.0;
    for (std::size_t i = 0; i < C; ++i) z += (p[i] = std::exp(p[i] - mx));
    for (std::size_t i = 0; i < C; ++i) p[i] /= z;
  }
  return out;
}

LearnableAdjacency build_adjacency(const JointGraph& graph, ParamStore& store, const std::string& name) {
  Param p{name, normalized_adjacency(graph), Tensor({graph.n_joints, graph.n_joints})};
  return LearnableAdjacency{&store.adopt(std::move(p))};
}

Tensor fuse_features(const Tensor& x, const Tensor& m) {
  if (x.rank() != 2 || m.rank() != 2 || m.dim(0) != x.dim(0) || m.dim(1) != x.dim(0))
    throw std::invalid_argument("fuse_features: expects x [N][d] and m [N][N]");
  const std::size_t N = x.dim(0), d = x.dim(1);
  Tensor out = x;
  for (std::size_t a = 0; a < N; ++a)
    for (std::size_t k = 0; k < N; ++k) {
      const double w = m[a * N + k];
      for (std::size_t c = 0; c < d; ++c) out[a * d + c] += w * x[k * d + c];
    }
  return out;
}

Tensor ssi_scan(const Tensor& x, const Tensor& m, const ssm::SelectiveWeights& w, const std::optional<Tensor>& d_skip,
                bool zero_fusion) {
  const Tensor xf = zero_fusion ? x : fuse_features(x, m);
  const auto params = ssm::selective_project(xf, w);
  Tensor states;
  Tensor y = ssm::scan_recurrent_states(xf, params, &states);
  const std::size_t N = x.dim(0), d = x.dim(1), n = params.state_dim();
  if (!zero_fusion) {
    const std::size_t hsz = d * n;
    std::vector<double> fused(hsz);
    for (std::size_t a = 0; a < N; ++a) {
      std::copy_n(&states[a * hsz], hsz, fused.begin());
      for (std::size_t k = 0; k < N; ++k)
        for (std::size_t e = 0; e < hsz; ++e) fused[e] += m[a * N + k] * states[k * hsz + e];
      for (std::size_t i = 0; i < d; ++i) {
        double acc = 0.0;
        for (std::size_t k = 0; k < n; ++k) acc += fused[i * n + k] * params.c[a * n + k];
        y[a * d + i] = acc;
      }
    }
  }
  if (d_skip) {
    if (d_skip->shape != Shape{d}) throw std::invalid_argument("ssi_scan: d_skip must be [d]");
    for (std::size_t a = 0; a < N; ++a)
      for (std::size_t i = 0; i < d; ++i) y[a * d + i] += (*d_skip)[i] * xf[a * d + i];
  }
  return y;
}

SsiLayer::SsiLayer(ParamStore& store, const std::string& prefix, const ModelConfig& cfg, const JointGraph& graph)
    : adjacency_(build_adjacency(graph, store, prefix + "adjacency")), mixer_(store, prefix, cfg) {}

ad::Var SsiLayer::forward(ad::Tape& tape, ad::Var x, bool zero_fusion) const {
  if (zero_fusion) return mixer_.forward(tape, x);
  auto m = adjacency_.m(tape);
  auto fused = ad::add(x, ad::mix_rows(x, m));
  return mixer_.forward(tape, fused, std::nullopt, m);
}

}  // namespace sama::ssi
