#include "sama/attention.hpp"

#include <cmath>

#include <Eigen/Dense>

namespace sama::attn {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

RowMat head_slice(const Tensor& t, std::size_t s, std::size_t L, std::size_t d, std::size_t h, std::size_t P) {
  RowMat m(L, P);
  for (std::size_t l = 0; l < L; ++l)
    for (std::size_t i = 0; i < P; ++i) m(l, i) = t[(s * L + l) * d + h * P + i];
  return m;
}

void add_head_slice(Tensor& t, const RowMat& m, std::size_t s, std::size_t L, std::size_t d, std::size_t h,
                    std::size_t P) {
  for (std::size_t l = 0; l < L; ++l)
    for (std::size_t i = 0; i < P; ++i) t[(s * L + l) * d + h * P + i] += m(l, i);
}

}  // namespace

ad::Var attention(ad::Var q, ad::Var k, ad::Var v, std::size_t heads, Tensor* probs) {
  const auto& sh = q.shape();
  if (sh.size() != 3 || k.shape() != sh || v.shape() != sh)
    throw std::invalid_argument("attention: q, k, v must share shape [S][L][d]");
  const std::size_t S = sh[0], L = sh[1], d = sh[2];
  if (heads == 0 || d % heads != 0) throw std::invalid_argument("attention: d must be divisible by heads");
  const std::size_t H = heads, P = d / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(P));

  Tensor p_all({S, H, L, L});
  Tensor out(sh, 0.0);
  for (std::size_t s = 0; s < S; ++s) {
    for (std::size_t h = 0; h < H; ++h) {
      RowMat Q = head_slice(q.value(), s, L, d, h, P);
      RowMat K = head_slice(k.value(), s, L, d, h, P);
      RowMat V = head_slice(v.value(), s, L, d, h, P);
      RowMat A = (Q * K.transpose()) * inv_sqrt;
      for (Eigen::Index i = 0; i < A.rows(); ++i) {
        const double mx = A.row(i).maxCoeff();
        A.row(i) = (A.row(i).array() - mx).exp();
        A.row(i) /= A.row(i).sum();
      }
      std::copy_n(A.data(), L * L, &p_all[((s * H) + h) * L * L]);
      add_head_slice(out, A * V, s, L, d, h, P);
    }
  }
  ad::mac_counter() += 2 * S * L * L * d;
  if (probs) *probs = p_all;

  return q.tape->record(std::move(out), {q, k, v},
                        [q, k, v, S, L, d, H, P, inv_sqrt, p_all = std::move(p_all)](ad::Tape& t, const Tensor& g) {
                          auto* gq = t.grad_slot(q);
                          auto* gk = t.grad_slot(k);
                          auto* gv = t.grad_slot(v);
                          for (std::size_t s = 0; s < S; ++s) {
                            for (std::size_t h = 0; h < H; ++h) {
                              Eigen::Map<const RowMat> A(&p_all[((s * H) + h) * L * L], L, L);
                              RowMat G = head_slice(g, s, L, d, h, P);
                              RowMat V = head_slice(t.value(v), s, L, d, h, P);
                              if (gv) add_head_slice(*gv, A.transpose() * G, s, L, d, h, P);
                              if (!gq && !gk) continue;
                              RowMat gA = G * V.transpose();
                              RowMat gS(L, L);
                              for (std::size_t i = 0; i < L; ++i) {
                                const double dot = A.row(i).dot(gA.row(i));
                                gS.row(i) = A.row(i).array() * (gA.row(i).array() - dot);
                              }
                              gS *= inv_sqrt;
                              if (gq) add_head_slice(*gq, gS * head_slice(t.value(k), s, L, d, h, P), s, L, d, h, P);
                              if (gk) add_head_slice(*gk, gS.transpose() * head_slice(t.value(q), s, L, d, h, P), s, L, d, h, P);
                            }
                          }
                        });
}

AttentionBlock::AttentionBlock(ParamStore& store, const std::string& prefix, const ModelConfig& cfg)
    : heads_(cfg.heads) {
  const auto d = cfg.dim, seed = cfg.seed;
  auto ones = InitScheme::constant_value(1.0);
  auto zeros = InitScheme::zeros();
  auto fan = [](std::size_t n) { return InitScheme::uniform_fan_in(n); };
  norm1_g_ = &store.add(prefix + "norm1_gamma", {d}, ones, seed);
  norm1_b_ = &store.add(prefix + "norm1_beta", {d}, zeros, seed);
  w_q_ = &store.add(prefix + "w_q", {d, d}, fan(d), seed);
  b_q_ = &store.add(prefix + "b_q", {d}, zeros, seed);
  w_k_ = &store.add(prefix + "w_k", {d, d}, fan(d), seed);
  w_v_ = &store.add(prefix + "w_v", {d, d}, fan(d), seed);
  b_v_ = &store.add(prefix + "b_v", {d}, zeros, seed);
  w_o_ = &store.add(prefix + "w_o", {d, d}, InitScheme::uniform_fan_in(d, kResidualOutGain), seed);
  b_o_ = &store.add(prefix + "b_o", {d}, zeros, seed);
  norm2_g_ = &store.add(prefix + "norm2_gamma", {d}, ones, seed);
  norm2_b_ = &store.add(prefix + "norm2_beta", {d}, zeros, seed);
  w_1_ = &store.add(prefix + "mlp_w1", {d, 2 * d}, fan(d), seed);
  b_1_ = &store.add(prefix + "mlp_b1", {2 * d}, zeros, seed);
  w_2_ = &store.add(prefix + "mlp_w2", {2 * d, d}, InitScheme::uniform_fan_in(2 * d, kResidualOutGain), seed);
  b_2_ = &store.add(prefix + "mlp_b2", {d}, zeros, seed);
}

ad::Var AttentionBlock::forward(ad::Tape& tape, ad::Var x, Tensor* probs) const {
  auto p = [&tape](Param* param) { return tape.param(*param); };
  auto h = ad::layer_norm(x, p(norm1_g_), p(norm1_b_));
  auto q = ad::affine(h, p(w_q_), p(b_q_));
  auto k = ad::affine(h, p(w_k_));
  auto v = ad::affine(h, p(w_v_), p(b_v_));
  x = ad::add(x, ad::affine(attention(q, k, v, heads_, probs), p(w_o_), p(b_o_)));
  auto h2 = ad::layer_norm(x, p(norm2_g_), p(norm2_b_));
  auto mlp = ad::affine(ad::gelu(ad::affine(h2, p(w_1_), p(b_1_))), p(w_2_), p(b_2_));
  return ad::add(x, mlp);
}

}  // namespace sama::attn
