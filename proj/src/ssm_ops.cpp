#include "sama/ssm_ops.hpp"

#include <cmath>

#include "sama/ssm.hpp"

namespace sama::ssm {

namespace {

struct ScanDims {
  std::size_t S, L, d, H, p, n;
};

ScanDims scan_dims(ad::Var x, ad::Var alpha, ad::Var b_bar, ad::Var c) {
  const auto& xs = x.shape();
  if (xs.size() != 3) throw std::invalid_argument("ssd_scan: x must be [S][L][d]");
  const std::size_t S = xs[0], L = xs[1], d = xs[2];
  const auto& as = alpha.shape();
  if (as.size() != 3 || as[0] != S || as[1] != L) throw std::invalid_argument("ssd_scan: alpha must be [S][L][H]");
  const std::size_t H = as[2];
  if (H == 0 || d % H != 0) throw std::invalid_argument("ssd_scan: channels not divisible by heads");
  const auto& cs = c.shape();
  if (cs.size() != 3 || cs[0] != S || cs[1] != L) throw std::invalid_argument("ssd_scan: c must be [S][L][n]");
  const std::size_t n = cs[2];
  if (b_bar.shape() != Shape{S, L, H, n}) throw std::invalid_argument("ssd_scan: b_bar must be [S][L][H][n]");
  return {S, L, d, H, d / H, n};
}

}  // namespace

double softplus_inverse(double y) {
  if (!(y > 0.0)) throw std::invalid_argument("softplus_inverse: argument must be positive");
  if (y > 30.0) return y;
  return std::log(std::expm1(y));
}

ad::Var zoh_alpha(ad::Var delta, ad::Var a_log) {
  const std::size_t H = a_log.size();
  if (delta.shape().empty() || delta.shape().back() != H)
    throw std::invalid_argument("zoh_alpha: delta last axis must match heads");
  Tensor out = delta.value();
  const auto& al = a_log.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(out[i] * decay_rate(al[i % H]));
  Tensor saved = out;
  return delta.tape->record(std::move(out), {delta, a_log},
                            [delta, a_log, H, saved = std::move(saved)](ad::Tape& t, const Tensor& g) {
                              const auto& dv = t.value(delta);
                              const auto& al = t.value(a_log);
                              auto* gd = t.grad_slot(delta);
                              auto* ga = t.grad_slot(a_log);
                              for (std::size_t i = 0; i < g.size(); ++i) {
                                const double a = decay_rate(al[i % H]);
                                if (gd) (*gd)[i] += g[i] * saved[i] * a;
                                // d a / d a_log = a
                                if (ga) (*ga)[i % H] += g[i] * saved[i] * dv[i] * a;
                              }
                            });
}

ad::Var zoh_gain(ad::Var delta, ad::Var a_log) {
  const std::size_t H = a_log.size();
  if (delta.shape().empty() || delta.shape().back() != H)
    throw std::invalid_argument("zoh_gain: delta last axis must match heads");
  Tensor out = delta.value();
  const auto& al = a_log.value();
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (!(out[i] > 0.0)) throw std::invalid_argument("zoh_gain: delta must be positive");
    out[i] = ssm::zoh_gain(out[i], decay_rate(al[i % H]));
  }
  return delta.tape->record(std::move(out), {delta, a_log}, [delta, a_log, H](ad::Tape& t, const Tensor& g) {
    const auto& dv = t.value(delta);
    const auto& al = t.value(a_log);
    auto* gd = t.grad_slot(delta);
    auto* ga = t.grad_slot(a_log);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double a = decay_rate(al[i % H]);
      const auto [d_delta, d_a] = zoh_gain_partials(dv[i], a);
      if (gd) (*gd)[i] += g[i] * d_delta;
      if (ga) (*ga)[i % H] += g[i] * d_a * a;
    }
  });
}

ad::Var head_outer(ad::Var gain, ad::Var b) {
  const auto& gs = gain.shape();
  const auto& bs = b.shape();
  if (gs.size() != 3 || bs.size() != 3 || gs[0] != bs[0] || gs[1] != bs[1])
    throw std::invalid_argument("head_outer: expects gain [S][L][H] and b [S][L][n]");
  const std::size_t SL = gs[0] * gs[1], H = gs[2], n = bs[2];
  Tensor out({gs[0], gs[1], H, n});
  const auto& gv = gain.value();
  const auto& bv = b.value();
  for (std::size_t r = 0; r < SL; ++r)
    for (std::size_t h = 0; h < H; ++h)
      for (std::size_t k = 0; k < n; ++k) out[(r * H + h) * n + k] = gv[r * H + h] * bv[r * n + k];
  return gain.tape->record(std::move(out), {gain, b}, [gain, b, SL, H, n](ad::Tape& t, const Tensor& g) {
    const auto& gv = t.value(gain);
    const auto& bv = t.value(b);
    auto* gg = t.grad_slot(gain);
    auto* gb = t.grad_slot(b);
    for (std::size_t r = 0; r < SL; ++r)
      for (std::size_t h = 0; h < H; ++h)
        for (std::size_t k = 0; k < n; ++k) {
          const double go = g[(r * H + h) * n + k];
          if (gg) (*gg)[r * H + h] += go * bv[r * n + k];
          if (gb) (*gb)[r * n + k] += go * gv[r * H + h];
        }
  });
}

ad::Var ssd_scan(ad::Var x, ad::Var alpha, ad::Var b_bar, ad::Var c, std::optional<ad::Var> fusion) {
  const auto dims = scan_dims(x, alpha, b_bar, c);
  const auto [S, L, d, H, P, n] = dims;
  if (fusion && fusion->shape() != Shape{L, L}) throw std::invalid_argument("ssd_scan: fusion must be [L][L]");

  const auto& xv = x.value();
  const auto& av = alpha.value();
  const auto& bv = b_bar.value();
  const auto& cv = c.value();
  const double* mv = fusion ? fusion->value().data.data() : nullptr;

  // states[s][l][h][i][k]
  const std::size_t hsz = P * n;
  Tensor states({S, L, H, P, n});
  Tensor out({S, L, d});
  std::vector<double> fused(hsz);
  for (std::size_t s = 0; s < S; ++s) {
    for (std::size_t h = 0; h < H; ++h) {
      const double* prev = nullptr;
      for (std::size_t l = 0; l < L; ++l) {
        const std::size_t sl = s * L + l;
        const double a = av[sl * H + h];
        const double* xt = &xv[sl * d + h * P];
        const double* bt = &bv[(sl * H + h) * n];
        double* cur = &states[(sl * H + h) * hsz];
        for (std::size_t i = 0; i < P; ++i)
          for (std::size_t k = 0; k < n; ++k)
            cur[i * n + k] = (prev ? a * prev[i * n + k] : 0.0) + xt[i] * bt[k];
        prev = cur;
      }
      for (std::size_t l = 0; l < L; ++l) {
        const std::size_t sl = s * L + l;
        const double* hl = &states[(sl * H + h) * hsz];
        const double* src = hl;
        if (mv) {
          std::copy(hl, hl + hsz, fused.begin());
          for (std::size_t k = 0; k < L; ++k) {
            const double m = mv[l * L + k];
            const double* hk = &states[((s * L + k) * H + h) * hsz];
            for (std::size_t e = 0; e < hsz; ++e) fused[e] += m * hk[e];
          }
          src = fused.data();
        }
        const double* ct = &cv[sl * n];
        double* yt = &out[sl * d + h * P];
        for (std::size_t i = 0; i < P; ++i) {
          double acc = 0.0;
          for (std::size_t k = 0; k < n; ++k) acc += src[i * n + k] * ct[k];
          yt[i] = acc;
        }
      }
    }
  }
  ad::mac_counter() += 2 * S * L * d * n + (mv ? S * L * L * d * n : 0);

  auto vjp = [x, alpha, b_bar, c, fusion, dims, states = std::move(states)](ad::Tape& t, const Tensor& gy) {
    const auto [S, L, d, H, P, n] = dims;
    const std::size_t hsz = P * n;
    const auto& xv = t.value(x);
    const auto& av = t.value(alpha);
    const auto& bv = t.value(b_bar);
    const auto& cv = t.value(c);
    const double* mv = fusion ? t.value(*fusion).data.data() : nullptr;
    auto* gx = t.grad_slot(x);
    auto* ga = t.grad_slot(alpha);
    auto* gb = t.grad_slot(b_bar);
    auto* gc = t.grad_slot(c);
    auto* gm = fusion ? t.grad_slot(*fusion) : nullptr;

    std::vector<double> gh(L * hsz);  // direct cotangent of each h_l
    std::vector<double> fused(hsz), gfused(hsz), carry(hsz);
    for (std::size_t s = 0; s < S; ++s) {
      for (std::size_t h = 0; h < H; ++h) {
        auto state = [&](std::size_t l) { return &states[((s * L + l) * H + h) * hsz]; };
        std::fill(gh.begin(), gh.end(), 0.0);
        // readout
        for (std::size_t l = 0; l < L; ++l) {
          const std::size_t sl = s * L + l;
          const double* gyt = &gy[sl * d + h * P];
          const double* ct = &cv[sl * n];
          const double* src = state(l);
          if (mv) {
            std::copy(src, src + hsz, fused.begin());
            for (std::size_t k = 0; k < L; ++k) {
              const double m = mv[l * L + k];
              const double* hk = state(k);
              for (std::size_t e = 0; e < hsz; ++e) fused[e] += m * hk[e];
            }
            src = fused.data();
          }
          if (gc)
            for (std::size_t i = 0; i < P; ++i)
              for (std::size_t k = 0; k < n; ++k) (*gc)[sl * n + k] += src[i * n + k] * gyt[i];
          for (std::size_t i = 0; i < P; ++i)
            for (std::size_t k = 0; k < n; ++k) gfused[i * n + k] = gyt[i] * ct[k];
          if (mv) {
            // H_l = h_l + sum_k M_lk h_k
            for (std::size_t k = 0; k < L; ++k) {
              const double m = mv[l * L + k];
              double* ghk = &gh[k * hsz];
              for (std::size_t e = 0; e < hsz; ++e) ghk[e] += (k == l ? 1.0 + m : m) * gfused[e];
              if (gm) {
                const double* hk = state(k);
                double acc = 0.0;
                for (std::size_t e = 0; e < hsz; ++e) acc += gfused[e] * hk[e];
                (*gm)[l * L + k] += acc;
              }
            }
          } else {
            double* ghl = &gh[l * hsz];
            for (std::size_t e = 0; e < hsz; ++e) ghl[e] += gfused[e];
          }
        }
        // reverse recurrence
        std::fill(carry.begin(), carry.end(), 0.0);
        for (std::size_t l = L; l-- > 0;) {
          const std::size_t sl = s * L + l;
          if (l + 1 < L) {
            const double a_next = av[(sl + 1) * H + h];
            for (std::size_t e = 0; e < hsz; ++e) carry[e] *= a_next;
          }
          const double* ghl = &gh[l * hsz];
          for (std::size_t e = 0; e < hsz; ++e) carry[e] += ghl[e];
          const double* xt = &xv[sl * d + h * P];
          const double* bt = &bv[(sl * H + h) * n];
          if (gx)
            for (std::size_t i = 0; i < P; ++i) {
              double acc = 0.0;
              for (std::size_t k = 0; k < n; ++k) acc += carry[i * n + k] * bt[k];
              (*gx)[sl * d + h * P + i] += acc;
            }
          if (gb)
            for (std::size_t k = 0; k < n; ++k) {
              double acc = 0.0;
              for (std::size_t i = 0; i < P; ++i) acc += carry[i * n + k] * xt[i];
              (*gb)[(sl * H + h) * n + k] += acc;
            }
          if (ga && l > 0) {
            const double* hp = state(l - 1);
            double acc = 0.0;
            for (std::size_t e = 0; e < hsz; ++e) acc += carry[e] * hp[e];
            (*ga)[sl * H + h] += acc;
          }
        }
      }
    }
  };
  if (fusion) return x.tape->record(std::move(out), {x, alpha, b_bar, c, *fusion}, std::move(vjp));
  return x.tape->record(std::move(out), {x, alpha, b_bar, c}, std::move(vjp));
}

// ---------------------------------------------------------------------------

SsdMixer::SsdMixer(ParamStore& store, const std::string& prefix, const ModelConfig& cfg)
    : dim_(cfg.dim), state_(cfg.state_dim), heads_(cfg.heads) {
  const auto d = dim_, n = state_, H = heads_;
  const auto seed = cfg.seed;
  w_b_ = &store.add(prefix + "w_b", {d, n}, InitScheme::uniform_fan_in(d), seed);
  bias_b_ = &store.add(prefix + "bias_b", {n}, InitScheme::zeros(), seed);
  w_c_ = &store.add(prefix + "w_c", {d, n}, InitScheme::uniform_fan_in(d), seed);
  bias_c_ = &store.add(prefix + "bias_c", {n}, InitScheme::zeros(), seed);
  w_delta_ = &store.add(prefix + "w_delta", {d, H}, InitScheme::uniform_fan_in(d), seed);
  bias_delta_ = &store.add(prefix + "bias_delta", {H}, InitScheme::constant_value(softplus_inverse(cfg.delta_init)), seed);
  a_log_ = &store.add(prefix + "a_log", {H}, InitScheme::zeros(), seed);
  if (cfg.skip_d) d_skip_ = &store.add(prefix + "d_skip", {d}, InitScheme::constant_value(1.0), seed);
  w_out_ = &store.add(prefix + "w_out", {d, d}, InitScheme::uniform_fan_in(d, kResidualOutGain), seed);
  bias_out_ = &store.add(prefix + "bias_out", {d}, InitScheme::zeros(), seed);
}

ad::Var SsdMixer::default_delta_pre(ad::Tape& tape, ad::Var x) const {
  return ad::affine(x, tape.param(*w_delta_), tape.param(*bias_delta_));
}

ad::Var SsdMixer::forward(ad::Tape& tape, ad::Var x, std::optional<ad::Var> delta_pre, std::optional<ad::Var> fusion,
                          Trace* trace) const {
  auto b = ad::affine(x, tape.param(*w_b_), tape.param(*bias_b_));
  auto c = ad::affine(x, tape.param(*w_c_), tape.param(*bias_c_));
  auto pre = delta_pre ? *delta_pre : default_delta_pre(tape, x);
  auto delta = ad::softplus(pre);
  if (trace) trace->delta = delta.value();
  auto a_log = tape.param(*a_log_);
  auto alpha = zoh_alpha(delta, a_log);
  auto b_bar = head_outer(zoh_gain(delta, a_log), b);
  auto y = ssd_scan(x, alpha, b_bar, c, fusion);
  if (d_skip_) y = ad::add(y, ad::mul_last(x, tape.param(*d_skip_)));
  return ad::affine(y, tape.param(*w_out_), tape.param(*bias_out_));
}

}  // namespace sama::ssm
