// Copyright Contributors to the genassets project
// SPDX-License-Identifier: Apache-2.0
//
// Stage 2: latent diffusion. Forward corruption, denoiser training with
// epsilon- or v-targets, DDIM/DDPM sampling, classifier-free conditioning and
// rendering-guided generation, plus diffusion-prior fine-tuning of stage-1
// scene parameters.
#pragma once

#include <functional>
#include <set>
#include <vector>

#include "genassets/autodecode.hpp"

namespace ga {

enum class ScheduleKind { kLinear, kCosine };
enum class PredictionTarget { kEpsilon, kV };
enum class Solver { kDdim, kDdpm };

struct NoiseSchedule {
  ScheduleKind kind = ScheduleKind::kLinear;
  int steps = 1000;  // T
  // Index t in [1, T]; index 0 holds the conventions alpha_bar(0) = 1.
  std::vector<double> beta, alpha, alpha_bar;

  double sqrt_ab(int t) const { return std::sqrt(alpha_bar[static_cast<std::size_t>(t)]); }
  double sqrt_1mab(int t) const {
    return std::sqrt(1.0 - alpha_bar[static_cast<std::size_t>(t)]);
  }

  void validate() const {
    GA_CHECK(steps >= 1 && static_cast<int>(beta.size()) == steps + 1, ValueError,
             "schedule tables not built");
    GA_CHECK(alpha_bar[0] == 1.0, ValueError, "alpha_bar(0) must be 1");
    for (int t = 1; t <= steps; ++t) {
      GA_CHECK(beta[static_cast<std::size_t>(t)] > 0 && beta[static_cast<std::size_t>(t)] < 1,
               ValueError, "beta out of (0,1)");
      GA_CHECK(alpha_bar[static_cast<std::size_t>(t)] <
                   alpha_bar[static_cast<std::size_t>(t - 1)],
               ValueError, "alpha_bar must be strictly decreasing");
    }
  }
};

inline NoiseSchedule make_schedule(ScheduleKind kind, int T) {
  GA_CHECK(T >= 1, ValueError, "schedule needs T >= 1");
  NoiseSchedule s;
  s.kind = kind;
  s.steps = T;
  s.beta.assign(static_cast<std::size_t>(T) + 1, 0.0);
  s.alpha.assign(static_cast<std::size_t>(T) + 1, 1.0);
  s.alpha_bar.assign(static_cast<std::size_t>(T) + 1, 1.0);
  if (kind == ScheduleKind::kLinear) {
    constexpr double b0 = 1e-4, b1 = 2e-2;
    for (int t = 1; t <= T; ++t)
      s.beta[static_cast<std::size_t>(t)] =
          T == 1 ? b0 : b0 + (b1 - b0) * static_cast<double>(t - 1) / static_cast<double>(T - 1);
  } else {
    constexpr double off = 0.008;
    auto f = [&](double t) {
      const double x = (t / static_cast<double>(T) + off) / (1.0 + off) * 1.5707963267948966;
      return std::cos(x) * std::cos(x);
    };
    const double f0 = f(0.0);
    double prev_ab = 1.0;
    for (int t = 1; t <= T; ++t) {
      const double ab = f(static_cast<double>(t)) / f0;
      double b = 1.0 - ab / prev_ab;
      b = std::min(0.999, std::max(1e-8, b));
      s.beta[static_cast<std::size_t>(t)] = b;
      prev_ab = prev_ab * (1.0 - b);
    }
  }
  for (int t = 1; t <= T; ++t) {
    s.alpha[static_cast<std::size_t>(t)] = 1.0 - s.beta[static_cast<std::size_t>(t)];
    s.alpha_bar[static_cast<std::size_t>(t)] =
        s.alpha_bar[static_cast<std::size_t>(t - 1)] * s.alpha[static_cast<std::size_t>(t)];
  }
  s.validate();
  return s;
}

// Closed-form forward corruption c^(t) = sqrt(ab) c0 + sqrt(1-ab) eps.
template <class T>
Tensor<T> q_sample(const Tensor<T>& c0, int t, const Tensor<T>& eps, const NoiseSchedule& sched) {
  GA_CHECK(t >= 1 && t <= sched.steps, ValueError, "q_sample: t out of range");
  GA_CHECK(c0.shape() == eps.shape(), ShapeError, "q_sample: eps shape mismatch");
  return add(mul(c0, static_cast<T>(sched.sqrt_ab(t))),
             mul(eps, static_cast<T>(sched.sqrt_1mab(t))));
}

// v target: v = sqrt(ab) eps - sqrt(1-ab) c0.
template <class T>
Tensor<T> v_target(const Tensor<T>& c0, int t, const Tensor<T>& eps, const NoiseSchedule& sched) {
  return sub(mul(eps, static_cast<T>(sched.sqrt_ab(t))),
             mul(c0, static_cast<T>(sched.sqrt_1mab(t))));
}

template <class T>
Tensor<T> eps_from_v(const Tensor<T>& c_t, const Tensor<T>& v, int t, const NoiseSchedule& sched) {
  return add(mul(c_t, static_cast<T>(sched.sqrt_1mab(t))),
             mul(v, static_cast<T>(sched.sqrt_ab(t))));
}

template <class T>
Tensor<T> v_from_eps(const Tensor<T>& c_t, const Tensor<T>& eps, int t,
                     const NoiseSchedule& sched) {
  return div(sub(eps, mul(c_t, static_cast<T>(sched.sqrt_1mab(t)))),
             static_cast<T>(sched.sqrt_ab(t)));
}

// ---------------------------------------------------------------------------
// Conditioning.

struct Condition {
  int class_id = -1;  // -1 = null token
  int tod_id = -1;    // -1 = null token

  static Condition none() { return {}; }
  bool is_null() const { return class_id < 0 && tod_id < 0; }
};

struct GuidanceConfig {
  double cfg_weight = 1.0;        // w
  double cond_dropout = 0.1;      // training-time condition dropout
  double render_weight = 0.0;     // lambda in guided sampling
  int ray_budget = 512;

  void validate() const {
    GA_CHECK(cfg_weight >= 0.0, ValueError, "cfg weight must be >= 0");
    GA_CHECK(cond_dropout >= 0.0 && cond_dropout <= 1.0, ValueError, "dropout in [0,1]");
    GA_CHECK(render_weight >= 0.0, ValueError, "render guidance weight must be >= 0");
    GA_CHECK(ray_budget > 0, ValueError, "guidance ray budget must be positive");
  }
};

// Sinusoidal timestep embedding, host-side constant [1, dim].
template <class T>
Tensor<T> timestep_embedding(int t, std::int64_t dim) {
  std::vector<T> vals(static_cast<std::size_t>(dim));
  const std::int64_t half = dim / 2;
  for (std::int64_t i = 0; i < half; ++i) {
    const double freq =
        std::exp(-std::log(10000.0) * static_cast<double>(i) / static_cast<double>(half));
    vals[static_cast<std::size_t>(i)] = static_cast<T>(std::sin(t * freq));
    vals[static_cast<std::size_t>(half + i)] = static_cast<T>(std::cos(t * freq));
  }
  return Tensor<T>::from({1, dim}, std::move(vals));
}

// Small U-shaped denoiser over [c, n_A, n_A] latents with FiLM-style timestep
// conditioning; class / time-of-day embeddings add onto the timestep vector.
// The last row of each embedding table is the null token.
template <class T>
struct Denoiser {
  Conv2d<T> conv_in;
  ResBlock<T> enc, bottom, mid, dec;
  Conv2d<T> down;      // stride-2
  Conv2d<T> up_conv;   // after nearest upsample
  GroupNorm<T> out_norm;
  Conv2d<T> conv_out;
  Linear<T> t1, t2;              // timestep MLP
  Tensor<T> class_table;         // [n_classes + 1, emb]
  Tensor<T> tod_table;           // [3, emb]
  std::int64_t temb_dim = 64, emb_dim = 128;
  std::int64_t latent_res = 4, latent_channels = 8;
  int num_classes = 0;
  PredictionTarget target = PredictionTarget::kEpsilon;

  Denoiser() = default;
  Denoiser(std::int64_t n_a, std::int64_t c, int num_classes_, PredictionTarget target_, Rng& rng,
           std::int64_t base = 64)
      : latent_res(n_a), latent_channels(c), num_classes(num_classes_), target(target_) {
    const std::int64_t w0 = base, w1 = base * 2;
    conv_in = Conv2d<T>(c, w0, 3, rng);
    enc = ResBlock<T>(w0, w0, 3, rng, emb_dim);
    down = Conv2d<T>(w0, w1, 3, rng, 2);
    bottom = ResBlock<T>(w1, w1, 3, rng, emb_dim);
    mid = ResBlock<T>(w1, w1, 3, rng, emb_dim);
    up_conv = Conv2d<T>(w1, w0, 3, rng);
    dec = ResBlock<T>(2 * w0, w0, 3, rng, emb_dim);
    out_norm = GroupNorm<T>(w0, norm_groups_for(w0));
    conv_out = Conv2d<T>(w0, c, 3, rng);
    t1 = Linear<T>(temb_dim, emb_dim, rng);
    t2 = Linear<T>(emb_dim, emb_dim, rng);
    class_table = Tensor<T>::randn({num_classes_ + 1, emb_dim}, rng, T(0.02));
    tod_table = Tensor<T>::randn({3, emb_dim}, rng, T(0.02));
  }

  Tensor<T> embed(int t, const Condition& cond) const {
    Tensor<T> e = t2(silu(t1(timestep_embedding<T>(t, temb_dim))));
    const std::int64_t cls = cond.class_id >= 0 ? cond.class_id : num_classes;
    e = add(e, index_select(class_table, {cls}));
    const std::int64_t tod = cond.tod_id >= 0 ? cond.tod_id : 2;
    e = add(e, index_select(tod_table, {tod}));
    return e;
  }

  // c_t is [n_A, n_A, c]; output matches.
  Tensor<T> operator()(const Tensor<T>& c_t, int t, const Condition& cond) const {
    GA_CHECK(c_t.rank() == 3 && c_t.dim(0) == latent_res && c_t.dim(2) == latent_channels,
             ShapeError, "denoiser: unexpected latent shape");
    Tensor<T> emb = embed(t, cond);
    Tensor<T> x = permute(c_t, {2, 0, 1});
    Tensor<T> h0 = enc(conv_in(x), &emb);
    Tensor<T> h1 = bottom(down(h0), &emb);
    h1 = mid(h1, &emb);
    Tensor<T> u = up_conv(upsample2x(h1));
    Tensor<T> cat = concat<T>({u, h0}, 0);
    Tensor<T> out = dec(cat, &emb);
    out = conv_out(silu(out_norm(out)));
    return permute(out, {1, 2, 0});
  }

  void params(ParamRegistry<T>& r, const std::string& prefix, int group) {
    conv_in.params(r, prefix + ".conv_in", group);
    enc.params(r, prefix + ".enc", group);
    down.params(r, prefix + ".down", group);
    bottom.params(r, prefix + ".bottom", group);
    mid.params(r, prefix + ".mid", group);
    up_conv.params(r, prefix + ".up_conv", group);
    dec.params(r, prefix + ".dec", group);
    out_norm.params(r, prefix + ".out_norm", group);
    conv_out.params(r, prefix + ".conv_out", group);
    t1.params(r, prefix + ".t1", group);
    t2.params(r, prefix + ".t2", group);
    r.add(prefix + ".class_table", &class_table, group);
    r.add(prefix + ".tod_table", &tod_table, group);
  }
};

// ---------------------------------------------------------------------------
// Training objective.

struct DiffusionLossConfig {
  bool snr_clip_weight = false;  // v mode: w = min(snr, 5) / (snr + 1)
  double cond_dropout = 0.1;
};

inline double loss_weight(const NoiseSchedule& sched, int t, PredictionTarget target,
                          bool snr_clip) {
  if (!snr_clip || target == PredictionTarget::kEpsilon) return 1.0;
  const double ab = sched.alpha_bar[static_cast<std::size_t>(t)];
  const double snr = ab / (1.0 - ab);
  return std::min(snr, 5.0) / (snr + 1.0);
}

// 0.5 * w * mean((pred - target)^2) for a single batch element.
template <class T>
Tensor<T> diffusion_residual(const Tensor<T>& pred, const Tensor<T>& target, T w) {
  GA_CHECK(pred.shape() == target.shape(), ShapeError, "diffusion residual shape mismatch");
  return mul(mean(square(sub(pred, target))), w * T(0.5));
}

// Mean over the batch of 0.5 * w(t) * mean((pred - target)^2), with t and eps
// drawn per element from the seed and conditions dropped to the null token
// with the configured probability.
template <class T>
Tensor<T> diffusion_loss(const Denoiser<T>& den, const std::vector<Tensor<T>>& c0_batch,
                         const std::vector<Condition>& conds, const NoiseSchedule& sched,
                         const DiffusionLossConfig& cfg, std::uint64_t seed) {
  GA_CHECK(!c0_batch.empty(), ValueError, "diffusion_loss: empty batch");
  GA_CHECK(conds.empty() || conds.size() == c0_batch.size(), ShapeError,
           "diffusion_loss: condition count mismatch");
  Tensor<T> total;
  for (std::size_t i = 0; i < c0_batch.size(); ++i) {
    Rng rng = Rng::child(seed, {static_cast<std::uint64_t>(i)});
    const int t = static_cast<int>(rng.uniform_int(1, sched.steps));
    Tensor<T> eps = Tensor<T>::randn(c0_batch[i].shape(), rng);
    Condition cond = conds.empty() ? Condition::none() : conds[i];
    if (!cond.is_null() && rng.uniform() < cfg.cond_dropout) cond = Condition::none();
    Tensor<T> c_t = q_sample(c0_batch[i], t, eps, sched);
    Tensor<T> pred = den(c_t, t, cond);
    Tensor<T> target = den.target == PredictionTarget::kEpsilon
                           ? eps
                           : v_target(c0_batch[i], t, eps, sched);
    const T w = static_cast<T>(loss_weight(sched, t, den.target, cfg.snr_clip_weight));
    Tensor<T> term = diffusion_residual(pred, target, w);
    total = total.defined() ? add(total, term) : term;
  }
  return div(total, static_cast<T>(c0_batch.size()));
}

// ---------------------------------------------------------------------------
// Sampling.

template <class T>
Tensor<T> cfg_combine(const Tensor<T>& eps_cond, const Tensor<T>& eps_uncond, T w) {
  GA_CHECK(eps_cond.shape() == eps_uncond.shape(), ShapeError, "cfg_combine: shape mismatch");
  return add(eps_uncond, mul(sub(eps_cond, eps_uncond), w));
}

// One deterministic (eta = 0) DDIM update from t to t_prev (< t, may skip).
template <class T>
Tensor<T> ddim_step(const Tensor<T>& c_t, int t, const Tensor<T>& eps, const NoiseSchedule& sched,
                    int t_prev = -1, double eta = 0.0, Rng* rng = nullptr) {
  GA_CHECK(t >= 1 && t <= sched.steps, ValueError, "ddim_step: t out of range");
  if (t_prev < 0) t_prev = t - 1;
  GA_CHECK(t_prev >= 0 && t_prev < t, ValueError, "ddim_step: t_prev must be < t");
  const T sab_t = static_cast<T>(sched.sqrt_ab(t));
  const T s1m_t = static_cast<T>(sched.sqrt_1mab(t));
  Tensor<T> x0 = div(sub(c_t, mul(eps, s1m_t)), sab_t);
  const double ab_t = sched.alpha_bar[static_cast<std::size_t>(t)];
  const double ab_p = sched.alpha_bar[static_cast<std::size_t>(t_prev)];
  double sigma = 0.0;
  if (eta > 0.0) {
    sigma = eta * std::sqrt((1.0 - ab_p) / (1.0 - ab_t)) * std::sqrt(1.0 - ab_t / ab_p);
  }
  const double dir_coeff = std::sqrt(std::max(0.0, 1.0 - ab_p - sigma * sigma));
  Tensor<T> out = add(mul(x0, static_cast<T>(std::sqrt(ab_p))),
                      mul(eps, static_cast<T>(dir_coeff)));
  if (sigma > 0.0) {
    GA_CHECK(rng != nullptr, ValueError, "ddim_step: eta > 0 needs an rng");
    out = add(out, mul(Tensor<T>::randn(out.shape(), *rng), static_cast<T>(sigma)));
  }
  return out;
}

// Ancestral DDPM update from t to t-1; no noise at t = 1.
template <class T>
Tensor<T> ddpm_step(const Tensor<T>& c_t, int t, const Tensor<T>& eps, const NoiseSchedule& sched,
                    Rng& rng) {
  GA_CHECK(t >= 1 && t <= sched.steps, ValueError, "ddpm_step: t out of range");
  const double beta = sched.beta[static_cast<std::size_t>(t)];
  const double alpha = sched.alpha[static_cast<std::size_t>(t)];
  const double ab_t = sched.alpha_bar[static_cast<std::size_t>(t)];
  const double ab_p = sched.alpha_bar[static_cast<std::size_t>(t - 1)];
  Tensor<T> mu = div(sub(c_t, mul(eps, static_cast<T>(beta / std::sqrt(1.0 - ab_t)))),
                     static_cast<T>(std::sqrt(alpha)));
  if (t == 1) return mu;
  const double beta_tilde = beta * (1.0 - ab_p) / (1.0 - ab_t);
  return add(mu, mul(Tensor<T>::randn(mu.shape(), rng), static_cast<T>(std::sqrt(beta_tilde))));
}

// Evenly spaced timestep subsequence T = tau_1 > ... > tau_steps >= 1.
inline std::vector<int> sample_timesteps(const NoiseSchedule& sched, int steps) {
  GA_CHECK(steps >= 1 && steps <= sched.steps, ValueError, "sample steps must be in [1, T]");
  std::vector<int> ts;
  for (int i = 0; i < steps; ++i) {
    const double f = steps == 1 ? 1.0 : 1.0 - static_cast<double>(i) / (steps - 1);
    int t = 1 + static_cast<int>(std::lround(f * (sched.steps - 1)));
    t = std::min(sched.steps, std::max(1, t));
    if (ts.empty() || t < ts.back()) ts.push_back(t);
  }
  return ts;
}

// Rendering-guided correction: subtracts lambda times the observation-loss
// gradient from the proposed c_{t-1}. The gradient callback receives the
// differentiable x0 estimate and must return a scalar loss on the same tape.
template <class T>
using GuidanceLossFn = std::function<Tensor<T>(const Tensor<T>& x0)>;

template <class T>
Tensor<T> guided_step(const Tensor<T>& c_prev_candidate, const Tensor<T>& c_t, int t,
                      const Tensor<T>& eps, const NoiseSchedule& sched, T lambda,
                      const GuidanceLossFn<T>& loss_fn) {
  if (lambda == T(0) || !loss_fn) return c_prev_candidate;
  Tape<T> tape;
  Tensor<T> c_t_var = tape.watch(c_t);
  // x0 is differentiable in c_t with the noise estimate held fixed.
  Tensor<T> x0 = div(sub(c_t_var, mul(stop_gradient(eps), static_cast<T>(sched.sqrt_1mab(t)))),
                     static_cast<T>(sched.sqrt_ab(t)));
  Tensor<T> loss = loss_fn(x0);
  GA_CHECK(loss.numel() == 1, ShapeError, "guidance loss must be scalar");
  tape.backward(loss);
  Tensor<T> g = tape.grad(c_t_var);
  return sub(c_prev_candidate, mul(g, lambda));
}

struct SampleOptions {
  Solver solver = Solver::kDdim;
  int steps = 50;
  double eta = 0.0;
  Condition condition;            // null = unconditional
  double cfg_weight = 1.0;        // used only when condition is non-null
  double render_weight = 0.0;     // lambda for guided sampling
};

// Full reverse trajectory from seeded Gaussian noise. Deterministic given the
// seed; DDPM consumes one noise draw per step from the same stream.
template <class T>
Tensor<T> sample(const Denoiser<T>& den, const NoiseSchedule& sched, const SampleOptions& opt,
                 std::uint64_t seed, const GuidanceLossFn<T>& guidance_loss = {}) {
  GA_CHECK(opt.steps >= 1 && opt.steps <= sched.steps, ValueError, "sample: invalid step count");
  GA_CHECK(opt.solver == Solver::kDdim || opt.steps == sched.steps, ValueError,
           "sample: ddpm requires the full schedule");
  Rng rng = Rng::child(seed, SeedPurpose::kSample);
  Tensor<T> c = Tensor<T>::randn({den.latent_res, den.latent_res, den.latent_channels}, rng);
  const std::vector<int> ts = sample_timesteps(sched, opt.steps);
  for (std::size_t i = 0; i < ts.size(); ++i) {
    const int t = ts[i];
    const int t_prev = i + 1 < ts.size() ? ts[i + 1] : 0;
    auto eps_of = [&](const Condition& cond) {
      Tensor<T> pred = den(c, t, cond);
      return den.target == PredictionTarget::kEpsilon ? pred : eps_from_v(c, pred, t, sched);
    };
    Tensor<T> eps;
    if (opt.condition.is_null() || opt.cfg_weight == 0.0) {
      // w = 0 degenerates to the unconditional prediction exactly.
      eps = eps_of(Condition::none());
    } else if (opt.cfg_weight == 1.0) {
      eps = eps_of(opt.condition);
    } else {
      eps = cfg_combine(eps_of(opt.condition), eps_of(Condition::none()),
                        static_cast<T>(opt.cfg_weight));
    }
    Tensor<T> c_prev;
    if (opt.solver == Solver::kDdim) {
      c_prev = ddim_step(c, t, eps, sched, t_prev, opt.eta, &rng);
    } else {
      c_prev = ddpm_step(c, t, eps, sched, rng);
    }
    if (opt.render_weight > 0.0 && guidance_loss)
      c_prev = guided_step(c_prev, c, t, eps, sched, static_cast<T>(opt.render_weight),
                           guidance_loss);
    c = c_prev;
  }
  return c;
}

// ---------------------------------------------------------------------------
// Stage-2 training over a stage-1 latent library. Codes are standardized by
// a single scalar scale (library standard deviation) so the noise schedule
// sees roughly unit-variance data; the scale is part of the checkpoint.

struct Stage2Config {
  ScheduleKind schedule = ScheduleKind::kLinear;
  int timesteps = 1000;  // T
  PredictionTarget target = PredictionTarget::kEpsilon;
  bool conditional = false;  // class + time-of-day conditioning
  std::int64_t base_width = 64;
  int steps = 3000;
  int batch = 16;
  double lr = 1e-4;
  double cond_dropout = 0.1;
  bool snr_clip_weight = false;
  int log_every = 100;
};

template <class T>
double library_scale(const std::vector<Tensor<T>>& codes) {
  double sq = 0.0;
  std::int64_t n = 0;
  for (const auto& c : codes) {
    for (std::int64_t i = 0; i < c.numel(); ++i)
      sq += static_cast<double>(c.data()[i]) * c.data()[i];
    n += c.numel();
  }
  const double s = std::sqrt(sq / std::max<std::int64_t>(1, n));
  return s > 1e-6 ? s : 1.0;
}

struct Stage2TrainResult {
  std::vector<std::pair<int, double>> history;  // (step, loss)
  double latent_scale = 1.0;
};

template <class T>
Stage2TrainResult train_stage2(Denoiser<T>& den, const LatentLibrary<T>& lib,
                               const NoiseSchedule& sched, const Stage2Config& cfg,
                               std::uint64_t seed,
                               const std::function<bool(int, double)>& on_step = {}) {
  GA_CHECK(!lib.codes.empty(), ValueError, "train_stage2: empty latent library");
  Stage2TrainResult result;
  result.latent_scale = library_scale(lib.codes);
  std::vector<Tensor<T>> scaled;
  scaled.reserve(lib.codes.size());
  for (const auto& c : lib.codes) scaled.push_back(mul(c, static_cast<T>(1.0 / result.latent_scale)));

  ParamRegistry<T> reg;
  den.params(reg, "denoiser", 0);
  std::vector<AdamState<T>> adam(reg.entries().size());
  for (std::size_t i = 0; i < reg.entries().size(); ++i)
    adam[i] = AdamState<T>(reg.entries()[i].tensor->numel());

  DiffusionLossConfig lcfg;
  lcfg.cond_dropout = cfg.cond_dropout;
  lcfg.snr_clip_weight = cfg.snr_clip_weight;

  for (int s = 0; s < cfg.steps; ++s) {
    Rng rng = Rng::child(seed, SeedPurpose::kTrain, static_cast<std::uint64_t>(s));
    std::vector<Tensor<T>> batch;
    std::vector<Condition> conds;
    for (int b = 0; b < cfg.batch; ++b) {
      const auto pick = static_cast<std::size_t>(
          rng.uniform_int(0, static_cast<std::int64_t>(scaled.size()) - 1));
      batch.push_back(scaled[pick]);
      if (cfg.conditional) conds.push_back({lib.class_ids[pick], lib.tod_ids[pick]});
    }
    Tape<T> tape;
    reg.attach(tape);
    Tensor<T> loss = diffusion_loss(den, batch, conds, sched, lcfg, rng.next_u64());
    const double lv = static_cast<double>(loss.item());
    GA_CHECK(std::isfinite(lv), NumericError, "NaN diffusion loss at step " + std::to_string(s));
    tape.backward(loss);
    for (std::size_t i = 0; i < reg.entries().size(); ++i) {
      auto& e = reg.entries()[i];
      if (tape.has_grad(*e.tensor)) {
        AdamConfig ac;
        ac.lr = cfg.lr;
        *e.tensor = adam[i].step(e.tensor->detached(), tape.grad(*e.tensor), ac);
      } else {
        *e.tensor = e.tensor->detached();
      }
    }
    if (cfg.log_every > 0 && (s % cfg.log_every == 0 || s + 1 == cfg.steps))
      result.history.push_back({s, lv});
    if (on_step && !on_step(s, lv)) break;
  }
  return result;
}

// ---------------------------------------------------------------------------
// Diffusion-prior fine-tuning: optimize a scene's latents and background
// against reconstruction plus lambda_diff times the denoising loss of the
// current (standardized) latents under the frozen denoiser.

template <class T>
Stage1TrainResult finetune_with_prior(Stage1Model<T>& model, const SyntheticDataset& dataset,
                                      const Denoiser<T>* den, const NoiseSchedule* sched,
                                      double lambda_diff, double latent_scale, int steps,
                                      std::uint64_t seed,
                                      const std::function<bool(int, const LossBreakdown&)>& on_step = {}) {
  GA_CHECK(lambda_diff == 0.0 || (den && sched), MissingPrerequisite,
           "finetune_with_prior: lambda_diff > 0 requires a trained denoiser");
  Stage1Trainer<T> trainer(model, dataset, seed);
  trainer.set_frozen_groups({kGroupDecoder, kGroupFields, kGroupCnn, kGroupSky});
  if (lambda_diff > 0.0) {
    trainer.set_extra_loss([&, lambda_diff, latent_scale, seed](int scene_index, int step_index) {
      const auto& rec = dataset.scenes[static_cast<std::size_t>(scene_index)];
      Tensor<T> total;
      for (std::size_t a = 0; a < rec.actor_global_ids.size(); ++a) {
        const int gid = rec.actor_global_ids[a];
        Rng rng = Rng::child(seed, {0xD1FFu, static_cast<std::uint64_t>(step_index),
                                    static_cast<std::uint64_t>(gid)});
        const int t = static_cast<int>(rng.uniform_int(1, sched->steps));
        Tensor<T> c0 = mul(model.latents[static_cast<std::size_t>(gid)].mu,
                           static_cast<T>(1.0 / latent_scale));
        Tensor<T> eps = Tensor<T>::randn(c0.shape(), rng);
        Tensor<T> c_t = q_sample(c0, t, eps, *sched);
        Condition cond;  // unconditional prior
        Tensor<T> pred = (*den)(c_t, t, cond);
        Tensor<T> target = den->target == PredictionTarget::kEpsilon
                               ? eps
                               : v_target(c0, t, eps, *sched);
        Tensor<T> term = mul(mean(square(sub(pred, target))), T(0.5));
        total = total.defined() ? add(total, term) : term;
      }
      if (!total.defined()) return Tensor<T>();
      return mul(div(total, static_cast<T>(rec.actor_global_ids.size())),
                 static_cast<T>(lambda_diff));
    });
  }
  Stage1TrainResult result;
  for (int s = 0; s < steps; ++s) {
    LossBreakdown bd = trainer.step(s);
    if (model.cfg.log_every > 0 && (s % model.cfg.log_every == 0 || s + 1 == steps))
      result.history.push_back({s, bd});
    result.steps_run = s + 1;
    for (const auto& lat : model.latents)
      GA_CHECK(lat.mu.all_finite(), NumericError, "latent diverged during fine-tuning");
    if (on_step && !on_step(s, bd)) break;
  }
  return result;
}

// Carries the shared networks of a trained model onto a new dataset with
// fresh latents and backgrounds (the fine-tuning setup).
template <class T>
Stage1Model<T> adapt_to_dataset(const Stage1Model<T>& trained, const SyntheticDataset& dataset,
                                std::uint64_t seed) {
  Stage1Model<T> m = Stage1Model<T>::init(trained.cfg, dataset, seed);
  m.decoder = trained.decoder;
  m.head = trained.head;
  m.cnn = trained.cnn;
  m.sky = trained.sky;
  m.class_embs = trained.class_embs;
  return m;
}

}  // namespace ga
