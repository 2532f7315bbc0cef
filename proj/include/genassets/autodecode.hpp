// Copyright Contributors to the genassets project
// SPDX-License-Identifier: Apache-2.0
//
// Stage 1: per-actor latent codes with reparameterization, class embeddings,
// the shared latent -> triplane decoder, the reconstruction objective and the
// multi-scene training loop.
#pragma once

#include <map>
#include <set>
#include <string>
#include <vector>

#include "genassets/adam.hpp"
#include "genassets/metrics.hpp"
#include "genassets/render.hpp"
#include "genassets/synthdata.hpp"
#include "genassets/tensor_io.hpp"

namespace ga {

template <class T>
struct LatentCode {
  Tensor<T> mu;      // [n_A, n_A, c]
  Tensor<T> logvar;  // [n_A, n_A, c]

  static LatentCode init(std::int64_t n, std::int64_t c, Rng& rng, T mu_std = T(0.1)) {
    LatentCode code;
    code.mu = Tensor<T>::randn({n, n, c}, rng, mu_std);
    code.logvar = Tensor<T>::full({n, n, c}, T(-4));  // start near-deterministic
    return code;
  }
};

// c = mu + sigma * eps with eps ~ N(0, I) drawn from the given seed.
template <class T>
Tensor<T> reparameterize(const LatentCode<T>& code, std::uint64_t seed) {
  Rng rng(seed);
  Tensor<T> eps = Tensor<T>::randn(code.mu.shape(), rng);
  return add(code.mu, mul(exp(mul(code.logvar, T(0.5))), eps));
}

// mean over elements of 0.5 * |mu^2 + sigma^2 - 1 - log sigma^2|
template <class T>
Tensor<T> kl_loss(const LatentCode<T>& code) {
  Tensor<T> sigma_sq = exp(code.logvar);
  Tensor<T> inner = sub(add(square(code.mu), sigma_sq), add(code.logvar, T(1)));
  return mul(mean(abs(inner)), T(0.5));
}

// Latent (+ class embedding) -> triplane decoder: channel concat, conv in,
// residual blocks with interleaved 2x upsampling, conv out to 3C planes.
template <class T>
struct AssetDecoder {
  Conv2d<T> conv_in;
  ResBlock<T> pre;
  std::vector<ResBlock<T>> stages;  // one per upsampling
  GroupNorm<T> out_norm;
  Conv2d<T> conv_out;
  std::int64_t latent_res = 4, latent_channels = 8;
  std::int64_t plane_res = 32, plane_channels = 8;

  AssetDecoder() = default;
  AssetDecoder(std::int64_t n_a, std::int64_t c, std::int64_t plane_res_, std::int64_t plane_ch,
               Rng& rng)
      : latent_res(n_a), latent_channels(c), plane_res(plane_res_), plane_channels(plane_ch) {
    GA_CHECK(plane_res_ % n_a == 0, ShapeError, "decoder upsample factor must be integral");
    std::int64_t factor = plane_res_ / n_a;
    GA_CHECK(factor >= 1 && (factor & (factor - 1)) == 0, ShapeError,
             "decoder upsample factor must be a power of two");
    const std::vector<std::int64_t> widths = {128, 64, 32, 32, 32, 32};
    conv_in = Conv2d<T>(2 * c, widths[0], 3, rng);
    pre = ResBlock<T>(widths[0], widths[0], 3, rng);
    std::int64_t w_prev = widths[0];
    std::size_t wi = 1;
    while (factor > 1) {
      const std::int64_t w = widths[std::min(wi, widths.size() - 1)];
      stages.emplace_back(w_prev, w, 3, rng);
      w_prev = w;
      ++wi;
      factor /= 2;
    }
    out_norm = GroupNorm<T>(w_prev, norm_groups_for(w_prev));
    conv_out = Conv2d<T>(w_prev, 3 * plane_ch, 3, rng);
  }

  // code and emb are [n_A, n_A, c]; returns a triplane with the given extent.
  TriPlane<T> decode(const Tensor<T>& code, const Tensor<T>& emb, const Vec3<T>& extent) const {
    GA_CHECK(code.shape() == emb.shape(), ShapeError, "decode_latent: code/embedding mismatch");
    GA_CHECK(code.rank() == 3 && code.dim(0) == latent_res && code.dim(2) == latent_channels,
             ShapeError, "decode_latent: unexpected latent shape");
    Tensor<T> x = concat<T>({permute(code, {2, 0, 1}), permute(emb, {2, 0, 1})}, 0);
    Tensor<T> h = pre(conv_in(x));
    for (const auto& stage : stages) h = stage(upsample2x(h));
    Tensor<T> planes = conv_out(silu(out_norm(h)));  // [3C, N, N]
    TriPlane<T> tp;
    tp.extent = extent;
    const std::int64_t c = plane_channels, n = plane_res;
    tp.xy = permute(row_range(planes, 0, c), {1, 2, 0});
    tp.xz = permute(row_range(planes, c, 2 * c), {1, 2, 0});
    tp.yz = permute(row_range(planes, 2 * c, 3 * c), {1, 2, 0});
    return tp;
  }

  void params(ParamRegistry<T>& r, const std::string& prefix, int group) {
    conv_in.params(r, prefix + ".conv_in", group);
    pre.params(r, prefix + ".pre", group);
    for (std::size_t i = 0; i < stages.size(); ++i)
      stages[i].params(r, prefix + ".stage" + std::to_string(i), group);
    out_norm.params(r, prefix + ".out_norm", group);
    conv_out.params(r, prefix + ".conv_out", group);
  }
};

template <class T>
TriPlane<T> decode_latent(const AssetDecoder<T>& dec, const Tensor<T>& code, const Tensor<T>& emb,
                          const Vec3<T>& extent) {
  return dec.decode(code, emb, extent);
}

// ---------------------------------------------------------------------------
// Reconstruction objective.

struct LossBreakdown {
  double total = 0;
  double rgb = 0;
  double lid = 0;
  double kl = 0;
  bool perp_computed = false;  // perceptual / adversarial terms intentionally
  bool adv_computed = false;   // absent from this implementation
};

template <class T>
struct LossWeights {
  T lambda_lid = T(0.01);
  T lambda_kl = T(1e-5);
};

// L = L_rgb + lambda_lid * L_lid + lambda_kl * L_kl. LiDAR rays are matched
// by scan index; only rays with an observed return contribute.
template <class T>
struct ReconLossInputs {
  Tensor<T> rendered_rgb;  // [h, w, 3]
  Tensor<T> observed_rgb;  // [h, w, 3]
  Tensor<T> rendered_depth;        // [n_lidar] composited depths (empty = no lidar term)
  std::vector<T> observed_depth;   // per selected ray
  std::vector<Tensor<T>> kl_terms; // per-actor kl losses (already scalar)
};

template <class T>
std::pair<Tensor<T>, LossBreakdown> recon_loss(const ReconLossInputs<T>& in,
                                               const LossWeights<T>& w) {
  GA_CHECK(in.rendered_rgb.shape() == in.observed_rgb.shape(), ShapeError,
           "recon_loss: rgb shape mismatch");
  LossBreakdown bd;
  Tensor<T> l_rgb = mean(square(sub(in.rendered_rgb, in.observed_rgb)));
  bd.rgb = static_cast<double>(l_rgb.item());
  Tensor<T> total = l_rgb;

  if (in.rendered_depth.defined() && in.rendered_depth.numel() > 0) {
    GA_CHECK(in.rendered_depth.numel() ==
                 static_cast<std::int64_t>(in.observed_depth.size()),
             ShapeError, "recon_loss: lidar correspondence mismatch");
    Tensor<T> gt = Tensor<T>::from({in.rendered_depth.numel()}, in.observed_depth);
    Tensor<T> l_lid = mean(abs(sub(in.rendered_depth, gt)));
    bd.lid = static_cast<double>(l_lid.item());
    total = add(total, mul(l_lid, w.lambda_lid));
  }
  if (!in.kl_terms.empty()) {
    Tensor<T> kl = in.kl_terms[0];
    for (std::size_t i = 1; i < in.kl_terms.size(); ++i) kl = add(kl, in.kl_terms[i]);
    kl = div(kl, static_cast<T>(in.kl_terms.size()));
    bd.kl = static_cast<double>(kl.item());
    total = add(total, mul(kl, w.lambda_kl));
  }
  bd.total = static_cast<double>(total.item());
  return {total, bd};
}

// ---------------------------------------------------------------------------
// Stage-1 model.

enum class ActorRepr { kLatent, kTriplane };  // kTriplane = no-decoder ablation

struct Stage1Config {
  std::int64_t actor_res = 32;       // N_A
  std::int64_t background_res = 64;  // N_B
  std::int64_t tp_channels = 8;      // C
  std::int64_t latent_res = 4;       // n_A
  std::int64_t latent_channels = 8;  // c
  std::int64_t feature_dim = 16;     // C_f
  std::int64_t head_hidden = 64;
  std::int64_t cnn_width = 16;
  std::int64_t cnn_kernel = 3;
  int dir_freqs = 4;
  int num_classes = 4;
  ActorRepr actor_repr = ActorRepr::kLatent;

  float fine_step = 0.05f;
  float coarse_step = 0.30f;
  float opacity_b = 0.10f;
  float occupancy_voxel = 0.5f;
  int feature_downsample = 4;

  double lambda_lid = 0.01;
  double lambda_kl = 1e-5;

  double lr_latent = 5e-2;
  double lr_decoder = 1e-4;  // also class embeddings
  double lr_fields = 1e-3;
  double lr_cnn = 1e-3;
  double lr_background = 1e-2;
  double lr_actor_triplane = 2e-2;
  double lr_sky = 1e-3;

  int steps = 2000;
  int lidar_rays_per_step = 256;
  int checkpoint_every = 0;  // 0 = final only
  int log_every = 50;
};

enum ParamGroup : int {
  kGroupLatent = 0,
  kGroupDecoder = 1,
  kGroupFields = 2,
  kGroupCnn = 3,
  kGroupBackground = 4,
  kGroupActorTriplane = 5,
  kGroupSky = 6,
};

template <class T>
struct Stage1Model {
  Stage1Config cfg;
  AssetDecoder<T> decoder;
  FieldHead<T> head;
  RgbCnn<T> cnn;
  Tensor<T> sky;                           // [C_f]
  std::vector<Tensor<T>> class_embs;       // per class [n_A, n_A, c]
  std::vector<LatentCode<T>> latents;      // per global actor id
  std::vector<TriPlane<T>> backgrounds;    // per scene
  std::vector<TriPlane<T>> actor_planes;   // per global actor (ablation mode)
  std::vector<int> actor_class;            // per global actor id
  std::vector<Vec3<T>> actor_extent;       // per global actor id

  static Stage1Model init(const Stage1Config& cfg, const SyntheticDataset& dataset,
                          std::uint64_t seed) {
    Stage1Model m;
    m.cfg = cfg;
    Rng rng = Rng::child(seed, SeedPurpose::kInit);
    m.decoder = AssetDecoder<T>(cfg.latent_res, cfg.latent_channels, cfg.actor_res,
                                cfg.tp_channels, rng);
    m.head = FieldHead<T>(3 * cfg.tp_channels, cfg.head_hidden, cfg.feature_dim, rng,
                          cfg.dir_freqs);
    m.cnn = RgbCnn<T>(cfg.feature_dim, cfg.cnn_width, cfg.cnn_kernel, rng);
    m.sky = Tensor<T>::randn({cfg.feature_dim}, rng, T(0.1));
    for (int c = 0; c < cfg.num_classes; ++c)
      m.class_embs.push_back(
          Tensor<T>::randn({cfg.latent_res, cfg.latent_res, cfg.latent_channels}, rng, T(0.1)));
    for (const auto& entry : dataset.registry) {
      m.latents.push_back(LatentCode<T>::init(cfg.latent_res, cfg.latent_channels, rng));
      m.actor_class.push_back(entry.class_id);
      m.actor_extent.push_back(entry.box_half.template cast<T>());
      if (cfg.actor_repr == ActorRepr::kTriplane)
        m.actor_planes.push_back(TriPlane<T>::randn(cfg.actor_res, cfg.tp_channels,
                                                    entry.box_half.template cast<T>(), rng,
                                                    T(0.05)));
    }
    for (const auto& rec : dataset.scenes)
      m.backgrounds.push_back(TriPlane<T>::randn(cfg.background_res, cfg.tp_channels,
                                                 rec.desc.bounds.half.template cast<T>(), rng,
                                                 T(0.05)));
    return m;
  }

  RenderConfig<T> render_config() const {
    RenderConfig<T> rc;
    rc.sampling.fine_step = cfg.fine_step;
    rc.sampling.coarse_step = cfg.coarse_step;
    rc.opacity.b = static_cast<T>(cfg.opacity_b);
    rc.feature_downsample = cfg.feature_downsample;
    return rc;
  }

  // Registry over every trainable tensor. Pointer stability: call again after
  // any structural change.
  ParamRegistry<T> registry() {
    ParamRegistry<T> r;
    decoder.params(r, "decoder/net", kGroupDecoder);
    head.params(r, "fields/head", kGroupFields);
    cnn.params(r, "rgbcnn/net", kGroupCnn);
    r.add("sky", &sky, kGroupSky);
    for (std::size_t c = 0; c < class_embs.size(); ++c)
      r.add("classemb/" + std::to_string(c), &class_embs[c], kGroupDecoder);
    for (std::size_t i = 0; i < latents.size(); ++i) {
      r.add("latents/" + std::to_string(i) + "/mu", &latents[i].mu, kGroupLatent);
      r.add("latents/" + std::to_string(i) + "/logvar", &latents[i].logvar, kGroupLatent);
    }
    for (std::size_t s = 0; s < backgrounds.size(); ++s) {
      const std::string p = "background/" + std::to_string(s);
      r.add(p + "/xy", &backgrounds[s].xy, kGroupBackground);
      r.add(p + "/xz", &backgrounds[s].xz, kGroupBackground);
      r.add(p + "/yz", &backgrounds[s].yz, kGroupBackground);
    }
    for (std::size_t i = 0; i < actor_planes.size(); ++i) {
      const std::string p = "actortp/" + std::to_string(i);
      r.add(p + "/xy", &actor_planes[i].xy, kGroupActorTriplane);
      r.add(p + "/xz", &actor_planes[i].xz, kGroupActorTriplane);
      r.add(p + "/yz", &actor_planes[i].yz, kGroupActorTriplane);
    }
    return r;
  }

  double group_lr(int group) const {
    switch (group) {
      case kGroupLatent: return cfg.lr_latent;
      case kGroupDecoder: return cfg.lr_decoder;
      case kGroupFields: return cfg.lr_fields;
      case kGroupCnn: return cfg.lr_cnn;
      case kGroupBackground: return cfg.lr_background;
      case kGroupActorTriplane: return cfg.lr_actor_triplane;
      case kGroupSky: return cfg.lr_sky;
      default: return 1e-3;
    }
  }

  // Actor triplane for rendering: decoded from the latent (sampled with the
  // given seed) or the direct per-actor grid in ablation mode.
  TriPlane<T> actor_triplane(int global_id, std::uint64_t reparam_seed) const {
    if (cfg.actor_repr == ActorRepr::kTriplane)
      return actor_planes[static_cast<std::size_t>(global_id)];
    const Tensor<T> c = reparameterize(latents[static_cast<std::size_t>(global_id)], reparam_seed);
    return decoder.decode(c, class_embs[static_cast<std::size_t>(
                                 actor_class[static_cast<std::size_t>(global_id)])],
                          actor_extent[static_cast<std::size_t>(global_id)]);
  }

  // Deterministic triplane from the latent mean (evaluation path).
  TriPlane<T> actor_triplane_mean(int global_id) const {
    if (cfg.actor_repr == ActorRepr::kTriplane)
      return actor_planes[static_cast<std::size_t>(global_id)];
    return decoder.decode(latents[static_cast<std::size_t>(global_id)].mu,
                          class_embs[static_cast<std::size_t>(
                              actor_class[static_cast<std::size_t>(global_id)])],
                          actor_extent[static_cast<std::size_t>(global_id)]);
  }
};

using Stage1Modelf = Stage1Model<float>;

// Aggregated LiDAR points over train frames, used for the occupancy grid.
inline std::vector<Vec3f> aggregate_lidar_points(const SceneRecord& rec) {
  std::vector<Vec3f> pts;
  for (int f = 0; f < rec.desc.rig.frame_count(); ++f) {
    if (rec.splits[static_cast<std::size_t>(f)].heldout) continue;
    for (const auto& ret : rec.sweeps[static_cast<std::size_t>(f)])
      if (ret.hit) pts.push_back(ret.point);
  }
  return pts;
}

struct TrainLogEntry {
  int step = 0;
  LossBreakdown loss;
};

struct Stage1TrainResult {
  std::vector<TrainLogEntry> history;
  int steps_run = 0;
};

// Latent library view used by stage 2.
template <class T>
struct LatentLibrary {
  std::vector<int> global_ids;
  std::vector<int> class_ids;
  std::vector<int> tod_ids;  // scene time-of-day per actor
  std::vector<Tensor<T>> codes;  // latent means, [n_A, n_A, c]
};

template <class T>
LatentLibrary<T> latent_library(const Stage1Model<T>& model, const SyntheticDataset& dataset) {
  LatentLibrary<T> lib;
  for (const auto& e : dataset.registry) {
    lib.global_ids.push_back(e.global_id);
    lib.class_ids.push_back(e.class_id);
    lib.tod_ids.push_back(dataset.scenes[static_cast<std::size_t>(e.scene_index)].desc.condition_tod);
    lib.codes.push_back(model.latents[static_cast<std::size_t>(e.global_id)].mu);
  }
  return lib;
}

template <class T>
std::vector<OccupancyGrid> build_scene_grids(const Stage1Config& cfg,
                                             const SyntheticDataset& dataset) {
  std::vector<OccupancyGrid> grids;
  grids.reserve(dataset.scenes.size());
  for (const auto& rec : dataset.scenes)
    grids.push_back(build_occupancy_grid(aggregate_lidar_points(rec), rec.desc,
                                         cfg.occupancy_voxel));
  return grids;
}

// Field bank for one scene: per-actor triplanes decoded (or direct) plus the
// scene background. reparam_seed < 0 selects the deterministic mean path.
template <class T>
FieldBank<T> scene_field_bank(const Stage1Model<T>& model, const SyntheticDataset& dataset,
                              int scene_index, std::int64_t reparam_seed) {
  const auto& rec = dataset.scenes[static_cast<std::size_t>(scene_index)];
  FieldBank<T> bank;
  bank.background = model.backgrounds[static_cast<std::size_t>(scene_index)];
  bank.head = &model.head;
  bank.sky_feature = model.sky;
  for (std::size_t a = 0; a < rec.actor_global_ids.size(); ++a) {
    const int gid = rec.actor_global_ids[a];
    if (reparam_seed < 0)
      bank.actor_planes.push_back(model.actor_triplane_mean(gid));
    else
      bank.actor_planes.push_back(model.actor_triplane(
          gid, derive_seed(static_cast<std::uint64_t>(reparam_seed),
                           {static_cast<std::uint64_t>(gid)})));
  }
  return bank;
}

// ---------------------------------------------------------------------------
// Training loop. Each step renders the full feature map of one random train
// frame plus a LiDAR ray subset, evaluates the objective and applies one
// per-group Adam update. Only parameters the loss actually reached step, so
// latents of untouched scenes keep their optimizer state unchanged.

template <class T>
class Stage1Trainer {
 public:
  Stage1Trainer(Stage1Model<T>& model, const SyntheticDataset& dataset, std::uint64_t seed)
      : model_(model), dataset_(dataset), seed_(seed) {
    grids_ = build_scene_grids<T>(model.cfg, dataset);
    auto reg = model_.registry();
    adam_.resize(reg.entries().size());
    for (std::size_t i = 0; i < reg.entries().size(); ++i)
      adam_[i] = AdamState<T>(reg.entries()[i].tensor->numel());
    for (const auto& rec : dataset_.scenes) {
      std::vector<int> train;
      for (int f = 0; f < rec.desc.rig.frame_count(); ++f)
        if (!rec.splits[static_cast<std::size_t>(f)].heldout) train.push_back(f);
      GA_CHECK(!train.empty(), ValueError, "scene has no train frames");
      train_frames_.push_back(std::move(train));
    }
  }

  const std::vector<OccupancyGrid>& grids() const { return grids_; }

  // Groups listed here keep their values (no optimizer update).
  void set_frozen_groups(std::set<int> groups) { frozen_groups_ = std::move(groups); }

  // Optional additional loss term evaluated inside the step's tape, after
  // parameters are attached. Receives (scene_index, step_index).
  void set_extra_loss(std::function<Tensor<T>(int, int)> fn) { extra_loss_ = std::move(fn); }

  LossBreakdown step(int step_index) {
    Rng rng = Rng::child(seed_, SeedPurpose::kTrain, static_cast<std::uint64_t>(step_index));
    const int si = static_cast<int>(rng.uniform_int(0, static_cast<std::int64_t>(
                                                           dataset_.scenes.size()) - 1));
    const auto& frames = train_frames_[static_cast<std::size_t>(si)];
    const int frame = frames[static_cast<std::size_t>(
        rng.uniform_int(0, static_cast<std::int64_t>(frames.size()) - 1))];
    const auto& rec = dataset_.scenes[static_cast<std::size_t>(si)];

    Tape<T> tape;
    auto reg = model_.registry();
    reg.attach(tape);

    const std::uint64_t reparam_seed =
        derive_seed(seed_, {static_cast<std::uint64_t>(SeedPurpose::kTrain), 0xABCDu,
                            static_cast<std::uint64_t>(step_index)});
    FieldBank<T> bank = scene_field_bank(model_, dataset_, si,
                                         static_cast<std::int64_t>(reparam_seed & 0x7FFFFFFFFFFFFFFF));

    const RenderConfig<T> rc = model_.render_config();
    const std::uint64_t sample_seed = rng.next_u64();
    FeatureMapRender<T> fm = render_feature_map(rec.desc, grids_[static_cast<std::size_t>(si)],
                                                bank, frame, rc, sample_seed);
    Tensor<T> rgb = decode_image(model_.cnn, fm.feature);

    // LiDAR supervision on a random subset of observed returns.
    const auto& sweep = rec.sweeps[static_cast<std::size_t>(frame)];
    std::vector<std::size_t> hits;
    for (std::size_t i = 0; i < sweep.size(); ++i)
      if (sweep[i].hit) hits.push_back(i);
    Tensor<T> rendered_depth;
    std::vector<T> observed_depth;
    if (!hits.empty() && model_.cfg.lidar_rays_per_step > 0) {
      const auto all_rays = lidar_rays(rec.desc.rig, frame);
      std::vector<Ray<T>> subset;
      const int want = std::min<int>(model_.cfg.lidar_rays_per_step,
                                     static_cast<int>(hits.size()));
      for (int k = 0; k < want; ++k) {
        const std::size_t pick = hits[static_cast<std::size_t>(
            rng.uniform_int(0, static_cast<std::int64_t>(hits.size()) - 1))];
        subset.push_back(all_rays[pick]);
        observed_depth.push_back(static_cast<T>(sweep[pick].depth));
      }
      RayRenderResult<T> lr =
          render_rays(rec.desc, grids_[static_cast<std::size_t>(si)], subset,
                      rec.desc.rig.time_of(frame), bank.provider(), rc,
                      model_.cfg.feature_dim, rng.next_u64());
      rendered_depth = lr.depth;
    }

    std::vector<Tensor<T>> kl_terms;
    if (model_.cfg.actor_repr == ActorRepr::kLatent)
      for (int gid : rec.actor_global_ids)
        kl_terms.push_back(kl_loss(model_.latents[static_cast<std::size_t>(gid)]));

    ReconLossInputs<T> in;
    in.rendered_rgb = rgb;
    in.observed_rgb = rec.images[static_cast<std::size_t>(frame)];
    in.rendered_depth = rendered_depth;
    in.observed_depth = observed_depth;
    in.kl_terms = kl_terms;
    LossWeights<T> w;
    w.lambda_lid = static_cast<T>(model_.cfg.lambda_lid);
    w.lambda_kl = static_cast<T>(model_.cfg.lambda_kl);
    auto [loss, bd] = recon_loss(in, w);
    if (extra_loss_) {
      Tensor<T> extra = extra_loss_(si, step_index);
      if (extra.defined()) loss = add(loss, extra);
      bd.total = static_cast<double>(loss.item());
    }
    GA_CHECK(std::isfinite(bd.total), NumericError,
             "NaN loss at step " + std::to_string(step_index));

    tape.backward(loss);
    for (std::size_t i = 0; i < reg.entries().size(); ++i) {
      auto& e = reg.entries()[i];
      if (!frozen_groups_.count(e.group) && tape.has_grad(*e.tensor)) {
        Tensor<T> grad = tape.grad(*e.tensor);
        AdamConfig ac;
        ac.lr = model_.group_lr(e.group);
        *e.tensor = adam_[i].step(e.tensor->detached(), grad, ac);
      } else {
        *e.tensor = e.tensor->detached();
      }
    }
    return bd;
  }

 private:
  Stage1Model<T>& model_;
  const SyntheticDataset& dataset_;
  std::uint64_t seed_;
  std::vector<OccupancyGrid> grids_;
  std::vector<AdamState<T>> adam_;
  std::vector<std::vector<int>> train_frames_;
  std::set<int> frozen_groups_;
  std::function<Tensor<T>(int, int)> extra_loss_;
};

struct ViewEval {
  double psnr = 0;
  double masked_psnr = 0;
  double ssim = 0;
  double depth_l1 = -1;  // -1 = no co-valid returns
  bool has_actor_pixels = false;
};

// Forward-only render of one view against its ground truth, using latent
// means. Masked PSNR restricts to GT actor pixels.
inline ViewEval evaluate_view(const Stage1Model<float>& model, const SyntheticDataset& dataset,
                              const std::vector<OccupancyGrid>& grids, int scene_index,
                              int frame) {
  const auto& rec = dataset.scenes[static_cast<std::size_t>(scene_index)];
  const auto& grid = grids[static_cast<std::size_t>(scene_index)];
  FieldBank<float> bank = scene_field_bank(model, dataset, scene_index, -1);
  const RenderConfig<float> rc = model.render_config();
  const std::uint64_t eval_seed = derive_seed(0, {static_cast<std::uint64_t>(SeedPurpose::kEval),
                                                  static_cast<std::uint64_t>(scene_index),
                                                  static_cast<std::uint64_t>(frame)});
  RenderedView<float> view = render_view(rec.desc, grid, bank, model.cnn, frame, rc, eval_seed);

  ViewEval ev;
  const Tensorf& gt = rec.images[static_cast<std::size_t>(frame)];
  ev.psnr = psnr(view.rgb, gt);
  ev.ssim = ssim(view.rgb, gt);
  std::vector<std::uint8_t> actor_mask(rec.masks[static_cast<std::size_t>(frame)].size(), 0);
  std::size_t n_actor = 0;
  for (std::size_t i = 0; i < actor_mask.size(); ++i)
    if (rec.masks[static_cast<std::size_t>(frame)][i] >= 2) {
      actor_mask[i] = 1;
      ++n_actor;
    }
  ev.has_actor_pixels = n_actor > 0;
  if (ev.has_actor_pixels) ev.masked_psnr = psnr(view.rgb, gt, &actor_mask);

  LidarRender<float> lr = render_lidar(rec.desc, grid, bank, frame, rc, eval_seed + 1);
  const auto& sweep = rec.sweeps[static_cast<std::size_t>(frame)];
  std::vector<bool> gt_hit(sweep.size());
  std::vector<float> gt_depth(sweep.size());
  for (std::size_t i = 0; i < sweep.size(); ++i) {
    gt_hit[i] = sweep[i].hit;
    gt_depth[i] = sweep[i].depth;
  }
  bool any_covalid = false;
  for (std::size_t i = 0; i < sweep.size(); ++i)
    if (gt_hit[i] && lr.hit[i]) any_covalid = true;
  if (any_covalid) ev.depth_l1 = depth_l1(lr.hit, lr.depth, gt_hit, gt_depth);
  return ev;
}

template <class T>
Stage1TrainResult train_stage1(Stage1Model<T>& model, const SyntheticDataset& dataset,
                               std::uint64_t seed,
                               const std::function<bool(int, const LossBreakdown&)>& on_step = {}) {
  Stage1Trainer<T> trainer(model, dataset, seed);
  Stage1TrainResult result;
  for (int s = 0; s < model.cfg.steps; ++s) {
    LossBreakdown bd = trainer.step(s);
    if (model.cfg.log_every > 0 && (s % model.cfg.log_every == 0 || s + 1 == model.cfg.steps))
      result.history.push_back({s, bd});
    result.steps_run = s + 1;
    if (on_step && !on_step(s, bd)) break;
  }
  return result;
}

}  // namespace ga
