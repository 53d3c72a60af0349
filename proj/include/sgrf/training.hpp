// Copyright Contributors to the sgrf Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "sgrf/errors.hpp"
#include "sgrf/models.hpp"
#include "sgrf/parallel.hpp"
#include "sgrf/rng.hpp"
#include "sgrf/sampling.hpp"
#include "sgrf/scene_io.hpp"
#include "sgrf/volume_render.hpp"

namespace sgrf {

/// Joint-optimization settings. Defaults are the desk-scale configuration;
/// the full-scale setup uses 350k iterations and the large architecture.
struct TrainConfig {
  std::uint64_t seed = 1;
  int iterations = 20000;
  int batch_size = 1024;
  double lr_base = 5e-4;
  double lr_final = 5e-5;
  double sigma_latent = 1.0;  // prior weight is 1 / sigma_latent^2
  double f_obj = 0.5;         // fraction of each batch drawn from projected object boxes
  int n_planes = 6;
  int n_obj_samples = 7;
  int checkpoint_every = 5000;
  int log_every = 100;
  bool jitter = false;
  bool regularize_all_latents = false;  // default: only latents touched by the batch
  int threads = 0;                      // 0 = hardware concurrency
  ModelArchitecture arch;

  void validate() const {
    if (batch_size < 1) throw ValidationError("config: batch_size must be >= 1");
    if (iterations < 1) throw ValidationError("config: iterations must be >= 1");
    if (!(f_obj >= 0.0 && f_obj <= 1.0)) throw ValidationError("config: f_obj must be in [0,1]");
    if (!(sigma_latent > 0)) throw ValidationError("config: sigma_latent must be positive");
    if (n_planes < 2 || n_obj_samples < 2)
      throw ValidationError("config: n_planes and n_obj_samples must be >= 2");
  }
};

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  auto get = [&j](const char* key, auto& slot) {
    if (j.contains(key)) slot = j.at(key).template get<std::decay_t<decltype(slot)>>();
  };
  get("seed", c.seed);
  get("iterations", c.iterations);
  get("batch_size", c.batch_size);
  get("lr_base", c.lr_base);
  get("lr_final", c.lr_final);
  get("sigma_latent", c.sigma_latent);
  get("f_obj", c.f_obj);
  get("n_planes", c.n_planes);
  get("n_obj_samples", c.n_obj_samples);
  get("checkpoint_every", c.checkpoint_every);
  get("log_every", c.log_every);
  get("jitter", c.jitter);
  get("regularize_all_latents", c.regularize_all_latents);
  get("threads", c.threads);
  get("latent_dim", c.arch.latent_dim);
  get("depth1", c.arch.depth1);
  get("width1", c.arch.width1);
  get("skips", c.arch.skips);
  get("feature_dim", c.arch.feature_dim);
  get("depth2", c.arch.depth2);
  get("width2", c.arch.width2);
  get("pos_freqs", c.arch.pos_freqs);
  get("dir_freqs", c.arch.dir_freqs);
  get("pose_freqs", c.arch.pose_freqs);
  get("include_input", c.arch.include_input);
  c.validate();
  return c;
}

/// Canonical hash of a config for checkpoint identity.
inline std::uint64_t config_hash(const TrainConfig& c) {
  nlohmann::ordered_json j;
  j["seed"] = c.seed;
  j["iterations"] = c.iterations;
  j["batch_size"] = c.batch_size;
  j["lr_base"] = c.lr_base;
  j["lr_final"] = c.lr_final;
  j["sigma_latent"] = c.sigma_latent;
  j["f_obj"] = c.f_obj;
  j["n_planes"] = c.n_planes;
  j["n_obj_samples"] = c.n_obj_samples;
  j["jitter"] = c.jitter;
  j["regularize_all_latents"] = c.regularize_all_latents;
  j["arch"] = {c.arch.depth1,     c.arch.width1,    c.arch.skips,      c.arch.feature_dim,
               c.arch.depth2,     c.arch.width2,    c.arch.pos_freqs,  c.arch.dir_freqs,
               c.arch.pose_freqs, c.arch.include_input, c.arch.latent_dim};
  const std::string text = j.dump();
  return fnv1a64(text.data(), text.size());
}

/// Linearly decaying learning rate; endpoints exact.
inline double learning_rate_at(const TrainConfig& c, std::int64_t iteration) {
  const double f = iteration / static_cast<double>(c.iterations);
  return c.lr_base * (1.0 - f) + c.lr_final * f;
}

/// Total squared pixel error plus the zero-mean Gaussian latent prior:
///   sum_r ||pred - target||^2 + (1/sigma_lat^2) sum_o ||l_o||^2.
inline double photometric_loss(std::span<const Vec3> pred, std::span<const Vec3> target,
                               const std::vector<const std::vector<double>*>& latents,
                               double sigma_lat) {
  if (pred.size() != target.size())
    throw ValidationError("photometric_loss: batch length mismatch");
  double loss = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const Vec3 d = pred[i] - target[i];
    loss += dot(d, d);
  }
  const double w = 1.0 / (sigma_lat * sigma_lat);
  for (const auto* l : latents) {
    double s = 0.0;
    for (double v : *l) s += v * v;
    loss += w * s;
  }
  return loss;
}

/// One ray drawn for a batch.
struct RayDraw {
  int frame = 0;
  int px = 0, py = 0;
  bool jittered = false;
  double jitter[2] = {0.5, 0.5};
  Vec3 target;
};

/// Balanced ray batching: at least ceil(f_obj * batch_size) rays from pixels
/// inside some projected object box (capped by the number of such pixels),
/// the remainder uniform over all pixels of all frames, without replacement
/// within the batch. When no frame has any object pixels the batch falls back
/// to uniform sampling and sets *fell_back.
inline std::vector<RayDraw> sample_ray_batch(const SceneDataset& ds,
                                             const std::vector<SceneGraph>& graphs, int batch_size,
                                             double f_obj, Rng& rng, bool jitter = false,
                                             bool* fell_back = nullptr) {
  const int w = ds.intrinsics.width, h = ds.intrinsics.height;
  const std::int64_t frame_pixels = static_cast<std::int64_t>(w) * h;
  const std::int64_t total_pixels = frame_pixels * static_cast<std::int64_t>(ds.frames.size());
  if (batch_size > total_pixels)
    throw ValidationError("sample_ray_batch: batch larger than the pixel population");

  // Pixels covered by some projected box, per frame (poses are fixed, but the
  // caller may pass edited graphs, so recompute from what we were given).
  std::vector<std::int64_t> object_pixels;
  for (const auto& g : graphs) {
    std::vector<PixelRect> rects;
    rects.reserve(g.objects.size());
    for (const auto& node : g.objects)
      rects.push_back(project_box_rect(g.intrinsics, g.camera_pose, node));
    for (int py = 0; py < h; ++py)
      for (int px = 0; px < w; ++px)
        for (const auto& r : rects)
          if (!r.empty() && r.contains(px, py)) {
            object_pixels.push_back(static_cast<std::int64_t>(g.frame_id) * frame_pixels +
                                    py * static_cast<std::int64_t>(w) + px);
            break;
          }
  }

  if (fell_back) *fell_back = false;
  std::int64_t quota = static_cast<std::int64_t>(std::ceil(f_obj * batch_size));
  if (object_pixels.empty() && f_obj > 0) {
    quota = 0;
    if (fell_back) *fell_back = true;
  }
  quota = std::min<std::int64_t>(quota, static_cast<std::int64_t>(object_pixels.size()));
  quota = std::min<std::int64_t>(quota, batch_size);

  std::set<std::int64_t> used;
  std::vector<RayDraw> batch;
  batch.reserve(batch_size);
  auto push = [&](std::int64_t key) {
    RayDraw d;
    d.frame = static_cast<int>(key / frame_pixels);
    const std::int64_t rem = key % frame_pixels;
    d.px = static_cast<int>(rem % w);
    d.py = static_cast<int>(rem / w);
    if (jitter) {
      d.jittered = true;
      d.jitter[0] = rng.uniform();
      d.jitter[1] = rng.uniform();
    }
    d.target = ds.images[d.frame].pixel(d.px, d.py);
    batch.push_back(d);
  };

  while (static_cast<std::int64_t>(batch.size()) < quota) {
    const std::int64_t key = object_pixels[rng.below(object_pixels.size())];
    if (used.insert(key).second) push(key);
  }
  while (static_cast<int>(batch.size()) < batch_size) {
    const std::int64_t key = static_cast<std::int64_t>(rng.below(total_pixels));
    if (used.insert(key).second) push(key);
  }
  return batch;
}

/// Gradient accumulators matching a SceneModels layout.
struct GradBuffers {
  std::vector<double> background;
  std::map<std::string, std::vector<double>> classes;
  std::map<int, std::vector<double>> latents;
  std::set<int> touched_latents;

  static GradBuffers like(const SceneModels& m) {
    GradBuffers g;
    g.background.assign(m.background.mlp.params.size(), 0.0);
    for (const auto& [id, cm] : m.classes) g.classes[id].assign(cm.mlp.params.size(), 0.0);
    for (const auto& [id, l] : m.latents.entries) g.latents[id].assign(l.size(), 0.0);
    return g;
  }

  void zero() {
    std::fill(background.begin(), background.end(), 0.0);
    for (auto& [id, v] : classes) std::fill(v.begin(), v.end(), 0.0);
    for (auto& [id, v] : latents) std::fill(v.begin(), v.end(), 0.0);
    touched_latents.clear();
  }

  void add(const GradBuffers& o) {
    for (std::size_t i = 0; i < background.size(); ++i) background[i] += o.background[i];
    for (auto& [id, v] : classes) {
      const auto& src = o.classes.at(id);
      for (std::size_t i = 0; i < v.size(); ++i) v[i] += src[i];
    }
    for (auto& [id, v] : latents) {
      const auto& src = o.latents.at(id);
      for (std::size_t i = 0; i < v.size(); ++i) v[i] += src[i];
    }
    touched_latents.insert(o.touched_latents.begin(), o.touched_latents.end());
  }

  bool finite() const {
    auto ok = [](const std::vector<double>& v) {
      for (double x : v)
        if (!std::isfinite(x)) return false;
      return true;
    };
    if (!ok(background)) return false;
    for (const auto& [id, v] : classes)
      if (!ok(v)) return false;
    for (const auto& [id, v] : latents)
      if (!ok(v)) return false;
    return true;
  }
};

/// Gradients of a scalar objective with respect to one candidate object's
/// pose, dims, and latent (used by inverse-rendering detection; the sample
/// positions along the ray are treated as constants of the current iterate).
struct CandidateGrads {
  int track_id = -1;
  Vec3 dtranslation;
  double dyaw = 0;
  Vec3 ddims;  // d/d(length, height, width)
  std::vector<double> dlatent;
};

/// Ray-level differentiable renderer over learned models: forward records all
/// sample traces, backward distributes dL/dC to parameters, latents, and
/// optionally one candidate node's inputs.
class TracedRenderer {
 public:
  explicit TracedRenderer(const SceneModels& models) : models_(&models) {}

  Vec3 forward(const SceneGraph& graph, const PlaneStack& planes, const Ray& ray,
               const NodeFilter& filter = {}, const Vec3& bg_color = {0, 0, 0}) {
    set_ = assemble_samples(ray, graph, planes, models_->n_obj_samples, filter);
    const std::size_t n = set_.points.size();
    shaded_.resize(n);
    if (bg_traces_.size() < n) bg_traces_.resize(n);
    if (obj_traces_.size() < n) obj_traces_.resize(n);
    std::size_t bg_i = 0, obj_i = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const SamplePoint& p = set_.points[i];
      FieldOutput f;
      if (p.object_index < 0) {
        f = background_forward(models_->background, p.x_world, ray.dir, bg_traces_[bg_i++]);
      } else {
        const ObjectNode& node = graph.objects[p.object_index];
        const auto& cm = models_->class_model(node.class_id);
        f = object_forward(cm, models_->latents.at(node.latent_ref), p.x_obj, p.d_obj,
                           node.position(), obj_traces_[obj_i++]);
      }
      shaded_[i] = {p.t, f.sigma, f.color};
    }
    bg_color_ = bg_color;
    return composite(shaded_, set_.t_far, bg_color, &ctrace_);
  }

  /// Mean compositing weight contributed by `track_id` over the last forward.
  double track_weight(int track_id) const {
    double w = 0.0;
    for (std::size_t i = 0; i < set_.points.size(); ++i)
      if (set_.points[i].track_id == track_id) w += ctrace_.weight[i];
    return w;
  }

  bool hit_track(int track_id) const {
    for (const auto& p : set_.points)
      if (p.track_id == track_id) return true;
    return false;
  }

  /// Backward from dL/dC over the recorded forward. Parameter and latent
  /// gradients accumulate into `grads` when non-null. When `cand` is non-null,
  /// gradients for the node with cand->track_id flow into its pose/dims/latent
  /// entries instead of (in addition to) the shared buffers; `scratch_params`
  /// must then point to a writable buffer of that class's parameter size that
  /// absorbs the frozen-parameter gradients.
  void backward(const SceneGraph& graph, const Ray& ray, const Vec3& dC, GradBuffers* grads,
                CandidateGrads* cand = nullptr, std::vector<double>* scratch_params = nullptr) {
    composite_backward(shaded_, ctrace_, bg_color_, dC, sgrads_);
    std::size_t bg_i = 0, obj_i = 0;
    for (std::size_t i = 0; i < set_.points.size(); ++i) {
      const SamplePoint& p = set_.points[i];
      if (p.object_index < 0) {
        auto& tr = bg_traces_[bg_i++];
        if (grads)
          background_backward(models_->background, tr, sgrads_[i].dsigma, sgrads_[i].dcolor,
                              grads->background.data(), nullptr, nullptr);
        continue;
      }
      const ObjectNode& node = graph.objects[p.object_index];
      const auto& cm = models_->class_model(node.class_id);
      auto& tr = obj_traces_[obj_i++];
      const bool is_candidate = cand && node.track_id == cand->track_id;
      if (is_candidate) {
        ObjectInputGrads ig;
        double* param_sink = scratch_params ? scratch_params->data()
                                            : (grads ? grads->classes.at(node.class_id).data()
                                                     : nullptr);
        object_backward(cm, tr, sgrads_[i].dsigma, sgrads_[i].dcolor, param_sink,
                        cand->dlatent.data(), &ig);
        accumulate_candidate_grads(node, p, ray, ig, *cand);
      } else if (grads) {
        object_backward(cm, tr, sgrads_[i].dsigma, sgrads_[i].dcolor,
                        grads->classes.at(node.class_id).data(),
                        grads->latents.at(node.latent_ref).data(), nullptr);
        grads->touched_latents.insert(node.latent_ref);
      }
    }
  }

  const SampleSet& samples() const { return set_; }

 private:
  /// Chains object-frame input gradients to (translation, yaw, dims). The
  /// object transform is x_o = S R^T (x_w - t) with S = diag(2/dims) and
  /// R = R_y(yaw); the direction path runs through renormalization.
  void accumulate_candidate_grads(const ObjectNode& node, const SamplePoint& p, const Ray& ray,
                                  const ObjectInputGrads& ig, CandidateGrads& cand) const {
    const Mat3& R = node.pose.rotation;
    const Vec3 s = unit_scale(node.dims);
    const Vec3 v = p.x_world - node.pose.translation;

    // position path
    cand.dtranslation += R * hadamard(s, ig.dx_o) * -1.0;
    // p_o path (p_o is the node translation)
    cand.dtranslation += ig.dp_o;

    // yaw derivative of R_y
    const double cy = R(0, 0), sy = R(0, 2);  // cos(yaw), sin(yaw)
    Mat3 dRt;  // d(R^T)/dyaw
    dRt(0, 0) = -sy;
    dRt(0, 1) = 0;
    dRt(0, 2) = -cy;
    dRt(1, 0) = 0;
    dRt(1, 1) = 0;
    dRt(1, 2) = 0;
    dRt(2, 0) = cy;
    dRt(2, 1) = 0;
    dRt(2, 2) = -sy;
    cand.dyaw += dot(ig.dx_o, hadamard(s, dRt * v));

    // dims path through S (dS_a/ddim_a = -s_a / dim_a)
    const Vec3 local = R.transposed() * v;
    const double dims[3] = {node.dims.length, node.dims.height, node.dims.width};
    for (int a = 0; a < 3; ++a) cand.ddims[a] += ig.dx_o[a] * (-s[a] * local[a] / dims[a]);

    // direction path: d_o = u / |u|, u = S R^T d_w
    const Vec3 u = hadamard(s, R.transposed() * ray.dir);
    const double un = norm(u);
    const Vec3 d_o = u / un;
    const Vec3 du = (ig.dd_o - d_o * dot(d_o, ig.dd_o)) / un;
    cand.dyaw += dot(du, hadamard(s, dRt * ray.dir));
    const Vec3 dlocal = R.transposed() * ray.dir;
    for (int a = 0; a < 3; ++a) cand.ddims[a] += du[a] * (-s[a] * dlocal[a] / dims[a]);
  }

  const SceneModels* models_;
  SampleSet set_;
  std::vector<ShadedSample> shaded_;
  std::vector<FieldEvalTrace> bg_traces_, obj_traces_;
  CompositeTrace ctrace_;
  std::vector<SampleGrad> sgrads_;
  Vec3 bg_color_;
};

/// Adam moment buffers for one parameter array.
struct AdamSlot {
  std::vector<double> m, v;

  explicit AdamSlot(std::size_t n = 0) : m(n, 0.0), v(n, 0.0) {}
};

inline constexpr double kAdamBeta1 = 0.9;
inline constexpr double kAdamBeta2 = 0.999;
inline constexpr double kAdamEps = 1e-8;

/// One Adam update with bias correction; t counts from 1.
inline void adam_step(std::vector<double>& params, const std::vector<double>& grad, AdamSlot& slot,
                      double lr, std::int64_t t) {
  if (params.size() != grad.size() || slot.m.size() != params.size())
    throw ValidationError("adam_step: shape mismatch");
  const double c1 = 1.0 - std::pow(kAdamBeta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(kAdamBeta2, static_cast<double>(t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grad[i];
    slot.m[i] = kAdamBeta1 * slot.m[i] + (1.0 - kAdamBeta1) * g;
    slot.v[i] = kAdamBeta2 * slot.v[i] + (1.0 - kAdamBeta2) * g * g;
    params[i] -= lr * (slot.m[i] / c1) / (std::sqrt(slot.v[i] / c2) + kAdamEps);
  }
}

/// Optimizer state across the whole model set.
struct TrainState {
  std::int64_t iteration = 0;
  double lr = 0;
  AdamSlot background;
  std::map<std::string, AdamSlot> classes;
  std::map<int, AdamSlot> latents;
  Rng rng;
  int rejected_steps = 0;

  static TrainState like(const SceneModels& m, std::uint64_t seed) {
    TrainState s;
    s.rng = Rng(seed);
    s.background = AdamSlot(m.background.mlp.params.size());
    for (const auto& [id, cm] : m.classes) s.classes.emplace(id, AdamSlot(cm.mlp.params.size()));
    for (const auto& [id, l] : m.latents.entries) s.latents.emplace(id, AdamSlot(l.size()));
    return s;
  }
};

struct TrainResult {
  SceneModels models;
  std::vector<std::string> log_lines;  // "iter,loss,psnr,lr"
  bool diverged = false;
  bool balance_fell_back = false;
  int rejected_steps = 0;
  double final_psnr = 0.0;
};

/// Pooled train-set PSNR of the models against the dataset images (deterministic
/// full-frame renders, identical to what `eval` reports).
inline double dataset_psnr(const SceneModels& models, const SceneDataset& ds, int threads = 0) {
  LearnedProvider provider{&models.background, &models.classes, &models.latents, {}};
  RenderOptions opts;
  opts.n_object_samples = models.n_obj_samples;
  double se = 0.0;
  std::int64_t n = 0;
  for (std::size_t k = 0; k < ds.frames.size(); ++k) {
    if (!ds.frames[k].has_image()) continue;
    SceneGraph g = graph_for_frame(ds, static_cast<int>(k));
    g.background.n_planes = models.n_planes;
    g.background.near = models.near;
    g.background.far = models.far;
    g.background.reference_pose = models.reference_pose;
    const ImageBuffer img = render_image(g, provider, opts, threads);
    for (std::size_t i = 0; i < img.data.size(); ++i) {
      const double d = img.data[i] - ds.images[k].data[i];
      se += d * d;
    }
    n += static_cast<std::int64_t>(img.data.size());
  }
  if (n == 0) throw ValidationError("dataset_psnr: dataset has no images");
  const double m = se / static_cast<double>(n);
  return m == 0.0 ? std::numeric_limits<double>::infinity() : 10.0 * std::log10(1.0 / m);
}

/// Joint optimization of the background network, class networks, and latent
/// table against the dataset images. Deterministic for a fixed seed and
/// config, independent of the worker count. Hooks observe checkpoints and
/// appended log lines as they happen.
inline TrainResult train(const SceneDataset& dataset, const TrainConfig& config,
                         const std::function<void(int, const SceneModels&)>& checkpoint_hook = {},
                         const std::function<void(const std::string&)>& log_hook = {}) {
  config.validate();
  if (dataset.frames.empty()) throw ValidationError("train: empty dataset");
  for (std::size_t k = 0; k < dataset.frames.size(); ++k)
    if (!dataset.frames[k].has_image())
      throw ValidationError("train: frame " + std::to_string(k) + " has no image");

  SceneDataset ds = dataset;
  ds.n_planes = config.n_planes;

  TrainResult result;
  result.models = build_models(config.arch, ds.class_ids(), ds.track_ids(), ds.near, ds.far,
                               config.n_planes, config.n_obj_samples,
                               ds.frames.front().cam_pose, config.seed);
  result.models.config_hash = config_hash(config);
  SceneModels& models = result.models;

  std::vector<SceneGraph> graphs;
  graphs.reserve(ds.frames.size());
  for (std::size_t k = 0; k < ds.frames.size(); ++k)
    graphs.push_back(graph_for_frame(ds, static_cast<int>(k)));
  const PlaneStack planes = PlaneStack::make(graphs.front().background);

  const int n_threads = config.threads > 0 ? config.threads : hardware_threads();
  constexpr int kChunks = 16;
  std::vector<GradBuffers> chunk_grads;
  std::vector<TracedRenderer> chunk_renderers;
  for (int c = 0; c < kChunks; ++c) {
    chunk_grads.push_back(GradBuffers::like(models));
    chunk_renderers.emplace_back(models);
  }
  GradBuffers grads = GradBuffers::like(models);
  TrainState state = TrainState::like(models, config.seed ^ 0x9e3779b97f4a7c15ull);

  SceneModels snapshot = models;  // last good checkpoint for the divergence guard
  const double prior_w = 1.0 / (config.sigma_latent * config.sigma_latent);

  for (int iter = 0; iter < config.iterations; ++iter) {
    state.iteration = iter;
    state.lr = learning_rate_at(config, iter);

    bool fell_back = false;
    const auto batch = sample_ray_batch(ds, graphs, config.batch_size, config.f_obj, state.rng,
                                        config.jitter, &fell_back);
    result.balance_fell_back = result.balance_fell_back || fell_back;

    std::vector<double> chunk_se(kChunks, 0.0);
    parallel_chunks(batch.size(), kChunks, n_threads, [&](int c, std::size_t begin, std::size_t end) {
      GradBuffers& g = chunk_grads[c];
      g.zero();
      TracedRenderer& renderer = chunk_renderers[c];
      double se = 0.0;
      for (std::size_t i = begin; i < end; ++i) {
        const RayDraw& draw = batch[i];
        const SceneGraph& graph = graphs[draw.frame];
        const Ray ray = generate_ray(graph.intrinsics, graph.camera_pose, draw.px, draw.py,
                                     draw.jittered ? draw.jitter : nullptr);
        const Vec3 pred = renderer.forward(graph, planes, ray);
        const Vec3 diff = pred - draw.target;
        se += dot(diff, diff);
        renderer.backward(graph, ray, diff * 2.0, &g);
      }
      chunk_se[c] = se;
    });

    grads.zero();
    double loss = 0.0;
    for (int c = 0; c < kChunks; ++c) {
      grads.add(chunk_grads[c]);
      loss += chunk_se[c];
    }
    const double batch_mse = loss / (3.0 * batch.size());

    // Latent prior: batch-active latents by default, whole table by flag.
    for (auto& [id, l] : models.latents.entries) {
      if (!config.regularize_all_latents && !grads.touched_latents.count(id)) continue;
      auto& gl = grads.latents.at(id);
      for (std::size_t i = 0; i < l.size(); ++i) {
        loss += prior_w * l[i] * l[i];
        gl[i] += 2.0 * prior_w * l[i];
      }
    }

    if (!std::isfinite(loss)) {
      result.diverged = true;
      models = snapshot;
      result.log_lines.push_back(std::to_string(iter) + ",nan,nan," + std::to_string(state.lr));
      if (log_hook) log_hook(result.log_lines.back());
      break;
    }

    if (!grads.finite()) {
      ++state.rejected_steps;
    } else {
      const std::int64_t t = iter + 1;
      adam_step(models.background.mlp.params, grads.background, state.background, state.lr, t);
      for (auto& [id, cm] : models.classes)
        adam_step(cm.mlp.params, grads.classes.at(id), state.classes.at(id), state.lr, t);
      for (auto& [id, l] : models.latents.entries)
        adam_step(l, grads.latents.at(id), state.latents.at(id), state.lr, t);
    }

    if (iter % config.log_every == 0 || iter + 1 == config.iterations) {
      char line[128];
      std::snprintf(line, sizeof line, "%d,%.8g,%.4f,%.8g", iter, loss,
                    10.0 * std::log10(1.0 / std::max(batch_mse, 1e-12)), state.lr);
      result.log_lines.emplace_back(line);
      if (log_hook) log_hook(result.log_lines.back());
    }
    if (config.checkpoint_every > 0 && (iter + 1) % config.checkpoint_every == 0) {
      snapshot = models;
      if (checkpoint_hook) checkpoint_hook(iter + 1, models);
    }
  }

  result.rejected_steps = state.rejected_steps;
  if (!result.diverged) {
    result.final_psnr = dataset_psnr(models, ds, n_threads);
    char line[64];
    std::snprintf(line, sizeof line, "final,psnr,%.6f", result.final_psnr);
    result.log_lines.emplace_back(line);
    if (log_hook) log_hook(result.log_lines.back());
  }
  return result;
}

}  // namespace sgrf
