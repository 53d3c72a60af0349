// Copyright Contributors to the sgrf Project
// SPDX-License-Identifier: Apache-2.0

#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "sgrf/checkpoint.hpp"
#include "sgrf/detection.hpp"
#include "sgrf/image.hpp"
#include "sgrf/metrics.hpp"
#include "sgrf/scene_io.hpp"
#include "sgrf/synthetic.hpp"
#include "sgrf/training.hpp"
#include "sgrf/volume_render.hpp"

namespace {

using namespace sgrf;

nlohmann::json load_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open: " + path.string());
  try {
    return nlohmann::json::parse(in, nullptr, true, true);  // allow comments
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

/// Rebuilds a frame graph with the geometry the checkpoint was trained with.
SceneGraph checkpoint_graph(const SceneModels& models, const SceneDataset& ds, int frame) {
  SceneGraph g = graph_for_frame(ds, frame);
  g.background.near = models.near;
  g.background.far = models.far;
  g.background.n_planes = models.n_planes;
  g.background.reference_pose = models.reference_pose;
  return g;
}

LearnedProvider make_provider(const SceneModels& m) {
  return LearnedProvider{&m.background, &m.classes, &m.latents, {}};
}

int cmd_train(const std::string& scene, const std::string& config_path, const std::string& out,
              int threads) {
  const SceneDataset ds = load_dataset(scene);
  TrainConfig config = train_config_from_json(load_json(config_path));
  if (threads > 0) config.threads = threads;
  const std::filesystem::path ckpt_path(out);
  const std::filesystem::path log_path = ckpt_path.string() + ".log";
  std::ofstream log(log_path);
  if (!log) throw Error("cannot open for write: " + log_path.string());

  TrainResult result = train(
      ds, config,
      [&](int iter, const SceneModels& m) {
        save_checkpoint(m, ckpt_path);
        std::cerr << "checkpoint at iteration " << iter << " -> " << ckpt_path.string() << "\n";
      },
      [&](const std::string& line) {
        log << line << "\n";
        log.flush();
      });
  if (result.diverged) {
    std::cerr << "training diverged; last good checkpoint kept\n";
    save_checkpoint(result.models, ckpt_path);
    return 3;
  }
  save_checkpoint(result.models, ckpt_path);
  std::cerr << "final train PSNR " << result.final_psnr << " dB\n";
  return 0;
}

NodeFilter parse_filter(const std::string& name) {
  NodeFilter f;
  if (name == "all")
    f.kind = NodeFilter::All;
  else if (name == "background")
    f.kind = NodeFilter::BackgroundOnly;
  else if (name == "objects")
    f.kind = NodeFilter::ObjectsOnly;
  else
    throw ValidationError("unknown filter '" + name + "' (use background|objects|all)");
  return f;
}

int cmd_render(const std::string& ckpt, const std::string& scene, int frame,
               const std::string& filter, const std::vector<double>& camera_offset,
               const std::string& out, int threads) {
  const SceneModels models = load_checkpoint(ckpt);
  const SceneDataset ds = load_dataset(scene);
  SceneGraph g = checkpoint_graph(models, ds, frame);
  if (!camera_offset.empty()) {
    const Vec3 off{camera_offset[0], camera_offset[1], camera_offset[2]};
    RigidTransform pose = g.camera_pose;
    pose.translation += pose.rotation * off;  // offset in the camera frame
    g = edit_graph(g, SetCameraPose{pose});
  }
  RenderOptions opts;
  opts.filter = parse_filter(filter);
  opts.n_object_samples = models.n_obj_samples;
  const ImageBuffer img = render_image(g, make_provider(models), opts, threads);
  write_ppm(img, out);
  return 0;
}

int cmd_edit(const std::string& ckpt, const std::string& scene, int frame, int track,
             const std::vector<double>& yaw_deg, const std::vector<double>& translate, bool remove,
             const std::string& out, int threads) {
  const SceneModels models = load_checkpoint(ckpt);
  const SceneDataset ds = load_dataset(scene);
  SceneGraph g = checkpoint_graph(models, ds, frame);
  const int n_edits = (yaw_deg.empty() ? 0 : 1) + (translate.empty() ? 0 : 1) + (remove ? 1 : 0);
  if (n_edits != 1)
    throw ValidationError("edit: give exactly one of --yaw, --translate, --remove");
  if (remove) {
    g = edit_graph(g, RemoveNode{track});
  } else if (!yaw_deg.empty()) {
    const ObjectNode* node = g.find_object(track);
    if (!node) throw LookupError("edit: unknown track id " + std::to_string(track));
    RigidTransform pose = node->pose;
    pose.rotation = pose.rotation * rotation_y(deg_to_rad(yaw_deg[0]));  // about the node's yaw axis
    g = edit_graph(g, SetPose{track, pose});
  } else {
    const ObjectNode* node = g.find_object(track);
    if (!node) throw LookupError("edit: unknown track id " + std::to_string(track));
    RigidTransform pose = node->pose;
    pose.translation += Vec3{translate[0], translate[1], translate[2]};
    g = edit_graph(g, SetPose{track, pose});
  }
  RenderOptions opts;
  opts.n_object_samples = models.n_obj_samples;
  const ImageBuffer img = render_image(g, make_provider(models), opts, threads);
  write_ppm(img, out);
  return 0;
}

int cmd_compose(const std::string& ckpt, const std::string& graph_file, int frame,
                const std::string& out, int threads) {
  const SceneModels models = load_checkpoint(ckpt);
  const SceneDataset ds = load_dataset(graph_file);
  const SceneGraph g = checkpoint_graph(models, ds, frame);
  RenderOptions opts;
  opts.n_object_samples = models.n_obj_samples;
  const ImageBuffer img = render_image(g, make_provider(models), opts, threads);
  write_ppm(img, out);
  return 0;
}

int cmd_detect(const std::string& ckpt, const std::string& scene, int frame,
               const std::string& image_override, const std::string& out, double spacing,
               int n_yaw, double threshold, int steps, std::uint64_t seed, int threads) {
  const SceneModels models = load_checkpoint(ckpt);
  const SceneDataset ds = load_dataset(scene);
  const SceneGraph g = checkpoint_graph(models, ds, frame);
  ImageBuffer observed;
  if (!image_override.empty()) {
    observed = read_ppm(image_override);
  } else {
    if (!ds.frames[frame].has_image())
      throw ValidationError("detect: frame has no image; pass --image");
    observed = ds.images[frame];
  }
  const AnchorGrid grid = default_anchor_grid(ds, 0.6, spacing, n_yaw);
  DetectConfig cfg;
  cfg.accept_threshold = threshold;
  cfg.refine_steps = steps;
  cfg.seed = seed;
  cfg.threads = threads;
  const auto detections = detect(observed, models, g, grid, class_stats(ds), cfg);
  std::ofstream f(out);
  if (!f) throw Error("cannot open for write: " + out);
  for (const auto& d : detections) f << format_detection(d) << "\n";
  std::cerr << detections.size() << " candidates, "
            << std::count_if(detections.begin(), detections.end(),
                             [](const Detection& d) { return d.accepted; })
            << " accepted\n";
  return 0;
}

int cmd_eval(const std::string& ckpt, const std::string& scene, const std::string& out,
             int threads) {
  const SceneModels models = load_checkpoint(ckpt);
  const SceneDataset ds = load_dataset(scene);
  std::ofstream f(out);
  if (!f) throw Error("cannot open for write: " + out);
  RenderOptions opts;
  opts.n_object_samples = models.n_obj_samples;
  const auto provider = make_provider(models);
  double se = 0.0;
  std::int64_t n = 0;
  double ssim_sum = 0.0;
  int ssim_count = 0;
  for (std::size_t k = 0; k < ds.frames.size(); ++k) {
    if (!ds.frames[k].has_image()) continue;
    const SceneGraph g = checkpoint_graph(models, ds, static_cast<int>(k));
    const ImageBuffer img = render_image(g, provider, opts, threads);
    const double frame_psnr = psnr(img, ds.images[k]);
    const double frame_ssim = ssim(img, ds.images[k]);
    f << "frame," << k << ",psnr," << frame_psnr << ",ssim," << frame_ssim << "\n";
    for (std::size_t i = 0; i < img.data.size(); ++i) {
      const double d = img.data[i] - ds.images[k].data[i];
      se += d * d;
    }
    n += static_cast<std::int64_t>(img.data.size());
    ssim_sum += frame_ssim;
    ++ssim_count;
  }
  if (n == 0) throw ValidationError("eval: dataset has no images");
  const double m = se / static_cast<double>(n);
  const double overall = m == 0 ? std::numeric_limits<double>::infinity() : 10.0 * std::log10(1.0 / m);
  char line[128];
  std::snprintf(line, sizeof line, "overall,psnr,%.6f,ssim,%.6f", overall, ssim_sum / ssim_count);
  f << line << "\n";
  std::cout << line << "\n";
  return 0;
}

int cmd_synth(const std::string& spec_path, const std::string& out_dir) {
  const nlohmann::json j = load_json(spec_path);
  SynthSpec spec;
  if (j.contains("seed")) spec.seed = j.at("seed").get<std::uint64_t>();
  if (j.contains("n_frames")) spec.n_frames = j.at("n_frames").get<int>();
  if (j.contains("resolution")) spec.resolution = j.at("resolution").get<int>();
  if (j.contains("n_objects")) spec.n_objects = j.at("n_objects").get<int>();
  generate_synthetic(spec, out_dir);
  std::cerr << "wrote " << spec.n_frames << " frames to " << out_dir << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"scene-graph radiance fields: train, render, edit, and detect"};
  app.require_subcommand(1);
  int threads = 0;
  app.add_option("--threads", threads, "worker threads (0 = hardware)");

  auto* train_cmd = app.add_subcommand("train", "optimize models on a scene");
  std::string scene, config, out, ckpt;
  train_cmd->add_option("scene", scene)->required();
  train_cmd->add_option("config", config)->required();
  train_cmd->add_option("-o,--out", out, "checkpoint path")->required();

  auto* render_cmd = app.add_subcommand("render", "render a frame from a checkpoint");
  int frame = 0;
  std::string filter = "all";
  std::vector<double> camera_offset;
  render_cmd->add_option("ckpt", ckpt)->required();
  render_cmd->add_option("scene", scene)->required();
  render_cmd->add_option("--frame", frame)->required();
  render_cmd->add_option("--filter", filter, "background|objects|all");
  render_cmd->add_option("--camera-offset", camera_offset, "dx dy dz in the camera frame")
      ->expected(3);
  render_cmd->add_option("-o,--out", out)->required();

  auto* edit_cmd = app.add_subcommand("edit", "edit one node and render");
  int track = -1;
  std::vector<double> yaw_deg, translate;
  bool remove = false;
  edit_cmd->add_option("ckpt", ckpt)->required();
  edit_cmd->add_option("scene", scene)->required();
  edit_cmd->add_option("--frame", frame)->required();
  edit_cmd->add_option("--track", track)->required();
  edit_cmd->add_option("--yaw", yaw_deg, "extra yaw in degrees")->expected(1);
  edit_cmd->add_option("--translate", translate, "dx dy dz in world frame")->expected(3);
  edit_cmd->add_flag("--remove", remove, "remove the node");
  edit_cmd->add_option("-o,--out", out)->required();

  auto* compose_cmd = app.add_subcommand("compose", "render a novel scene graph");
  compose_cmd->add_option("ckpt", ckpt)->required();
  compose_cmd->add_option("graph", scene, "scene-graph description file")->required();
  compose_cmd->add_option("--frame", frame, "frame within the graph file (default 0)");
  compose_cmd->add_option("-o,--out", out)->required();

  auto* detect_cmd = app.add_subcommand("detect", "3D detection by inverse rendering");
  std::string image_override;
  double spacing = 0.5, threshold = -1.0;
  int n_yaw = 8, steps = 60;
  std::uint64_t seed = 7;
  detect_cmd->add_option("ckpt", ckpt)->required();
  detect_cmd->add_option("scene", scene)->required();
  detect_cmd->add_option("--frame", frame)->required();
  detect_cmd->add_option("--image", image_override, "observed image (default: the frame's image)");
  detect_cmd->add_option("--spacing", spacing, "anchor spacing in meters");
  detect_cmd->add_option("--yaw-steps", n_yaw, "yaw hypotheses per anchor");
  detect_cmd->add_option("--threshold", threshold, "absolute acceptance threshold");
  detect_cmd->add_option("--steps", steps, "refinement steps");
  detect_cmd->add_option("--seed", seed);
  detect_cmd->add_option("-o,--out", out)->required();

  auto* eval_cmd = app.add_subcommand("eval", "PSNR/SSIM against dataset images");
  eval_cmd->add_option("ckpt", ckpt)->required();
  eval_cmd->add_option("scene", scene)->required();
  eval_cmd->add_option("-o,--out", out)->required();

  auto* synth_cmd = app.add_subcommand("synth", "generate the synthetic dataset");
  std::string spec_path, out_dir;
  synth_cmd->add_option("spec", spec_path, "JSON spec: seed, n_frames, resolution, n_objects")
      ->required();
  synth_cmd->add_option("-o,--out", out_dir, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    // Exit 0 for --help, 1 for any usage error.
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    if (app.got_subcommand(train_cmd)) return cmd_train(scene, config, out, threads);
    if (app.got_subcommand(render_cmd))
      return cmd_render(ckpt, scene, frame, filter, camera_offset, out, threads);
    if (app.got_subcommand(edit_cmd))
      return cmd_edit(ckpt, scene, frame, track, yaw_deg, translate, remove, out, threads);
    if (app.got_subcommand(compose_cmd)) return cmd_compose(ckpt, scene, frame, out, threads);
    if (app.got_subcommand(detect_cmd))
      return cmd_detect(ckpt, scene, frame, image_override, out, spacing, n_yaw, threshold, steps,
                        seed, threads);
    if (app.got_subcommand(eval_cmd)) return cmd_eval(ckpt, scene, out, threads);
    if (app.got_subcommand(synth_cmd)) return cmd_synth(spec_path, out_dir);
  } catch (const ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const LookupError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 1;
}
