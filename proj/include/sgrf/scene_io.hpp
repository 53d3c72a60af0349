// Copyright Contributors to the sgrf Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "sgrf/errors.hpp"
#include "sgrf/image.hpp"
#include "sgrf/scene_graph.hpp"

namespace sgrf {

/// Default per-track box scale multipliers (length, height, width). Dataset
/// boxes are grown on load so each node also covers the shadow it casts;
/// files can override per track with a `trackscale` line.
inline constexpr Vec3 kDefaultTrackScale{1.4, 1.0, 1.4};

/// One tracked box observation in one frame. Poses keep the file's original
/// parameterization (yaw angle or full rotation) so datasets round-trip
/// exactly through save/load.
struct TrackObs {
  int track_id = -1;
  std::string class_id;
  RigidTransform pose;
  BoxDims dims;  // raw file dims; scale multipliers apply at graph assembly
  std::optional<int> latent_alias;
  std::optional<double> yaw_deg;  // set when the file used the yaw form

  bool operator==(const TrackObs&) const = default;
};

struct FrameData {
  int frame_id = 0;
  std::string image_path;  // "-" when the frame has no reference image
  RigidTransform cam_pose;
  std::optional<Vec3> euler_deg;  // yaw, pitch, roll when the file used angles
  std::vector<TrackObs> tracks;

  bool has_image() const { return image_path != "-"; }
  bool operator==(const FrameData&) const = default;
};

/// Parsed scene-description file plus its reference images.
struct SceneDataset {
  Intrinsics intrinsics;
  double near = 0, far = 0;
  int n_planes = 6;
  std::vector<FrameData> frames;  // frame ids contiguous from 0
  std::map<int, Vec3> track_scale;
  std::filesystem::path base_dir;
  std::vector<ImageBuffer> images;  // parallel to frames; empty buffer when absent

  Vec3 scale_for(int track_id) const {
    const auto it = track_scale.find(track_id);
    return it == track_scale.end() ? kDefaultTrackScale : it->second;
  }

  const FrameData& frame(int id) const {
    if (id < 0 || id >= static_cast<int>(frames.size()))
      throw LookupError("dataset: no frame " + std::to_string(id));
    return frames[id];
  }

  /// Distinct class ids in first-appearance order.
  std::vector<std::string> class_ids() const {
    std::vector<std::string> out;
    for (const auto& f : frames)
      for (const auto& t : f.tracks)
        if (std::find(out.begin(), out.end(), t.class_id) == out.end()) out.push_back(t.class_id);
    return out;
  }

  /// Distinct track ids, ascending.
  std::vector<int> track_ids() const {
    std::set<int> s;
    for (const auto& f : frames)
      for (const auto& t : f.tracks) s.insert(t.track_id);
    return {s.begin(), s.end()};
  }
};

namespace detail {

inline std::vector<std::string> split_ws(const std::string& line) {
  std::vector<std::string> out;
  std::istringstream ss(line);
  std::string tok;
  while (ss >> tok) out.push_back(tok);
  return out;
}

struct LineCursor {
  const std::filesystem::path& path;
  int line_no = 0;

  [[noreturn]] void fail(const std::string& msg) const {
    throw ParseError(path.string() + ":" + std::to_string(line_no) + ": " + msg);
  }

  double num(const std::string& tok) const {
    try {
      std::size_t used = 0;
      const double v = std::stod(tok, &used);
      if (used != tok.size()) fail("bad number '" + tok + "'");
      return v;
    } catch (const std::exception&) {
      fail("bad number '" + tok + "'");
    }
  }

  int integer(const std::string& tok) const {
    try {
      std::size_t used = 0;
      const int v = std::stoi(tok, &used);
      if (used != tok.size()) fail("bad integer '" + tok + "'");
      return v;
    } catch (const std::exception&) {
      fail("bad integer '" + tok + "'");
    }
  }
};

inline Mat3 rotation_from_tokens(const LineCursor& cur, const std::vector<std::string>& t,
                                 std::size_t off) {
  Mat3 r;
  for (int i = 0; i < 9; ++i) r.m[i] = cur.num(t[off + i]);
  return r;
}

}  // namespace detail

/// Parses and validates a scene-description file. Referenced images are loaded
/// and checked against the intrinsics.
inline SceneDataset load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open: " + path.string());
  SceneDataset ds;
  ds.base_dir = path.parent_path();
  detail::LineCursor cur{path};

  bool have_header = false, have_intrinsics = false, have_clips = false;
  std::string line;
  FrameData* frame = nullptr;
  while (std::getline(in, line)) {
    ++cur.line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    const auto tok = detail::split_ws(line);
    if (tok.empty()) continue;
    if (!have_header) {
      if (tok.size() != 2 || tok[0] != "nsg-scene" || tok[1] != "v1")
        cur.fail("expected header 'nsg-scene v1'");
      have_header = true;
      continue;
    }
    const std::string& kw = tok[0];
    if (kw == "intrinsics") {
      if (tok.size() != 7) cur.fail("intrinsics needs: fx fy cx cy W H");
      ds.intrinsics = {cur.num(tok[1]), cur.num(tok[2]), cur.num(tok[3]),
                       cur.num(tok[4]), cur.integer(tok[5]), cur.integer(tok[6])};
      have_intrinsics = true;
    } else if (kw == "clips") {
      if (tok.size() != 3) cur.fail("clips needs: near far");
      ds.near = cur.num(tok[1]);
      ds.far = cur.num(tok[2]);
      have_clips = true;
    } else if (kw == "planes") {
      if (tok.size() != 2) cur.fail("planes needs: count");
      ds.n_planes = cur.integer(tok[1]);
    } else if (kw == "trackscale") {
      if (tok.size() != 5) cur.fail("trackscale needs: id sL sH sW");
      ds.track_scale[cur.integer(tok[1])] = {cur.num(tok[2]), cur.num(tok[3]), cur.num(tok[4])};
    } else if (kw == "frame") {
      if (tok.size() < 4 || tok[2] != "image") cur.fail("frame needs: k image <path> cam|camr ...");
      FrameData f;
      f.frame_id = cur.integer(tok[1]);
      f.image_path = tok[3];
      if (tok.size() == 11 && tok[4] == "cam") {
        const Vec3 t{cur.num(tok[5]), cur.num(tok[6]), cur.num(tok[7])};
        const Vec3 e{cur.num(tok[8]), cur.num(tok[9]), cur.num(tok[10])};
        f.cam_pose =
            RigidTransform::from_euler(deg_to_rad(e.x), deg_to_rad(e.y), deg_to_rad(e.z), t);
        f.euler_deg = e;
      } else if (tok.size() == 17 && tok[4] == "camr") {
        const Vec3 t{cur.num(tok[5]), cur.num(tok[6]), cur.num(tok[7])};
        f.cam_pose = {detail::rotation_from_tokens(cur, tok, 8), t};
      } else {
        cur.fail("frame needs 'cam tx ty tz yaw pitch roll' or 'camr tx ty tz r00..r22'");
      }
      if (f.frame_id != static_cast<int>(ds.frames.size()))
        cur.fail("frame ids must be contiguous from 0 (got " + tok[1] + ")");
      ds.frames.push_back(std::move(f));
      frame = &ds.frames.back();
    } else if (kw == "track" || kw == "trackr") {
      if (!frame) cur.fail("track line before any frame");
      TrackObs t;
      t.track_id = cur.integer(tok[1]);
      t.class_id = tok[2];
      std::size_t rest;
      if (kw == "track") {
        if (tok.size() < 10) cur.fail("track needs: id class tx ty tz yaw L H W");
        const Vec3 pos{cur.num(tok[3]), cur.num(tok[4]), cur.num(tok[5])};
        t.yaw_deg = cur.num(tok[6]);
        t.pose = RigidTransform::from_yaw(deg_to_rad(*t.yaw_deg), pos);
        t.dims = {cur.num(tok[7]), cur.num(tok[8]), cur.num(tok[9])};
        rest = 10;
      } else {
        if (tok.size() < 18) cur.fail("trackr needs: id class tx ty tz r00..r22 L H W");
        const Vec3 pos{cur.num(tok[3]), cur.num(tok[4]), cur.num(tok[5])};
        t.pose = {detail::rotation_from_tokens(cur, tok, 6), pos};
        t.dims = {cur.num(tok[15]), cur.num(tok[16]), cur.num(tok[17])};
        rest = 18;
      }
      if (rest + 2 == tok.size() && tok[rest] == "latent")
        t.latent_alias = cur.integer(tok[rest + 1]);
      else if (rest != tok.size())
        cur.fail("trailing tokens after track definition");
      if (!t.dims.valid())
        cur.fail("track " + tok[1] + ": box dims must be strictly positive");
      for (const auto& other : frame->tracks)
        if (other.track_id == t.track_id)
          cur.fail("track " + tok[1] + " appears twice in frame " +
                   std::to_string(frame->frame_id));
      frame->tracks.push_back(std::move(t));
    } else {
      cur.fail("unknown keyword '" + kw + "'");
    }
  }
  if (!have_header) throw ParseError(path.string() + ": empty file");
  if (!have_intrinsics) throw ParseError(path.string() + ": missing intrinsics");
  if (!have_clips) throw ParseError(path.string() + ": missing clips");

  ds.intrinsics.validate();
  if (!(ds.near > 0 && ds.near < ds.far))
    throw ValidationError(path.string() + ": require 0 < near < far");
  if (ds.n_planes < 2) throw ValidationError(path.string() + ": require planes >= 2");
  if (ds.frames.empty()) throw ValidationError(path.string() + ": no frames");
  for (const auto& f : ds.frames) {
    f.cam_pose.validate();
    for (const auto& t : f.tracks) t.pose.validate();
  }

  ds.images.resize(ds.frames.size());
  for (std::size_t i = 0; i < ds.frames.size(); ++i) {
    if (!ds.frames[i].has_image()) continue;
    const auto img_path = ds.base_dir / ds.frames[i].image_path;
    if (!std::filesystem::exists(img_path))
      throw ValidationError(path.string() + ": missing image " + img_path.string());
    ds.images[i] = read_ppm(img_path);
    if (ds.images[i].width != ds.intrinsics.width || ds.images[i].height != ds.intrinsics.height)
      throw ValidationError(img_path.string() + ": image size does not match intrinsics");
  }
  return ds;
}

/// Writes the dataset description (not the images) in canonical form.
inline void save_dataset(const SceneDataset& ds, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot open for write: " + path.string());
  out.precision(17);
  out << "nsg-scene v1\n";
  out << "intrinsics " << ds.intrinsics.fx << " " << ds.intrinsics.fy << " " << ds.intrinsics.cx
      << " " << ds.intrinsics.cy << " " << ds.intrinsics.width << " " << ds.intrinsics.height
      << "\n";
  out << "clips " << ds.near << " " << ds.far << "\n";
  out << "planes " << ds.n_planes << "\n";
  for (const auto& [id, s] : ds.track_scale)
    out << "trackscale " << id << " " << s.x << " " << s.y << " " << s.z << "\n";
  for (const auto& f : ds.frames) {
    out << "frame " << f.frame_id << " image " << f.image_path;
    if (f.euler_deg) {
      out << " cam " << f.cam_pose.translation.x << " " << f.cam_pose.translation.y << " "
          << f.cam_pose.translation.z << " " << f.euler_deg->x << " " << f.euler_deg->y << " "
          << f.euler_deg->z << "\n";
    } else {
      out << " camr " << f.cam_pose.translation.x << " " << f.cam_pose.translation.y << " "
          << f.cam_pose.translation.z;
      for (double v : f.cam_pose.rotation.m) out << " " << v;
      out << "\n";
    }
    for (const auto& t : f.tracks) {
      if (t.yaw_deg) {
        out << "track " << t.track_id << " " << t.class_id << " " << t.pose.translation.x << " "
            << t.pose.translation.y << " " << t.pose.translation.z << " " << *t.yaw_deg << " "
            << t.dims.length << " " << t.dims.height << " " << t.dims.width;
      } else {
        out << "trackr " << t.track_id << " " << t.class_id << " " << t.pose.translation.x << " "
            << t.pose.translation.y << " " << t.pose.translation.z;
        for (double v : t.pose.rotation.m) out << " " << v;
        out << " " << t.dims.length << " " << t.dims.height << " " << t.dims.width;
      }
      if (t.latent_alias) out << " latent " << *t.latent_alias;
      out << "\n";
    }
  }
  if (!out) throw Error("write failed: " + path.string());
}

/// Assembles the per-frame scene graph: camera and intrinsics copied from the
/// frame, one object node per tracked box (dims grown by the track's scale
/// multipliers), and the background node shared across frames (anchored to
/// the frame-0 camera).
inline SceneGraph graph_for_frame(const SceneDataset& ds, int frame_id) {
  const FrameData& f = ds.frame(frame_id);
  SceneGraph g;
  g.frame_id = frame_id;
  g.intrinsics = ds.intrinsics;
  g.camera_pose = f.cam_pose;
  g.background = BackgroundNode{ds.near, ds.far, ds.n_planes, ds.frames.front().cam_pose};
  g.objects.reserve(f.tracks.size());
  for (const auto& t : f.tracks) {
    ObjectNode node;
    node.track_id = t.track_id;
    node.class_id = t.class_id;
    node.pose = t.pose;
    const Vec3 s = ds.scale_for(t.track_id);
    if (!t.dims.valid())
      throw ValidationError("track " + std::to_string(t.track_id) + ": non-positive dims");
    node.dims = {t.dims.length * s.x, t.dims.height * s.y, t.dims.width * s.z};
    node.latent_ref = t.latent_alias.value_or(t.track_id);
    g.objects.push_back(std::move(node));
  }
  g.validate();
  return g;
}

/// Continuous image coordinates of a world point; true when in front of the
/// camera.
inline bool project_point(const Intrinsics& intr, const RigidTransform& cam_pose, const Vec3& x,
                          double& u, double& v) {
  const Vec3 c = cam_pose.rotation.transposed() * (x - cam_pose.translation);
  if (c.z >= -1e-9) return false;
  u = intr.cx + intr.fx * (c.x / -c.z);
  v = intr.cy - intr.fy * (c.y / -c.z);
  return true;
}

/// Pixel-space bounding rectangle of an object's box (axis-aligned hull of the
/// projected corners), clipped to the image. Empty when fully behind the
/// camera or outside the frame.
inline PixelRect project_box_rect(const Intrinsics& intr, const RigidTransform& cam_pose,
                                  const ObjectNode& node) {
  double umin = 1e300, umax = -1e300, vmin = 1e300, vmax = -1e300;
  bool any = false;
  for (int corner = 0; corner < 8; ++corner) {
    const Vec3 x_o{corner & 1 ? 1.0 : -1.0, corner & 2 ? 1.0 : -1.0, corner & 4 ? 1.0 : -1.0};
    const Vec3 xw = object_to_world(node.pose, node.dims, x_o);
    double u, v;
    if (!project_point(intr, cam_pose, xw, u, v)) continue;
    any = true;
    umin = std::min(umin, u);
    umax = std::max(umax, u);
    vmin = std::min(vmin, v);
    vmax = std::max(vmax, v);
  }
  if (!any) return {};
  // Pixel (i, j) covers [i, i+1) x [j, j+1); include pixels whose center lies
  // inside the projected hull.
  const PixelRect r{static_cast<int>(std::ceil(umin - 0.5)), static_cast<int>(std::ceil(vmin - 0.5)),
                    static_cast<int>(std::floor(umax - 0.5)),
                    static_cast<int>(std::floor(vmax - 0.5))};
  return r.clipped(intr.width, intr.height);
}

}  // namespace sgrf
