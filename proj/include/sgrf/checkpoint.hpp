// Copyright Contributors to the sgrf Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "sgrf/errors.hpp"
#include "sgrf/models.hpp"

namespace sgrf {

// Checkpoint container: 8-byte magic, a JSON header describing architecture
// and array sizes, then raw little-endian doubles. Parameters round-trip
// bit-exactly, so a reloaded checkpoint renders identically.

inline constexpr char kCheckpointMagic[8] = {'S', 'G', 'R', 'F', 'C', 'K', '1', '\n'};

namespace detail {

inline void write_doubles(std::ostream& out, const double* p, std::size_t n) {
  out.write(reinterpret_cast<const char*>(p), static_cast<std::streamsize>(n * sizeof(double)));
}

inline void read_doubles(std::istream& in, double* p, std::size_t n, const std::string& what) {
  in.read(reinterpret_cast<char*>(p), static_cast<std::streamsize>(n * sizeof(double)));
  if (static_cast<std::size_t>(in.gcount()) != n * sizeof(double))
    throw ParseError("checkpoint: truncated " + what);
}

inline nlohmann::ordered_json arch_json(const ModelArchitecture& a) {
  return {{"depth1", a.depth1},       {"width1", a.width1},
          {"skips", a.skips},         {"feature_dim", a.feature_dim},
          {"depth2", a.depth2},       {"width2", a.width2},
          {"pos_freqs", a.pos_freqs}, {"dir_freqs", a.dir_freqs},
          {"pose_freqs", a.pose_freqs}, {"include_input", a.include_input},
          {"latent_dim", a.latent_dim}};
}

inline ModelArchitecture arch_from_json(const nlohmann::json& j) {
  ModelArchitecture a;
  a.depth1 = j.at("depth1");
  a.width1 = j.at("width1");
  a.skips = j.at("skips").get<std::vector<int>>();
  a.feature_dim = j.at("feature_dim");
  a.depth2 = j.at("depth2");
  a.width2 = j.at("width2");
  a.pos_freqs = j.at("pos_freqs");
  a.dir_freqs = j.at("dir_freqs");
  a.pose_freqs = j.at("pose_freqs");
  a.include_input = j.at("include_input");
  a.latent_dim = j.at("latent_dim");
  return a;
}

}  // namespace detail

inline void save_checkpoint(const SceneModels& m, const std::filesystem::path& path) {
  nlohmann::ordered_json header;
  header["format"] = 1;
  header["arch"] = detail::arch_json(m.arch);
  header["near"] = m.near;
  header["far"] = m.far;
  header["n_planes"] = m.n_planes;
  header["n_obj_samples"] = m.n_obj_samples;
  header["pos_scale"] = m.background.pos_scale;
  header["config_hash"] = m.config_hash;
  std::vector<std::string> class_names;
  nlohmann::ordered_json class_sizes = nlohmann::ordered_json::object();
  for (const auto& [id, cm] : m.classes) {
    class_names.push_back(id);
    class_sizes[id] = cm.mlp.param_count();
  }
  header["classes"] = class_names;
  header["class_param_counts"] = class_sizes;
  header["background_param_count"] = m.background.mlp.param_count();
  std::vector<int> latent_ids;
  for (const auto& [id, l] : m.latents.entries) latent_ids.push_back(id);
  header["latent_ids"] = latent_ids;

  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open for write: " + path.string());
  out.write(kCheckpointMagic, sizeof kCheckpointMagic);
  const std::string json_text = header.dump();
  const std::uint64_t len = json_text.size();
  out.write(reinterpret_cast<const char*>(&len), sizeof len);
  out.write(json_text.data(), static_cast<std::streamsize>(json_text.size()));

  const double pose_data[12] = {
      m.reference_pose.rotation.m[0], m.reference_pose.rotation.m[1], m.reference_pose.rotation.m[2],
      m.reference_pose.rotation.m[3], m.reference_pose.rotation.m[4], m.reference_pose.rotation.m[5],
      m.reference_pose.rotation.m[6], m.reference_pose.rotation.m[7], m.reference_pose.rotation.m[8],
      m.reference_pose.translation.x, m.reference_pose.translation.y, m.reference_pose.translation.z};
  detail::write_doubles(out, pose_data, 12);
  detail::write_doubles(out, m.background.mlp.params.data(), m.background.mlp.params.size());
  for (const auto& [id, cm] : m.classes)
    detail::write_doubles(out, cm.mlp.params.data(), cm.mlp.params.size());
  for (const auto& [id, l] : m.latents.entries) detail::write_doubles(out, l.data(), l.size());
  if (!out) throw Error("write failed: " + path.string());
}

inline SceneModels load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open: " + path.string());
  char magic[8];
  in.read(magic, 8);
  if (in.gcount() != 8 || std::memcmp(magic, kCheckpointMagic, 8) != 0)
    throw ParseError(path.string() + ": not a checkpoint file");
  std::uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof len);
  if (!in) throw ParseError(path.string() + ": truncated header");
  std::string json_text(len, '\0');
  in.read(json_text.data(), static_cast<std::streamsize>(len));
  if (static_cast<std::uint64_t>(in.gcount()) != len)
    throw ParseError(path.string() + ": truncated header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(json_text);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path.string() + ": bad header: " + e.what());
  }
  if (header.at("format") != 1) throw ParseError(path.string() + ": unsupported format version");

  const ModelArchitecture arch = detail::arch_from_json(header.at("arch"));
  const std::vector<std::string> class_names = header.at("classes");
  const std::vector<int> latent_ids = header.at("latent_ids");

  double pose_data[12];
  detail::read_doubles(in, pose_data, 12, "reference pose");
  RigidTransform ref;
  std::copy(pose_data, pose_data + 9, ref.rotation.m);
  ref.translation = {pose_data[9], pose_data[10], pose_data[11]};

  SceneModels m = build_models(arch, class_names, latent_ids, header.at("near"), header.at("far"),
                               header.at("n_planes"), header.at("n_obj_samples"), ref, 0);
  m.config_hash = header.at("config_hash");
  const double pos_scale = header.at("pos_scale");
  m.background.pos_scale = pos_scale;
  for (auto& [id, cm] : m.classes) cm.pose_scale = pos_scale;

  const std::size_t bg_count = header.at("background_param_count");
  if (bg_count != m.background.mlp.params.size())
    throw ParseError(path.string() + ": background parameter count mismatch");
  detail::read_doubles(in, m.background.mlp.params.data(), bg_count, "background parameters");
  for (auto& [id, cm] : m.classes) {
    const std::size_t want = header.at("class_param_counts").at(id);
    if (want != cm.mlp.params.size())
      throw ParseError(path.string() + ": class parameter count mismatch for " + id);
    detail::read_doubles(in, cm.mlp.params.data(), cm.mlp.params.size(), "class parameters");
  }
  for (auto& [id, l] : m.latents.entries)
    detail::read_doubles(in, l.data(), l.size(), "latent table");
  if (!m.params_finite()) throw ValidationError(path.string() + ": non-finite parameters");
  return m;
}

}  // namespace sgrf
