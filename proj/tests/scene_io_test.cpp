// Copyright Contributors to the sgrf Project
// SPDX-License-Identifier: Apache-2.0

#include "sgrf/scene_io.hpp"

#include <gtest/gtest.h>
#include <unistd.h>

#include <filesystem>
#include <fstream>

#include "sgrf/synthetic.hpp"

namespace sgrf {
namespace {

namespace fs = std::filesystem;

class SceneIoTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() / ("sgrf_io_" + std::to_string(::getpid()));
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  fs::path write_scene(const std::string& body) {
    const fs::path p = dir_ / "scene.nsg";
    std::ofstream out(p);
    out << body;
    return p;
  }

  void write_image(const std::string& name, int w, int h, double value = 0.5) {
    ImageBuffer img(w, h);
    std::fill(img.data.begin(), img.data.end(), value);
    write_ppm(img, dir_ / name);
  }

  fs::path dir_;
};

constexpr const char* kMinimalScene =
    "nsg-scene v1\n"
    "intrinsics 32 32 16 16 32 32\n"
    "clips 1.0 8.0\n"
    "frame 0 image f0.ppm cam 0 0 0 0 0 0\n";

TEST_F(SceneIoTest, MinimalSceneLoads) {
  write_image("f0.ppm", 32, 32);
  const SceneDataset ds = load_dataset(write_scene(kMinimalScene));
  EXPECT_EQ(ds.frames.size(), 1u);
  EXPECT_TRUE(ds.frames[0].tracks.empty());
  EXPECT_EQ(ds.n_planes, 6);
  EXPECT_EQ(ds.images[0].width, 32);
}

TEST_F(SceneIoTest, NegativeBoxWidthNamesTrack) {
  write_image("f0.ppm", 32, 32);
  const auto p = write_scene(
      "nsg-scene v1\n"
      "intrinsics 32 32 16 16 32 32\n"
      "clips 1.0 8.0\n"
      "frame 0 image f0.ppm cam 0 0 0 0 0 0\n"
      "track 4 car 0 0 -4 0 1.2 0.8 -0.9\n");
  try {
    load_dataset(p);
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("track 4"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find(":5"), std::string::npos);  // line number
  }
}

TEST_F(SceneIoTest, MissingImageRejected) {
  const auto p = write_scene(kMinimalScene);
  EXPECT_THROW(load_dataset(p), ValidationError);
}

TEST_F(SceneIoTest, ImageSizeMismatchRejected) {
  write_image("f0.ppm", 16, 32);
  EXPECT_THROW(load_dataset(write_scene(kMinimalScene)), ValidationError);
}

TEST_F(SceneIoTest, NonContiguousFramesRejected) {
  write_image("f0.ppm", 32, 32);
  const auto p = write_scene(
      "nsg-scene v1\n"
      "intrinsics 32 32 16 16 32 32\n"
      "clips 1.0 8.0\n"
      "frame 1 image f0.ppm cam 0 0 0 0 0 0\n");
  EXPECT_THROW(load_dataset(p), ParseError);
}

TEST_F(SceneIoTest, UnknownKeywordReportsLine) {
  write_image("f0.ppm", 32, 32);
  const auto p = write_scene(
      "nsg-scene v1\n"
      "intrinsics 32 32 16 16 32 32\n"
      "wibble 3\n");
  try {
    load_dataset(p);
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find(":3"), std::string::npos);
  }
}

TEST_F(SceneIoTest, TrackVisibilityPerFrame) {
  write_image("f0.ppm", 32, 32);
  write_image("f1.ppm", 32, 32);
  write_image("f2.ppm", 32, 32);
  const auto p = write_scene(
      "nsg-scene v1\n"
      "intrinsics 32 32 16 16 32 32\n"
      "clips 1.0 8.0\n"
      "trackscale 7 1 1 1\n"
      "frame 0 image f0.ppm cam 0 0 0 0 0 0\n"
      "track 7 car 0 0 -4 10 1.2 0.8 0.9\n"
      "frame 1 image f1.ppm cam 0 0 0 0 0 0\n"
      "frame 2 image f2.ppm cam 0 0 0 0 0 0\n"
      "track 7 car 0.5 0 -4 10 1.2 0.8 0.9\n");
  const SceneDataset ds = load_dataset(p);
  EXPECT_EQ(graph_for_frame(ds, 0).objects.size(), 1u);
  EXPECT_TRUE(graph_for_frame(ds, 1).objects.empty());
  EXPECT_EQ(graph_for_frame(ds, 2).objects.size(), 1u);
  EXPECT_THROW(graph_for_frame(ds, 3), LookupError);
  EXPECT_THROW(graph_for_frame(ds, -1), LookupError);
}

TEST_F(SceneIoTest, GraphAppliesTrackScaleAndDefaults) {
  write_image("f0.ppm", 32, 32);
  const auto p = write_scene(
      "nsg-scene v1\n"
      "intrinsics 32 32 16 16 32 32\n"
      "clips 1.0 8.0\n"
      "trackscale 1 1 1 1\n"
      "frame 0 image f0.ppm cam 0 0 0 0 0 0\n"
      "track 1 car 0 0 -4 0 1.0 1.0 1.0\n"
      "track 2 car 1 0 -5 0 1.0 1.0 1.0\n");
  const SceneDataset ds = load_dataset(p);
  const SceneGraph g = graph_for_frame(ds, 0);
  ASSERT_EQ(g.objects.size(), 2u);
  // Track 1 carries an explicit unit scale; track 2 gets the default
  // shadow-inclusive growth of 1.4 on length and width.
  EXPECT_DOUBLE_EQ(g.objects[0].dims.length, 1.0);
  EXPECT_DOUBLE_EQ(g.objects[1].dims.length, 1.4);
  EXPECT_DOUBLE_EQ(g.objects[1].dims.height, 1.0);
  EXPECT_DOUBLE_EQ(g.objects[1].dims.width, 1.4);
  EXPECT_EQ(g.background.near, 1.0);
  EXPECT_EQ(g.background.far, 8.0);
  EXPECT_EQ(g.frame_id, 0);
  g.validate();
}

TEST_F(SceneIoTest, DuplicateTrackInFrameRejected) {
  write_image("f0.ppm", 32, 32);
  const auto p = write_scene(
      "nsg-scene v1\n"
      "intrinsics 32 32 16 16 32 32\n"
      "clips 1.0 8.0\n"
      "frame 0 image f0.ppm cam 0 0 0 0 0 0\n"
      "track 1 car 0 0 -4 0 1 1 1\n"
      "track 1 car 1 0 -5 0 1 1 1\n");
  EXPECT_THROW(load_dataset(p), ParseError);
}

TEST_F(SceneIoTest, RotationMatrixFormsAccepted) {
  write_image("f0.ppm", 32, 32);
  const auto p = write_scene(
      "nsg-scene v1\n"
      "intrinsics 32 32 16 16 32 32\n"
      "clips 1.0 8.0\n"
      "frame 0 image f0.ppm camr 0 0 0 1 0 0 0 1 0 0 0 1\n"
      "trackr 1 car 0 0 -4 1 0 0 0 1 0 0 0 1 1 1 1 latent 9\n");
  const SceneDataset ds = load_dataset(p);
  EXPECT_FALSE(ds.frames[0].euler_deg.has_value());
  EXPECT_EQ(ds.frames[0].tracks[0].latent_alias, 9);
  const SceneGraph g = graph_for_frame(ds, 0);
  EXPECT_EQ(g.objects[0].latent_ref, 9);
}

TEST_F(SceneIoTest, SaveLoadRoundTrip) {
  SynthSpec spec;
  spec.seed = 33;
  spec.n_frames = 3;
  spec.resolution = 32;
  spec.n_objects = 2;
  generate_synthetic(spec, dir_ / "synth");
  const SceneDataset a = load_dataset(dir_ / "synth" / "scene.nsg");
  save_dataset(a, dir_ / "synth" / "resaved.nsg");
  const SceneDataset b = load_dataset(dir_ / "synth" / "resaved.nsg");
  EXPECT_EQ(a.intrinsics.fx, b.intrinsics.fx);
  EXPECT_EQ(a.near, b.near);
  EXPECT_EQ(a.far, b.far);
  EXPECT_EQ(a.n_planes, b.n_planes);
  EXPECT_EQ(a.track_scale, b.track_scale);
  ASSERT_EQ(a.frames.size(), b.frames.size());
  for (std::size_t k = 0; k < a.frames.size(); ++k) {
    EXPECT_EQ(a.frames[k], b.frames[k]);
    EXPECT_EQ(a.images[k].data, b.images[k].data);
  }
}

TEST_F(SceneIoTest, ProjectBoxRectCoversProjectedCorners) {
  const Intrinsics intr{70, 70, 32, 32, 64, 64};
  ObjectNode node;
  node.track_id = 1;
  node.class_id = "car";
  node.pose = RigidTransform::from_yaw(0.3, {0.5, -0.5, -4});
  node.dims = {1.2, 0.8, 0.9};
  node.latent_ref = 1;
  const PixelRect r = project_box_rect(intr, RigidTransform::identity(), node);
  ASSERT_FALSE(r.empty());
  for (int corner = 0; corner < 8; ++corner) {
    const Vec3 x_o{corner & 1 ? 1.0 : -1.0, corner & 2 ? 1.0 : -1.0, corner & 4 ? 1.0 : -1.0};
    double u, v;
    ASSERT_TRUE(project_point(intr, RigidTransform::identity(),
                              object_to_world(node.pose, node.dims, x_o), u, v));
    EXPECT_GE(u, r.x0 - 0.5);
    EXPECT_LE(u, r.x1 + 1.5);
    EXPECT_GE(v, r.y0 - 0.5);
    EXPECT_LE(v, r.y1 + 1.5);
  }
  ObjectNode behind = node;
  behind.pose.translation = {0, 0, 4};
  EXPECT_TRUE(project_box_rect(intr, RigidTransform::identity(), behind).empty());
}

TEST(PpmIo, QuantizationRoundTrip) {
  ImageBuffer img(5, 3);
  Rng rng(2);
  for (auto& v : img.data) v = rng.uniform();
  const auto path = fs::temp_directory_path() / "sgrf_ppm_test.ppm";
  write_ppm(img, path);
  const ImageBuffer back = read_ppm(path);
  ASSERT_EQ(back.width, 5);
  ASSERT_EQ(back.height, 3);
  for (std::size_t i = 0; i < img.data.size(); ++i)
    EXPECT_NEAR(back.data[i], img.data[i], 0.5 / 255.0 + 1e-9);
  // Half-up rounding at the quantizer.
  EXPECT_EQ(quantize8(0.5 / 255.0), 1);
  EXPECT_EQ(quantize8(0.49 / 255.0), 0);
  EXPECT_EQ(quantize8(-0.2), 0);
  EXPECT_EQ(quantize8(1.7), 255);
  fs::remove(path);
}

}  // namespace
}  // namespace sgrf
