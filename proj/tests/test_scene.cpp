#include <doctest.h>

#include <Eigen/Geometry>

#include <cmath>
#include <string>
#include <vector>

#include "lodo/config.hpp"
#include "lodo/features.hpp"
#include "lodo/scene.hpp"

using lodo::FeatureClass;
using lodo::FeatureFrame;
using lodo::generate_scene;
using lodo::parse_scene_spec;
using lodo::PointCloud;
using lodo::Pose;
using lodo::RunConfig;
using lodo::SceneError;
using lodo::SceneObject;
using lodo::SceneSpec;
using lodo::SceneTrajectory;
using lodo::trajectory_pose;

namespace {

const char* kFullSpec = R"({
  "seed": 11,
  "noise": 0.01,
  "points_per_frame": 9000,
  "range": 45.0,
  "trajectory": {"kind": "square", "frames": 50, "step": 0.4, "side": 30,
                 "height": 1.2},
  "objects": [
    {"type": "ground", "half": 20, "intensity": 50},
    {"type": "plane", "origin": [5, -3, 0], "u": [4, 0, 0], "v": [0, 0, 3],
     "intensity": 120},
    {"type": "box", "center": [10, 6, 2], "size": [4, 3, 4],
     "velocity": [0.1, 0, 0]},
    {"type": "pole", "base": [6, 2, 0], "height": 5, "radius": 0.05,
     "points": 150, "intensity": 220}
  ]
})";

/// Ground plus one ideal-line pole; dense enough for PCA classification.
SceneSpec pole_spec() {
  SceneSpec spec = parse_scene_spec(R"({
    "seed": 3,
    "noise": 0.0,
    "points_per_frame": 10000,
    "trajectory": {"kind": "line", "frames": 4, "step": 0.5},
    "objects": [
      {"type": "ground", "half": 15, "intensity": 60},
      {"type": "pole", "base": [5, 3, 0], "height": 5, "points": 200,
       "intensity": 220}
    ]
  })");
  return spec;
}

}  // namespace

TEST_CASE("scene spec parses every field") {
  SceneSpec spec = parse_scene_spec(kFullSpec);
  CHECK(spec.seed == 11);
  CHECK(spec.noise == doctest::Approx(0.01));
  CHECK(spec.points_per_frame == 9000);
  CHECK(spec.range == doctest::Approx(45.0));
  CHECK(spec.trajectory.kind == SceneTrajectory::Kind::kSquare);
  CHECK(spec.trajectory.frames == 50);
  CHECK(spec.trajectory.step == doctest::Approx(0.4));
  CHECK(spec.trajectory.side == doctest::Approx(30.0));
  CHECK(spec.trajectory.height == doctest::Approx(1.2));
  REQUIRE(spec.objects.size() == 4);
  CHECK(spec.objects[0].type == SceneObject::Type::kGround);
  CHECK(spec.objects[0].half == doctest::Approx(20.0));
  CHECK(spec.objects[1].type == SceneObject::Type::kPlane);
  CHECK(spec.objects[1].origin.x() == doctest::Approx(5.0));
  CHECK(spec.objects[1].u.x() == doctest::Approx(4.0));
  CHECK(spec.objects[2].type == SceneObject::Type::kBox);
  CHECK(spec.objects[2].velocity.x() == doctest::Approx(0.1));
  CHECK(spec.objects[3].type == SceneObject::Type::kPole);
  CHECK(spec.objects[3].points == 150);
  CHECK(spec.objects[3].radius == doctest::Approx(0.05));
}

TEST_CASE("scene spec rejects malformed input") {
  CHECK_THROWS_AS(parse_scene_spec("not json"), SceneError);
  CHECK_THROWS_AS(parse_scene_spec("[1,2,3]"), SceneError);
  // Unknown keys are named.
  CHECK_THROWS_WITH_AS(
      parse_scene_spec(R"({"sead": 1, "objects": [{"type": "ground"}]})"),
      doctest::Contains("sead"), SceneError);
  CHECK_THROWS_WITH_AS(
      parse_scene_spec(
          R"({"objects": [{"type": "ground", "radius": 2}]})"),
      doctest::Contains("radius"), SceneError);
  CHECK_THROWS_AS(parse_scene_spec(R"({"objects": [{"half": 5}]})"),
                  SceneError);
  CHECK_THROWS_AS(parse_scene_spec(R"({"objects": [{"type": "blob"}]})"),
                  SceneError);
  // Degenerate values.
  CHECK_THROWS_AS(
      parse_scene_spec(R"({"noise": -1, "objects": [{"type": "ground"}]})"),
      SceneError);
  CHECK_THROWS_AS(
      parse_scene_spec(
          R"({"objects": [{"type": "plane", "u": [1,0,0], "v": [2,0,0]}]})"),
      SceneError);
  CHECK_THROWS_AS(
      parse_scene_spec(
          R"({"trajectory": {"kind": "spiral"},
              "objects": [{"type": "ground"}]})"),
      SceneError);
  // A scene with nothing to sample is refused.
  CHECK_THROWS_AS(parse_scene_spec(R"({"seed": 1})"), SceneError);
}

TEST_CASE("line trajectory walks +x at the configured height") {
  SceneSpec spec = pole_spec();
  for (int i = 0; i < spec.trajectory.frames; ++i) {
    Pose p = trajectory_pose(spec, i);
    CHECK(p.translation().x() == doctest::Approx(0.5 * i));
    CHECK(p.translation().y() == doctest::Approx(0.0));
    CHECK(p.translation().z() == doctest::Approx(1.5));
    CHECK(p.rotation_angle() == doctest::Approx(0.0));
  }
  CHECK_THROWS_AS(trajectory_pose(spec, -1), SceneError);
  CHECK_THROWS_AS(trajectory_pose(spec, spec.trajectory.frames), SceneError);
}

TEST_CASE("square trajectory turns at corners and closes the loop") {
  SceneSpec spec;
  spec.trajectory.kind = SceneTrajectory::Kind::kSquare;
  spec.trajectory.frames = 400;
  spec.trajectory.step = 0.5;
  spec.trajectory.side = 40.0;
  spec.trajectory.height = 1.5;

  Pose start = trajectory_pose(spec, 0);
  CHECK(start.translation().isApprox(Eigen::Vector3d(0, 0, 1.5), 1e-12));

  Pose corner1 = trajectory_pose(spec, 80);  // 40 m in
  CHECK(corner1.translation().x() == doctest::Approx(40.0));
  CHECK(corner1.translation().y() == doctest::Approx(0.0));
  CHECK(corner1.rotation_angle() == doctest::Approx(3.14159265 / 2));

  Pose corner2 = trajectory_pose(spec, 160);
  CHECK(corner2.translation().x() == doctest::Approx(40.0));
  CHECK(corner2.translation().y() == doctest::Approx(40.0));

  // One lap is 4 * 40 / 0.5 = 320 frames.
  Pose lap = trajectory_pose(spec, 320);
  CHECK(lap.translation().isApprox(start.translation(), 1e-9));
  CHECK(lap.rotation_angle() == doctest::Approx(0.0).epsilon(1e-9));
}

TEST_CASE("corner blending spreads the turn over several frames") {
  SceneSpec spec;
  spec.trajectory.kind = SceneTrajectory::Kind::kSquare;
  spec.trajectory.frames = 400;
  spec.trajectory.step = 0.5;
  spec.trajectory.side = 40.0;
  spec.trajectory.corner_blend = 6.0;  // 12 frames per turn

  // Heading is still 0 right before the ramp starts (37 m in, frame 74),
  // exactly 45 degrees at the corner, and 90 degrees once it ends.
  CHECK(trajectory_pose(spec, 74).rotation_angle() ==
        doctest::Approx(0.0).epsilon(1e-12));
  CHECK(trajectory_pose(spec, 80).rotation_angle() ==
        doctest::Approx(3.14159265 / 4).epsilon(1e-9));
  CHECK(trajectory_pose(spec, 86).rotation_angle() ==
        doctest::Approx(3.14159265 / 2).epsilon(1e-9));

  // Per-frame heading change never exceeds the blend rate.
  const double max_rate = (3.14159265 / 2) / (6.0 / 0.5) + 1e-9;
  for (int i = 1; i < 340; ++i) {
    Pose a = trajectory_pose(spec, i - 1);
    Pose b = trajectory_pose(spec, i);
    double dyaw = a.inverse().compose(b).rotation_angle();
    CHECK(dyaw <= max_rate);
  }

  // Positions stay on the sharp square; only the heading blends.
  CHECK(trajectory_pose(spec, 80).translation().x() == doctest::Approx(40.0));
  CHECK(trajectory_pose(spec, 80).translation().y() == doctest::Approx(0.0));

  CHECK_THROWS_AS(parse_scene_spec(R"({
    "trajectory": {"kind": "square", "corner_blend": -1},
    "objects": [{"type": "ground"}]
  })"),
                  SceneError);
}

TEST_CASE("noiseless plane-only scene samples exactly on the plane") {
  SceneSpec spec = parse_scene_spec(R"({
    "seed": 8,
    "noise": 0.0,
    "points_per_frame": 2000,
    "trajectory": {"kind": "line", "frames": 2, "step": 0.5, "height": 1.5},
    "objects": [
      {"type": "plane", "origin": [-10, -10, 0], "u": [20, 0, 0],
       "v": [0, 20, 0]}
    ]
  })");
  auto [cloud, pose] = generate_scene(spec, 0);
  REQUIRE(!cloud.points.empty());
  for (const lodo::Point& p : cloud.points) {
    // World z is exactly 0, sensor height exactly 1.5.
    CHECK(p.position.z() == -1.5f);
  }
  CHECK(pose.translation().z() == doctest::Approx(1.5));
}

TEST_CASE("scene generation is deterministic per seed and frame") {
  SceneSpec spec = parse_scene_spec(kFullSpec);
  auto [a, pa] = generate_scene(spec, 7);
  auto [b, pb] = generate_scene(spec, 7);
  REQUIRE(a.points.size() == b.points.size());
  for (std::size_t i = 0; i < a.points.size(); ++i) {
    CHECK(a.points[i].position == b.points[i].position);
    CHECK(a.points[i].intensity == b.points[i].intensity);
  }
  CHECK(pa.translation() == pb.translation());

  // A different frame draws a different sample.
  auto [c, pc] = generate_scene(spec, 8);
  REQUIRE(!c.points.empty());
  CHECK(a.points[0].position != c.points[0].position);
}

TEST_CASE("explicit point budgets land on the object") {
  SceneSpec spec = pole_spec();
  auto [cloud, pose] = generate_scene(spec, 0);
  int on_pole = 0;
  for (const lodo::Point& p : cloud.points) {
    if (std::abs(p.position.x() - 5.0f) < 0.01f &&
        std::abs(p.position.y() - 3.0f) < 0.01f) {
      ++on_pole;
      CHECK(p.intensity == 220.0f);
    }
  }
  CHECK(on_pole == 200);  // radius-0 pole: every sample on the axis
}

TEST_CASE("moving objects displace by velocity times frame") {
  const char* base = R"({
    "seed": 4,
    "noise": 0.0,
    "points_per_frame": 500,
    "trajectory": {"kind": "line", "frames": 8, "step": 0.5},
    "objects": [
      {"type": "box", "center": [10, 0, 2], "size": [4, 4, 4],
       "points": 500%s}
    ]
  })";
  char moving_text[512], static_text[512];
  std::snprintf(moving_text, sizeof(moving_text), base,
                ", \"velocity\": [0.1, -0.05, 0]");
  std::snprintf(static_text, sizeof(static_text), base, "");
  SceneSpec moving = parse_scene_spec(moving_text);
  SceneSpec fixed = parse_scene_spec(static_text);

  auto [cm, pm] = generate_scene(moving, 5);
  auto [cs, ps] = generate_scene(fixed, 5);
  REQUIRE(cm.points.size() == cs.points.size());
  // Identical draws, so points correspond one-to-one and differ by the
  // accumulated displacement.
  const Eigen::Vector3f shift(0.5f, -0.25f, 0.0f);
  for (std::size_t i = 0; i < cm.points.size(); ++i) {
    CHECK((cm.points[i].position - cs.points[i].position - shift).norm() <
          1e-5f);
  }
}

TEST_CASE("points beyond the range limit are dropped") {
  SceneSpec spec = parse_scene_spec(R"({
    "seed": 2,
    "noise": 0.0,
    "points_per_frame": 3000,
    "range": 25.0,
    "trajectory": {"kind": "line", "frames": 2, "step": 0.5},
    "objects": [
      {"type": "ground", "half": 60},
      {"type": "pole", "base": [100, 0, 0], "height": 5, "points": 50}
    ]
  })");
  auto [cloud, pose] = generate_scene(spec, 0);
  REQUIRE(!cloud.points.empty());
  for (const lodo::Point& p : cloud.points)
    CHECK(p.position.norm() <= 25.0f + 1e-4f);
}

TEST_CASE("radius-zero pole classifies as pillar downstream") {
  SceneSpec spec = pole_spec();
  auto [cloud, pose] = generate_scene(spec, 0);

  RunConfig cfg;
  FeatureFrame frame = extract_features(cloud, cfg);
  const auto& pillars = frame.dense_of(FeatureClass::kPillar);
  REQUIRE(!pillars.empty());
  for (const lodo::FeaturePoint& fp : pillars) {
    // All pillar features sit on the pole's axis column.
    CHECK(std::abs(fp.position.x() - 5.0f) < 0.2f);
    CHECK(std::abs(fp.position.y() - 3.0f) < 0.2f);
    CHECK(std::abs(fp.direction.z()) > 0.9f);
  }
}

TEST_CASE("generate_scene rejects out-of-range frames") {
  SceneSpec spec = pole_spec();
  CHECK_THROWS_AS(generate_scene(spec, -1), SceneError);
  CHECK_THROWS_AS(generate_scene(spec, spec.trajectory.frames), SceneError);
}
