// Synthetic scene generation: a JSON-described world of ground, planes,
// boxes and poles (optionally moving) is sampled into per-frame point
// clouds along a parametric ground-truth trajectory. Generation is
// deterministic per (seed, frame), so datasets never need to be stored.
#pragma once

#include <Eigen/Core>

#include <stdexcept>
#include <string>
#include <vector>

#include "lodo/geometry.hpp"
#include "lodo/point_cloud.hpp"

namespace lodo {

struct SceneError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// One world surface or wireframe object.
struct SceneObject {
  enum class Type { kGround, kPlane, kBox, kPole };
  Type type = Type::kPlane;

  // ground: square half-extent around the origin at z = 0.
  double half = 50.0;
  // plane: origin + s*u + t*v, s,t in [0,1]; u, v span the patch.
  Eigen::Vector3d origin = Eigen::Vector3d::Zero();
  Eigen::Vector3d u = Eigen::Vector3d::UnitX();
  Eigen::Vector3d v = Eigen::Vector3d::UnitZ();
  // box: axis-aligned, sampled on its 4 side walls and the top.
  Eigen::Vector3d center = Eigen::Vector3d::Zero();
  Eigen::Vector3d size = Eigen::Vector3d::Ones();
  // pole: vertical segment from `base`, radius 0 = ideal line.
  Eigen::Vector3d base = Eigen::Vector3d::Zero();
  double height = 4.0;
  double radius = 0.0;

  float intensity = 100.0f;
  Eigen::Vector3d velocity = Eigen::Vector3d::Zero();  // m per frame
  int points = 0;  // explicit per-frame sample count; 0 = area-weighted
};

struct SceneTrajectory {
  enum class Kind { kLine, kSquare };
  Kind kind = Kind::kLine;
  int frames = 100;
  double step = 0.5;     // m per frame along the path
  double side = 40.0;    // square: edge length
  double height = 1.5;   // sensor height above ground
  /// Square only: path length (m) over which the heading turns at each
  /// corner, half before and half after it. 0 turns the full 90 degrees
  /// between two frames; positions follow the sharp square either way.
  double corner_blend = 0.0;
};

struct SceneSpec {
  unsigned int seed = 42;
  double noise = 0.0;           // Gaussian sigma per axis, m
  int points_per_frame = 20000;
  double range = 60.0;          // visibility radius around the sensor
  SceneTrajectory trajectory;
  std::vector<SceneObject> objects;
};

/// Parses the JSON scene description; unknown keys or malformed geometry
/// raise SceneError naming the offender.
SceneSpec parse_scene_spec(const std::string& json_text);
SceneSpec load_scene_spec(const std::string& path);

/// Ground-truth sensor pose of one frame. Throws SceneError outside
/// [0, trajectory.frames).
Pose trajectory_pose(const SceneSpec& spec, int frame);

/// Samples the world surfaces for one frame: points are drawn on each
/// object (moving objects displaced by frame * velocity), kept when within
/// `range` of the sensor, perturbed by Gaussian noise, and returned in the
/// sensor frame together with the ground-truth pose. Deterministic per
/// (seed, frame).
std::pair<PointCloud, Pose> generate_scene(const SceneSpec& spec, int frame);

}  // namespace lodo
