// Frame-to-frame odometry loop: extract classified features, align the new
// frame first against the previous frame (few iterations), then against a
// rolling local feature map (to convergence), filter apparent dynamic
// points, and fold the survivors into the map.
#pragma once

#include <array>
#include <cstddef>
#include <vector>

#include "lodo/config.hpp"
#include "lodo/features.hpp"
#include "lodo/geometry.hpp"
#include "lodo/io.hpp"
#include "lodo/point_cloud.hpp"
#include "lodo/registration.hpp"

namespace lodo {

/// Rolling per-class feature map. Points are stored in the world frame;
/// `reference` tracks the pose of the last integrated frame (the map is
/// re-anchored only if that pose drifts beyond ~1 km, which keeps float
/// conditioning comfortable at vehicle scale).
struct LocalMap {
  std::array<std::vector<FeaturePoint>, kClassCount> points;
  Pose reference;
  RegistrationTarget target;  // rebuilt after every update

  bool empty() const;
  std::size_t total() const;
  void rebuild_index();
};

/// Outcome of one processed frame.
struct FrameSummary {
  int frame_id = 0;
  Pose pose;          // world pose of this frame
  Pose relative;      // motion since the previous frame
  bool tracked = true;
  double sigma_hat = 0.0;             // scan-to-map posterior deviation
  Matrix6d information = Matrix6d::Zero();
  double overlap = 0.0;
  double t_feature_ms = 0.0;
  double t_reg_ms = 0.0;
  double t_map_ms = 0.0;
  double t_total_ms = 0.0;
  // Registration breakdown (scan-to-scan plus scan-to-map).
  double t_assoc_ms = 0.0;
  double t_solve_ms = 0.0;
  int reg_iterations = 0;
  FeatureFrame features;  // extracted (dense + sparse) in the sensor frame
};

/// Removes nonground sparse features within `r_near` of the scanner whose
/// nearest same-class map neighbor is farther than `d_dyn` (apparent
/// movers). Ground features are never removed. A class with no map points
/// yet is passed through (no evidence of motion), and when more than half
/// of a class's checked points would be removed the class is kept intact:
/// that pattern indicates a misaligned frame, not movers. `pose` places
/// the frame in the map's world coordinates.
FeatureFrame filter_dynamic(const FeatureFrame& frame, const Pose& pose,
                            const LocalMap& map, double r_near, double d_dyn);

/// Transforms the sparse features by `pose`, appends them to the map,
/// crops the map to `crop_radius` around the new position, and enforces
/// the per-class budget by evicting points of the oldest frames first.
void update_map(LocalMap& map, const FeatureFrame& filtered, const Pose& pose,
                double crop_radius, int budget_per_class);

/// Sequential odometry driver owning the pose, velocity model, previous
/// frame and local map.
class Odometry {
 public:
  explicit Odometry(const RunConfig& cfg);

  /// Processes one frame: optional motion compensation with the previous
  /// relative motion, feature extraction, scan-to-scan then scan-to-map
  /// alignment seeded by the constant-velocity guess, dynamic filtering
  /// and map update. On registration failure the constant-velocity pose
  /// is kept, the frame is flagged untracked and the map is left alone.
  FrameSummary process_frame(const PointCloud& cloud);

  const LocalMap& map() const { return map_; }
  const Pose& pose() const { return pose_; }
  const Pose& last_relative() const { return last_relative_; }
  const std::vector<TrajectoryRecord>& trajectory() const {
    return trajectory_;
  }
  int frames_processed() const { return frames_; }

 private:
  RunConfig cfg_;
  LocalMap map_;
  Pose pose_;
  Pose last_relative_;
  FeatureFrame previous_;  // dense features of the last frame
  std::vector<TrajectoryRecord> trajectory_;
  int frames_ = 0;
};

}  // namespace lodo
