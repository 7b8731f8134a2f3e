// Dataset readers and writers.
//
// Wire formats:
//  - velodyne .bin: packed little-endian float32 x,y,z,intensity per point.
//  - pose text: 12 whitespace-separated reals per line, row-major 3x4 [R|t].
//  - PLY: ascii or binary_little_endian, x/y/z/intensity float32 plus an
//    optional uchar class property.
//  - trajectory CSV: frame_id, 12 pose reals, t_feature_ms, t_reg_ms,
//    t_map_ms, t_total_ms, tracked (0/1).

#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "lodo/geometry.hpp"
#include "lodo/point_cloud.hpp"

namespace lodo {

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Per-frame odometry output row: estimated pose plus the per-stage
/// wall-clock breakdown in milliseconds.
struct TrajectoryRecord {
  int frame_id = 0;
  Pose pose;
  double t_feature_ms = 0.0;
  double t_reg_ms = 0.0;
  double t_map_ms = 0.0;
  double t_total_ms = 0.0;
  bool tracked = true;
};

PointCloud read_kitti_bin(const std::string& path);
void write_kitti_bin(const PointCloud& cloud, const std::string& path);

std::vector<Pose> read_kitti_poses(const std::string& path);
void write_kitti_poses(const std::vector<Pose>& poses,
                       const std::string& path);

/// Optional per-point class labels; empty means "write none".
void write_ply(const PointCloud& cloud, const std::vector<uint8_t>& labels,
               const std::string& path, bool binary = true);
PointCloud read_ply(const std::string& path,
                    std::vector<uint8_t>* labels = nullptr);

/// Rotates every point within its own elevation plane: elevation angle grows
/// by `correction_rad`, range and azimuth stay fixed. Points on the vertical
/// axis (undefined azimuth) are left untouched.
PointCloud correct_intrinsic_angle(const PointCloud& cloud,
                                   double correction_rad);

void write_trajectory_csv(const std::vector<TrajectoryRecord>& records,
                          const std::string& path);
std::vector<TrajectoryRecord> read_trajectory_csv(const std::string& path);

/// Reads either a trajectory CSV or a KITTI pose text file, sniffing the
/// format from the first line.
std::vector<Pose> read_trajectory_any(const std::string& path);

/// Sorted list of the .bin frames of a KITTI-layout sequence directory.
std::vector<std::string> list_kitti_frames(const std::string& dir);

}  // namespace lodo
