#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <vector>

#include "lodo/geometry.hpp"

namespace lodo {

/// Raw sensor unit: coordinates in meters (32-bit on purpose, sensor
/// precision), reflectance intensity, and an optional relative timestamp.
/// timestamp_ratio is only meaningful when the owning cloud says so.
struct Point {
  Eigen::Vector3f position = Eigen::Vector3f::Zero();
  float intensity = 0.0f;
  float timestamp_ratio = 0.0f;  // in [0,1]; 0 == end of frame

  Point() = default;
  Point(float x, float y, float z, float i = 0.0f, float s = 0.0f)
      : position(x, y, z), intensity(i), timestamp_ratio(s) {}
};

struct PointCloud {
  std::vector<Point> points;
  int frame_id = 0;
  Eigen::Vector3f sensor_origin = Eigen::Vector3f::Zero();
  // Either every point carries a timestamp ratio or none does.
  bool has_timestamps = false;

  std::size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }
};

}  // namespace lodo
