// Scan undistortion under the uniform-motion assumption. Each point is
// re-referenced to the end of the frame: p' = slerp(R, s) p + s t, where s
// is the point's timestamp ratio and {R, t} the motion over the frame.

#pragma once

#include <stdexcept>

#include "lodo/geometry.hpp"
#include "lodo/point_cloud.hpp"

namespace lodo {

struct MotionCompError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Undistorts `cloud` with the frame motion {R_eb, t_eb}. By default points
/// are grouped onto a 256-level timestamp grid (one interpolated transform
/// per level; grid endpoints are exact so s = 0 and s = 1 stay bit-exact).
/// `exact` computes one transform per point instead. Output timestamps are
/// cleared. Throws MotionCompError when the cloud carries no timestamps or
/// a ratio falls outside [0, 1].
PointCloud compensate(const PointCloud& cloud, const Pose& motion,
                      bool exact = false, int threads = 1);

}  // namespace lodo
