#include "lodo/motion_comp.hpp"

#include <array>
#include <cmath>

#include "lodo/parallel.hpp"

namespace lodo {

namespace {
constexpr int kBuckets = 256;  // grid levels k/255, k = 0..255
}

PointCloud compensate(const PointCloud& cloud, const Pose& motion,
                      bool exact, int threads) {
  if (!cloud.has_timestamps)
    throw MotionCompError(
        "compensate: cloud has no timestamp ratios; skip compensation "
        "instead");
  for (const Point& p : cloud.points)
    if (!(p.timestamp_ratio >= 0.0f && p.timestamp_ratio <= 1.0f))
      throw MotionCompError("compensate: timestamp ratio outside [0,1]");

  PointCloud out = cloud;
  out.has_timestamps = false;

  if (exact) {
    parallel_for(0, static_cast<int>(cloud.points.size()), threads,
                 [&](int i) {
                   double s = cloud.points[i].timestamp_ratio;
                   Pose step = motion.interpolate(s);
                   out.points[i].position =
                       step.apply(cloud.points[i].position);
                   out.points[i].timestamp_ratio = 0.0f;
                 });
    return out;
  }

  std::array<Pose, kBuckets> table;
  for (int k = 0; k < kBuckets; ++k)
    table[k] = motion.interpolate(static_cast<double>(k) / (kBuckets - 1));
  parallel_for(0, static_cast<int>(cloud.points.size()), threads, [&](int i) {
    int k = static_cast<int>(
        std::lround(cloud.points[i].timestamp_ratio * (kBuckets - 1)));
    out.points[i].position = table[k].apply(cloud.points[i].position);
    out.points[i].timestamp_ratio = 0.0f;
  });
  return out;
}

}  // namespace lodo
