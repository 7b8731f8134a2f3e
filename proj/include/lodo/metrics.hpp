// Trajectory and map quality metrics: segment-based translation/rotation
// drift on KITTI-style pose sequences, nearest-neighbor map error, and
// per-stage timing summaries.
#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "lodo/geometry.hpp"
#include "lodo/io.hpp"
#include "lodo/point_cloud.hpp"

namespace lodo {

struct MetricsError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Drift statistics of one segment length.
struct SegmentStat {
  double length_m = 0.0;
  double ate_percent = 0.0;        // mean |t_err| / L * 100
  double are_deg_per_100m = 0.0;   // mean angle_err / L * 100, degrees
  int samples = 0;
};

/// Mean and 95th-percentile wall time of one pipeline stage.
struct TimingStat {
  std::string stage;
  double mean_ms = 0.0;
  double p95_ms = 0.0;
};

struct MetricReport {
  bool valid = false;       // false: see `warning`, numbers are absent
  std::string warning;
  double ate_percent = 0.0;
  double are_deg_per_100m = 0.0;
  std::vector<SegmentStat> segments;  // subset of {100,...,800} m reachable
  std::optional<double> mapping_error_m;
  std::vector<TimingStat> timing;
};

/// Per-frame cumulative path length along a pose sequence.
std::vector<double> path_lengths(const std::vector<Pose>& poses);

/// Segment-drift evaluation: for every start frame and every segment
/// length L in {100, 200, ..., 800} m still reachable on the ground-truth
/// path, the relative-pose error between estimate and ground truth over
/// the segment contributes |t_err|/L (translation) and angle/L (rotation).
/// ATE is the mean over all samples times 100 (percent); ARE is reported
/// in degrees per 100 m. A ground-truth path shorter than 100 m yields an
/// invalid report carrying a warning. Throws MetricsError when the
/// sequences differ in length or hold fewer than two poses.
MetricReport kitti_ate_are(const std::vector<Pose>& estimated,
                           const std::vector<Pose>& ground_truth);

/// Mean distance from each map point to its nearest reference neighbor,
/// ignoring pairs farther than `max_dist` (gross-outlier guard). Throws
/// MetricsError when either cloud is empty.
double mapping_error(const PointCloud& map, const PointCloud& reference,
                     double max_dist = 2.0);

/// Mean / 95th-percentile summary of the trajectory's stage timings
/// (stages: feature extraction, registration, map update, total).
std::vector<TimingStat> timing_summary(
    const std::vector<TrajectoryRecord>& records);

}  // namespace lodo
