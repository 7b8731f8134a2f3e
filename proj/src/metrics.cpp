#include "lodo/metrics.hpp"

#include <Eigen/Geometry>

#include <algorithm>
#include <cmath>

#include "lodo/kdtree.hpp"

namespace lodo {

namespace {

constexpr double kRadToDeg = 180.0 / 3.14159265358979323846;

double percentile95(std::vector<double> values) {
  if (values.empty()) return 0.0;
  std::sort(values.begin(), values.end());
  // Nearest-rank definition: the smallest value covering 95% of samples.
  std::size_t rank = static_cast<std::size_t>(
      std::ceil(0.95 * static_cast<double>(values.size())));
  rank = std::min(std::max<std::size_t>(rank, 1), values.size());
  return values[rank - 1];
}

}  // namespace

std::vector<double> path_lengths(const std::vector<Pose>& poses) {
  std::vector<double> dist(poses.size(), 0.0);
  for (std::size_t i = 1; i < poses.size(); ++i) {
    dist[i] = dist[i - 1] + (poses[i].translation() -
                             poses[i - 1].translation())
                                .norm();
  }
  return dist;
}

MetricReport kitti_ate_are(const std::vector<Pose>& estimated,
                           const std::vector<Pose>& ground_truth) {
  if (estimated.size() != ground_truth.size())
    throw MetricsError("trajectory lengths differ: " +
                       std::to_string(estimated.size()) + " vs " +
                       std::to_string(ground_truth.size()));
  if (estimated.size() < 2)
    throw MetricsError("need at least two poses to evaluate drift");

  MetricReport report;
  std::vector<double> dist = path_lengths(ground_truth);
  if (dist.back() < 100.0) {
    report.warning =
        "ground-truth path covers only " + std::to_string(dist.back()) +
        " m; segment evaluation needs at least 100 m";
    return report;
  }

  const int n = static_cast<int>(ground_truth.size());
  double sum_t = 0.0, sum_r = 0.0;
  int samples = 0;
  for (int li = 0; li < 8; ++li) {
    const double length = 100.0 * (li + 1);
    SegmentStat stat;
    stat.length_m = length;
    // Every frame is a start point; the end frame is the first one whose
    // path distance from the start reaches the segment length.
    int end = 0;
    for (int start = 0; start < n; ++start) {
      if (end < start) end = start;
      while (end < n && dist[end] - dist[start] < length) ++end;
      if (end >= n) break;
      Pose gt_rel = ground_truth[start].inverse().compose(ground_truth[end]);
      Pose est_rel = estimated[start].inverse().compose(estimated[end]);
      Pose error = gt_rel.inverse().compose(est_rel);
      double terr = error.translation().norm() / length;
      double rerr = error.rotation_angle() / length;
      stat.ate_percent += terr;
      stat.are_deg_per_100m += rerr;
      stat.samples += 1;
      sum_t += terr;
      sum_r += rerr;
      samples += 1;
    }
    if (stat.samples > 0) {
      stat.ate_percent = stat.ate_percent / stat.samples * 100.0;
      stat.are_deg_per_100m =
          stat.are_deg_per_100m / stat.samples * kRadToDeg * 100.0;
      report.segments.push_back(stat);
    }
  }
  if (samples == 0) {
    report.warning = "no evaluable segments";
    return report;
  }
  report.valid = true;
  report.ate_percent = sum_t / samples * 100.0;
  report.are_deg_per_100m = sum_r / samples * kRadToDeg * 100.0;
  return report;
}

double mapping_error(const PointCloud& map, const PointCloud& reference,
                     double max_dist) {
  if (map.points.empty() || reference.points.empty())
    throw MetricsError("mapping error needs two nonempty clouds");
  std::vector<Eigen::Vector3f> ref;
  ref.reserve(reference.points.size());
  for (const Point& p : reference.points) ref.push_back(p.position);
  KdTree3 tree(ref);

  const float guard_sq = static_cast<float>(max_dist * max_dist);
  double sum = 0.0;
  std::size_t used = 0;
  for (const Point& p : map.points) {
    KdTree3::Neighbor hit = tree.nearest(p.position);
    if (hit.index < 0 || hit.dist_sq > guard_sq) continue;
    sum += std::sqrt(static_cast<double>(hit.dist_sq));
    used += 1;
  }
  return used == 0 ? 0.0 : sum / static_cast<double>(used);
}

std::vector<TimingStat> timing_summary(
    const std::vector<TrajectoryRecord>& records) {
  struct Stage {
    const char* name;
    double TrajectoryRecord::* field;
  };
  const Stage stages[] = {
      {"feature extraction", &TrajectoryRecord::t_feature_ms},
      {"registration", &TrajectoryRecord::t_reg_ms},
      {"map update", &TrajectoryRecord::t_map_ms},
      {"total", &TrajectoryRecord::t_total_ms},
  };
  std::vector<TimingStat> out;
  for (const Stage& stage : stages) {
    TimingStat ts;
    ts.stage = stage.name;
    std::vector<double> values;
    values.reserve(records.size());
    for (const TrajectoryRecord& r : records) values.push_back(r.*stage.field);
    if (!values.empty()) {
      double sum = 0.0;
      for (double v : values) sum += v;
      ts.mean_ms = sum / static_cast<double>(values.size());
      ts.p95_ms = percentile95(values);
    }
    out.push_back(ts);
  }
  return out;
}

}  // namespace lodo
