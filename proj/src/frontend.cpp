#include "lodo/frontend.hpp"

#include <algorithm>
#include <chrono>
#include <map>
#include <utility>

#include "lodo/motion_comp.hpp"

namespace lodo {

namespace {

double ms_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double, std::milli>(
             std::chrono::steady_clock::now() - start)
      .count();
}

// Trust region for the frame-to-frame refinement stage: it only absorbs
// the constant-velocity prediction error, which is bounded by one frame
// of acceleration. A result farther from the prediction than this did
// not converge in its few fixed iterations and would poison the
// scan-to-map stage if adopted.
constexpr double kS2sTrustTranslation = 1.0;   // m
constexpr double kS2sTrustRotation = 0.25;     // rad

// The dynamic filter targets localized movers. When more than this
// fraction of a class's checked points fails the map-distance test, the
// cause is a misaligned frame (or a class newly entering the map), not a
// mover covering most of the view, and removing them would starve the map
// of that class for good.
constexpr double kDynMaxDropFraction = 0.5;

}  // namespace

bool LocalMap::empty() const { return total() == 0; }

std::size_t LocalMap::total() const {
  std::size_t n = 0;
  for (const auto& cls : points) n += cls.size();
  return n;
}

void LocalMap::rebuild_index() { target = RegistrationTarget(points); }

FeatureFrame filter_dynamic(const FeatureFrame& frame, const Pose& pose,
                            const LocalMap& map, double r_near,
                            double d_dyn) {
  FeatureFrame out = frame;
  if (map.empty()) return out;
  const double r_near_sq = r_near * r_near;
  const double d_dyn_sq = d_dyn * d_dyn;
  for (FeatureClass cls : kAllClasses) {
    if (cls == FeatureClass::kGround) continue;  // ground is never dynamic
    const KdTree3* tree = map.target.tree(cls);
    // An empty map class gives no evidence of motion; the class has to be
    // able to seed the map when it first comes into view.
    if (tree == nullptr) continue;
    auto& pts = out.sparse[static_cast<int>(cls)];
    std::vector<char> drop(pts.size(), 0);
    std::size_t checked = 0;
    std::size_t dropped = 0;
    for (std::size_t i = 0; i < pts.size(); ++i) {
      if (pts[i].position.squaredNorm() > r_near_sq) continue;
      ++checked;
      Eigen::Vector3d p = pts[i].position.cast<double>();
      Eigen::Vector3f world = pose.apply(p).cast<float>();
      KdTree3::Neighbor nn = tree->nearest(world);
      if (nn.index < 0 || nn.dist_sq > d_dyn_sq) {
        drop[i] = 1;
        ++dropped;
      }
    }
    if (dropped == 0 ||
        dropped > kDynMaxDropFraction * static_cast<double>(checked))
      continue;  // nothing to remove, or a misaligned frame rather than movers
    std::vector<FeaturePoint> kept;
    kept.reserve(pts.size() - dropped);
    for (std::size_t i = 0; i < pts.size(); ++i)
      if (!drop[i]) kept.push_back(pts[i]);
    pts = std::move(kept);
  }
  return out;
}

void update_map(LocalMap& map, const FeatureFrame& filtered, const Pose& pose,
                double crop_radius, int budget_per_class) {
  const Eigen::Vector3f center = pose.translation().cast<float>();
  const float crop_sq = static_cast<float>(crop_radius * crop_radius);
  for (FeatureClass cls : kAllClasses) {
    auto& dst = map.points[static_cast<int>(cls)];
    for (FeaturePoint fp : filtered.sparse_of(cls)) {
      fp = transform_feature(fp, pose);
      fp.source_frame = filtered.frame_id;
      dst.push_back(fp);
    }
    // Crop to the neighborhood of the latest position.
    dst.erase(std::remove_if(dst.begin(), dst.end(),
                             [&](const FeaturePoint& fp) {
                               return (fp.position - center).squaredNorm() >
                                      crop_sq;
                             }),
              dst.end());
    // Budget: evict whole oldest frames first, then the oldest points of
    // the frame straddling the cut (points of one frame stay in insertion
    // order, so a stable partition by frame id is just a stable sort).
    if (budget_per_class > 0 &&
        dst.size() > static_cast<std::size_t>(budget_per_class)) {
      std::stable_sort(dst.begin(), dst.end(),
                       [](const FeaturePoint& a, const FeaturePoint& b) {
                         return a.source_frame < b.source_frame;
                       });
      dst.erase(dst.begin(),
                dst.begin() + (dst.size() - budget_per_class));
    }
  }
  map.reference = pose;
  map.rebuild_index();
}

Odometry::Odometry(const RunConfig& cfg) : cfg_(cfg) { cfg_.validate(); }

FrameSummary Odometry::process_frame(const PointCloud& cloud) {
  const auto t_start = std::chrono::steady_clock::now();
  FrameSummary out;
  out.frame_id = cloud.frame_id;

  // 1. Undistort with the previous motion as the per-frame velocity model.
  const PointCloud* input = &cloud;
  PointCloud compensated;
  if (cfg_.motion_compensation && cloud.has_timestamps && frames_ > 0) {
    compensated = compensate(cloud, last_relative_, cfg_.compensation_exact,
                             cfg_.threads);
    input = &compensated;
  }

  // 2. Classified features of this frame.
  const auto t_feat = std::chrono::steady_clock::now();
  out.features = extract_features(*input, cfg_);
  out.t_feature_ms = ms_since(t_feat);

  const auto t_reg = std::chrono::steady_clock::now();
  if (frames_ == 0) {
    // Bootstrap: identity pose, the first frame becomes the map.
    out.pose = Pose();
    out.relative = Pose();
    out.tracked = true;
  } else {
    // 3. Constant-velocity guess, optionally refined frame-to-frame.
    Pose relative_guess = last_relative_;
    if (cfg_.s2s_iters > 0 && previous_.dense_total() > 0) {
      RunConfig s2s_cfg = cfg_;
      s2s_cfg.icp_max_iter = cfg_.s2s_iters;
      RegistrationTarget prev_target(previous_, /*dense=*/true);
      RegistrationResult s2s = register_frames(out.features, prev_target,
                                               relative_guess, s2s_cfg);
      if (s2s.status == RegistrationStatus::kConverged ||
          s2s.status == RegistrationStatus::kMaxIterations) {
        Pose delta = relative_guess.inverse().compose(s2s.transform);
        if (delta.translation().norm() <= kS2sTrustTranslation &&
            delta.rotation_angle() <= kS2sTrustRotation) {
          relative_guess = s2s.transform;
        }
      }
      out.t_assoc_ms += s2s.t_associate_ms;
      out.t_solve_ms += s2s.t_solve_ms;
      out.reg_iterations += s2s.iterations;
    }

    // 4. Scan-to-map to convergence.
    Pose guess = pose_.compose(relative_guess);
    RegistrationResult s2m = register_frames(out.features, map_.target,
                                             guess, cfg_);
    out.t_assoc_ms += s2m.t_associate_ms;
    out.t_solve_ms += s2m.t_solve_ms;
    out.reg_iterations += s2m.iterations;
    if (s2m.status == RegistrationStatus::kConverged ||
        s2m.status == RegistrationStatus::kMaxIterations) {
      out.pose = s2m.transform;
      out.relative = pose_.inverse().compose(out.pose);
      out.tracked = true;
      out.sigma_hat = s2m.sigma_hat;
      out.information = s2m.information;
      out.overlap = s2m.overlap;
    } else {
      // Registration failed: keep the constant-velocity prediction and do
      // not let this frame touch the map.
      out.pose = pose_.compose(last_relative_);
      out.relative = last_relative_;
      out.tracked = false;
    }
  }
  out.t_reg_ms = ms_since(t_reg);

  // 5. Dynamic filter + map update (tracked frames only).
  const auto t_map = std::chrono::steady_clock::now();
  if (out.tracked) {
    FeatureFrame filtered =
        map_.empty() ? out.features
                     : filter_dynamic(out.features, out.pose, map_,
                                      cfg_.dyn_near_radius, cfg_.dyn_dist);
    update_map(map_, filtered, out.pose, cfg_.map_crop_radius,
               cfg_.map_budget_per_class);
    last_relative_ = out.relative;
  }
  out.t_map_ms = ms_since(t_map);

  pose_ = out.pose;
  previous_ = out.features;
  ++frames_;
  out.t_total_ms = ms_since(t_start);

  TrajectoryRecord rec;
  rec.frame_id = out.frame_id;
  rec.pose = out.pose;
  rec.t_feature_ms = out.t_feature_ms;
  rec.t_reg_ms = out.t_reg_ms;
  rec.t_map_ms = out.t_map_ms;
  rec.t_total_ms = out.t_total_ms;
  rec.tracked = out.tracked;
  trajectory_.push_back(rec);
  return out;
}

}  // namespace lodo
