#include "lodo/features.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <random>
#include <unordered_map>

#include "lodo/parallel.hpp"

namespace lodo {

namespace {

constexpr double kCos30 = 0.86602540378443865;
constexpr double kSin30 = 0.5;

struct VoxelKey {
  int x, y, z;
  bool operator==(const VoxelKey& o) const {
    return x == o.x && y == o.y && z == o.z;
  }
};

struct VoxelHash {
  std::size_t operator()(const VoxelKey& k) const {
    std::size_t h = static_cast<std::size_t>(k.x) * 73856093u;
    h ^= static_cast<std::size_t>(k.y) * 19349669u;
    h ^= static_cast<std::size_t>(k.z) * 83492791u;
    return h;
  }
};

VoxelKey voxel_of(const Eigen::Vector3f& p, double size) {
  return {static_cast<int>(std::floor(p.x() / size)),
          static_cast<int>(std::floor(p.y() / size)),
          static_cast<int>(std::floor(p.z() / size))};
}

/// Keeps the strongest point per voxel; output preserves input order.
std::vector<FeaturePoint> voxel_select(const std::vector<FeaturePoint>& pts,
                                       double voxel) {
  std::unordered_map<VoxelKey, int, VoxelHash> best;
  best.reserve(pts.size());
  for (int i = 0; i < static_cast<int>(pts.size()); ++i) {
    VoxelKey key = voxel_of(pts[i].position, voxel);
    auto [it, inserted] = best.emplace(key, i);
    if (!inserted && pts[i].strength > pts[it->second].strength)
      it->second = i;
  }
  std::vector<int> keep;
  keep.reserve(best.size());
  for (const auto& [key, idx] : best) keep.push_back(idx);
  std::sort(keep.begin(), keep.end());
  std::vector<FeaturePoint> out;
  out.reserve(keep.size());
  for (int idx : keep) out.push_back(pts[idx]);
  return out;
}

std::vector<FeaturePoint> nms_filter(const std::vector<FeaturePoint>& pts,
                                     double radius) {
  // Greedy strongest-first; a voxel hash of kept points bounds the scan.
  std::vector<int> order(pts.size());
  for (int i = 0; i < static_cast<int>(pts.size()); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    if (pts[a].strength != pts[b].strength)
      return pts[a].strength > pts[b].strength;
    return a < b;
  });
  std::unordered_map<VoxelKey, std::vector<int>, VoxelHash> kept_cells;
  std::vector<char> kept(pts.size(), 0);
  float r_sq = static_cast<float>(radius * radius);
  for (int idx : order) {
    VoxelKey key = voxel_of(pts[idx].position, radius);
    bool suppressed = false;
    for (int dx = -1; dx <= 1 && !suppressed; ++dx)
      for (int dy = -1; dy <= 1 && !suppressed; ++dy)
        for (int dz = -1; dz <= 1 && !suppressed; ++dz) {
          auto it = kept_cells.find({key.x + dx, key.y + dy, key.z + dz});
          if (it == kept_cells.end()) continue;
          for (int j : it->second)
            if ((pts[j].position - pts[idx].position).squaredNorm() < r_sq) {
              suppressed = true;
              break;
            }
        }
    if (!suppressed) {
      kept[idx] = 1;
      kept_cells[key].push_back(idx);
    }
  }
  std::vector<FeaturePoint> out;
  for (int i = 0; i < static_cast<int>(pts.size()); ++i)
    if (kept[i]) out.push_back(pts[i]);
  return out;
}

struct PlaneFit {
  Eigen::Vector3d normal = Eigen::Vector3d::UnitZ();
  double offset = 0.0;  // plane: normal . p = offset
  bool ok = false;
};

PlaneFit fit_plane_lsq(const std::vector<Eigen::Vector3d>& pts) {
  PlaneFit fit;
  if (pts.size() < 3) return fit;
  Eigen::Vector3d mean = Eigen::Vector3d::Zero();
  for (const auto& p : pts) mean += p;
  mean /= static_cast<double>(pts.size());
  Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
  for (const auto& p : pts) {
    Eigen::Vector3d d = p - mean;
    cov += d * d.transpose();
  }
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(cov);
  if (es.info() != Eigen::Success) return fit;
  // Degenerate (collinear) cells have two vanishing eigenvalues.
  if (es.eigenvalues()(1) < 1e-12) return fit;
  fit.normal = es.eigenvectors().col(0);
  fit.offset = fit.normal.dot(mean);
  fit.ok = true;
  return fit;
}

}  // namespace

const char* class_name(FeatureClass c) {
  switch (c) {
    case FeatureClass::kGround: return "ground";
    case FeatureClass::kFacade: return "facade";
    case FeatureClass::kRoof: return "roof";
    case FeatureClass::kPillar: return "pillar";
    case FeatureClass::kBeam: return "beam";
    case FeatureClass::kVertex: return "vertex";
  }
  return "?";
}

std::size_t FeatureFrame::sparse_total() const {
  std::size_t n = 0;
  for (const auto& s : sparse) n += s.size();
  return n;
}

std::size_t FeatureFrame::dense_total() const {
  std::size_t n = 0;
  for (const auto& s : dense) n += s.size();
  return n;
}

GroundFilterResult ground_filter(const PointCloud& cloud, double grid_size,
                                 double delta_h1, double delta_h2,
                                 const Pose& reference) {
  GroundFilterResult result;
  result.grid.cell_size = grid_size;
  if (cloud.empty()) return result;

  Pose to_ref = reference.inverse();
  std::vector<Eigen::Vector3f> ref_pts(cloud.size());
  for (std::size_t i = 0; i < cloud.size(); ++i)
    ref_pts[i] = to_ref.apply(cloud.points[i].position);

  int min_x = std::numeric_limits<int>::max();
  int min_y = std::numeric_limits<int>::max();
  int max_x = std::numeric_limits<int>::min();
  int max_y = std::numeric_limits<int>::min();
  std::vector<std::pair<int, int>> cell_of(cloud.size());
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    int ix = static_cast<int>(std::floor(ref_pts[i].x() / grid_size));
    int iy = static_cast<int>(std::floor(ref_pts[i].y() / grid_size));
    cell_of[i] = {ix, iy};
    min_x = std::min(min_x, ix);
    max_x = std::max(max_x, ix);
    min_y = std::min(min_y, iy);
    max_y = std::max(max_y, iy);
  }

  GroundGrid& grid = result.grid;
  grid.min_x = min_x;
  grid.min_y = min_y;
  grid.cols = max_x - min_x + 1;
  grid.rows = max_y - min_y + 1;
  std::size_t n_cells =
      static_cast<std::size_t>(grid.cols) * static_cast<std::size_t>(grid.rows);
  grid.h_min.assign(n_cells, std::numeric_limits<float>::max());
  grid.h_neimin.assign(n_cells, std::numeric_limits<float>::max());
  grid.cell_points.assign(n_cells, {});

  for (std::size_t i = 0; i < cloud.size(); ++i) {
    int ci = grid.cell_index(cell_of[i].first, cell_of[i].second);
    grid.cell_points[ci].push_back(static_cast<int>(i));
    grid.h_min[ci] = std::min(grid.h_min[ci], ref_pts[i].z());
  }

  int occupied = 0;
  for (const auto& pts : grid.cell_points)
    if (!pts.empty()) ++occupied;
  if (occupied <= 1 && cloud.size() > 1) {
    result.single_cell_warning = true;
    std::fprintf(stderr,
                 "ground_filter: all %zu points fall into one %g m cell; "
                 "grid may be too coarse\n",
                 cloud.size(), grid_size);
  }

  // 3x3 neighborhood minimum (center included).
  for (int iy = min_y; iy <= max_y; ++iy) {
    for (int ix = min_x; ix <= max_x; ++ix) {
      int ci = grid.cell_index(ix, iy);
      if (grid.cell_points[ci].empty()) continue;
      float neimin = std::numeric_limits<float>::max();
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          if (!grid.contains(ix + dx, iy + dy)) continue;
          neimin =
              std::min(neimin, grid.h_min[grid.cell_index(ix + dx, iy + dy)]);
        }
      grid.h_neimin[ci] = neimin;
    }
  }

  for (std::size_t i = 0; i < cloud.size(); ++i) {
    int ci = grid.cell_index(cell_of[i].first, cell_of[i].second);
    float h = ref_pts[i].z();
    bool nonground = (h - grid.h_min[ci] > delta_h1) ||
                     (grid.h_min[ci] - grid.h_neimin[ci] > delta_h2);
    if (nonground)
      result.nonground.push_back(static_cast<int>(i));
    else
      result.rough_ground.push_back(static_cast<int>(i));
  }
  return result;
}

std::vector<FeaturePoint> refine_ground(const PointCloud& cloud,
                                        const GroundFilterResult& filter,
                                        const RunConfig& cfg) {
  const GroundGrid& grid = filter.grid;
  std::vector<char> is_rough(cloud.size(), 0);
  for (int i : filter.rough_ground) is_rough[i] = 1;

  std::vector<FeaturePoint> ground;
  for (std::size_t ci = 0; ci < grid.cell_points.size(); ++ci) {
    std::vector<int> members;
    for (int i : grid.cell_points[ci])
      if (is_rough[i]) members.push_back(i);
    if (static_cast<int>(members.size()) < cfg.ground_min_cell_points)
      continue;

    std::vector<Eigen::Vector3d> pts;
    pts.reserve(members.size());
    for (int i : members)
      pts.push_back(cloud.points[i].position.cast<double>());

    // RANSAC over 3-point plane hypotheses, then an LSQ refit on inliers.
    std::mt19937 rng(cfg.seed + static_cast<unsigned>(ci) * 2654435761u);
    std::uniform_int_distribution<int> pick(0,
                                            static_cast<int>(pts.size()) - 1);
    std::vector<int> best_inliers;
    for (int iter = 0; iter < cfg.ground_ransac_iters; ++iter) {
      int a = pick(rng), b = pick(rng), c = pick(rng);
      if (a == b || b == c || a == c) continue;
      Eigen::Vector3d n = (pts[b] - pts[a]).cross(pts[c] - pts[a]);
      double len = n.norm();
      if (len < 1e-9) continue;
      n /= len;
      double d0 = n.dot(pts[a]);
      std::vector<int> inliers;
      for (int i = 0; i < static_cast<int>(pts.size()); ++i)
        if (std::abs(n.dot(pts[i]) - d0) <= cfg.ground_ransac_dist)
          inliers.push_back(i);
      if (inliers.size() > best_inliers.size()) best_inliers = inliers;
    }
    if (static_cast<int>(best_inliers.size()) < cfg.ground_min_cell_points)
      continue;

    std::vector<Eigen::Vector3d> inlier_pts;
    inlier_pts.reserve(best_inliers.size());
    for (int i : best_inliers) inlier_pts.push_back(pts[i]);
    PlaneFit fit = fit_plane_lsq(inlier_pts);
    if (!fit.ok) continue;  // degenerate cell
    if (fit.normal.z() < 0) fit.normal = -fit.normal;  // upward

    for (int i : best_inliers) {
      FeaturePoint fp;
      fp.position = cloud.points[members[i]].position;
      fp.intensity = cloud.points[members[i]].intensity;
      fp.direction = fit.normal.cast<float>();
      fp.strength = 1.0f;
      fp.height = 0.0f;
      fp.source_frame = cloud.frame_id;
      ground.push_back(fp);
    }
  }
  return ground;
}

namespace {

std::optional<PcaResult> pca_of(const std::vector<Eigen::Vector3f>& points,
                                const std::vector<int>& nbrs) {
  Eigen::Vector3d mean = Eigen::Vector3d::Zero();
  for (int i : nbrs) mean += points[i].cast<double>();
  mean /= static_cast<double>(nbrs.size());
  Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
  for (int i : nbrs) {
    Eigen::Vector3d d = points[i].cast<double>() - mean;
    cov += d * d.transpose();
  }
  cov /= static_cast<double>(nbrs.size());

  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(cov);
  if (es.info() != Eigen::Success) return std::nullopt;
  Eigen::Vector3d ev = es.eigenvalues().cwiseMax(0.0);
  double l1 = ev(2), l2 = ev(1), l3 = ev(0);
  if (l1 <= 0.0) return std::nullopt;  // all neighbors coincident

  PcaResult pca;
  pca.eigenvalues = Eigen::Vector3d(l1, l2, l3);
  pca.primary = es.eigenvectors().col(2);
  pca.middle = es.eigenvectors().col(1);
  pca.normal = es.eigenvectors().col(0);
  pca.linearity = (l1 - l2) / l1;
  pca.planarity = (l2 - l3) / l1;
  pca.curvature = l3 / (l1 + l2 + l3);
  pca.neighborhood_size = static_cast<int>(nbrs.size());
  return pca;
}

}  // namespace

std::vector<std::optional<PcaResult>> pca_neighborhood(
    const std::vector<Eigen::Vector3f>& points, int k, double radius,
    int min_neighbors, int threads) {
  std::vector<std::optional<PcaResult>> results(points.size());
  if (points.empty()) return results;

  // When k covers the whole set and the bounding-box diameter fits inside
  // the radius, every neighborhood is the full set: one shared result.
  if (k >= static_cast<int>(points.size())) {
    Eigen::Vector3f lo = points[0], hi = points[0];
    for (const auto& p : points) {
      lo = lo.cwiseMin(p);
      hi = hi.cwiseMax(p);
    }
    if ((hi - lo).cast<double>().norm() <= radius &&
        static_cast<int>(points.size()) >= min_neighbors) {
      std::vector<int> all(points.size());
      for (std::size_t i = 0; i < points.size(); ++i)
        all[i] = static_cast<int>(i);
      auto shared = pca_of(points, all);
      for (auto& r : results) r = shared;
      return results;
    }
  }

  KdTree3 tree(points);
  parallel_for(0, static_cast<int>(points.size()), threads, [&](int qi) {
    auto hits = tree.knn(points[qi], k, static_cast<float>(radius));
    if (static_cast<int>(hits.size()) < min_neighbors) return;
    std::vector<int> nbrs(hits.size());
    for (std::size_t i = 0; i < hits.size(); ++i) nbrs[i] = hits[i].index;
    results[qi] = pca_of(points, nbrs);
  });
  return results;
}

std::optional<FeatureClass> classify_point(const PcaResult& pca,
                                           double height_above_ground,
                                           const RunConfig& cfg) {
  double vz = std::abs(pca.primary.z());
  double nz = std::abs(pca.normal.z());
  if (pca.linearity > cfg.classify_linearity) {
    if (vz > kCos30) return FeatureClass::kPillar;
    if (vz < kSin30) return FeatureClass::kBeam;
  }
  if (pca.planarity > cfg.classify_planarity) {
    if (nz < kSin30) return FeatureClass::kFacade;
    if (nz > kCos30 && height_above_ground > cfg.roof_min_height)
      return FeatureClass::kRoof;
  }
  if (pca.curvature > cfg.classify_curvature) return FeatureClass::kVertex;
  return std::nullopt;
}

FeatureFrame nms_downsample(const FeatureFrame& raw, const RunConfig& cfg) {
  FeatureFrame out;
  out.frame_id = raw.frame_id;
  for (int c = 0; c < kClassCount; ++c) {
    double voxel_dense = cfg.voxel_dense;
    double voxel_sparse = cfg.voxel_sparse;
    if (c == static_cast<int>(FeatureClass::kGround)) {
      voxel_dense *= cfg.ground_voxel_scale;
      voxel_sparse *= cfg.ground_voxel_scale;
    }
    std::vector<FeaturePoint> kept = nms_filter(raw.dense[c], cfg.nms_radius);
    out.dense[c] = voxel_select(kept, voxel_dense);
    out.sparse[c] = voxel_select(out.dense[c], voxel_sparse);
  }
  return out;
}

std::vector<NccDescriptor> encode_ncc(const FeatureFrame& frame,
                                      double radius, double intensity_max,
                                      double height_max) {
  const auto& vertices = frame.dense_of(FeatureClass::kVertex);
  std::vector<NccDescriptor> descriptors(vertices.size());
  if (vertices.empty()) return descriptors;

  std::vector<Eigen::Vector3f> all_pts;
  std::vector<FeatureClass> all_cls;
  std::vector<float> all_int;
  for (FeatureClass c : kAllClasses) {
    for (const FeaturePoint& fp : frame.dense_of(c)) {
      all_pts.push_back(fp.position);
      all_cls.push_back(c);
      all_int.push_back(fp.intensity);
    }
  }
  KdTree3 tree(all_pts);

  for (std::size_t vi = 0; vi < vertices.size(); ++vi) {
    const FeaturePoint& vtx = vertices[vi];
    auto nbrs = tree.radius(vtx.position, static_cast<float>(radius));
    int count = 0, n_f = 0, n_p = 0, n_b = 0, n_r = 0;
    double intensity_sum = 0.0;
    for (const auto& nb : nbrs) {
      if (nb.dist_sq < 1e-12f) continue;  // the vertex itself
      ++count;
      intensity_sum += all_int[nb.index];
      switch (all_cls[nb.index]) {
        case FeatureClass::kFacade: ++n_f; break;
        case FeatureClass::kPillar: ++n_p; break;
        case FeatureClass::kBeam: ++n_b; break;
        case FeatureClass::kRoof: ++n_r; break;
        default: break;
      }
    }
    NccDescriptor& d = descriptors[vi];
    double mean_intensity =
        count > 0 ? intensity_sum / count : static_cast<double>(vtx.intensity);
    double inv = count > 0 ? 1.0 / count : 0.0;
    d.v(0) = static_cast<float>(n_f * inv);
    d.v(1) = static_cast<float>(n_p * inv);
    d.v(2) = static_cast<float>(n_b * inv);
    d.v(3) = static_cast<float>(n_r * inv);
    d.v(4) = static_cast<float>(
        std::clamp(mean_intensity / intensity_max, 0.0, 1.0));
    d.v(5) = static_cast<float>(
        std::clamp(static_cast<double>(vtx.height) / height_max, 0.0, 1.0));
  }
  return descriptors;
}

FeatureFrame extract_features(const PointCloud& cloud, const RunConfig& cfg,
                              const Pose& reference) {
  FeatureFrame raw;
  raw.frame_id = cloud.frame_id;
  if (cloud.empty()) return raw;

  GroundFilterResult filter =
      ground_filter(cloud, cfg.ground_grid_size, cfg.ground_delta_h1,
                    cfg.ground_delta_h2, reference);
  raw.dense[static_cast<int>(FeatureClass::kGround)] =
      refine_ground(cloud, filter, cfg);

  // Nonground points, optionally downsampled to a fixed budget before PCA.
  std::vector<int> ng = filter.nonground;
  if (static_cast<int>(ng.size()) > cfg.nonground_sample) {
    std::mt19937 rng(cfg.seed ^ (0x9e3779b9u + static_cast<unsigned>(
                                                   cloud.frame_id)));
    std::vector<int> sampled;
    sampled.reserve(cfg.nonground_sample);
    std::sample(ng.begin(), ng.end(), std::back_inserter(sampled),
                cfg.nonground_sample, rng);
    ng = std::move(sampled);
  }

  std::vector<Eigen::Vector3f> ng_pts(ng.size());
  for (std::size_t i = 0; i < ng.size(); ++i)
    ng_pts[i] = cloud.points[ng[i]].position;

  auto pca = pca_neighborhood(ng_pts, cfg.pca_k, cfg.pca_radius,
                              cfg.pca_min_neighbors, cfg.threads);

  // Height above ground: reference-frame height minus the 3x3-neighborhood
  // ground minimum of the point's grid cell.
  Pose to_ref = reference.inverse();
  const GroundGrid& grid = filter.grid;
  auto height_of = [&](const Eigen::Vector3f& p) {
    Eigen::Vector3f r = to_ref.apply(p);
    int ix = static_cast<int>(std::floor(r.x() / grid.cell_size));
    int iy = static_cast<int>(std::floor(r.y() / grid.cell_size));
    if (grid.contains(ix, iy)) {
      float base = grid.h_neimin[grid.cell_index(ix, iy)];
      if (base < std::numeric_limits<float>::max()) return r.z() - base;
    }
    return r.z();
  };

  Eigen::Vector3f origin = cloud.sensor_origin;
  for (std::size_t i = 0; i < ng.size(); ++i) {
    if (!pca[i]) continue;
    double height = height_of(ng_pts[i]);
    auto cls = classify_point(*pca[i], height, cfg);
    if (!cls) continue;

    FeaturePoint fp;
    fp.position = ng_pts[i];
    fp.intensity = cloud.points[ng[i]].intensity;
    fp.height = static_cast<float>(height);
    fp.source_frame = cloud.frame_id;
    if (is_planar(*cls)) {
      Eigen::Vector3d n = pca[i]->normal;
      if (n.dot((origin.cast<double>() -
                 ng_pts[i].cast<double>())) < 0)
        n = -n;  // toward the sensor
      fp.direction = n.cast<float>();
      fp.strength = static_cast<float>(pca[i]->planarity);
    } else if (is_linear(*cls)) {
      Eigen::Vector3d v = pca[i]->primary;
      if (std::abs(v.z()) > 1e-6 ? v.z() < 0 : v.x() < 0) v = -v;
      fp.direction = v.cast<float>();
      fp.strength = static_cast<float>(pca[i]->linearity);
    } else {
      fp.strength = static_cast<float>(pca[i]->curvature);
    }
    raw.dense[static_cast<int>(*cls)].push_back(fp);
  }

  FeatureFrame out = nms_downsample(raw, cfg);
  out.vertex_ncc =
      encode_ncc(out, cfg.ncc_radius, cfg.intensity_max, cfg.height_max);
  return out;
}

void flatten_frame(const FeatureFrame& frame, PointCloud* cloud,
                   std::vector<std::uint8_t>* labels) {
  cloud->points.clear();
  cloud->frame_id = frame.frame_id;
  labels->clear();
  for (FeatureClass c : kAllClasses) {
    for (const FeaturePoint& fp : frame.dense_of(c)) {
      cloud->points.emplace_back(fp.position.x(), fp.position.y(),
                                 fp.position.z(), fp.intensity);
      labels->push_back(static_cast<std::uint8_t>(c));
    }
  }
}

}  // namespace lodo
