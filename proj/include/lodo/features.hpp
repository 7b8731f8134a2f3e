// Per-frame geometric feature extraction: dual-threshold ground filtering,
// PCA-based classification of nonground points into facade / roof / pillar /
// beam / vertex, per-class non-maximum suppression and two-level voxel
// downsampling, and neighborhood-category-context descriptors for vertices.

#pragma once

#include <Eigen/Core>

#include <array>
#include <cstdint>
#include <optional>
#include <vector>

#include "lodo/config.hpp"
#include "lodo/geometry.hpp"
#include "lodo/kdtree.hpp"
#include "lodo/point_cloud.hpp"

namespace lodo {

enum class FeatureClass : std::uint8_t {
  kGround = 0,
  kFacade = 1,
  kRoof = 2,
  kPillar = 3,
  kBeam = 4,
  kVertex = 5,
};
inline constexpr int kClassCount = 6;
inline constexpr std::array<FeatureClass, kClassCount> kAllClasses = {
    FeatureClass::kGround, FeatureClass::kFacade, FeatureClass::kRoof,
    FeatureClass::kPillar, FeatureClass::kBeam,   FeatureClass::kVertex};

const char* class_name(FeatureClass c);
inline bool is_planar(FeatureClass c) {
  return c == FeatureClass::kGround || c == FeatureClass::kFacade ||
         c == FeatureClass::kRoof;
}
inline bool is_linear(FeatureClass c) {
  return c == FeatureClass::kPillar || c == FeatureClass::kBeam;
}

/// One classified feature point. `direction` is the unit normal for planar
/// classes, the unit primary vector for linear classes, zero for vertices.
struct FeaturePoint {
  Eigen::Vector3f position = Eigen::Vector3f::Zero();
  float intensity = 0.0f;
  Eigen::Vector3f direction = Eigen::Vector3f::Zero();
  float strength = 0.0f;  // NMS score: sigma_1d / sigma_2d / sigma_c
  float height = 0.0f;    // above local ground, m
  int source_frame = 0;
};

/// Eigen-structure of one K-R neighborhood.
struct PcaResult {
  Eigen::Vector3d eigenvalues = Eigen::Vector3d::Zero();  // l1 >= l2 >= l3
  Eigen::Vector3d primary = Eigen::Vector3d::Zero();      // v, unit
  Eigen::Vector3d middle = Eigen::Vector3d::Zero();       // m, unit
  Eigen::Vector3d normal = Eigen::Vector3d::Zero();       // n, unit
  double linearity = 0.0;   // (l1 - l2) / l1
  double planarity = 0.0;   // (l2 - l3) / l1
  double curvature = 0.0;   // l3 / (l1 + l2 + l3)
  int neighborhood_size = 0;
};

/// 6-vector vertex descriptor: facade/pillar/beam/roof neighborhood ratios,
/// normalized mean intensity, normalized height above ground.
struct NccDescriptor {
  Eigen::Matrix<float, 6, 1> v = Eigen::Matrix<float, 6, 1>::Zero();

  float cosine(const NccDescriptor& other) const {
    float na = v.norm(), nb = other.v.norm();
    if (na == 0.0f || nb == 0.0f) return 0.0f;
    return v.dot(other.v) / (na * nb);
  }
};

/// The classified output of one frame: six point sets at map density
/// (`dense`) and at registration-source density (`sparse`, a subset).
struct FeatureFrame {
  int frame_id = 0;
  std::array<std::vector<FeaturePoint>, kClassCount> sparse;
  std::array<std::vector<FeaturePoint>, kClassCount> dense;
  std::vector<NccDescriptor> vertex_ncc;  // aligned with dense vertex set

  const std::vector<FeaturePoint>& dense_of(FeatureClass c) const {
    return dense[static_cast<int>(c)];
  }
  const std::vector<FeaturePoint>& sparse_of(FeatureClass c) const {
    return sparse[static_cast<int>(c)];
  }
  std::size_t sparse_total() const;
  std::size_t dense_total() const;
};

/// 2D occupancy grid on the reference plane used by the ground filter.
struct GroundGrid {
  double cell_size = 2.0;
  int min_x = 0, min_y = 0, cols = 0, rows = 0;
  // Per cell: minimum height, 3x3-neighborhood minimum, member points.
  std::vector<float> h_min;
  std::vector<float> h_neimin;
  std::vector<std::vector<int>> cell_points;  // indices into the input cloud

  int cell_index(int ix, int iy) const {
    return (iy - min_y) * cols + (ix - min_x);
  }
  bool contains(int ix, int iy) const {
    return ix >= min_x && ix < min_x + cols && iy >= min_y &&
           iy < min_y + rows;
  }
};

struct GroundFilterResult {
  std::vector<int> rough_ground;  // indices into the input cloud
  std::vector<int> nonground;
  GroundGrid grid;
  bool single_cell_warning = false;
};

/// Splits a frame into rough ground and nonground per the dual-threshold
/// rule: a point is nonground iff its height exceeds the cell minimum by
/// more than delta_h1, or the cell minimum exceeds the 3x3-neighborhood
/// minimum by more than delta_h2. Heights are measured normal to the
/// reference plane (`reference` maps plane coordinates to the sensor frame).
GroundFilterResult ground_filter(const PointCloud& cloud, double grid_size,
                                 double delta_h1, double delta_h2,
                                 const Pose& reference = Pose());

/// Per-cell RANSAC plane fit over the rough ground; inliers become ground
/// feature points carrying the upward-oriented cell-plane normal. Cells
/// with fewer than min_cell_points points or a degenerate fit are dropped.
std::vector<FeaturePoint> refine_ground(const PointCloud& cloud,
                                        const GroundFilterResult& filter,
                                        const RunConfig& cfg);

/// K-R neighborhood PCA for each query point: the K nearest neighbors
/// within radius R. Returns nullopt for points with fewer than
/// min_neighbors neighbors or a fully degenerate neighborhood.
std::vector<std::optional<PcaResult>> pca_neighborhood(
    const std::vector<Eigen::Vector3f>& points, int k, double radius,
    int min_neighbors, int threads = 1);

/// Classification of one PCA result; nullopt when no rule matches.
/// Rules (precedence linear > planar > vertex):
///   pillar: linearity > t_lin and |v.z| > cos 30
///   beam:   linearity > t_lin and |v.z| < sin 30
///   facade: planarity > t_pl and |n.z| < sin 30
///   roof:   planarity > t_pl and |n.z| > cos 30 and height > roof_min
///   vertex: curvature > t_c
std::optional<FeatureClass> classify_point(const PcaResult& pca,
                                           double height_above_ground,
                                           const RunConfig& cfg);

/// Per-class NMS (keep the strongest point inside nms_radius) followed by
/// voxel selection at dense then sparse resolution. Guarantees
/// sparse subset-of dense and no two kept points within nms_radius.
FeatureFrame nms_downsample(const FeatureFrame& raw, const RunConfig& cfg);

/// NCC descriptors for the dense vertex set of `frame`. The neighborhood
/// is every other dense feature point within `radius` of the vertex; an
/// empty neighborhood falls back to the vertex's own intensity and height.
std::vector<NccDescriptor> encode_ncc(const FeatureFrame& frame,
                                      double radius, double intensity_max,
                                      double height_max);

/// Full extraction pipeline for one frame.
FeatureFrame extract_features(const PointCloud& cloud, const RunConfig& cfg,
                              const Pose& reference = Pose());

/// Flattens the dense sets into one labeled cloud for debug export.
void flatten_frame(const FeatureFrame& frame, PointCloud* cloud,
                   std::vector<std::uint8_t>* labels);

}  // namespace lodo
