// Run-time configuration: one flat key = value file, '#' comments.
// Unknown keys are rejected so typos fail loudly. Every field has a
// documented default below.

#pragma once

#include <stdexcept>
#include <string>

namespace lodo {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct RunConfig {
  // --- preprocessing -------------------------------------------------------
  double intrinsic_correction_deg = 0.0;  // elevation-angle correction
  bool motion_compensation = false;       // needs per-point timestamps
  bool compensation_exact = false;        // per-point transforms, no buckets

  // --- ground filtering ----------------------------------------------------
  double ground_grid_size = 2.0;       // m, 2D grid on reference plane
  double ground_delta_h1 = 0.35;       // m, in-cell height threshold
  double ground_delta_h2 = 0.25;       // m, neighbor-min height threshold
  int ground_ransac_iters = 20;        // per-cell plane hypotheses
  double ground_ransac_dist = 0.1;     // m, plane inlier distance
  int ground_min_cell_points = 3;      // cells below this are skipped

  // --- nonground PCA + classification -------------------------------------
  int nonground_sample = 40000;   // random downsample before PCA
  int pca_k = 25;                 // K of the K-R neighborhood
  double pca_radius = 1.0;        // R of the K-R neighborhood, m
  int pca_min_neighbors = 8;      // below this: unclassifiable
  double classify_linearity = 0.6;    // sigma_1d threshold (pillar/beam)
  double classify_planarity = 0.5;    // sigma_2d threshold (facade/roof)
  double classify_curvature = 0.1;    // sigma_c threshold (vertex)
  double roof_min_height = 2.0;       // m above ground

  // --- per-class refinement ------------------------------------------------
  double nms_radius = 0.25;       // m, per-class non-maximum suppression
  double voxel_dense = 0.45;      // m, map-density downsample
  double voxel_sparse = 0.90;     // m, registration-source downsample
  double ground_voxel_scale = 2.0;  // ground uses coarser voxels

  // --- NCC vertex descriptors ----------------------------------------------
  double ncc_radius = 3.0;    // m, neighborhood around each vertex
  double intensity_max = 255.0;
  double height_max = 30.0;   // m, height normalization

  // --- registration ---------------------------------------------------------
  double icp_kappa = 1.0;          // robust-kernel shape (1 = pseudo-Huber)
  double icp_delta = 0.3;          // m, inlier noise threshold
  double balanced_w_min = 0.1;     // clamp for the balanced weight
  double balanced_w_max = 10.0;
  bool weight_residual_on = true;    // ablation switches
  bool weight_balanced_on = true;
  bool weight_intensity_on = true;
  double assoc_dist_start = 1.5;   // m, first-iteration match threshold
  double assoc_dist_min = 0.3;     // m, floor of the shrinking threshold
  double assoc_shrink = 0.9;       // per-iteration decay factor
  double direction_cos_min = 0.86602540378443865;  // cos 30 deg
  double icp_converge_xi = 1e-5;   // |t| + |angles| threshold
  int icp_max_iter = 30;
  double sigma_floor = 1e-4;       // m, perfect-fit floor for posterior sigma
  double condition_max = 1e12;     // normal-matrix conditioning limit
  double overlap_tau = 0.5;        // m, NN cutoff for the overlap ratio

  // --- odometry front-end ---------------------------------------------------
  int s2s_iters = 3;               // scan-to-scan iterations, 0 = skip
  double dyn_near_radius = 30.0;   // m, dynamic filter range gate
  double dyn_dist = 0.5;           // m, same-class NN distance to count as
                                   // dynamic
  double map_crop_radius = 80.0;   // m
  int map_budget_per_class = 20000;

  // --- back-end -------------------------------------------------------------
  double submap_max_translation = 30.0;  // m
  double submap_max_rotation_deg = 90.0;
  int submap_max_frames = 100;
  double loop_radius = 50.0;        // m, candidate gate
  double loop_radius_growth = 0.0;  // m added per unoptimized submap
  double ncc_cos_min = 0.90;        // descriptor match threshold
  int ransac_iters = 1000;
  double ransac_inlier_dist = 1.0;  // m
  int ransac_min_inliers = 8;
  double edge_sigma_max = 0.2;      // m, reject loop edges above this
  double edge_overlap_min = 0.3;    // reject loop edges below this
  int pgo_max_iter = 50;
  double pgo_rel_tol = 1e-9;

  // --- misc -----------------------------------------------------------------
  int threads = 1;       // >1 parallelizes per-point feature work
  unsigned int seed = 42;

  /// Throws ConfigError when a threshold is non-positive or an iteration
  /// cap is below 1.
  void validate() const;
};

/// Parses a key = value file into defaults. Unknown keys and malformed
/// lines raise ConfigError naming the offender.
RunConfig load_config(const std::string& path);

/// Same, from in-memory text (used by tests and --set overrides).
RunConfig parse_config(const std::string& text, RunConfig base = RunConfig());

/// Applies a single "key=value" override in place.
void apply_config_entry(RunConfig& cfg, const std::string& key,
                        const std::string& value);

}  // namespace lodo
