// Submap pose-graph back-end.
//
// The odometry stream is segmented into submaps (snapshot of the rolling
// local map plus vertex descriptors, spawned by travelled-distance /
// rotation / frame-count triggers). Loop closures between submaps are
// found by radius gating on the current pose estimates, mutual-best
// matching of vertex descriptors, a robust closed-form coarse alignment,
// and map-to-map ICP verification. Accepted edges enter a pose graph over
// submap reference poses which is optimized by damped relinearized least
// squares; member frame poses are then redistributed inside each submap.
//
// Threading: LoopCloser is the synchronous core and owns all graph state.
// SlamPipeline wraps it in a single worker thread behind an append-only
// queue of immutable submap snapshots and publishes versioned immutable
// trajectory snapshots; corrections never touch front-end state.
#pragma once

#include <Eigen/Core>

#include <condition_variable>
#include <cstdint>
#include <deque>
#include <iosfwd>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "lodo/config.hpp"
#include "lodo/features.hpp"
#include "lodo/frontend.hpp"
#include "lodo/geometry.hpp"
#include "lodo/registration.hpp"

namespace lodo {

struct BackendError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// One processing unit of the back-end: a snapshot of the local feature map
/// in the coordinates of its reference frame (the first member frame),
/// vertex descriptors recomputed on the aggregated map, and the member
/// frames' odometry poses relative to the reference.
struct Submap {
  int id = 0;
  Pose reference;          // odometry world pose of the reference frame
  /// Aggregated features in the reference frame, at map density; the
  /// sparse and dense levels are identical so the submap can serve as
  /// either side of a map-to-map registration.
  FeatureFrame features;
  std::vector<int> member_ids;        // frame ids, reference first
  std::vector<Pose> member_relative;  // member pose in the reference frame
  /// Scan-to-map information of the reference frame's registration; used
  /// (scaled) for the adjacent-submap odometry edge.
  Matrix6d reference_information = Matrix6d::Zero();
  // Trigger accumulators at creation time.
  double accumulated_translation = 0.0;  // m
  double accumulated_rotation = 0.0;     // rad
  int frame_count = 0;

  const std::vector<FeaturePoint>& vertices() const {
    return features.dense_of(FeatureClass::kVertex);
  }
  const std::vector<NccDescriptor>& descriptors() const {
    return features.vertex_ncc;
  }
};

/// Accumulates tracked odometry frames and spawns a Submap whenever the
/// travelled distance, accumulated rotation, or frame count since the last
/// spawn exceeds its trigger (defaults 30 m / 90 deg / 100 frames).
class SubmapBuilder {
 public:
  explicit SubmapBuilder(const RunConfig& cfg);

  /// Folds one tracked frame into the current window. When a trigger
  /// fires, returns the completed submap: a snapshot of `map` (the
  /// odometry local map, in world coordinates) re-expressed in the
  /// reference frame, with vertex descriptors recomputed on the aggregate.
  std::optional<Submap> add_frame(const FrameSummary& frame,
                                  const LocalMap& map);

  /// Force-spawns the partial window as a final submap; empty when no
  /// frame arrived since the last spawn.
  std::optional<Submap> flush(const LocalMap& map);

  int frames_in_window() const { return current_.frame_count; }

 private:
  Submap finalize(const LocalMap& map);

  RunConfig cfg_;
  int next_id_ = 0;
  Submap current_;
  Pose last_pose_;
  bool window_open_ = false;
};

/// Ids of prior submaps whose reference position lies within `r_loop` of
/// `current`'s, excluding `current` itself and its temporally adjacent
/// predecessor. `positions`, when nonempty, must parallel `submaps` and
/// supplies the latest (possibly loop-corrected) reference positions, the
/// last entry being `current`'s; otherwise the stored references are used.
/// A non-positive radius yields no candidates.
std::vector<int> find_loop_candidates(
    const std::vector<Submap>& submaps, const Submap& current, double r_loop,
    const std::vector<Eigen::Vector3d>& positions = {});

struct VertexMatch {
  int index_a = 0;  // into a.vertices()
  int index_b = 0;  // into b.vertices()
  float similarity = 0.0f;
};

/// Mutual-best vertex pairings by descriptor cosine similarity, kept when
/// the similarity reaches `cos_min`. Fewer than 3 descriptors on either
/// side yields no matches.
std::vector<VertexMatch> match_ncc(const Submap& a, const Submap& b,
                                   double cos_min);

struct CoarseResult {
  bool accepted = false;
  Pose transform;  // maps source points onto target points
  int inliers = 0;
  std::vector<int> inlier_indices;
};

/// Robust rigid alignment of paired points: RANSAC over 3-point
/// closed-form hypotheses (collinear samples skipped), inliers within
/// cfg.ransac_inlier_dist, refit on the best inlier set. Rejects when the
/// best hypothesis has fewer than cfg.ransac_min_inliers inliers.
CoarseResult coarse_register(const std::vector<Eigen::Vector3d>& source,
                             const std::vector<Eigen::Vector3d>& target,
                             const RunConfig& cfg, unsigned int seed);

enum class EdgeKind { kAdjacent, kLoop };

struct PoseGraphEdge {
  int from = 0;
  int to = 0;
  /// Measured pose of node `to` expressed in node `from`'s frame.
  Pose measurement;
  Matrix6d information = Matrix6d::Identity();  // symmetric PSD
  EdgeKind kind = EdgeKind::kAdjacent;
};

struct PoseGraphNode {
  int id = 0;
  Pose pose;  // current world estimate
  bool fixed = false;
};

struct PoseGraph {
  std::vector<PoseGraphNode> nodes;
  std::vector<PoseGraphEdge> edges;

  const PoseGraphNode* find(int id) const;
  PoseGraphNode* find(int id);
};

/// Map-to-map verification of a coarse loop hypothesis: runs the iterative
/// registration of b's features onto a's from `coarse` and accepts iff the
/// posterior deviation is at most cfg.edge_sigma_max and the overlap ratio
/// at least cfg.edge_overlap_min. The returned edge measures b in a's
/// frame and carries the registration's information matrix.
std::optional<PoseGraphEdge> verify_and_refine(const Submap& a,
                                               const Submap& b,
                                               const Pose& coarse,
                                               const RunConfig& cfg);

/// Residual of one edge at the given endpoint estimates: translation
/// difference and twice the vector part of the error quaternion between
/// the measured and estimated relative pose.
Vector6d edge_residual(const Pose& from_pose, const Pose& to_pose,
                       const Pose& measurement);

/// Total graph objective: sum over edges of r' I r.
double graph_cost(const PoseGraph& graph);

struct OptimizeReport {
  int iterations = 0;
  double initial_cost = 0.0;
  double final_cost = 0.0;
};

/// Optimizes the free node poses in place by damped relinearized least
/// squares on the edge residuals; terminates when the relative cost
/// decrease drops below cfg.pgo_rel_tol or after cfg.pgo_max_iter
/// iterations. The cost never increases and the fixed node is untouched.
/// Throws BackendError when the graph does not have exactly one fixed
/// node, references unknown ids, or is disconnected (message lists the
/// components).
OptimizeReport optimize_graph(PoseGraph& graph, const RunConfig& cfg);

/// Corrected world poses of a submap's member frames given the corrected
/// reference pose: the reference stays fixed and the members follow it
/// rigidly through their stored relative poses (the exactly-constrained
/// inner chain).
std::vector<Pose> distribute_inner(const Submap& submap,
                                   const Pose& corrected_reference);

/// Text dump, one record per line:
///   NODE id <12 pose reals, row-major 3x4>
///   EDGE from to <12 pose reals> <21 information reals, upper triangular
///   row-major>
/// Poses and information are written with full double precision.
void write_graph(std::ostream& os, const PoseGraph& graph);
PoseGraph read_graph(std::istream& is);

/// Synchronous loop-closure core. Owns the submap store and pose graph;
/// every accepted loop edge triggers a graph optimization.
class LoopCloser {
 public:
  explicit LoopCloser(const RunConfig& cfg);

  /// Appends the submap as a graph node (first node fixed), links it to
  /// its predecessor with an odometry edge, searches loop candidates and
  /// returns the number of loop edges accepted.
  int add_submap(Submap submap);

  const std::vector<Submap>& submaps() const { return submaps_; }
  const PoseGraph& graph() const { return graph_; }
  int optimizations() const { return optimizations_; }

  /// Latest corrected reference pose per submap id.
  std::vector<std::pair<int, Pose>> corrected_submap_poses() const;
  /// Latest corrected pose per member frame id, in submap order.
  std::vector<std::pair<int, Pose>> corrected_frame_poses() const;

 private:
  double effective_loop_radius() const;

  RunConfig cfg_;
  std::vector<Submap> submaps_;
  PoseGraph graph_;
  int unoptimized_ = 0;
  int optimizations_ = 0;
};

/// Versioned immutable view of the corrected trajectory.
struct TrajectorySnapshot {
  std::int64_t version = 0;
  std::vector<std::pair<int, Pose>> submap_poses;  // submap id -> pose
  std::vector<std::pair<int, Pose>> frame_poses;   // frame id -> pose
  int loop_edges = 0;
  int optimizations = 0;
};

/// Asynchronous wrapper: submaps are submitted to an append-only queue
/// consumed by one worker thread; after each submap the worker publishes a
/// new trajectory snapshot. Snapshots are immutable and safe to hold
/// across further updates.
class SlamPipeline {
 public:
  explicit SlamPipeline(const RunConfig& cfg);
  ~SlamPipeline();

  SlamPipeline(const SlamPipeline&) = delete;
  SlamPipeline& operator=(const SlamPipeline&) = delete;

  void submit(Submap submap);
  /// Blocks until every submitted submap is processed; idempotent. The
  /// worker stays available for further submissions.
  void drain();
  /// Drains and joins the worker; further submissions are invalid.
  void finish();

  std::shared_ptr<const TrajectorySnapshot> snapshot() const;
  /// The synchronous core; call only while drained or finished.
  const LoopCloser& closer() const { return closer_; }

 private:
  void run();
  void publish();

  RunConfig cfg_;
  LoopCloser closer_;
  mutable std::mutex mutex_;
  std::condition_variable work_cv_;
  std::condition_variable idle_cv_;
  std::deque<Submap> queue_;
  bool stop_ = false;
  bool busy_ = false;
  std::shared_ptr<const TrajectorySnapshot> snapshot_;
  std::thread worker_;
};

}  // namespace lodo
