// Per-class closest-point registration with a linear least-squares core.
//
// One iteration: transform the sparse source features by the current
// estimate, match each to its nearest same-class target feature (with a
// direction-consistency gate), build one to three scalar rows per match
// depending on the metric (point for vertices, plane for ground / facade /
// roof, line for pillar / beam), weight the rows, and solve the accumulated
// 6x6 normal equations for a small correction [t; angles] that is composed
// onto the estimate. The association gate shrinks geometrically across
// iterations.
#pragma once

#include <Eigen/Core>

#include <array>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "lodo/config.hpp"
#include "lodo/features.hpp"
#include "lodo/geometry.hpp"
#include "lodo/kdtree.hpp"

namespace lodo {

struct RegistrationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Not enough scalar rows to constrain all six degrees of freedom.
struct UnderDeterminedError : RegistrationError {
  using RegistrationError::RegistrationError;
};

/// Normal matrix too ill-conditioned; the message names the weakest
/// direction (e.g. "translation along [0.99 0.10 0.00] unobservable").
struct DegeneracyError : RegistrationError {
  using RegistrationError::RegistrationError;
};

enum class MetricKind { kPointToPoint, kPointToPlane, kPointToLine };

struct Correspondence {
  Eigen::Vector3d source = Eigen::Vector3d::Zero();  // p, already transformed
  Eigen::Vector3d target = Eigen::Vector3d::Zero();  // q
  // Plane normal or line direction of the target feature; zero for the
  // point-to-point metric.
  Eigen::Vector3d direction = Eigen::Vector3d::Zero();
  MetricKind metric = MetricKind::kPointToPoint;
  FeatureClass cls = FeatureClass::kVertex;
  double intensity_diff = 0.0;  // |I_source - I_target|
  double distance = 0.0;        // metric residual magnitude, >= 0
  double weight = 1.0;
};

/// Scalar observation rows contributed by one correspondence: 3 for
/// point-to-point and point-to-line, 1 for point-to-plane.
int metric_rows(MetricKind metric);

struct NormalEquations {
  Matrix6d ata = Matrix6d::Zero();
  Vector6d atb = Vector6d::Zero();
  double btpb = 0.0;  // weighted squared norm of the right-hand side
  int rows = 0;
  int correspondences = 0;
};

enum class RegistrationStatus {
  kConverged,
  kMaxIterations,
  kUnderDetermined,
  kDegenerate,
  kDiverged,
};

struct IterationTrace {
  int iteration = 0;
  double xi_norm = 0.0;         // |t| + |angles| of the accepted step
  double rms_residual = 0.0;    // weighted RMS over scalar rows, at solution
  std::array<int, kClassCount> class_counts{};
};

struct RegistrationResult {
  Pose transform;
  std::vector<TangentVector> xi_history;
  double sigma_hat = 0.0;          // posterior standard deviation, m
  Matrix6d information = Matrix6d::Zero();
  double overlap = 0.0;            // nonground overlap ratio in [0,1]
  int iterations = 0;
  bool converged = false;
  RegistrationStatus status = RegistrationStatus::kMaxIterations;
  std::string message;
  std::vector<IterationTrace> trace;
  double t_associate_ms = 0.0;  // wall clock summed over iterations
  double t_solve_ms = 0.0;      // weighting + accumulation + solve
};

/// Immutable registration target: per-class points with spatial indices,
/// plus a combined nonground index for the overlap ratio.
class RegistrationTarget {
 public:
  RegistrationTarget() = default;
  /// Builds from the given per-class sets; `dense` picks the frame level.
  explicit RegistrationTarget(const FeatureFrame& frame, bool dense = true);
  explicit RegistrationTarget(
      const std::array<std::vector<FeaturePoint>, kClassCount>& classes);

  const std::vector<FeaturePoint>& points(FeatureClass c) const {
    return classes_[static_cast<int>(c)];
  }
  /// Null when the class is empty.
  const KdTree3* tree(FeatureClass c) const {
    const KdTree3& t = trees_[static_cast<int>(c)];
    return t.empty() ? nullptr : &t;
  }
  const KdTree3* nonground_tree() const {
    return nonground_tree_.empty() ? nullptr : &nonground_tree_;
  }
  std::size_t total() const;

 private:
  void build();

  std::array<std::vector<FeaturePoint>, kClassCount> classes_;
  std::array<KdTree3, kClassCount> trees_;
  KdTree3 nonground_tree_;
};

/// Transforms positions and directions of every feature point.
FeaturePoint transform_feature(const FeaturePoint& fp, const Pose& pose);
FeatureFrame transform_frame(const FeatureFrame& frame, const Pose& pose);

/// Nearest same-class matches of the sparse source features (pre-transformed
/// by `transform`) within `max_dist`, gated on direction consistency for
/// planar and linear classes. Throws UnderDeterminedError when the matches
/// provide fewer than 6 scalar rows.
std::vector<Correspondence> associate(const FeatureFrame& source,
                                      const Pose& transform,
                                      const RegistrationTarget& target,
                                      double max_dist,
                                      double direction_cos_min,
                                      int threads = 1);

/// One to three rows of the linearized system for one correspondence.
/// A is (rows x 6), b is (rows). The rows satisfy A xi - b = -(residual)
/// to first order in xi for the correspondence's metric.
void build_rows(const Correspondence& c,
                Eigen::Matrix<double, Eigen::Dynamic, 6>& a,
                Eigen::VectorXd& b);

/// Robust kernel weight as a function of eps = d / delta. kappa = 2 turns
/// the weighting off (1 everywhere); kappa = 1 is the pseudo-Huber shape.
double weight_residual(double d, double delta, double kappa);

/// Class-balancing weight from per-class correspondence counts: ground and
/// roof rows get (|F| + 2|P| - |B|) / (2 (|G| + |R|)), clamped; others 1.
double weight_balanced(FeatureClass cls,
                       const std::array<int, kClassCount>& counts,
                       double w_min = 0.1, double w_max = 10.0);

/// Intensity-consistency weight exp(-|dI| / I_max).
double weight_intensity(double intensity_diff, double intensity_max);

/// Fills Correspondence::weight with the product of the enabled weights.
void apply_weights(std::vector<Correspondence>& corrs, const RunConfig& cfg);

/// Accumulates the weighted normal equations in input order.
NormalEquations accumulate(const std::vector<Correspondence>& corrs);

/// Solves the accumulated system for the correction. Throws
/// UnderDeterminedError (rows < 6) or DegeneracyError (condition number
/// beyond cfg.condition_max). A perfectly consistent zero system returns
/// the zero correction.
TangentVector solve_step(const NormalEquations& neq, const RunConfig& cfg);

/// Posterior deviation and information matrix of a solved system:
/// sigma^2 = residual-at-solution / (rows - 6), floored at cfg.sigma_floor;
/// information = ata / sigma^2. Throws RegistrationError when rows <= 6.
std::pair<double, Matrix6d> evaluate_quality(const NormalEquations& neq,
                                             const TangentVector& xi,
                                             const RunConfig& cfg);

/// Fraction of transformed source nonground feature points (dense level)
/// with a target nonground neighbor within tau. Empty source gives 0.
double overlap_ratio(const FeatureFrame& source, const Pose& transform,
                     const RegistrationTarget& target, double tau);

/// Full iterative registration of the source frame onto the target.
RegistrationResult register_frames(const FeatureFrame& source,
                                   const RegistrationTarget& target,
                                   const Pose& guess, const RunConfig& cfg);

}  // namespace lodo
