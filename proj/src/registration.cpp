#include "lodo/registration.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <sstream>

#include "lodo/parallel.hpp"

namespace lodo {

namespace {

MetricKind metric_of(FeatureClass c) {
  if (is_planar(c)) return MetricKind::kPointToPlane;
  if (is_linear(c)) return MetricKind::kPointToLine;
  return MetricKind::kPointToPoint;
}

double metric_distance(MetricKind metric, const Eigen::Vector3d& p,
                       const Eigen::Vector3d& q, const Eigen::Vector3d& dir) {
  Eigen::Vector3d diff = q - p;
  switch (metric) {
    case MetricKind::kPointToPlane:
      return std::abs(dir.dot(diff));
    case MetricKind::kPointToLine:
      return dir.cross(diff).norm();
    case MetricKind::kPointToPoint:
      break;
  }
  return diff.norm();
}

std::string direction_string(const Eigen::Vector3d& v) {
  std::ostringstream os;
  os.precision(2);
  os << std::fixed << "[" << v.x() << " " << v.y() << " " << v.z() << "]";
  return os.str();
}

}  // namespace

int metric_rows(MetricKind metric) {
  return metric == MetricKind::kPointToPlane ? 1 : 3;
}

RegistrationTarget::RegistrationTarget(const FeatureFrame& frame,
                                       bool dense) {
  classes_ = dense ? frame.dense : frame.sparse;
  build();
}

RegistrationTarget::RegistrationTarget(
    const std::array<std::vector<FeaturePoint>, kClassCount>& classes)
    : classes_(classes) {
  build();
}

void RegistrationTarget::build() {
  auto xyz = [](const FeaturePoint& fp) { return fp.position; };
  for (int c = 0; c < kClassCount; ++c)
    trees_[c] = KdTree3(classes_[c], xyz);

  std::vector<Eigen::Vector3f> nonground;
  for (int c = 0; c < kClassCount; ++c) {
    if (static_cast<FeatureClass>(c) == FeatureClass::kGround) continue;
    for (const auto& fp : classes_[c]) nonground.push_back(fp.position);
  }
  nonground_tree_ = KdTree3(nonground);
}

std::size_t RegistrationTarget::total() const {
  std::size_t n = 0;
  for (const auto& c : classes_) n += c.size();
  return n;
}

FeaturePoint transform_feature(const FeaturePoint& fp, const Pose& pose) {
  FeaturePoint out = fp;
  out.position = pose.apply(fp.position);
  Eigen::Vector3d d = pose.rotation() * fp.direction.cast<double>();
  out.direction = d.cast<float>();
  return out;
}

FeatureFrame transform_frame(const FeatureFrame& frame, const Pose& pose) {
  FeatureFrame out = frame;
  for (int c = 0; c < kClassCount; ++c) {
    for (auto& fp : out.sparse[c]) fp = transform_feature(fp, pose);
    for (auto& fp : out.dense[c]) fp = transform_feature(fp, pose);
  }
  return out;
}

std::vector<Correspondence> associate(const FeatureFrame& source,
                                      const Pose& transform,
                                      const RegistrationTarget& target,
                                      double max_dist,
                                      double direction_cos_min, int threads) {
  Eigen::Matrix3d rot = transform.rotation();
  float max_sq = static_cast<float>(max_dist * max_dist);

  std::vector<Correspondence> corrs;
  int total_rows = 0;
  for (FeatureClass c : kAllClasses) {
    const auto& src = source.sparse_of(c);
    const KdTree3* tree = target.tree(c);
    if (src.empty() || tree == nullptr) continue;
    const auto& tgt = target.points(c);

    std::vector<std::optional<Correspondence>> slots(src.size());
    parallel_for(0, static_cast<int>(src.size()), threads, [&](int i) {
      Eigen::Vector3f p = transform.apply(src[i].position);
      KdTree3::Neighbor nn = tree->nearest(p);
      if (nn.index < 0 || nn.dist_sq > max_sq) return;
      const FeaturePoint& t = tgt[nn.index];

      Correspondence corr;
      corr.cls = c;
      corr.metric = metric_of(c);
      corr.source = p.cast<double>();
      corr.target = t.position.cast<double>();
      if (corr.metric != MetricKind::kPointToPoint) {
        Eigen::Vector3d src_dir = rot * src[i].direction.cast<double>();
        Eigen::Vector3d tgt_dir = t.direction.cast<double>().normalized();
        if (std::abs(src_dir.dot(tgt_dir)) < direction_cos_min) return;
        corr.direction = tgt_dir;
      }
      corr.distance =
          metric_distance(corr.metric, corr.source, corr.target,
                          corr.direction);
      corr.intensity_diff =
          std::abs(static_cast<double>(src[i].intensity) - t.intensity);
      slots[i] = corr;
    });
    for (auto& slot : slots)
      if (slot) {
        total_rows += metric_rows(slot->metric);
        corrs.push_back(*slot);
      }
  }

  if (total_rows < 6) {
    std::ostringstream os;
    os << "association under-determined: " << corrs.size()
       << " matches providing " << total_rows
       << " scalar rows (need at least 6) at gate " << max_dist << " m";
    throw UnderDeterminedError(os.str());
  }
  return corrs;
}

void build_rows(const Correspondence& c,
                Eigen::Matrix<double, Eigen::Dynamic, 6>& a,
                Eigen::VectorXd& b) {
  const Eigen::Vector3d& p = c.source;
  Eigen::Vector3d diff = c.target - c.source;
  switch (c.metric) {
    case MetricKind::kPointToPoint:
      a.resize(3, 6);
      a.leftCols<3>() = Eigen::Matrix3d::Identity();
      // Rotation block -[p]x so that A xi - b matches -(q - R p - t) to
      // first order under R ~ I + [angles]x.
      a.rightCols<3>() = -skew(p);
      b = diff;
      return;
    case MetricKind::kPointToPlane: {
      const Eigen::Vector3d& n = c.direction;
      a.resize(1, 6);
      a.block<1, 3>(0, 0) = n.transpose();
      a.block<1, 3>(0, 3) = p.cross(n).transpose();
      b.resize(1);
      b(0) = n.dot(diff);
      return;
    }
    case MetricKind::kPointToLine: {
      const Eigen::Vector3d& v = c.direction;
      a.resize(3, 6);
      a.leftCols<3>() = skew(v);
      a.rightCols<3>() =
          v.dot(p) * Eigen::Matrix3d::Identity() - p * v.transpose();
      b = v.cross(diff);
      return;
    }
  }
}

double weight_residual(double d, double delta, double kappa) {
  double eps = d / delta;
  if (kappa == 2.0) return 1.0;
  if (kappa == 0.0) return 2.0 * eps / (eps * eps + 2.0);
  return eps *
         std::pow(eps * eps / std::abs(kappa - 2.0) + 1.0, kappa / 2.0 - 1.0);
}

double weight_balanced(FeatureClass cls,
                       const std::array<int, kClassCount>& counts,
                       double w_min, double w_max) {
  if (cls != FeatureClass::kGround && cls != FeatureClass::kRoof) return 1.0;
  double g = counts[static_cast<int>(FeatureClass::kGround)];
  double f = counts[static_cast<int>(FeatureClass::kFacade)];
  double r = counts[static_cast<int>(FeatureClass::kRoof)];
  double p = counts[static_cast<int>(FeatureClass::kPillar)];
  double b = counts[static_cast<int>(FeatureClass::kBeam)];
  if (g + r <= 0.0) return 1.0;
  double w = (f + 2.0 * p - b) / (2.0 * (g + r));
  return std::clamp(w, w_min, w_max);
}

double weight_intensity(double intensity_diff, double intensity_max) {
  return std::exp(-std::abs(intensity_diff) / intensity_max);
}

void apply_weights(std::vector<Correspondence>& corrs, const RunConfig& cfg) {
  std::array<int, kClassCount> counts{};
  for (const auto& c : corrs) ++counts[static_cast<int>(c.cls)];
  for (auto& c : corrs) {
    double w = 1.0;
    if (cfg.weight_residual_on)
      w *= weight_residual(c.distance, cfg.icp_delta, cfg.icp_kappa);
    if (cfg.weight_balanced_on)
      w *= weight_balanced(c.cls, counts, cfg.balanced_w_min,
                           cfg.balanced_w_max);
    if (cfg.weight_intensity_on)
      w *= weight_intensity(c.intensity_diff, cfg.intensity_max);
    c.weight = w;
  }
}

NormalEquations accumulate(const std::vector<Correspondence>& corrs) {
  NormalEquations neq;
  // Fixed-size blocks per metric; summation in input order so the result
  // is bit-reproducible regardless of association threading.
  for (const Correspondence& c : corrs) {
    double w = c.weight;
    const Eigen::Vector3d& p = c.source;
    Eigen::Vector3d diff = c.target - c.source;
    if (c.metric == MetricKind::kPointToPlane) {
      Vector6d a;
      a.head<3>() = c.direction;
      a.tail<3>() = p.cross(c.direction);
      double b = c.direction.dot(diff);
      neq.ata.noalias() += w * a * a.transpose();
      neq.atb.noalias() += w * b * a;
      neq.btpb += w * b * b;
      neq.rows += 1;
    } else {
      Eigen::Matrix<double, 3, 6> a;
      Eigen::Vector3d b;
      if (c.metric == MetricKind::kPointToPoint) {
        a.leftCols<3>() = Eigen::Matrix3d::Identity();
        a.rightCols<3>() = -skew(p);
        b = diff;
      } else {
        const Eigen::Vector3d& v = c.direction;
        a.leftCols<3>() = skew(v);
        a.rightCols<3>() =
            v.dot(p) * Eigen::Matrix3d::Identity() - p * v.transpose();
        b = v.cross(diff);
      }
      neq.ata.noalias() += w * a.transpose() * a;
      neq.atb.noalias() += w * a.transpose() * b;
      neq.btpb += w * b.squaredNorm();
      neq.rows += 3;
    }
    ++neq.correspondences;
  }
  // Stamp out the asymmetry of floating-point accumulation.
  neq.ata = ((neq.ata + neq.ata.transpose()) * 0.5).eval();
  return neq;
}

TangentVector solve_step(const NormalEquations& neq, const RunConfig& cfg) {
  if (neq.rows < 6) {
    std::ostringstream os;
    os << "normal equations under-determined: " << neq.rows << " rows";
    throw UnderDeterminedError(os.str());
  }
  // A perfectly consistent zero system (all residuals zero, possibly with
  // zero weights) is already at its optimum.
  if (neq.atb.norm() == 0.0 && neq.btpb == 0.0) return TangentVector();

  Eigen::SelfAdjointEigenSolver<Matrix6d> es(neq.ata);
  double lmin = es.eigenvalues()(0);
  double lmax = es.eigenvalues()(5);
  if (!(lmin > 0.0) || lmax / lmin > cfg.condition_max) {
    Vector6d weak = es.eigenvectors().col(0);
    double t_norm = weak.head<3>().norm();
    double r_norm = weak.tail<3>().norm();
    std::ostringstream os;
    os << "degenerate geometry (condition "
       << (lmin > 0.0 ? lmax / lmin : std::numeric_limits<double>::infinity())
       << "): ";
    if (t_norm >= r_norm)
      os << "translation along "
         << direction_string(weak.head<3>().normalized()) << " unobservable";
    else
      os << "rotation about " << direction_string(weak.tail<3>().normalized())
         << " unobservable";
    throw DegeneracyError(os.str());
  }
  Vector6d xi = neq.ata.ldlt().solve(neq.atb);
  return TangentVector(xi);
}

std::pair<double, Matrix6d> evaluate_quality(const NormalEquations& neq,
                                             const TangentVector& xi,
                                             const RunConfig& cfg) {
  if (neq.rows <= 6)
    throw RegistrationError(
        "quality evaluation needs more than 6 scalar rows, got " +
        std::to_string(neq.rows));
  Vector6d x = xi.vector();
  double residual =
      std::max(0.0, x.dot(neq.ata * x) - 2.0 * x.dot(neq.atb) + neq.btpb);
  double sigma = std::sqrt(residual / (neq.rows - 6));
  sigma = std::max(sigma, cfg.sigma_floor);
  return {sigma, neq.ata / (sigma * sigma)};
}

double overlap_ratio(const FeatureFrame& source, const Pose& transform,
                     const RegistrationTarget& target, double tau) {
  const KdTree3* tree = target.nonground_tree();
  float tau_sq = static_cast<float>(tau * tau);
  std::size_t total = 0, hits = 0;
  for (FeatureClass c : kAllClasses) {
    if (c == FeatureClass::kGround) continue;
    for (const auto& fp : source.dense_of(c)) {
      ++total;
      if (tree == nullptr) continue;
      KdTree3::Neighbor nn = tree->nearest(transform.apply(fp.position));
      if (nn.index >= 0 && nn.dist_sq <= tau_sq) ++hits;
    }
  }
  if (total == 0) return 0.0;
  return static_cast<double>(hits) / static_cast<double>(total);
}

RegistrationResult register_frames(const FeatureFrame& source,
                                   const RegistrationTarget& target,
                                   const Pose& guess, const RunConfig& cfg) {
  RegistrationResult res;
  res.transform = guess;

  double gate = cfg.assoc_dist_start;
  double prev_rms = std::numeric_limits<double>::max();
  int grow_streak = 0;
  NormalEquations last_neq;
  TangentVector last_xi;

  for (int k = 0; k < cfg.icp_max_iter; ++k) {
    auto t0 = std::chrono::steady_clock::now();
    std::vector<Correspondence> corrs;
    try {
      corrs = associate(source, res.transform, target, gate,
                        cfg.direction_cos_min, cfg.threads);
    } catch (const UnderDeterminedError& e) {
      res.status = RegistrationStatus::kUnderDetermined;
      res.message = e.what();
      res.iterations = k;
      return res;
    }
    auto t1 = std::chrono::steady_clock::now();
    apply_weights(corrs, cfg);
    NormalEquations neq = accumulate(corrs);
    TangentVector xi;
    try {
      xi = solve_step(neq, cfg);
    } catch (const DegeneracyError& e) {
      res.status = RegistrationStatus::kDegenerate;
      res.message = e.what();
      res.iterations = k;
      return res;
    }
    auto t2 = std::chrono::steady_clock::now();
    res.t_associate_ms +=
        std::chrono::duration<double, std::milli>(t1 - t0).count();
    res.t_solve_ms +=
        std::chrono::duration<double, std::milli>(t2 - t1).count();

    res.transform = from_tangent(xi) * res.transform;
    res.xi_history.push_back(xi);
    res.iterations = k + 1;
    last_neq = neq;
    last_xi = xi;

    Vector6d x = xi.vector();
    double r2 = std::max(
        0.0, x.dot(neq.ata * x) - 2.0 * x.dot(neq.atb) + neq.btpb);
    double rms = std::sqrt(r2 / std::max(1, neq.rows));
    IterationTrace tr;
    tr.iteration = k;
    tr.xi_norm = xi.mixed_norm();
    tr.rms_residual = rms;
    for (const auto& c : corrs) ++tr.class_counts[static_cast<int>(c.cls)];
    res.trace.push_back(tr);

    if (xi.mixed_norm() < cfg.icp_converge_xi) {
      res.converged = true;
      res.status = RegistrationStatus::kConverged;
      break;
    }
    // Re-association makes the residual jitter a little near the optimum;
    // only count growth that is clearly beyond that churn.
    if (rms > prev_rms * 1.02) {
      if (++grow_streak >= 3) {
        res.status = RegistrationStatus::kDiverged;
        res.message = "residual grew over 3 consecutive iterations";
        break;
      }
    } else if (rms <= prev_rms) {
      grow_streak = 0;
    }
    prev_rms = rms;
    gate = std::max(cfg.assoc_dist_min, gate * cfg.assoc_shrink);
  }

  if (last_neq.rows > 6) {
    auto [sigma, info] = evaluate_quality(last_neq, last_xi, cfg);
    res.sigma_hat = sigma;
    res.information = info;
  } else if (last_neq.rows > 0) {
    res.sigma_hat = cfg.sigma_floor;
  }
  res.overlap = overlap_ratio(source, res.transform, target, cfg.overlap_tau);
  return res;
}

}  // namespace lodo
