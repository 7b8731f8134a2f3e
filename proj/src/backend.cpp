#include "lodo/backend.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <istream>
#include <limits>
#include <ostream>
#include <random>
#include <sstream>

namespace lodo {

namespace {

constexpr double kPi = 3.14159265358979323846;

}  // namespace

// ---------------------------------------------------------------------------
// SubmapBuilder
// ---------------------------------------------------------------------------

SubmapBuilder::SubmapBuilder(const RunConfig& cfg) : cfg_(cfg) {}

std::optional<Submap> SubmapBuilder::add_frame(const FrameSummary& frame,
                                               const LocalMap& map) {
  if (!window_open_) {
    current_ = Submap{};
    current_.id = next_id_;
    current_.reference = frame.pose;
    current_.reference_information = frame.information;
    window_open_ = true;
  } else {
    Pose step = last_pose_.inverse().compose(frame.pose);
    current_.accumulated_translation += step.translation().norm();
    current_.accumulated_rotation += step.rotation_angle();
  }
  current_.member_ids.push_back(frame.frame_id);
  current_.member_relative.push_back(
      current_.reference.inverse().compose(frame.pose));
  current_.frame_count += 1;
  last_pose_ = frame.pose;

  bool fire =
      current_.accumulated_translation > cfg_.submap_max_translation ||
      current_.accumulated_rotation >
          cfg_.submap_max_rotation_deg * kPi / 180.0 ||
      current_.frame_count >= cfg_.submap_max_frames;
  if (!fire) return std::nullopt;
  return finalize(map);
}

std::optional<Submap> SubmapBuilder::flush(const LocalMap& map) {
  if (!window_open_) return std::nullopt;
  return finalize(map);
}

Submap SubmapBuilder::finalize(const LocalMap& map) {
  // Snapshot the local map in the reference frame. Both density levels get
  // the same points so the submap registers in either direction.
  Pose world_to_ref = current_.reference.inverse();
  FeatureFrame& agg = current_.features;
  agg.frame_id = current_.member_ids.front();
  for (int c = 0; c < kClassCount; ++c) {
    agg.dense[c].clear();
    agg.dense[c].reserve(map.points[c].size());
    for (const FeaturePoint& fp : map.points[c])
      agg.dense[c].push_back(transform_feature(fp, world_to_ref));
    agg.sparse[c] = agg.dense[c];
  }
  agg.vertex_ncc = encode_ncc(agg, cfg_.ncc_radius, cfg_.intensity_max,
                              cfg_.height_max);

  Submap done = std::move(current_);
  current_ = Submap{};
  window_open_ = false;
  next_id_ += 1;
  return done;
}

// ---------------------------------------------------------------------------
// Loop candidate search and descriptor matching
// ---------------------------------------------------------------------------

std::vector<int> find_loop_candidates(
    const std::vector<Submap>& submaps, const Submap& current, double r_loop,
    const std::vector<Eigen::Vector3d>& positions) {
  std::vector<int> ids;
  if (r_loop <= 0.0) return ids;
  const bool external = !positions.empty();
  Eigen::Vector3d here =
      external ? positions.back() : current.reference.translation();
  for (std::size_t i = 0; i < submaps.size(); ++i) {
    const Submap& s = submaps[i];
    if (s.id >= current.id) continue;        // only prior submaps
    if (s.id == current.id - 1) continue;    // temporally adjacent
    Eigen::Vector3d pos =
        external ? positions[i] : s.reference.translation();
    if ((pos - here).norm() <= r_loop) ids.push_back(s.id);
  }
  return ids;
}

std::vector<VertexMatch> match_ncc(const Submap& a, const Submap& b,
                                   double cos_min) {
  std::vector<VertexMatch> matches;
  const auto& da = a.descriptors();
  const auto& db = b.descriptors();
  if (da.size() < 3 || db.size() < 3) return matches;

  std::vector<int> best_for_a(da.size(), -1);
  std::vector<float> best_sim_a(da.size(), -2.0f);
  std::vector<int> best_for_b(db.size(), -1);
  std::vector<float> best_sim_b(db.size(), -2.0f);
  for (std::size_t i = 0; i < da.size(); ++i) {
    for (std::size_t j = 0; j < db.size(); ++j) {
      float sim = da[i].cosine(db[j]);
      if (sim > best_sim_a[i]) {
        best_sim_a[i] = sim;
        best_for_a[i] = static_cast<int>(j);
      }
      if (sim > best_sim_b[j]) {
        best_sim_b[j] = sim;
        best_for_b[j] = static_cast<int>(i);
      }
    }
  }
  for (std::size_t i = 0; i < da.size(); ++i) {
    int j = best_for_a[i];
    if (j < 0 || best_sim_a[i] < static_cast<float>(cos_min)) continue;
    if (best_for_b[j] != static_cast<int>(i)) continue;  // not mutual
    matches.push_back({static_cast<int>(i), j, best_sim_a[i]});
  }
  return matches;
}

// ---------------------------------------------------------------------------
// Coarse alignment
// ---------------------------------------------------------------------------

namespace {

/// Closed-form rigid alignment of paired points (target ~ R source + t).
/// Returns nullopt for degenerate configurations.
std::optional<Pose> fit_rigid(const std::vector<Eigen::Vector3d>& source,
                              const std::vector<Eigen::Vector3d>& target,
                              const std::vector<int>& idx) {
  const std::size_t n = idx.size();
  if (n < 3) return std::nullopt;
  Eigen::Vector3d cs = Eigen::Vector3d::Zero();
  Eigen::Vector3d ct = Eigen::Vector3d::Zero();
  for (int k : idx) {
    cs += source[k];
    ct += target[k];
  }
  cs /= static_cast<double>(n);
  ct /= static_cast<double>(n);
  Eigen::Matrix3d h = Eigen::Matrix3d::Zero();
  double spread = 2.0;
  for (int k : idx) {
    Eigen::Vector3d ds = source[k] - cs;
    h += ds * (target[k] - ct).transpose();
    spread = std::max(spread, ds.squaredNorm());
  }
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(
      h, Eigen::ComputeFullU | Eigen::ComputeFullV);
  // Collinear samples leave the rotation about the common axis free.
  if (svd.singularValues()(1) <= 1e-9 * spread) return std::nullopt;
  Eigen::Matrix3d u = svd.matrixU();
  Eigen::Matrix3d v = svd.matrixV();
  Eigen::Matrix3d d = Eigen::Matrix3d::Identity();
  if ((v * u.transpose()).determinant() < 0.0) d(2, 2) = -1.0;
  Eigen::Matrix3d r = v * d * u.transpose();
  return Pose(r, ct - r * cs);
}

}  // namespace

CoarseResult coarse_register(const std::vector<Eigen::Vector3d>& source,
                             const std::vector<Eigen::Vector3d>& target,
                             const RunConfig& cfg, unsigned int seed) {
  CoarseResult out;
  const std::size_t n = std::min(source.size(), target.size());
  if (n < 3) return out;

  std::mt19937 rng(seed);
  std::uniform_int_distribution<int> pick(0, static_cast<int>(n) - 1);
  const double tol2 = cfg.ransac_inlier_dist * cfg.ransac_inlier_dist;

  int best_count = 0;
  std::vector<int> best_inliers;
  std::vector<int> sample(3);
  std::vector<int> inliers;
  for (int it = 0; it < cfg.ransac_iters; ++it) {
    sample[0] = pick(rng);
    sample[1] = pick(rng);
    sample[2] = pick(rng);
    if (sample[0] == sample[1] || sample[0] == sample[2] ||
        sample[1] == sample[2])
      continue;
    std::optional<Pose> hyp = fit_rigid(source, target, sample);
    if (!hyp) continue;
    inliers.clear();
    for (std::size_t k = 0; k < n; ++k) {
      if ((hyp->apply(source[k]) - target[k]).squaredNorm() <= tol2)
        inliers.push_back(static_cast<int>(k));
    }
    if (static_cast<int>(inliers.size()) > best_count) {
      best_count = static_cast<int>(inliers.size());
      best_inliers = inliers;
    }
  }
  if (best_count < cfg.ransac_min_inliers) return out;

  std::optional<Pose> refined = fit_rigid(source, target, best_inliers);
  if (!refined) return out;
  // Re-evaluate inliers at the refined transform.
  inliers.clear();
  for (std::size_t k = 0; k < n; ++k) {
    if ((refined->apply(source[k]) - target[k]).squaredNorm() <= tol2)
      inliers.push_back(static_cast<int>(k));
  }
  if (static_cast<int>(inliers.size()) < cfg.ransac_min_inliers) return out;
  out.accepted = true;
  out.transform = *refined;
  out.inliers = static_cast<int>(inliers.size());
  out.inlier_indices = std::move(inliers);
  return out;
}

// ---------------------------------------------------------------------------
// Loop verification
// ---------------------------------------------------------------------------

std::optional<PoseGraphEdge> verify_and_refine(const Submap& a,
                                               const Submap& b,
                                               const Pose& coarse,
                                               const RunConfig& cfg) {
  RegistrationTarget target(a.features, /*dense=*/true);
  RegistrationResult result;
  try {
    result = register_frames(b.features, target, coarse, cfg);
  } catch (const RegistrationError&) {
    return std::nullopt;
  }
  if (result.status != RegistrationStatus::kConverged &&
      result.status != RegistrationStatus::kMaxIterations)
    return std::nullopt;
  if (result.sigma_hat > cfg.edge_sigma_max) return std::nullopt;
  if (result.overlap < cfg.edge_overlap_min) return std::nullopt;

  PoseGraphEdge edge;
  edge.from = a.id;
  edge.to = b.id;
  edge.measurement = result.transform;  // b's frame expressed in a's
  edge.information =
      0.5 * (result.information + result.information.transpose());
  edge.kind = EdgeKind::kLoop;
  return edge;
}

// ---------------------------------------------------------------------------
// Pose graph
// ---------------------------------------------------------------------------

const PoseGraphNode* PoseGraph::find(int id) const {
  for (const PoseGraphNode& n : nodes)
    if (n.id == id) return &n;
  return nullptr;
}

PoseGraphNode* PoseGraph::find(int id) {
  for (PoseGraphNode& n : nodes)
    if (n.id == id) return &n;
  return nullptr;
}

Vector6d edge_residual(const Pose& from_pose, const Pose& to_pose,
                       const Pose& measurement) {
  Pose predicted = from_pose.inverse().compose(to_pose);
  Eigen::Quaterniond qe =
      measurement.quaternion().conjugate() * predicted.quaternion();
  if (qe.w() < 0.0) qe.coeffs() *= -1.0;
  Vector6d r;
  r.head<3>() = predicted.translation() - measurement.translation();
  r.tail<3>() = 2.0 * qe.vec();
  return r;
}

double graph_cost(const PoseGraph& graph) {
  double cost = 0.0;
  for (const PoseGraphEdge& e : graph.edges) {
    const PoseGraphNode* a = graph.find(e.from);
    const PoseGraphNode* b = graph.find(e.to);
    if (!a || !b) throw BackendError("pose graph edge references unknown node");
    Vector6d r = edge_residual(a->pose, b->pose, e.measurement);
    cost += r.dot(e.information * r);
  }
  return cost;
}

namespace {

void check_graph(const PoseGraph& graph) {
  int fixed = 0;
  for (const PoseGraphNode& n : graph.nodes) fixed += n.fixed ? 1 : 0;
  if (fixed != 1)
    throw BackendError("pose graph needs exactly one fixed node, found " +
                       std::to_string(fixed));
  for (const PoseGraphEdge& e : graph.edges) {
    if (e.from == e.to)
      throw BackendError("pose graph edge connects node " +
                         std::to_string(e.from) + " to itself");
    if (!graph.find(e.from) || !graph.find(e.to))
      throw BackendError("pose graph edge " + std::to_string(e.from) + " -> " +
                         std::to_string(e.to) + " references unknown node");
  }
  // Connectivity over all edges.
  const std::size_t n = graph.nodes.size();
  std::vector<int> comp(n, -1);
  int comps = 0;
  for (std::size_t start = 0; start < n; ++start) {
    if (comp[start] >= 0) continue;
    std::vector<std::size_t> stack{start};
    comp[start] = comps;
    while (!stack.empty()) {
      std::size_t i = stack.back();
      stack.pop_back();
      int id = graph.nodes[i].id;
      for (const PoseGraphEdge& e : graph.edges) {
        int other = e.from == id ? e.to : (e.to == id ? e.from : id);
        if (other == id) continue;
        for (std::size_t j = 0; j < n; ++j) {
          if (graph.nodes[j].id == other && comp[j] < 0) {
            comp[j] = comps;
            stack.push_back(j);
          }
        }
      }
    }
    comps += 1;
  }
  if (comps > 1) {
    std::ostringstream msg;
    msg << "pose graph disconnected into " << comps << " components:";
    for (int c = 0; c < comps; ++c) {
      msg << " [";
      bool first = true;
      for (std::size_t i = 0; i < n; ++i) {
        if (comp[i] != c) continue;
        if (!first) msg << ' ';
        msg << graph.nodes[i].id;
        first = false;
      }
      msg << ']';
    }
    throw BackendError(msg.str());
  }
}

/// Square-root information weight W with W' W = information.
Matrix6d info_sqrt(const Matrix6d& info) {
  Eigen::SelfAdjointEigenSolver<Matrix6d> es(
      0.5 * (info + info.transpose()));
  Vector6d ev = es.eigenvalues().cwiseMax(0.0);
  return ev.cwiseSqrt().asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace

OptimizeReport optimize_graph(PoseGraph& graph, const RunConfig& cfg) {
  check_graph(graph);
  OptimizeReport report;
  report.initial_cost = graph_cost(graph);
  report.final_cost = report.initial_cost;
  if (report.initial_cost <= 0.0) return report;

  // Free-node bookkeeping: state vector is 6 parameters per free node.
  std::vector<int> free_index(graph.nodes.size(), -1);
  int free_count = 0;
  for (std::size_t i = 0; i < graph.nodes.size(); ++i) {
    if (!graph.nodes[i].fixed) free_index[i] = free_count++;
  }
  if (free_count == 0) return report;
  auto node_slot = [&](int id) {
    for (std::size_t i = 0; i < graph.nodes.size(); ++i)
      if (graph.nodes[i].id == id) return static_cast<int>(i);
    return -1;
  };

  std::vector<Matrix6d> weights(graph.edges.size());
  for (std::size_t e = 0; e < graph.edges.size(); ++e)
    weights[e] = info_sqrt(graph.edges[e].information);

  const int rows = 6 * static_cast<int>(graph.edges.size());
  const int cols = 6 * free_count;
  Eigen::MatrixXd jac(rows, cols);
  Eigen::VectorXd res(rows);

  auto posed = [&](const std::vector<Pose>& poses, int slot,
                   const Vector6d& delta) {
    return poses[slot].compose(from_tangent(TangentVector(delta)));
  };
  auto stack_residuals = [&](const std::vector<Pose>& poses,
                             Eigen::VectorXd& out) {
    for (std::size_t e = 0; e < graph.edges.size(); ++e) {
      const PoseGraphEdge& edge = graph.edges[e];
      int ia = node_slot(edge.from);
      int ib = node_slot(edge.to);
      out.segment<6>(6 * static_cast<int>(e)) =
          weights[e] *
          edge_residual(poses[ia], poses[ib], edge.measurement);
    }
  };

  std::vector<Pose> poses(graph.nodes.size());
  for (std::size_t i = 0; i < graph.nodes.size(); ++i)
    poses[i] = graph.nodes[i].pose;

  double cost = report.initial_cost;
  double lambda = 1e-6;
  const double h = 1e-6;
  Eigen::VectorXd trial_res(rows);
  for (int iter = 0; iter < cfg.pgo_max_iter; ++iter) {
    stack_residuals(poses, res);
    // Numerical Jacobian: central differences on each free endpoint.
    jac.setZero();
    for (std::size_t e = 0; e < graph.edges.size(); ++e) {
      const PoseGraphEdge& edge = graph.edges[e];
      int slots[2] = {node_slot(edge.from), node_slot(edge.to)};
      for (int side = 0; side < 2; ++side) {
        int slot = slots[side];
        int col0 = free_index[slot] >= 0 ? 6 * free_index[slot] : -1;
        if (col0 < 0) continue;
        for (int k = 0; k < 6; ++k) {
          Vector6d delta = Vector6d::Zero();
          delta(k) = h;
          Pose plus = posed(poses, slot, delta);
          delta(k) = -h;
          Pose minus = posed(poses, slot, delta);
          const Pose& a_plus = side == 0 ? plus : poses[slots[0]];
          const Pose& b_plus = side == 1 ? plus : poses[slots[1]];
          const Pose& a_minus = side == 0 ? minus : poses[slots[0]];
          const Pose& b_minus = side == 1 ? minus : poses[slots[1]];
          Vector6d dr = weights[e] * (edge_residual(a_plus, b_plus,
                                                    edge.measurement) -
                                      edge_residual(a_minus, b_minus,
                                                    edge.measurement));
          jac.block<6, 1>(6 * static_cast<int>(e), col0 + k) =
              dr / (2.0 * h);
        }
      }
    }

    Eigen::MatrixXd hess = jac.transpose() * jac;
    Eigen::VectorXd grad = jac.transpose() * res;
    bool accepted = false;
    for (int attempt = 0; attempt < 20; ++attempt) {
      Eigen::MatrixXd damped = hess;
      damped.diagonal() += lambda * hess.diagonal().cwiseMax(1e-12);
      Eigen::VectorXd step = damped.ldlt().solve(-grad);
      if (!step.allFinite()) {
        lambda *= 10.0;
        continue;
      }
      std::vector<Pose> trial = poses;
      for (std::size_t i = 0; i < graph.nodes.size(); ++i) {
        if (free_index[i] < 0) continue;
        trial[i] = posed(poses, static_cast<int>(i),
                         step.segment<6>(6 * free_index[i]));
      }
      stack_residuals(trial, trial_res);
      double trial_cost = trial_res.squaredNorm();
      if (trial_cost < cost) {
        poses = std::move(trial);
        double decrease = cost - trial_cost;
        cost = trial_cost;
        lambda = std::max(lambda * 0.3, 1e-12);
        accepted = true;
        report.iterations = iter + 1;
        if (decrease < cfg.pgo_rel_tol * std::max(cost, 1e-300)) iter =
            cfg.pgo_max_iter;  // converged
        break;
      }
      lambda *= 10.0;
    }
    if (!accepted) break;  // no damping level improves: at a minimum
  }

  for (std::size_t i = 0; i < graph.nodes.size(); ++i) {
    if (free_index[i] >= 0) graph.nodes[i].pose = poses[i];
  }
  report.final_cost = cost;
  return report;
}

std::vector<Pose> distribute_inner(const Submap& submap,
                                   const Pose& corrected_reference) {
  std::vector<Pose> out;
  out.reserve(submap.member_relative.size());
  for (const Pose& rel : submap.member_relative)
    out.push_back(corrected_reference.compose(rel));
  return out;
}

// ---------------------------------------------------------------------------
// Graph text format
// ---------------------------------------------------------------------------

namespace {

void write_pose(std::ostream& os, const Pose& pose) {
  Eigen::Matrix4d m = pose.matrix();
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 4; ++c) os << ' ' << m(r, c);
}

Pose read_pose(std::istream& is) {
  Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 4; ++c) is >> m(r, c);
  return Pose::from_matrix(m);
}

}  // namespace

void write_graph(std::ostream& os, const PoseGraph& graph) {
  std::ostream::fmtflags flags = os.flags();
  std::streamsize prec = os.precision();
  os.precision(17);
  for (const PoseGraphNode& n : graph.nodes) {
    os << "NODE " << n.id;
    write_pose(os, n.pose);
    os << '\n';
  }
  for (const PoseGraphEdge& e : graph.edges) {
    os << "EDGE " << e.from << ' ' << e.to;
    write_pose(os, e.measurement);
    for (int r = 0; r < 6; ++r)
      for (int c = r; c < 6; ++c) os << ' ' << e.information(r, c);
    os << '\n';
  }
  os.flags(flags);
  os.precision(prec);
}

PoseGraph read_graph(std::istream& is) {
  PoseGraph graph;
  std::string tag;
  while (is >> tag) {
    if (tag == "NODE") {
      PoseGraphNode n;
      is >> n.id;
      n.pose = read_pose(is);
      graph.nodes.push_back(n);
    } else if (tag == "EDGE") {
      PoseGraphEdge e;
      is >> e.from >> e.to;
      e.measurement = read_pose(is);
      for (int r = 0; r < 6; ++r) {
        for (int c = r; c < 6; ++c) {
          double v;
          is >> v;
          e.information(r, c) = v;
          e.information(c, r) = v;
        }
      }
      graph.edges.push_back(e);
    } else {
      throw BackendError("unknown graph record '" + tag + "'");
    }
  }
  if (!graph.nodes.empty()) graph.nodes.front().fixed = true;
  return graph;
}

// ---------------------------------------------------------------------------
// LoopCloser
// ---------------------------------------------------------------------------

LoopCloser::LoopCloser(const RunConfig& cfg) : cfg_(cfg) {}

double LoopCloser::effective_loop_radius() const {
  return cfg_.loop_radius + cfg_.loop_radius_growth * unoptimized_;
}

int LoopCloser::add_submap(Submap submap) {
  PoseGraphNode node;
  node.id = submap.id;
  node.fixed = graph_.nodes.empty();  // gauge: first submap anchors the graph

  if (graph_.nodes.empty()) {
    node.pose = submap.reference;
  } else {
    // Odometry edge to the predecessor. The measurement comes from the
    // odometry references (immutable); the initial estimate chains from
    // the predecessor's corrected pose so new nodes stay consistent with
    // past corrections.
    const Submap& prev = submaps_.back();
    PoseGraphEdge edge;
    edge.from = prev.id;
    edge.to = submap.id;
    edge.measurement = prev.reference.inverse().compose(submap.reference);
    Matrix6d info = submap.reference_information;
    if (info.isZero(0.0)) {
      info = Matrix6d::Identity();
    } else {
      // Approximate chained-odometry uncertainty: the reference frame's
      // registration information diluted by the member chain length.
      info = 0.5 * (info + info.transpose()) /
             std::max(1, prev.frame_count);
    }
    edge.information = info;
    edge.kind = EdgeKind::kAdjacent;
    node.pose = graph_.nodes.back().pose.compose(edge.measurement);
    graph_.edges.push_back(edge);
  }
  graph_.nodes.push_back(node);
  submaps_.push_back(std::move(submap));
  unoptimized_ += 1;

  const Submap& current = submaps_.back();
  std::vector<Eigen::Vector3d> positions;
  positions.reserve(submaps_.size());
  for (const Submap& s : submaps_)
    positions.push_back(graph_.find(s.id)->pose.translation());
  std::vector<int> candidates = find_loop_candidates(
      submaps_, current, effective_loop_radius(), positions);

  int accepted = 0;
  for (int cand_id : candidates) {
    const Submap* cand = nullptr;
    for (const Submap& s : submaps_)
      if (s.id == cand_id) cand = &s;
    if (!cand) continue;
    std::vector<VertexMatch> matches =
        match_ncc(*cand, current, cfg_.ncc_cos_min);
    if (matches.size() < 3) continue;
    std::vector<Eigen::Vector3d> src, dst;
    src.reserve(matches.size());
    dst.reserve(matches.size());
    for (const VertexMatch& m : matches) {
      dst.push_back(
          cand->vertices()[m.index_a].position.cast<double>());
      src.push_back(
          current.vertices()[m.index_b].position.cast<double>());
    }
    unsigned int seed =
        cfg_.seed + 1000003u * static_cast<unsigned int>(current.id) +
        static_cast<unsigned int>(cand_id);
    CoarseResult coarse = coarse_register(src, dst, cfg_, seed);
    if (!coarse.accepted) continue;
    std::optional<PoseGraphEdge> edge =
        verify_and_refine(*cand, current, coarse.transform, cfg_);
    if (!edge) continue;
    graph_.edges.push_back(*edge);
    accepted += 1;
  }

  if (accepted > 0) {
    optimize_graph(graph_, cfg_);
    optimizations_ += 1;
    unoptimized_ = 0;
  }
  return accepted;
}

std::vector<std::pair<int, Pose>> LoopCloser::corrected_submap_poses() const {
  std::vector<std::pair<int, Pose>> out;
  out.reserve(graph_.nodes.size());
  for (const PoseGraphNode& n : graph_.nodes) out.emplace_back(n.id, n.pose);
  return out;
}

std::vector<std::pair<int, Pose>> LoopCloser::corrected_frame_poses() const {
  std::vector<std::pair<int, Pose>> out;
  for (const Submap& s : submaps_) {
    const PoseGraphNode* node = graph_.find(s.id);
    if (!node) continue;
    std::vector<Pose> members = distribute_inner(s, node->pose);
    for (std::size_t i = 0; i < members.size(); ++i)
      out.emplace_back(s.member_ids[i], members[i]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// SlamPipeline
// ---------------------------------------------------------------------------

SlamPipeline::SlamPipeline(const RunConfig& cfg)
    : cfg_(cfg),
      closer_(cfg),
      snapshot_(std::make_shared<const TrajectorySnapshot>()) {
  worker_ = std::thread([this] { run(); });
}

SlamPipeline::~SlamPipeline() { finish(); }

void SlamPipeline::submit(Submap submap) {
  {
    std::lock_guard<std::mutex> lock(mutex_);
    if (stop_) throw BackendError("pipeline already finished");
    queue_.push_back(std::move(submap));
  }
  work_cv_.notify_one();
}

void SlamPipeline::drain() {
  std::unique_lock<std::mutex> lock(mutex_);
  idle_cv_.wait(lock, [this] { return queue_.empty() && !busy_; });
}

void SlamPipeline::finish() {
  {
    std::lock_guard<std::mutex> lock(mutex_);
    stop_ = true;
  }
  work_cv_.notify_all();
  if (worker_.joinable()) worker_.join();
}

std::shared_ptr<const TrajectorySnapshot> SlamPipeline::snapshot() const {
  std::lock_guard<std::mutex> lock(mutex_);
  return snapshot_;
}

void SlamPipeline::publish() {
  auto next = std::make_shared<TrajectorySnapshot>();
  {
    std::lock_guard<std::mutex> lock(mutex_);
    next->version = snapshot_->version + 1;
  }
  next->submap_poses = closer_.corrected_submap_poses();
  next->frame_poses = closer_.corrected_frame_poses();
  int loops = 0;
  for (const PoseGraphEdge& e : closer_.graph().edges)
    loops += e.kind == EdgeKind::kLoop ? 1 : 0;
  next->loop_edges = loops;
  next->optimizations = closer_.optimizations();
  std::lock_guard<std::mutex> lock(mutex_);
  snapshot_ = std::move(next);
}

void SlamPipeline::run() {
  for (;;) {
    Submap submap;
    {
      std::unique_lock<std::mutex> lock(mutex_);
      work_cv_.wait(lock, [this] { return stop_ || !queue_.empty(); });
      if (queue_.empty()) return;  // stop requested and drained
      submap = std::move(queue_.front());
      queue_.pop_front();
      busy_ = true;
    }
    closer_.add_submap(std::move(submap));
    publish();
    {
      std::lock_guard<std::mutex> lock(mutex_);
      busy_ = false;
    }
    idle_cv_.notify_all();
  }
}

}  // namespace lodo
