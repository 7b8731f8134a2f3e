#include "lodo/backend.hpp"

#include <Eigen/Dense>
#include <Eigen/Geometry>

#include <cmath>
#include <random>
#include <sstream>
#include <vector>

#include "doctest.h"
#include "oracles.hpp"
#include "scenes.hpp"

using lodo::BackendError;
using lodo::EdgeKind;
using lodo::FeatureClass;
using lodo::FeatureFrame;
using lodo::FrameSummary;
using lodo::LocalMap;
using lodo::LoopCloser;
using lodo::Matrix6d;
using lodo::Pose;
using lodo::PoseGraph;
using lodo::PoseGraphEdge;
using lodo::PoseGraphNode;
using lodo::RunConfig;
using lodo::SlamPipeline;
using lodo::Submap;
using lodo::SubmapBuilder;
using lodo::TangentVector;
using lodo::Vector6d;
using lodo::VertexMatch;

namespace {

constexpr double kDeg = 3.14159265358979323846 / 180.0;

FrameSummary make_summary(int id, const Pose& pose,
                          const Matrix6d& info = Matrix6d::Identity()) {
  FrameSummary s;
  s.frame_id = id;
  s.pose = pose;
  s.information = info;
  return s;
}

Pose yaw_pose(double x, double y, double yaw_rad) {
  return lodo::from_tangent(
      TangentVector(Eigen::Vector3d(x, y, 0.0),
                    Eigen::Vector3d(0.0, 0.0, yaw_rad)));
}

/// Back-end submap around manually provided local features; descriptors
/// recomputed so they stay 1:1 with the dense vertices.
Submap make_submap(int id, const Pose& reference, FeatureFrame features) {
  Submap s;
  s.id = id;
  s.reference = reference;
  s.features = std::move(features);
  s.features.vertex_ncc = lodo::encode_ncc(s.features, 3.0, 255.0, 30.0);
  s.member_ids = {100 + id};
  s.member_relative = {Pose()};
  s.frame_count = 1;
  s.reference_information = Matrix6d::Identity();
  return s;
}

Submap bare_submap(int id, const Eigen::Vector3d& position) {
  Submap s;
  s.id = id;
  s.reference = Pose(Eigen::Quaterniond::Identity(), position);
  return s;
}

double angular_distance(const Pose& a, const Pose& b) {
  return Eigen::AngleAxisd(a.quaternion().conjugate() * b.quaternion())
      .angle();
}

Matrix6d random_information(std::mt19937& rng, double scale = 1.0) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Matrix6d a;
  for (int r = 0; r < 6; ++r)
    for (int c = 0; c < 6; ++c) a(r, c) = u(rng);
  return scale * (a.transpose() * a + 1.5 * Matrix6d::Identity());
}

void check_psd(const Matrix6d& m) {
  CHECK((m - m.transpose()).norm() <= 1e-9 * (1.0 + m.norm()));
  Eigen::SelfAdjointEigenSolver<Matrix6d> es(m);
  CHECK(es.eigenvalues().minCoeff() >= -1e-9 * (1.0 + m.norm()));
}

}  // namespace

TEST_CASE("submap builder fires on the frame-count trigger") {
  RunConfig cfg;
  SubmapBuilder builder(cfg);
  LocalMap empty_map;
  for (int i = 0; i < 99; ++i) {
    auto spawned = builder.add_frame(make_summary(i, Pose()), empty_map);
    CHECK_FALSE(spawned.has_value());
  }
  CHECK(builder.frames_in_window() == 99);
  auto spawned = builder.add_frame(make_summary(99, Pose()), empty_map);
  REQUIRE(spawned.has_value());
  CHECK(spawned->id == 0);
  CHECK(spawned->frame_count == 100);
  CHECK(spawned->member_ids.size() == 100);
  CHECK(spawned->accumulated_translation == 0.0);
  CHECK(builder.frames_in_window() == 0);

  // The next frame opens a fresh window with the next id.
  auto again = builder.add_frame(make_summary(100, Pose()), empty_map);
  CHECK_FALSE(again.has_value());
  CHECK(builder.frames_in_window() == 1);
}

TEST_CASE("submap builder fires on the translation trigger") {
  RunConfig cfg;
  SubmapBuilder builder(cfg);
  LocalMap empty_map;
  // 0.8 m steps: 31 m of travel fits in 40 frames and crosses the 30 m
  // trigger before the frame-count trigger can fire.
  std::optional<Submap> spawned;
  int spawn_frame = -1;
  for (int i = 0; i < 40 && !spawned; ++i) {
    spawned = builder.add_frame(
        make_summary(i, Pose(Eigen::Quaterniond::Identity(),
                             Eigen::Vector3d(0.8 * i, 0.0, 0.0))),
        empty_map);
    if (spawned) spawn_frame = i;
  }
  REQUIRE(spawned.has_value());
  CHECK(spawn_frame < 40);
  CHECK(spawned->frame_count < cfg.submap_max_frames);
  CHECK(spawned->accumulated_translation > cfg.submap_max_translation);
}

TEST_CASE("submap builder fires on the rotation trigger") {
  RunConfig cfg;
  SubmapBuilder builder(cfg);
  LocalMap empty_map;
  std::optional<Submap> spawned;
  for (int i = 0; i < 30 && !spawned; ++i)
    spawned = builder.add_frame(
        make_summary(i, yaw_pose(0.0, 0.0, 10.0 * kDeg * i)), empty_map);
  REQUIRE(spawned.has_value());
  CHECK(spawned->accumulated_rotation > 90.0 * kDeg);
  CHECK(spawned->accumulated_translation < 1e-12);
}

TEST_CASE("submap snapshot re-expresses the local map in the reference "
          "frame") {
  RunConfig cfg;
  FeatureFrame local = scenes::box_world();
  Pose p0 = yaw_pose(12.0, -3.0, 25.0 * kDeg);
  Pose p1 = yaw_pose(12.6, -2.8, 26.0 * kDeg);
  LocalMap map;
  lodo::update_map(map, local, p0, 1e6, 0);

  SubmapBuilder builder(cfg);
  CHECK_FALSE(builder.add_frame(make_summary(5, p0), map).has_value());
  CHECK_FALSE(builder.add_frame(make_summary(6, p1), map).has_value());
  auto submap = builder.flush(map);
  REQUIRE(submap.has_value());
  CHECK_FALSE(builder.flush(map).has_value());  // window already closed

  CHECK(submap->member_ids == std::vector<int>{5, 6});
  CHECK((submap->reference.translation() - p0.translation()).norm() == 0.0);
  CHECK((submap->member_relative[0].translation()).norm() < 1e-12);
  Pose rel1 = p0.inverse().compose(p1);
  CHECK((submap->member_relative[1].translation() - rel1.translation())
            .norm() < 1e-12);

  // Mapping the world-frame map back through the reference recovers the
  // original local geometry (float storage costs a little precision).
  for (int c = 0; c < lodo::kClassCount; ++c) {
    REQUIRE(submap->features.dense[c].size() == local.dense[c].size());
    for (std::size_t i = 0; i < local.dense[c].size(); ++i) {
      Eigen::Vector3f expect = local.dense[c][i].position;
      Eigen::Vector3f got = submap->features.dense[c][i].position;
      CHECK((expect - got).norm() < 1e-4f);
    }
    CHECK(submap->features.sparse[c].size() ==
          submap->features.dense[c].size());
  }
  CHECK(submap->features.vertex_ncc.size() ==
        submap->features.dense_of(FeatureClass::kVertex).size());
}

TEST_CASE("loop candidates: straight line leaves only the excluded "
          "adjacent submap in range") {
  std::vector<Submap> submaps = {bare_submap(0, {0, 0, 0}),
                                 bare_submap(1, {30, 0, 0})};
  Submap current = bare_submap(2, {60, 0, 0});
  CHECK(lodo::find_loop_candidates(submaps, current, 50.0).empty());
}

TEST_CASE("loop candidates: returning to the start exposes the first "
          "submap") {
  std::vector<Submap> submaps = {
      bare_submap(0, {0, 0, 0}), bare_submap(1, {30, 0, 0}),
      bare_submap(2, {30, 30, 0}), bare_submap(3, {0, 30, 0})};
  Submap current = bare_submap(4, {0.5, 0.0, 0.0});

  std::vector<int> ids = lodo::find_loop_candidates(submaps, current, 50.0);
  REQUIRE_FALSE(ids.empty());
  CHECK(std::find(ids.begin(), ids.end(), 0) != ids.end());
  CHECK(std::find(ids.begin(), ids.end(), 3) == ids.end());  // adjacent

  // A tight radius keeps only the overlapping start submap.
  CHECK(lodo::find_loop_candidates(submaps, current, 20.0) ==
        std::vector<int>{0});
  // Zero radius finds nothing even at zero distance.
  Submap exact = bare_submap(4, {0, 0, 0});
  CHECK(lodo::find_loop_candidates(submaps, exact, 0.0).empty());
}

TEST_CASE("loop candidates honor corrected position overrides") {
  std::vector<Submap> submaps = {bare_submap(0, {200, 0, 0}),
                                 bare_submap(1, {100, 0, 0}),
                                 bare_submap(2, {0, 0, 0})};
  Submap current = submaps.back();
  // Stored references put submap 0 far away...
  CHECK(lodo::find_loop_candidates(submaps, current, 50.0).empty());
  // ...but the corrected estimates bring it within range.
  std::vector<Eigen::Vector3d> corrected = {
      {10, 0, 0}, {100, 0, 0}, {0, 0, 0}};
  CHECK(lodo::find_loop_candidates(submaps, current, 50.0, corrected) ==
        std::vector<int>{0});
}

namespace {

Submap descriptor_submap(int id,
                         const std::vector<Eigen::Matrix<float, 6, 1>>& vs) {
  Submap s;
  s.id = id;
  auto& verts = s.features.dense[static_cast<int>(FeatureClass::kVertex)];
  for (std::size_t i = 0; i < vs.size(); ++i) {
    lodo::FeaturePoint fp;
    fp.position = Eigen::Vector3f(static_cast<float>(i), 0.0f, 0.0f);
    verts.push_back(fp);
    lodo::NccDescriptor d;
    d.v = vs[i];
    s.features.vertex_ncc.push_back(d);
  }
  s.features.sparse[static_cast<int>(FeatureClass::kVertex)] = verts;
  return s;
}

}  // namespace

TEST_CASE("descriptor matching: identical submaps pair every vertex with "
          "itself") {
  std::vector<Eigen::Matrix<float, 6, 1>> vs;
  std::mt19937 rng(5);
  std::uniform_real_distribution<float> u(0.1f, 1.0f);
  for (int i = 0; i < 6; ++i) {
    Eigen::Matrix<float, 6, 1> v;
    for (int k = 0; k < 6; ++k) v(k) = u(rng);
    vs.push_back(v);
  }
  Submap a = descriptor_submap(0, vs);
  Submap b = descriptor_submap(1, vs);
  std::vector<VertexMatch> matches = lodo::match_ncc(a, b, 0.90);
  REQUIRE(matches.size() == vs.size());
  for (const VertexMatch& m : matches) {
    CHECK(m.index_a == m.index_b);
    CHECK(m.similarity == doctest::Approx(1.0).epsilon(1e-6));
  }
}

TEST_CASE("descriptor matching: orthogonal descriptors never pair") {
  std::vector<Eigen::Matrix<float, 6, 1>> va, vb;
  for (int i = 0; i < 3; ++i) {
    Eigen::Matrix<float, 6, 1> x = Eigen::Matrix<float, 6, 1>::Zero();
    x(i) = 1.0f;
    va.push_back(x);
    Eigen::Matrix<float, 6, 1> y = Eigen::Matrix<float, 6, 1>::Zero();
    y(i + 3) = 1.0f;
    vb.push_back(y);
  }
  CHECK(lodo::match_ncc(descriptor_submap(0, va), descriptor_submap(1, vb),
                        0.90)
            .empty());
}

TEST_CASE("descriptor matching: true pairs survive random distractors") {
  std::mt19937 rng(11);
  std::uniform_real_distribution<float> u(0.05f, 1.0f);
  std::normal_distribution<float> jitter(0.0f, 0.004f);
  auto random_v = [&] {
    Eigen::Matrix<float, 6, 1> v;
    for (int k = 0; k < 6; ++k) v(k) = u(rng);
    return v;
  };

  std::vector<Eigen::Matrix<float, 6, 1>> va, vb;
  for (int i = 0; i < 20; ++i) {  // true pairs: near-identical descriptors
    Eigen::Matrix<float, 6, 1> v = random_v();
    va.push_back(v);
    Eigen::Matrix<float, 6, 1> w = v;
    for (int k = 0; k < 6; ++k) w(k) = std::max(0.0f, w(k) + jitter(rng));
    vb.push_back(w);
  }
  for (int i = 0; i < 20; ++i) {  // distractors on both sides
    va.push_back(random_v());
    vb.push_back(random_v());
  }

  std::vector<VertexMatch> matches = lodo::match_ncc(
      descriptor_submap(0, va), descriptor_submap(1, vb), 0.90);
  int recovered = 0;
  for (const VertexMatch& m : matches)
    if (m.index_a == m.index_b && m.index_a < 20) ++recovered;
  CHECK(recovered >= 15);
}

TEST_CASE("descriptor matching requires three descriptors per side") {
  std::vector<Eigen::Matrix<float, 6, 1>> two(
      2, Eigen::Matrix<float, 6, 1>::Ones());
  std::vector<Eigen::Matrix<float, 6, 1>> five(
      5, Eigen::Matrix<float, 6, 1>::Ones());
  CHECK(lodo::match_ncc(descriptor_submap(0, two), descriptor_submap(1, five),
                        0.5)
            .empty());
  CHECK(lodo::match_ncc(descriptor_submap(0, five), descriptor_submap(1, two),
                        0.5)
            .empty());
}

TEST_CASE("coarse alignment recovers an exact transform and matches the "
          "closed-form reference") {
  RunConfig cfg;
  std::mt19937 rng(3);
  std::uniform_real_distribution<double> u(-10.0, 10.0);
  Pose truth = lodo::from_tangent(TangentVector(
      Eigen::Vector3d(4.0, -2.0, 1.0), Eigen::Vector3d(0.2, -0.1, 0.3)));

  std::vector<Eigen::Vector3d> src, dst;
  for (int i = 0; i < 30; ++i) {
    Eigen::Vector3d p(u(rng), u(rng), u(rng));
    src.push_back(p);
    dst.push_back(truth.apply(p));
  }
  lodo::CoarseResult res = lodo::coarse_register(src, dst, cfg, 99);
  REQUIRE(res.accepted);
  CHECK(res.inliers == 30);
  CHECK((res.transform.translation() - truth.translation()).norm() < 1e-6);
  CHECK(angular_distance(res.transform, truth) < 1e-6);

  // Independent closed-form reference over all pairs.
  Eigen::MatrixXd ms(3, 30), md(3, 30);
  for (int i = 0; i < 30; ++i) {
    ms.col(i) = src[i];
    md.col(i) = dst[i];
  }
  Eigen::Matrix4d ref = Eigen::umeyama(ms, md, false);
  CHECK((res.transform.matrix() - ref).norm() < 1e-9);
}

TEST_CASE("coarse alignment survives seventy percent outliers") {
  RunConfig cfg;
  std::mt19937 rng(123);
  std::uniform_real_distribution<double> u(-20.0, 20.0);
  Pose truth = lodo::from_tangent(TangentVector(
      Eigen::Vector3d(-3.0, 5.0, 2.0), Eigen::Vector3d(-0.15, 0.25, 0.4)));

  std::vector<Eigen::Vector3d> src, dst;
  for (int i = 0; i < 30; ++i) {  // inliers
    Eigen::Vector3d p(u(rng), u(rng), u(rng));
    src.push_back(p);
    dst.push_back(truth.apply(p));
  }
  for (int i = 0; i < 70; ++i) {  // outliers: unrelated pairs
    src.emplace_back(u(rng), u(rng), u(rng));
    dst.emplace_back(u(rng), u(rng), u(rng));
  }
  lodo::CoarseResult res = lodo::coarse_register(src, dst, cfg, 2024);
  REQUIRE(res.accepted);
  CHECK(res.inliers >= 30);
  CHECK((res.transform.translation() - truth.translation()).norm() < 0.1);
  CHECK(angular_distance(res.transform, truth) < 1.0 * kDeg);
}

TEST_CASE("coarse alignment rejects all-outlier and collinear input") {
  RunConfig cfg;
  std::mt19937 rng(77);
  std::uniform_real_distribution<double> u(-20.0, 20.0);
  std::vector<Eigen::Vector3d> src, dst;
  for (int i = 0; i < 50; ++i) {
    src.emplace_back(u(rng), u(rng), u(rng));
    dst.emplace_back(u(rng), u(rng), u(rng));
  }
  CHECK_FALSE(lodo::coarse_register(src, dst, cfg, 7).accepted);

  // Collinear points leave a free rotation: every 3-point sample is
  // degenerate and must be skipped.
  src.clear();
  dst.clear();
  for (int i = 0; i < 12; ++i) {
    Eigen::Vector3d p(0.5 * i, 0.0, 0.0);
    src.push_back(p);
    dst.push_back(p + Eigen::Vector3d(1.0, 2.0, 3.0));
  }
  CHECK_FALSE(lodo::coarse_register(src, dst, cfg, 7).accepted);
}

TEST_CASE("loop verification accepts an overlapping pair and reports the "
          "refined relative pose") {
  RunConfig cfg;
  cfg.weight_residual_on = false;  // noiseless synthetic features
  Submap a = make_submap(0, Pose(), scenes::box_world());
  Pose t_ab = lodo::from_tangent(TangentVector(
      Eigen::Vector3d(0.5, 0.0, 0.0), Eigen::Vector3d::Zero()));
  Submap b =
      make_submap(1, Pose(), lodo::transform_frame(a.features,
                                                   t_ab.inverse()));

  // Start the refinement from a slightly wrong coarse pose.
  Pose coarse = lodo::from_tangent(TangentVector(
      Eigen::Vector3d(0.51, 0.01, -0.01), Eigen::Vector3d(0, 0, 0.002)));
  auto edge = lodo::verify_and_refine(a, b, coarse, cfg);
  REQUIRE(edge.has_value());
  CHECK(edge->from == 0);
  CHECK(edge->to == 1);
  CHECK(edge->kind == EdgeKind::kLoop);
  CHECK((edge->measurement.translation() - t_ab.translation()).norm() <
        1e-3);
  CHECK(angular_distance(edge->measurement, t_ab) < 1e-4);
  check_psd(edge->information);
}

TEST_CASE("loop verification rejects a mostly non-overlapping pair") {
  RunConfig cfg;
  cfg.weight_residual_on = false;
  FeatureFrame base = scenes::box_world();

  // b shares only a fifth of a's geometry; the rest lives 150 m away, so
  // the refined pose explains too little of b.
  FeatureFrame partial;
  Pose shift(Eigen::Quaterniond::Identity(), Eigen::Vector3d(150, 150, 0));
  for (int c = 0; c < lodo::kClassCount; ++c) {
    const auto& pts = base.dense[c];
    for (std::size_t i = 0; i < pts.size(); ++i) {
      lodo::FeaturePoint fp = i % 5 == 0
                                  ? pts[i]
                                  : lodo::transform_feature(pts[i], shift);
      partial.dense[c].push_back(fp);
    }
    partial.sparse[c] = partial.dense[c];
  }
  Submap a = make_submap(0, Pose(), base);
  Submap b = make_submap(1, Pose(), partial);
  CHECK_FALSE(lodo::verify_and_refine(a, b, Pose(), cfg).has_value());
}

namespace {

/// Four-corner square graph with drift on the last odometry edge and one
/// exact loop-closure edge back to the start.
PoseGraph square_graph(double info_scale) {
  std::vector<Pose> truth = {
      yaw_pose(0, 0, 0.0), yaw_pose(10, 0, 90.0 * kDeg),
      yaw_pose(10, 10, 180.0 * kDeg), yaw_pose(0, 10, 270.0 * kDeg)};
  Pose drift = lodo::from_tangent(TangentVector(
      Eigen::Vector3d(0.2, -0.1, 0.05), Eigen::Vector3d(0.01, -0.02, 0.03)));

  std::mt19937 rng(41);
  PoseGraph g;
  std::vector<Pose> measured;
  for (int i = 0; i < 3; ++i) {
    Pose rel = truth[i].inverse().compose(truth[i + 1]);
    if (i == 2) rel = rel.compose(drift);
    measured.push_back(rel);
  }

  std::vector<Pose> estimates = {truth[0]};
  for (int i = 0; i < 3; ++i)
    estimates.push_back(estimates.back().compose(measured[i]));

  for (int i = 0; i < 4; ++i)
    g.nodes.push_back({i, estimates[i], i == 0});
  for (int i = 0; i < 3; ++i)
    g.edges.push_back({i, i + 1, measured[i],
                       random_information(rng, info_scale),
                       EdgeKind::kAdjacent});
  g.edges.push_back({3, 0, truth[3].inverse().compose(truth[0]),
                     random_information(rng, info_scale), EdgeKind::kLoop});
  return g;
}

}  // namespace

TEST_CASE("graph optimization leaves a consistent chain untouched") {
  RunConfig cfg;
  std::mt19937 rng(17);
  PoseGraph g;
  std::vector<Pose> poses;
  for (int i = 0; i < 5; ++i)
    poses.push_back(yaw_pose(3.0 * i, 0.5 * i, 12.0 * kDeg * i));
  for (int i = 0; i < 5; ++i) g.nodes.push_back({i, poses[i], i == 0});
  for (int i = 0; i < 4; ++i)
    g.edges.push_back({i, i + 1, poses[i].inverse().compose(poses[i + 1]),
                       random_information(rng), EdgeKind::kAdjacent});

  PoseGraph before = g;
  lodo::OptimizeReport report = lodo::optimize_graph(g, cfg);
  CHECK(report.final_cost <= report.initial_cost);
  CHECK(report.initial_cost < 1e-18);
  for (int i = 0; i < 5; ++i) {
    CHECK((g.nodes[i].pose.translation() -
           before.nodes[i].pose.translation())
              .norm() < 1e-9);
    CHECK(angular_distance(g.nodes[i].pose, before.nodes[i].pose) < 1e-9);
  }
  // The gauge node is bit-identical, not merely close.
  CHECK(g.nodes[0].pose.translation() == before.nodes[0].pose.translation());
  CHECK(g.nodes[0].pose.quaternion().coeffs() ==
        before.nodes[0].pose.quaternion().coeffs());
}

TEST_CASE("graph optimization matches a dense brute-force minimizer") {
  RunConfig cfg;
  PoseGraph g = square_graph(1.0);
  PoseGraph reference = g;

  lodo::OptimizeReport report = lodo::optimize_graph(g, cfg);
  CHECK(report.final_cost <= report.initial_cost);
  CHECK(report.final_cost < report.initial_cost);  // drift gets distributed

  std::vector<Pose> oracle = oracles::minimize_graph(reference);
  for (int i = 0; i < 4; ++i) {
    CHECK((g.nodes[i].pose.translation() - oracle[i].translation()).norm() <
          1e-6);
    CHECK(angular_distance(g.nodes[i].pose, oracle[i]) < 1e-6);
  }
  // Both land on (numerically) the same objective value.
  PoseGraph at_oracle = reference;
  for (int i = 0; i < 4; ++i) at_oracle.nodes[i].pose = oracle[i];
  CHECK(lodo::graph_cost(g) ==
        doctest::Approx(lodo::graph_cost(at_oracle)).epsilon(1e-9));
  // The independent residual formulation agrees with the library's cost.
  CHECK(oracles::graph_objective(g) ==
        doctest::Approx(lodo::graph_cost(g)).epsilon(1e-12));
}

TEST_CASE("scaling every information matrix leaves the optimum unchanged") {
  RunConfig cfg;
  PoseGraph g1 = square_graph(1.0);
  PoseGraph g2 = g1;
  for (PoseGraphEdge& e : g2.edges) e.information *= 37.5;

  lodo::optimize_graph(g1, cfg);
  lodo::optimize_graph(g2, cfg);
  for (int i = 0; i < 4; ++i) {
    CHECK((g1.nodes[i].pose.translation() - g2.nodes[i].pose.translation())
              .norm() < 1e-9);
    CHECK(angular_distance(g1.nodes[i].pose, g2.nodes[i].pose) < 1e-9);
  }
}

TEST_CASE("graph optimization validates its input") {
  RunConfig cfg;

  PoseGraph disconnected;
  for (int id : {0, 1, 7, 8})
    disconnected.nodes.push_back({id, Pose(), id == 0});
  disconnected.edges.push_back({0, 1, Pose(), Matrix6d::Identity(),
                                EdgeKind::kAdjacent});
  disconnected.edges.push_back({7, 8, Pose(), Matrix6d::Identity(),
                                EdgeKind::kAdjacent});
  CHECK_THROWS_WITH_AS(lodo::optimize_graph(disconnected, cfg),
                       doctest::Contains("disconnected"), BackendError);
  CHECK_THROWS_WITH_AS(lodo::optimize_graph(disconnected, cfg),
                       doctest::Contains("[7 8]"), BackendError);

  PoseGraph unfixed;
  unfixed.nodes.push_back({0, Pose(), false});
  unfixed.nodes.push_back({1, Pose(), false});
  unfixed.edges.push_back({0, 1, Pose(), Matrix6d::Identity(),
                           EdgeKind::kAdjacent});
  CHECK_THROWS_WITH_AS(lodo::optimize_graph(unfixed, cfg),
                       doctest::Contains("exactly one fixed"), BackendError);
  unfixed.nodes[0].fixed = true;
  unfixed.nodes[1].fixed = true;
  CHECK_THROWS_AS(lodo::optimize_graph(unfixed, cfg), BackendError);

  PoseGraph self_loop;
  self_loop.nodes.push_back({0, Pose(), true});
  self_loop.edges.push_back({0, 0, Pose(), Matrix6d::Identity(),
                             EdgeKind::kLoop});
  CHECK_THROWS_AS(lodo::optimize_graph(self_loop, cfg), BackendError);
}

TEST_CASE("inner distribution follows the corrected reference rigidly") {
  Submap s;
  s.id = 0;
  s.reference = yaw_pose(5.0, -1.0, 30.0 * kDeg);
  s.member_ids = {10, 11, 12};
  s.member_relative = {Pose(),
                       yaw_pose(0.5, 0.0, 2.0 * kDeg),
                       yaw_pose(1.0, 0.1, 4.0 * kDeg)};
  s.frame_count = 3;

  // Reference unchanged: members reproduce the stored world poses.
  std::vector<Pose> same = lodo::distribute_inner(s, s.reference);
  for (int i = 0; i < 3; ++i) {
    Pose expect = s.reference.compose(s.member_relative[i]);
    CHECK((same[i].translation() - expect.translation()).norm() < 1e-12);
    CHECK(angular_distance(same[i], expect) < 1e-12);
  }

  // A rotated reference rotates every member rigidly with it.
  Pose rot = yaw_pose(0.0, 0.0, 1.0 * kDeg);
  std::vector<Pose> moved =
      lodo::distribute_inner(s, rot.compose(s.reference));
  for (int i = 0; i < 3; ++i) {
    Pose expect = rot.compose(same[i]);
    CHECK((moved[i].translation() - expect.translation()).norm() < 1e-12);
    CHECK(angular_distance(moved[i], expect) < 1e-12);
  }
}

TEST_CASE("inner distribution equals optimizing the exactly-constrained "
          "chain") {
  RunConfig cfg;
  Submap s;
  s.id = 0;
  s.reference = yaw_pose(2.0, 1.0, 15.0 * kDeg);
  s.member_ids = {0, 1, 2, 3};
  s.member_relative = {Pose(), yaw_pose(0.4, 0.05, 3.0 * kDeg),
                       yaw_pose(0.8, 0.0, 5.0 * kDeg),
                       yaw_pose(1.3, -0.1, 9.0 * kDeg)};
  s.frame_count = 4;
  Pose corrected = yaw_pose(2.3, 0.8, 17.0 * kDeg);

  std::vector<Pose> direct = lodo::distribute_inner(s, corrected);

  PoseGraph g;
  for (int i = 0; i < 4; ++i) {
    // Free members start from the stale (uncorrected) world poses.
    Pose init = i == 0 ? corrected
                       : s.reference.compose(s.member_relative[i]);
    g.nodes.push_back({i, init, i == 0});
  }
  for (int i = 0; i < 3; ++i) {
    Pose meas =
        s.member_relative[i].inverse().compose(s.member_relative[i + 1]);
    g.edges.push_back({i, i + 1, meas, Matrix6d::Identity(),
                       EdgeKind::kAdjacent});
  }
  lodo::optimize_graph(g, cfg);
  for (int i = 0; i < 4; ++i) {
    CHECK((g.nodes[i].pose.translation() - direct[i].translation()).norm() <
          1e-9);
    CHECK(angular_distance(g.nodes[i].pose, direct[i]) < 1e-9);
  }
}

TEST_CASE("graph dump round-trips and uses the documented record layout") {
  PoseGraph g = square_graph(1.0);
  std::ostringstream os;
  lodo::write_graph(os, g);
  std::string text = os.str();

  // One line per record; NODE lines carry 14 tokens, EDGE lines 36.
  std::istringstream lines(text);
  std::string line;
  int nodes = 0, edges = 0;
  while (std::getline(lines, line)) {
    std::istringstream ls(line);
    std::vector<std::string> tokens;
    std::string tok;
    while (ls >> tok) tokens.push_back(tok);
    if (tokens[0] == "NODE") {
      CHECK(tokens.size() == 14);
      ++nodes;
    } else {
      REQUIRE(tokens[0] == "EDGE");
      CHECK(tokens.size() == 36);
      ++edges;
    }
  }
  CHECK(nodes == 4);
  CHECK(edges == 4);

  std::istringstream is(text);
  PoseGraph back = lodo::read_graph(is);
  REQUIRE(back.nodes.size() == g.nodes.size());
  REQUIRE(back.edges.size() == g.edges.size());
  for (std::size_t i = 0; i < g.nodes.size(); ++i) {
    CHECK(back.nodes[i].id == g.nodes[i].id);
    CHECK((back.nodes[i].pose.matrix() - g.nodes[i].pose.matrix()).norm() <
          1e-12);
  }
  for (std::size_t e = 0; e < g.edges.size(); ++e) {
    CHECK(back.edges[e].from == g.edges[e].from);
    CHECK(back.edges[e].to == g.edges[e].to);
    CHECK((back.edges[e].measurement.matrix() -
           g.edges[e].measurement.matrix())
              .norm() < 1e-12);
    CHECK((back.edges[e].information - g.edges[e].information).norm() <
          1e-12 * (1.0 + g.edges[e].information.norm()));
    CHECK(back.edges[e].information ==
          back.edges[e].information.transpose().eval());
  }

  // Spot-check the exact layout of a simple node record.
  PoseGraph tiny;
  tiny.nodes.push_back(
      {7, Pose(Eigen::Quaterniond::Identity(), {1.5, 0, 0}), true});
  std::ostringstream tiny_os;
  lodo::write_graph(tiny_os, tiny);
  CHECK(tiny_os.str() == "NODE 7 1 0 0 1.5 0 1 0 0 0 0 1 0\n");
}

namespace {

struct SquareRun {
  std::vector<Submap> submaps;
  std::vector<Pose> truth;
  std::vector<Pose> drifted;
};

/// Square course revisiting its start: distinct box worlds along the way,
/// the same world at the first and last stop, and odometry references
/// accumulating a fixed per-step drift.
SquareRun square_course() {
  SquareRun run;
  std::vector<Eigen::Vector2d> corners = {
      {0, 0}, {20, 0}, {40, 0}, {40, 20}, {40, 40},
      {20, 40}, {0, 40}, {0, 20}};
  for (const auto& c : corners)
    run.truth.push_back(yaw_pose(c.x(), c.y(), 0.0));
  run.truth.push_back(yaw_pose(1.0, 0.5, 0.05));  // near the start again

  Pose step_drift = lodo::from_tangent(TangentVector(
      Eigen::Vector3d(0.15, -0.1, 0.05),
      Eigen::Vector3d(0.004, -0.003, 0.006)));

  run.drifted.push_back(run.truth[0]);
  for (std::size_t i = 1; i < run.truth.size(); ++i) {
    Pose rel = run.truth[i - 1].inverse().compose(run.truth[i]);
    run.drifted.push_back(
        run.drifted.back().compose(rel.compose(step_drift)));
  }

  scenes::BoxWorldOptions shared;
  shared.per_class = 40;
  shared.seed = 7;
  FeatureFrame world = scenes::box_world(shared);

  for (std::size_t i = 0; i < run.truth.size(); ++i) {
    FeatureFrame local;
    if (i == 0) {
      local = world;
    } else if (i + 1 == run.truth.size()) {
      // Same place as the start, seen from the (slightly offset) end pose.
      local = lodo::transform_frame(world, run.truth[i].inverse());
    } else {
      scenes::BoxWorldOptions opt;
      opt.per_class = 40;
      opt.half = 6.0 + 0.4 * static_cast<double>(i);
      opt.wall_height = 4.0 + 0.3 * static_cast<double>(i);
      opt.seed = 100 + static_cast<unsigned>(i);
      local = scenes::box_world(opt);
    }
    run.submaps.push_back(
        make_submap(static_cast<int>(i), run.drifted[i], std::move(local)));
  }
  return run;
}

}  // namespace

TEST_CASE("loop pipeline closes a drifted square and repairs the endpoint") {
  RunConfig cfg;
  cfg.weight_residual_on = false;  // noiseless synthetic submaps
  SquareRun run = square_course();

  double pre_err = (run.drifted.back().translation() -
                    run.truth.back().translation())
                       .norm();
  REQUIRE(pre_err > 0.5);  // the claim below must be non-vacuous

  LoopCloser closer(cfg);
  int loops = 0;
  for (const Submap& s : run.submaps) loops += closer.add_submap(s);
  CHECK(loops >= 1);
  CHECK(closer.optimizations() >= 1);

  const PoseGraph& g = closer.graph();
  double post_err = (g.nodes.back().pose.translation() -
                     run.truth.back().translation())
                        .norm();
  CHECK(post_err <= 0.2 * pre_err);

  // The gauge submap is bit-identical to its odometry pose.
  CHECK(g.nodes.front().pose.translation() ==
        run.drifted.front().translation());
  CHECK(g.nodes.front().pose.quaternion().coeffs() ==
        run.drifted.front().quaternion().coeffs());

  // Information matrices stay symmetric PSD through the pipeline.
  for (const PoseGraphEdge& e : g.edges) check_psd(e.information);

  // Corrected member poses follow their submap references.
  auto frames = closer.corrected_frame_poses();
  REQUIRE(frames.size() == run.submaps.size());
  CHECK(frames.front().first == 100);
  CHECK((frames.back().second.translation() -
         g.nodes.back().pose.translation())
            .norm() < 1e-12);
}

TEST_CASE("async pipeline publishes immutable snapshots matching the "
          "synchronous core") {
  RunConfig cfg;
  cfg.weight_residual_on = false;
  SquareRun run = square_course();

  LoopCloser sync(cfg);
  for (const Submap& s : run.submaps) sync.add_submap(s);

  SlamPipeline pipeline(cfg);
  auto initial = pipeline.snapshot();
  CHECK(initial->version == 0);
  CHECK(initial->frame_poses.empty());

  for (const Submap& s : run.submaps) pipeline.submit(s);
  pipeline.drain();

  auto done = pipeline.snapshot();
  CHECK(done->version == static_cast<std::int64_t>(run.submaps.size()));
  CHECK(done->loop_edges >= 1);
  CHECK(done->optimizations == sync.optimizations());

  // The old snapshot is untouched by later publications.
  CHECK(initial->version == 0);
  CHECK(initial->frame_poses.empty());

  // Same inputs, same seeds: the async result equals the synchronous one
  // exactly.
  auto sync_frames = sync.corrected_frame_poses();
  REQUIRE(done->frame_poses.size() == sync_frames.size());
  for (std::size_t i = 0; i < sync_frames.size(); ++i) {
    CHECK(done->frame_poses[i].first == sync_frames[i].first);
    CHECK(done->frame_poses[i].second.translation() ==
          sync_frames[i].second.translation());
    CHECK(done->frame_poses[i].second.quaternion().coeffs() ==
          sync_frames[i].second.quaternion().coeffs());
  }

  pipeline.finish();
  CHECK_THROWS_AS(pipeline.submit(run.submaps.front()), BackendError);
}
