#include <doctest.h>

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>

#include "lodo/config.hpp"
#include "lodo/io.hpp"

using lodo::IoError;
using lodo::PointCloud;
using lodo::Pose;

namespace {

namespace fs = std::filesystem;

/// Unique file in the system temp dir, removed on destruction.
struct TempFile {
  fs::path path;
  explicit TempFile(const std::string& name) {
    path = fs::temp_directory_path() / ("lodo_test_" + name);
  }
  ~TempFile() {
    std::error_code ec;
    fs::remove(path, ec);
  }
  std::string str() const { return path.string(); }
};

void write_bytes(const std::string& path, const void* data, std::size_t n) {
  std::ofstream out(path, std::ios::binary);
  out.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  out << text;
}

}  // namespace

TEST_CASE("kitti bin: two points with exact bit patterns") {
  float raw[8] = {1.5f, -2.25f, 0.125f, 0.5f, 100.0f, 0.0f, -7.0f, 0.99f};
  TempFile f("two_points.bin");
  write_bytes(f.str(), raw, sizeof(raw));

  PointCloud cloud = lodo::read_kitti_bin(f.str());
  REQUIRE(cloud.size() == 2);
  CHECK(cloud.points[0].position.x() == 1.5f);
  CHECK(cloud.points[0].position.y() == -2.25f);
  CHECK(cloud.points[0].position.z() == 0.125f);
  CHECK(cloud.points[0].intensity == 0.5f);
  CHECK(cloud.points[1].position.x() == 100.0f);
  CHECK(cloud.points[1].intensity == 0.99f);
  CHECK_FALSE(cloud.has_timestamps);
}

TEST_CASE("kitti bin: empty file gives empty cloud") {
  TempFile f("empty.bin");
  write_bytes(f.str(), "", 0);
  CHECK(lodo::read_kitti_bin(f.str()).empty());
}

TEST_CASE("kitti bin: bad sizes and missing files rejected") {
  TempFile f("bad.bin");
  char junk[10] = {};
  write_bytes(f.str(), junk, sizeof(junk));
  CHECK_THROWS_AS(lodo::read_kitti_bin(f.str()), IoError);
  CHECK_THROWS_AS(lodo::read_kitti_bin("/nonexistent/file.bin"), IoError);
}

TEST_CASE("kitti bin: write-read round trip is bit exact") {
  std::mt19937 rng(99);
  std::uniform_real_distribution<float> u(-100.0f, 100.0f);
  PointCloud cloud;
  for (int i = 0; i < 1000; ++i)
    cloud.points.emplace_back(u(rng), u(rng), u(rng), std::abs(u(rng)));

  TempFile f("roundtrip.bin");
  lodo::write_kitti_bin(cloud, f.str());
  PointCloud back = lodo::read_kitti_bin(f.str());
  REQUIRE(back.size() == cloud.size());
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    CHECK(std::memcmp(back.points[i].position.data(),
                      cloud.points[i].position.data(),
                      3 * sizeof(float)) == 0);
    CHECK(back.points[i].intensity == cloud.points[i].intensity);
  }
}

TEST_CASE("kitti poses: identity line") {
  TempFile f("poses_id.txt");
  write_text(f.str(), "1 0 0 0 0 1 0 0 0 0 1 0\n");
  auto poses = lodo::read_kitti_poses(f.str());
  REQUIRE(poses.size() == 1);
  CHECK(poses[0].matrix().isApprox(Eigen::Matrix4d::Identity(), 1e-12));
}

TEST_CASE("kitti poses: rotation plus translation round trip") {
  Pose pose(Eigen::AngleAxisd(M_PI / 2, Eigen::Vector3d::UnitZ())
                .toRotationMatrix(),
            Eigen::Vector3d(1, 2, 3));
  TempFile f("poses_rt.txt");
  lodo::write_kitti_poses({pose, pose.inverse(), Pose()}, f.str());

  auto poses = lodo::read_kitti_poses(f.str());
  REQUIRE(poses.size() == 3);
  CHECK((poses[0].matrix() - pose.matrix()).norm() < 1e-9);
  CHECK((poses[1].matrix() - pose.inverse().matrix()).norm() < 1e-9);
}

TEST_CASE("kitti poses: token-count errors carry the line number") {
  TempFile f("poses_bad.txt");
  write_text(f.str(), "1 0 0 0 0 1 0 0 0 0 1 0\n1 2 3\n");
  try {
    lodo::read_kitti_poses(f.str());
    FAIL("expected IoError");
  } catch (const IoError& e) {
    CHECK(std::string(e.what()).find("line 2") != std::string::npos);
  }
}

TEST_CASE("kitti poses: near-orthonormal input is reprojected") {
  // Rotation with ~1e-7 orthonormality drift; the parsed pose must be
  // orthonormal to machine precision.
  Eigen::Matrix3d r = Eigen::AngleAxisd(0.7, Eigen::Vector3d(1, 2, 2)
                                                  .normalized())
                          .toRotationMatrix();
  r(0, 0) += 5e-8;
  r(1, 2) -= 5e-8;
  char line[512];
  std::snprintf(line, sizeof(line),
                "%.17g %.17g %.17g 0 %.17g %.17g %.17g 0 %.17g %.17g %.17g 0\n",
                r(0, 0), r(0, 1), r(0, 2), r(1, 0), r(1, 1), r(1, 2), r(2, 0),
                r(2, 1), r(2, 2));
  TempFile f("poses_drift.txt");
  write_text(f.str(), line);

  auto poses = lodo::read_kitti_poses(f.str());
  REQUIRE(poses.size() == 1);
  Eigen::Matrix3d rr = poses[0].rotation();
  CHECK((rr.transpose() * rr - Eigen::Matrix3d::Identity()).norm() < 1e-12);
  CHECK((rr - r).norm() < 1e-6);
}

TEST_CASE("ply: header, labels, and round trip") {
  PointCloud cloud;
  cloud.points.emplace_back(1.0f, 2.0f, 3.0f, 0.25f);

  TempFile one("one.ply");
  lodo::write_ply(cloud, {}, one.str(), /*binary=*/false);
  {
    std::ifstream in(one.str());
    std::string text((std::istreambuf_iterator<char>(in)),
                     std::istreambuf_iterator<char>());
    CHECK(text.find("element vertex 1") != std::string::npos);
    CHECK(text.find("property uchar class") == std::string::npos);
  }

  TempFile labeled("labeled.ply");
  lodo::write_ply(cloud, {4}, labeled.str(), /*binary=*/false);
  {
    std::ifstream in(labeled.str());
    std::string text((std::istreambuf_iterator<char>(in)),
                     std::istreambuf_iterator<char>());
    CHECK(text.find("property uchar class") != std::string::npos);
  }

  std::mt19937 rng(5);
  std::uniform_real_distribution<float> u(-50.0f, 50.0f);
  PointCloud big;
  std::vector<std::uint8_t> labels;
  for (int i = 0; i < 200; ++i) {
    big.points.emplace_back(u(rng), u(rng), u(rng), std::abs(u(rng)));
    labels.push_back(static_cast<std::uint8_t>(i % 6));
  }
  for (bool binary : {false, true}) {
    TempFile f(binary ? "big_b.ply" : "big_a.ply");
    lodo::write_ply(big, labels, f.str(), binary);
    std::vector<std::uint8_t> read_labels;
    PointCloud back = lodo::read_ply(f.str(), &read_labels);
    REQUIRE(back.size() == big.size());
    REQUIRE(read_labels == labels);
    for (std::size_t i = 0; i < big.size(); ++i) {
      // ASCII goes through %g-style text; allow float round-off there.
      float tol = binary ? 0.0f : 1e-4f;
      CHECK((back.points[i].position - big.points[i].position).norm() <=
            tol);
    }
  }
}

TEST_CASE("intrinsic angle correction") {
  PointCloud cloud;
  cloud.points.emplace_back(1.0f, 0.0f, 0.0f, 1.0f);
  cloud.points.emplace_back(3.0f, -4.0f, 2.0f, 0.5f);
  cloud.points.emplace_back(0.0f, 0.0f, 5.0f, 0.2f);  // on the vertical axis

  PointCloud same = lodo::correct_intrinsic_angle(cloud, 0.0);
  for (std::size_t i = 0; i < cloud.size(); ++i)
    CHECK((same.points[i].position - cloud.points[i].position).norm() == 0.0f);

  double c = 0.2 * M_PI / 180.0;
  PointCloud up = lodo::correct_intrinsic_angle(cloud, c);
  CHECK((up.points[0].position -
         Eigen::Vector3f(static_cast<float>(std::cos(c)), 0.0f,
                         static_cast<float>(std::sin(c))))
            .norm() < 1e-6f);
  for (std::size_t i = 0; i < cloud.size(); ++i)
    CHECK(up.points[i].position.norm() ==
          doctest::Approx(cloud.points[i].position.norm()).epsilon(1e-6));
  // Vertical-axis points have no defined azimuth and stay put.
  CHECK(up.points[2].position == cloud.points[2].position);

  PointCloud back = lodo::correct_intrinsic_angle(up, -c);
  for (std::size_t i = 0; i < cloud.size(); ++i)
    CHECK((back.points[i].position - cloud.points[i].position).norm() <
          1e-6f);
}

TEST_CASE("config: defaults, overrides, and errors") {
  TempFile empty("empty.cfg");
  write_text(empty.str(), "");
  lodo::RunConfig defaults;
  lodo::RunConfig parsed = lodo::load_config(empty.str());
  CHECK(parsed.ground_delta_h1 == defaults.ground_delta_h1);
  CHECK(parsed.icp_kappa == defaults.icp_kappa);

  TempFile one("one.cfg");
  write_text(one.str(), "# comment\nground.delta_h1 = 0.3\n");
  parsed = lodo::load_config(one.str());
  CHECK(parsed.ground_delta_h1 == 0.3);
  CHECK(parsed.ground_delta_h2 == defaults.ground_delta_h2);
  CHECK(parsed.icp_delta == defaults.icp_delta);

  TempFile bad("bad.cfg");
  write_text(bad.str(), "x ==\n");
  try {
    lodo::load_config(bad.str());
    FAIL("expected ConfigError");
  } catch (const lodo::ConfigError& e) {
    CHECK(std::string(e.what()).find("line 1") != std::string::npos);
  }

  TempFile unknown("unknown.cfg");
  write_text(unknown.str(), "no.such.key = 1\n");
  try {
    lodo::load_config(unknown.str());
    FAIL("expected ConfigError");
  } catch (const lodo::ConfigError& e) {
    CHECK(std::string(e.what()).find("no.such.key") != std::string::npos);
  }

  TempFile mistyped("mistyped.cfg");
  write_text(mistyped.str(), "icp.max_iter = fast\n");
  try {
    lodo::load_config(mistyped.str());
    FAIL("expected ConfigError");
  } catch (const lodo::ConfigError& e) {
    CHECK(std::string(e.what()).find("icp.max_iter") != std::string::npos);
  }
}

TEST_CASE("config: validation rejects nonsense values") {
  lodo::RunConfig cfg;
  cfg.icp_max_iter = 0;
  CHECK_THROWS_AS(cfg.validate(), lodo::ConfigError);
  cfg = lodo::RunConfig();
  cfg.ground_delta_h1 = -1.0;
  CHECK_THROWS_AS(cfg.validate(), lodo::ConfigError);
  cfg = lodo::RunConfig();
  CHECK_NOTHROW(cfg.validate());
}

TEST_CASE("trajectory csv round trip") {
  std::vector<lodo::TrajectoryRecord> records;
  for (int i = 0; i < 5; ++i) {
    lodo::TrajectoryRecord rec;
    rec.frame_id = i;
    rec.pose = Pose(Eigen::AngleAxisd(0.1 * i, Eigen::Vector3d::UnitZ())
                        .toRotationMatrix(),
                    Eigen::Vector3d(i, 0, 0));
    rec.t_feature_ms = 10.0 + i;
    rec.t_reg_ms = 20.0 + i;
    rec.t_map_ms = 5.0 + i;
    rec.t_total_ms = 35.0 + 3 * i;
    rec.tracked = (i != 3);
    records.push_back(rec);
  }
  TempFile f("traj.csv");
  lodo::write_trajectory_csv(records, f.str());
  auto back = lodo::read_trajectory_csv(f.str());
  REQUIRE(back.size() == records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    CHECK(back[i].frame_id == records[i].frame_id);
    CHECK((back[i].pose.matrix() - records[i].pose.matrix()).norm() < 1e-9);
    CHECK(back[i].t_total_ms ==
          doctest::Approx(records[i].t_total_ms).epsilon(1e-9));
    CHECK(back[i].tracked == records[i].tracked);
  }

  // The same file is accepted by the format-sniffing pose reader.
  auto poses = lodo::read_trajectory_any(f.str());
  REQUIRE(poses.size() == records.size());
  CHECK((poses[2].matrix() - records[2].pose.matrix()).norm() < 1e-9);
}
