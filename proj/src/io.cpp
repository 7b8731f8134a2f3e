#include "lodo/io.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace lodo {

namespace {

Eigen::Matrix3d orthonormalized(const Eigen::Matrix3d& m) {
  // Polar decomposition: nearest rotation in Frobenius norm.
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(
      m, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Eigen::Matrix3d r = svd.matrixU() * svd.matrixV().transpose();
  if (r.determinant() < 0) {
    Eigen::Matrix3d flip = Eigen::Matrix3d::Identity();
    flip(2, 2) = -1;
    r = svd.matrixU() * flip * svd.matrixV().transpose();
  }
  return r;
}

}  // namespace

PointCloud read_kitti_bin(const std::string& path) {
  std::ifstream f(path, std::ios::binary | std::ios::ate);
  if (!f) throw IoError("cannot open '" + path + "'");
  std::streamsize size = f.tellg();
  if (size % 16 != 0)
    throw IoError("'" + path + "': size " + std::to_string(size) +
                  " is not a multiple of 16 bytes");
  f.seekg(0);
  PointCloud cloud;
  cloud.points.resize(static_cast<std::size_t>(size / 16));
  static_assert(sizeof(float) == 4);
  std::vector<float> raw(static_cast<std::size_t>(size / 4));
  if (size > 0 &&
      !f.read(reinterpret_cast<char*>(raw.data()), size))
    throw IoError("short read on '" + path + "'");
  for (std::size_t i = 0; i < cloud.points.size(); ++i) {
    Point& p = cloud.points[i];
    p.position = Eigen::Vector3f(raw[4 * i], raw[4 * i + 1], raw[4 * i + 2]);
    p.intensity = raw[4 * i + 3];
  }
  return cloud;
}

void write_kitti_bin(const PointCloud& cloud, const std::string& path) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open '" + path + "' for writing");
  std::vector<float> raw;
  raw.reserve(cloud.points.size() * 4);
  for (const Point& p : cloud.points) {
    raw.push_back(p.position.x());
    raw.push_back(p.position.y());
    raw.push_back(p.position.z());
    raw.push_back(p.intensity);
  }
  if (!raw.empty() &&
      !f.write(reinterpret_cast<const char*>(raw.data()),
               static_cast<std::streamsize>(raw.size() * 4)))
    throw IoError("short write on '" + path + "'");
}

std::vector<Pose> read_kitti_poses(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open '" + path + "'");
  std::vector<Pose> poses;
  std::string line;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream ss(line);
    double v[12];
    for (int i = 0; i < 12; ++i) {
      if (!(ss >> v[i]))
        throw IoError("pose file '" + path + "' line " +
                      std::to_string(lineno) + ": expected 12 reals");
    }
    double extra;
    if (ss >> extra)
      throw IoError("pose file '" + path + "' line " +
                    std::to_string(lineno) + ": expected 12 reals");
    Eigen::Matrix3d r;
    r << v[0], v[1], v[2], v[4], v[5], v[6], v[8], v[9], v[10];
    if ((r.transpose() * r - Eigen::Matrix3d::Identity()).norm() > 1e-6)
      r = orthonormalized(r);
    poses.emplace_back(orthonormalized(r), Eigen::Vector3d(v[3], v[7], v[11]));
  }
  return poses;
}

void write_kitti_poses(const std::vector<Pose>& poses,
                       const std::string& path) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot open '" + path + "' for writing");
  f.precision(12);
  for (const Pose& p : poses) {
    Eigen::Matrix3d r = p.rotation();
    const Eigen::Vector3d& t = p.translation();
    for (int row = 0; row < 3; ++row) {
      f << r(row, 0) << ' ' << r(row, 1) << ' ' << r(row, 2) << ' ' << t(row);
      f << (row == 2 ? '\n' : ' ');
    }
  }
}

void write_ply(const PointCloud& cloud, const std::vector<uint8_t>& labels,
               const std::string& path, bool binary) {
  if (!labels.empty() && labels.size() != cloud.points.size())
    throw IoError("ply: label count does not match point count");
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open '" + path + "' for writing");
  f << "ply\nformat "
    << (binary ? "binary_little_endian" : "ascii") << " 1.0\n"
    << "element vertex " << cloud.points.size() << "\n"
    << "property float x\nproperty float y\nproperty float z\n"
    << "property float intensity\n";
  if (!labels.empty()) f << "property uchar class\n";
  f << "end_header\n";
  if (binary) {
    for (std::size_t i = 0; i < cloud.points.size(); ++i) {
      const Point& p = cloud.points[i];
      float v[4] = {p.position.x(), p.position.y(), p.position.z(),
                    p.intensity};
      f.write(reinterpret_cast<const char*>(v), sizeof(v));
      if (!labels.empty())
        f.write(reinterpret_cast<const char*>(&labels[i]), 1);
    }
  } else {
    f.precision(9);
    for (std::size_t i = 0; i < cloud.points.size(); ++i) {
      const Point& p = cloud.points[i];
      f << p.position.x() << ' ' << p.position.y() << ' ' << p.position.z()
        << ' ' << p.intensity;
      if (!labels.empty()) f << ' ' << static_cast<int>(labels[i]);
      f << '\n';
    }
  }
  if (!f) throw IoError("short write on '" + path + "'");
}

PointCloud read_ply(const std::string& path, std::vector<uint8_t>* labels) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open '" + path + "'");
  std::string line;
  bool binary = false;
  std::size_t count = 0;
  std::vector<std::string> properties;
  if (!std::getline(f, line) || line.substr(0, 3) != "ply")
    throw IoError("'" + path + "': not a PLY file");
  while (std::getline(f, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::istringstream ss(line);
    std::string tok;
    ss >> tok;
    if (tok == "format") {
      std::string fmt;
      ss >> fmt;
      binary = fmt == "binary_little_endian";
      if (!binary && fmt != "ascii")
        throw IoError("'" + path + "': unsupported PLY format " + fmt);
    } else if (tok == "element") {
      std::string what;
      ss >> what >> count;
      if (what != "vertex")
        throw IoError("'" + path + "': unsupported element " + what);
    } else if (tok == "property") {
      std::string type, name;
      ss >> type >> name;
      properties.push_back(type + ":" + name);
    } else if (tok == "end_header") {
      break;
    }
  }
  PointCloud cloud;
  cloud.points.resize(count);
  if (labels) labels->clear();
  for (std::size_t i = 0; i < count; ++i) {
    float xyz[3] = {0, 0, 0};
    float intensity = 0;
    uint8_t cls = 0;
    bool has_cls = false;
    std::size_t fi = 0;
    auto read_scalar = [&](const std::string& prop) {
      float v = 0;
      if (binary) {
        if (prop.rfind("uchar", 0) == 0 || prop.rfind("char", 0) == 0) {
          uint8_t b;
          f.read(reinterpret_cast<char*>(&b), 1);
          v = b;
        } else {
          f.read(reinterpret_cast<char*>(&v), 4);
        }
      } else {
        f >> v;
      }
      return v;
    };
    for (const std::string& prop : properties) {
      float v = read_scalar(prop);
      auto name = prop.substr(prop.find(':') + 1);
      if (name == "x" || name == "y" || name == "z")
        xyz[fi++] = v;
      else if (name == "intensity")
        intensity = v;
      else if (name == "class") {
        cls = static_cast<uint8_t>(v);
        has_cls = true;
      }
    }
    cloud.points[i] =
        Point(xyz[0], xyz[1], xyz[2], intensity);
    if (labels && has_cls) labels->push_back(cls);
  }
  if (!f) throw IoError("short read on '" + path + "'");
  return cloud;
}

PointCloud correct_intrinsic_angle(const PointCloud& cloud,
                                   double correction_rad) {
  if (!std::isfinite(correction_rad))
    throw IoError("intrinsic correction must be finite");
  PointCloud out = cloud;
  if (correction_rad == 0.0) return out;
  for (Point& p : out.points) {
    double x = p.position.x(), y = p.position.y(), z = p.position.z();
    double rho = std::hypot(x, y);
    if (rho < 1e-12) continue;
    double range = std::sqrt(rho * rho + z * z);
    double elev = std::atan2(z, rho) + correction_rad;
    double rho2 = range * std::cos(elev);
    double scale = rho2 / rho;
    p.position = Eigen::Vector3f(static_cast<float>(x * scale),
                                 static_cast<float>(y * scale),
                                 static_cast<float>(range * std::sin(elev)));
  }
  return out;
}

void write_trajectory_csv(const std::vector<TrajectoryRecord>& records,
                          const std::string& path) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot open '" + path + "' for writing");
  f << "frame_id,r00,r01,r02,tx,r10,r11,r12,ty,r20,r21,r22,tz,"
       "t_feature_ms,t_reg_ms,t_map_ms,t_total_ms,tracked\n";
  f.precision(12);
  for (const TrajectoryRecord& rec : records) {
    Eigen::Matrix3d r = rec.pose.rotation();
    const Eigen::Vector3d& t = rec.pose.translation();
    f << rec.frame_id;
    for (int row = 0; row < 3; ++row)
      f << ',' << r(row, 0) << ',' << r(row, 1) << ',' << r(row, 2) << ','
        << t(row);
    f << ',' << rec.t_feature_ms << ',' << rec.t_reg_ms << ','
      << rec.t_map_ms << ',' << rec.t_total_ms << ','
      << (rec.tracked ? 1 : 0) << '\n';
  }
}

std::vector<TrajectoryRecord> read_trajectory_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open '" + path + "'");
  std::vector<TrajectoryRecord> records;
  std::string line;
  bool first = true;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    if (first && line.rfind("frame_id", 0) == 0) {
      first = false;
      continue;
    }
    first = false;
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream ss(line);
    TrajectoryRecord rec;
    double v[12];
    if (!(ss >> rec.frame_id))
      throw IoError("trajectory '" + path + "' line " +
                    std::to_string(lineno) + ": bad frame id");
    for (int i = 0; i < 12; ++i)
      if (!(ss >> v[i]))
        throw IoError("trajectory '" + path + "' line " +
                      std::to_string(lineno) + ": expected 12 pose reals");
    ss >> rec.t_feature_ms >> rec.t_reg_ms >> rec.t_map_ms >> rec.t_total_ms;
    int tracked = 1;
    if (ss >> tracked) rec.tracked = (tracked != 0);
    Eigen::Matrix3d r;
    r << v[0], v[1], v[2], v[4], v[5], v[6], v[8], v[9], v[10];
    rec.pose = Pose(orthonormalized(r), Eigen::Vector3d(v[3], v[7], v[11]));
    if (!records.empty() && rec.frame_id <= records.back().frame_id)
      throw IoError("trajectory '" + path +
                    "': frame ids must be strictly increasing");
    records.push_back(rec);
  }
  return records;
}

std::vector<Pose> read_trajectory_any(const std::string& path) {
  std::ifstream probe(path);
  if (!probe) throw IoError("cannot open '" + path + "'");
  std::string head;
  std::getline(probe, head);
  probe.close();
  if (head.find(',') != std::string::npos) {
    std::vector<Pose> poses;
    for (const TrajectoryRecord& rec : read_trajectory_csv(path))
      poses.push_back(rec.pose);
    return poses;
  }
  return read_kitti_poses(path);
}

std::vector<std::string> list_kitti_frames(const std::string& dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir))
    throw IoError("'" + dir + "' is not a directory");
  std::vector<std::string> frames;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".bin")
      frames.push_back(entry.path().string());
  }
  std::sort(frames.begin(), frames.end());
  return frames;
}

}  // namespace lodo
