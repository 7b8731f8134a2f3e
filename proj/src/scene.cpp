#include "lodo/scene.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include "json.hpp"

namespace lodo {

namespace {

using nlohmann::json;

Eigen::Vector3d parse_vec3(const json& j, const std::string& where) {
  if (!j.is_array() || j.size() != 3)
    throw SceneError(where + " must be an array of three numbers");
  for (const auto& v : j)
    if (!v.is_number()) throw SceneError(where + " must hold numbers");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

void reject_unknown(const json& j, std::initializer_list<const char*> known,
                    const std::string& where) {
  for (const auto& item : j.items()) {
    bool ok = false;
    for (const char* k : known) ok = ok || item.key() == k;
    if (!ok)
      throw SceneError("unknown key '" + item.key() + "' in " + where);
  }
}

SceneObject parse_object(const json& j, int index) {
  const std::string where = "objects[" + std::to_string(index) + "]";
  if (!j.is_object()) throw SceneError(where + " must be an object");
  if (!j.contains("type")) throw SceneError(where + " is missing 'type'");
  SceneObject obj;
  const std::string type = j.at("type").get<std::string>();
  if (type == "ground") {
    obj.type = SceneObject::Type::kGround;
    reject_unknown(j, {"type", "half", "intensity", "velocity", "points"},
                   where);
    obj.half = j.value("half", obj.half);
    if (obj.half <= 0.0) throw SceneError(where + ": 'half' must be > 0");
  } else if (type == "plane") {
    obj.type = SceneObject::Type::kPlane;
    reject_unknown(
        j, {"type", "origin", "u", "v", "intensity", "velocity", "points"},
        where);
    if (j.contains("origin"))
      obj.origin = parse_vec3(j.at("origin"), where + ".origin");
    if (j.contains("u")) obj.u = parse_vec3(j.at("u"), where + ".u");
    if (j.contains("v")) obj.v = parse_vec3(j.at("v"), where + ".v");
    if (obj.u.cross(obj.v).norm() <= 0.0)
      throw SceneError(where + ": 'u' and 'v' must span a plane");
  } else if (type == "box") {
    obj.type = SceneObject::Type::kBox;
    reject_unknown(
        j, {"type", "center", "size", "intensity", "velocity", "points"},
        where);
    if (j.contains("center"))
      obj.center = parse_vec3(j.at("center"), where + ".center");
    if (j.contains("size"))
      obj.size = parse_vec3(j.at("size"), where + ".size");
    if (obj.size.minCoeff() <= 0.0)
      throw SceneError(where + ": 'size' must be positive");
  } else if (type == "pole") {
    obj.type = SceneObject::Type::kPole;
    reject_unknown(
        j, {"type", "base", "height", "radius", "intensity", "velocity",
            "points"},
        where);
    if (j.contains("base"))
      obj.base = parse_vec3(j.at("base"), where + ".base");
    obj.height = j.value("height", obj.height);
    obj.radius = j.value("radius", obj.radius);
    if (obj.height <= 0.0) throw SceneError(where + ": 'height' must be > 0");
    if (obj.radius < 0.0) throw SceneError(where + ": 'radius' must be >= 0");
  } else {
    throw SceneError(where + ": unknown type '" + type + "'");
  }
  obj.intensity = j.value("intensity", obj.intensity);
  if (j.contains("velocity"))
    obj.velocity = parse_vec3(j.at("velocity"), where + ".velocity");
  obj.points = j.value("points", 0);
  if (obj.points < 0) throw SceneError(where + ": 'points' must be >= 0");
  return obj;
}

/// Sampling surface of one object, in m^2 (poles are treated as thin
/// strips so that unweighted specs still give them usable density).
double object_area(const SceneObject& o) {
  switch (o.type) {
    case SceneObject::Type::kGround:
      return 4.0 * o.half * o.half;
    case SceneObject::Type::kPlane:
      return o.u.cross(o.v).norm();
    case SceneObject::Type::kBox: {
      const Eigen::Vector3d& s = o.size;
      return 2.0 * s.x() * s.z() + 2.0 * s.y() * s.z() + s.x() * s.y();
    }
    case SceneObject::Type::kPole:
      return 0.5 * o.height;
  }
  return 0.0;
}

}  // namespace

SceneSpec parse_scene_spec(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw SceneError(std::string("scene spec is not valid JSON: ") +
                     e.what());
  }
  if (!j.is_object()) throw SceneError("scene spec must be a JSON object");
  reject_unknown(j,
                 {"seed", "noise", "points_per_frame", "range", "trajectory",
                  "objects"},
                 "scene spec");

  SceneSpec spec;
  spec.seed = j.value("seed", spec.seed);
  spec.noise = j.value("noise", spec.noise);
  spec.points_per_frame = j.value("points_per_frame", spec.points_per_frame);
  spec.range = j.value("range", spec.range);
  if (spec.noise < 0.0) throw SceneError("'noise' must be >= 0");
  if (spec.points_per_frame <= 0)
    throw SceneError("'points_per_frame' must be > 0");
  if (spec.range <= 0.0) throw SceneError("'range' must be > 0");

  if (j.contains("trajectory")) {
    const json& t = j.at("trajectory");
    reject_unknown(
        t, {"kind", "frames", "step", "side", "height", "corner_blend"},
        "trajectory");
    std::string kind = t.value("kind", std::string("line"));
    if (kind == "line") {
      spec.trajectory.kind = SceneTrajectory::Kind::kLine;
    } else if (kind == "square") {
      spec.trajectory.kind = SceneTrajectory::Kind::kSquare;
    } else {
      throw SceneError("trajectory kind must be 'line' or 'square', got '" +
                       kind + "'");
    }
    spec.trajectory.frames = t.value("frames", spec.trajectory.frames);
    spec.trajectory.step = t.value("step", spec.trajectory.step);
    spec.trajectory.side = t.value("side", spec.trajectory.side);
    spec.trajectory.height = t.value("height", spec.trajectory.height);
    spec.trajectory.corner_blend =
        t.value("corner_blend", spec.trajectory.corner_blend);
    if (spec.trajectory.frames <= 0)
      throw SceneError("trajectory 'frames' must be > 0");
    if (spec.trajectory.step <= 0.0)
      throw SceneError("trajectory 'step' must be > 0");
    if (spec.trajectory.side <= 0.0)
      throw SceneError("trajectory 'side' must be > 0");
    if (spec.trajectory.corner_blend < 0.0 ||
        spec.trajectory.corner_blend > spec.trajectory.side)
      throw SceneError(
          "trajectory 'corner_blend' must be in [0, side]");
  }

  if (j.contains("objects")) {
    if (!j.at("objects").is_array())
      throw SceneError("'objects' must be an array");
    int index = 0;
    for (const json& jo : j.at("objects"))
      spec.objects.push_back(parse_object(jo, index++));
  }
  if (spec.objects.empty())
    throw SceneError("scene spec needs at least one object");
  return spec;
}

SceneSpec load_scene_spec(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw SceneError("cannot open scene spec '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_scene_spec(buf.str());
}

Pose trajectory_pose(const SceneSpec& spec, int frame) {
  const SceneTrajectory& t = spec.trajectory;
  if (frame < 0 || frame >= t.frames)
    throw SceneError("frame " + std::to_string(frame) +
                     " outside trajectory [0, " + std::to_string(t.frames) +
                     ")");
  if (t.kind == SceneTrajectory::Kind::kLine) {
    return Pose(Eigen::Quaterniond::Identity(),
                Eigen::Vector3d(t.step * frame, 0.0, t.height));
  }
  // Square lap: four legs with a 90-degree heading change at each corner.
  const double half_pi = 1.5707963267948966;
  double d = std::fmod(t.step * frame, 4.0 * t.side);
  int leg = std::min(3, static_cast<int>(d / t.side));
  double along = d - t.side * leg;
  Eigen::Vector3d p;
  switch (leg) {
    case 0: p = {along, 0.0, t.height}; break;
    case 1: p = {t.side, along, t.height}; break;
    case 2: p = {t.side - along, t.side, t.height}; break;
    default: p = {0.0, t.side - along, t.height}; break;
  }
  double yaw;
  if (t.corner_blend <= 0.0) {
    yaw = leg * half_pi;
  } else {
    // Heading on the unwrapped path: each corner contributes a linear
    // 90-degree ramp spread corner_blend meters around it.
    const double total = t.step * frame;
    yaw = 0.0;
    for (int corner = 1; corner <= static_cast<int>(total / t.side) + 1;
         ++corner) {
      double x = (total - (corner * t.side - 0.5 * t.corner_blend)) /
                 t.corner_blend;
      yaw += half_pi * std::clamp(x, 0.0, 1.0);
    }
  }
  return Pose(Eigen::Quaterniond(Eigen::AngleAxisd(yaw,
                                                   Eigen::Vector3d::UnitZ())),
              p);
}

std::pair<PointCloud, Pose> generate_scene(const SceneSpec& spec, int frame) {
  Pose pose = trajectory_pose(spec, frame);
  Pose world_to_sensor = pose.inverse();
  const Eigen::Vector3d sensor = pose.translation();
  const double range_sq = spec.range * spec.range;

  // Per-object sample counts: explicit counts are honored, the remaining
  // budget is split by surface area.
  std::vector<int> counts(spec.objects.size(), 0);
  int budget = spec.points_per_frame;
  double total_area = 0.0;
  for (std::size_t i = 0; i < spec.objects.size(); ++i) {
    if (spec.objects[i].points > 0) {
      counts[i] = spec.objects[i].points;
      budget -= counts[i];
    } else {
      total_area += object_area(spec.objects[i]);
    }
  }
  budget = std::max(budget, 0);
  for (std::size_t i = 0; i < spec.objects.size(); ++i) {
    if (spec.objects[i].points > 0) continue;
    counts[i] = total_area <= 0.0
                    ? 0
                    : static_cast<int>(std::lround(
                          budget * object_area(spec.objects[i]) /
                          total_area));
  }

  std::mt19937 rng(spec.seed * 2654435761u +
                   static_cast<unsigned int>(frame) * 2246822519u + 1u);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);

  PointCloud cloud;
  cloud.frame_id = frame;
  cloud.has_timestamps = false;
  cloud.points.reserve(static_cast<std::size_t>(spec.points_per_frame));

  for (std::size_t i = 0; i < spec.objects.size(); ++i) {
    const SceneObject& obj = spec.objects[i];
    const Eigen::Vector3d shift = obj.velocity * static_cast<double>(frame);
    for (int k = 0; k < counts[i]; ++k) {
      Eigen::Vector3d p;
      switch (obj.type) {
        case SceneObject::Type::kGround:
          p = {(2.0 * u01(rng) - 1.0) * obj.half,
               (2.0 * u01(rng) - 1.0) * obj.half, 0.0};
          break;
        case SceneObject::Type::kPlane:
          p = obj.origin + u01(rng) * obj.u + u01(rng) * obj.v;
          break;
        case SceneObject::Type::kBox: {
          const Eigen::Vector3d& s = obj.size;
          double ax = s.x() * s.z(), ay = s.y() * s.z(), top = s.x() * s.y();
          double pickv = u01(rng) * (2.0 * ax + 2.0 * ay + top);
          double sx = (u01(rng) - 0.5) * s.x();
          double sy = (u01(rng) - 0.5) * s.y();
          double sz = (u01(rng) - 0.5) * s.z();
          if (pickv < ax) {
            p = obj.center + Eigen::Vector3d(sx, -0.5 * s.y(), sz);
          } else if (pickv < 2.0 * ax) {
            p = obj.center + Eigen::Vector3d(sx, 0.5 * s.y(), sz);
          } else if (pickv < 2.0 * ax + ay) {
            p = obj.center + Eigen::Vector3d(-0.5 * s.x(), sy, sz);
          } else if (pickv < 2.0 * ax + 2.0 * ay) {
            p = obj.center + Eigen::Vector3d(0.5 * s.x(), sy, sz);
          } else {
            p = obj.center + Eigen::Vector3d(sx, sy, 0.5 * s.z());
          }
          break;
        }
        case SceneObject::Type::kPole: {
          p = obj.base + Eigen::Vector3d(0.0, 0.0, u01(rng) * obj.height);
          if (obj.radius > 0.0) {
            double phi = 2.0 * 3.14159265358979323846 * u01(rng);
            p += obj.radius *
                 Eigen::Vector3d(std::cos(phi), std::sin(phi), 0.0);
          }
          break;
        }
      }
      p += shift;
      if ((p - sensor).squaredNorm() > range_sq) continue;
      if (spec.noise > 0.0)
        p += spec.noise *
             Eigen::Vector3d(gauss(rng), gauss(rng), gauss(rng));
      Point pt;
      Eigen::Vector3d local = world_to_sensor.apply(p);
      pt.position = local.cast<float>();
      pt.intensity = obj.intensity;
      cloud.points.push_back(pt);
    }
  }
  return {std::move(cloud), pose};
}

}  // namespace lodo
