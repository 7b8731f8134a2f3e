#include "lodo/config.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace lodo {

namespace {

std::string trim(const std::string& s) {
  auto b = s.find_first_not_of(" \t\r");
  auto e = s.find_last_not_of(" \t\r");
  if (b == std::string::npos) return "";
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_value(const std::string& key, const std::string& value);

template <>
double parse_value<double>(const std::string& key, const std::string& value) {
  std::size_t pos = 0;
  double v = 0;
  try {
    v = std::stod(value, &pos);
  } catch (const std::exception&) {
    throw ConfigError("config: key '" + key + "' expects a number, got '" +
                      value + "'");
  }
  if (pos != value.size())
    throw ConfigError("config: key '" + key + "' expects a number, got '" +
                      value + "'");
  return v;
}

template <>
int parse_value<int>(const std::string& key, const std::string& value) {
  std::size_t pos = 0;
  long v = 0;
  try {
    v = std::stol(value, &pos);
  } catch (const std::exception&) {
    throw ConfigError("config: key '" + key + "' expects an integer, got '" +
                      value + "'");
  }
  if (pos != value.size())
    throw ConfigError("config: key '" + key + "' expects an integer, got '" +
                      value + "'");
  return static_cast<int>(v);
}

template <>
unsigned int parse_value<unsigned int>(const std::string& key,
                                       const std::string& value) {
  int v = parse_value<int>(key, value);
  if (v < 0)
    throw ConfigError("config: key '" + key + "' expects a non-negative value");
  return static_cast<unsigned int>(v);
}

template <>
bool parse_value<bool>(const std::string& key, const std::string& value) {
  std::string v = value;
  std::transform(v.begin(), v.end(), v.begin(),
                 [](unsigned char c) { return std::tolower(c); });
  if (v == "true" || v == "1" || v == "on" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "off" || v == "no") return false;
  throw ConfigError("config: key '" + key + "' expects a boolean, got '" +
                    value + "'");
}

using Setter = std::function<void(RunConfig&, const std::string&,
                                  const std::string&)>;

template <typename T>
Setter make_setter(T RunConfig::*field) {
  return [field](RunConfig& cfg, const std::string& key,
                 const std::string& value) {
    cfg.*field = parse_value<T>(key, value);
  };
}

const std::map<std::string, Setter>& registry() {
  static const std::map<std::string, Setter> reg = {
      {"preprocess.intrinsic_correction_deg",
       make_setter(&RunConfig::intrinsic_correction_deg)},
      {"preprocess.motion_compensation",
       make_setter(&RunConfig::motion_compensation)},
      {"preprocess.compensation_exact",
       make_setter(&RunConfig::compensation_exact)},
      {"ground.grid_size", make_setter(&RunConfig::ground_grid_size)},
      {"ground.delta_h1", make_setter(&RunConfig::ground_delta_h1)},
      {"ground.delta_h2", make_setter(&RunConfig::ground_delta_h2)},
      {"ground.ransac_iters", make_setter(&RunConfig::ground_ransac_iters)},
      {"ground.ransac_dist", make_setter(&RunConfig::ground_ransac_dist)},
      {"ground.min_cell_points",
       make_setter(&RunConfig::ground_min_cell_points)},
      {"features.nonground_sample", make_setter(&RunConfig::nonground_sample)},
      {"features.pca_k", make_setter(&RunConfig::pca_k)},
      {"features.pca_radius", make_setter(&RunConfig::pca_radius)},
      {"features.pca_min_neighbors",
       make_setter(&RunConfig::pca_min_neighbors)},
      {"features.linearity", make_setter(&RunConfig::classify_linearity)},
      {"features.planarity", make_setter(&RunConfig::classify_planarity)},
      {"features.curvature", make_setter(&RunConfig::classify_curvature)},
      {"features.roof_min_height", make_setter(&RunConfig::roof_min_height)},
      {"features.nms_radius", make_setter(&RunConfig::nms_radius)},
      {"features.voxel_dense", make_setter(&RunConfig::voxel_dense)},
      {"features.voxel_sparse", make_setter(&RunConfig::voxel_sparse)},
      {"features.ground_voxel_scale",
       make_setter(&RunConfig::ground_voxel_scale)},
      {"ncc.radius", make_setter(&RunConfig::ncc_radius)},
      {"ncc.intensity_max", make_setter(&RunConfig::intensity_max)},
      {"ncc.height_max", make_setter(&RunConfig::height_max)},
      {"icp.kappa", make_setter(&RunConfig::icp_kappa)},
      {"icp.delta", make_setter(&RunConfig::icp_delta)},
      {"icp.balanced_w_min", make_setter(&RunConfig::balanced_w_min)},
      {"icp.balanced_w_max", make_setter(&RunConfig::balanced_w_max)},
      {"icp.weight_residual", make_setter(&RunConfig::weight_residual_on)},
      {"icp.weight_balanced", make_setter(&RunConfig::weight_balanced_on)},
      {"icp.weight_intensity", make_setter(&RunConfig::weight_intensity_on)},
      {"icp.assoc_dist_start", make_setter(&RunConfig::assoc_dist_start)},
      {"icp.assoc_dist_min", make_setter(&RunConfig::assoc_dist_min)},
      {"icp.assoc_shrink", make_setter(&RunConfig::assoc_shrink)},
      {"icp.direction_cos_min", make_setter(&RunConfig::direction_cos_min)},
      {"icp.converge_xi", make_setter(&RunConfig::icp_converge_xi)},
      {"icp.max_iter", make_setter(&RunConfig::icp_max_iter)},
      {"icp.sigma_floor", make_setter(&RunConfig::sigma_floor)},
      {"icp.condition_max", make_setter(&RunConfig::condition_max)},
      {"icp.overlap_tau", make_setter(&RunConfig::overlap_tau)},
      {"frontend.s2s_iters", make_setter(&RunConfig::s2s_iters)},
      {"frontend.dyn_near_radius", make_setter(&RunConfig::dyn_near_radius)},
      {"frontend.dyn_dist", make_setter(&RunConfig::dyn_dist)},
      {"frontend.map_crop_radius", make_setter(&RunConfig::map_crop_radius)},
      {"frontend.map_budget_per_class",
       make_setter(&RunConfig::map_budget_per_class)},
      {"backend.submap_max_translation",
       make_setter(&RunConfig::submap_max_translation)},
      {"backend.submap_max_rotation_deg",
       make_setter(&RunConfig::submap_max_rotation_deg)},
      {"backend.submap_max_frames",
       make_setter(&RunConfig::submap_max_frames)},
      {"backend.loop_radius", make_setter(&RunConfig::loop_radius)},
      {"backend.loop_radius_growth",
       make_setter(&RunConfig::loop_radius_growth)},
      {"backend.ncc_cos_min", make_setter(&RunConfig::ncc_cos_min)},
      {"backend.ransac_iters", make_setter(&RunConfig::ransac_iters)},
      {"backend.ransac_inlier_dist",
       make_setter(&RunConfig::ransac_inlier_dist)},
      {"backend.ransac_min_inliers",
       make_setter(&RunConfig::ransac_min_inliers)},
      {"backend.edge_sigma_max", make_setter(&RunConfig::edge_sigma_max)},
      {"backend.edge_overlap_min", make_setter(&RunConfig::edge_overlap_min)},
      {"backend.pgo_max_iter", make_setter(&RunConfig::pgo_max_iter)},
      {"backend.pgo_rel_tol", make_setter(&RunConfig::pgo_rel_tol)},
      {"threads", make_setter(&RunConfig::threads)},
      {"seed", make_setter(&RunConfig::seed)},
  };
  return reg;
}

}  // namespace

void apply_config_entry(RunConfig& cfg, const std::string& key,
                        const std::string& value) {
  auto it = registry().find(key);
  if (it == registry().end())
    throw ConfigError("config: unknown key '" + key + "'");
  it->second(cfg, key, value);
}

RunConfig parse_config(const std::string& text, RunConfig base) {
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config: line " + std::to_string(lineno) +
                        ": expected 'key = value'");
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (key.empty() || value.empty() || value.find('=') != std::string::npos)
      throw ConfigError("config: line " + std::to_string(lineno) +
                        ": expected 'key = value'");
    apply_config_entry(base, key, value);
  }
  base.validate();
  return base;
}

RunConfig load_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("config: cannot open '" + path + "'");
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_config(ss.str());
}

void RunConfig::validate() const {
  auto positive = [](double v, const char* name) {
    if (!(v > 0))
      throw ConfigError(std::string("config: '") + name +
                        "' must be positive");
  };
  auto cap = [](int v, const char* name) {
    if (v < 1)
      throw ConfigError(std::string("config: '") + name + "' must be >= 1");
  };
  positive(ground_grid_size, "ground.grid_size");
  positive(ground_delta_h1, "ground.delta_h1");
  positive(ground_delta_h2, "ground.delta_h2");
  positive(ground_ransac_dist, "ground.ransac_dist");
  positive(pca_radius, "features.pca_radius");
  positive(classify_linearity, "features.linearity");
  positive(classify_planarity, "features.planarity");
  positive(classify_curvature, "features.curvature");
  positive(nms_radius, "features.nms_radius");
  positive(voxel_dense, "features.voxel_dense");
  positive(voxel_sparse, "features.voxel_sparse");
  positive(ncc_radius, "ncc.radius");
  positive(intensity_max, "ncc.intensity_max");
  positive(height_max, "ncc.height_max");
  positive(icp_delta, "icp.delta");
  positive(assoc_dist_start, "icp.assoc_dist_start");
  positive(assoc_dist_min, "icp.assoc_dist_min");
  positive(assoc_shrink, "icp.assoc_shrink");
  positive(icp_converge_xi, "icp.converge_xi");
  positive(sigma_floor, "icp.sigma_floor");
  positive(overlap_tau, "icp.overlap_tau");
  positive(dyn_near_radius, "frontend.dyn_near_radius");
  positive(dyn_dist, "frontend.dyn_dist");
  positive(map_crop_radius, "frontend.map_crop_radius");
  positive(submap_max_translation, "backend.submap_max_translation");
  positive(submap_max_rotation_deg, "backend.submap_max_rotation_deg");
  positive(ransac_inlier_dist, "backend.ransac_inlier_dist");
  positive(edge_sigma_max, "backend.edge_sigma_max");
  cap(ground_ransac_iters, "ground.ransac_iters");
  cap(pca_k, "features.pca_k");
  cap(pca_min_neighbors, "features.pca_min_neighbors");
  cap(icp_max_iter, "icp.max_iter");
  cap(submap_max_frames, "backend.submap_max_frames");
  cap(ransac_iters, "backend.ransac_iters");
  cap(ransac_min_inliers, "backend.ransac_min_inliers");
  cap(pgo_max_iter, "backend.pgo_max_iter");
  cap(threads, "threads");
  if (s2s_iters < 0)
    throw ConfigError("config: 'frontend.s2s_iters' must be >= 0");
  if (map_budget_per_class < 1)
    throw ConfigError("config: 'frontend.map_budget_per_class' must be >= 1");
}

}  // namespace lodo
