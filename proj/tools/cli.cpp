#include "cli.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <unordered_map>
#include <vector>

#include "CLI11.hpp"

#include "lodo/backend.hpp"
#include "lodo/config.hpp"
#include "lodo/features.hpp"
#include "lodo/frontend.hpp"
#include "lodo/io.hpp"
#include "lodo/metrics.hpp"
#include "lodo/registration.hpp"
#include "lodo/scene.hpp"

namespace lodo {

namespace {

namespace fs = std::filesystem;

constexpr double kPi = 3.14159265358979323846;

struct CommonArgs {
  std::string config_path;
  std::vector<std::string> overrides;  // key=value
};

void add_common(CLI::App* cmd, CommonArgs* args) {
  cmd->add_option("--config", args->config_path,
                  "Configuration file (key = value lines)")
      ->check(CLI::ExistingFile);
  cmd->add_option("--set", args->overrides,
                  "Override one configuration entry (key=value, repeatable)");
}

RunConfig build_config(const CommonArgs& args) {
  RunConfig cfg;
  if (!args.config_path.empty()) cfg = load_config(args.config_path);
  for (const std::string& kv : args.overrides) {
    auto eq = kv.find('=');
    if (eq == std::string::npos || eq == 0)
      throw ConfigError("--set expects key=value, got '" + kv + "'");
    apply_config_entry(cfg, kv.substr(0, eq), kv.substr(eq + 1));
  }
  cfg.validate();
  return cfg;
}

std::vector<std::string> frame_paths(const std::string& dir, int max_frames) {
  std::vector<std::string> paths = list_kitti_frames(dir);
  if (paths.empty()) throw IoError("no .bin frames found in '" + dir + "'");
  if (max_frames > 0 && static_cast<int>(paths.size()) > max_frames)
    paths.resize(static_cast<std::size_t>(max_frames));
  return paths;
}

PointCloud load_frame(const std::string& path, int frame_id,
                      const RunConfig& cfg) {
  PointCloud cloud = read_kitti_bin(path);
  cloud.frame_id = frame_id;
  if (cfg.intrinsic_correction_deg != 0.0)
    cloud = correct_intrinsic_angle(
        cloud, cfg.intrinsic_correction_deg * kPi / 180.0);
  return cloud;
}

// ---- odom ----------------------------------------------------------------

struct OdomArgs : CommonArgs {
  std::string dir;
  std::string out_csv;
  std::string out_poses;
  int max_frames = 0;
};

int run_odom(const OdomArgs& args, std::ostream& out) {
  RunConfig cfg = build_config(args);
  std::vector<std::string> paths = frame_paths(args.dir, args.max_frames);

  Odometry odo(cfg);
  int tracked = 0;
  for (std::size_t i = 0; i < paths.size(); ++i) {
    FrameSummary s =
        odo.process_frame(load_frame(paths[i], static_cast<int>(i), cfg));
    tracked += s.tracked ? 1 : 0;
  }
  write_trajectory_csv(odo.trajectory(), args.out_csv);
  if (!args.out_poses.empty()) {
    std::vector<Pose> poses;
    for (const TrajectoryRecord& rec : odo.trajectory())
      poses.push_back(rec.pose);
    write_kitti_poses(poses, args.out_poses);
  }

  double total_ms = 0.0;
  for (const TrajectoryRecord& rec : odo.trajectory())
    total_ms += rec.t_total_ms;
  out << "odom: " << paths.size() << " frames (" << tracked << " tracked), "
      << std::fixed << std::setprecision(1) << total_ms / 1000.0 << " s, "
      << total_ms / static_cast<double>(paths.size()) << " ms/frame\n"
      << "trajectory written to " << args.out_csv << "\n";
  return 0;
}

// ---- slam ----------------------------------------------------------------

struct SlamArgs : OdomArgs {
  std::string out_map;
  std::string out_graph;
};

int run_slam(const SlamArgs& args, std::ostream& out) {
  RunConfig cfg = build_config(args);
  std::vector<std::string> paths = frame_paths(args.dir, args.max_frames);

  Odometry odo(cfg);
  SubmapBuilder builder(cfg);
  SlamPipeline pipeline(cfg);
  int tracked = 0;
  for (std::size_t i = 0; i < paths.size(); ++i) {
    FrameSummary s =
        odo.process_frame(load_frame(paths[i], static_cast<int>(i), cfg));
    if (!s.tracked) continue;
    ++tracked;
    if (std::optional<Submap> done = builder.add_frame(s, odo.map()))
      pipeline.submit(std::move(*done));
  }
  if (std::optional<Submap> tail = builder.flush(odo.map()))
    pipeline.submit(std::move(*tail));
  pipeline.finish();

  std::shared_ptr<const TrajectorySnapshot> snap = pipeline.snapshot();

  // Corrected trajectory: member frames take their corrected poses; frames
  // outside any submap (untracked ones) follow the latest known correction
  // rigidly.
  std::vector<TrajectoryRecord> records = odo.trajectory();
  std::unordered_map<int, Pose> corrected;
  if (snap)
    for (const auto& [id, pose] : snap->frame_poses) corrected.emplace(id, pose);
  Pose delta;
  for (TrajectoryRecord& rec : records) {
    auto it = corrected.find(rec.frame_id);
    if (it != corrected.end()) {
      delta = it->second.compose(rec.pose.inverse());
      rec.pose = it->second;
    } else {
      rec.pose = delta.compose(rec.pose);
    }
  }
  write_trajectory_csv(records, args.out_csv);
  if (!args.out_poses.empty()) {
    std::vector<Pose> poses;
    for (const TrajectoryRecord& rec : records) poses.push_back(rec.pose);
    write_kitti_poses(poses, args.out_poses);
  }

  const LoopCloser& closer = pipeline.closer();
  if (!args.out_map.empty()) {
    // Re-render the map from the corrected submap poses.
    PointCloud map_cloud;
    std::vector<std::uint8_t> map_labels;
    std::vector<std::pair<int, Pose>> refs = closer.corrected_submap_poses();
    for (const Submap& sm : closer.submaps()) {
      Pose ref = sm.reference;
      for (const auto& [id, pose] : refs)
        if (id == sm.id) ref = pose;
      PointCloud part;
      std::vector<std::uint8_t> labels;
      flatten_frame(transform_frame(sm.features, ref), &part, &labels);
      map_cloud.points.insert(map_cloud.points.end(), part.points.begin(),
                              part.points.end());
      map_labels.insert(map_labels.end(), labels.begin(), labels.end());
    }
    write_ply(map_cloud, map_labels, args.out_map);
  }
  if (!args.out_graph.empty()) {
    std::ofstream gout(args.out_graph);
    if (!gout) throw IoError("cannot write graph to '" + args.out_graph + "'");
    write_graph(gout, closer.graph());
  }

  int loop_edges = 0;
  for (const PoseGraphEdge& e : closer.graph().edges)
    loop_edges += e.kind == EdgeKind::kLoop ? 1 : 0;
  out << "slam: " << paths.size() << " frames (" << tracked << " tracked), "
      << closer.submaps().size() << " submaps, " << loop_edges
      << " loop edges, " << closer.optimizations() << " optimizations\n"
      << "trajectory written to " << args.out_csv << "\n";
  return 0;
}

// ---- eval ----------------------------------------------------------------

struct EvalArgs {
  std::string est_path;
  std::string gt_path;
  std::string map_cloud;
  std::string ref_cloud;
  double max_dist = 2.0;
};

void print_report(const MetricReport& report, std::ostream& out) {
  if (!report.valid) {
    out << "warning: " << report.warning << "\n";
    return;
  }
  out << std::fixed;
  out << "ATE " << std::setprecision(2) << report.ate_percent << " %\n";
  out << "ARE " << std::setprecision(4) << report.are_deg_per_100m
      << " deg/100m\n";
  out << "segment   ATE %   ARE deg/100m   samples\n";
  for (const SegmentStat& seg : report.segments) {
    out << std::setw(5) << std::setprecision(0) << seg.length_m << " m "
        << std::setw(7) << std::setprecision(2) << seg.ate_percent
        << std::setw(13) << std::setprecision(4) << seg.are_deg_per_100m
        << std::setw(10) << seg.samples << "\n";
  }
}

int run_eval(const EvalArgs& args, std::ostream& out) {
  std::vector<Pose> est = read_trajectory_any(args.est_path);
  std::vector<Pose> gt = read_trajectory_any(args.gt_path);
  MetricReport report = kitti_ate_are(est, gt);

  if (!args.map_cloud.empty() || !args.ref_cloud.empty()) {
    if (args.map_cloud.empty() || args.ref_cloud.empty())
      throw MetricsError("--map-cloud and --ref-cloud must be given together");
    report.mapping_error_m = mapping_error(read_ply(args.map_cloud),
                                           read_ply(args.ref_cloud),
                                           args.max_dist);
  }

  print_report(report, out);
  if (report.mapping_error_m)
    out << "mapping error " << std::fixed << std::setprecision(4)
        << *report.mapping_error_m << " m\n";

  // Trajectory CSVs carry per-stage timings; summarize them when present.
  try {
    std::vector<TrajectoryRecord> records =
        read_trajectory_csv(args.est_path);
    out << std::fixed << std::setprecision(2);
    out << "stage                 mean ms    p95 ms\n";
    for (const TimingStat& t : timing_summary(records))
      out << std::left << std::setw(20) << t.stage << std::right
          << std::setw(9) << t.mean_ms << std::setw(10) << t.p95_ms << "\n";
  } catch (const IoError&) {
    // KITTI pose text: no timing columns, nothing to report.
  }
  return report.valid ? 0 : 1;
}

// ---- scene ---------------------------------------------------------------

struct SceneArgs {
  std::string spec_path;
  std::string out_dir;
};

int run_scene(const SceneArgs& args, std::ostream& out) {
  SceneSpec spec = load_scene_spec(args.spec_path);
  fs::create_directories(args.out_dir);
  std::vector<Pose> poses;
  for (int frame = 0; frame < spec.trajectory.frames; ++frame) {
    auto [cloud, pose] = generate_scene(spec, frame);
    std::ostringstream name;
    name << std::setw(6) << std::setfill('0') << frame << ".bin";
    write_kitti_bin(cloud, (fs::path(args.out_dir) / name.str()).string());
    poses.push_back(pose);
  }
  write_kitti_poses(poses,
                    (fs::path(args.out_dir) / "poses.txt").string());
  out << "scene: wrote " << spec.trajectory.frames << " frames to "
      << args.out_dir << "\n";
  return 0;
}

// ---- bench ---------------------------------------------------------------

struct BenchArgs : CommonArgs {
  int frames = 15;
};

/// Built-in structured course for the timing benchmark: ground, a street
/// of box buildings and a row of poles, noise comparable to a real scanner.
SceneSpec bench_scene(int frames) {
  SceneSpec spec;
  spec.seed = 9;
  spec.noise = 0.02;
  spec.points_per_frame = 20000;
  spec.trajectory.kind = SceneTrajectory::Kind::kLine;
  spec.trajectory.frames = frames;
  spec.trajectory.step = 0.5;

  SceneObject ground;
  ground.type = SceneObject::Type::kGround;
  ground.half = 60.0;
  ground.intensity = 60.0f;
  spec.objects.push_back(ground);
  for (int i = 0; i < 4; ++i) {
    SceneObject box;
    box.type = SceneObject::Type::kBox;
    box.center = {6.0 + 9.0 * i, (i % 2 ? 9.0 : -9.0), 3.0};
    box.size = {7.0, 5.0, 6.0};
    box.intensity = 150.0f;
    spec.objects.push_back(box);
  }
  for (int i = 0; i < 6; ++i) {
    SceneObject pole;
    pole.type = SceneObject::Type::kPole;
    pole.base = {2.0 + 5.0 * i, (i % 2 ? -5.0 : 5.0), 0.0};
    pole.height = 5.0;
    pole.intensity = 220.0f;
    pole.points = 120;
    spec.objects.push_back(pole);
  }
  return spec;
}

int run_bench(const BenchArgs& args, std::ostream& out) {
  RunConfig cfg = build_config(args);
  SceneSpec spec = bench_scene(args.frames);

  Odometry odo(cfg);
  std::vector<FrameSummary> summaries;
  for (int frame = 0; frame < spec.trajectory.frames; ++frame) {
    auto [cloud, pose] = generate_scene(spec, frame);
    summaries.push_back(odo.process_frame(cloud));
  }

  // Frame 0 only bootstraps the map; keep the steady-state frames.
  std::vector<FrameSummary> steady(summaries.begin() + 1, summaries.end());
  if (steady.empty()) steady = summaries;

  auto stat = [&steady](double FrameSummary::*field) {
    std::vector<double> v;
    for (const FrameSummary& s : steady) v.push_back(s.*field);
    std::sort(v.begin(), v.end());
    double sum = 0.0;
    for (double x : v) sum += x;
    std::size_t rank = (v.size() * 95 + 99) / 100;  // nearest-rank p95
    rank = std::min(std::max<std::size_t>(rank, 1), v.size());
    return std::pair<double, double>(sum / static_cast<double>(v.size()),
                                     v[rank - 1]);
  };
  long iters = 0;
  double assoc_total = 0.0, solve_total = 0.0;
  for (const FrameSummary& s : steady) {
    iters += s.reg_iterations;
    assoc_total += s.t_assoc_ms;
    solve_total += s.t_solve_ms;
  }

  struct Row {
    const char* name;
    double FrameSummary::*field;
  };
  const Row rows[] = {
      {"feature extraction", &FrameSummary::t_feature_ms},
      {"map update", &FrameSummary::t_map_ms},
      {"association", &FrameSummary::t_assoc_ms},
      {"transform estimation", &FrameSummary::t_solve_ms},
      {"total", &FrameSummary::t_total_ms},
  };
  out << "bench: " << spec.points_per_frame << " points/frame, "
      << steady.size() << " frames measured\n";
  out << std::fixed << std::setprecision(2);
  out << "stage                  mean ms    p95 ms\n";
  for (const Row& row : rows) {
    auto [mean, p95] = stat(row.field);
    out << std::left << std::setw(21) << row.name << std::right
        << std::setw(9) << mean << std::setw(10) << p95 << "\n";
  }
  if (iters > 0)
    out << "per iteration: association "
        << assoc_total / static_cast<double>(iters)
        << " ms, transform estimation "
        << solve_total / static_cast<double>(iters) << " ms ("
        << iters / static_cast<long>(steady.size()) << " iter/frame)\n";
  return 0;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out,
            std::ostream& err) {
  CLI::App app{"LiDAR-only odometry and SLAM toolkit", "lodo"};
  app.require_subcommand(1);

  OdomArgs odom_args;
  CLI::App* odom = app.add_subcommand(
      "odom", "Run the odometry front-end over a KITTI-layout directory");
  odom->add_option("dir", odom_args.dir, "Directory of .bin frames")
      ->required()
      ->check(CLI::ExistingDirectory);
  odom->add_option("--out", odom_args.out_csv, "Output trajectory CSV")
      ->required();
  odom->add_option("--poses", odom_args.out_poses,
                   "Also write KITTI pose text");
  odom->add_option("--max-frames", odom_args.max_frames,
                   "Process at most this many frames (0 = all)");
  add_common(odom, &odom_args);

  SlamArgs slam_args;
  CLI::App* slam = app.add_subcommand(
      "slam", "Odometry plus loop closure and pose-graph optimization");
  slam->add_option("dir", slam_args.dir, "Directory of .bin frames")
      ->required()
      ->check(CLI::ExistingDirectory);
  slam->add_option("--out", slam_args.out_csv,
                   "Output corrected trajectory CSV")
      ->required();
  slam->add_option("--poses", slam_args.out_poses,
                   "Also write KITTI pose text");
  slam->add_option("--map", slam_args.out_map,
                   "Write the corrected feature map as PLY");
  slam->add_option("--graph", slam_args.out_graph,
                   "Write the pose graph as text");
  slam->add_option("--max-frames", slam_args.max_frames,
                   "Process at most this many frames (0 = all)");
  add_common(slam, &slam_args);

  EvalArgs eval_args;
  CLI::App* eval = app.add_subcommand(
      "eval", "Compare an estimated trajectory against ground truth");
  eval->add_option("--est", eval_args.est_path,
                   "Estimated trajectory (CSV or KITTI pose text)")
      ->required()
      ->check(CLI::ExistingFile);
  eval->add_option("--gt", eval_args.gt_path, "Ground-truth trajectory")
      ->required()
      ->check(CLI::ExistingFile);
  eval->add_option("--map-cloud", eval_args.map_cloud,
                   "Map PLY for the mapping-error metric")
      ->check(CLI::ExistingFile);
  eval->add_option("--ref-cloud", eval_args.ref_cloud,
                   "Reference PLY for the mapping-error metric")
      ->check(CLI::ExistingFile);
  eval->add_option("--max-dist", eval_args.max_dist,
                   "Mapping-error outlier cutoff, m");

  SceneArgs scene_args;
  CLI::App* scene = app.add_subcommand(
      "scene", "Generate a synthetic dataset from a scene description");
  scene->add_option("--spec", scene_args.spec_path, "Scene JSON description")
      ->required()
      ->check(CLI::ExistingFile);
  scene->add_option("--out", scene_args.out_dir, "Output directory")
      ->required();

  BenchArgs bench_args;
  CLI::App* bench = app.add_subcommand(
      "bench", "Per-stage timing on a built-in synthetic course");
  bench->add_option("--frames", bench_args.frames, "Frames to process")
      ->check(CLI::PositiveNumber);
  add_common(bench, &bench_args);

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }

  try {
    if (odom->parsed()) return run_odom(odom_args, out);
    if (slam->parsed()) return run_slam(slam_args, out);
    if (eval->parsed()) return run_eval(eval_args, out);
    if (scene->parsed()) return run_scene(scene_args, out);
    if (bench->parsed()) return run_bench(bench_args, out);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

}  // namespace lodo
