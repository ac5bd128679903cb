/// @file pipeline.hpp
/// @brief Stage runners shared by the command-line tool: each stage reads its
///        prerequisites from a work directory and writes its artifacts there.

#pragma once

#include <chrono>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "airway.hpp"
#include "centerline.hpp"
#include "config.hpp"
#include "io.hpp"
#include "lungs.hpp"
#include "medialness.hpp"
#include "metaimage.hpp"
#include "metrics.hpp"
#include "phantom.hpp"
#include "vesselseg.hpp"

namespace pvseg {

namespace fs = std::filesystem;

/// Stage numbering used for exit codes (10 + stage).
enum class Stage { Input = 0, AirwayLungs = 1, Vesselness = 2, Centerline = 3, Segmentation = 4, Tortuosity = 5 };

inline const char* stage_name(Stage s) {
  switch (s) {
    case Stage::Input: return "input";
    case Stage::AirwayLungs: return "lung and airway segmentation";
    case Stage::Vesselness: return "vessel enhancement";
    case Stage::Centerline: return "centerline reconnection";
    case Stage::Segmentation: return "vessel segmentation";
    case Stage::Tortuosity: return "tortuosity";
  }
  return "unknown";
}

inline int exit_code(Stage s) { return 10 + static_cast<int>(s); }

class StageError : public Error {
 public:
  StageError(Stage s, const std::string& what) : Error(std::string(stage_name(s)) + ": " + what), stage_(s) {}
  Stage stage() const { return stage_; }

 private:
  Stage stage_;
};

/// Runs `body`, rethrowing any library error tagged with the stage.
template <class F>
auto in_stage(Stage s, F&& body) {
  try {
    return body();
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(s, e.what());
  }
}

// ---------------------------------------------------------------------------
// In-memory stages
// ---------------------------------------------------------------------------

struct AirwayStage {
  VoxelIndex seed;
  GrowResult grow;
  AirwayTree tree;
};

inline AirwayStage run_airway(const CtVolume& ct, const PipelineConfig& cfg, std::optional<VoxelIndex> seed = {}) {
  AirwayStage out;
  SeedSearch search;
  search.air_hu = cfg.trachea_air_hu;
  out.seed = seed ? *seed : detect_trachea_seed(ct, search);
  GrowParams gp;
  gp.seed = out.seed;
  gp.step = cfg.grow_step_hu;
  gp.leak_factor = cfg.leak_factor;
  gp.max_iterations = cfg.grow_max_iterations;
  gp.stall_iterations = cfg.grow_stall_iterations;
  out.grow = grow_airway(ct, gp);
  out.tree = skeletonize_and_label(out.grow.mask, {cfg.spur_length, cfg.flip_lr});
  return out;
}

/// Labels grown by one N6 step: background voxels take the first labeled face neighbor.
inline LabelVolume dilate_labels(const LabelVolume& in) {
  LabelVolume out = in;
  for (std::size_t n = 0; n < in.size(); ++n) {
    if (in[n]) continue;
    for (const auto& w : neighbors(in.voxel(n), Connectivity::N6, in.dims()))
      if (in[w]) {
        out[n] = in[w];
        break;
      }
  }
  return out;
}

inline Mask nonzero(const LabelVolume& l) {
  Mask m = Mask::like(l);
  for (std::size_t n = 0; n < l.size(); ++n) m[n] = l[n] ? 1 : 0;
  return m;
}

/// Coarse mask, two-source split from the main bronchi, per-lung closing. The airway
/// passed in is widened by one voxel to drop its partial-volume shell.
inline LungLabels run_lungs(const CtVolume& ct, const LabelVolume& airway_labels, const PipelineConfig& cfg) {
  const LabelVolume wide = dilate_labels(airway_labels);
  const Mask wide_mask = nonzero(wide);
  CoarseLungOptions co;
  co.histogram_bins = cfg.otsu_bins;
  const Mask coarse = coarse_lung_mask(ct, co);
  const FloatVolume cost = build_cost_field(ct, coarse, wide_mask, cfg.cost_weights());
  const LungLabels split = split_lungs(cost, wide);
  return refine_lungs(split, wide_mask, cfg.closing_iterations);
}

inline LungLabels summarize_lungs(const LabelVolume& labels) {
  LungLabels l;
  l.labels = labels;
  l.update_summary();
  return l;
}

struct CenterlineStage {
  VoxelIndex heart;
  double threshold = 0;
  std::size_t candidates = 0;
  std::size_t fragments = 0;
  std::vector<CenterlineTree> trees;
};

inline CenterlineStage run_centerline(const CtVolume& ct, const MedialnessField& field, const LabelVolume& lungs,
                                      const Mask& airway, const PipelineConfig& cfg,
                                      std::optional<VoxelIndex> heart = {}) {
  CenterlineStage out;
  out.threshold = response_threshold(field.response, cfg.response_floor);
  Mask lung_region = Mask::like(lungs);
  for (std::size_t n = 0; n < lungs.size(); ++n) lung_region[n] = lungs[n] ? 1 : 0;
  const Mask domain = filter_region(lungs, airway);
  const Mask cand = non_max_suppress(field, out.threshold, cfg.nms_radius, &domain);
  out.candidates = count_nonzero(cand);
  const auto frags = prune_fragments(cand, airway, cfg.prune_min_size, cfg.airway_clear_radius, &field.response);
  out.fragments = frags.size();
  const LungLabels summary = summarize_lungs(lungs);
  out.heart = heart ? *heart : detect_heart_center(ct, summary, cfg.heart_min_hu);
  const FloatVolume g = normalized_gradient(farid_gradient(ct), lung_region, cfg.gradient_percentile);
  ReconnectParams rp = cfg.reconnect_params();
  rp.min_response = out.threshold;
  const auto trees = reconnect(frags, field.response, g, lungs, out.heart, rp);
  out.trees.assign(trees.begin(), trees.end());
  refine_node_positions(out.trees, field);
  return out;
}

struct SegmentStage {
  std::vector<RadiusProfile> profiles;
  LabelVolume vessels;
};

inline SegmentStage run_segment(const CtVolume& ct, std::vector<CenterlineTree>& trees, const LabelVolume& lungs,
                                const PipelineConfig& cfg) {
  SegmentStage out;
  out.profiles = estimate_tree_radii(to_float(ct), trees, cfg.radius_options(), &lungs);
  out.vessels = paint_segmentation(trees, lungs);
  return out;
}

inline Json dm_report(const std::vector<CenterlineTree>& trees, const PipelineConfig& cfg) {
  Json j;
  j["min_branch_mm"] = cfg.dm_min_branch_mm;
  try {
    const DmSummary s = patient_dm(trees, cfg.dm_min_branch_mm);
    j["branches"] = s.branches;
    j["dm_mean"] = s.mean;
    j["dm_std"] = s.std;
    j["dm_min"] = s.min;
    j["dm_max"] = s.max;
    j["dm_range"] = s.range();
  } catch (const Error& e) {
    j["branches"] = 0;
    j["dm_mean"] = nullptr;
    j["dm_std"] = nullptr;
    j["dm_min"] = nullptr;
    j["dm_max"] = nullptr;
    j["dm_range"] = nullptr;
    j["note"] = e.what();
  }
  return j;
}

// ---------------------------------------------------------------------------
// Artifacts
// ---------------------------------------------------------------------------

namespace artifact {
inline constexpr const char* kAirway = "airway.mhd";
inline constexpr const char* kAirwayTrace = "airway_trace.csv";
inline constexpr const char* kLungs = "lungs.mhd";
inline constexpr const char* kLungsSummary = "lungs_summary.json";
inline constexpr const char* kMedialness = "medialness.mhd";
inline constexpr const char* kArgmax = "medialness_argmax.mhd";
inline constexpr const char* kRadius = "medialness_radius.mhd";
inline constexpr const char* kDirX = "medialness_dir_x.mhd";
inline constexpr const char* kDirY = "medialness_dir_y.mhd";
inline constexpr const char* kDirZ = "medialness_dir_z.mhd";
inline constexpr const char* kCenterline = "centerline.json";
inline constexpr const char* kCenterlineCsv = "centerline_nodes.csv";
inline constexpr const char* kVessels = "vessels.mhd";
inline constexpr const char* kProfiles = "radius_profiles.csv";
inline constexpr const char* kDmReport = "dm_report.json";
inline constexpr const char* kRunConfig = "run_config.txt";
inline constexpr const char* kTiming = "timing.csv";
}  // namespace artifact

inline fs::path require_artifact(const fs::path& dir, const char* name, Stage stage) {
  const fs::path p = dir / name;
  if (!fs::exists(p)) throw StageError(stage, std::string("missing prerequisite artifact ") + name + " in " + dir.string());
  return p;
}

inline CtVolume load_input(const fs::path& path) {
  return in_stage(Stage::Input, [&] {
    if (!fs::exists(path)) throw Error("cannot read input volume " + path.string());
    return load_metaimage<std::int16_t>(path);
  });
}

inline void write_run_config(const fs::path& dir, const PipelineConfig& cfg) {
  fs::create_directories(dir);
  write_text(dir / artifact::kRunConfig, serialize_config(cfg));
}

inline std::string trace_csv(const GrowResult& g) {
  std::string out = "t,th_min,th_max,V_t,E_t\n";
  for (const auto& r : g.trace)
    out += std::to_string(r.t) + "," + detail::format_double(r.th_min) + "," + detail::format_double(r.th_max) + "," +
           std::to_string(r.total) + "," + std::to_string(r.edge) + "\n";
  return out;
}

inline void stage_airway(const CtVolume& ct, const fs::path& dir, const PipelineConfig& cfg,
                         std::optional<VoxelIndex> seed) {
  in_stage(Stage::AirwayLungs, [&] {
    const AirwayStage a = run_airway(ct, cfg, seed);
    save_metaimage(a.tree.labels, dir / artifact::kAirway);
    write_text(dir / artifact::kAirwayTrace, trace_csv(a.grow));
    return 0;
  });
}

inline void stage_lungs(const CtVolume& ct, const fs::path& dir, const PipelineConfig& cfg) {
  const fs::path ap = require_artifact(dir, artifact::kAirway, Stage::AirwayLungs);
  in_stage(Stage::AirwayLungs, [&] {
    const LabelVolume airway = load_label_metaimage(ap);
    if (!airway.same_geometry(ct)) throw Error("airway.mhd does not match the input geometry");
    const LungLabels lungs = run_lungs(ct, airway, cfg);
    save_metaimage(lungs.labels, dir / artifact::kLungs);
    Json j;
    j["left_voxels"] = lungs.left_count;
    j["right_voxels"] = lungs.right_count;
    j["unreachable_voxels"] = lungs.unreachable;
    write_json(dir / artifact::kLungsSummary, j);
    return 0;
  });
}

inline void save_field(const MedialnessField& f, const fs::path& dir) {
  save_metaimage(f.response, dir / artifact::kMedialness);
  save_metaimage(f.argmax, dir / artifact::kArgmax);
  save_metaimage(f.radius, dir / artifact::kRadius);
  save_metaimage(f.direction.x, dir / artifact::kDirX);
  save_metaimage(f.direction.y, dir / artifact::kDirY);
  save_metaimage(f.direction.z, dir / artifact::kDirZ);
}

inline MedialnessField load_field(const fs::path& dir, int n_radii, Stage stage) {
  MedialnessField f;
  f.response = load_metaimage<float>(require_artifact(dir, artifact::kMedialness, stage));
  f.argmax = load_metaimage<std::uint8_t>(require_artifact(dir, artifact::kArgmax, stage));
  f.radius = load_metaimage<float>(require_artifact(dir, artifact::kRadius, stage));
  f.direction.x = load_metaimage<float>(require_artifact(dir, artifact::kDirX, stage));
  f.direction.y = load_metaimage<float>(require_artifact(dir, artifact::kDirY, stage));
  f.direction.z = load_metaimage<float>(require_artifact(dir, artifact::kDirZ, stage));
  f.n_radii = n_radii;
  return f;
}

inline Mask airway_mask_of(const LabelVolume& airway) { return nonzero(airway); }

inline void stage_vesselness(const CtVolume& ct, const fs::path& dir, const PipelineConfig& cfg) {
  const fs::path lp = require_artifact(dir, artifact::kLungs, Stage::Vesselness);
  const fs::path ap = require_artifact(dir, artifact::kAirway, Stage::Vesselness);
  in_stage(Stage::Vesselness, [&] {
    const LabelVolume lungs = load_label_metaimage(lp);
    const Mask airway = airway_mask_of(load_label_metaimage(ap));
    save_field(run_filter(ct, lungs, airway, cfg.filter()), dir);
    return 0;
  });
}

inline void stage_centerline(const CtVolume& ct, const fs::path& dir, const PipelineConfig& cfg,
                             std::optional<VoxelIndex> heart) {
  const fs::path lp = require_artifact(dir, artifact::kLungs, Stage::Centerline);
  const fs::path ap = require_artifact(dir, artifact::kAirway, Stage::Centerline);
  const MedialnessField field = in_stage(Stage::Centerline, [&] {
    return load_field(dir, static_cast<int>(cfg.radii.size()), Stage::Centerline);
  });
  in_stage(Stage::Centerline, [&] {
    const LabelVolume lungs = load_label_metaimage(lp);
    const Mask airway = airway_mask_of(load_label_metaimage(ap));
    const CenterlineStage c = run_centerline(ct, field, lungs, airway, cfg, heart);
    save_centerline(c.trees, dir / artifact::kCenterline);
    write_text(dir / artifact::kCenterlineCsv, centerline_csv(c.trees));
    return 0;
  });
}

inline void stage_segment(const CtVolume& ct, const fs::path& dir, const PipelineConfig& cfg) {
  const fs::path lp = require_artifact(dir, artifact::kLungs, Stage::Segmentation);
  const fs::path cp = require_artifact(dir, artifact::kCenterline, Stage::Segmentation);
  in_stage(Stage::Segmentation, [&] {
    const LabelVolume lungs = load_label_metaimage(lp);
    auto trees = load_centerline(cp);
    const SegmentStage s = run_segment(ct, trees, lungs, cfg);
    save_metaimage(s.vessels, dir / artifact::kVessels);
    write_text(dir / artifact::kProfiles, radius_profiles_csv(s.profiles));
    save_centerline(trees, cp);
    write_text(dir / artifact::kCenterlineCsv, centerline_csv(trees));
    return 0;
  });
}

inline void stage_tortuosity(const fs::path& dir, const PipelineConfig& cfg) {
  const fs::path cp = require_artifact(dir, artifact::kCenterline, Stage::Tortuosity);
  in_stage(Stage::Tortuosity, [&] {
    write_json(dir / artifact::kDmReport, dm_report(load_centerline(cp), cfg));
    return 0;
  });
}

struct StageOverrides {
  std::optional<VoxelIndex> seed;
  std::optional<VoxelIndex> heart;
};

/// Full chain; timing.csv holds wall time per stage and is the only non-deterministic file.
inline void run_pipeline(const fs::path& input, const fs::path& dir, const PipelineConfig& cfg,
                         const StageOverrides& ov = {}) {
  const CtVolume ct = load_input(input);
  fs::create_directories(dir);
  write_run_config(dir, cfg);
  std::vector<std::pair<Stage, double>> timing;
  auto timed = [&](Stage s, auto&& body) {
    const auto t0 = std::chrono::steady_clock::now();
    body();
    timing.emplace_back(s, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  };
  timed(Stage::AirwayLungs, [&] {
    stage_airway(ct, dir, cfg, ov.seed);
    stage_lungs(ct, dir, cfg);
  });
  timed(Stage::Vesselness, [&] { stage_vesselness(ct, dir, cfg); });
  timed(Stage::Centerline, [&] { stage_centerline(ct, dir, cfg, ov.heart); });
  timed(Stage::Segmentation, [&] {
    stage_segment(ct, dir, cfg);
    stage_tortuosity(dir, cfg);
  });
  std::string csv = "stage,seconds\n";
  for (const auto& [s, sec] : timing) csv += std::string(stage_name(s)) + "," + detail::format_double(sec) + "\n";
  write_text(dir / artifact::kTiming, csv);
}

// ---------------------------------------------------------------------------
// Phantom runs (no airway or lungs: the whole grid counts as one lung)
// ---------------------------------------------------------------------------

struct PhantomRun {
  MedialnessField field;
  CenterlineStage centerline;
  SegmentStage segment;
};

inline VoxelIndex phantom_root(const PhantomSpec& spec) {
  if (spec.tubes.empty()) throw Error("phantom: no tubes");
  const CtVolume probe(spec.dims, spec.spacing);
  return probe.nearest_voxel(spec.tubes.front().points.front());
}

inline PhantomRun run_phantom_chain(const CtVolume& ct, const VoxelIndex& root, const PipelineConfig& cfg) {
  PhantomRun r;
  LabelVolume lungs(ct.dims(), ct.spacing(), ct.origin(), lung_legend());
  lungs.fill(label::kLeft);
  const Mask airway = Mask::like(ct, 0);
  r.field = run_filter(ct, lungs, airway, cfg.filter());
  r.centerline = run_centerline(ct, r.field, lungs, airway, cfg, root);
  r.segment = run_segment(ct, r.centerline.trees, lungs, cfg);
  return r;
}

}  // namespace pvseg
