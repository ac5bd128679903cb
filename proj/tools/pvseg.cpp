// Command-line front end: one subcommand per stage plus the full pipeline, phantom
// generation with a noise sweep, and evaluation.

#include <cstdio>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include <pvseg/pvseg.hpp>

namespace {

using namespace pvseg;

constexpr int kConfigError = 2;

struct Common {
  std::string config;
  int threads = 0;
  std::string seed;
  std::string heart;
  bool flip_lr = false;
  std::string output = ".";
  std::string input;
};

std::optional<VoxelIndex> parse_point(const std::string& s, const char* what) {
  if (s.empty()) return std::nullopt;
  std::vector<int> v;
  std::stringstream ss(s);
  for (std::string item; std::getline(ss, item, ',');) {
    int x = 0;
    const std::string t = detail::trim(item);
    const auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), x);
    if (ec != std::errc{} || p != t.data() + t.size()) throw Error(std::string("bad ") + what + " point '" + s + "'");
    v.push_back(x);
  }
  if (v.size() != 3) throw Error(std::string(what) + " point must be i,j,k");
  return VoxelIndex{v[0], v[1], v[2]};
}

std::vector<double> parse_doubles(const std::string& s) {
  std::vector<double> out;
  std::stringstream ss(s);
  for (std::string item; std::getline(ss, item, ',');) {
    double x = 0;
    const std::string t = detail::trim(item);
    const auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), x);
    if (ec != std::errc{} || p != t.data() + t.size()) throw Error("bad number '" + t + "'");
    out.push_back(x);
  }
  return out;
}

void add_common(CLI::App* cmd, Common& c, bool with_input) {
  cmd->add_option("--config", c.config, "configuration file (key = value)");
  cmd->add_option("--threads", c.threads, "worker cap (0 = all cores)")->check(CLI::NonNegativeNumber);
  cmd->add_option("--output", c.output, "output / work directory");
  if (with_input) cmd->add_option("--input", c.input, "input CT volume (.mhd)")->required();
}

std::string format(double v) { return detail::format_double(v); }

// ---------------------------------------------------------------------------

int cmd_phantom(const Common& c, const PipelineConfig& cfg, const std::string& spec_path, const std::string& noise,
                bool sweep) {
  const fs::path out = c.output;
  fs::create_directories(out);
  const PhantomSpec spec = in_stage(Stage::Input, [&] { return load_phantom_spec(spec_path); });
  const Phantom ph = rasterize_tubes(spec);
  save_metaimage(ph.ct, out / "phantom.mhd");
  save_metaimage(ph.truth, out / "truth.mhd");
  Json lines = Json::array();
  for (const auto& l : ph.centerline) {
    Json lj = Json::array();
    for (const auto& p : l) lj.push_back(Json::array({p[0], p[1], p[2]}));
    lines.push_back(lj);
  }
  write_json(out / "truth_centerline.json", lines);
  write_run_config(out, cfg);
  if (noise.empty()) return 0;
  const VoxelIndex root = phantom_root(spec);
  std::string csv = "noise_std_hu,jaccard\n";
  for (double s : parse_doubles(noise)) {
    const CtVolume noisy = add_gaussian_noise(ph.ct, {s, cfg.noise_seed});
    const std::string tag = format(s);
    save_metaimage(noisy, out / ("phantom_noise_" + tag + ".mhd"));
    if (!sweep) continue;
    const PhantomRun run = run_phantom_chain(noisy, root, cfg);
    save_metaimage(run.segment.vessels, out / ("vessels_noise_" + tag + ".mhd"));
    const double j = jaccard(run.segment.vessels, ph.truth);
    csv += tag + "," + format(j) + "\n";
    std::cout << "noise_std_hu=" << tag << " jaccard=" << format(j) << "\n";
  }
  if (sweep) write_text(out / "jaccard_vs_noise.csv", csv);
  return 0;
}

int cmd_evaluate(const Common& c, const PipelineConfig& cfg, const std::string& prediction, const std::string& truth,
                 const std::string& points, const std::string& scores, const std::string& centerline,
                 const std::string& cohort) {
  const fs::path out = c.output;
  fs::create_directories(out);
  Json report;
  std::vector<std::pair<std::string, std::string>> rows;
  auto put = [&](const std::string& k, std::optional<double> v) {
    report[k] = v ? Json(*v) : Json(nullptr);
    rows.emplace_back(k, v ? format(*v) : "undefined");
  };
  std::optional<Mask> pred;
  if (!prediction.empty()) {
    const LabelVolume p = load_label_metaimage(prediction);
    pred = nonzero(p);
  }
  if (!truth.empty()) {
    if (!pred) throw Error("--truth requires --prediction");
    const Mask t = nonzero(load_label_metaimage(truth));
    if (t.dims() != pred->dims()) throw Error("prediction and truth dimensions differ");
    put("jaccard", jaccard(*pred, t));
  }
  if (!points.empty()) {
    if (!pred && scores.empty()) throw Error("--points requires --prediction or --scores");
    const Dims dims = pred ? pred->dims() : load_metaimage<float>(scores).dims();
    const auto pts = read_points_csv(points, dims);
    std::vector<int> labels;
    for (const auto& p : pts) labels.push_back(p.label);
    if (pred) {
      std::vector<int> yhat;
      for (const auto& p : pts) yhat.push_back((*pred)[p.v] ? 1 : 0);
      const SensSpec s = sens_spec(yhat, labels);
      put("sensitivity", s.sensitivity);
      put("specificity", s.specificity);
    }
    if (!scores.empty()) {
      const FloatVolume sc = load_metaimage<float>(scores);
      std::vector<double> v;
      for (const auto& p : pts) v.push_back(sc[p.v]);
      put("az", roc_az(v, labels).az);
    }
  }
  if (!centerline.empty()) {
    const Json dm = dm_report(load_centerline(centerline), cfg);
    for (const char* k : {"dm_mean", "dm_std", "dm_range"})
      put(k, dm[k].is_null() ? std::nullopt : std::optional<double>(dm[k].get<double>()));
  }
  if (!cohort.empty()) {
    std::ifstream in(cohort);
    if (!in) throw Error("cannot open " + cohort);
    std::vector<double> dm, mpap, g0, g1;
    std::string line;
    int row = 0;
    while (std::getline(in, line)) {
      ++row;
      if (detail::trim(line).empty() || (row == 1 && line.find("dm") != std::string::npos)) continue;
      const auto v = parse_doubles(line);
      if (v.size() != 3) throw Error("cohort CSV row " + std::to_string(row) + ": expected dm,mpap,group");
      dm.push_back(v[0]);
      mpap.push_back(v[1]);
      (v[2] != 0 ? g1 : g0).push_back(v[0]);
    }
    put("spearman_rho", spearman(dm, mpap));
    const TTest t = two_sample_t(g1, g0, cfg.welch);
    put("t_statistic", t.t);
    put("p_value", t.p);
  }
  write_json(out / "eval_report.json", report);
  std::size_t w = 0;
  for (const auto& r : rows) w = std::max(w, r.first.size());
  std::string table;
  for (const auto& [k, v] : rows) table += k + std::string(w - k.size() + 2, ' ') + v + "\n";
  write_text(out / "eval_report.txt", table);
  std::cout << table;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Pulmonary vessel segmentation from chest CT"};
  app.require_subcommand(1);
  Common c;

  auto* pipeline = app.add_subcommand("pipeline", "run every stage");
  auto* airway = app.add_subcommand("airway", "airway growing and bronchus labeling");
  auto* lungs = app.add_subcommand("lungs", "left/right lung segmentation");
  auto* vesselness = app.add_subcommand("vesselness", "multi-scale offset medialness");
  auto* centerline = app.add_subcommand("centerline", "centerline extraction and reconnection");
  auto* segment = app.add_subcommand("segment", "radius estimation and vessel mask");
  auto* tortuosity = app.add_subcommand("tortuosity", "distance metric report");
  auto* phantom = app.add_subcommand("phantom", "tube phantom and noise sweep");
  auto* evaluate = app.add_subcommand("evaluate", "evaluation against ground truth");

  for (auto* cmd : {pipeline, airway, lungs, vesselness, centerline, segment}) add_common(cmd, c, true);
  for (auto* cmd : {tortuosity, phantom, evaluate}) add_common(cmd, c, false);
  for (auto* cmd : {pipeline, airway}) {
    cmd->add_option("--seed", c.seed, "trachea seed i,j,k");
    cmd->add_flag("--flip-lr", c.flip_lr, "swap left/right assignment");
  }
  pipeline->add_option("--heart", c.heart, "heart center i,j,k");
  centerline->add_option("--seed,--heart", c.heart, "heart center i,j,k");

  std::string spec_path, noise;
  bool sweep = false;
  phantom->add_option("--spec", spec_path, "phantom spec JSON")->required();
  phantom->add_option("--noise", noise, "comma-separated noise standard deviations (HU)");
  phantom->add_flag("--sweep", sweep, "run the pipeline at every noise level and write jaccard_vs_noise.csv");

  std::string prediction, truth, points, scores, cl, cohort;
  evaluate->add_option("--prediction", prediction, "predicted vessel mask");
  evaluate->add_option("--truth", truth, "ground-truth mask");
  evaluate->add_option("--points", points, "annotated points CSV x,y,z,label");
  evaluate->add_option("--scores", scores, "score volume for ROC (e.g. medialness.mhd)");
  evaluate->add_option("--centerline", cl, "centerline.json for distance metric");
  evaluate->add_option("--cohort", cohort, "CSV dm,mpap,group for correlation and t-test");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  PipelineConfig cfg;
  try {
    if (!c.config.empty()) cfg = load_config(c.config);
    if (c.flip_lr) cfg.flip_lr = true;
    cfg.validate();
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kConfigError;
  }
  set_thread_count(c.threads);

  try {
    const fs::path out = c.output;
    const auto seed = parse_point(c.seed, "seed");
    const auto heart = parse_point(c.heart, "heart");
    if (*pipeline) {
      run_pipeline(c.input, out, cfg, {seed, heart});
      return 0;
    }
    if (*tortuosity) {
      fs::create_directories(out);
      stage_tortuosity(out, cfg);
      return 0;
    }
    if (*phantom) return cmd_phantom(c, cfg, spec_path, noise, sweep);
    if (*evaluate) return cmd_evaluate(c, cfg, prediction, truth, points, scores, cl, cohort);

    const CtVolume ct = load_input(c.input);
    fs::create_directories(out);
    write_run_config(out, cfg);
    if (*airway) stage_airway(ct, out, cfg, seed);
    else if (*lungs) stage_lungs(ct, out, cfg);
    else if (*vesselness) stage_vesselness(ct, out, cfg);
    else if (*centerline) stage_centerline(ct, out, cfg, heart);
    else if (*segment) stage_segment(ct, out, cfg);
    return 0;
  } catch (const StageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code(e.stage());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
