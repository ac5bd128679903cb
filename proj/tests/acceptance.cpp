// Acceptance run: one PASS/FAIL line per criterion. Exit status 1 if any criterion fails.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <random>
#include <sstream>

#include <pvseg/pvseg.hpp>

using namespace pvseg;

namespace {

int failures = 0;

void report(int id, const char* what, bool ok, const std::string& detail) {
  std::cout << (ok ? "PASS" : "FAIL") << " " << id << " " << what << ": " << detail << std::endl;
  failures += ok ? 0 : 1;
}

std::string fmt(double v, int prec = 4) {
  std::ostringstream s;
  s.precision(prec);
  s << v;
  return s.str();
}

Mask everything(Dims d) {
  Mask m(d);
  m.fill(1);
  return m;
}

MedialnessField filter_all(const CtVolume& v, FilterConfig cfg = {}) { return run_filter(to_float(v), everything(v.dims()), cfg); }

CtVolume tube(Dims d, Vec3 a, Vec3 b, double r, double hu = 50, double bg = -850) {
  PhantomSpec s;
  s.dims = d;
  s.background_hu = bg;
  s.tubes.push_back({{a, b}, {r, r}, hu});
  return rasterize_tubes(s).ct;
}

// 1 ---------------------------------------------------------------------------------------

void noise_robustness() {
  const PhantomSpec spec = load_phantom_spec(fs::path(PVSEG_DATA_DIR) / "branching_phantom.json");
  const Phantom ph = rasterize_tubes(spec);
  const VoxelIndex root = phantom_root(spec);
  const PipelineConfig cfg;
  std::vector<double> j;
  double slowest = 0;
  std::string detail;
  for (double s : {0.0, 10.0, 20.0, 30.0, 40.0, 50.0}) {
    const auto t0 = std::chrono::steady_clock::now();
    const PhantomRun run = run_phantom_chain(add_gaussian_noise(ph.ct, {s, cfg.noise_seed}), root, cfg);
    slowest = std::max(slowest, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
    j.push_back(jaccard(run.segment.vessels, ph.truth));
    detail += "J(" + fmt(s, 3) + ")=" + fmt(j.back()) + " ";
  }
  bool ok = true;
  for (std::size_t n = 0; n < j.size(); ++n) {
    if (n < 5 && j[n] < 0.93) ok = false;  // std <= 40
    if (n && j[n] > j[n - 1] + 0.02) ok = false;
  }
  ok = ok && slowest < 60;
  report(1, "phantom noise robustness", ok, detail + "slowest level " + fmt(slowest, 3) + " s");
}

// 2 ---------------------------------------------------------------------------------------

void medialness_correctness() {
  const Dims d{40, 40, 40};
  const auto cyl = filter_all(tube(d, {20, 20, 3}, {20, 20, 36}, 3));
  int good = 0, slices = 0;
  double axis_sum = 0;
  for (int k = 6; k < 34; ++k, ++slices) {
    float best = -1;
    int bi = 0, bj = 0;
    for (int j = 0; j < d.y; ++j)
      for (int i = 0; i < d.x; ++i)
        if (cyl.response(i, j, k) > best) best = cyl.response(i, j, k), bi = i, bj = j;
    good += std::hypot(bi - 20, bj - 20) <= 1.0;
    axis_sum += cyl.response(20, 20, k);
  }
  const double axis_mean = axis_sum / slices;
  const double frac = double(good) / slices;

  // isolated edge: lung-like half space against vessel-like half space
  CtVolume edge(d, {1, 1, 1}, {0, 0, 0}, std::int16_t(-850));
  for (int k = 0; k < d.z; ++k)
    for (int j = 0; j < d.y; ++j)
      for (int i = 20; i < d.x; ++i) edge(i, j, k) = 50;
  const auto e = filter_all(edge);
  double esum = 0;
  int en = 0;
  for (int k = 6; k < 34; ++k)
    for (int j = 6; j < 34; ++j)
      for (int i = 14; i < 26; ++i, ++en) esum += e.response(i, j, k);  // band around the edge
  const double ratio = esum / en / axis_mean;
  report(2, "medialness correctness", frac >= 0.95 && ratio < 0.05,
         "argmax within 1 voxel on " + fmt(100 * frac) + "% of slices, edge/axis mean " + fmt(ratio));
}

// 3 ---------------------------------------------------------------------------------------

void invariance() {
  PhantomSpec spec;
  spec.dims = {36, 36, 36};
  spec.tubes.push_back({{{8, 10, 4}, {18, 18, 18}, {26, 24, 31}}, {3, 2.5, 2}, -400});
  spec.tubes.push_back({{{18, 18, 18}, {8, 28, 30}}, {2, 1.5}, -400});
  const FloatVolume f = to_float(add_gaussian_noise(rasterize_tubes(spec).ct, {20, 5}));
  const Mask all = everything(f.dims());
  const auto base = run_filter(f, all, FilterConfig{});
  FloatVolume scaled = f, shifted = f;
  for (auto& x : scaled.storage()) x *= 2.5f;
  for (auto& x : shifted.storage()) x += 137.0f;
  const auto s = run_filter(scaled, all, FilterConfig{});
  const auto o = run_filter(shifted, all, FilterConfig{});
  float peak = 0;
  for (float x : base.response.storage()) peak = std::max(peak, x);
  double rel = 0;
  for (std::size_t n = 0; n < f.size(); ++n)
    rel = std::max(rel, std::abs(double(s.response[n]) - 2.5 * base.response[n]) / (2.5 * peak));
  const bool offset_exact = o.response.storage() == base.response.storage();

  // 30 degree tilt, ridge values averaged over sub-voxel axis offsets
  const Dims dims{48, 48, 48};
  auto mean_on_axis = [&](const Vec3& axis) {
    double sum = 0;
    int n = 0;
    for (int ox = 0; ox < 3; ++ox)
      for (int oy = 0; oy < 3; ++oy) {
        const Vec3 mid{24 + ox / 3.0, 24 + oy / 3.0, 24};
        const auto field = filter_all(tube(dims, mid - 20.0 * axis, mid + 20.0 * axis, 3, -550));
        for (double t = -8; t <= 8; t += 1, ++n) {
          const Vec3 p = mid + t * axis;
          float best = 0;
          for (int k = int(p[2]) - 1; k <= int(p[2]) + 2; ++k)
            for (int j = int(p[1]) - 1; j <= int(p[1]) + 2; ++j)
              for (int i = int(p[0]) - 1; i <= int(p[0]) + 2; ++i)
                if (norm(Vec3{double(i), double(j), double(k)} - p) <= 1.0) best = std::max(best, field.response(i, j, k));
          sum += best;
        }
      }
    return sum / n;
  };
  const double a = std::numbers::pi / 6;
  const double straight = mean_on_axis({0, 0, 1}), rotated = mean_on_axis({std::sin(a), 0, std::cos(a)});
  const double drift = std::abs(rotated - straight) / straight;
  report(3, "homogeneity and invariance", offset_exact && rel < 1e-5 && drift < 0.10,
         std::string("offset ") + (offset_exact ? "exact" : "NOT exact") + ", contrast rel err " + fmt(rel) +
             ", 30 deg drift " + fmt(100 * drift) + "%");
}

// 4 ---------------------------------------------------------------------------------------

bool eigen_oracle() {
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> u(-500, 500);
  for (int t = 0; t < 1000; ++t) {
    Matrix3 h;
    for (int a = 0; a < 3; ++a)
      for (int b = a; b < 3; ++b) h[a][b] = h[b][a] = u(rng);
    const auto f = eigen_symmetric3(h);
    double err = 0, scale = 0;
    for (int a = 0; a < 3; ++a)
      for (int b = 0; b < 3; ++b) {
        double m = 0;
        for (int e = 0; e < 3; ++e) m += f.values[e] * f.vectors[e][a] * f.vectors[e][b];
        err += (m - h[a][b]) * (m - h[a][b]);
        scale += h[a][b] * h[a][b];
      }
    if (std::sqrt(err) > 1e-9 * std::sqrt(scale)) return false;
  }
  return true;
}

bool otsu_oracle() {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 30; ++trial) {
    std::normal_distribution<double> a(-800 + 50 * (trial % 5), 60), b(20, 80);
    std::bernoulli_distribution pick(0.3 + 0.02 * trial);
    CtVolume v({16, 16, 16});
    for (auto& x : v.storage()) x = std::int16_t(std::lround(pick(rng) ? a(rng) : b(rng)));
    const int bins = 64 + trial;
    const auto h = make_histogram(v, bins);
    double best = -1, best_t = 0;
    for (int k = 1; k < bins; ++k) {
      double w0 = 0, w1 = 0, s0 = 0, s1 = 0;
      for (int q = 0; q < bins; ++q) {
        const double c = h.min + (q + 0.5) * h.width;
        (q < k ? w0 : w1) += double(h.counts[q]);
        (q < k ? s0 : s1) += double(h.counts[q]) * c;
      }
      if (w0 == 0 || w1 == 0) continue;
      const double tot = w0 + w1, dm = s0 / w0 - s1 / w1;
      const double between = (w0 / tot) * (w1 / tot) * dm * dm;
      if (between > best * (1 + 1e-12)) best = between, best_t = h.edge(k);
    }
    if (otsu_threshold(v, bins) != best_t) return false;
  }
  return true;
}

Mask random_mask(Dims d, double p, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution b(p);
  Mask m(d);
  for (auto& x : m.storage()) x = b(rng) ? 1 : 0;
  return m;
}

bool components_oracle() {
  for (int trial = 0; trial < 20; ++trial) {
    const Dims d{11, 9, 7};
    const Mask m = random_mask(d, 0.2 + 0.02 * trial, 100 + trial);
    for (auto conn : {Connectivity::N6, Connectivity::N26}) {
      // plain BFS labelling
      std::vector<int> lab(m.size(), 0);
      int next = 0;
      for (std::size_t s = 0; s < m.size(); ++s) {
        if (!m[s] || lab[s]) continue;
        lab[s] = ++next;
        std::vector<std::size_t> q{s};
        for (std::size_t h = 0; h < q.size(); ++h)
          for (const auto& w : neighbors(m.voxel(q[h]), conn, d))
            if (m[w] && !lab[m.index(w)]) lab[m.index(w)] = next, q.push_back(m.index(w));
      }
      const auto c = connected_components<std::uint8_t>(m, 1, conn);
      if (c.count() != std::size_t(next)) return false;
      std::map<int, int> fwd, back;
      for (std::size_t n = 0; n < m.size(); ++n) {
        if (!m[n]) {
          if (c.ids[n] != 0) return false;
          continue;
        }
        const auto [it, fresh] = fwd.emplace(lab[n], c.ids[n]);
        const auto [jt, fresh2] = back.emplace(c.ids[n], lab[n]);
        if (it->second != c.ids[n] || jt->second != lab[n]) return false;
      }
    }
  }
  return true;
}

bool dijkstra_oracle() {
  std::mt19937_64 rng(77);
  std::uniform_int_distribution<int> side(2, 10);
  std::uniform_real_distribution<double> cost(0.1, 5.0);
  for (int trial = 0; trial < 100; ++trial) {
    const Dims d{side(rng), side(rng), side(rng)};
    const Mask region = random_mask(d, 0.75, 1000 + trial);
    FloatVolume c(d);
    for (auto& x : c.storage()) x = float(cost(rng));
    std::vector<VoxelIndex> sources;
    std::uniform_int_distribution<std::size_t> any(0, region.size() - 1);
    for (int s = 0; s < 1 + trial % 3; ++s) sources.push_back(region.voxel(any(rng)));
    const auto conn = trial % 2 ? Connectivity::N26 : Connectivity::N6;
    const auto sp = grid_dijkstra(region, c, sources, conn);
    std::vector<double> bf(region.size(), std::numeric_limits<double>::infinity());
    for (const auto& s : sources)
      if (region[s]) bf[region.index(s)] = 0;
    for (bool changed = true; changed;) {
      changed = false;
      for (std::size_t u = 0; u < region.size(); ++u) {
        if (!region[u] || !std::isfinite(bf[u])) continue;
        const VoxelIndex a = region.voxel(u);
        for (const auto& w : neighbors(a, conn, d)) {
          const std::size_t m = region.index(w);
          if (!region[m]) continue;
          const double len = std::sqrt(double((w.i - a.i) * (w.i - a.i) + (w.j - a.j) * (w.j - a.j) + (w.k - a.k) * (w.k - a.k)));
          const double nd = bf[u] + 0.5 * (double(c[u]) + double(c[m])) * len;
          if (nd < bf[m]) bf[m] = nd, changed = true;
        }
      }
    }
    for (std::size_t n = 0; n < region.size(); ++n) {
      if (std::isinf(bf[n]) != std::isinf(sp.dist[n])) return false;
      if (std::isfinite(bf[n]) && std::abs(bf[n] - sp.dist[n]) > 1e-9) return false;
    }
  }
  return true;
}

bool roc_oracle() {
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> u(0, 1);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> s(200);
    std::vector<int> l(200);
    for (int n = 0; n < 200; ++n) l[n] = u(rng) < 0.4, s[n] = std::round((u(rng) + 0.3 * l[n]) * (trial % 2 ? 20 : 1e6));
    double num = 0, den = 0;
    for (int a = 0; a < 200; ++a)
      for (int b = 0; b < 200; ++b)
        if (l[a] == 1 && l[b] == 0) den += 1, num += s[a] > s[b] ? 1.0 : (s[a] == s[b] ? 0.5 : 0.0);
    if (std::abs(roc_az(s, l).az - num / den) > 1e-12) return false;
  }
  return true;
}

bool spearman_oracle() {
  std::mt19937_64 rng(8);
  std::uniform_int_distribution<int> small(0, 12);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> a(50), b(50);
    for (int n = 0; n < 50; ++n) a[n] = small(rng), b[n] = small(rng) + 0.3 * a[n];
    auto ranks = [](const std::vector<double>& v) {
      std::vector<double> r(v.size());
      for (std::size_t i = 0; i < v.size(); ++i) {
        double less = 0, equal = 0;
        for (double w : v) less += w < v[i], equal += w == v[i];
        r[i] = less + (equal + 1) / 2;
      }
      return r;
    };
    const auto ra = ranks(a), rb = ranks(b);
    double ma = 0, mb = 0, sab = 0, saa = 0, sbb = 0;
    for (int n = 0; n < 50; ++n) ma += ra[n] / 50, mb += rb[n] / 50;
    for (int n = 0; n < 50; ++n)
      sab += (ra[n] - ma) * (rb[n] - mb), saa += (ra[n] - ma) * (ra[n] - ma), sbb += (rb[n] - mb) * (rb[n] - mb);
    if (std::abs(spearman(a, b) - sab / std::sqrt(saa * sbb)) > 1e-12) return false;
  }
  return true;
}

void oracles() {
  const std::pair<const char*, bool> r[] = {{"eigen", eigen_oracle()},       {"otsu", otsu_oracle()},
                                            {"components", components_oracle()}, {"dijkstra", dijkstra_oracle()},
                                            {"roc", roc_oracle()},           {"spearman", spearman_oracle()}};
  bool ok = true;
  std::string detail;
  for (const auto& [name, pass] : r) {
    ok = ok && pass;
    detail += std::string(name) + (pass ? " ok " : " MISMATCH ");
  }
  report(4, "oracle equivalences", ok, detail);
}

// 5 ---------------------------------------------------------------------------------------

void airway_leak() {
  // Air tube joined by a 1-voxel channel to a -995 HU cavity; the growing window reaches
  // -995 HU at iteration 6.
  CtVolume v({64, 40, 40}, {1, 1, 1}, {0, 0, 0}, std::int16_t(40));
  for (int k = 0; k < 40; ++k)
    for (int j = 0; j < 40; ++j)
      for (int i = 0; i < 64; ++i)
        if (std::hypot(i - 8, j - 20) <= 4.0) v(i, j, k) = -1000;
  for (int i = 12; i < 20; ++i) v(i, 20, 20) = -1000;
  for (int k = 5; k < 35; ++k)
    for (int j = 5; j < 35; ++j)
      for (int i = 20; i < 60; ++i) v(i, j, k) = -995;
  GrowParams p;
  p.seed = {8, 20, 20};
  p.stall_iterations = 100;
  const auto res = grow_airway(v, p);
  std::size_t cavity = 0;
  for (std::size_t n = 0; n < v.size(); ++n) cavity += res.mask[n] && v[n] == -995;
  const bool ok = res.stop == GrowStop::Leak && std::abs(res.leak_iteration - 6) <= 1 && cavity == 0;
  report(5, "airway leakage", ok,
         "stop " + std::string(res.stop == GrowStop::Leak ? "leak" : "other") + " at iteration " +
             std::to_string(res.leak_iteration) + " (breach 6), cavity voxels " + std::to_string(cavity));
}

// 6 ---------------------------------------------------------------------------------------

void distance_metric_check() {
  const double straight = distance_metric({{0, 0, 0}, {1, 2, 3}, {2, 4, 6}});
  BranchPath arc;
  for (int s = 0; s <= 64; ++s) arc.push_back({10 * std::cos(std::numbers::pi * s / 64), 10 * std::sin(std::numbers::pi * s / 64), 0});
  const double semi = distance_metric(arc);
  const double semi_err = std::abs(semi / (std::numbers::pi / 2) - 1);
  std::mt19937_64 rng(4);
  std::normal_distribution<double> g(0, 5);
  double worst = 0;
  for (int trial = 0; trial < 200; ++trial) {
    BranchPath p;
    for (int n = 0; n < 2 + trial % 9; ++n) p.push_back({g(rng), g(rng), g(rng)});
    double q[4] = {g(rng), g(rng), g(rng), g(rng)};
    const double qn = std::sqrt(q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]);
    for (double& x : q) x /= qn;
    const auto [w, x, y, z] = q;
    const double R[3][3] = {{1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)},
                            {2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)},
                            {2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)}};
    const Vec3 t{g(rng), g(rng), g(rng)};
    BranchPath moved;
    for (const auto& v : p)
      moved.push_back(Vec3{R[0][0] * v[0] + R[0][1] * v[1] + R[0][2] * v[2], R[1][0] * v[0] + R[1][1] * v[1] + R[1][2] * v[2],
                           R[2][0] * v[0] + R[2][1] * v[1] + R[2][2] * v[2]} + t);
    worst = std::max(worst, std::abs(distance_metric(moved) - distance_metric(p)));
  }
  report(6, "distance metric", straight == 1.0 && semi_err < 0.005 && worst < 1e-9,
         "straight " + fmt(straight, 17) + ", semicircle " + fmt(semi, 6) + " (" + fmt(100 * semi_err) +
             "% off pi/2), rigid max diff " + fmt(worst));
}

// 7 ---------------------------------------------------------------------------------------

std::map<std::string, std::string> artifacts(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().filename() != artifact::kTiming) {
      std::ifstream in(e.path(), std::ios::binary);
      out[e.path().filename().string()] = {std::istreambuf_iterator<char>(in), {}};
    }
  return out;
}

void determinism() {
  const fs::path root = fs::temp_directory_path() / ("pvseg_acceptance_" + std::to_string(std::random_device{}()));
  fs::create_directories(root);
  TorsoSpec ts;
  ts.size = 64;
  save_metaimage(make_torso(ts).ct, root / "ct.mhd");
  std::map<std::string, std::string> first;
  bool same = true;
  for (int workers : {1, 2, 8}) {
    set_thread_count(workers);
    const fs::path out = root / ("w" + std::to_string(workers));
    run_pipeline(root / "ct.mhd", out, PipelineConfig{});
    const auto files = artifacts(out);
    if (first.empty()) first = files;
    else same = same && files == first;
  }
  set_thread_count(0);
  fs::remove_all(root);

  PhantomSpec spec;
  spec.dims = {36, 32, 41};
  spec.tubes.push_back({{{6, 8, 4}, {18, 16, 20}, {28, 20, 36}}, {3, 2, 1.5}, -500});
  spec.tubes.push_back({{{18, 16, 20}, {8, 26, 34}}, {2, 1.5}, -500});
  const auto ct = add_gaussian_noise(rasterize_tubes(spec).ct, {30, 9});
  const auto whole = filter_all(ct);
  bool tiled_same = true;
  for (int tile : {1, 7, 16}) {
    FilterConfig cfg;
    cfg.tile_slices = tile;
    const auto t = filter_all(ct, cfg);
    tiled_same = tiled_same && t.response.storage() == whole.response.storage() &&
                 t.argmax.storage() == whole.argmax.storage() && t.radius.storage() == whole.radius.storage() &&
                 t.direction.x.storage() == whole.direction.x.storage() &&
                 t.direction.y.storage() == whole.direction.y.storage() &&
                 t.direction.z.storage() == whole.direction.z.storage();
  }
  report(7, "determinism and tiling", same && tiled_same,
         std::string("pipeline artifacts across 1/2/8 workers ") + (same ? "identical" : "DIFFER") +
             ", tiled medialness (1, 7, 16 slices) " + (tiled_same ? "identical" : "DIFFERS"));
}

// 8 ---------------------------------------------------------------------------------------

void radius_sweep() {
  bool ok = true;
  std::string detail;
  for (int r = 2; r <= 6; ++r) {
    const int n = 40;
    const FloatVolume vol = to_float(tube({n, n, n}, {20, 20, r + 0.5}, {20, 20, n - 1.5 - r}, r));
    const double got = estimate_radius(vol, {20, 20, 20}).radius_voxels;
    ok = ok && std::abs(got - r) <= 0.5;
    detail += std::to_string(r) + "->" + fmt(got) + " ";
  }
  report(8, "radius estimation", ok, detail);
}

}  // namespace

int main() {
  try {
    noise_robustness();
    medialness_correctness();
    invariance();
    oracles();
    airway_leak();
    distance_metric_check();
    determinism();
    radius_sweep();
  } catch (const std::exception& e) {
    std::cout << "FAIL acceptance aborted: " << e.what() << std::endl;
    return 1;
  }
  return failures ? 1 : 0;
}
