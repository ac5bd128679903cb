/// @file airway.hpp
/// @brief Trachea seed detection, iterative region growing with the dual (total and
///        edge voxel) leakage criterion, and skeleton-based carina labeling.

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "imageops.hpp"
#include "volume.hpp"

namespace pvseg {

// ---------------------------------------------------------------------------
// Seed detection
// ---------------------------------------------------------------------------

struct SeedSearch {
  double air_hu = -900;  // dark voxels are strictly below this
  int min_area = 20;
  int max_area = 1500;
  double min_circularity = 0.5;
};

struct DarkRegion {
  std::vector<VoxelIndex> pixels;
  double perimeter = 0;
  double circularity = 0;
};

namespace detail {

/// 4-connected dark components of slice k with crack-length perimeters.
template <class T>
std::vector<DarkRegion> dark_regions(const Volume<T>& vol, int k, double air_hu) {
  const Dims d = vol.dims();
  std::vector<int> comp(static_cast<std::size_t>(d.x) * d.y, -1);
  auto dark = [&](int i, int j) { return i >= 0 && j >= 0 && i < d.x && j < d.y && double(vol(i, j, k)) < air_hu; };
  std::vector<DarkRegion> out;
  for (int j = 0; j < d.y; ++j)
    for (int i = 0; i < d.x; ++i) {
      if (!dark(i, j) || comp[j * d.x + i] >= 0) continue;
      DarkRegion r;
      const int id = static_cast<int>(out.size());
      comp[j * d.x + i] = id;
      r.pixels.push_back({i, j, k});
      int edges = 0;
      for (std::size_t q = 0; q < r.pixels.size(); ++q) {
        const auto p = r.pixels[q];
        static constexpr int di[4] = {1, -1, 0, 0}, dj[4] = {0, 0, 1, -1};
        for (int n = 0; n < 4; ++n) {
          const int a = p.i + di[n], b = p.j + dj[n];
          if (!dark(a, b)) {
            ++edges;
            continue;
          }
          if (comp[b * d.x + a] < 0) {
            comp[b * d.x + a] = id;
            r.pixels.push_back({a, b, k});
          }
        }
      }
      // crack length overestimates Euclidean perimeter by 4/pi on average
      r.perimeter = edges * std::numbers::pi / 4.0;
      const double area = double(r.pixels.size());
      r.circularity = 4.0 * std::numbers::pi * area / (r.perimeter * r.perimeter);
      out.push_back(std::move(r));
    }
  return out;
}

}  // namespace detail

/// Centroid of the most circular dark component on the top-most slice, snapped to the
/// nearest dark voxel of that component.
template <class T>
VoxelIndex detect_trachea_seed(const Volume<T>& vol, const SeedSearch& search = {}) {
  const int k = vol.dims().z - 1;
  const DarkRegion* best = nullptr;
  const auto regions = detail::dark_regions(vol, k, search.air_hu);
  for (const auto& r : regions) {
    const int area = static_cast<int>(r.pixels.size());
    if (area < search.min_area || area > search.max_area || r.circularity < search.min_circularity) continue;
    if (!best || r.circularity > best->circularity) best = &r;
  }
  if (!best) throw Error("trachea seed: no circular dark region on the top slice; supply a seed");
  double ci = 0, cj = 0;
  for (const auto& p : best->pixels) {
    ci += p.i;
    cj += p.j;
  }
  ci /= double(best->pixels.size());
  cj /= double(best->pixels.size());
  VoxelIndex snap = best->pixels.front();
  double best_d = std::numeric_limits<double>::max();
  for (const auto& p : best->pixels) {
    const double dd = (p.i - ci) * (p.i - ci) + (p.j - cj) * (p.j - cj);
    if (dd < best_d) {
      best_d = dd;
      snap = p;
    }
  }
  return snap;
}

// ---------------------------------------------------------------------------
// Region growing
// ---------------------------------------------------------------------------

struct GrowParams {
  VoxelIndex seed;
  /// Initial open interval; unset means I(seed) -/+ step.
  std::optional<double> th_min, th_max;
  double step = 1.0;
  double leak_factor = 3.0;
  int max_iterations = 1000;
  /// Stop after this many consecutive iterations without growth.
  int stall_iterations = 5;
  /// Seeds at or above this intensity are rejected unless thresholds are given explicitly.
  double max_seed_hu = -500;
};

struct GrowTraceRow {
  int t = 0;
  double th_min = 0, th_max = 0;
  std::size_t total = 0;  // V_t
  std::size_t edge = 0;   // E_t
};

enum class GrowStop { Leak, Stall, MaxIterations };

struct GrowResult {
  Mask mask;
  std::vector<GrowTraceRow> trace;
  GrowStop stop = GrowStop::MaxIterations;
  int leak_iteration = 0;  // iteration that triggered the leak criterion, 0 if none
};

/// Iterative N6 region growing: at iteration t the open interval widens by `step` on both
/// sides and growth restarts from the previous segmentation. Growth stops when V_t or E_t
/// exceeds leak_factor times the mean of its previous values; the mask of t - 1 is returned.
template <class T>
GrowResult grow_airway(const Volume<T>& vol, const GrowParams& params) {
  const Dims d = vol.dims();
  if (!in_bounds(params.seed, d)) throw Error("grow_airway: seed outside the volume");
  if (!(params.leak_factor > 1)) throw Error("grow_airway: leak_factor must exceed 1");
  if (!(params.step > 0)) throw Error("grow_airway: step must be positive");
  const double seed_value = double(vol[params.seed]);
  if (!params.th_min && !params.th_max && seed_value >= params.max_seed_hu)
    throw Error("grow_airway: seed intensity " + std::to_string(seed_value) + " HU is not air");
  double lo = params.th_min.value_or(seed_value - params.step);
  double hi = params.th_max.value_or(seed_value + params.step);
  if (lo > hi) throw Error("grow_airway: th_min > th_max");

  GrowResult res;
  res.mask = Mask::like(vol, 0);
  Mask& mask = res.mask;
  std::vector<std::size_t> members;     // all segmented voxels in insertion order
  std::vector<std::size_t> candidates;  // rejected neighbors of the segmentation
  Mask is_candidate = Mask::like(vol, 0);
  auto inside = [&](std::size_t n) {
    const double v = double(vol[n]);
    return lo < v && v < hi;
  };

  double sum_total = 0, sum_edge = 0;
  int stalled = 0;
  for (int t = 1; t <= params.max_iterations; ++t) {
    if (t > 1) {
      lo -= params.step;
      hi += params.step;
    }
    const std::size_t before = members.size();
    std::vector<std::size_t> queue;
    if (t == 1) {
      const std::size_t s = vol.index(params.seed);
      if (!inside(s)) throw Error("grow_airway: seed fails the initial threshold (empty segmentation)");
      mask[s] = 1;
      queue.push_back(s);
    } else {
      std::vector<std::size_t> keep;
      for (std::size_t c : candidates) {
        if (mask[c]) continue;
        if (inside(c)) {
          mask[c] = 1;
          is_candidate[c] = 0;
          queue.push_back(c);
        } else {
          keep.push_back(c);
        }
      }
      candidates.swap(keep);
    }
    for (std::size_t q = 0; q < queue.size(); ++q) {
      members.push_back(queue[q]);
      for (const auto& w : neighbors(vol.voxel(queue[q]), Connectivity::N6, d)) {
        const std::size_t m = vol.index(w);
        if (mask[m]) continue;
        if (inside(m)) {
          mask[m] = 1;
          queue.push_back(m);
        } else if (!is_candidate[m]) {
          is_candidate[m] = 1;
          candidates.push_back(m);
        }
      }
    }
    // candidates can become members through another path
    std::erase_if(candidates, [&](std::size_t c) { return mask[c] != 0; });

    std::size_t edge = 0;
    for (std::size_t n : members) {
      for (const auto& w : neighbors(vol.voxel(n), Connectivity::N6, d))
        if (!mask[vol.index(w)]) {
          ++edge;
          break;
        }
    }
    const GrowTraceRow row{t, lo, hi, members.size(), edge};
    res.trace.push_back(row);

    if (t > 1) {
      const double mean_total = sum_total / (t - 1), mean_edge = sum_edge / (t - 1);
      if (double(row.total) > params.leak_factor * mean_total || double(row.edge) > params.leak_factor * mean_edge) {
        for (std::size_t n = before; n < members.size(); ++n) mask[members[n]] = 0;
        res.stop = GrowStop::Leak;
        res.leak_iteration = t;
        return res;
      }
    }
    sum_total += double(row.total);
    sum_edge += double(row.edge);
    if (t > 1 && members.size() == before) {
      if (++stalled >= params.stall_iterations) {
        res.stop = GrowStop::Stall;
        return res;
      }
    } else {
      stalled = 0;
    }
  }
  res.stop = GrowStop::MaxIterations;
  return res;
}

// ---------------------------------------------------------------------------
// Skeleton and carina
// ---------------------------------------------------------------------------

namespace detail {

/// Position in the 3x3x3 cube, center = 13.
constexpr int cube_index(int di, int dj, int dk) { return (dk + 1) * 9 + (dj + 1) * 3 + (di + 1); }

struct CubeTables {
  std::array<std::vector<int>, 27> adj26, adj6;
  std::array<bool, 27> in18{}, face{};
  CubeTables() {
    for (int a = 0; a < 27; ++a) {
      const int ai = a % 3 - 1, aj = (a / 3) % 3 - 1, ak = a / 9 - 1;
      const int manhattan = std::abs(ai) + std::abs(aj) + std::abs(ak);
      in18[a] = a != 13 && manhattan <= 2;
      face[a] = manhattan == 1;
      for (int b = 0; b < 27; ++b) {
        if (a == b || b == 13 || a == 13) continue;
        const int bi = b % 3 - 1, bj = (b / 3) % 3 - 1, bk = b / 9 - 1;
        const int di = std::abs(ai - bi), dj = std::abs(aj - bj), dk = std::abs(ak - bk);
        if (std::max({di, dj, dk}) == 1) adj26[a].push_back(b);
        if (di + dj + dk == 1) adj6[a].push_back(b);
      }
    }
  }
};

inline const CubeTables& cube_tables() {
  static const CubeTables t;
  return t;
}

/// Simple point test (26-connected foreground, 6-connected background).
inline bool is_simple(const std::array<bool, 27>& nb) {
  const auto& t = cube_tables();
  std::array<bool, 27> seen{};
  int fg_components = 0;
  std::array<int, 27> stack{};
  for (int s = 0; s < 27; ++s) {
    if (s == 13 || !nb[s] || seen[s]) continue;
    if (++fg_components > 1) return false;
    int top = 0;
    stack[top++] = s;
    seen[s] = true;
    while (top) {
      const int a = stack[--top];
      for (int b : t.adj26[a])
        if (nb[b] && !seen[b]) {
          seen[b] = true;
          stack[top++] = b;
        }
    }
  }
  if (fg_components != 1) return false;
  seen = {};
  int bg_components = 0;
  for (int s = 0; s < 27; ++s) {
    if (!t.face[s] || nb[s] || seen[s]) continue;
    if (++bg_components > 1) return false;
    int top = 0;
    stack[top++] = s;
    seen[s] = true;
    while (top) {
      const int a = stack[--top];
      for (int b : t.adj6[a])
        if (t.in18[b] && !nb[b] && !seen[b]) {
          seen[b] = true;
          stack[top++] = b;
        }
    }
  }
  return bg_components == 1;
}

inline std::array<bool, 27> cube_of(const Mask& m, const VoxelIndex& v) {
  std::array<bool, 27> nb{};
  const Dims d = m.dims();
  for (int dk = -1; dk <= 1; ++dk)
    for (int dj = -1; dj <= 1; ++dj)
      for (int di = -1; di <= 1; ++di) {
        const VoxelIndex w{v.i + di, v.j + dj, v.k + dk};
        nb[cube_index(di, dj, dk)] = in_bounds(w, d) && m[w] != 0;
      }
  return nb;
}

inline int skeleton_degree(const Mask& m, const VoxelIndex& v) {
  int n = 0;
  for (const auto& w : neighbors(v, Connectivity::N26, m.dims())) n += m[w] ? 1 : 0;
  return n;
}

}  // namespace detail

/// Topology-preserving directional peeling to a one-voxel-wide curve skeleton.
/// Endpoints (one N26 neighbor) are kept so branches do not shrink.
inline Mask thin_to_skeleton(const Mask& mask) {
  Mask skel = mask;
  const Dims d = mask.dims();
  std::vector<std::size_t> live;
  for (std::size_t n = 0; n < skel.size(); ++n)
    if (skel[n]) live.push_back(n);
  static constexpr std::array<std::array<int, 3>, 6> dirs = {
      {{0, 0, 1}, {0, 0, -1}, {0, 1, 0}, {0, -1, 0}, {1, 0, 0}, {-1, 0, 0}}};
  bool changed = true;
  while (changed) {
    changed = false;
    for (const auto& dir : dirs) {
      std::vector<std::size_t> border;
      for (std::size_t n : live) {
        if (!skel[n]) continue;
        const VoxelIndex v = skel.voxel(n);
        const VoxelIndex w{v.i + dir[0], v.j + dir[1], v.k + dir[2]};
        if (in_bounds(w, d) && skel[w]) continue;
        border.push_back(n);
      }
      for (std::size_t n : border) {
        const VoxelIndex v = skel.voxel(n);
        if (detail::skeleton_degree(skel, v) <= 1) continue;
        if (!detail::is_simple(detail::cube_of(skel, v))) continue;
        skel[n] = 0;
        changed = true;
      }
      std::erase_if(live, [&](std::size_t n) { return skel[n] == 0; });
    }
  }
  return skel;
}

namespace detail {

/// Walks from an endpoint along degree-2 voxels. Returns the chain (endpoint first) and
/// the voxel where the walk stopped (a junction, or the other endpoint).
inline std::pair<std::vector<VoxelIndex>, VoxelIndex> walk_chain(const Mask& skel, const VoxelIndex& start) {
  std::vector<VoxelIndex> chain{start};
  Mask visited = Mask::like(skel, 0);
  visited[start] = 1;
  VoxelIndex cur = start;
  while (true) {
    std::optional<VoxelIndex> next;
    for (const auto& w : neighbors(cur, Connectivity::N26, skel.dims()))
      if (skel[w] && !visited[w]) {
        next = w;
        break;
      }
    if (!next) return {chain, cur};
    cur = *next;
    visited[cur] = 1;
    if (skeleton_degree(skel, cur) >= 3) return {chain, cur};
    chain.push_back(cur);
  }
}

inline std::vector<VoxelIndex> endpoints(const Mask& skel) {
  std::vector<VoxelIndex> out;
  for (std::size_t n = 0; n < skel.size(); ++n)
    if (skel[n] && skeleton_degree(skel, skel.voxel(n)) == 1) out.push_back(skel.voxel(n));
  return out;
}

/// Topmost endpoint: maximal k, ties by raster order.
inline std::optional<VoxelIndex> top_endpoint(const Mask& skel) {
  std::optional<VoxelIndex> best;
  for (const auto& e : endpoints(skel))
    if (!best || e.k > best->k) best = e;
  return best;
}

}  // namespace detail

/// Removes terminal chains shorter than `min_length` voxels, except the trachea chain.
inline Mask prune_spurs(Mask skel, int min_length) {
  for (int pass = 0; pass < 8; ++pass) {
    const auto top = detail::top_endpoint(skel);
    bool removed = false;
    for (const auto& e : detail::endpoints(skel)) {
      if (top && e == *top) continue;
      if (!skel[e]) continue;
      auto [chain, stop] = detail::walk_chain(skel, e);
      const bool reached_junction = detail::skeleton_degree(skel, stop) >= 3;
      if (reached_junction && static_cast<int>(chain.size()) < min_length) {
        for (const auto& v : chain) skel[v] = 0;
        removed = true;
      }
    }
    if (!removed) break;
  }
  return skel;
}

struct AirwayTree {
  Mask mask;            // segmented airway
  Mask skeleton;        // subset of mask
  VoxelIndex carina;
  LabelVolume branches; // skeleton voxels labeled trachea / left / right
  LabelVolume labels;   // every airway voxel labeled by its nearest skeleton branch
};

struct SkeletonOptions {
  int spur_length = 5;
  /// Left is the side of larger x by default.
  bool flip_lr = false;
};

/// Skeletonizes the airway, finds the carina (first junction below the topmost endpoint)
/// and labels the sub-trees below it by the x of their centroid.
inline AirwayTree skeletonize_and_label(const Mask& mask, const SkeletonOptions& opt = {}) {
  AirwayTree tree;
  tree.mask = mask;
  tree.skeleton = prune_spurs(thin_to_skeleton(mask), opt.spur_length);
  const Mask& skel = tree.skeleton;
  const auto top = detail::top_endpoint(skel);
  if (!top) throw Error("airway skeleton has no endpoint");
  const auto [trachea_chain, stop] = detail::walk_chain(skel, *top);
  if (detail::skeleton_degree(skel, stop) < 3) throw Error("carina not found: airway skeleton has no junction");
  tree.carina = stop;

  // junction cluster around the carina
  Mask junction = Mask::like(skel, 0);
  std::vector<VoxelIndex> cluster{stop};
  junction[stop] = 1;
  for (std::size_t q = 0; q < cluster.size(); ++q)
    for (const auto& w : neighbors(cluster[q], Connectivity::N26, skel.dims()))
      if (skel[w] && !junction[w] && detail::skeleton_degree(skel, w) >= 3) {
        junction[w] = 1;
        cluster.push_back(w);
      }

  Mask rest = mask_and_not(skel, junction);
  const Components comps = connected_components<std::uint8_t>(rest, 1, Connectivity::N26);
  const int trachea_id = comps.ids[*top];
  std::vector<double> sum_x(comps.count() + 1, 0.0), count(comps.count() + 1, 0.0);
  for (std::size_t n = 0; n < rest.size(); ++n)
    if (comps.ids[n] > 0) {
      sum_x[comps.ids[n]] += rest.voxel(n).i;
      count[comps.ids[n]] += 1;
    }
  tree.branches = LabelVolume(skel.dims(), skel.spacing(), skel.origin());
  bool have_left = false, have_right = false;
  for (std::size_t n = 0; n < rest.size(); ++n) {
    if (junction[n]) tree.branches[n] = label::kAirway;
    const int id = comps.ids[n];
    if (id <= 0) continue;
    if (id == trachea_id) {
      tree.branches[n] = label::kAirway;
      continue;
    }
    const double cx = sum_x[id] / count[id];
    const bool larger_x = cx > tree.carina.i;
    const bool left = opt.flip_lr ? !larger_x : larger_x;
    tree.branches[n] = left ? label::kLeft : label::kRight;
    (left ? have_left : have_right) = true;
  }
  if (!have_left || !have_right) throw Error("carina found but the main bronchi could not be split left/right");

  // propagate branch labels through the airway mask (N6 multi-source BFS in raster order)
  tree.labels = LabelVolume(mask.dims(), mask.spacing(), mask.origin());
  std::vector<std::size_t> queue;
  for (std::size_t n = 0; n < mask.size(); ++n)
    if (tree.branches[n]) {
      tree.labels[n] = tree.branches[n];
      queue.push_back(n);
    }
  for (std::size_t q = 0; q < queue.size(); ++q)
    for (const auto& w : neighbors(mask.voxel(queue[q]), Connectivity::N6, mask.dims())) {
      const std::size_t m = mask.index(w);
      if (mask[m] && !tree.labels[m]) {
        tree.labels[m] = tree.labels[queue[q]];
        queue.push_back(m);
      }
    }
  for (std::size_t n = 0; n < mask.size(); ++n)
    if (mask[n] && !tree.labels[n]) tree.labels[n] = label::kAirway;
  return tree;
}

}  // namespace pvseg
