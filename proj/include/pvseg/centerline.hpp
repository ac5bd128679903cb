/// @file centerline.hpp
/// @brief Non-maximum suppression of the medialness field, fragment pruning, heart
///        center detection and per-lung shortest-path reconnection into trees.

#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <optional>
#include <queue>
#include <unordered_map>
#include <vector>

#include "imageops.hpp"
#include "lungs.hpp"
#include "medialness.hpp"
#include "volume.hpp"

namespace pvseg {

/// Two unit vectors spanning the plane perpendicular to `axis`.
inline std::pair<Vec3, Vec3> perpendicular_basis(const Vec3& axis) {
  const Vec3 a = (1.0 / norm(axis)) * axis;
  int least = 0;
  for (int c = 1; c < 3; ++c)
    if (std::abs(a[c]) < std::abs(a[least])) least = c;
  Vec3 e{0, 0, 0};
  e[least] = 1;
  Vec3 u = cross(a, e);
  u = (1.0 / norm(u)) * u;
  return {u, cross(a, u)};
}

/// Keeps voxels with R > th_min whose response is >= the response at 8 points on a circle
/// of radius `radius` perpendicular to the vessel direction. A second pass thins ridges two
/// voxels wide (an axis between voxel rows): a survivor is dropped when an N26 survivor
/// lying across the axis (more than 60 degrees from it) has a larger response, ties going to
/// the larger linear index. With `domain` (the voxels the filter was evaluated on), a voxel
/// whose perpendicular samples reach outside it cannot be confirmed as a maximum and is
/// rejected; this removes ridges hugging the domain border from structures outside it.
/// With `thin` off only the first pass runs, and plateaus survive whole.
inline Mask non_max_suppress(const MedialnessField& field, double th_min, double radius = 1.0,
                             const Mask* domain = nullptr, bool thin = true) {
  const FloatVolume& r = field.response;
  const Dims d = r.dims();
  if (domain && !domain->same_geometry(r)) throw Error("non_max_suppress: domain not aligned");
  Mask first = Mask::like(r, 0);
  parallel_for(0, d.z, [&](int k) {
    for (int j = 0; j < d.y; ++j)
      for (int i = 0; i < d.x; ++i) {
        const std::size_t n = r.index(i, j, k);
        const double here = r[n];
        if (!(here > th_min)) continue;
        const Vec3 dir{field.direction.x[n], field.direction.y[n], field.direction.z[n]};
        bool keep = true;
        if (norm(dir) > 0) {
          const auto [u, w] = perpendicular_basis(dir);
          for (int s = 0; s < 8 && keep; ++s) {
            const double a = s * std::numbers::pi / 4.0;
            const Vec3 p = Vec3{double(i), double(j), double(k)} + radius * (std::cos(a) * u + std::sin(a) * w);
            if (domain) {
              const VoxelIndex q{int(std::lround(p[0])), int(std::lround(p[1])), int(std::lround(p[2]))};
              if (!in_bounds(q, d) || !(*domain)[q]) keep = false;
            }
            if (sample_trilinear(r, p[0], p[1], p[2]) > here) keep = false;
          }
        }
        first[n] = keep ? 1 : 0;
      }
  });
  if (!thin) return first;
  Mask out = Mask::like(r, 0);
  parallel_for(0, d.z, [&](int k) {
    for (int j = 0; j < d.y; ++j)
      for (int i = 0; i < d.x; ++i) {
        const std::size_t n = r.index(i, j, k);
        if (!first[n]) continue;
        Vec3 dir{field.direction.x[n], field.direction.y[n], field.direction.z[n]};
        const double len = norm(dir);
        bool keep = true;
        for (int dk = -1; dk <= 1 && keep; ++dk)
          for (int dj = -1; dj <= 1 && keep; ++dj)
            for (int di = -1; di <= 1 && keep; ++di) {
              if (!(di || dj || dk)) continue;
              const VoxelIndex v{i + di, j + dj, k + dk};
              if (!in_bounds(v, d)) continue;
              const std::size_t m = r.index(v.i, v.j, v.k);
              if (!first[m] || r[m] < r[n] || (r[m] == r[n] && m < n)) continue;
              const Vec3 o{double(di), double(dj), double(dk)};
              if (len > 0 && std::abs(dot(o, dir)) > 0.5 * norm(o) * len) continue;
              keep = false;
            }
        out[n] = keep ? 1 : 0;
      }
  });
  return out;
}

struct CenterlineFragment {
  std::vector<VoxelIndex> voxels;  // raster order
  std::vector<float> response;     // parallel to voxels, filled when a field is supplied
};

/// Clears candidates within `clear_radius` (N6) of the airway, then drops N26 components
/// smaller than `min_size`.
inline std::vector<CenterlineFragment> prune_fragments(const Mask& candidates, const Mask& airway, int min_size = 5,
                                                       int clear_radius = 2, const FloatVolume* response = nullptr) {
  if (!candidates.same_geometry(airway)) throw Error("prune_fragments: airway mask not aligned");
  const Mask kept = clear_radius > 0 ? mask_and_not(candidates, dilate(airway, clear_radius))
                                     : mask_and_not(candidates, airway);
  const Components cc = connected_components<std::uint8_t>(kept, 1, Connectivity::N26);
  std::vector<CenterlineFragment> frags(cc.count());
  for (std::size_t n = 0; n < kept.size(); ++n) {
    const int id = cc.ids[n];
    if (id <= 0) continue;
    frags[id - 1].voxels.push_back(kept.voxel(n));
    if (response) frags[id - 1].response.push_back((*response)[n]);
  }
  std::erase_if(frags, [&](const CenterlineFragment& f) { return static_cast<int>(f.voxels.size()) < min_size; });
  return frags;
}

// ---------------------------------------------------------------------------

/// Centroid of voxels brighter than `min_hu` between the two lungs (x gap of the lung
/// bounding boxes, middle third of their joint z extent).
template <class T>
VoxelIndex detect_heart_center(const Volume<T>& vol, const LungLabels& lungs, double min_hu = 100.0) {
  const Box& a = lungs.left_box;
  const Box& b = lungs.right_box;
  if (a.empty() || b.empty()) throw Error("heart center: both lungs are required");
  const Box& lower = a.lo.i <= b.lo.i ? a : b;
  const Box& upper = a.lo.i <= b.lo.i ? b : a;
  int x0 = lower.hi.i + 1, x1 = upper.lo.i - 1;
  if (x0 > x1) {
    // overlapping boxes: use the slab between the two lung centroids' box centers
    x0 = (lower.lo.i + lower.hi.i) / 2;
    x1 = (upper.lo.i + upper.hi.i) / 2;
  }
  const int y0 = std::min(a.lo.j, b.lo.j), y1 = std::max(a.hi.j, b.hi.j);
  const int z_lo = std::min(a.lo.k, b.lo.k), z_hi = std::max(a.hi.k, b.hi.k);
  const int third = (z_hi - z_lo + 1) / 3;
  const int z0 = z_lo + third, z1 = z_hi - third;
  double si = 0, sj = 0, sk = 0, count = 0;
  for (int k = z0; k <= z1; ++k)
    for (int j = y0; j <= y1; ++j)
      for (int i = x0; i <= x1; ++i)
        if (double(vol(i, j, k)) > min_hu) {
          si += i;
          sj += j;
          sk += k;
          count += 1;
        }
  if (count == 0) throw Error("heart center: no bright mediastinal voxels; supply the heart position manually");
  return {static_cast<int>(std::lround(si / count)), static_cast<int>(std::lround(sj / count)),
          static_cast<int>(std::lround(sk / count))};
}

// ---------------------------------------------------------------------------
// Shortest paths
// ---------------------------------------------------------------------------

struct ShortestPaths {
  std::vector<double> dist;              // +inf when unreachable
  std::vector<std::int64_t> parent;      // -1 for sources and unreachable voxels
};

/// Dijkstra over the voxels of `region` with node costs; an edge between neighbors u, v
/// costs 0.5 * (c(u) + c(v)) * |u - v| (voxel units).
inline ShortestPaths grid_dijkstra(const Mask& region, const FloatVolume& node_cost, const std::vector<VoxelIndex>& sources,
                                   Connectivity conn = Connectivity::N26) {
  const Dims d = region.dims();
  ShortestPaths sp{std::vector<double>(region.size(), std::numeric_limits<double>::infinity()),
                   std::vector<std::int64_t>(region.size(), -1)};
  using Item = std::pair<double, std::size_t>;
  std::priority_queue<Item, std::vector<Item>, std::greater<>> pq;
  for (const auto& s : sources) {
    if (!in_bounds(s, d) || !region[s]) continue;
    sp.dist[region.index(s)] = 0;
    pq.emplace(0.0, region.index(s));
  }
  const auto& offs = neighbor_offsets(conn);
  std::vector<double> step(offs.size());
  for (std::size_t o = 0; o < offs.size(); ++o)
    step[o] = std::sqrt(double(offs[o][0] * offs[o][0] + offs[o][1] * offs[o][1] + offs[o][2] * offs[o][2]));
  while (!pq.empty()) {
    const auto [du, u] = pq.top();
    pq.pop();
    if (du > sp.dist[u]) continue;
    const VoxelIndex v = region.voxel(u);
    for (std::size_t o = 0; o < offs.size(); ++o) {
      const VoxelIndex w{v.i + offs[o][0], v.j + offs[o][1], v.k + offs[o][2]};
      if (!in_bounds(w, d)) continue;
      const std::size_t m = region.index(w);
      if (!region[m]) continue;
      const double nd = du + 0.5 * (double(node_cost[u]) + double(node_cost[m])) * step[o];
      if (nd < sp.dist[m]) {
        sp.dist[m] = nd;
        sp.parent[m] = static_cast<std::int64_t>(u);
        pq.emplace(nd, m);
      }
    }
  }
  return sp;
}

// ---------------------------------------------------------------------------
// Trees
// ---------------------------------------------------------------------------

struct CenterlineNode {
  int id = 0;
  VoxelIndex ijk;
  Vec3 xyz_mm{};
  double radius_mm = 0;
  double radius_voxels = 0;
  double response = 0;
};

struct CenterlineTree {
  std::uint8_t lung = label::kLeft;
  std::vector<CenterlineNode> nodes;
  std::vector<std::pair<int, int>> edges;  // (child, parent) as node ids
  std::vector<int> roots;
  std::size_t orphan_fragments = 0;

  bool empty() const { return nodes.empty(); }
};

struct ReconnectParams {
  double epsilon = 0.05;
  double lambda = 0.5;
  double percentile = 99.0;
  int corridor_radius = 2;
  /// Responses at or below this value (the NMS gate) are left out of the percentile.
  double min_response = 0.0;
};

namespace detail {

/// Nodes indexed by voxel; edges from parent pointers. Node ids start at `first_id` and
/// follow raster order.
inline CenterlineTree assemble_tree(std::uint8_t lung, const std::vector<std::size_t>& voxels,
                                    const std::vector<std::int64_t>& parent, const FloatVolume& response,
                                    int first_id) {
  CenterlineTree t;
  t.lung = lung;
  std::vector<std::size_t> sorted = voxels;
  std::sort(sorted.begin(), sorted.end());
  std::unordered_map<std::size_t, int> id;
  for (std::size_t n = 0; n < sorted.size(); ++n) {
    const VoxelIndex v = response.voxel(sorted[n]);
    CenterlineNode node;
    node.id = first_id + static_cast<int>(n);
    node.ijk = v;
    node.xyz_mm = response.physical(v);
    node.response = response[sorted[n]];
    id[sorted[n]] = node.id;
    t.nodes.push_back(node);
  }
  for (std::size_t n = 0; n < sorted.size(); ++n) {
    const std::int64_t p = parent[n];
    if (p < 0) t.roots.push_back(first_id + static_cast<int>(n));
    else t.edges.emplace_back(first_id + static_cast<int>(n), id.at(static_cast<std::size_t>(p)));
  }
  return t;
}

}  // namespace detail

/// Node cost 1 / (eps + R^) + lambda * g^. R^ is the response over its 99th percentile
/// among region voxels above the NMS gate, clipped to 1; g^ is already normalized.
inline FloatVolume reconnection_cost(const FloatVolume& response, const FloatVolume& gradient_norm,
                                     const Mask& region, const ReconnectParams& p) {
  std::vector<float> pos;
  for (std::size_t n = 0; n < response.size(); ++n)
    if (region[n] && response[n] > 0 && response[n] > p.min_response) pos.push_back(response[n]);
  const double scale = pos.empty() ? 0.0 : percentile(std::move(pos), p.percentile);
  FloatVolume cost = FloatVolume::like(response);
  for (std::size_t n = 0; n < cost.size(); ++n) {
    const double r = scale > 0 ? std::min(1.0, double(response[n]) / scale) : 0.0;
    cost[n] = static_cast<float>(1.0 / (p.epsilon + r) + p.lambda * gradient_norm[n]);
  }
  return cost;
}

/// Voxels within `radius` of the segment a-b (voxel units).
inline std::vector<VoxelIndex> corridor(const Vec3& a, const Vec3& b, double radius, const Dims& d) {
  std::vector<VoxelIndex> out;
  const int r = static_cast<int>(std::ceil(radius));
  const int i0 = std::max(0, int(std::floor(std::min(a[0], b[0]))) - r), i1 = std::min(d.x - 1, int(std::ceil(std::max(a[0], b[0]))) + r);
  const int j0 = std::max(0, int(std::floor(std::min(a[1], b[1]))) - r), j1 = std::min(d.y - 1, int(std::ceil(std::max(a[1], b[1]))) + r);
  const int k0 = std::max(0, int(std::floor(std::min(a[2], b[2]))) - r), k1 = std::min(d.z - 1, int(std::ceil(std::max(a[2], b[2]))) + r);
  const Vec3 ab = b - a;
  const double len2 = dot(ab, ab);
  for (int k = k0; k <= k1; ++k)
    for (int j = j0; j <= j1; ++j)
      for (int i = i0; i <= i1; ++i) {
        const Vec3 p{double(i), double(j), double(k)};
        const double t = len2 > 0 ? std::clamp(dot(p - a, ab) / len2, 0.0, 1.0) : 0.0;
        if (norm(p - (a + t * ab)) <= radius) out.push_back({i, j, k});
      }
  return out;
}

/// Connects every fragment of one lung to the heart by the shortest-path tree rooted at
/// the heart. Fragments that cannot reach the root are kept as separate orphan trees.
inline CenterlineTree reconnect_lung(const std::vector<CenterlineFragment>& fragments, const FloatVolume& response,
                                     const FloatVolume& gradient_norm, const LabelVolume& lungs, std::uint8_t side,
                                     const VoxelIndex& heart, const ReconnectParams& p, int first_id = 0) {
  const Dims d = lungs.dims();
  Mask lung = select<std::uint8_t>(lungs, side);
  CenterlineTree empty_tree;
  empty_tree.lung = side;
  std::vector<std::size_t> frag_voxels;
  for (const auto& f : fragments)
    for (const auto& v : f.voxels)
      if (lungs[v] == side) frag_voxels.push_back(lungs.index(v));
  if (frag_voxels.empty()) return empty_tree;

  // root corridor from the heart to where the line towards the nearest fragment voxel
  // enters this lung
  Mask region = lung;
  const Vec3 h{double(heart.i), double(heart.j), double(heart.k)};
  Vec3 target{};
  double best = std::numeric_limits<double>::max();
  for (std::size_t n : frag_voxels) {
    const VoxelIndex v = lung.voxel(n);
    const Vec3 q{double(v.i), double(v.j), double(v.k)};
    if (norm(q - h) < best) {
      best = norm(q - h);
      target = q;
    }
  }
  std::optional<VoxelIndex> entry;
  const int steps = std::max(1, static_cast<int>(std::ceil(4.0 * best)));
  for (int s = 0; s <= steps && !entry; ++s) {
    const Vec3 q = h + (double(s) / steps) * (target - h);
    const VoxelIndex v{int(std::lround(q[0])), int(std::lround(q[1])), int(std::lround(q[2]))};
    if (in_bounds(v, d) && lung[v]) entry = v;
  }
  for (const auto& v : corridor(h, Vec3{double(entry->i), double(entry->j), double(entry->k)}, p.corridor_radius, d))
    region[v] = 1;
  if (!in_bounds(heart, d)) throw Error("reconnect: heart position outside the volume");
  region[heart] = 1;

  const FloatVolume cost = reconnection_cost(response, gradient_norm, lung, p);
  const ShortestPaths sp = grid_dijkstra(region, cost, {heart}, Connectivity::N26);

  // shortest-path tree restricted to paths from fragment voxels
  std::vector<std::uint8_t> in_tree(lungs.size(), 0);
  std::vector<std::size_t> members;
  std::size_t orphans = 0;
  std::vector<std::size_t> orphan_voxels;
  std::vector<std::int64_t> orphan_parent_raw;
  for (const auto& f : fragments) {
    std::vector<std::size_t> mine;
    for (const auto& v : f.voxels)
      if (lungs[v] == side) mine.push_back(lungs.index(v));
    if (mine.empty()) continue;
    bool reachable = false;
    for (std::size_t n : mine) reachable = reachable || std::isfinite(sp.dist[n]);
    if (!reachable) {
      ++orphans;
      // BFS spanning tree inside the fragment, rooted at its first voxel
      std::unordered_map<std::size_t, std::int64_t> par;
      std::vector<std::size_t> queue{mine.front()};
      par[mine.front()] = -1;
      std::unordered_map<std::size_t, bool> member;
      for (std::size_t n : mine) member[n] = true;
      for (std::size_t q = 0; q < queue.size(); ++q)
        for (const auto& w : neighbors(lungs.voxel(queue[q]), Connectivity::N26, d)) {
          const std::size_t m = lungs.index(w);
          if (member.count(m) && !par.count(m)) {
            par[m] = static_cast<std::int64_t>(queue[q]);
            queue.push_back(m);
          }
        }
      for (const auto& [n, pa] : par) {
        orphan_voxels.push_back(n);
        orphan_parent_raw.push_back(pa);
      }
      continue;
    }
    for (std::size_t n : mine) {
      if (!std::isfinite(sp.dist[n])) continue;
      for (std::int64_t c = static_cast<std::int64_t>(n); c >= 0 && !in_tree[c]; c = sp.parent[c]) {
        in_tree[c] = 1;
        members.push_back(static_cast<std::size_t>(c));
      }
    }
  }
  std::vector<std::size_t> all = members;
  std::unordered_map<std::size_t, std::int64_t> parent_map;
  for (std::size_t n : members) parent_map[n] = sp.parent[n];
  for (std::size_t q = 0; q < orphan_voxels.size(); ++q) {
    if (parent_map.count(orphan_voxels[q])) continue;
    all.push_back(orphan_voxels[q]);
    parent_map[orphan_voxels[q]] = orphan_parent_raw[q];
  }
  std::sort(all.begin(), all.end());
  std::vector<std::int64_t> parents;
  for (std::size_t n : all) parents.push_back(parent_map.at(n));
  CenterlineTree t = detail::assemble_tree(side, all, parents, response, first_id);
  t.orphan_fragments = orphans;
  return t;
}

/// Left and right trees. Node ids are unique across both trees.
inline std::array<CenterlineTree, 2> reconnect(const std::vector<CenterlineFragment>& fragments,
                                               const FloatVolume& response, const FloatVolume& gradient_norm,
                                               const LabelVolume& lungs, const VoxelIndex& heart,
                                               const ReconnectParams& p = {}) {
  std::array<CenterlineTree, 2> trees;
  parallel_for(0, 2, [&](int s) {
    trees[s] = reconnect_lung(fragments, response, gradient_norm, lungs, s == 0 ? label::kLeft : label::kRight, heart, p);
  });
  // renumber the right tree after the left one
  const int offset = static_cast<int>(trees[0].nodes.size());
  for (auto& n : trees[1].nodes) n.id += offset;
  for (auto& e : trees[1].edges) e = {e.first + offset, e.second + offset};
  for (auto& r : trees[1].roots) r += offset;
  return trees;
}

/// Moves each node with a direction off its voxel center to the response peak across the
/// vessel: a parabola through the samples at -1, 0, +1 along each perpendicular axis,
/// offsets clamped to half a voxel. Offsets up to `deadband` are dropped, since the
/// multiscale response carries a bias of about a tenth of a voxel even on symmetric tubes.
/// Nodes without a direction or a concave peak stay put.
inline void refine_node_positions(std::vector<CenterlineTree>& trees, const MedialnessField& field,
                                  double deadband = 0.25) {
  const FloatVolume& r = field.response;
  for (auto& t : trees)
    for (auto& node : t.nodes) {
      if (!in_bounds(node.ijk, r.dims())) continue;
      const std::size_t n = r.index(node.ijk.i, node.ijk.j, node.ijk.k);
      const Vec3 dir{field.direction.x[n], field.direction.y[n], field.direction.z[n]};
      const Vec3 c{double(node.ijk.i), double(node.ijk.j), double(node.ijk.k)};
      node.xyz_mm = r.physical(c);
      if (!(norm(dir) > 0) || !(r[n] > 0)) continue;
      const auto [u, w] = perpendicular_basis(dir);
      Vec3 shift{0, 0, 0};
      for (const Vec3& a : {u, w}) {
        const Vec3 lo = c - a, hi = c + a;
        const double fm = sample_trilinear(r, lo[0], lo[1], lo[2]);
        const double fp = sample_trilinear(r, hi[0], hi[1], hi[2]);
        const double curv = fm - 2.0 * r[n] + fp;
        if (!(curv < 0)) continue;
        const double o = std::clamp(0.5 * (fm - fp) / curv, -0.5, 0.5);
        if (std::abs(o) > deadband) shift = shift + o * a;
      }
      node.xyz_mm = r.physical(c + shift);
    }
}

}  // namespace pvseg
