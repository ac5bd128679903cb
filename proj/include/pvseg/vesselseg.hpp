/// @file vesselseg.hpp
/// @brief Radius estimation at centerline nodes by spherical sampling, and the coarse
///        vessel segmentation painted from the estimated radii.

#pragma once

#include <cmath>
#include <deque>
#include <map>
#include <numbers>
#include <optional>
#include <vector>

#include "centerline.hpp"
#include "imageops.hpp"
#include "parallel.hpp"
#include "volume.hpp"

namespace pvseg {

inline constexpr int kSphereSamples = 48;

/// 48 points on a sphere: a 24-point Fibonacci half set and its antipodes, so the centroid
/// coincides with the center.
inline std::vector<Vec3> sphere_samples(const Vec3& center, double radius) {
  if (!(radius > 0)) throw Error("sphere_samples: radius must be positive");
  static const std::vector<Vec3> unit = [] {
    constexpr int half = kSphereSamples / 2;
    const double golden = std::numbers::pi * (3.0 - std::sqrt(5.0));
    std::vector<Vec3> p(kSphereSamples);
    for (int i = 0; i < half; ++i) {
      const double z = 1.0 - (2.0 * i + 1.0) / kSphereSamples;
      const double rho = std::sqrt(1.0 - z * z);
      const double phi = golden * i;
      p[i] = {rho * std::cos(phi), rho * std::sin(phi), z};
      p[kSphereSamples - 1 - i] = {-p[i][0], -p[i][1], -p[i][2]};
    }
    return p;
  }();
  std::vector<Vec3> out;
  out.reserve(unit.size());
  for (const auto& u : unit) out.push_back(center + radius * u);
  return out;
}

struct RadiusOptions {
  std::vector<double> radii;  // voxels, increasing
  double drop_threshold = 0.6;
  double air_reference_hu = -1000.0;
  double min_contrast_hu = 300.0;  // mean at the smallest sphere must exceed air by this much

  static std::vector<double> default_radii() {
    std::vector<double> r;
    for (int s = 1; s <= 10; ++s) r.push_back(s);
    return r;
  }
  RadiusOptions() : radii(default_radii()) {}

  void validate() const {
    if (radii.empty()) throw Error("radius options: no radii");
    for (std::size_t n = 0; n < radii.size(); ++n) {
      if (!(radii[n] > 0)) throw Error("radius options: radii must be positive");
      if (n && !(radii[n] > radii[n - 1])) throw Error("radius options: radii must be increasing");
    }
  }
};

struct RadiusProfile {
  int node_id = 0;
  std::vector<double> radii;
  std::vector<double> values;  // normalized sphere means, values[0] == 1
  double radius_voxels = 0;
  double radius_mm = 0;
  double drop_value = 0;  // v at the first radius below the threshold (0 when no drop)
};

/// Mean spacing converts voxel radii to millimetres.
inline double mean_spacing(const Vec3& s) { return (s[0] + s[1] + s[2]) / 3.0; }

/// Largest radius whose sphere still fits inside the grid around `p`.
inline double border_margin(const Vec3& p, const Dims& d) {
  double m = std::numeric_limits<double>::max();
  for (int a = 0; a < 3; ++a) m = std::min({m, p[a], double(d[a] - 1) - p[a]});
  return m;
}

/// Normalized sphere means v(r) = (mean(r) - air) / (mean(r0) - air); the chosen radius is
/// the last one before v first drops below the threshold. With `within`, samples whose
/// nearest voxel lies outside the mask are left out of the mean (a sphere with no sample
/// left counts as air).
inline RadiusProfile estimate_radius(const FloatVolume& vol, const Vec3& node, const RadiusOptions& opt = {},
                                     const Mask* within = nullptr) {
  opt.validate();
  if (border_margin(node, vol.dims()) < opt.radii.back()) throw Error("estimate_radius: node too close to the border");
  if (within && !within->same_geometry(vol)) throw Error("estimate_radius: mask not aligned");
  RadiusProfile p;
  p.radii = opt.radii;
  double base = 0;
  for (std::size_t n = 0; n < opt.radii.size(); ++n) {
    double sum = 0;
    int used = 0;
    for (const auto& q : sphere_samples(node, opt.radii[n])) {
      if (within && !(*within)[VoxelIndex{int(std::lround(q[0])), int(std::lround(q[1])), int(std::lround(q[2]))}])
        continue;
      sum += sample_trilinear(vol, q[0], q[1], q[2]);
      ++used;
    }
    const double shifted = used ? sum / used - opt.air_reference_hu : 0.0;
    if (n == 0) base = shifted;
    p.values.push_back(n == 0 ? 1.0 : shifted / base);
  }
  p.radius_voxels = opt.radii.front();
  if (base < opt.min_contrast_hu) {
    p.drop_value = p.values.size() > 1 ? p.values[1] : 0.0;
  } else {
    for (std::size_t n = 1; n < p.values.size(); ++n) {
      if (p.values[n] < opt.drop_threshold) {
        p.drop_value = p.values[n];
        break;
      }
      p.radius_voxels = opt.radii[n];
    }
  }
  p.radius_mm = p.radius_voxels * mean_spacing(vol.spacing());
  return p;
}

namespace detail {

// Multi-source BFS over the undirected tree from the in-lung nodes.
inline void inherit_connector_radii(CenterlineTree& t, const LabelVolume& lungs) {
  std::map<int, std::size_t> at;
  for (std::size_t n = 0; n < t.nodes.size(); ++n) at[t.nodes[n].id] = n;
  std::vector<std::vector<std::size_t>> adj(t.nodes.size());
  for (const auto& [c, p] : t.edges) {
    const auto a = at.find(c), b = at.find(p);
    if (a == at.end() || b == at.end()) continue;
    adj[a->second].push_back(b->second);
    adj[b->second].push_back(a->second);
  }
  std::vector<char> seen(t.nodes.size(), 0);
  std::deque<std::size_t> queue;
  for (std::size_t n = 0; n < t.nodes.size(); ++n)
    if (in_bounds(t.nodes[n].ijk, lungs.dims()) && lungs[t.nodes[n].ijk] == t.lung) {
      seen[n] = 1;
      queue.push_back(n);
    }
  while (!queue.empty()) {
    const std::size_t u = queue.front();
    queue.pop_front();
    for (std::size_t v : adj[u])
      if (!seen[v]) {
        seen[v] = 1;
        t.nodes[v].radius_voxels = t.nodes[u].radius_voxels;
        t.nodes[v].radius_mm = t.nodes[u].radius_mm;
        queue.push_back(v);
      }
  }
}

}  // namespace detail

/// Estimates radii at every node, using only the radii that fit inside the volume. With
/// `lungs`, sphere samples are limited to the lung label of the node's tree, and connector
/// nodes outside that lung take the radius of the nearest in-lung node along the tree
/// (their own profile is kept as measured).
/// Fills radius fields of the nodes and returns one profile per node.
inline std::vector<RadiusProfile> estimate_tree_radii(const FloatVolume& vol, std::vector<CenterlineTree>& trees,
                                                      const RadiusOptions& opt = {},
                                                      const LabelVolume* lungs = nullptr) {
  opt.validate();
  std::vector<CenterlineNode*> nodes;
  std::vector<const Mask*> masks;
  std::vector<Mask> lung_masks;
  lung_masks.reserve(trees.size());
  for (auto& t : trees) {
    if (lungs) lung_masks.push_back(select<std::uint8_t>(*lungs, t.lung));
    for (auto& n : t.nodes) {
      nodes.push_back(&n);
      masks.push_back(lungs ? &lung_masks.back() : nullptr);
    }
  }
  std::vector<RadiusProfile> out(nodes.size());
  parallel_for(0, static_cast<int>(nodes.size()), [&](int q) {
    CenterlineNode& node = *nodes[q];
    const Vec3 c = vol.continuous_index(node.xyz_mm);
    RadiusOptions local = opt;
    const double margin = border_margin(c, vol.dims());
    std::erase_if(local.radii, [&](double r) { return r > margin; });
    RadiusProfile p;
    if (local.radii.empty()) {
      p.radii = {opt.radii.front()};
      p.values = {1.0};
      p.radius_voxels = std::min(opt.radii.front(), std::max(margin, 0.0));
      p.radius_mm = p.radius_voxels * mean_spacing(vol.spacing());
    } else {
      p = estimate_radius(vol, c, local, masks[q]);
    }
    p.node_id = node.id;
    node.radius_voxels = p.radius_voxels;
    node.radius_mm = p.radius_mm;
    out[q] = std::move(p);
  });
  if (lungs)
    for (auto& t : trees) detail::inherit_connector_radii(t, *lungs);
  return out;
}

/// Union of balls (distance in voxels from the node's position, which may sit between voxel
/// centers, <= radius) around every node, restricted to the lung label of the node's tree.
/// Painted voxels carry the vessel label.
inline LabelVolume paint_segmentation(const std::vector<CenterlineTree>& trees, const LabelVolume& lungs) {
  LabelVolume out(lungs.dims(), lungs.spacing(), lungs.origin(),
                  Legend{{label::kBackground, "background"}, {label::kVessel, "vessel"}});
  const Dims d = lungs.dims();
  for (const auto& t : trees)
    for (const auto& n : t.nodes) {
      const double r = n.radius_voxels;
      const Vec3 c = lungs.continuous_index(n.xyz_mm);
      const int lo[3] = {int(std::ceil(c[0] - r)), int(std::ceil(c[1] - r)), int(std::ceil(c[2] - r))};
      const int hi[3] = {int(std::floor(c[0] + r)), int(std::floor(c[1] + r)), int(std::floor(c[2] + r))};
      for (int k = lo[2]; k <= hi[2]; ++k)
        for (int j = lo[1]; j <= hi[1]; ++j)
          for (int i = lo[0]; i <= hi[0]; ++i) {
            const Vec3 o{i - c[0], j - c[1], k - c[2]};
            if (dot(o, o) > r * r + 1e-9) continue;
            const VoxelIndex v{i, j, k};
            if (in_bounds(v, d) && lungs[v] == t.lung) out[v] = label::kVessel;
          }
    }
  return out;
}

}  // namespace pvseg
