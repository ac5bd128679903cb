/// @file lungs.hpp
/// @brief Coarse lung extraction, left/right separation by two-source shortest paths
///        from the labeled main bronchi, and per-lung refinement.

#pragma once

#include <cmath>
#include <limits>
#include <queue>
#include <vector>

#include "airway.hpp"
#include "imageops.hpp"
#include "volume.hpp"

namespace pvseg {

struct Box {
  VoxelIndex lo{std::numeric_limits<int>::max(), std::numeric_limits<int>::max(), std::numeric_limits<int>::max()};
  VoxelIndex hi{-1, -1, -1};
  bool empty() const { return hi.i < lo.i; }
  void add(const VoxelIndex& v) {
    lo = {std::min(lo.i, v.i), std::min(lo.j, v.j), std::min(lo.k, v.k)};
    hi = {std::max(hi.i, v.i), std::max(hi.j, v.j), std::max(hi.k, v.k)};
  }
};

struct LungLabels {
  LabelVolume labels;  // 0 background, 2 left, 3 right
  Box left_box, right_box;
  std::size_t left_count = 0, right_count = 0;
  std::size_t unreachable = 0;

  void update_summary() {
    left_box = right_box = Box{};
    left_count = right_count = 0;
    for (std::size_t n = 0; n < labels.size(); ++n) {
      if (labels[n] == label::kLeft) {
        left_box.add(labels.voxel(n));
        ++left_count;
      } else if (labels[n] == label::kRight) {
        right_box.add(labels.voxel(n));
        ++right_count;
      }
    }
  }
};

inline Legend lung_legend() { return {{0, "background"}, {label::kLeft, "left lung"}, {label::kRight, "right lung"}}; }

// ---------------------------------------------------------------------------

struct CoarseLungOptions {
  int histogram_bins = 256;
  double keep_fraction = 0.10;  // of the largest component
  double min_fraction = 0.01;   // of the volume
};

/// Voxels below the Otsu threshold, minus air connected to the lateral (x/y) faces,
/// keeping components of at least 10% of the largest, with interior holes filled.
template <class T>
Mask coarse_lung_mask(const Volume<T>& vol, const CoarseLungOptions& opt = {}) {
  const double th = otsu_threshold(vol, opt.histogram_bins);
  Mask air = Mask::like(vol);
  for (std::size_t n = 0; n < vol.size(); ++n) air[n] = double(vol[n]) < th ? 1 : 0;
  const Dims d = vol.dims();
  const Components cc = connected_components<std::uint8_t>(air, 1, Connectivity::N6);
  std::vector<bool> exterior(cc.count() + 1, false);
  for (int k = 0; k < d.z; ++k)
    for (int j = 0; j < d.y; ++j)
      for (int i = 0; i < d.x; ++i)
        if (i == 0 || j == 0 || i == d.x - 1 || j == d.y - 1) exterior[cc.ids(i, j, k)] = true;
  std::size_t largest = 0;
  for (std::size_t c = 1; c <= cc.count(); ++c)
    if (!exterior[c]) largest = std::max(largest, cc.sizes[c - 1]);
  if (double(largest) < opt.min_fraction * double(vol.size()))
    throw Error("coarse lung mask: no air component of plausible lung size");
  Mask lungs = Mask::like(vol, 0);
  for (std::size_t n = 0; n < vol.size(); ++n) {
    const int c = cc.ids[n];
    if (c > 0 && !exterior[c] && double(cc.sizes[c - 1]) >= opt.keep_fraction * double(largest)) lungs[n] = 1;
  }
  return fill_holes_3d(lungs);
}

// ---------------------------------------------------------------------------

struct CostWeights {
  double gradient = 0.8;
  double mask = 0.2;
  double percentile = 99.0;
};

/// Gradient magnitude normalized by its percentile over `region`, clipped to [0, 1].
inline FloatVolume normalized_gradient(const GradientField& g, const Mask& region, double pct) {
  FloatVolume mag = FloatVolume::like(g.x);
  std::vector<float> inside;
  for (std::size_t n = 0; n < mag.size(); ++n) {
    mag[n] = static_cast<float>(g.magnitude(n));
    if (region[n]) inside.push_back(mag[n]);
  }
  const double scale = inside.empty() ? 0.0 : percentile(std::move(inside), pct);
  for (float& v : mag.storage()) v = scale > 0 ? static_cast<float>(std::min(1.0, v / scale)) : 0.0f;
  return mag;
}

/// I_c = 0.8 * g + 0.2 on coarse-lung voxels outside the airway, +inf elsewhere.
template <class T>
FloatVolume build_cost_field(const Volume<T>& vol, const Mask& coarse, const Mask& airway,
                             const CostWeights& w = {}) {
  if (!vol.same_geometry(coarse) || !vol.same_geometry(airway)) throw Error("cost field: masks are not aligned");
  const Mask region = mask_and_not(coarse, airway);
  if (count_nonzero(region) == 0) throw Error("cost field: lung mask without airways is empty");
  const FloatVolume g = normalized_gradient(farid_gradient(vol), region, w.percentile);
  FloatVolume cost = FloatVolume::like(vol, std::numeric_limits<float>::infinity());
  for (std::size_t n = 0; n < cost.size(); ++n)
    if (region[n]) cost[n] = static_cast<float>(w.gradient * g[n] + w.mask);
  return cost;
}

// ---------------------------------------------------------------------------

/// Two-source Dijkstra on the N6 grid: every finite-cost voxel takes the label of the
/// cheaper bronchus. Edge weight = mean of endpoint costs. Ties go to the left lung.
inline LungLabels split_lungs(const FloatVolume& cost, const LabelVolume& airway_labels) {
  if (!cost.same_geometry(airway_labels)) throw Error("split_lungs: airway labels not aligned with cost field");
  const Dims d = cost.dims();
  std::vector<double> dist(cost.size(), std::numeric_limits<double>::infinity());
  LungLabels out;
  out.labels = LabelVolume(d, cost.spacing(), cost.origin(), lung_legend());
  using Item = std::tuple<double, int, std::size_t>;  // distance, side (0 left, 1 right), index
  std::priority_queue<Item, std::vector<Item>, std::greater<>> pq;
  bool have_left = false, have_right = false;
  for (std::size_t n = 0; n < cost.size(); ++n) {
    if (!std::isfinite(cost[n])) continue;
    bool left = false, right = false;
    for (const auto& w : neighbors(cost.voxel(n), Connectivity::N6, d)) {
      left = left || airway_labels[w] == label::kLeft;
      right = right || airway_labels[w] == label::kRight;
    }
    if (!left && !right) continue;
    const int side = left ? 0 : 1;
    dist[n] = 0;
    out.labels[n] = left ? label::kLeft : label::kRight;
    pq.emplace(0.0, side, n);
    (left ? have_left : have_right) = true;
  }
  if (!have_left || !have_right) throw Error("split_lungs: a main bronchus does not touch the lung mask");
  while (!pq.empty()) {
    const auto [du, side, u] = pq.top();
    pq.pop();
    if (du > dist[u] || (side == 1 && out.labels[u] == label::kLeft)) continue;
    for (const auto& w : neighbors(cost.voxel(u), Connectivity::N6, d)) {
      const std::size_t v = cost.index(w);
      if (!std::isfinite(cost[v])) continue;
      const double nd = du + 0.5 * (double(cost[u]) + double(cost[v]));
      const bool better = nd < dist[v] || (nd == dist[v] && side == 0 && out.labels[v] == label::kRight);
      if (!better) continue;
      dist[v] = nd;
      out.labels[v] = side == 0 ? label::kLeft : label::kRight;
      pq.emplace(nd, side, v);
    }
  }
  for (std::size_t n = 0; n < cost.size(); ++n)
    if (std::isfinite(cost[n]) && out.labels[n] == 0) ++out.unreachable;
  out.update_summary();
  return out;
}

// ---------------------------------------------------------------------------

namespace detail {

/// Closing restricted to the mask's bounding box plus a margin that keeps the result
/// identical to a whole-volume closing.
inline Mask close_in_box(const Mask& m, int iterations) {
  Box b;
  for (std::size_t n = 0; n < m.size(); ++n)
    if (m[n]) b.add(m.voxel(n));
  if (b.empty()) return m;
  const Dims d = m.dims();
  const int g = iterations + 2;
  const VoxelIndex lo{std::max(0, b.lo.i - g), std::max(0, b.lo.j - g), std::max(0, b.lo.k - g)};
  const VoxelIndex hi{std::min(d.x - 1, b.hi.i + g), std::min(d.y - 1, b.hi.j + g), std::min(d.z - 1, b.hi.k + g)};
  Mask crop(Dims{hi.i - lo.i + 1, hi.j - lo.j + 1, hi.k - lo.k + 1});
  for (int k = lo.k; k <= hi.k; ++k)
    for (int j = lo.j; j <= hi.j; ++j)
      for (int i = lo.i; i <= hi.i; ++i) crop(i - lo.i, j - lo.j, k - lo.k) = m(i, j, k);
  const Mask closed = morphological_close(crop, StructuringElement::STAR6, iterations);
  Mask out = m;
  for (int k = lo.k; k <= hi.k; ++k)
    for (int j = lo.j; j <= hi.j; ++j)
      for (int i = lo.i; i <= hi.i; ++i) out(i, j, k) = closed(i - lo.i, j - lo.j, k - lo.k);
  return out;
}

}  // namespace detail

/// Removes the airway and closes each lung separately. Voxels claimed by both lungs go to
/// the lung whose pre-closing mask is nearer (N6 distance, ties to the left).
inline LungLabels refine_lungs(const LungLabels& in, const Mask& airway, int iterations = 10) {
  if (!in.labels.same_geometry(airway)) throw Error("refine_lungs: airway mask not aligned");
  Mask left = Mask::like(airway), right = Mask::like(airway);
  for (std::size_t n = 0; n < airway.size(); ++n) {
    left[n] = (in.labels[n] == label::kLeft && !airway[n]) ? 1 : 0;
    right[n] = (in.labels[n] == label::kRight && !airway[n]) ? 1 : 0;
  }
  Mask closed_left, closed_right;
  parallel_for(0, 2, [&](int side) {
    if (side == 0) closed_left = detail::close_in_box(left, iterations);
    else closed_right = detail::close_in_box(right, iterations);
  });
  bool overlap = false;
  for (std::size_t n = 0; n < airway.size() && !overlap; ++n) overlap = closed_left[n] && closed_right[n];
  Volume<std::int32_t> dl, dr;
  if (overlap) {
    dl = n6_distance(left);
    dr = n6_distance(right);
  }
  LungLabels out;
  out.labels = LabelVolume(airway.dims(), airway.spacing(), airway.origin(), lung_legend());
  out.unreachable = in.unreachable;
  for (std::size_t n = 0; n < airway.size(); ++n) {
    if (airway[n]) continue;
    const bool l = closed_left[n], r = closed_right[n];
    if (l && r) out.labels[n] = dl[n] <= dr[n] ? label::kLeft : label::kRight;
    else if (l) out.labels[n] = label::kLeft;
    else if (r) out.labels[n] = label::kRight;
  }
  out.update_summary();
  return out;
}

}  // namespace pvseg
