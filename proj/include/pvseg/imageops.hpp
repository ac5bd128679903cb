/// @file imageops.hpp
/// @brief Scalar-field operators shared by every stage: Gaussian smoothing,
///        Farid-Simoncelli derivatives, the 1.7 pyramid, Otsu thresholding,
///        connected components, STAR6 morphology and hole filling.
///
/// Boundary handling is edge replication throughout. Convolutions accumulate
/// in double and store float, one z slice per task, so results do not depend
/// on the worker count.

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <deque>
#include <limits>
#include <numeric>
#include <vector>

#include "parallel.hpp"
#include "volume.hpp"

namespace pvseg {

// ---------------------------------------------------------------------------
// z-slabs
// ---------------------------------------------------------------------------

/// A float volume holding global slices [z0, z0 + nz) of a grid with `global_nz` slices.
/// Reads are clamped to the global extent first (edge replication at the true volume
/// faces) and then to the stored range. Callers keep enough halo that the second clamp
/// never changes a value they use, which is what makes tiled evaluation bit-exact.
struct Slab {
  FloatVolume vol;
  int z0 = 0;
  int global_nz = 0;

  static Slab whole(FloatVolume v) {
    const int nz = v.dims().z;
    return Slab{std::move(v), 0, nz};
  }
  int z_end() const { return z0 + vol.dims().z; }
  int local_z(int g) const { return std::clamp(std::clamp(g, 0, global_nz - 1) - z0, 0, vol.dims().z - 1); }
};

namespace detail {
inline double trilinear(const FloatVolume& v, int z0, int global_nz, double x, double y, double z) {
  const Dims& d = v.dims();
  auto local = [&](int g) { return std::clamp(std::clamp(g, 0, global_nz - 1) - z0, 0, d.z - 1); };
  x = std::clamp(x, 0.0, double(d.x - 1));
  y = std::clamp(y, 0.0, double(d.y - 1));
  z = std::clamp(z, 0.0, double(global_nz - 1));
  const int i0 = static_cast<int>(x), j0 = static_cast<int>(y), k0 = static_cast<int>(z);
  const double fx = x - i0, fy = y - j0, fz = z - k0;
  const int i1 = std::min(i0 + 1, d.x - 1), j1 = std::min(j0 + 1, d.y - 1);
  const int ka = local(k0), kb = local(k0 + 1);
  const double c00 = v(i0, j0, ka) * (1 - fx) + v(i1, j0, ka) * fx;
  const double c10 = v(i0, j1, ka) * (1 - fx) + v(i1, j1, ka) * fx;
  const double c01 = v(i0, j0, kb) * (1 - fx) + v(i1, j0, kb) * fx;
  const double c11 = v(i0, j1, kb) * (1 - fx) + v(i1, j1, kb) * fx;
  const double c0 = c00 * (1 - fy) + c10 * fy;
  const double c1 = c01 * (1 - fy) + c11 * fy;
  return c0 * (1 - fz) + c1 * fz;
}
}  // namespace detail

/// Trilinear interpolation at continuous (x, y, global z), clamped to the grid.
inline double sample_trilinear(const Slab& s, double x, double y, double z) {
  return detail::trilinear(s.vol, s.z0, s.global_nz, x, y, z);
}

inline double sample_trilinear(const FloatVolume& v, double x, double y, double z) {
  return detail::trilinear(v, 0, v.dims().z, x, y, z);
}

namespace detail {
/// Catmull-Rom weights for the taps at offsets -1, 0, 1, 2 from floor(x).
inline std::array<double, 4> catmull_rom(double t) {
  const double t2 = t * t, t3 = t2 * t;
  return {0.5 * (-t3 + 2 * t2 - t), 0.5 * (3 * t3 - 5 * t2 + 2), 0.5 * (-3 * t3 + 4 * t2 + t), 0.5 * (t3 - t2)};
}
}  // namespace detail

/// Tricubic Catmull-Rom interpolation with the same clamping rules as sample_trilinear.
/// Reproduces quadratics exactly, so the peak of a smooth ridge is not pulled to a node.
inline double sample_cubic(const Slab& s, double x, double y, double z) {
  const Dims& d = s.vol.dims();
  x = std::clamp(x, 0.0, double(d.x - 1));
  y = std::clamp(y, 0.0, double(d.y - 1));
  z = std::clamp(z, 0.0, double(s.global_nz - 1));
  const int i0 = static_cast<int>(x), j0 = static_cast<int>(y), k0 = static_cast<int>(z);
  const auto wx = detail::catmull_rom(x - i0), wy = detail::catmull_rom(y - j0), wz = detail::catmull_rom(z - k0);
  std::array<int, 4> ii, jj;
  for (int a = 0; a < 4; ++a) {
    ii[a] = std::clamp(i0 + a - 1, 0, d.x - 1);
    jj[a] = std::clamp(j0 + a - 1, 0, d.y - 1);
  }
  double acc = 0;
  for (int c = 0; c < 4; ++c) {
    const int kk = s.local_z(k0 + c - 1);
    double plane = 0;
    for (int b = 0; b < 4; ++b) {
      double row = 0;
      for (int a = 0; a < 4; ++a) row += wx[a] * s.vol(ii[a], jj[b], kk);
      plane += wy[b] * row;
    }
    acc += wz[c] * plane;
  }
  return acc;
}

namespace detail {

/// out[n] = sum_t taps[t] * in[n + t - h], one axis, edge-replicated.
inline Slab correlate_axis(const Slab& src, const std::vector<double>& taps, int axis) {
  const int h = static_cast<int>(taps.size() / 2);
  Slab out{FloatVolume::like(src.vol), src.z0, src.global_nz};
  const Dims d = src.vol.dims();
  parallel_for(0, d.z, [&](int k) {
    for (int j = 0; j < d.y; ++j)
      for (int i = 0; i < d.x; ++i) {
        auto at = [&](int t) -> double {
          if (axis == 0) return src.vol(std::clamp(i + t, 0, d.x - 1), j, k);
          if (axis == 1) return src.vol(i, std::clamp(j + t, 0, d.y - 1), k);
          return src.vol(i, j, src.local_z(src.z0 + k + t));
        };
        // Mirrored taps are summed in pairs, so antisymmetric kernels give exactly 0 on
        // constant input.
        double acc = taps[h] * at(0);
        for (int t = 1; t <= h; ++t) acc += taps[h + t] * at(t) + taps[h - t] * at(-t);
        out.vol(i, j, k) = static_cast<float>(acc);
      }
  });
  return out;
}

}  // namespace detail

/// Separable correlation with per-axis taps (x, then y, then z).
inline Slab correlate_separable(const Slab& src, const std::vector<double>& tx, const std::vector<double>& ty,
                                const std::vector<double>& tz) {
  return detail::correlate_axis(detail::correlate_axis(detail::correlate_axis(src, tx, 0), ty, 1), tz, 2);
}

// ---------------------------------------------------------------------------
// Gaussian smoothing
// ---------------------------------------------------------------------------

/// Normalized Gaussian taps truncated at +-ceil(3 sigma). sigma = 0 gives {1}.
inline std::vector<double> gaussian_kernel(double sigma) {
  if (sigma < 0) throw Error("gaussian sigma must be non-negative");
  if (sigma == 0) return {1.0};
  const int h = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> w(2 * h + 1);
  for (int k = -h; k <= h; ++k) w[k + h] = std::exp(-0.5 * double(k * k) / (sigma * sigma));
  const double sum = std::accumulate(w.begin(), w.end(), 0.0);
  for (double& x : w) x /= sum;
  return w;
}

inline Slab gaussian_smooth(const Slab& src, double sigma) {
  if (sigma < 0) throw Error("gaussian sigma must be non-negative");
  if (sigma == 0) return src;
  const auto k = gaussian_kernel(sigma);
  return correlate_separable(src, k, k, k);
}

inline FloatVolume gaussian_smooth(const FloatVolume& vol, double sigma) {
  return gaussian_smooth(Slab::whole(vol), sigma).vol;
}

// ---------------------------------------------------------------------------
// Farid-Simoncelli 5-tap derivatives
// ---------------------------------------------------------------------------

/// Published 5-tap prefilter / first / second derivative taps (matched second-order set).
struct FaridTaps {
  static constexpr std::array<double, 5> prefilter_raw = {0.030320, 0.249724, 0.439911, 0.249724, 0.030320};
  static constexpr std::array<double, 5> first_raw = {-0.104550, -0.292315, 0.0, 0.292315, 0.104550};
  static constexpr std::array<double, 5> second_raw = {0.232905, 0.002668, -0.471147, 0.002668, 0.232905};

  /// The published taps are rounded to six digits. They are rescaled so that the
  /// prefilter sums to 1, the first derivative is exact on linear ramps and the
  /// second derivative is exact on quadratics.
  static const std::vector<double>& prefilter() {
    static const std::vector<double> p = [] {
      const double s = std::accumulate(prefilter_raw.begin(), prefilter_raw.end(), 0.0);
      std::vector<double> out;
      for (double v : prefilter_raw) out.push_back(v / s);
      return out;
    }();
    return p;
  }
  static const std::vector<double>& first() {
    static const std::vector<double> d = [] {
      double moment = 0;
      for (int k = -2; k <= 2; ++k) moment += k * first_raw[k + 2];
      std::vector<double> out;
      for (double v : first_raw) out.push_back(v / moment);
      return out;
    }();
    return d;
  }
  static const std::vector<double>& second() {
    static const std::vector<double> d = [] {
      std::vector<double> out(second_raw.begin(), second_raw.end());
      out[2] = -(out[0] + out[1] + out[3] + out[4]);  // zero DC
      double moment = 0;
      for (int k = -2; k <= 2; ++k) moment += k * k * out[k + 2];
      for (double& v : out) v *= 2.0 / moment;
      return out;
    }();
    return d;
  }
};

inline constexpr int kFaridRadius = 2;

/// Per-voxel 3-vector field stored as three components.
struct GradientField {
  FloatVolume x, y, z;
  const Dims& dims() const { return x.dims(); }
  Vec3 at(std::size_t n) const { return {x[n], y[n], z[n]}; }
  double magnitude(std::size_t n) const { return norm(at(n)); }
};

inline void require_farid_support(const Dims& d) {
  if (d.x < 5 || d.y < 5 || d.z < 5) throw Error("volume smaller than the 5-tap derivative support");
}

struct GradientSlabs {
  Slab x, y, z;
};

inline GradientSlabs farid_gradient(const Slab& s) {
  const auto& p = FaridTaps::prefilter();
  const auto& d = FaridTaps::first();
  return {correlate_separable(s, d, p, p), correlate_separable(s, p, d, p), correlate_separable(s, p, p, d)};
}

inline GradientField farid_gradient(const FloatVolume& vol) {
  require_farid_support(vol.dims());
  auto g = farid_gradient(Slab::whole(vol));
  return {std::move(g.x.vol), std::move(g.y.vol), std::move(g.z.vol)};
}

template <class T>
GradientField farid_gradient(const Volume<T>& vol) {
  return farid_gradient(to_float(vol));
}

/// Symmetric 3x3 matrix, row-major.
using Matrix3 = std::array<std::array<double, 3>, 3>;

/// Hessian components xx, yy, zz, xy, xz, yz.
struct HessianSlabs {
  std::array<Slab, 6> c;
  Matrix3 at(int i, int j, int local_k) const {
    auto g = [&](int n) { return double(c[n].vol(i, j, local_k)); };
    return Matrix3{{{g(0), g(3), g(4)}, {g(3), g(1), g(5)}, {g(4), g(5), g(2)}}};
  }
};

inline HessianSlabs farid_hessian(const Slab& s) {
  const auto& p = FaridTaps::prefilter();
  const auto& d1 = FaridTaps::first();
  const auto& d2 = FaridTaps::second();
  return {{correlate_separable(s, d2, p, p), correlate_separable(s, p, d2, p), correlate_separable(s, p, p, d2),
           correlate_separable(s, d1, d1, p), correlate_separable(s, d1, p, d1), correlate_separable(s, p, d1, d1)}};
}

/// Hessian at a single voxel by direct 5x5x5 summation. Requires the full kernel
/// support inside the volume.
template <class T>
Matrix3 hessian_at(const Volume<T>& vol, const VoxelIndex& idx) {
  const Dims& d = vol.dims();
  if (idx.i < kFaridRadius || idx.j < kFaridRadius || idx.k < kFaridRadius || idx.i >= d.x - kFaridRadius ||
      idx.j >= d.y - kFaridRadius || idx.k >= d.z - kFaridRadius)
    throw Error("hessian_at: index outside the derivative kernel support");
  const auto& p = FaridTaps::prefilter();
  const auto& d1 = FaridTaps::first();
  const auto& d2 = FaridTaps::second();
  // taps per axis for each component
  const std::array<std::array<const std::vector<double>*, 3>, 6> comp = {{{&d2, &p, &p},
                                                                        {&p, &d2, &p},
                                                                        {&p, &p, &d2},
                                                                        {&d1, &d1, &p},
                                                                        {&d1, &p, &d1},
                                                                        {&p, &d1, &d1}}};
  std::array<double, 6> h{};
  for (int c = 0; c < 6; ++c) {
    double acc = 0;
    for (int dk = -2; dk <= 2; ++dk)
      for (int dj = -2; dj <= 2; ++dj)
        for (int di = -2; di <= 2; ++di)
          acc += (*comp[c][0])[di + 2] * (*comp[c][1])[dj + 2] * (*comp[c][2])[dk + 2] *
                 double(vol(idx.i + di, idx.j + dj, idx.k + dk));
    h[c] = acc;
  }
  Matrix3 m{{{h[0], h[3], h[4]}, {h[3], h[1], h[5]}, {h[4], h[5], h[2]}}};
  for (int a = 0; a < 3; ++a)
    for (int b = a + 1; b < 3; ++b) m[a][b] = m[b][a] = 0.5 * (m[a][b] + m[b][a]);
  return m;
}

// ---------------------------------------------------------------------------
// 1.7 pyramid
// ---------------------------------------------------------------------------

inline constexpr double kPyramidPresmooth = 0.85;

/// ceil(n / 1.7) in exact integer arithmetic.
inline int pyramid_extent(int n) { return (10 * n + 16) / 17; }
/// Position in the finer grid of coarse index o.
inline double pyramid_position(int o) { return double(17 * o) / 10.0; }

/// Coarse slices [out_lo, out_hi) of the next pyramid level. `src` must already be
/// presmoothed with sigma 0.85.
inline Slab downsample_presmoothed(const Slab& src, int out_lo, int out_hi) {
  const Dims d = src.vol.dims();
  const Dims od{pyramid_extent(d.x), pyramid_extent(d.y), out_hi - out_lo};
  Vec3 sp = src.vol.spacing();
  for (double& s : sp) s *= 1.7;
  Slab out{FloatVolume(od, sp, src.vol.origin()), out_lo, pyramid_extent(src.global_nz)};
  parallel_for(0, od.z, [&](int k) {
    const double z = pyramid_position(out_lo + k);
    for (int j = 0; j < od.y; ++j)
      for (int i = 0; i < od.x; ++i)
        out.vol(i, j, k) = static_cast<float>(sample_trilinear(src, pyramid_position(i), pyramid_position(j), z));
  });
  return out;
}

/// Next level of the 1.7 pyramid: dims ceil(d/1.7), spacing x1.7, values are trilinear
/// samples of the sigma 0.85 presmoothed input.
inline FloatVolume downsample_17(const FloatVolume& vol) {
  const Dims& d = vol.dims();
  if (d.x < 2 || d.y < 2 || d.z < 2) throw Error("downsample_17: every dimension must be at least 2");
  const Slab smooth = gaussian_smooth(Slab::whole(vol), kPyramidPresmooth);
  return downsample_presmoothed(smooth, 0, pyramid_extent(d.z)).vol;
}

// ---------------------------------------------------------------------------
// Statistics helpers
// ---------------------------------------------------------------------------

/// Nearest-rank percentile (p in [0, 100]) of a sample; the input is taken by value.
inline double percentile(std::vector<float> values, double p) {
  if (values.empty()) throw Error("percentile of an empty sample");
  const std::size_t n = values.size();
  std::size_t rank = static_cast<std::size_t>(std::ceil(p / 100.0 * double(n)));
  rank = std::clamp<std::size_t>(rank, 1, n) - 1;
  std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(rank), values.end());
  return values[rank];
}

// ---------------------------------------------------------------------------
// Otsu
// ---------------------------------------------------------------------------

struct Histogram {
  double min = 0, max = 0, width = 0;
  std::vector<std::uint64_t> counts;
  double edge(int k) const { return min + k * width; }
};

template <class T>
Histogram make_histogram(const Volume<T>& vol, int bins) {
  if (bins < 2) throw Error("histogram needs at least 2 bins");
  const auto [lo, hi] = std::minmax_element(vol.data().begin(), vol.data().end());
  Histogram h;
  h.min = double(*lo);
  h.max = double(*hi);
  h.width = (h.max - h.min) / bins;
  h.counts.assign(bins, 0);
  if (h.width <= 0) {
    h.counts[0] = vol.size();
    return h;
  }
  for (T v : vol.data()) {
    int b = static_cast<int>((double(v) - h.min) / h.width);
    ++h.counts[std::clamp(b, 0, bins - 1)];
  }
  return h;
}

/// Bin edge maximizing the between-class variance; class 0 holds bins below the edge.
/// Ties resolve to the lowest edge.
inline double otsu_threshold(const Histogram& h) {
  const int bins = static_cast<int>(h.counts.size());
  double total = 0, total_sum = 0;
  for (int b = 0; b < bins; ++b) {
    total += double(h.counts[b]);
    total_sum += double(h.counts[b]) * (h.min + (b + 0.5) * h.width);
  }
  double w0 = 0, sum0 = 0, best = -1;
  int best_k = -1;
  for (int k = 1; k < bins; ++k) {
    w0 += double(h.counts[k - 1]);
    sum0 += double(h.counts[k - 1]) * (h.min + (k - 0.5) * h.width);
    const double w1 = total - w0;
    if (w0 == 0 || w1 == 0) continue;
    const double m0 = sum0 / w0, m1 = (total_sum - sum0) / w1;
    const double between = (w0 / total) * (w1 / total) * (m0 - m1) * (m0 - m1);
    if (between > best) {
      best = between;
      best_k = k;
    }
  }
  if (best_k < 0) throw Error("otsu_threshold: no threshold separates the histogram");
  return h.edge(best_k);
}

template <class T>
double otsu_threshold(const Volume<T>& vol, int histogram_bins = 256) {
  if (histogram_bins < 2) throw Error("otsu_threshold: need at least 2 bins");
  const auto [lo, hi] = std::minmax_element(vol.data().begin(), vol.data().end());
  if (*lo == *hi) throw Error("otsu_threshold: volume is constant");
  return otsu_threshold(make_histogram(vol, histogram_bins));
}

// ---------------------------------------------------------------------------
// Connected components
// ---------------------------------------------------------------------------

struct Components {
  Volume<std::int32_t> ids;        // 0 = background, 1..n ordered by decreasing size
  std::vector<std::size_t> sizes;  // sizes[c - 1] is the size of component c
  std::size_t count() const { return sizes.size(); }
};

/// Labels voxels equal to `foreground`. Ids are ordered by decreasing size, then by
/// the raster position of the component's first voxel.
template <class T>
Components connected_components(const Volume<T>& mask, T foreground, Connectivity conn) {
  const Dims d = mask.dims();
  Volume<std::int32_t> raw = Volume<std::int32_t>::like(mask, 0);
  std::vector<std::size_t> sizes;
  std::vector<std::size_t> queue;
  const auto& offs = neighbor_offsets(conn);
  for (std::size_t n = 0; n < mask.size(); ++n) {
    if (mask[n] != foreground || raw[n] != 0) continue;
    const auto id = static_cast<std::int32_t>(sizes.size() + 1);
    queue.assign(1, n);
    raw[n] = id;
    for (std::size_t q = 0; q < queue.size(); ++q) {
      const VoxelIndex v = mask.voxel(queue[q]);
      for (const auto& o : offs) {
        const VoxelIndex w{v.i + o[0], v.j + o[1], v.k + o[2]};
        if (!in_bounds(w, d)) continue;
        const std::size_t m = mask.index(w);
        if (mask[m] == foreground && raw[m] == 0) {
          raw[m] = id;
          queue.push_back(m);
        }
      }
    }
    sizes.push_back(queue.size());
  }
  // Discovery order is raster order of each component's first voxel; a stable sort by
  // size keeps that as the tie-break.
  std::vector<std::int32_t> order(sizes.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return sizes[a] > sizes[b]; });
  std::vector<std::int32_t> remap(sizes.size() + 1, 0);
  Components out{std::move(raw), {}};
  for (std::size_t r = 0; r < order.size(); ++r) {
    remap[order[r] + 1] = static_cast<std::int32_t>(r + 1);
    out.sizes.push_back(sizes[order[r]]);
  }
  for (auto& v : out.ids.storage()) v = remap[v];
  return out;
}

// ---------------------------------------------------------------------------
// Morphology
// ---------------------------------------------------------------------------

enum class StructuringElement { STAR6 };

/// Offsets of an element, center included.
inline std::vector<std::array<int, 3>> element_offsets(StructuringElement) {
  std::vector<std::array<int, 3>> out = {{0, 0, 0}};
  for (const auto& o : neighbor_offsets(Connectivity::N6)) out.push_back(o);
  return out;
}

namespace detail {
inline Mask morph_step(const Mask& in, bool dilate) {
  const Dims d = in.dims();
  Mask out = Mask::like(in);
  const auto offs = element_offsets(StructuringElement::STAR6);
  parallel_for(0, d.z, [&](int k) {
    for (int j = 0; j < d.y; ++j)
      for (int i = 0; i < d.x; ++i) {
        bool any = false, all = true;
        for (const auto& o : offs) {
          const bool v = in.clamped(i + o[0], j + o[1], k + o[2]) != 0;
          any = any || v;
          all = all && v;
        }
        out(i, j, k) = (dilate ? any : all) ? 1 : 0;
      }
  });
  return out;
}
}  // namespace detail

inline Mask dilate(const Mask& m, int steps = 1, StructuringElement = StructuringElement::STAR6) {
  Mask out = m;
  for (int s = 0; s < steps; ++s) out = detail::morph_step(out, true);
  return out;
}

inline Mask erode(const Mask& m, int steps = 1, StructuringElement = StructuringElement::STAR6) {
  Mask out = m;
  for (int s = 0; s < steps; ++s) out = detail::morph_step(out, false);
  return out;
}

/// Closing with the element applied `iterations` times: `iterations` dilations followed
/// by as many erosions. The result always contains the input.
inline Mask morphological_close(const Mask& m, StructuringElement element, int iterations) {
  if (iterations < 1) throw Error("morphological_close: iterations must be positive");
  Mask out = erode(dilate(m, iterations, element), iterations, element);
  for (std::size_t n = 0; n < m.size(); ++n) out[n] = (out[n] || m[n]) ? 1 : 0;
  return out;
}

/// Background components not N6-connected to the volume boundary become foreground.
inline Mask fill_holes_3d(const Mask& m) {
  const Dims d = m.dims();
  Mask outside = Mask::like(m, 0);
  std::vector<std::size_t> queue;
  for (int k = 0; k < d.z; ++k)
    for (int j = 0; j < d.y; ++j)
      for (int i = 0; i < d.x; ++i) {
        const bool face = i == 0 || j == 0 || k == 0 || i == d.x - 1 || j == d.y - 1 || k == d.z - 1;
        const std::size_t n = m.index(i, j, k);
        if (face && !m[n]) {
          outside[n] = 1;
          queue.push_back(n);
        }
      }
  for (std::size_t q = 0; q < queue.size(); ++q) {
    const VoxelIndex v = m.voxel(queue[q]);
    for (const auto& w : neighbors(v, Connectivity::N6, d)) {
      const std::size_t n = m.index(w);
      if (!m[n] && !outside[n]) {
        outside[n] = 1;
        queue.push_back(n);
      }
    }
  }
  Mask out = Mask::like(m);
  for (std::size_t n = 0; n < m.size(); ++n) out[n] = outside[n] ? 0 : 1;
  return out;
}

/// City-block (N6) distance to the nearest foreground voxel; unreachable = INT_MAX.
inline Volume<std::int32_t> n6_distance(const Mask& m) {
  Volume<std::int32_t> dist = Volume<std::int32_t>::like(m, std::numeric_limits<std::int32_t>::max());
  std::vector<std::size_t> queue;
  for (std::size_t n = 0; n < m.size(); ++n)
    if (m[n]) {
      dist[n] = 0;
      queue.push_back(n);
    }
  for (std::size_t q = 0; q < queue.size(); ++q) {
    const VoxelIndex v = m.voxel(queue[q]);
    const std::int32_t dv = dist[queue[q]];
    for (const auto& w : neighbors(v, Connectivity::N6, m.dims())) {
      const std::size_t n = m.index(w);
      if (dist[n] > dv + 1) {
        dist[n] = dv + 1;
        queue.push_back(n);
      }
    }
  }
  return dist;
}

inline Mask mask_and_not(const Mask& a, const Mask& b) {
  Mask out = Mask::like(a);
  for (std::size_t n = 0; n < a.size(); ++n) out[n] = (a[n] && !b[n]) ? 1 : 0;
  return out;
}

}  // namespace pvseg
