/// @file medialness.hpp
/// @brief Multi-scale, multi-radius offset-medialness vessel enhancement.
///
/// For every pyramid level the image is smoothed with sigma = 1 level voxel, the
/// Hessian and the boundary gradient B = sigma * grad(I_sigma) are taken with the
/// Farid kernels, and voxels whose two largest-magnitude eigenvalues are negative
/// (bright tube on dark background) are scored on circles of radius r in the
/// cross-section plane:
///
///     b_i  = |B(x + r v_i) . v_i|,  v_i = cos(a_i) v1 + sin(a_i) v2,  i = 1..floor(2 pi r + 1)
///     R0+  = median(b_i)
///     S    = max(0, 1 - MAD(b_i) / median(b_i))
///     R+   = R0+ * S^(3/2)
///     R    = max(R+ - |B(x)|, 0)
///
/// Coarse level responses are upsampled to full resolution (Catmull-Rom) and the maximum over
/// (level, radius) is kept, restricted to the lungs minus a one-voxel-dilated airway.
///
/// Evaluation can be split into z tiles. Each tile is computed on the global pyramid
/// lattice with a halo wide enough that no value it keeps ever sees the crop, so the
/// tiled result equals the untiled one bit for bit.

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <vector>

#include "imageops.hpp"
#include "volume.hpp"

namespace pvseg {

// ---------------------------------------------------------------------------
// Symmetric 3x3 eigen decomposition
// ---------------------------------------------------------------------------

/// Eigenvalues ordered |e1| >= |e2| >= |e3|; vectors[n] belongs to values[n].
/// vectors[2] is the vessel direction estimate.
struct EigenFrame {
  std::array<double, 3> values{};
  std::array<Vec3, 3> vectors{};
};

/// Cyclic Jacobi rotations in double precision. Each eigenvector is signed so that its
/// largest-magnitude component is positive.
inline EigenFrame eigen_symmetric3(const Matrix3& h) {
  Matrix3 a = h;
  Matrix3 v{{{1, 0, 0}, {0, 1, 0}, {0, 0, 1}}};
  double scale = 0;
  for (const auto& row : a)
    for (double x : row) scale = std::max(scale, std::abs(x));
  if (scale > 0) {
    for (int sweep = 0; sweep < 64; ++sweep) {
      const double off = std::abs(a[0][1]) + std::abs(a[0][2]) + std::abs(a[1][2]);
      if (off <= 1e-300 || off < scale * 1e-18) break;
      for (int p = 0; p < 2; ++p)
        for (int q = p + 1; q < 3; ++q) {
          if (a[p][q] == 0.0) continue;
          const double theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
          const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
          const double c = 1.0 / std::sqrt(t * t + 1.0), s = t * c;
          for (int k = 0; k < 3; ++k) {
            const double akp = a[k][p], akq = a[k][q];
            a[k][p] = c * akp - s * akq;
            a[k][q] = s * akp + c * akq;
          }
          for (int k = 0; k < 3; ++k) {
            const double apk = a[p][k], aqk = a[q][k];
            a[p][k] = c * apk - s * aqk;
            a[q][k] = s * apk + c * aqk;
          }
          for (int k = 0; k < 3; ++k) {
            const double vkp = v[k][p], vkq = v[k][q];
            v[k][p] = c * vkp - s * vkq;
            v[k][q] = s * vkp + c * vkq;
          }
        }
    }
  }
  std::array<int, 3> order{0, 1, 2};
  std::stable_sort(order.begin(), order.end(),
                   [&](int x, int y) { return std::abs(a[x][x]) > std::abs(a[y][y]); });
  EigenFrame f;
  for (int n = 0; n < 3; ++n) {
    const int c = order[n];
    f.values[n] = a[c][c];
    Vec3 vec{v[0][c], v[1][c], v[2][c]};
    int big = 0;
    for (int k = 1; k < 3; ++k)
      if (std::abs(vec[k]) > std::abs(vec[big])) big = k;
    if (vec[big] < 0) vec = -1.0 * vec;
    f.vectors[n] = vec;
  }
  return f;
}

/// Bright-tube gate: e1 < 0 and e2 < 0.
inline bool bright_tube(const EigenFrame& f) { return f.values[0] < 0 && f.values[1] < 0; }

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

struct FilterConfig {
  int n_scales = 4;
  double pyramid_factor = 1.7;
  std::vector<double> radii = {1.0, 1.3, 1.6, 1.9};
  double symmetry_exponent = 1.5;
  /// Smoothing applied within each level's grid, in level voxels.
  double level_sigma = 1.0;
  /// NMS gate as a fraction of the 99.9th percentile of positive responses.
  double response_floor = 0.1;
  /// z slices per tile; 0 evaluates the volume in one piece.
  int tile_slices = 0;

  void validate() const {
    if (n_scales < 1) throw Error("filter: n_scales must be >= 1");
    if (std::abs(pyramid_factor - 1.7) > 1e-12) throw Error("filter: only the 1.7 pyramid is implemented");
    if (radii.empty()) throw Error("filter: radii list is empty");
    for (std::size_t n = 0; n < radii.size(); ++n) {
      if (!(radii[n] > 0)) throw Error("filter: radii must be positive");
      if (n > 0 && !(radii[n] > radii[n - 1])) throw Error("filter: radii must be strictly increasing");
    }
    if (radii.size() > 16) throw Error("filter: at most 16 radii");
    if (n_scales * static_cast<int>(radii.size()) > 254) throw Error("filter: too many (scale, radius) pairs");
    if (level_sigma < 0) throw Error("filter: level_sigma must be non-negative");
    if (tile_slices < 0) throw Error("filter: tile_slices must be non-negative");
  }
};

// ---------------------------------------------------------------------------
// Boundary gradient and the offset medialness
// ---------------------------------------------------------------------------

/// B = sigma * grad(I_sigma) using the Farid first-derivative taps.
inline GradientField boundary_gradient(const FloatVolume& vol_sigma, double sigma) {
  GradientField g = farid_gradient(vol_sigma);
  for (FloatVolume* c : {&g.x, &g.y, &g.z})
    for (float& v : c->storage()) v = static_cast<float>(sigma * v);
  return g;
}

namespace detail {
inline double median_inplace(std::vector<double>& v) {
  const std::size_t n = v.size();
  std::sort(v.begin(), v.end());
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}
}  // namespace detail

/// Number of circle samples for radius r: floor(2 pi r + 1).
inline int circle_sample_count(double r) { return static_cast<int>(std::floor(2.0 * std::numbers::pi * r + 1.0)); }

/// Orthonormal basis of the plane normal to `axis`, anchored on the coordinate axis least
/// aligned with it. The plane equals span(v1, v2) of the Hessian frame, but v1 and v2 are
/// arbitrary within it when the cross-section is round (lambda1 ~ lambda2); tying the sample
/// phase to them made the response jump under tiny input changes.
inline std::pair<Vec3, Vec3> circle_basis(const Vec3& axis) {
  int e = 0;
  for (int a = 1; a < 3; ++a)
    if (std::abs(axis[a]) < std::abs(axis[e])) e = a;
  Vec3 ref{0, 0, 0};
  ref[e] = 1;
  Vec3 u = cross(axis, ref);
  u = (1.0 / norm(u)) * u;
  return {u, cross(axis, u)};
}

struct MedialnessTerms {
  double median = 0;      // R0+ and b-bar
  double mad = 0;         // s
  double symmetry = 0;    // S, clamped to [0, 1]
  double boundary = 0;    // R+
  double center = 0;      // |B(x)|
  double response = 0;    // R
};

/// Offset medialness at continuous position x. `boundary_at(p)` returns B at p and
/// already carries the sigma factor, so the central penalty is |B(x)|.
template <class Sampler>
MedialnessTerms medialness_terms(const Vec3& x, const EigenFrame& frame, Sampler&& boundary_at, double r,
                                 double symmetry_exponent = 1.5) {
  MedialnessTerms t;
  if (!bright_tube(frame)) return t;
  const auto [v1, v2] = circle_basis(frame.vectors[2]);
  const int n = circle_sample_count(r);
  std::vector<double> b(n);
  for (int i = 1; i <= n; ++i) {
    const double alpha = 2.0 * std::numbers::pi * i / n;
    const Vec3 dir = std::cos(alpha) * v1 + std::sin(alpha) * v2;
    b[i - 1] = std::abs(dot(boundary_at(x + r * dir), dir));
  }
  t.median = detail::median_inplace(b);
  for (double& v : b) v = std::abs(v - t.median);
  t.mad = detail::median_inplace(b);
  t.symmetry = t.median > 0 ? std::clamp(1.0 - t.mad / t.median, 0.0, 1.0) : 0.0;
  t.boundary = t.median * std::pow(t.symmetry, symmetry_exponent);
  t.center = norm(boundary_at(x));
  t.response = std::max(t.boundary - t.center, 0.0);
  return t;
}

/// R(x, r, sigma) on a whole-volume boundary-gradient field.
inline double medialness_at(const VoxelIndex& x, const EigenFrame& frame, const GradientField& boundary, double r,
                            double symmetry_exponent = 1.5) {
  auto sampler = [&](const Vec3& p) {
    return Vec3{sample_trilinear(boundary.x, p[0], p[1], p[2]), sample_trilinear(boundary.y, p[0], p[1], p[2]),
                sample_trilinear(boundary.z, p[0], p[1], p[2])};
  };
  return medialness_terms(Vec3{double(x.i), double(x.j), double(x.k)}, frame, sampler, r, symmetry_exponent)
      .response;
}

// ---------------------------------------------------------------------------
// Multi-scale filter
// ---------------------------------------------------------------------------

struct MedialnessField {
  FloatVolume response;                 // R_multi >= 0
  Volume<std::uint8_t> argmax;          // 0 = no response, else 1 + level * n_radii + radius index
  FloatVolume radius;                   // winning radius in full-resolution voxels
  GradientField direction;              // unit v3 at the winning level, zero where response == 0
  int n_radii = 0;

  int level_of(std::size_t n) const { return argmax[n] ? (argmax[n] - 1) / n_radii : -1; }
  int radius_index_of(std::size_t n) const { return argmax[n] ? (argmax[n] - 1) % n_radii : -1; }
};

/// Lungs minus the one-voxel-dilated airway.
inline Mask filter_region(const LabelVolume& lungs, const Mask& airway) {
  if (!lungs.same_geometry(airway)) throw Error("filter: lung and airway masks are not aligned");
  Mask lung = Mask::like(lungs);
  for (std::size_t n = 0; n < lungs.size(); ++n)
    lung[n] = (lungs[n] == label::kLeft || lungs[n] == label::kRight) ? 1 : 0;
  return mask_and_not(lung, dilate(airway, 1));
}

namespace detail {

struct Range {
  int lo = 0, hi = 0;  // [lo, hi)
};

/// Full-resolution coordinate mapped into level L (scaled by (1/1.7)^L).
inline double level_coordinate(double full, int level) {
  double p = full;
  for (int l = 0; l < level; ++l) p = p * 10.0 / 17.0;
  return p;
}

struct LevelGeometry {
  std::vector<Dims> dims;
  std::vector<Range> response;  // level voxels whose responses are read back
  std::vector<Range> grid;      // level voxels that must be stored
};

inline LevelGeometry plan_levels(const Dims& full, const FilterConfig& cfg, Range out) {
  LevelGeometry g;
  Dims d = full;
  for (int l = 0; l < cfg.n_scales; ++l) {
    g.dims.push_back(d);
    d = {pyramid_extent(d.x), pyramid_extent(d.y), pyramid_extent(d.z)};
  }
  const int rmax = static_cast<int>(std::ceil(cfg.radii.back()));
  const int smooth_h = static_cast<int>(std::ceil(3.0 * cfg.level_sigma));
  // trilinear (+1) on B, circle offset, Farid support for B and H, smoothing support, slack
  const int margin = 1 + rmax + kFaridRadius + smooth_h + 2;
  const int pre_h = static_cast<int>(std::ceil(3.0 * kPyramidPresmooth));
  for (int l = 0; l < cfg.n_scales; ++l) {
    const int nz = g.dims[l].z;
    // cubic upsampling reads floor - 1 .. floor + 2
    const int lo = static_cast<int>(std::floor(level_coordinate(out.lo, l))) - 1;
    const int hi = static_cast<int>(std::floor(level_coordinate(out.hi - 1, l))) + 3;
    Range r{std::clamp(lo, 0, nz), std::clamp(hi, 0, nz)};
    g.response.push_back(r);
    g.grid.push_back({std::clamp(r.lo - margin, 0, nz), std::clamp(r.hi + margin, 0, nz)});
  }
  for (int l = cfg.n_scales - 1; l > 0; --l) {
    const Range coarse = g.grid[l];
    const int nz = g.dims[l - 1].z;
    const int lo = static_cast<int>(std::floor(pyramid_position(coarse.lo))) - pre_h - 2;
    const int hi = static_cast<int>(std::floor(pyramid_position(coarse.hi - 1))) + 2 + pre_h + 2;
    Range& fine = g.grid[l - 1];
    fine.lo = std::clamp(std::min(fine.lo, lo), 0, nz);
    fine.hi = std::clamp(std::max(fine.hi, hi), 0, nz);
  }
  return g;
}

inline Slab crop_slab(const FloatVolume& full, Range r) {
  const Dims d = full.dims();
  Slab s{FloatVolume(Dims{d.x, d.y, r.hi - r.lo}, full.spacing(), full.origin()), r.lo, d.z};
  const std::size_t plane = static_cast<std::size_t>(d.x) * d.y;
  std::copy(full.data().begin() + static_cast<std::ptrdiff_t>(plane * r.lo),
            full.data().begin() + static_cast<std::ptrdiff_t>(plane * r.hi), s.vol.data().begin());
  return s;
}

/// Computes slices [out.lo, out.hi) of the field into `field`.
inline void filter_range(const FloatVolume& image, const Mask& region, const FilterConfig& cfg, Range out,
                         MedialnessField& field) {
  const LevelGeometry geo = plan_levels(image.dims(), cfg, out);
  const int nr = static_cast<int>(cfg.radii.size());
  const Dims full = image.dims();

  struct LevelResult {
    std::vector<Slab> response;  // per radius
    std::array<Slab, 3> direction;
    Range range;
  };
  std::vector<LevelResult> levels(cfg.n_scales);

  Slab grid = crop_slab(image, geo.grid[0]);
  for (int l = 0; l < cfg.n_scales; ++l) {
    const Dims ld = geo.dims[l];
    const Range rr = geo.response[l];
    // Level voxels read back by the upsampling of some region voxel in the output range.
    Mask needed(Dims{ld.x, ld.y, std::max(1, rr.hi - rr.lo)});
    for (int k = out.lo; k < out.hi; ++k)
      for (int j = 0; j < full.y; ++j)
        for (int i = 0; i < full.x; ++i) {
          if (!region(i, j, k)) continue;
          const int pi = static_cast<int>(level_coordinate(i, l));
          const int pj = static_cast<int>(level_coordinate(j, l));
          const int pk = static_cast<int>(level_coordinate(k, l));
          const int lo = l == 0 ? 0 : -1, hi = l == 0 ? 1 : 2;
          for (int dk = lo; dk <= hi; ++dk)
            for (int dj = lo; dj <= hi; ++dj)
              for (int di = lo; di <= hi; ++di) {
                const int a = std::clamp(pi + di, 0, ld.x - 1), b = std::clamp(pj + dj, 0, ld.y - 1),
                          z = std::clamp(pk + dk, 0, ld.z - 1);
                if (z >= rr.lo && z < rr.hi) needed(a, b, z - rr.lo) = 1;
              }
        }

    const Slab smooth = gaussian_smooth(grid, cfg.level_sigma);
    const GradientSlabs boundary = farid_gradient(smooth);  // sigma = 1 level voxel
    const HessianSlabs hessian = farid_hessian(smooth);

    LevelResult& res = levels[l];
    res.range = rr;
    const Dims rd{ld.x, ld.y, std::max(1, rr.hi - rr.lo)};
    for (int r = 0; r < nr; ++r) res.response.push_back(Slab{FloatVolume(rd), rr.lo, ld.z});
    for (auto& s : res.direction) s = Slab{FloatVolume(rd), rr.lo, ld.z};

    auto sampler = [&](const Vec3& p) {
      return Vec3{sample_trilinear(boundary.x, p[0], p[1], p[2]), sample_trilinear(boundary.y, p[0], p[1], p[2]),
                  sample_trilinear(boundary.z, p[0], p[1], p[2])};
    };
    parallel_for(rr.lo, rr.hi, [&](int k) {
      const int lk = k - rr.lo;
      for (int j = 0; j < ld.y; ++j)
        for (int i = 0; i < ld.x; ++i) {
          if (!needed(i, j, lk)) continue;
          const EigenFrame frame = eigen_symmetric3(hessian.at(i, j, smooth.local_z(k)));
          if (!bright_tube(frame)) continue;
          const Vec3 x{double(i), double(j), double(k)};
          for (int r = 0; r < nr; ++r)
            res.response[r].vol(i, j, lk) = static_cast<float>(
                medialness_terms(x, frame, sampler, cfg.radii[r], cfg.symmetry_exponent).response);
          for (int c = 0; c < 3; ++c) res.direction[c].vol(i, j, lk) = static_cast<float>(frame.vectors[2][c]);
        }
    });

    if (l + 1 < cfg.n_scales) {
      const Slab pre = gaussian_smooth(grid, kPyramidPresmooth);
      grid = downsample_presmoothed(pre, geo.grid[l + 1].lo, geo.grid[l + 1].hi);
    }
  }

  parallel_for(out.lo, out.hi, [&](int k) {
    for (int j = 0; j < full.y; ++j)
      for (int i = 0; i < full.x; ++i) {
        const std::size_t n = field.response.index(i, j, k);
        if (!region[n]) continue;
        double best = 0;
        int best_l = -1, best_r = -1;
        for (int l = 0; l < cfg.n_scales; ++l) {
          const double x = level_coordinate(i, l), y = level_coordinate(j, l), z = level_coordinate(k, l);
          for (int r = 0; r < nr; ++r) {
            const double v = l == 0 ? levels[l].response[r].vol(i, j, levels[l].response[r].local_z(k))
                                    : sample_cubic(levels[l].response[r], x, y, z);
            if (v > best) {
              best = v;
              best_l = l;
              best_r = r;
            }
          }
        }
        if (best_l < 0) continue;
        field.response[n] = static_cast<float>(best);
        field.argmax[n] = static_cast<std::uint8_t>(1 + best_l * nr + best_r);
        field.radius[n] = static_cast<float>(cfg.radii[best_r] * std::pow(1.7, best_l));
        const LevelResult& lr = levels[best_l];
        const Dims ld = geo.dims[best_l];
        const int pi = std::clamp(static_cast<int>(std::lround(level_coordinate(i, best_l))), 0, ld.x - 1);
        const int pj = std::clamp(static_cast<int>(std::lround(level_coordinate(j, best_l))), 0, ld.y - 1);
        const int pk = std::clamp(static_cast<int>(std::lround(level_coordinate(k, best_l))), 0, ld.z - 1);
        const int lk = lr.direction[0].local_z(pk);
        Vec3 dir{lr.direction[0].vol(pi, pj, lk), lr.direction[1].vol(pi, pj, lk), lr.direction[2].vol(pi, pj, lk)};
        const double len = norm(dir);
        if (len == 0) {
          // Nearest level voxel failed the gate; the cubic support is 4^3 voxels, so the
          // nearest gated voxel within it supplies the direction.
          const double cx = level_coordinate(i, best_l), cy = level_coordinate(j, best_l),
                       cz = level_coordinate(k, best_l);
          const int bx = static_cast<int>(cx), by = static_cast<int>(cy), bz = static_cast<int>(cz);
          double nearest = std::numeric_limits<double>::max();
          for (int dz = -1; dz <= 2; ++dz)
            for (int dy = -1; dy <= 2; ++dy)
              for (int dx = -1; dx <= 2; ++dx) {
                const int a = std::clamp(bx + dx, 0, ld.x - 1), b = std::clamp(by + dy, 0, ld.y - 1),
                          c = std::clamp(bz + dz, 0, ld.z - 1);
                const int z = lr.direction[0].local_z(c);
                const Vec3 cand{lr.direction[0].vol(a, b, z), lr.direction[1].vol(a, b, z),
                                lr.direction[2].vol(a, b, z)};
                const double dd = (a - cx) * (a - cx) + (b - cy) * (b - cy) + (c - cz) * (c - cz);
                if (norm(cand) > 0 && dd < nearest) {
                  nearest = dd;
                  dir = cand;
                }
              }
        }
        const double dl = norm(dir);
        if (dl > 0) dir = (1.0 / dl) * dir;
        field.direction.x[n] = static_cast<float>(dir[0]);
        field.direction.y[n] = static_cast<float>(dir[1]);
        field.direction.z[n] = static_cast<float>(dir[2]);
      }
  });
}

}  // namespace detail

/// Filter on a float image restricted to `region`. The image is shifted by its minimum
/// first, so adding a constant to the input leaves the result bit-identical.
inline MedialnessField run_filter(const FloatVolume& image, const Mask& region, const FilterConfig& cfg) {
  cfg.validate();
  if (!image.same_geometry(region)) throw Error("filter: mask and volume are not aligned");
  const Dims d = image.dims();
  require_farid_support(d);
  FloatVolume shifted = image;
  const float lo = *std::min_element(image.data().begin(), image.data().end());
  for (float& v : shifted.storage()) v -= lo;

  MedialnessField field{FloatVolume::like(image), Volume<std::uint8_t>::like(image), FloatVolume::like(image),
                        GradientField{FloatVolume::like(image), FloatVolume::like(image), FloatVolume::like(image)},
                        static_cast<int>(cfg.radii.size())};
  const int tile = cfg.tile_slices > 0 ? cfg.tile_slices : d.z;
  for (int z = 0; z < d.z; z += tile) detail::filter_range(shifted, region, cfg, {z, std::min(d.z, z + tile)}, field);
  return field;
}

inline MedialnessField run_filter(const CtVolume& vol, const LabelVolume& lungs, const Mask& airway,
                                  const FilterConfig& cfg) {
  if (!vol.same_geometry(lungs) || !vol.same_geometry(airway)) throw Error("filter: mask/volume mismatch");
  return run_filter(to_float(vol), filter_region(lungs, airway), cfg);
}

/// Absolute NMS gate: response_floor times the 99.9th percentile of positive responses.
inline double response_threshold(const FloatVolume& response, double floor_fraction) {
  std::vector<float> pos;
  for (float v : response.data())
    if (v > 0) pos.push_back(v);
  if (pos.empty()) return 0.0;
  return floor_fraction * percentile(std::move(pos), 99.9);
}

}  // namespace pvseg
