/// @file phantom.hpp
/// @brief Synthetic tube and torso phantoms with ground truth, and reproducible Gaussian
///        noise.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <numbers>
#include <vector>

#include "parallel.hpp"
#include "volume.hpp"

namespace pvseg {

struct TubeSpec {
  std::vector<Vec3> points;   // mm
  std::vector<double> radii;  // mm, one per point
  double hu = 0;

  void validate() const {
    if (points.size() < 2) throw Error("tube: at least two control points are required");
    if (radii.size() != points.size()) throw Error("tube: one radius per control point is required");
    for (double r : radii)
      if (!(r > 0)) throw Error("tube: radii must be positive");
  }
};

struct PhantomSpec {
  Dims dims{64, 64, 64};
  Vec3 spacing{1, 1, 1};
  double background_hu = -850;
  std::vector<TubeSpec> tubes;
};

struct Phantom {
  CtVolume ct;
  LabelVolume truth;                         // label::kVessel on tube voxels
  std::vector<std::vector<Vec3>> centerline;  // per tube, mm, sampled at voxel pitch
};

namespace detail {

struct SegmentHit {
  double dist = std::numeric_limits<double>::max();
  double radius = 0;
};

/// Point-to-segment distance and the radius interpolated at the closest point.
inline SegmentHit segment_distance(const Vec3& p, const Vec3& a, const Vec3& b, double ra, double rb) {
  const Vec3 ab = b - a;
  const double len2 = dot(ab, ab);
  const double t = len2 > 0 ? std::clamp(dot(p - a, ab) / len2, 0.0, 1.0) : 0.0;
  return {norm(p - (a + t * ab)), ra + t * (rb - ra)};
}

inline std::int16_t to_hu(double v) {
  return static_cast<std::int16_t>(std::clamp(std::lround(v), long(std::numeric_limits<std::int16_t>::min()),
                                              long(std::numeric_limits<std::int16_t>::max())));
}

}  // namespace detail

/// Per-voxel fill fraction of one tube: 1 up to (radius - h/2), 0 beyond (radius + h/2),
/// linear in between, h = one voxel pitch. Foreground iff distance <= radius.
struct TubeCoverage {
  double fraction = 0;
  bool inside = false;
};

inline TubeCoverage tube_coverage(const Vec3& p, const TubeSpec& tube, double pitch) {
  TubeCoverage c;
  for (std::size_t s = 0; s + 1 < tube.points.size(); ++s) {
    const auto hit = detail::segment_distance(p, tube.points[s], tube.points[s + 1], tube.radii[s], tube.radii[s + 1]);
    c.inside = c.inside || hit.dist <= hit.radius;
    c.fraction = std::max(c.fraction, std::clamp((hit.radius - hit.dist) / pitch + 0.5, 0.0, 1.0));
  }
  return c;
}

/// Rasterizes tubes over a background. Where tubes overlap the strongest contribution wins.
inline Phantom rasterize_tubes(const PhantomSpec& spec) {
  for (const auto& t : spec.tubes) t.validate();
  const Dims d = spec.dims;
  Phantom ph;
  ph.ct = CtVolume(d, spec.spacing, {0, 0, 0}, detail::to_hu(spec.background_hu));
  ph.truth = LabelVolume(d, spec.spacing, {0, 0, 0}, Legend{{label::kBackground, "background"}, {label::kVessel, "vessel"}});
  const double pitch = (spec.spacing[0] + spec.spacing[1] + spec.spacing[2]) / 3.0;
  const Vec3 upper{(d.x - 1) * spec.spacing[0], (d.y - 1) * spec.spacing[1], (d.z - 1) * spec.spacing[2]};
  for (const auto& t : spec.tubes)
    for (std::size_t n = 0; n < t.points.size(); ++n)
      for (int a = 0; a < 3; ++a)
        if (t.points[n][a] - t.radii[n] < 0 || t.points[n][a] + t.radii[n] > upper[a])
          throw Error("tube exits the volume");

  parallel_for(0, d.z, [&](int k) {
    for (int j = 0; j < d.y; ++j)
      for (int i = 0; i < d.x; ++i) {
        const Vec3 p = ph.ct.physical(VoxelIndex{i, j, k});
        double value = spec.background_hu;
        double best = 0;
        bool inside = false;
        for (const auto& t : spec.tubes) {
          const TubeCoverage c = tube_coverage(p, t, pitch);
          inside = inside || c.inside;
          const double v = spec.background_hu + c.fraction * (t.hu - spec.background_hu);
          if (std::abs(v - spec.background_hu) > best) {
            best = std::abs(v - spec.background_hu);
            value = v;
          }
        }
        ph.ct(i, j, k) = detail::to_hu(value);
        if (inside) ph.truth(i, j, k) = label::kVessel;
      }
  });

  for (const auto& t : spec.tubes) {
    std::vector<Vec3> line;
    for (std::size_t s = 0; s + 1 < t.points.size(); ++s) {
      const double len = norm(t.points[s + 1] - t.points[s]);
      const int steps = std::max(1, static_cast<int>(std::ceil(len / pitch)));
      for (int q = 0; q < steps; ++q) line.push_back(t.points[s] + (double(q) / steps) * (t.points[s + 1] - t.points[s]));
    }
    line.push_back(t.points.back());
    ph.centerline.push_back(std::move(line));
  }
  return ph;
}

/// Control points where three or more tube ends or passes meet.
inline std::vector<Vec3> branch_points(const std::vector<TubeSpec>& tubes, double tol = 1e-6) {
  std::vector<std::pair<Vec3, int>> degree;
  auto bump = [&](const Vec3& p, int by) {
    for (auto& [q, n] : degree)
      if (norm(p - q) <= tol) {
        n += by;
        return;
      }
    degree.emplace_back(p, by);
  };
  for (const auto& t : tubes)
    for (std::size_t n = 0; n < t.points.size(); ++n)
      bump(t.points[n], (n == 0 || n + 1 == t.points.size()) ? 1 : 2);
  std::vector<Vec3> out;
  for (const auto& [p, n] : degree)
    if (n >= 3) out.push_back(p);
  return out;
}

// ---------------------------------------------------------------------------
// Noise
// ---------------------------------------------------------------------------

struct NoiseSpec {
  double std_hu = 0;
  std::uint64_t seed = 0;
};

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

/// Uniform in (0, 1].
inline double unit_uniform(std::uint64_t bits) { return (double(bits >> 11) + 1.0) * 0x1.0p-53; }

/// Standard normal deviate for a (seed, counter) pair.
inline double gaussian_at(std::uint64_t seed, std::uint64_t counter) {
  const std::uint64_t key = splitmix64(seed ^ splitmix64(counter));
  const double u1 = unit_uniform(splitmix64(key));
  const double u2 = unit_uniform(splitmix64(key + 1));
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

}  // namespace detail

/// Adds i.i.d. Gaussian noise; each voxel's deviate depends only on (seed, voxel index).
inline CtVolume add_gaussian_noise(const CtVolume& vol, const NoiseSpec& spec) {
  if (!(spec.std_hu >= 0)) throw Error("noise: standard deviation must be non-negative");
  CtVolume out = vol;
  if (spec.std_hu == 0) return out;
  const Dims d = vol.dims();
  parallel_for(0, d.z, [&](int k) {
    const std::size_t begin = vol.index(0, 0, k), end = begin + std::size_t(d.x) * d.y;
    for (std::size_t n = begin; n < end; ++n)
      out[n] = detail::to_hu(double(vol[n]) + spec.std_hu * detail::gaussian_at(spec.seed, n));
  });
  return out;
}

// ---------------------------------------------------------------------------
// Torso
// ---------------------------------------------------------------------------

struct TorsoSpec {
  int size = 96;  // cubic grid, 1 mm voxels
  double body_hu = 40;
  double lung_hu = -850;
  double heart_hu = 400;
  double vessel_hu = 200;
  double air_hu = -1000;
  bool vessels = true;
  bool heart = true;
};

struct Ellipsoid {
  Vec3 center;
  Vec3 semi;
  bool contains(const Vec3& p) const {
    double s = 0;
    for (int a = 0; a < 3; ++a) s += ((p[a] - center[a]) / semi[a]) * ((p[a] - center[a]) / semi[a]);
    return s <= 1.0;
  }
};

struct Torso {
  CtVolume ct;
  LabelVolume lungs;    // geometric left/right lung membership (before airways and vessels)
  Mask vessels;         // tube foreground inside the lungs
  Mask airway;          // trachea and main bronchi lumen
  Ellipsoid heart;
  Ellipsoid left_lung, right_lung;
  VoxelIndex carina;
  std::vector<TubeSpec> vessel_tubes;
  std::vector<TubeSpec> airway_tubes;
};

/// Chest-like phantom: elliptic body cylinder in air, two lung ellipsoids, a bright heart
/// between them at mid-lung height, a trachea from the top face splitting into two main
/// bronchi, and one branching contrast vessel tree per lung. The larger-x lung is "left".
inline Torso make_torso(const TorsoSpec& spec = {}) {
  const int n = spec.size;
  if (n < 48) throw Error("torso phantom: size must be at least 48");
  const double c = 0.5 * (n - 1);
  const auto f = [n](double x) { return std::round(x * n); };
  Torso t;
  t.ct = CtVolume(Dims{n, n, n}, {1, 1, 1}, {0, 0, 0}, detail::to_hu(spec.air_hu));
  t.lungs = LabelVolume(Dims{n, n, n}, {1, 1, 1}, {0, 0, 0},
                        Legend{{0, "background"}, {label::kLeft, "left lung"}, {label::kRight, "right lung"}});
  t.vessels = Mask::like(t.ct, 0);
  t.airway = Mask::like(t.ct, 0);

  const double lung_dx = f(0.21);
  t.left_lung = {{c + lung_dx, c, f(0.48)}, {f(0.14), f(0.27), f(0.36)}};
  t.right_lung = {{c - lung_dx, c, f(0.48)}, {f(0.14), f(0.27), f(0.36)}};
  t.heart = {{c, c + f(0.04), f(0.43)}, {f(0.055), f(0.12), f(0.07)}};
  const double body_a = 0.46 * n, body_b = 0.40 * n;

  // airway: trachea down the midline, bronchi towards each lung's upper medial part
  const double tr = std::max(3.5, 0.035 * n), br = std::max(2.0, 0.026 * n);
  const Vec3 top{c, c, double(n - 1)}, car{c, c, f(0.74)};
  t.carina = {int(std::lround(car[0])), int(std::lround(car[1])), int(std::lround(car[2]))};
  const Vec3 lb{c + lung_dx - f(0.03), c, f(0.60)}, rb{c - lung_dx + f(0.03), c, f(0.60)};
  t.airway_tubes = {{{top, car}, {tr, tr}, spec.air_hu}, {{car, lb}, {br, br}, spec.air_hu},
                    {{car, rb}, {br, br}, spec.air_hu}};

  // vessels: root near the hilum, two generations of diagonal branches
  if (spec.vessels) {
    for (int s : {1, -1}) {
      const double sx = s;
      const Vec3 root{c + sx * (lung_dx - f(0.07)), c, f(0.43)};
      const double L1 = f(0.08), L2 = f(0.14);
      const Vec3 j1 = root + Vec3{sx * L1, 0, 0};
      const Vec3 a = j1 + Vec3{sx * L2 * 0.5, 0, L2};
      const Vec3 b = j1 + Vec3{sx * L2 * 0.5, 0, -L2};
      const double r1 = 3, r2 = 2;
      // trunk from the heart into the lung
      t.vessel_tubes.push_back({{t.heart.center, root}, {r1, r1}, spec.vessel_hu});
      t.vessel_tubes.push_back({{root, j1}, {r1, r1}, spec.vessel_hu});
      t.vessel_tubes.push_back({{j1, a}, {r2, r2}, spec.vessel_hu});
      t.vessel_tubes.push_back({{j1, b}, {r2, r2}, spec.vessel_hu});
    }
  }

  parallel_for(0, n, [&](int k) {
    for (int j = 0; j < n; ++j)
      for (int i = 0; i < n; ++i) {
        const Vec3 p{double(i), double(j), double(k)};
        double v = spec.air_hu;
        const double bx = (i - c) / body_a, by = (j - c) / body_b;
        if (bx * bx + by * by <= 1.0) v = spec.body_hu;
        const bool left = t.left_lung.contains(p), right = t.right_lung.contains(p);
        if (left || right) {
          v = spec.lung_hu;
          t.lungs(i, j, k) = left ? label::kLeft : label::kRight;
        }
        if (spec.heart && t.heart.contains(p)) v = spec.heart_hu;
        if (!(left || right) && v > spec.air_hu + 1) {
          // trunks outside the lungs are drawn but are not part of the truth mask
          double best = 0;
          for (const auto& tube : t.vessel_tubes) best = std::max(best, tube_coverage(p, tube, 1.0).fraction);
          if (best > 0) v = std::max(v, v + best * (spec.vessel_hu - v));
        }
        for (const auto& tube : t.airway_tubes) {
          const TubeCoverage cov = tube_coverage(p, tube, 1.0);
          if (cov.fraction > 0) v = v + cov.fraction * (spec.air_hu - v);
          if (cov.inside) t.airway(i, j, k) = 1;
        }
        if (left || right) {
          double best = 0;
          bool inside = false;
          for (const auto& tube : t.vessel_tubes) {
            const TubeCoverage cov = tube_coverage(p, tube, 1.0);
            best = std::max(best, cov.fraction);
            inside = inside || cov.inside;
          }
          if (best > 0) v = v + best * (spec.vessel_hu - v);
          if (inside) t.vessels(i, j, k) = 1;
        }
        t.ct(i, j, k) = detail::to_hu(v);
      }
  });
  return t;
}

}  // namespace pvseg
