#include <gtest/gtest.h>

#include "support.hpp"

using namespace pvseg;

namespace {

Matrix3 reconstruct(const EigenFrame& f) {
  Matrix3 m{};
  for (int e = 0; e < 3; ++e)
    for (int a = 0; a < 3; ++a)
      for (int b = 0; b < 3; ++b) m[a][b] += f.values[e] * f.vectors[e][a] * f.vectors[e][b];
  return m;
}

double frob(const Matrix3& m) {
  double s = 0;
  for (auto& r : m)
    for (double x : r) s += x * x;
  return std::sqrt(s);
}

FilterConfig default_filter() { return FilterConfig{}; }

Mask everything(Dims d) {
  Mask m(d);
  m.fill(1);
  return m;
}

// Field of the whole volume, no lung restriction.
MedialnessField filter_all(const CtVolume& v, FilterConfig cfg = default_filter()) {
  return run_filter(to_float(v), everything(v.dims()), cfg);
}

// Direct single-scale evaluation on an image smoothed with sigma.
struct Direct {
  FloatVolume smooth;
  GradientField b;
};

Direct direct(const CtVolume& v, double sigma) {
  Direct d{gaussian_smooth(to_float(v), sigma), {}};
  d.b = boundary_gradient(d.smooth, sigma);
  return d;
}

MedialnessTerms terms_at(const Direct& d, VoxelIndex x, const EigenFrame& f, double r) {
  auto sampler = [&](const Vec3& p) {
    return Vec3{sample_trilinear(d.b.x, p[0], p[1], p[2]), sample_trilinear(d.b.y, p[0], p[1], p[2]),
                sample_trilinear(d.b.z, p[0], p[1], p[2])};
  };
  return medialness_terms({double(x.i), double(x.j), double(x.k)}, f, sampler, r);
}

}  // namespace

TEST(Eigen, IdentityAndDiagonal) {
  const auto id = eigen_symmetric3({{{1, 0, 0}, {0, 1, 0}, {0, 0, 1}}});
  for (double e : id.values) EXPECT_NEAR(e, 1.0, 1e-12);
  const auto f = eigen_symmetric3({{{1, 0, 0}, {0, -2, 0}, {0, 0, -3}}});
  EXPECT_NEAR(f.values[0], -3, 1e-12);
  EXPECT_NEAR(f.values[1], -2, 1e-12);
  EXPECT_NEAR(f.values[2], 1, 1e-12);
  EXPECT_NEAR(f.vectors[0][2], 1, 1e-12);
  EXPECT_NEAR(f.vectors[1][1], 1, 1e-12);
  EXPECT_NEAR(f.vectors[2][0], 1, 1e-12);
}

TEST(Eigen, RandomReconstructionOrderAndOrthonormality) {
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> u(-500, 500);
  for (int t = 0; t < 1000; ++t) {
    Matrix3 h;
    for (int a = 0; a < 3; ++a)
      for (int b = a; b < 3; ++b) h[a][b] = h[b][a] = u(rng);
    const auto f = eigen_symmetric3(h);
    Matrix3 diff = reconstruct(f);
    for (int a = 0; a < 3; ++a)
      for (int b = 0; b < 3; ++b) diff[a][b] -= h[a][b];
    ASSERT_LT(frob(diff), 1e-9 * frob(h)) << t;
    EXPECT_GE(std::abs(f.values[0]), std::abs(f.values[1]));
    EXPECT_GE(std::abs(f.values[1]), std::abs(f.values[2]));
    for (int a = 0; a < 3; ++a) {
      for (int b = 0; b < 3; ++b) EXPECT_NEAR(dot(f.vectors[a], f.vectors[b]), a == b ? 1.0 : 0.0, 1e-6);
      const auto& v = f.vectors[a];
      const int big = int(std::max_element(v.begin(), v.end(), [](double x, double y) {
                            return std::abs(x) < std::abs(y);
                          }) - v.begin());
      EXPECT_GT(v[big], 0);
    }
  }
}

TEST(BoundaryGradient, RampScalesWithSigma) {
  FloatVolume ramp({20, 20, 20});
  for (int k = 0; k < 20; ++k)
    for (int j = 0; j < 20; ++j)
      for (int i = 0; i < 20; ++i) ramp(i, j, k) = float(2 * i);
  const auto b = boundary_gradient(ramp, 1.5);
  const auto b2 = boundary_gradient(ramp, 3.0);
  const auto n = ramp.index(10, 10, 10);
  EXPECT_NEAR(b.magnitude(n), 3.0, 1e-3);
  EXPECT_NEAR(b2.magnitude(n), 2 * b.magnitude(n), 1e-5);
  const auto zero = boundary_gradient(FloatVolume({8, 8, 8}, {1, 1, 1}, {0, 0, 0}, 12.0f), 2.0);
  for (std::size_t q = 0; q < zero.x.size(); ++q) EXPECT_EQ(zero.magnitude(q), 0.0);
}

TEST(MedialnessAt, CylinderAxisIsSymmetricAndPositive) {
  const CtVolume v = test::z_cylinder({32, 32, 32}, 16, 16, 3, -550, -850);
  const auto d = direct(v, 1.5);
  const VoxelIndex x{16, 16, 16};
  const auto frame = eigen_symmetric3(hessian_at(d.smooth, x));
  ASSERT_TRUE(bright_tube(frame));
  EXPECT_NEAR(std::abs(frame.vectors[2][2]), 1.0, 1e-3);
  double best = -1;
  MedialnessTerms at_best;
  for (double r = 1; r <= 6; r += 0.25) {
    const auto t = terms_at(d, x, frame, r);
    if (t.response > best) best = t.response, at_best = t;
  }
  EXPECT_GT(at_best.response, 0);
  EXPECT_GE(at_best.symmetry, 0.9);
  EXPECT_LE(at_best.symmetry, 1.0);
  EXPECT_NEAR(medialness_at(x, frame, d.b, 3.0), terms_at(d, x, frame, 3.0).response, 1e-12);
}

TEST(MedialnessAt, IsolatedEdgeAndBoundaryVoxelAreSuppressed) {
  CtVolume half({32, 32, 32}, {1, 1, 1}, {0, 0, 0}, -850);
  for (int k = 0; k < 32; ++k)
    for (int j = 0; j < 32; ++j)
      for (int i = 19; i < 32; ++i) half(i, j, k) = -550;
  const auto d = direct(half, 1.5);
  // a bright-tube frame forced onto the edge configuration
  EigenFrame f{{-1, -1, 0}, {Vec3{1, 0, 0}, Vec3{0, 1, 0}, Vec3{0, 0, 1}}};
  // edge at x = 18.5, so x = 16 sits r = 2.5 from it
  const auto t = terms_at(d, {16, 16, 16}, f, 2.5);
  EXPECT_LT(t.symmetry, 0.1);
  EXPECT_GT(t.mad / t.median, 0.9);
  for (double r = 1; r <= 5; r += 0.5) EXPECT_EQ(terms_at(d, {16, 16, 16}, f, r).response, 0.0) << r;

  const CtVolume cyl = test::z_cylinder({32, 32, 32}, 16, 16, 3, -550, -850);
  const auto dc = direct(cyl, 1.5);
  const VoxelIndex edge{19, 16, 16};
  for (double r = 1; r <= 4; r += 0.5) EXPECT_EQ(medialness_at(edge, f, dc.b, r), 0.0) << r;
}

TEST(MedialnessAt, FailedGateGivesZero) {
  const CtVolume v = test::z_cylinder({24, 24, 24}, 12, 12, 3, -550, -850);
  const auto d = direct(v, 1.5);
  EigenFrame dark{{1, -1, 0}, {Vec3{1, 0, 0}, Vec3{0, 1, 0}, Vec3{0, 0, 1}}};
  EXPECT_EQ(medialness_at({12, 12, 12}, dark, d.b, 3.0), 0.0);
}

TEST(Filter, ArgmaxFollowsTheAxis) {
  const Dims dims{40, 40, 40};
  const Vec3 c{20.3, 19.6, 0};
  const CtVolume v = test::tube_volume(dims, {c[0], c[1], 3}, {c[0], c[1], 36}, 3);
  const auto field = filter_all(v);
  int good = 0, slices = 0;
  for (int k = 8; k < 32; ++k) {
    ++slices;
    double best = -1;
    VoxelIndex arg;
    for (int j = 0; j < 40; ++j)
      for (int i = 0; i < 40; ++i)
        if (field.response(i, j, k) > best) best = field.response(i, j, k), arg = {i, j, k};
    if (std::hypot(arg.i - c[0], arg.j - c[1]) <= 1.0) ++good;
  }
  EXPECT_GE(good, int(std::ceil(0.95 * slices)));
  for (std::size_t n = 0; n < field.response.size(); ++n) {
    ASSERT_GE(field.response[n], 0.0f);
    const double len = field.direction.magnitude(n);
    if (field.response[n] > 0) EXPECT_NEAR(len, 1.0, 1e-5);
    else EXPECT_EQ(len, 0.0);
  }
}

TEST(Filter, EmptyRegionGivesZeroField) {
  const CtVolume v = test::tube_volume({24, 24, 24}, {12, 12, 3}, {12, 12, 20}, 3);
  const auto field = run_filter(to_float(v), Mask({24, 24, 24}), default_filter());
  for (float x : field.response.data()) EXPECT_EQ(x, 0.0f);
  for (auto a : field.argmax.data()) EXPECT_EQ(a, 0);
}

TEST(Filter, RestrictedToLungsWithoutDilatedAirway) {
  const Dims dims{32, 32, 32};
  const CtVolume v = test::tube_volume(dims, {16, 16, 3}, {16, 16, 28}, 3);
  LabelVolume lungs(dims, {1, 1, 1}, {0, 0, 0});
  for (int k = 0; k < 32; ++k)
    for (int j = 0; j < 32; ++j)
      for (int i = 0; i < 32; ++i) lungs(i, j, k) = k < 16 ? label::kLeft : 0;
  Mask airway(dims);
  airway(16, 16, 8) = 1;
  const auto field = run_filter(v, lungs, airway, default_filter());
  const Mask region = filter_region(lungs, airway);
  EXPECT_EQ(region(16, 16, 9), 0);
  EXPECT_EQ(region(16, 16, 10), 1);
  for (std::size_t n = 0; n < field.response.size(); ++n)
    if (!region[n]) { EXPECT_EQ(field.response[n], 0.0f); }
  EXPECT_GT(field.response(16, 16, 12), 0.0f);
}

TEST(Filter, LargerVesselWinsAtCoarserLevel) {
  const Dims dims{64, 40, 40};
  PhantomSpec spec;
  spec.dims = dims;
  spec.tubes.push_back({{{16, 20, 6}, {16, 20, 33}}, {2, 2}, -550});
  spec.tubes.push_back({{{44, 20, 6}, {44, 20, 33}}, {5, 5}, -550});
  const auto field = filter_all(rasterize_tubes(spec).ct);
  std::vector<int> small, large;
  for (int k = 14; k < 26; ++k) {
    small.push_back(field.level_of(field.response.index(16, 20, k)));
    large.push_back(field.level_of(field.response.index(44, 20, k)));
  }
  std::sort(small.begin(), small.end());
  std::sort(large.begin(), large.end());
  const int ms = small[small.size() / 2], ml = large[large.size() / 2];
  EXPECT_GE(ms, 0);
  EXPECT_GT(ml, ms);
  EXPECT_GT(field.radius(44, 20, 20), field.radius(16, 20, 20));
}

TEST(Filter, ContrastEquivarianceAndOffsetInvariance) {
  const Dims dims{32, 32, 32};
  const CtVolume v = test::tube_volume(dims, {15.4, 16.2, 3}, {17, 15, 28}, 2.5, -600, -900);
  const FloatVolume f = to_float(v);
  const Mask all = everything(dims);
  const auto base = run_filter(f, all, default_filter());
  FloatVolume scaled = f, shifted = f;
  for (auto& x : scaled.storage()) x *= 2.5f;
  for (auto& x : shifted.storage()) x += 137.0f;
  const auto s = run_filter(scaled, all, default_filter());
  const auto o = run_filter(shifted, all, default_filter());
  float peak = 0;
  for (float x : base.response.data()) peak = std::max(peak, x);
  ASSERT_GT(peak, 0);
  std::size_t moved = 0, positive = 0;
  for (std::size_t n = 0; n < f.size(); ++n) {
    EXPECT_NEAR(s.response[n], 2.5f * base.response[n], 1e-5 * 2.5 * peak);
    if (base.response[n] > 1e-3f * peak) {
      ++positive;
      if (s.argmax[n] != base.argmax[n]) ++moved;
    }
  }
  EXPECT_LE(moved, positive / 100);
  EXPECT_EQ(o.response, base.response);
  EXPECT_EQ(o.argmax, base.argmax);
}

TEST(Filter, RotatedCylinderKeepsOnAxisResponse) {
  // The ridge height depends strongly on where the axis falls between voxel centres, and a
  // tilted axis sweeps through all such positions. Both orientations are therefore averaged
  // over the same 3 x 3 grid of sub-voxel axis offsets.
  const Dims dims{48, 48, 48};
  auto mean_on_axis = [&](const Vec3& axis) {
    double sum = 0;
    int n = 0;
    for (int ox = 0; ox < 3; ++ox)
      for (int oy = 0; oy < 3; ++oy) {
        const Vec3 mid{24 + ox / 3.0, 24 + oy / 3.0, 24};
        const auto field = filter_all(test::tube_volume(dims, mid - 20.0 * axis, mid + 20.0 * axis, 3));
        for (double t = -8; t <= 8; t += 1, ++n) {
          // ridge value: the largest response within one voxel of the axis point
          const Vec3 p = mid + t * axis;
          float best = 0;
          for (int k = int(p[2]) - 1; k <= int(p[2]) + 2; ++k)
            for (int j = int(p[1]) - 1; j <= int(p[1]) + 2; ++j)
              for (int i = int(p[0]) - 1; i <= int(p[0]) + 2; ++i)
                if (norm(Vec3{double(i), double(j), double(k)} - p) <= 1.0)
                  best = std::max(best, field.response(i, j, k));
          sum += best;
        }
      }
    return sum / n;
  };
  const double a = std::numbers::pi / 6;
  const double straight = mean_on_axis({0, 0, 1});
  const double rotated = mean_on_axis({std::sin(a), 0, std::cos(a)});
  EXPECT_GT(straight, 0);
  EXPECT_LT(std::abs(rotated - straight) / straight, 0.10) << straight << " vs " << rotated;
}

TEST(Filter, TiledEqualsUntiledBitForBit) {
  const Dims dims{36, 32, 41};
  PhantomSpec spec;
  spec.dims = dims;
  spec.tubes.push_back({{{6, 8, 4}, {18, 16, 20}, {28, 20, 36}}, {3, 2, 1.5}, -500});
  spec.tubes.push_back({{{18, 16, 20}, {8, 26, 34}}, {2, 1.5}, -500});
  const auto ct = add_gaussian_noise(rasterize_tubes(spec).ct, {30, 9});
  const auto whole = filter_all(ct);
  for (int tile : {1, 7, 16}) {
    FilterConfig cfg;
    cfg.tile_slices = tile;
    const auto tiled = filter_all(ct, cfg);
    EXPECT_EQ(tiled.response, whole.response) << tile;
    EXPECT_EQ(tiled.argmax, whole.argmax) << tile;
    EXPECT_EQ(tiled.radius, whole.radius) << tile;
    EXPECT_EQ(tiled.direction.x, whole.direction.x) << tile;
    EXPECT_EQ(tiled.direction.z, whole.direction.z) << tile;
  }
}

TEST(Filter, ThreadCountDoesNotChangeTheField) {
  const CtVolume ct = add_gaussian_noise(test::tube_volume({32, 32, 32}, {10, 12, 4}, {22, 20, 27}, 2.5), {25, 4});
  set_thread_count(1);
  const auto one = filter_all(ct);
  set_thread_count(8);
  const auto eight = filter_all(ct);
  set_thread_count(0);
  EXPECT_EQ(one.response, eight.response);
  EXPECT_EQ(one.argmax, eight.argmax);
}

TEST(Filter, OnAxisBeatsEverythingTwoVoxelsOff) {
  const CtVolume v = test::tube_volume({40, 40, 40}, {20, 20, 3}, {20, 20, 36}, 3);
  const auto field = filter_all(v);
  for (int k = 8; k < 32; ++k) {
    const float axis = field.response(20, 20, k);
    for (int j = 0; j < 40; ++j)
      for (int i = 0; i < 40; ++i)
        if (std::hypot(i - 20, j - 20) >= 2) { ASSERT_GT(axis, field.response(i, j, k)) << i << "," << j << "," << k; }
  }
}

TEST(Filter, ConfigValidation) {
  FilterConfig cfg;
  cfg.radii = {1.0, 1.0};
  EXPECT_THROW(cfg.validate(), Error);
  cfg = {};
  cfg.n_scales = 0;
  EXPECT_THROW(cfg.validate(), Error);
  cfg = {};
  cfg.pyramid_factor = 2;
  EXPECT_THROW(cfg.validate(), Error);
}
