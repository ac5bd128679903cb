#include <gtest/gtest.h>

#include "support.hpp"

using namespace pvseg;

namespace {

// Air tube (radius r) around polyline segments in +50 HU tissue.
CtVolume air_tubes(Dims d, const std::vector<std::pair<Vec3, Vec3>>& segs, double r) {
  CtVolume v(d, {1, 1, 1}, {0, 0, 0}, 50);
  for (int k = 0; k < d.z; ++k)
    for (int j = 0; j < d.y; ++j)
      for (int i = 0; i < d.x; ++i)
        for (const auto& [a, b] : segs)
          if (detail::segment_distance({double(i), double(j), double(k)}, a, b, r, r).dist <= r) v(i, j, k) = -1000;
  return v;
}

Mask bfs_equal(const CtVolume& v, VoxelIndex seed, std::int16_t value) {
  Mask m = Mask::like(v);
  std::vector<VoxelIndex> q{seed};
  m[seed] = 1;
  for (std::size_t n = 0; n < q.size(); ++n)
    for (const auto& w : neighbors(q[n], Connectivity::N6, v.dims()))
      if (!m[w] && v[w] == value) m[w] = 1, q.push_back(w);
  return m;
}

// Y: trachea from the top slice down to (32, 32, 40), bronchi to the lower corners.
CtVolume y_airway(double left_len = 1.0, double right_len = 1.0) {
  const Vec3 j{32, 32, 40};
  const Vec3 l = j + left_len * Vec3{14, 0, -28}, r = j + right_len * Vec3{-14, 0, -28};
  return air_tubes({64, 64, 64}, {{{32, 32, 70}, j}, {j, l}, {j, r}}, 3.0);
}

}  // namespace

TEST(TracheaSeed, DiskCentre) {
  CtVolume v({48, 48, 6}, {1, 1, 1}, {0, 0, 0}, 40);
  for (int j = 0; j < 48; ++j)
    for (int i = 0; i < 48; ++i)
      if ((i - 20) * (i - 20) + (j - 27) * (j - 27) <= 64) v(i, j, 5) = -1000;
  EXPECT_EQ(detect_trachea_seed(v), (VoxelIndex{20, 27, 5}));
}

TEST(TracheaSeed, DiskPreferredOverRibbon) {
  CtVolume v({64, 64, 4}, {1, 1, 1}, {0, 0, 0}, 40);
  for (int j = 0; j < 64; ++j)
    for (int i = 0; i < 64; ++i) {
      if ((i - 45) * (i - 45) + (j - 45) * (j - 45) <= 36) v(i, j, 3) = -1000;
      if (j >= 5 && j < 8 && i >= 5 && i < 45) v(i, j, 3) = -1000;  // 3 x 40 ribbon
    }
  const auto regions = detail::dark_regions(v, 3, -900);
  ASSERT_EQ(regions.size(), 2u);
  EXPECT_LT(std::min(regions[0].circularity, regions[1].circularity), 0.5);
  EXPECT_EQ(detect_trachea_seed(v), (VoxelIndex{45, 45, 3}));
}

TEST(TracheaSeed, TissueOnlySliceThrows) {
  EXPECT_THROW(detect_trachea_seed(CtVolume({32, 32, 4}, {1, 1, 1}, {0, 0, 0}, 40)), Error);
}

TEST(Grow, UniformTubeEqualsFloodFill) {
  const CtVolume v = air_tubes({24, 24, 60}, {{{12, 12, -5}, {12, 12, 65}}}, 4.0);
  GrowParams p;
  p.seed = {12, 12, 30};
  const auto res = grow_airway(v, p);
  EXPECT_EQ(res.mask, bfs_equal(v, p.seed, -1000));
  EXPECT_EQ(res.stop, GrowStop::Stall);
}

TEST(Grow, BreachIntoCavityIsDetectedAndExcluded) {
  // Tube joined by a 1-voxel channel to a -995 HU cavity; the window reaches -995 at t = 6.
  CtVolume v = air_tubes({64, 40, 40}, {{{8, 20, -5}, {8, 20, 45}}}, 4.0);
  for (int i = 12; i < 20; ++i) v(i, 20, 20) = -1000;
  for (int k = 5; k < 35; ++k)
    for (int j = 5; j < 35; ++j)
      for (int i = 20; i < 60; ++i) v(i, j, k) = -995;
  GrowParams p;
  p.seed = {8, 20, 20};
  p.stall_iterations = 100;
  const auto res = grow_airway(v, p);
  ASSERT_EQ(res.stop, GrowStop::Leak);
  EXPECT_NEAR(res.leak_iteration, 6, 1);
  const auto& last = res.trace.back();
  double mean = 0;
  for (std::size_t n = 0; n + 1 < res.trace.size(); ++n) mean += double(res.trace[n].total);
  mean /= double(res.trace.size() - 1);
  EXPECT_GT(double(last.total), 3 * mean);
  std::size_t cavity = 0;
  for (std::size_t n = 0; n < v.size(); ++n)
    if (res.mask[n] && v[n] == -995) ++cavity;
  EXPECT_EQ(cavity, 0u);
  EXPECT_EQ(res.mask(15, 20, 20), 1);  // channel kept
}

TEST(Grow, SeedInTissueThrows) {
  const CtVolume v = air_tubes({16, 16, 16}, {{{8, 8, 0}, {8, 8, 15}}}, 3.0);
  GrowParams p;
  p.seed = {1, 1, 8};
  EXPECT_THROW(grow_airway(v, p), Error);
}

TEST(Grow, MasksAreMonotoneInIteration) {
  // Graded tube: slice z holds -1000 + z HU, so each iteration adds about one slice.
  CtVolume v({20, 20, 30}, {1, 1, 1}, {0, 0, 0}, 50);
  for (int k = 0; k < 30; ++k)
    for (int j = 0; j < 20; ++j)
      for (int i = 0; i < 20; ++i)
        if ((i - 10) * (i - 10) + (j - 10) * (j - 10) <= 9) v(i, j, k) = std::int16_t(-1000 + k);
  GrowParams p;
  p.seed = {10, 10, 0};
  Mask prev = Mask::like(v);
  std::size_t prev_total = 0;
  for (int t = 1; t <= 12; ++t) {
    p.max_iterations = t;
    const auto res = grow_airway(v, p);
    for (std::size_t n = 0; n < v.size(); ++n)
      if (prev[n]) { ASSERT_TRUE(res.mask[n]) << "t=" << t; }
    EXPECT_GE(count_nonzero(res.mask), prev_total);
    for (std::size_t r = 1; r < res.trace.size(); ++r) EXPECT_GE(res.trace[r].total, res.trace[r - 1].total);
    prev = res.mask;
    prev_total = count_nonzero(res.mask);
  }
  EXPECT_GT(prev_total, 9u * 5);
}

TEST(Grow, IntensityOffsetInvariance) {
  CtVolume v = air_tubes({64, 40, 40}, {{{8, 20, -5}, {8, 20, 45}}}, 4.0);
  for (int i = 12; i < 20; ++i) v(i, 20, 20) = -1000;
  for (int k = 5; k < 35; ++k)
    for (int j = 5; j < 35; ++j)
      for (int i = 20; i < 60; ++i) v(i, j, k) = -995;
  GrowParams p;
  p.seed = {8, 20, 20};
  p.stall_iterations = 100;
  const auto base = grow_airway(v, p);
  for (int c : {-3, 17, 250}) {
    CtVolume shifted = v;
    for (auto& x : shifted.storage()) x = std::int16_t(x + c);
    const auto res = grow_airway(shifted, p);
    EXPECT_EQ(res.mask, base.mask) << c;
    EXPECT_EQ(res.leak_iteration, base.leak_iteration);
  }
}

TEST(Skeleton, YCarinaAndBranchLabels) {
  const CtVolume v = y_airway();
  GrowParams p;
  p.seed = detect_trachea_seed(v);
  const auto grown = grow_airway(v, p);
  const auto tree = skeletonize_and_label(grown.mask);
  const Vec3 c{double(tree.carina.i), double(tree.carina.j), double(tree.carina.k)};
  EXPECT_LE(norm(c - Vec3{32, 32, 40}), 2.0);
  EXPECT_EQ(tree.carina.i, 32);
  for (std::size_t n = 0; n < v.size(); ++n)
    if (tree.skeleton[n]) { ASSERT_TRUE(grown.mask[n]); }
  EXPECT_EQ(tree.labels(44, 32, 14), label::kLeft);   // larger x
  EXPECT_EQ(tree.labels(20, 32, 14), label::kRight);
  EXPECT_EQ(tree.labels(32, 32, 60), label::kAirway);
  // every airway voxel gets a label, nothing outside does
  for (std::size_t n = 0; n < v.size(); ++n) EXPECT_EQ(tree.labels[n] != 0, grown.mask[n] != 0);

  SkeletonOptions flip;
  flip.flip_lr = true;
  EXPECT_EQ(skeletonize_and_label(grown.mask, flip).labels(44, 32, 14), label::kRight);
}

TEST(Skeleton, AsymmetricLengthsKeepCentroidSides) {
  for (auto [l, r] : {std::pair{1.0, 0.5}, std::pair{0.5, 1.0}}) {
    const CtVolume v = y_airway(l, r);
    GrowParams p;
    p.seed = detect_trachea_seed(v);
    const auto tree = skeletonize_and_label(grow_airway(v, p).mask);
    EXPECT_EQ(tree.labels(32 + int(12 * l), 32, int(40 - 24 * l)), label::kLeft);
    EXPECT_EQ(tree.labels(32 - int(12 * r), 32, int(40 - 24 * r)), label::kRight);
  }
}

TEST(Skeleton, StraightTubeHasNoCarina) {
  const CtVolume v = air_tubes({24, 24, 40}, {{{12, 12, 3}, {12, 12, 45}}}, 3.0);
  GrowParams p;
  p.seed = {12, 12, 39};
  const auto grown = grow_airway(v, p);
  EXPECT_THROW(skeletonize_and_label(grown.mask), Error);
}
