// Small builders shared by the unit suites.
#pragma once

#include <filesystem>
#include <random>
#include <string>

#include <pvseg/pvseg.hpp>

namespace pvseg::test {

/// Fresh scratch directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() / ("pvseg_" + tag + "_" + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& s) const { return path_ / s; }

 private:
  std::filesystem::path path_;
};

/// Straight bright tube along z through (cx, cy), binary (no partial volume).
inline CtVolume z_cylinder(Dims d, double cx, double cy, double r, std::int16_t fg = 0,
                           std::int16_t bg = -850) {
  CtVolume v(d, {1, 1, 1}, {0, 0, 0}, bg);
  for (int k = 0; k < d.z; ++k)
    for (int j = 0; j < d.y; ++j)
      for (int i = 0; i < d.x; ++i)
        if ((i - cx) * (i - cx) + (j - cy) * (j - cy) <= r * r) v(i, j, k) = fg;
  return v;
}

/// Partial-volume tube from a to b (voxel coordinates, unit spacing).
inline CtVolume tube_volume(Dims d, Vec3 a, Vec3 b, double r, double hu = -550, double bg = -850) {
  PhantomSpec spec;
  spec.dims = d;
  spec.background_hu = bg;
  spec.tubes.push_back({{a, b}, {r, r}, hu});
  return rasterize_tubes(spec).ct;
}

/// Label volume with every voxel set to `value`.
inline LabelVolume uniform_labels(Dims d, std::uint8_t value) {
  LabelVolume l(d, {1, 1, 1}, {0, 0, 0});
  l.fill(value);
  return l;
}

inline Mask random_mask(Dims d, double p, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution b(p);
  Mask m(d);
  for (auto& v : m.storage()) v = b(rng) ? 1 : 0;
  return m;
}

}  // namespace pvseg::test
