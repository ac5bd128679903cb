/// @file volume.hpp
/// @brief Dense 3D grids with physical geometry, voxel indexing and neighborhoods.

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace pvseg {

/// Base exception for everything thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using Vec3 = std::array<double, 3>;

inline Vec3 operator+(const Vec3& a, const Vec3& b) { return {a[0] + b[0], a[1] + b[1], a[2] + b[2]}; }
inline Vec3 operator-(const Vec3& a, const Vec3& b) { return {a[0] - b[0], a[1] - b[1], a[2] - b[2]}; }
inline Vec3 operator*(double s, const Vec3& a) { return {s * a[0], s * a[1], s * a[2]}; }
inline double dot(const Vec3& a, const Vec3& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }
inline double norm(const Vec3& a) { return std::sqrt(dot(a, a)); }
inline Vec3 cross(const Vec3& a, const Vec3& b) {
  return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}

struct Dims {
  int x = 0, y = 0, z = 0;
  friend bool operator==(const Dims&, const Dims&) = default;
  std::size_t count() const {
    return static_cast<std::size_t>(x) * static_cast<std::size_t>(y) * static_cast<std::size_t>(z);
  }
  int operator[](int axis) const { return axis == 0 ? x : (axis == 1 ? y : z); }
};

struct VoxelIndex {
  int i = 0, j = 0, k = 0;
  friend bool operator==(const VoxelIndex&, const VoxelIndex&) = default;
  /// Lexicographic by (k, j, i), i.e. raster order.
  friend bool operator<(const VoxelIndex& a, const VoxelIndex& b) {
    if (a.k != b.k) return a.k < b.k;
    if (a.j != b.j) return a.j < b.j;
    return a.i < b.i;
  }
  int operator[](int axis) const { return axis == 0 ? i : (axis == 1 ? j : k); }
};

inline bool in_bounds(const VoxelIndex& v, const Dims& d) {
  return v.i >= 0 && v.j >= 0 && v.k >= 0 && v.i < d.x && v.j < d.y && v.k < d.z;
}

enum class Connectivity { N6, N26 };

/// Neighbor offsets in lexicographic (dk, dj, di) order.
inline const std::vector<std::array<int, 3>>& neighbor_offsets(Connectivity conn) {
  static const std::vector<std::array<int, 3>> n6 = {
      {0, 0, -1}, {0, -1, 0}, {-1, 0, 0}, {1, 0, 0}, {0, 1, 0}, {0, 0, 1}};
  static const std::vector<std::array<int, 3>> n26 = [] {
    std::vector<std::array<int, 3>> out;
    for (int dk = -1; dk <= 1; ++dk)
      for (int dj = -1; dj <= 1; ++dj)
        for (int di = -1; di <= 1; ++di)
          if (di || dj || dk) out.push_back({di, dj, dk});
    return out;
  }();
  return conn == Connectivity::N6 ? n6 : n26;
}

/// In-bounds neighbors of idx, ordered lexicographically by (k, j, i).
inline std::vector<VoxelIndex> neighbors(const VoxelIndex& idx, Connectivity conn, const Dims& dims) {
  std::vector<VoxelIndex> out;
  for (const auto& o : neighbor_offsets(conn)) {
    VoxelIndex n{idx.i + o[0], idx.j + o[1], idx.k + o[2]};
    if (in_bounds(n, dims)) out.push_back(n);
  }
  return out;
}

/// Dense grid stored x-fastest. Geometry follows MetaImage: position = origin + index * spacing.
template <class T>
class Volume {
 public:
  using value_type = T;

  Volume() = default;
  explicit Volume(Dims dims, Vec3 spacing = {1.0, 1.0, 1.0}, Vec3 origin = {0.0, 0.0, 0.0}, T fill = T{})
      : dims_(dims), spacing_(spacing), origin_(origin) {
    if (dims.x <= 0 || dims.y <= 0 || dims.z <= 0) throw Error("volume dimensions must be positive");
    for (double s : spacing)
      if (!(s > 0.0)) throw Error("volume spacing must be positive");
    data_.assign(dims.count(), fill);
  }

  /// Same geometry as another volume, any element type.
  template <class U>
  static Volume like(const Volume<U>& other, T fill = T{}) {
    return Volume(other.dims(), other.spacing(), other.origin(), fill);
  }

  const Dims& dims() const { return dims_; }
  const Vec3& spacing() const { return spacing_; }
  const Vec3& origin() const { return origin_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }
  std::vector<T>& storage() { return data_; }
  const std::vector<T>& storage() const { return data_; }

  std::size_t index(int i, int j, int k) const {
    return (static_cast<std::size_t>(k) * dims_.y + j) * dims_.x + i;
  }
  std::size_t index(const VoxelIndex& v) const { return index(v.i, v.j, v.k); }
  VoxelIndex voxel(std::size_t linear) const {
    const int i = static_cast<int>(linear % dims_.x);
    const std::size_t rest = linear / dims_.x;
    return {i, static_cast<int>(rest % dims_.y), static_cast<int>(rest / dims_.y)};
  }

  T& operator()(int i, int j, int k) { return data_[index(i, j, k)]; }
  const T& operator()(int i, int j, int k) const { return data_[index(i, j, k)]; }
  T& operator[](const VoxelIndex& v) { return data_[index(v)]; }
  const T& operator[](const VoxelIndex& v) const { return data_[index(v)]; }
  T& operator[](std::size_t linear) { return data_[linear]; }
  const T& operator[](std::size_t linear) const { return data_[linear]; }

  /// Edge-replicated read.
  const T& clamped(int i, int j, int k) const {
    return (*this)(std::clamp(i, 0, dims_.x - 1), std::clamp(j, 0, dims_.y - 1), std::clamp(k, 0, dims_.z - 1));
  }

  bool contains(const VoxelIndex& v) const { return in_bounds(v, dims_); }

  Vec3 physical(const VoxelIndex& v) const { return physical(Vec3{double(v.i), double(v.j), double(v.k)}); }
  Vec3 physical(const Vec3& continuous_index) const {
    return {origin_[0] + continuous_index[0] * spacing_[0], origin_[1] + continuous_index[1] * spacing_[1],
            origin_[2] + continuous_index[2] * spacing_[2]};
  }
  Vec3 continuous_index(const Vec3& mm) const {
    return {(mm[0] - origin_[0]) / spacing_[0], (mm[1] - origin_[1]) / spacing_[1],
            (mm[2] - origin_[2]) / spacing_[2]};
  }
  /// Nearest voxel to a physical position (may be out of bounds).
  VoxelIndex nearest_voxel(const Vec3& mm) const {
    const Vec3 c = continuous_index(mm);
    return {static_cast<int>(std::lround(c[0])), static_cast<int>(std::lround(c[1])),
            static_cast<int>(std::lround(c[2]))};
  }

  template <class U>
  bool same_geometry(const Volume<U>& o) const {
    return dims_ == o.dims() && spacing_ == o.spacing() && origin_ == o.origin();
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  friend bool operator==(const Volume& a, const Volume& b) {
    return a.dims_ == b.dims_ && a.spacing_ == b.spacing_ && a.origin_ == b.origin_ && a.data_ == b.data_;
  }

 private:
  Dims dims_{};
  Vec3 spacing_{1.0, 1.0, 1.0};
  Vec3 origin_{0.0, 0.0, 0.0};
  std::vector<T> data_;
};

/// Raw CT intensities in HU.
using CtVolume = Volume<std::int16_t>;
/// Derived scalar fields.
using FloatVolume = Volume<float>;
/// Binary masks (0 / 1).
using Mask = Volume<std::uint8_t>;

namespace label {
inline constexpr std::uint8_t kBackground = 0;
inline constexpr std::uint8_t kAirway = 1;
inline constexpr std::uint8_t kLeft = 2;
inline constexpr std::uint8_t kRight = 3;
inline constexpr std::uint8_t kVessel = 4;
}  // namespace label

using Legend = std::map<std::uint8_t, std::string>;

inline const Legend& default_legend() {
  static const Legend legend = {{label::kBackground, "background"},
                                {label::kAirway, "airway"},
                                {label::kLeft, "left"},
                                {label::kRight, "right"},
                                {label::kVessel, "vessel"}};
  return legend;
}

/// Integer label grid with a value legend.
class LabelVolume : public Volume<std::uint8_t> {
 public:
  LabelVolume() = default;
  explicit LabelVolume(Volume<std::uint8_t> v, Legend legend = default_legend())
      : Volume<std::uint8_t>(std::move(v)), legend_(std::move(legend)) {}
  LabelVolume(Dims dims, Vec3 spacing, Vec3 origin, Legend legend = default_legend())
      : Volume<std::uint8_t>(dims, spacing, origin, 0), legend_(std::move(legend)) {}

  const Legend& legend() const { return legend_; }

  /// Throws if a stored value is missing from the legend.
  void validate() const {
    std::array<bool, 256> seen{};
    for (auto v : data()) seen[v] = true;
    for (int v = 0; v < 256; ++v)
      if (seen[v] && !legend_.count(static_cast<std::uint8_t>(v)))
        throw Error("label value " + std::to_string(v) + " not in legend");
  }

  std::size_t count(std::uint8_t value) const {
    return static_cast<std::size_t>(std::count(data().begin(), data().end(), value));
  }

 private:
  Legend legend_ = default_legend();
};

/// Binary mask of voxels equal to `value`.
template <class T>
Mask select(const Volume<T>& v, T value) {
  Mask m = Mask::like(v);
  for (std::size_t n = 0; n < v.size(); ++n) m[n] = v[n] == value ? 1 : 0;
  return m;
}

inline std::size_t count_nonzero(const Mask& m) {
  return static_cast<std::size_t>(std::count_if(m.data().begin(), m.data().end(), [](auto v) { return v != 0; }));
}

template <class T>
FloatVolume to_float(const Volume<T>& v) {
  FloatVolume out = FloatVolume::like(v);
  for (std::size_t n = 0; n < v.size(); ++n) out[n] = static_cast<float>(v[n]);
  return out;
}

}  // namespace pvseg
