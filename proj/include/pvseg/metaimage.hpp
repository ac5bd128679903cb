/// @file metaimage.hpp
/// @brief Uncompressed MetaImage (.mhd + .raw) reader and writer.
///
/// Supported element types are MET_SHORT, MET_UCHAR and MET_FLOAT. Raw payloads are
/// unpadded and x-fastest. Numbers in the header are written in shortest round-trip
/// form so that spacing and origin survive a save/load cycle bit-exactly.

#pragma once

#include <bit>
#include <charconv>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <type_traits>
#include <variant>

#include "volume.hpp"

namespace pvseg {

enum class ElementType { Short, UChar, Float };

inline const char* element_type_name(ElementType t) {
  switch (t) {
    case ElementType::Short: return "MET_SHORT";
    case ElementType::UChar: return "MET_UCHAR";
    case ElementType::Float: return "MET_FLOAT";
  }
  return "";
}

inline std::size_t element_size(ElementType t) {
  switch (t) {
    case ElementType::Short: return 2;
    case ElementType::UChar: return 1;
    case ElementType::Float: return 4;
  }
  return 0;
}

template <class T>
constexpr ElementType element_type_of() {
  if constexpr (std::is_same_v<T, std::int16_t>) return ElementType::Short;
  else if constexpr (std::is_same_v<T, std::uint8_t>) return ElementType::UChar;
  else {
    static_assert(std::is_same_v<T, float>, "unsupported MetaImage element type");
    return ElementType::Float;
  }
}

struct MetaHeader {
  Dims dims;
  Vec3 spacing{1, 1, 1};
  Vec3 origin{0, 0, 0};
  ElementType type = ElementType::Float;
  bool msb = false;
  std::filesystem::path data_file;  // resolved against the header directory
};

using AnyVolume = std::variant<CtVolume, Mask, FloatVolume>;

namespace detail {

inline std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

template <class Num>
std::vector<Num> parse_numbers(const std::string& value, const std::string& key) {
  std::vector<Num> out;
  const char* p = value.data();
  const char* end = value.data() + value.size();
  while (p < end) {
    while (p < end && (*p == ' ' || *p == '\t')) ++p;
    if (p == end) break;
    Num v{};
    auto [next, ec] = std::from_chars(p, end, v);
    if (ec != std::errc{}) throw Error("MetaImage: cannot parse " + key + " = " + value);
    out.push_back(v);
    p = next;
  }
  return out;
}

inline std::string format_double(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

template <class T>
T byteswap_value(T v) {
  unsigned char b[sizeof(T)];
  std::memcpy(b, &v, sizeof(T));
  std::reverse(b, b + sizeof(T));
  std::memcpy(&v, b, sizeof(T));
  return v;
}

template <class Raw>
std::vector<Raw> read_payload(const MetaHeader& h) {
  std::ifstream in(h.data_file, std::ios::binary);
  if (!in) throw Error("MetaImage: cannot open data file " + h.data_file.string());
  in.seekg(0, std::ios::end);
  const auto bytes = static_cast<std::size_t>(in.tellg());
  in.seekg(0);
  const std::size_t expected = h.dims.count() * sizeof(Raw);
  if (bytes != expected)
    throw Error("MetaImage: " + h.data_file.string() + " holds " + std::to_string(bytes) + " bytes, header declares " +
                std::to_string(expected));
  std::vector<Raw> raw(h.dims.count());
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(expected));
  const bool host_msb = std::endian::native == std::endian::big;
  if (h.msb != host_msb && sizeof(Raw) > 1)
    for (auto& v : raw) v = byteswap_value(v);
  return raw;
}

}  // namespace detail

inline MetaHeader read_meta_header(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("MetaImage: cannot open " + path.string());
  MetaHeader h;
  bool have_dims = false, have_type = false, have_file = false;
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string value = detail::trim(line.substr(eq + 1));
    if (key == "NDims") {
      if (value != "3") throw Error("MetaImage: only NDims = 3 is supported, got " + value);
    } else if (key == "DimSize") {
      auto d = detail::parse_numbers<int>(value, key);
      if (d.size() != 3) throw Error("MetaImage: DimSize needs 3 values");
      h.dims = {d[0], d[1], d[2]};
      have_dims = true;
    } else if (key == "ElementSpacing" || key == "ElementSize") {
      auto s = detail::parse_numbers<double>(value, key);
      if (s.size() != 3) throw Error("MetaImage: " + key + " needs 3 values");
      h.spacing = {s[0], s[1], s[2]};
    } else if (key == "Offset" || key == "Origin" || key == "Position") {
      auto o = detail::parse_numbers<double>(value, key);
      if (o.size() != 3) throw Error("MetaImage: " + key + " needs 3 values");
      h.origin = {o[0], o[1], o[2]};
    } else if (key == "ElementType") {
      if (value == "MET_SHORT") h.type = ElementType::Short;
      else if (value == "MET_UCHAR") h.type = ElementType::UChar;
      else if (value == "MET_FLOAT") h.type = ElementType::Float;
      else throw Error("MetaImage: unsupported element type " + value);
      have_type = true;
    } else if (key == "ElementByteOrderMSB" || key == "BinaryDataByteOrderMSB") {
      h.msb = value == "True" || value == "true" || value == "1";
    } else if (key == "CompressedData") {
      if (value == "True" || value == "true") throw Error("MetaImage: compressed data is not supported");
    } else if (key == "ElementNumberOfChannels") {
      if (value != "1") throw Error("MetaImage: multi-channel data is not supported");
    } else if (key == "ElementDataFile") {
      if (value == "LOCAL" || value == "LIST") throw Error("MetaImage: ElementDataFile " + value + " is not supported");
      h.data_file = path.parent_path() / value;
      have_file = true;
    }
  }
  if (!have_dims || !have_type || !have_file)
    throw Error("MetaImage: header " + path.string() + " lacks DimSize, ElementType or ElementDataFile");
  if (h.dims.x <= 0 || h.dims.y <= 0 || h.dims.z <= 0) throw Error("MetaImage: non-positive DimSize");
  return h;
}

/// Loads a volume keeping its on-disk element type.
inline AnyVolume load_metaimage_any(const std::filesystem::path& path) {
  const MetaHeader h = read_meta_header(path);
  auto fill = [&h]<class T>(std::vector<T> raw) {
    Volume<T> v(h.dims, h.spacing, h.origin);
    v.storage() = std::move(raw);
    return v;
  };
  switch (h.type) {
    case ElementType::Short: return fill(detail::read_payload<std::int16_t>(h));
    case ElementType::UChar: return fill(detail::read_payload<std::uint8_t>(h));
    case ElementType::Float: return fill(detail::read_payload<float>(h));
  }
  throw Error("MetaImage: unreachable element type");
}

/// Loads a volume converted to T. Integer inputs convert losslessly or throw;
/// float inputs are rounded when T is integral.
template <class T>
Volume<T> load_metaimage(const std::filesystem::path& path) {
  return std::visit(
      [&]<class U>(Volume<U>&& src) -> Volume<T> {
        if constexpr (std::is_same_v<U, T>) {
          return std::move(src);
        } else {
          Volume<T> out = Volume<T>::like(src);
          for (std::size_t n = 0; n < src.size(); ++n) {
            const U v = src[n];
            if constexpr (std::is_integral_v<T>) {
              const double r = std::is_floating_point_v<U> ? std::nearbyint(double(v)) : double(v);
              if (r < double(std::numeric_limits<T>::min()) || r > double(std::numeric_limits<T>::max()))
                throw Error("MetaImage: value " + detail::format_double(double(v)) + " in " + path.string() +
                            " does not fit the target type");
              out[n] = static_cast<T>(r);
            } else {
              out[n] = static_cast<T>(v);
            }
          }
          return out;
        }
      },
      load_metaimage_any(path));
}

inline LabelVolume load_label_metaimage(const std::filesystem::path& path, Legend legend = default_legend()) {
  LabelVolume out(load_metaimage<std::uint8_t>(path), std::move(legend));
  out.validate();
  return out;
}

/// Writes `<stem>.mhd` and `<stem>.raw` next to each other; `path` names the header.
template <class T>
void save_metaimage(const Volume<T>& vol, const std::filesystem::path& path) {
  if (vol.empty() || vol.dims().count() == 0) throw Error("MetaImage: refusing to save an empty volume");
  std::filesystem::path raw_path = path;
  raw_path.replace_extension(".raw");
  {
    std::ofstream hdr(path, std::ios::binary);
    if (!hdr) throw Error("MetaImage: cannot write " + path.string());
    const auto& d = vol.dims();
    const auto& s = vol.spacing();
    const auto& o = vol.origin();
    using detail::format_double;
    hdr << "ObjectType = Image\n"
        << "NDims = 3\n"
        << "BinaryData = True\n"
        << "BinaryDataByteOrderMSB = False\n"
        << "CompressedData = False\n"
        << "TransformMatrix = 1 0 0 0 1 0 0 0 1\n"
        << "Offset = " << format_double(o[0]) << ' ' << format_double(o[1]) << ' ' << format_double(o[2]) << '\n'
        << "CenterOfRotation = 0 0 0\n"
        << "AnatomicalOrientation = RAI\n"
        << "ElementSpacing = " << format_double(s[0]) << ' ' << format_double(s[1]) << ' ' << format_double(s[2])
        << '\n'
        << "DimSize = " << d.x << ' ' << d.y << ' ' << d.z << '\n'
        << "ElementByteOrderMSB = False\n"
        << "ElementType = " << element_type_name(element_type_of<T>()) << '\n'
        << "ElementDataFile = " << raw_path.filename().string() << '\n';
    if (!hdr) throw Error("MetaImage: failed writing " + path.string());
  }
  std::ofstream raw(raw_path, std::ios::binary);
  if (!raw) throw Error("MetaImage: cannot write " + raw_path.string());
  if constexpr (std::endian::native == std::endian::little) {
    raw.write(reinterpret_cast<const char*>(vol.data().data()),
              static_cast<std::streamsize>(vol.size() * sizeof(T)));
  } else {
    for (T v : vol.data()) {
      T le = detail::byteswap_value(v);
      raw.write(reinterpret_cast<const char*>(&le), sizeof(T));
    }
  }
  if (!raw) throw Error("MetaImage: failed writing " + raw_path.string());
}

}  // namespace pvseg
