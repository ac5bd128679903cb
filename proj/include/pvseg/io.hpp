/// @file io.hpp
/// @brief JSON and CSV formats: phantom specs, centerline trees, radius profiles and
///        annotated evaluation points.

#pragma once

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "centerline.hpp"
#include "metaimage.hpp"
#include "metrics.hpp"
#include "phantom.hpp"
#include "vesselseg.hpp"

namespace pvseg {

using Json = nlohmann::ordered_json;

inline Json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  try {
    return Json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error("malformed JSON in " + path.string() + ": " + e.what());
  }
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
  if (!out) throw Error("failed writing " + path.string());
}

inline void write_json(const std::filesystem::path& path, const Json& j) { write_text(path, j.dump(2) + "\n"); }

namespace detail {

inline Vec3 vec3_from(const Json& j, const std::string& what) {
  if (!j.is_array() || j.size() != 3) throw Error("phantom spec: " + what + " must be a 3-element array");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

inline Json vec3_json(const Vec3& v) { return Json::array({v[0], v[1], v[2]}); }

}  // namespace detail

// ---------------------------------------------------------------------------
// Phantom spec: {dims, spacing, background_hu, tubes:[{points, radii, hu}]}
// ---------------------------------------------------------------------------

inline PhantomSpec phantom_spec_from_json(const Json& j) {
  try {
    PhantomSpec s;
    const auto& d = j.at("dims");
    if (!d.is_array() || d.size() != 3) throw Error("phantom spec: dims must be a 3-element array");
    s.dims = {d[0].get<int>(), d[1].get<int>(), d[2].get<int>()};
    if (j.contains("spacing")) s.spacing = detail::vec3_from(j["spacing"], "spacing");
    s.background_hu = j.value("background_hu", -850.0);
    for (const auto& t : j.at("tubes")) {
      TubeSpec tube;
      for (const auto& p : t.at("points")) tube.points.push_back(detail::vec3_from(p, "tube point"));
      const auto& r = t.at("radii");
      if (r.is_number()) tube.radii.assign(tube.points.size(), r.get<double>());
      else tube.radii = r.get<std::vector<double>>();
      tube.hu = t.at("hu").get<double>();
      tube.validate();
      s.tubes.push_back(std::move(tube));
    }
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("phantom spec: ") + e.what());
  }
}

inline PhantomSpec load_phantom_spec(const std::filesystem::path& path) { return phantom_spec_from_json(read_json(path)); }

inline Json phantom_spec_to_json(const PhantomSpec& s) {
  Json j;
  j["dims"] = Json::array({s.dims.x, s.dims.y, s.dims.z});
  j["spacing"] = detail::vec3_json(s.spacing);
  j["background_hu"] = s.background_hu;
  j["tubes"] = Json::array();
  for (const auto& t : s.tubes) {
    Json tj;
    tj["points"] = Json::array();
    for (const auto& p : t.points) tj["points"].push_back(detail::vec3_json(p));
    tj["radii"] = t.radii;
    tj["hu"] = t.hu;
    j["tubes"].push_back(tj);
  }
  return j;
}

// ---------------------------------------------------------------------------
// Centerline trees
// ---------------------------------------------------------------------------

inline Json tree_to_json(const CenterlineTree& t) {
  Json j;
  j["lung"] = t.lung == label::kLeft ? "left" : "right";
  j["nodes"] = Json::array();
  for (const auto& n : t.nodes) {
    Json nj;
    nj["id"] = n.id;
    nj["ijk"] = Json::array({n.ijk.i, n.ijk.j, n.ijk.k});
    nj["xyz_mm"] = detail::vec3_json(n.xyz_mm);
    nj["radius_mm"] = n.radius_mm;
    nj["radius_voxels"] = n.radius_voxels;
    nj["response"] = n.response;
    j["nodes"].push_back(nj);
  }
  j["edges"] = Json::array();
  for (const auto& [a, b] : t.edges) j["edges"].push_back(Json::array({a, b}));
  j["roots"] = t.roots;
  j["orphan_fragments"] = t.orphan_fragments;
  return j;
}

inline CenterlineTree tree_from_json(const Json& j) {
  CenterlineTree t;
  const std::string lung = j.at("lung").get<std::string>();
  if (lung == "left") t.lung = label::kLeft;
  else if (lung == "right") t.lung = label::kRight;
  else throw Error("centerline: unknown lung '" + lung + "'");
  for (const auto& nj : j.at("nodes")) {
    CenterlineNode n;
    n.id = nj.at("id").get<int>();
    const auto& ijk = nj.at("ijk");
    n.ijk = {ijk[0].get<int>(), ijk[1].get<int>(), ijk[2].get<int>()};
    n.xyz_mm = detail::vec3_from(nj.at("xyz_mm"), "xyz_mm");
    n.radius_mm = nj.value("radius_mm", 0.0);
    n.radius_voxels = nj.value("radius_voxels", 0.0);
    n.response = nj.value("response", 0.0);
    t.nodes.push_back(n);
  }
  for (const auto& e : j.at("edges")) t.edges.emplace_back(e.at(0).get<int>(), e.at(1).get<int>());
  t.roots = j.at("roots").get<std::vector<int>>();
  t.orphan_fragments = j.value("orphan_fragments", std::size_t{0});
  return t;
}

inline void save_centerline(const std::vector<CenterlineTree>& trees, const std::filesystem::path& path) {
  Json j = Json::array();
  for (const auto& t : trees) j.push_back(tree_to_json(t));
  write_json(path, j);
}

inline std::vector<CenterlineTree> load_centerline(const std::filesystem::path& path) {
  const Json j = read_json(path);
  if (!j.is_array()) throw Error("centerline: expected an array of trees in " + path.string());
  std::vector<CenterlineTree> trees;
  try {
    for (const auto& t : j) trees.push_back(tree_from_json(t));
  } catch (const nlohmann::json::exception& e) {
    throw Error("centerline: " + std::string(e.what()));
  }
  return trees;
}

/// Flat node table for plotting.
inline std::string centerline_csv(const std::vector<CenterlineTree>& trees) {
  std::string out = "id,lung,i,j,k,x_mm,y_mm,z_mm,radius_mm,response\n";
  for (const auto& t : trees)
    for (const auto& n : t.nodes) {
      out += std::to_string(n.id) + "," + (t.lung == label::kLeft ? "left" : "right") + "," + std::to_string(n.ijk.i) +
             "," + std::to_string(n.ijk.j) + "," + std::to_string(n.ijk.k) + "," + detail::format_double(n.xyz_mm[0]) +
             "," + detail::format_double(n.xyz_mm[1]) + "," + detail::format_double(n.xyz_mm[2]) + "," +
             detail::format_double(n.radius_mm) + "," + detail::format_double(n.response) + "\n";
    }
  return out;
}

inline std::string radius_profiles_csv(const std::vector<RadiusProfile>& profiles) {
  std::string out = "node_id,radius_voxels,radius_mm,drop_value\n";
  for (const auto& p : profiles)
    out += std::to_string(p.node_id) + "," + detail::format_double(p.radius_voxels) + "," +
           detail::format_double(p.radius_mm) + "," + detail::format_double(p.drop_value) + "\n";
  return out;
}

// ---------------------------------------------------------------------------
// Annotated points: x,y,z,label (voxel indices)
// ---------------------------------------------------------------------------

struct AnnotatedPoint {
  VoxelIndex v;
  int label = 0;
};

inline std::vector<AnnotatedPoint> read_points_csv(std::istream& in, const Dims& dims) {
  std::vector<AnnotatedPoint> out;
  std::string line;
  int row = 0;
  while (std::getline(in, line)) {
    ++row;
    line = detail::trim(line);
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    for (std::string c; std::getline(ss, c, ',');) cells.push_back(detail::trim(c));
    if (row == 1 && !cells.empty() && !cells[0].empty() && !std::isdigit(static_cast<unsigned char>(cells[0][0])) &&
        cells[0][0] != '-')
      continue;  // header
    if (cells.size() != 4) throw Error("points CSV row " + std::to_string(row) + ": expected x,y,z,label");
    int vals[4];
    for (int q = 0; q < 4; ++q) {
      const auto [p, ec] = std::from_chars(cells[q].data(), cells[q].data() + cells[q].size(), vals[q]);
      if (ec != std::errc{} || p != cells[q].data() + cells[q].size())
        throw Error("points CSV row " + std::to_string(row) + ": bad number '" + cells[q] + "'");
    }
    const VoxelIndex v{vals[0], vals[1], vals[2]};
    if (!in_bounds(v, dims)) throw Error("points CSV row " + std::to_string(row) + ": coordinate out of bounds");
    if (vals[3] != 0 && vals[3] != 1) throw Error("points CSV row " + std::to_string(row) + ": label must be 0 or 1");
    out.push_back({v, vals[3]});
  }
  return out;
}

inline std::vector<AnnotatedPoint> read_points_csv(const std::filesystem::path& path, const Dims& dims) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  return read_points_csv(in, dims);
}

}  // namespace pvseg
