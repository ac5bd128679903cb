/// @file config.hpp
/// @brief Pipeline configuration as a flat "key = value" text file.

#pragma once

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "airway.hpp"
#include "centerline.hpp"
#include "lungs.hpp"
#include "medialness.hpp"
#include "metaimage.hpp"
#include "vesselseg.hpp"

namespace pvseg {

struct PipelineConfig {
  // airway
  double grow_step_hu = 1.0;
  double leak_factor = 3.0;
  int grow_max_iterations = 1000;
  int grow_stall_iterations = 5;
  double trachea_air_hu = -900;
  int spur_length = 5;
  bool flip_lr = false;
  // lungs
  int otsu_bins = 256;
  int closing_iterations = 10;
  double cost_gradient_weight = 0.8;
  double cost_mask_weight = 0.2;
  double gradient_percentile = 99.0;
  // medialness
  double pyramid_factor = 1.7;
  int n_scales = 4;
  std::vector<double> radii{1.0, 1.3, 1.6, 1.9};
  double symmetry_exponent = 1.5;
  double response_floor = 0.1;
  int tile_slices = 0;
  // centerline
  double nms_radius = 1.0;
  int prune_min_size = 5;
  int airway_clear_radius = 2;
  double reconnect_epsilon = 0.05;
  double reconnect_lambda = 0.5;
  double heart_min_hu = 100;
  // vessel segmentation
  std::vector<double> sphere_radii = RadiusOptions::default_radii();
  double drop_threshold = 0.6;
  double air_reference_hu = -1000;
  double min_vessel_contrast_hu = 300;
  // tortuosity and statistics
  double dm_min_branch_mm = 10.0;
  bool welch = true;
  // phantom
  std::uint64_t noise_seed = 12345;

  FilterConfig filter() const {
    FilterConfig f;
    f.n_scales = n_scales;
    f.pyramid_factor = pyramid_factor;
    f.radii = radii;
    f.symmetry_exponent = symmetry_exponent;
    f.response_floor = response_floor;
    f.tile_slices = tile_slices;
    return f;
  }
  RadiusOptions radius_options() const {
    RadiusOptions r;
    r.radii = sphere_radii;
    r.drop_threshold = drop_threshold;
    r.air_reference_hu = air_reference_hu;
    r.min_contrast_hu = min_vessel_contrast_hu;
    return r;
  }
  ReconnectParams reconnect_params() const {
    ReconnectParams p;
    p.epsilon = reconnect_epsilon;
    p.lambda = reconnect_lambda;
    p.percentile = gradient_percentile;
    return p;
  }
  CostWeights cost_weights() const { return {cost_gradient_weight, cost_mask_weight, gradient_percentile}; }

  void validate() const {
    filter().validate();
    radius_options().validate();
    if (!(grow_step_hu > 0)) throw Error("config: grow_step_hu must be positive");
    if (!(leak_factor > 1)) throw Error("config: leak_factor must exceed 1");
    if (closing_iterations < 0) throw Error("config: closing_iterations must be non-negative");
    if (prune_min_size < 1) throw Error("config: prune_min_size must be >= 1");
    if (otsu_bins < 2) throw Error("config: otsu_bins must be >= 2");
    if (!(reconnect_epsilon > 0)) throw Error("config: reconnect_epsilon must be positive");
    if (!(nms_radius > 0)) throw Error("config: nms_radius must be positive");
  }
};

namespace detail {

template <class Num>
Num parse_number_strict(const std::string& key, const std::string& text) {
  const std::string s = trim(text);
  Num v{};
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size() || s.empty())
    throw Error("config: bad value '" + text + "' for key '" + key + "'");
  return v;
}

inline bool parse_bool(const std::string& key, const std::string& text) {
  const std::string s = trim(text);
  if (s == "true" || s == "1" || s == "yes") return true;
  if (s == "false" || s == "0" || s == "no") return false;
  throw Error("config: bad boolean '" + text + "' for key '" + key + "'");
}

inline std::vector<double> parse_list(const std::string& key, const std::string& text) {
  std::vector<double> out;
  std::string item;
  std::stringstream ss(text);
  while (std::getline(ss, item, ',')) out.push_back(parse_number_strict<double>(key, item));
  if (out.empty()) throw Error("config: empty list for key '" + key + "'");
  return out;
}

inline std::string format_list(const std::vector<double>& v) {
  std::string s;
  for (std::size_t n = 0; n < v.size(); ++n) s += (n ? ", " : "") + format_double(v[n]);
  return s;
}

struct Field {
  std::function<void(PipelineConfig&, const std::string&)> set;
  std::function<std::string(const PipelineConfig&)> get;
};

template <class M>
Field make_field(const std::string& key, M PipelineConfig::*member) {
  Field f;
  f.set = [key, member](PipelineConfig& c, const std::string& v) {
    using T = std::remove_cvref_t<decltype(c.*member)>;
    if constexpr (std::is_same_v<T, bool>) c.*member = parse_bool(key, v);
    else if constexpr (std::is_same_v<T, std::vector<double>>) c.*member = parse_list(key, v);
    else c.*member = parse_number_strict<T>(key, v);
  };
  f.get = [member](const PipelineConfig& c) {
    using T = std::remove_cvref_t<decltype(c.*member)>;
    if constexpr (std::is_same_v<T, bool>) return std::string(c.*member ? "true" : "false");
    else if constexpr (std::is_same_v<T, std::vector<double>>) return format_list(c.*member);
    else if constexpr (std::is_floating_point_v<T>) return format_double(c.*member);
    else return std::to_string(c.*member);
  };
  return f;
}

/// Keys in serialization order.
inline const std::vector<std::pair<std::string, Field>>& config_fields() {
  static const std::vector<std::pair<std::string, Field>> fields = [] {
    std::vector<std::pair<std::string, Field>> f;
#define PVSEG_FIELD(name) f.emplace_back(#name, make_field(#name, &PipelineConfig::name))
    PVSEG_FIELD(grow_step_hu);
    PVSEG_FIELD(leak_factor);
    PVSEG_FIELD(grow_max_iterations);
    PVSEG_FIELD(grow_stall_iterations);
    PVSEG_FIELD(trachea_air_hu);
    PVSEG_FIELD(spur_length);
    PVSEG_FIELD(flip_lr);
    PVSEG_FIELD(otsu_bins);
    PVSEG_FIELD(closing_iterations);
    PVSEG_FIELD(cost_gradient_weight);
    PVSEG_FIELD(cost_mask_weight);
    PVSEG_FIELD(gradient_percentile);
    PVSEG_FIELD(pyramid_factor);
    PVSEG_FIELD(n_scales);
    PVSEG_FIELD(radii);
    PVSEG_FIELD(symmetry_exponent);
    PVSEG_FIELD(response_floor);
    PVSEG_FIELD(tile_slices);
    PVSEG_FIELD(nms_radius);
    PVSEG_FIELD(prune_min_size);
    PVSEG_FIELD(airway_clear_radius);
    PVSEG_FIELD(reconnect_epsilon);
    PVSEG_FIELD(reconnect_lambda);
    PVSEG_FIELD(heart_min_hu);
    PVSEG_FIELD(sphere_radii);
    PVSEG_FIELD(drop_threshold);
    PVSEG_FIELD(air_reference_hu);
    PVSEG_FIELD(min_vessel_contrast_hu);
    PVSEG_FIELD(dm_min_branch_mm);
    PVSEG_FIELD(welch);
    PVSEG_FIELD(noise_seed);
#undef PVSEG_FIELD
    return f;
  }();
  return fields;
}

}  // namespace detail

/// Applies "key = value" lines on top of `base`. Unknown keys are rejected by name.
inline PipelineConfig parse_config(std::istream& in, PipelineConfig base = {}) {
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw Error("config line " + std::to_string(lineno) + ": expected 'key = value'");
    const std::string key = detail::trim(line.substr(0, eq)), value = detail::trim(line.substr(eq + 1));
    bool found = false;
    for (const auto& [name, field] : detail::config_fields())
      if (name == key) {
        field.set(base, value);
        found = true;
      }
    if (!found) throw Error("config: unknown key '" + key + "'");
  }
  base.validate();
  return base;
}

inline PipelineConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open config file " + path.string());
  return parse_config(in);
}

inline std::string serialize_config(const PipelineConfig& c) {
  std::string out;
  for (const auto& [name, field] : detail::config_fields()) out += name + " = " + field.get(c) + "\n";
  return out;
}

}  // namespace pvseg
