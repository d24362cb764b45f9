#include "csvd/anatomy.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>
#include <unordered_map>
#include <utility>

#include <nlohmann/json.hpp>

#include "csvd/edt.hpp"

namespace csvd {

void ZoneConfig::validate() const {
  if (unlisted_zone < 1 || unlisted_zone > 3) {
    throw std::invalid_argument("ZoneConfig: unlisted_zone must be 1, 2 or 3");
  }
  for (std::int64_t v : zone1_labels) {
    if (zone2_labels.count(v) || zone3_labels.count(v)) {
      throw std::invalid_argument("ZoneConfig: label " + std::to_string(v) +
                                  " appears in more than one zone");
    }
  }
  for (std::int64_t v : zone2_labels) {
    if (zone3_labels.count(v)) {
      throw std::invalid_argument("ZoneConfig: label " + std::to_string(v) +
                                  " appears in more than one zone");
    }
  }
}

ZoneConfig ZoneConfig::defaults() {
  ZoneConfig cfg;
  // FreeSurfer aseg IDs. Left/right cerebral white matter, WM hypointensities,
  // thalamus, caudate, putamen, pallidum, accumbens, ventral DC, brainstem.
  cfg.zone1_labels = {2, 41, 77, 10, 49, 11, 50, 12, 51, 13, 52, 26, 58, 28, 60, 16};
  // Hippocampus and cerebellar white matter.
  cfg.zone2_labels = {17, 53, 7, 46};
  // Cortex, ventricles, CSF, cerebellar cortex, vessels, choroid plexus.
  cfg.zone3_labels = {3, 42, 4, 43, 5, 44, 14, 15, 24, 8, 47, 30, 62, 31, 63};
  cfg.unlisted_zone = 3;
  return cfg;
}

ZoneConfig ZoneConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open zone config: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("malformed zone config " + path + ": " + e.what());
  }
  ZoneConfig cfg;
  auto read_set = [&](const char* key, std::set<std::int64_t>& out) {
    if (!j.contains(key)) return;
    if (!j[key].is_array()) {
      throw std::runtime_error(std::string("zone config: '") + key +
                               "' must be an array of integer labels");
    }
    out.clear();
    for (const auto& v : j[key]) {
      if (!v.is_number_integer()) {
        throw std::runtime_error(std::string("zone config: '") + key +
                                 "' must contain only integers");
      }
      out.insert(v.get<std::int64_t>());
    }
  };
  read_set("zone1", cfg.zone1_labels);
  read_set("zone2", cfg.zone2_labels);
  read_set("zone3", cfg.zone3_labels);
  if (j.contains("unlisted_zone")) {
    cfg.unlisted_zone = j["unlisted_zone"].get<int>();
  }
  cfg.validate();
  return cfg;
}

ZoneMap::ZoneMap(VoxelGrid grid) : grid_(std::move(grid)) {
  for (double v : grid_.data()) {
    if (v != 1.0 && v != 2.0 && v != 3.0) {
      throw std::invalid_argument("ZoneMap: tiers must be 1, 2 or 3");
    }
  }
}

DistanceField::DistanceField(VoxelGrid grid, double cap)
    : grid_(std::move(grid)), cap_(cap) {
  if (!(cap_ > 0.0)) {
    throw std::invalid_argument("DistanceField: cap must be > 0");
  }
  for (double v : grid_.data()) {
    if (!(v >= 0.0 && v <= cap_)) {
      throw std::invalid_argument("DistanceField: values must lie in [0, cap]");
    }
  }
}

ZoneMap build_zone_map(const LabelVolume& labels, const ZoneConfig& cfg) {
  cfg.validate();
  const VoxelGrid& g = labels.grid();

  std::unordered_map<std::int64_t, double> tier;
  for (std::int64_t v : cfg.zone1_labels) tier[v] = 1.0;
  for (std::int64_t v : cfg.zone2_labels) tier[v] = 2.0;
  for (std::int64_t v : cfg.zone3_labels) tier[v] = 3.0;
  const double fallback = static_cast<double>(cfg.unlisted_zone);

  std::vector<double> zones(g.size());
  const std::vector<double>& data = g.data();
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto it = tier.find(static_cast<std::int64_t>(data[i]));
    zones[i] = it != tier.end() ? it->second : fallback;
  }
  return ZoneMap(g.like(std::move(zones)));
}

DistanceField distance_field(const ZoneMap& zones, double cap_mm, int workers) {
  if (!(cap_mm > 0.0)) {
    throw std::invalid_argument("distance_field: cap must be > 0");
  }
  const VoxelGrid& g = zones.grid();

  std::vector<std::uint8_t> seeds(g.size());
  std::size_t n_seeds = 0;
  for (std::size_t i = 0; i < g.size(); ++i) {
    seeds[i] = g.data()[i] == 1.0;
    n_seeds += seeds[i];
  }
  if (n_seeds == 0) {
    throw std::runtime_error(
        "distance_field: no tier-1 voxel present; check the parcellation "
        "and zone config");
  }

  std::vector<double> sq = squared_edt(seeds, g.dims(), g.spacing(), workers);
  for (double& v : sq) {
    v = std::min(cap_mm, std::sqrt(v));
  }
  return DistanceField(g.like(std::move(sq)), cap_mm);
}

}  // namespace csvd
