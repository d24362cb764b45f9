#include "csvd/config.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

namespace csvd {
namespace {

MatchRule rule_from_json(const nlohmann::json& j, const MatchRule& fallback) {
  MatchRule rule = fallback;
  if (j.contains("kind")) {
    const std::string kind = j["kind"].get<std::string>();
    if (kind == "centroid_distance") {
      rule.kind = MatchRule::Kind::CentroidDistance;
    } else if (kind == "iou") {
      rule.kind = MatchRule::Kind::Iou;
    } else {
      throw std::runtime_error("config: unknown match rule kind '" + kind + "'");
    }
  }
  if (j.contains("threshold")) rule.threshold = j["threshold"].get<double>();
  return rule;
}

nlohmann::ordered_json rule_to_json(const MatchRule& rule) {
  return {{"kind", rule.kind == MatchRule::Kind::CentroidDistance
                       ? "centroid_distance"
                       : "iou"},
          {"threshold", rule.threshold}};
}

}  // namespace

void PipelineConfig::validate() const {
  calibration.validate();
  lacune_rule.validate();
  epvs_rule.validate();
  tversky.validate();
  if (!(distance_cap_mm > 0.0)) {
    throw std::invalid_argument("config: distance_cap_mm must be > 0");
  }
  if (!(nsd_tolerance_mm > 0.0)) {
    throw std::invalid_argument("config: nsd_tolerance_mm must be > 0");
  }
  if (bootstrap_iters < 1) {
    throw std::invalid_argument("config: bootstrap iters must be >= 1");
  }
  if (!(lambda_excl >= 0.0)) {
    throw std::invalid_argument("config: lambda_excl must be >= 0");
  }
  if (skeleton_iterations < 0) {
    throw std::invalid_argument("config: skeleton_iterations must be >= 0");
  }
  if (deep_supervision_weights.empty()) {
    throw std::invalid_argument("config: deep_supervision_weights must be non-empty");
  }
  double wsum = 0.0;
  for (double w : deep_supervision_weights) {
    if (!(w >= 0.0)) {
      throw std::invalid_argument("config: deep supervision weights must be >= 0");
    }
    wsum += w;
  }
  if (!(wsum > 0.0)) {
    throw std::invalid_argument("config: deep supervision weights sum to 0");
  }
  if (workers < 0) {
    throw std::invalid_argument("config: workers must be >= 0");
  }
}

PipelineConfig PipelineConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("malformed config " + path + ": " + e.what());
  }
  return from_json(j);
}

PipelineConfig PipelineConfig::from_json(const nlohmann::json& j) {
  PipelineConfig cfg;
  try {
    if (j.contains("calibration")) {
      const auto& c = j["calibration"];
      if (c.contains("base")) cfg.calibration.base = c["base"].get<double>();
      if (c.contains("lambda")) cfg.calibration.lambda = c["lambda"].get<double>();
      if (c.contains("gamma")) cfg.calibration.gamma = c["gamma"].get<double>();
      if (c.contains("connectivity")) {
        cfg.calibration.connectivity = c["connectivity"].get<int>();
      }
      if (c.contains("min_voxels")) {
        cfg.calibration.min_voxels = c["min_voxels"].get<int>();
      }
      if (c.contains("distance_cap_mm")) {
        cfg.distance_cap_mm = c["distance_cap_mm"].get<double>();
      }
    }
    if (j.contains("zone_config_path")) {
      cfg.zone_config_path = j["zone_config_path"].get<std::string>();
    }
    if (j.contains("matching")) {
      const auto& m = j["matching"];
      if (m.contains("lacune")) {
        cfg.lacune_rule = rule_from_json(m["lacune"], cfg.lacune_rule);
      }
      if (m.contains("epvs")) {
        cfg.epvs_rule = rule_from_json(m["epvs"], cfg.epvs_rule);
      }
    }
    if (j.contains("nsd_tolerance_mm")) {
      cfg.nsd_tolerance_mm = j["nsd_tolerance_mm"].get<double>();
    }
    if (j.contains("bootstrap")) {
      const auto& b = j["bootstrap"];
      if (b.contains("iters")) cfg.bootstrap_iters = b["iters"].get<int>();
      if (b.contains("seed")) cfg.bootstrap_seed = b["seed"].get<std::uint64_t>();
    }
    if (j.contains("kernels")) {
      const auto& k = j["kernels"];
      if (k.contains("tversky_alpha")) cfg.tversky.alpha = k["tversky_alpha"].get<double>();
      if (k.contains("tversky_beta")) cfg.tversky.beta = k["tversky_beta"].get<double>();
      if (k.contains("epsilon")) cfg.tversky.epsilon = k["epsilon"].get<double>();
      if (k.contains("lambda_excl")) cfg.lambda_excl = k["lambda_excl"].get<double>();
      if (k.contains("skeleton_iterations")) {
        cfg.skeleton_iterations = k["skeleton_iterations"].get<int>();
      }
      if (k.contains("deep_supervision_weights")) {
        cfg.deep_supervision_weights =
            k["deep_supervision_weights"].get<std::vector<double>>();
      }
    }
    if (j.contains("workers")) cfg.workers = j["workers"].get<int>();
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(std::string("malformed config: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

nlohmann::ordered_json PipelineConfig::to_json() const {
  nlohmann::ordered_json j;
  j["calibration"] = {{"base", calibration.base},
                      {"lambda", calibration.lambda},
                      {"gamma", calibration.gamma},
                      {"connectivity", calibration.connectivity},
                      {"min_voxels", calibration.min_voxels},
                      {"distance_cap_mm", distance_cap_mm}};
  j["zone_config_path"] = zone_config_path;
  j["matching"] = {{"lacune", rule_to_json(lacune_rule)},
                   {"epvs", rule_to_json(epvs_rule)}};
  j["nsd_tolerance_mm"] = nsd_tolerance_mm;
  j["bootstrap"] = {{"iters", bootstrap_iters}, {"seed", bootstrap_seed}};
  j["kernels"] = {{"tversky_alpha", tversky.alpha},
                  {"tversky_beta", tversky.beta},
                  {"epsilon", tversky.epsilon},
                  {"lambda_excl", lambda_excl},
                  {"skeleton_iterations", skeleton_iterations},
                  {"deep_supervision_weights", deep_supervision_weights}};
  // workers is an execution detail, not semantic configuration: results are
  // identical for any worker count, so it stays out of the dump and the hash
  return j;
}

std::string config_hash(const PipelineConfig& cfg) {
  const std::string dump = cfg.to_json().dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : dump) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  std::ostringstream os;
  os << "fnv1a64:" << std::hex << h;
  return os.str();
}

}  // namespace csvd
