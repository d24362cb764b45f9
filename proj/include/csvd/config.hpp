#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "csvd/calibrate.hpp"
#include "csvd/kernels.hpp"
#include "csvd/match_eval.hpp"

namespace csvd {

/// Everything the pipeline needs, with defaults baked in. Loaded from one
/// JSON file; individual CLI flags override single keys.
struct PipelineConfig {
  CalibrationParams calibration;
  double distance_cap_mm = 10.0;
  std::string zone_config_path;  ///< empty -> built-in mapping

  MatchRule lacune_rule = MatchRule::centroid(5.0);
  MatchRule epvs_rule = MatchRule::iou(0.10);
  double nsd_tolerance_mm = 1.0;

  int bootstrap_iters = 2000;
  std::uint64_t bootstrap_seed = 20200531;

  TverskyParams tversky;
  double lambda_excl = 1.0;
  int skeleton_iterations = 5;
  std::vector<double> deep_supervision_weights{1.0, 0.5, 0.25};

  int workers = 0;  ///< 0 -> CSVD_WORKERS env var, else 1

  void validate() const;
  static PipelineConfig load(const std::string& path);

  nlohmann::ordered_json to_json() const;
  static PipelineConfig from_json(const nlohmann::json& j);
};

/// FNV-1a hash of the canonical JSON dump; lets reports pin the exact
/// configuration they were produced under.
std::string config_hash(const PipelineConfig& cfg);

}  // namespace csvd
