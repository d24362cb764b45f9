// csvd: anatomically calibrated detection and cohort evaluation for small
// vessel disease markers. Subcommands: calibrate, eval-case, eval-cohort,
// stats, check-kernels, skeletonize, kernel-eval.
#include <chrono>
#include <cmath>
#include <cstdint>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "csvd/anatomy.hpp"
#include "csvd/calibrate.hpp"
#include "csvd/cohort.hpp"
#include "csvd/config.hpp"
#include "csvd/kernels.hpp"
#include "csvd/match_eval.hpp"
#include "csvd/nifti.hpp"
#include "csvd/volume.hpp"

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

constexpr const char* kToolVersion = "0.1.0";
constexpr int kSchemaVersion = 1;

constexpr int kExitInputError = 2;
constexpr int kExitCheckFailure = 3;

struct InputError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string iso_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
  return buf;
}

ordered_json report_header(const std::string& command,
                           const csvd::PipelineConfig& cfg) {
  ordered_json j;
  j["schema_version"] = kSchemaVersion;
  j["tool"] = "csvd";
  j["version"] = kToolVersion;
  j["command"] = command;
  j["generated_at"] = iso_timestamp();
  j["config"] = cfg.to_json();
  j["config_hash"] = csvd::config_hash(cfg);
  return j;
}

void write_report(const ordered_json& j, const std::string& path) {
  if (path.empty() || path == "-") {
    std::cout << j.dump(2) << "\n";
    return;
  }
  std::ofstream out(path);
  if (!out) throw InputError("cannot write report: " + path);
  out << j.dump(2) << "\n";
}

ordered_json lesion_to_json(const csvd::Lesion& l) {
  return {{"id", l.id},
          {"voxel_count", l.voxel_count},
          {"volume_mm3", l.volume_mm3},
          {"centroid_mm", {l.centroid_mm[0], l.centroid_mm[1], l.centroid_mm[2]}},
          {"zone_tier", l.zone_tier}};
}

csvd::VoxelGrid load_or_fail(const std::string& path) {
  if (!fs::exists(path)) throw InputError("input file does not exist: " + path);
  return csvd::load_volume(path);
}

bool has_suffix(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() &&
         s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

// Tensor container: NIfTI volumes come in as a single channel; the raw
// format is 4 little-endian int64 shape words followed by float64 data.
csvd::Tensor4D load_tensor(const std::string& path) {
  if (!fs::exists(path)) throw InputError("input file does not exist: " + path);
  if (has_suffix(path, ".bin")) {
    std::ifstream in(path, std::ios::binary);
    std::int64_t shape[4];
    in.read(reinterpret_cast<char*>(shape), sizeof(shape));
    if (!in) throw InputError("truncated tensor blob: " + path);
    for (std::int64_t s : shape) {
      if (s < 1 || s > (1 << 24)) {
        throw InputError("implausible tensor shape in " + path);
      }
    }
    csvd::Tensor4D t(static_cast<int>(shape[0]), static_cast<int>(shape[1]),
                     static_cast<int>(shape[2]), static_cast<int>(shape[3]));
    in.read(reinterpret_cast<char*>(t.data.data()),
            std::streamsize(t.data.size() * sizeof(double)));
    if (!in) throw InputError("truncated tensor blob: " + path);
    return t;
  }
  const csvd::VoxelGrid g = load_or_fail(path);
  csvd::Tensor4D t(1, g.dims()[2], g.dims()[1], g.dims()[0]);
  t.data = g.data();  // both are x-fastest
  return t;
}

void save_tensor(const csvd::Tensor4D& t, const std::string& path,
                 const csvd::VoxelGrid* geometry) {
  if (has_suffix(path, ".bin")) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw InputError("cannot write tensor blob: " + path);
    const std::int64_t shape[4] = {t.shape[0], t.shape[1], t.shape[2], t.shape[3]};
    out.write(reinterpret_cast<const char*>(shape), sizeof(shape));
    out.write(reinterpret_cast<const char*>(t.data.data()),
              std::streamsize(t.data.size() * sizeof(double)));
    return;
  }
  if (t.shape[0] != 1 || geometry == nullptr) {
    throw InputError(
        "only single-channel tensors with source geometry can be saved as "
        "NIfTI; use a .bin output path");
  }
  csvd::save_volume(geometry->like(t.data), path);
}

// ---------------------------------------------------------------------------
// calibrate

struct CalibrateArgs {
  std::string prob_path;
  std::string anatomy_path;
  std::string config_path;
  std::string zones_path;
  std::string out_dir;
  int workers = 0;
  bool uncompressed_mask = false;
};

csvd::PipelineConfig load_pipeline_config(const std::string& config_path) {
  return config_path.empty() ? csvd::PipelineConfig{}
                             : csvd::PipelineConfig::load(config_path);
}

int cmd_calibrate(const CalibrateArgs& args) {
  csvd::PipelineConfig cfg = load_pipeline_config(args.config_path);
  if (!args.zones_path.empty()) cfg.zone_config_path = args.zones_path;
  if (args.workers > 0) cfg.workers = args.workers;
  cfg.validate();

  const csvd::ZoneConfig zones = cfg.zone_config_path.empty()
                                     ? csvd::ZoneConfig::defaults()
                                     : csvd::ZoneConfig::load(cfg.zone_config_path);

  const csvd::VoxelGrid prob_grid = load_or_fail(args.prob_path);
  const csvd::VoxelGrid anatomy_grid = load_or_fail(args.anatomy_path);
  const csvd::ProbVolume prob(prob_grid);
  const csvd::LabelVolume anatomy(anatomy_grid);

  const auto out = csvd::calibrated_detect(prob, anatomy, zones, cfg.calibration,
                                           cfg.distance_cap_mm, cfg.workers);

  fs::create_directories(args.out_dir);
  const std::string mask_name = args.uncompressed_mask ? "mask.nii" : "mask.nii.gz";
  const std::string mask_path = (fs::path(args.out_dir) / mask_name).string();
  csvd::save_volume(out.mask.grid(), mask_path, csvd::NiftiDataType::Uint8);

  const csvd::ZoneMap zone_map = csvd::build_zone_map(anatomy, zones);
  std::array<std::size_t, 3> zone_counts{};
  for (double z : zone_map.grid().data()) ++zone_counts[std::size_t(z) - 1];

  ordered_json j = report_header("calibrate", cfg);
  j["inputs"] = {{"prob", args.prob_path},
                 {"anatomy", args.anatomy_path},
                 {"zone_source", cfg.zone_config_path.empty()
                                     ? std::string("builtin")
                                     : cfg.zone_config_path}};
  j["notes"] = {
      "calibration applies to the probability channel given on the command "
      "line; run once per task channel"};
  j["geometry"] = {{"dims", prob_grid.dims()},
                   {"spacing_mm", prob_grid.spacing()}};
  j["zone_voxels"] = {{"zone1", zone_counts[0]},
                      {"zone2", zone_counts[1]},
                      {"zone3", zone_counts[2]}};
  j["mask_path"] = mask_name;  // relative to the report's directory
  j["foreground_voxels"] = out.mask.foreground_count();
  j["lesion_count"] = out.lesions.size();
  ordered_json lesions = ordered_json::array();
  for (const auto& l : out.lesions) lesions.push_back(lesion_to_json(l));
  j["lesions"] = std::move(lesions);

  write_report(j, (fs::path(args.out_dir) / "lesions.json").string());
  return 0;
}

// ---------------------------------------------------------------------------
// eval-case

struct EvalCaseArgs {
  std::string pred_path;
  std::string gt_path;
  std::string task = "lacune";
  std::string config_path;
  std::string out_path;
  std::string csv_path;  // appends one cohort row per case
  std::string case_id;
};

csvd::BinaryMask mask_from_grid(const csvd::VoxelGrid& g, const char* what) {
  for (double v : g.data()) {
    if (v != 0.0 && v != 1.0) {
      throw InputError(std::string(what) +
                       ": volume is not a binary mask (values outside {0,1})");
    }
  }
  return csvd::BinaryMask(g);
}

int cmd_eval_case(const EvalCaseArgs& args) {
  const csvd::PipelineConfig cfg = load_pipeline_config(args.config_path);
  if (args.task != "lacune" && args.task != "epvs") {
    throw InputError("task must be 'lacune' or 'epvs', got '" + args.task + "'");
  }
  const csvd::MatchRule rule =
      args.task == "lacune" ? cfg.lacune_rule : cfg.epvs_rule;

  const csvd::BinaryMask pred = mask_from_grid(load_or_fail(args.pred_path), "pred");
  const csvd::BinaryMask gt = mask_from_grid(load_or_fail(args.gt_path), "gt");
  csvd::assert_same_geometry(pred.grid(), gt.grid());

  const auto pred_lesions = csvd::connected_components(pred, cfg.calibration);
  const auto gt_lesions = csvd::connected_components(gt, cfg.calibration);
  const auto result = csvd::match_instances(pred_lesions, gt_lesions, rule);
  const auto metrics = csvd::evaluate_case(pred_lesions, gt_lesions, pred, gt,
                                           rule, cfg.nsd_tolerance_mm);

  ordered_json j = report_header("eval-case", cfg);
  j["inputs"] = {{"pred", args.pred_path}, {"gt", args.gt_path}};
  j["task"] = args.task;
  j["rule"] = {{"kind", rule.kind == csvd::MatchRule::Kind::CentroidDistance
                            ? "centroid_distance"
                            : "iou"},
               {"threshold", rule.threshold}};
  j["n_pred"] = pred_lesions.size();
  j["n_gt"] = gt_lesions.size();

  ordered_json matches = ordered_json::array();
  for (const auto& m : result.matches) {
    matches.push_back(
        {{"pred_id", m.pred_id}, {"gt_id", m.gt_id}, {"score", m.score}});
  }
  j["matches"] = std::move(matches);
  j["unmatched_pred"] = result.unmatched_pred;
  j["unmatched_gt"] = result.unmatched_gt;

  ordered_json mj;
  mj["precision"] = metrics.precision;
  mj["recall"] = metrics.recall;
  mj["f1"] = metrics.f1;
  mj["tp"] = metrics.tp_count;
  mj["fp"] = metrics.fp_count;
  mj["fn"] = metrics.fn_count;
  mj["dsc"] = metrics.dsc.has_value() ? ordered_json(*metrics.dsc)
                                      : ordered_json(nullptr);
  mj["nsd"] = metrics.nsd.has_value() ? ordered_json(*metrics.nsd)
                                      : ordered_json(nullptr);
  j["metrics"] = std::move(mj);

  write_report(j, args.out_path);

  if (!args.csv_path.empty()) {
    const std::string case_id =
        args.case_id.empty() ? fs::path(args.pred_path).stem().string()
                             : args.case_id;
    const bool fresh = !fs::exists(args.csv_path);
    std::ofstream csv(args.csv_path, std::ios::app);
    if (!csv) throw InputError("cannot write csv: " + args.csv_path);
    if (fresh) {
      csv << "case_id,task,precision,recall,f1,tp,fp,fn,dsc,nsd\n";
    }
    csv << case_id << "," << args.task << "," << metrics.precision << ","
        << metrics.recall << "," << metrics.f1 << "," << metrics.tp_count << ","
        << metrics.fp_count << "," << metrics.fn_count << ",";
    if (metrics.dsc.has_value()) csv << *metrics.dsc;
    csv << ",";
    if (metrics.nsd.has_value()) csv << *metrics.nsd;
    csv << "\n";
  }
  return 0;
}

// ---------------------------------------------------------------------------
// eval-cohort

struct EvalCohortArgs {
  std::string manifest_path;
  std::string config_path;
  std::string out_path;
  std::string csv_path;
  int workers = 0;
};

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream ss(line);
  while (std::getline(ss, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.push_back("");
  return out;
}

bool parse_bool_field(const std::string& raw, int line_no, const char* col) {
  if (raw == "1" || raw == "true" || raw == "True") return true;
  if (raw == "0" || raw == "false" || raw == "False") return false;
  std::ostringstream os;
  os << "manifest line " << line_no << ": column '" << col
     << "' must be a boolean (0/1/true/false), got '" << raw << "'";
  throw InputError(os.str());
}

double parse_num_field(const std::string& raw, int line_no, const std::string& col) {
  try {
    std::size_t used = 0;
    const double v = std::stod(raw, &used);
    if (used != raw.size() || !std::isfinite(v)) throw std::invalid_argument("");
    return v;
  } catch (...) {
    std::ostringstream os;
    os << "line " << line_no << ": column '" << col << "' must be numeric, got '"
       << raw << "'";
    throw InputError(os.str());
  }
}

std::vector<csvd::SubjectRecord> read_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open manifest: " + path);

  std::string line;
  if (!std::getline(in, line)) throw InputError("manifest is empty: " + path);
  const auto header = split_csv_line(line);
  const std::vector<std::string> expected{"id",           "pred_count",
                                          "true_count",   "presence_pred",
                                          "presence_true", "region"};
  if (header != expected) {
    throw InputError(
        "manifest header must be exactly "
        "'id,pred_count,true_count,presence_pred,presence_true,region'");
  }

  std::vector<csvd::SubjectRecord> out;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto fields = split_csv_line(line);
    if (fields.size() != 6) {
      std::ostringstream os;
      os << "manifest line " << line_no << ": expected 6 columns, got "
         << fields.size();
      throw InputError(os.str());
    }
    csvd::SubjectRecord rec;
    rec.id = fields[0];
    if (rec.id.empty()) {
      std::ostringstream os;
      os << "manifest line " << line_no << ": empty subject id";
      throw InputError(os.str());
    }
    rec.pred_count = parse_num_field(fields[1], line_no, "pred_count");
    rec.true_count = parse_num_field(fields[2], line_no, "true_count");
    if (rec.pred_count < 0 || rec.true_count < 0) {
      std::ostringstream os;
      os << "manifest line " << line_no << ": counts must be >= 0";
      throw InputError(os.str());
    }
    rec.presence_pred = parse_bool_field(fields[3], line_no, "presence_pred");
    rec.presence_true = parse_bool_field(fields[4], line_no, "presence_true");
    rec.region = fields[5];
    out.push_back(std::move(rec));
  }
  if (out.empty()) throw InputError("manifest has no subject rows: " + path);
  return out;
}

ordered_json stat_to_json(const csvd::StatResult& r) {
  return {{"point", r.point}, {"ci_low", r.ci_low},   {"ci_high", r.ci_high},
          {"n", r.n},         {"seed", r.seed},        {"dropped", r.dropped}};
}

// Evaluates `statistic` on the whole cohort and attaches a subject-level
// bootstrap interval; statistics undefined on the full sample (single-class
// truth, zero variance) come back as an error entry instead of aborting.
template <typename Fn>
ordered_json bootstrapped_stat(std::size_t n, Fn&& statistic, int iters,
                               std::uint64_t seed, int workers) {
  try {
    const auto wrapped =
        [&](const std::vector<std::size_t>& idx) -> std::optional<double> {
      try {
        return statistic(idx);
      } catch (const std::exception&) {
        return std::nullopt;
      }
    };
    std::vector<std::size_t> identity(n);
    for (std::size_t i = 0; i < n; ++i) identity[i] = i;
    statistic(identity);  // surface the sample-level error before resampling
    const csvd::StatResult r =
        csvd::bootstrap_ci_indexed(n, wrapped, iters, seed, workers);
    return stat_to_json(r);
  } catch (const std::exception& e) {
    return {{"error", e.what()}};
  }
}

int cmd_eval_cohort(const EvalCohortArgs& args) {
  csvd::PipelineConfig cfg = load_pipeline_config(args.config_path);
  if (args.workers > 0) cfg.workers = args.workers;
  cfg.validate();

  const auto subjects = read_manifest(args.manifest_path);
  const std::size_t n = subjects.size();
  const int iters = cfg.bootstrap_iters;
  const std::uint64_t seed = cfg.bootstrap_seed;
  const int workers = cfg.workers;

  ordered_json j = report_header("eval-cohort", cfg);
  j["inputs"] = {{"manifest", args.manifest_path}};
  j["n_subjects"] = n;

  ordered_json global;
  global["balanced_accuracy"] = bootstrapped_stat(
      n,
      [&](const std::vector<std::size_t>& idx) {
        std::vector<bool> pred, truth;
        pred.reserve(idx.size());
        truth.reserve(idx.size());
        for (std::size_t i : idx) {
          pred.push_back(subjects[i].presence_pred);
          truth.push_back(subjects[i].presence_true);
        }
        return csvd::balanced_accuracy(pred, truth);
      },
      iters, seed, workers);

  global["mae"] = bootstrapped_stat(
      n,
      [&](const std::vector<std::size_t>& idx) {
        std::vector<double> pred, truth;
        for (std::size_t i : idx) {
          pred.push_back(subjects[i].pred_count);
          truth.push_back(subjects[i].true_count);
        }
        return csvd::mae(pred, truth);
      },
      iters, seed, workers);

  global["pearson_r"] = bootstrapped_stat(
      n,
      [&](const std::vector<std::size_t>& idx) {
        std::vector<double> pred, truth;
        for (std::size_t i : idx) {
          pred.push_back(subjects[i].pred_count);
          truth.push_back(subjects[i].true_count);
        }
        return csvd::pearson_r(pred, truth);
      },
      iters, seed, workers);

  // cross-case spread of the absolute count error, reported separately
  // from the bootstrap interval and labeled as such
  {
    std::vector<double> abs_err;
    for (const auto& s : subjects) {
      abs_err.push_back(std::abs(s.pred_count - s.true_count));
    }
    double mean = 0.0;
    for (double v : abs_err) mean += v;
    mean /= double(abs_err.size());
    double var = 0.0;
    for (double v : abs_err) var += (v - mean) * (v - mean);
    global["abs_count_error_cross_case_sd"] =
        abs_err.size() > 1 ? std::sqrt(var / double(abs_err.size() - 1)) : 0.0;
  }
  j["global"] = std::move(global);

  // per-region rank correlation over rows that carry a region tag,
  // regions ordered by first appearance in the manifest
  std::vector<std::string> region_order;
  for (const auto& s : subjects) {
    if (s.region.empty()) continue;
    if (std::find(region_order.begin(), region_order.end(), s.region) ==
        region_order.end()) {
      region_order.push_back(s.region);
    }
  }
  ordered_json regions = ordered_json::object();
  for (const std::string& region : region_order) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < subjects.size(); ++i) {
      if (subjects[i].region == region) members.push_back(i);
    }
    ordered_json entry = bootstrapped_stat(
        members.size(),
        [&](const std::vector<std::size_t>& idx) {
          std::vector<double> pred, truth;
          for (std::size_t local : idx) {
            pred.push_back(subjects[members[local]].pred_count);
            truth.push_back(subjects[members[local]].true_count);
          }
          return csvd::spearman_rho(pred, truth);
        },
        iters, seed, workers);
    entry["n"] = members.size();
    regions[region] = std::move(entry);
  }
  j["per_region_spearman"] = std::move(regions);

  write_report(j, args.out_path);

  if (!args.csv_path.empty()) {
    std::ofstream csv(args.csv_path);
    if (!csv) throw InputError("cannot write csv: " + args.csv_path);
    csv << "statistic,region,point,ci_low,ci_high,n,seed,dropped,error\n";
    auto emit = [&csv](const std::string& name, const std::string& region,
                       const ordered_json& s) {
      csv << name << "," << region << ",";
      if (s.contains("error")) {
        csv << ",,,,,," << '"' << s["error"].get<std::string>() << '"' << "\n";
      } else {
        csv << s["point"].dump() << "," << s["ci_low"].dump() << ","
            << s["ci_high"].dump() << "," << s["n"].dump() << ","
            << s["seed"].dump() << "," << s["dropped"].dump() << ",\n";
      }
    };
    emit("balanced_accuracy", "", j["global"]["balanced_accuracy"]);
    emit("mae", "", j["global"]["mae"]);
    emit("pearson_r", "", j["global"]["pearson_r"]);
    for (const std::string& region : region_order) {
      emit("spearman_rho", region, j["per_region_spearman"][region]);
    }
  }
  return 0;
}

// ---------------------------------------------------------------------------
// stats

struct StatsArgs {
  std::string pairs_path;
  std::string out_path;
};

int cmd_stats(const StatsArgs& args) {
  std::ifstream in(args.pairs_path);
  if (!in) throw InputError("cannot open pairs csv: " + args.pairs_path);

  std::string line;
  if (!std::getline(in, line)) throw InputError("pairs csv is empty");
  const auto header = split_csv_line(line);
  if (header.size() != 3 || header[0] != "id") {
    throw InputError(
        "pairs csv header must be 'id,<method_a>,<method_b>' (3 columns)");
  }
  const std::string name_a = header[1], name_b = header[2];

  std::vector<double> a, b;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto fields = split_csv_line(line);
    if (fields.size() != 3) {
      std::ostringstream os;
      os << "pairs csv line " << line_no << ": expected 3 columns, got "
         << fields.size();
      throw InputError(os.str());
    }
    a.push_back(parse_num_field(fields[1], line_no, name_a));
    b.push_back(parse_num_field(fields[2], line_no, name_b));
  }
  if (a.empty()) throw InputError("pairs csv has no data rows");

  csvd::WilcoxonResult r;
  try {
    r = csvd::wilcoxon_signed_rank(a, b);
  } catch (const std::runtime_error& e) {
    throw InputError(e.what());
  }

  csvd::PipelineConfig cfg;
  ordered_json j = report_header("stats", cfg);
  j["inputs"] = {{"pairs", args.pairs_path}};
  j["methods"] = {name_a, name_b};
  j["n_pairs_total"] = a.size();
  j["n_after_zero_drop"] = r.n;
  j["w_plus"] = r.w_plus;
  j["p_value"] = r.p_value;
  j["method"] = r.exact ? "exact" : "normal_approximation";
  write_report(j, args.out_path);
  return 0;
}

// ---------------------------------------------------------------------------
// check-kernels

struct CheckKernelsArgs {
  std::uint64_t seed = 20200531;
  std::string out_path;
  bool perturb_gradients = false;  // test hook: break analytic gradients
};

csvd::Tensor4D random_unit_tensor(csvd::Rng& rng, int c, int d, int h, int w,
                                  double lo, double hi) {
  csvd::Tensor4D t(c, d, h, w);
  for (double& v : t.data) {
    v = lo + (hi - lo) * (double(rng()) / double(csvd::Rng::max()));
  }
  return t;
}

csvd::Tensor4D random_binary(csvd::Rng& rng, int c, int d, int h, int w,
                             double p_one) {
  csvd::Tensor4D t(c, d, h, w);
  for (double& v : t.data) {
    v = (double(rng()) / double(csvd::Rng::max())) < p_one ? 1.0 : 0.0;
  }
  return t;
}

csvd::Tensor4D smooth_field(csvd::Rng& rng, int c, int d, int h, int w) {
  csvd::Tensor4D t(c, d, h, w);
  auto uniform = [&rng](double lo, double hi) {
    return lo + (hi - lo) * (double(rng()) / double(csvd::Rng::max()));
  };
  for (int ch = 0; ch < c; ++ch) {
    const double ax = uniform(0.4, 1.6), ay = uniform(0.4, 1.6),
                 az = uniform(0.4, 1.6);
    const double px = uniform(0.0, 6.28), py = uniform(0.0, 6.28),
                 pz = uniform(0.0, 6.28);
    for (int z = 0; z < d; ++z) {
      for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
          t.at(ch, z, y, x) = 0.5 + 0.35 * std::sin(ax * x + px) *
                                        std::sin(ay * y + py) *
                                        std::sin(az * z + pz);
        }
      }
    }
  }
  return t;
}

// Distance of the skeleton recurrence from its nearest relu kink or pooling
// tie; finite differences need this to dwarf the probe step.
double skeleton_kink_margin(const csvd::Tensor4D& p, int iterations) {
  const int C = p.shape[0], D = p.shape[1], H = p.shape[2], W = p.shape[3];
  double margin = 1e300;
  auto pool = [&](const csvd::Tensor4D& in, bool take_max) {
    csvd::Tensor4D out(C, D, H, W);
    for (int c = 0; c < C; ++c) {
      for (int z = 0; z < D; ++z) {
        for (int y = 0; y < H; ++y) {
          for (int x = 0; x < W; ++x) {
            double best = in.at(c, z, y, x);
            for (int dz = -1; dz <= 1; ++dz) {
              for (int dy = -1; dy <= 1; ++dy) {
                for (int dx = -1; dx <= 1; ++dx) {
                  const int zz = z + dz, yy = y + dy, xx = x + dx;
                  if (zz < 0 || zz >= D || yy < 0 || yy >= H || xx < 0 || xx >= W) {
                    continue;
                  }
                  const double v = in.at(c, zz, yy, xx);
                  best = take_max ? std::max(best, v) : std::min(best, v);
                }
              }
            }
            out.at(c, z, y, x) = best;
            for (int dz = -1; dz <= 1; ++dz) {
              for (int dy = -1; dy <= 1; ++dy) {
                for (int dx = -1; dx <= 1; ++dx) {
                  const int zz = z + dz, yy = y + dy, xx = x + dx;
                  if (zz < 0 || zz >= D || yy < 0 || yy >= H || xx < 0 || xx >= W) {
                    continue;
                  }
                  const double v = in.at(c, zz, yy, xx);
                  if (v != best) margin = std::min(margin, std::abs(v - best));
                }
              }
            }
          }
        }
      }
    }
    return out;
  };

  csvd::Tensor4D e = p;
  csvd::Tensor4D skel;
  for (int k = 0; k <= iterations; ++k) {
    const csvd::Tensor4D eroded = pool(e, false);
    const csvd::Tensor4D opened = pool(eroded, true);
    csvd::Tensor4D delta(C, D, H, W);
    for (std::size_t i = 0; i < delta.size(); ++i) {
      const double d = e.data[i] - opened.data[i];
      if (d != 0.0) margin = std::min(margin, std::abs(d));
      delta.data[i] = d > 0.0 ? d : 0.0;
    }
    if (k == 0) {
      skel = delta;
    } else {
      for (std::size_t i = 0; i < skel.size(); ++i) {
        const double u = delta.data[i] - skel.data[i] * delta.data[i];
        if (u != 0.0) margin = std::min(margin, std::abs(u));
        skel.data[i] += u > 0.0 ? u : 0.0;
      }
    }
    e = eroded;
  }
  return margin;
}

// Straight-line re-evaluation of the attention formula for the oracle
// comparison: builds Q, K, V per voxel term by term.
double attention_oracle_max_err(const csvd::Tensor4D& f_lac,
                                const csvd::Tensor4D& f_epvs,
                                const csvd::AttentionWeights& w,
                                const csvd::AttentionOutput& got) {
  const int C = f_lac.shape[0], D = f_lac.shape[1], H = f_lac.shape[2],
            W = f_lac.shape[3];
  double max_err = 0.0;
  for (int z = 0; z < D; ++z) {
    for (int y = 0; y < H; ++y) {
      for (int x = 0; x < W; ++x) {
        double dot = 0.0;
        for (int cr = 0; cr < w.reduced; ++cr) {
          double q = 0.0, k = 0.0;
          for (int c = 0; c < C; ++c) {
            q += w.wq[std::size_t(cr) * C + c] * f_lac.at(c, z, y, x);
            k += w.wk[std::size_t(cr) * C + c] * f_epvs.at(c, z, y, x);
          }
          dot += q * k;
        }
        const double gate =
            1.0 / (1.0 + std::exp(-dot / std::sqrt(double(w.reduced))));
        max_err = std::max(max_err, std::abs(gate - got.gate.at(z, y, x)));
        for (int c = 0; c < C; ++c) {
          double value = 0.0;
          for (int c2 = 0; c2 < C; ++c2) {
            value += w.wv[std::size_t(c) * C + c2] * f_epvs.at(c2, z, y, x);
          }
          const double refined = f_lac.at(c, z, y, x) + gate * value;
          max_err = std::max(max_err,
                             std::abs(refined - got.refined.at(c, z, y, x)));
        }
      }
    }
  }
  return max_err;
}

int cmd_check_kernels(const CheckKernelsArgs& args) {
  csvd::Rng rng(args.seed);
  ordered_json checks = ordered_json::array();
  bool all_passed = true;
  std::string first_failure;

  auto record = [&](const std::string& name, bool passed, double measured,
                    double threshold, int instances) {
    checks.push_back({{"name", name},
                      {"passed", passed},
                      {"max_error", measured},
                      {"threshold", threshold},
                      {"instances", instances}});
    if (!passed && all_passed) {
      all_passed = false;
      first_failure = name;
    }
  };

  // gradient perturbation hook: lets callers verify the harness actually
  // rejects a wrong gradient
  const double sabotage = args.perturb_gradients ? 1e-3 : 0.0;

  {  // zero-init identity
    bool ok = true;
    for (int i = 0; i < 50 && ok; ++i) {
      const auto w = csvd::AttentionWeights::zero_value_init(8, 4, rng);
      const auto f_lac = random_unit_tensor(rng, 8, 4, 4, 4, -2.0, 2.0);
      const auto f_epvs = random_unit_tensor(rng, 8, 4, 4, 4, -2.0, 2.0);
      ok = csvd::gated_attention_forward(f_lac, f_epvs, w).refined.data ==
           f_lac.data;
    }
    record("attention_zero_init_identity", ok, ok ? 0.0 : 1.0, 0.0, 50);
  }

  {  // attention forward vs straight-line oracle
    double max_err = 0.0;
    for (int i = 0; i < 20; ++i) {
      auto w = csvd::AttentionWeights::zero_value_init(4, 4, rng);
      for (double& v : w.wv) {
        v = 2.0 * (double(rng()) / double(csvd::Rng::max())) - 1.0;
      }
      const auto f_lac = random_unit_tensor(rng, 4, 2, 2, 2, -2.0, 2.0);
      const auto f_epvs = random_unit_tensor(rng, 4, 2, 2, 2, -2.0, 2.0);
      const auto got = csvd::gated_attention_forward(f_lac, f_epvs, w);
      max_err = std::max(max_err, attention_oracle_max_err(f_lac, f_epvs, w, got));
    }
    record("attention_forward_oracle", max_err <= 1e-12, max_err, 1e-12, 20);
  }

  {  // tversky gradient
    const csvd::TverskyParams params;
    double max_rel = 0.0;
    for (int i = 0; i < 20; ++i) {
      const auto p = random_unit_tensor(rng, 2, 4, 4, 4, 0.05, 0.95);
      const auto g = random_binary(rng, 2, 4, 4, 4, 0.5);
      const auto valid = random_binary(rng, 2, 4, 4, 4, 0.8);
      const csvd::ScalarMap fn = [&](const csvd::Tensor4D& x) {
        auto r = csvd::tversky_loss(x, g, valid, params);
        for (double& gv : r.grad.data) {
          if (gv != 0.0) gv += sabotage;
        }
        return std::make_pair(r.value, r.grad);
      };
      max_rel = std::max(max_rel, csvd::finite_difference_check(fn, p, 1e-6));
    }
    record("tversky_gradient_fd", max_rel < 1e-6, max_rel, 1e-6, 20);
  }

  {  // tversky validity-mask contract
    bool ok = true;
    const csvd::TverskyParams params;
    for (int i = 0; i < 20 && ok; ++i) {
      const auto p = random_unit_tensor(rng, 1, 4, 4, 4, 0.05, 0.95);
      const auto g = random_binary(rng, 1, 4, 4, 4, 0.5);
      const auto valid = random_binary(rng, 1, 4, 4, 4, 0.5);
      const auto r = csvd::tversky_loss(p, g, valid, params);
      for (std::size_t v = 0; v < valid.data.size(); ++v) {
        if (valid.data[v] == 0.0 && r.grad.data[v] != 0.0) ok = false;
      }
    }
    record("tversky_masked_gradient_zero", ok, ok ? 0.0 : 1.0, 0.0, 20);
  }

  {  // centerline loss gradient, away from pooling ties
    double max_rel = 0.0;
    const double step = 1e-5;
    int checked = 0;
    for (int trial = 0; trial < 400 && checked < 20; ++trial) {
      const auto p = smooth_field(rng, 1, 6, 6, 6);
      const auto g = smooth_field(rng, 1, 6, 6, 6);
      if (skeleton_kink_margin(p, 2) < 20.0 * step) continue;
      const auto at_point = csvd::cldice_loss(p, g, 2);
      double min_slope = 1e300;
      for (double v : at_point.grad.data) {
        if (v != 0.0) min_slope = std::min(min_slope, std::abs(v));
      }
      if (min_slope < 2e-6) continue;
      const csvd::ScalarMap fn = [&](const csvd::Tensor4D& x) {
        auto r = csvd::cldice_loss(x, g, 2);
        for (double& gv : r.grad.data) {
          if (gv != 0.0) gv += sabotage;
        }
        return std::make_pair(r.value, r.grad);
      };
      max_rel = std::max(max_rel, csvd::finite_difference_check(fn, p, step));
      ++checked;
    }
    record("cldice_gradient_fd", checked == 20 && max_rel < 1e-5, max_rel, 1e-5,
           checked);
  }

  {  // exclusion gradient
    double max_rel = 0.0;
    for (int i = 0; i < 20; ++i) {
      const auto a = random_unit_tensor(rng, 1, 4, 4, 4, 0.1, 0.9);
      const auto b = random_unit_tensor(rng, 1, 4, 4, 4, 0.1, 0.9);
      const csvd::ScalarMap fn = [&](const csvd::Tensor4D& x) {
        auto r = csvd::exclusion_loss(x, b);
        for (double& gv : r.grad_a.data) {
          if (gv != 0.0) gv += sabotage;
        }
        return std::make_pair(r.value, r.grad_a);
      };
      max_rel = std::max(max_rel, csvd::finite_difference_check(fn, a, 1e-3));
    }
    record("exclusion_gradient_fd", max_rel < 1e-6, max_rel, 1e-6, 20);
  }

  {  // total loss gradient through a packed wrapper
    double max_rel = 0.0;
    auto uniform = [&rng](double lo, double hi) {
      return lo + (hi - lo) * (double(rng()) / double(csvd::Rng::max()));
    };
    for (int i = 0; i < 20; ++i) {
      csvd::Tensor4D packed(1, 1, 1, 5);
      packed.data = {uniform(-2.0, -0.2), uniform(-2.0, -0.2),
                     uniform(-2.0, -0.2), uniform(-1.0, 1.0),
                     uniform(-1.0, 1.0)};
      const double lambda = uniform(0.25, 1.25);
      const csvd::ScalarMap fn = [&](const csvd::Tensor4D& x) {
        csvd::UncertaintyState st;
        st.s_epvs = x.data[3];
        st.s_lac = x.data[4];
        st.lambda_excl = lambda;
        const auto r = csvd::total_loss(x.data[0], x.data[1], x.data[2], st);
        csvd::Tensor4D grad(1, 1, 1, 5);
        grad.data = {r.d_l_epvs + sabotage, r.d_l_lac + sabotage,
                     r.d_l_excl + sabotage, r.d_s_epvs + sabotage,
                     r.d_s_lac + sabotage};
        return std::make_pair(r.value, grad);
      };
      max_rel = std::max(max_rel, csvd::finite_difference_check(fn, packed, 1e-5));
    }
    record("total_loss_gradient_fd", max_rel < 1e-6, max_rel, 1e-6, 20);
  }

  {  // loss anchor values
    bool ok = true;
    const auto g = random_binary(rng, 1, 3, 3, 3, 0.5);
    csvd::Tensor4D valid(1, 3, 3, 3);
    for (double& v : valid.data) v = 1.0;
    ok = ok && csvd::tversky_loss(g, g, valid, csvd::TverskyParams{}).value == 0.0;

    csvd::Tensor4D half_a(2, 2, 2, 2), half_b(2, 2, 2, 2);
    for (double& v : half_a.data) v = 0.5;
    for (double& v : half_b.data) v = 0.5;
    ok = ok && csvd::exclusion_loss(half_a, half_b).value == 0.25;

    csvd::UncertaintyState st;
    st.lambda_excl = 0.0;
    ok = ok && csvd::total_loss(0.3, 0.4, 9.9, st).value == 0.3 + 0.4;
    record("loss_anchor_values", ok, ok ? 0.0 : 1.0, 0.0, 3);
  }

  ordered_json j = report_header("check-kernels", csvd::PipelineConfig{});
  j["seed"] = args.seed;
  j["gradients_perturbed"] = args.perturb_gradients;
  j["checks"] = std::move(checks);
  j["all_passed"] = all_passed;
  if (!all_passed) j["first_failure"] = first_failure;
  write_report(j, args.out_path);

  if (!all_passed) {
    std::cerr << "check failed: " << first_failure << "\n";
    return kExitCheckFailure;
  }
  return 0;
}

// ---------------------------------------------------------------------------
// skeletonize / kernel-eval

struct SkeletonizeArgs {
  std::string in_path;
  std::string out_path;
  int iterations = 5;
};

int cmd_skeletonize(const SkeletonizeArgs& args) {
  if (args.iterations < 0) throw InputError("iterations must be >= 0");

  std::optional<csvd::VoxelGrid> geometry;
  csvd::Tensor4D t;
  if (has_suffix(args.in_path, ".bin")) {
    t = load_tensor(args.in_path);
  } else {
    geometry = load_or_fail(args.in_path);
    t = csvd::Tensor4D(1, geometry->dims()[2], geometry->dims()[1],
                       geometry->dims()[0]);
    t.data = geometry->data();
  }
  for (double v : t.data) {
    if (!(v >= 0.0 && v <= 1.0)) {
      throw InputError("skeletonize input must be a probability field in [0,1]");
    }
  }
  const csvd::Tensor4D skel = csvd::soft_skeleton(t, args.iterations);
  save_tensor(skel, args.out_path, geometry.has_value() ? &*geometry : nullptr);
  return 0;
}

struct KernelEvalArgs {
  std::string op;
  std::string pred_path;
  std::string target_path;
  std::string valid_path;
  std::string out_path;
  std::string grad_out;
  std::string weights_path;  // attention projections
  std::string gate_out;
  std::string refined_out;
  double alpha = 0.1;
  double beta = 0.9;
  double epsilon = 1e-5;
  int iterations = 5;
};

// Attention weights as JSON: {"channels": C, "reduction": r,
// "wq": [...], "wk": [...], "wv": [...]} with row-major flat arrays.
csvd::AttentionWeights load_attention_weights(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open weights: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw InputError("malformed weights " + path + ": " + e.what());
  }
  csvd::AttentionWeights w;
  try {
    w.channels = j.at("channels").get<int>();
    const int reduction = j.at("reduction").get<int>();
    if (reduction < 1 || w.channels < 1 || w.channels % reduction != 0) {
      throw InputError("weights: channels must be a positive multiple of reduction");
    }
    w.reduced = w.channels / reduction;
    w.wq = j.at("wq").get<std::vector<double>>();
    w.wk = j.at("wk").get<std::vector<double>>();
    w.wv = j.at("wv").get<std::vector<double>>();
  } catch (const nlohmann::json::exception& e) {
    throw InputError("malformed weights " + path + ": " + e.what());
  }
  w.validate();
  return w;
}

int cmd_kernel_eval(const KernelEvalArgs& args) {
  const csvd::Tensor4D pred = load_tensor(args.pred_path);
  const csvd::Tensor4D target = load_tensor(args.target_path);

  csvd::PipelineConfig cfg;
  ordered_json j = report_header("kernel-eval", cfg);
  j["op"] = args.op;
  j["inputs"] = {{"pred", args.pred_path}, {"target", args.target_path}};
  j["shape"] = pred.shape;

  csvd::Tensor4D grad;
  if (args.op == "tversky") {
    csvd::Tensor4D valid;
    if (args.valid_path.empty()) {
      valid = csvd::Tensor4D(pred.shape[0], pred.shape[1], pred.shape[2],
                             pred.shape[3]);
      for (double& v : valid.data) v = 1.0;
    } else {
      valid = load_tensor(args.valid_path);
    }
    csvd::TverskyParams params{args.alpha, args.beta, args.epsilon};
    const auto r = csvd::tversky_loss(pred, target, valid, params);
    j["params"] = {{"alpha", args.alpha},
                   {"beta", args.beta},
                   {"epsilon", args.epsilon}};
    j["value"] = r.value;
    grad = r.grad;
  } else if (args.op == "cldice") {
    const auto r = csvd::cldice_loss(pred, target, args.iterations, args.epsilon);
    j["params"] = {{"iterations", args.iterations}, {"epsilon", args.epsilon}};
    j["value"] = r.value;
    grad = r.grad;
  } else if (args.op == "exclusion") {
    const auto r = csvd::exclusion_loss(pred, target);
    j["value"] = r.value;
    grad = r.grad_a;
  } else if (args.op == "attention") {
    if (args.weights_path.empty()) {
      throw InputError("attention needs --weights (projection JSON)");
    }
    const auto w = load_attention_weights(args.weights_path);
    const auto r = csvd::gated_attention_forward(pred, target, w);
    j["params"] = {{"channels", w.channels}, {"bottleneck", w.reduced}};
    double gate_min = 1.0, gate_max = 0.0;
    for (double g : r.gate.data) {
      gate_min = std::min(gate_min, g);
      gate_max = std::max(gate_max, g);
    }
    j["gate_range"] = {gate_min, gate_max};
    if (!args.gate_out.empty()) {
      csvd::Tensor4D gate(1, r.gate.shape[0], r.gate.shape[1], r.gate.shape[2]);
      gate.data = r.gate.data;
      save_tensor(gate, args.gate_out, nullptr);
      j["gate_path"] = args.gate_out;
    }
    if (!args.refined_out.empty()) {
      save_tensor(r.refined, args.refined_out, nullptr);
      j["refined_path"] = args.refined_out;
    }
    write_report(j, args.out_path);
    return 0;
  } else {
    throw InputError("unknown kernel op '" + args.op +
                     "' (expected tversky, cldice, exclusion or attention)");
  }

  if (!args.grad_out.empty()) {
    save_tensor(grad, args.grad_out, nullptr);
    j["grad_path"] = args.grad_out;
  }
  write_report(j, args.out_path);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "csvd: anatomically calibrated lesion detection and evaluation toolkit"};
  app.require_subcommand(1);

  CalibrateArgs cal;
  auto* sc_cal = app.add_subcommand(
      "calibrate", "apply the adaptive anatomical threshold and extract lesions");
  sc_cal->add_option("--prob", cal.prob_path, "probability volume (NIfTI-1)")
      ->required();
  sc_cal->add_option("--anatomy", cal.anatomy_path, "parcellation labels (NIfTI-1)")
      ->required();
  sc_cal->add_option("--config", cal.config_path, "pipeline config JSON");
  sc_cal->add_option("--zones", cal.zones_path, "zone config JSON override");
  sc_cal->add_option("--out-dir", cal.out_dir, "output directory")->required();
  sc_cal->add_option("--workers", cal.workers,
                     "worker threads (0 = CSVD_WORKERS env or 1)");
  sc_cal->add_flag("--uncompressed-mask", cal.uncompressed_mask,
                   "write mask.nii instead of mask.nii.gz");

  EvalCaseArgs ec;
  auto* sc_case = app.add_subcommand("eval-case",
                                     "instance metrics for one pred/gt mask pair");
  sc_case->add_option("--pred", ec.pred_path, "predicted binary mask")->required();
  sc_case->add_option("--gt", ec.gt_path, "reference binary mask")->required();
  sc_case->add_option("--task", ec.task, "lacune (centroid rule) or epvs (IoU rule)");
  sc_case->add_option("--config", ec.config_path, "pipeline config JSON");
  sc_case->add_option("--out", ec.out_path, "report path ('-' = stdout)");
  sc_case->add_option("--csv", ec.csv_path, "append one cohort row to this CSV");
  sc_case->add_option("--case-id", ec.case_id, "row id (defaults to the pred stem)");

  EvalCohortArgs eco;
  auto* sc_cohort = app.add_subcommand("eval-cohort",
                                       "population statistics from a manifest CSV");
  sc_cohort->add_option("--manifest", eco.manifest_path, "cohort manifest CSV")
      ->required();
  sc_cohort->add_option("--config", eco.config_path, "pipeline config JSON");
  sc_cohort->add_option("--out", eco.out_path, "report path ('-' = stdout)");
  sc_cohort->add_option("--csv", eco.csv_path, "also write a flat CSV of statistics");
  sc_cohort->add_option("--workers", eco.workers, "worker threads");

  StatsArgs st;
  auto* sc_stats = app.add_subcommand(
      "stats", "paired signed-rank test between two methods");
  sc_stats->add_option("--pairs", st.pairs_path, "CSV: id,<method_a>,<method_b>")
      ->required();
  sc_stats->add_option("--out", st.out_path, "report path ('-' = stdout)");

  CheckKernelsArgs ck;
  auto* sc_check = app.add_subcommand("check-kernels",
                                      "run the numerical verification battery");
  sc_check->add_option("--seed", ck.seed, "PRNG seed for the battery");
  sc_check->add_option("--out", ck.out_path, "report path ('-' = stdout)");
  sc_check
      ->add_flag("--perturb-gradients", ck.perturb_gradients,
                 "deliberately break analytic gradients (harness self-test)")
      ->group("");  // hidden

  SkeletonizeArgs sk;
  auto* sc_skel = app.add_subcommand("skeletonize",
                                     "soft skeleton of a probability volume");
  sc_skel->add_option("--in", sk.in_path, "input (NIfTI-1 or .bin tensor)")
      ->required();
  sc_skel->add_option("--out", sk.out_path, "output (matches input kind)")
      ->required();
  sc_skel->add_option("--iterations", sk.iterations, "erosion iterations");

  KernelEvalArgs ke;
  auto* sc_kernel = app.add_subcommand("kernel-eval",
                                       "evaluate a loss kernel on tensor files");
  sc_kernel->add_option("--op", ke.op, "tversky | cldice | exclusion | attention")
      ->required();
  sc_kernel->add_option("--pred", ke.pred_path, "prediction / query tensor")
      ->required();
  sc_kernel->add_option("--target", ke.target_path, "target / context tensor")
      ->required();
  sc_kernel->add_option("--valid", ke.valid_path, "validity mask (tversky)");
  sc_kernel->add_option("--out", ke.out_path, "report path ('-' = stdout)");
  sc_kernel->add_option("--grad-out", ke.grad_out, "write the gradient as .bin");
  sc_kernel->add_option("--weights", ke.weights_path, "attention projection JSON");
  sc_kernel->add_option("--gate-out", ke.gate_out, "write the gate as .bin");
  sc_kernel->add_option("--refined-out", ke.refined_out,
                        "write the refined features as .bin");
  sc_kernel->add_option("--alpha", ke.alpha, "tversky false-positive weight");
  sc_kernel->add_option("--beta", ke.beta, "tversky false-negative weight");
  sc_kernel->add_option("--epsilon", ke.epsilon, "smoothing term");
  sc_kernel->add_option("--iterations", ke.iterations, "skeleton iterations");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    app.exit(e);
    return kExitInputError;
  }

  try {
    if (sc_cal->parsed()) return cmd_calibrate(cal);
    if (sc_case->parsed()) return cmd_eval_case(ec);
    if (sc_cohort->parsed()) return cmd_eval_cohort(eco);
    if (sc_stats->parsed()) return cmd_stats(st);
    if (sc_check->parsed()) return cmd_check_kernels(ck);
    if (sc_skel->parsed()) return cmd_skeletonize(sk);
    if (sc_kernel->parsed()) return cmd_kernel_eval(ke);
  } catch (const std::exception& e) {
    ordered_json err;
    err["error"] = e.what();
    std::cerr << err.dump() << "\n";
    return kExitInputError;
  }
  return 0;
}
