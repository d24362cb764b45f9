#pragma once

#include <optional>
#include <vector>

#include "csvd/calibrate.hpp"
#include "csvd/volume.hpp"

namespace csvd {

/// Pairing criterion for instance matching.
struct MatchRule {
  enum class Kind { CentroidDistance, Iou };
  Kind kind = Kind::CentroidDistance;
  double threshold = 5.0;

  /// Centroids within `mm` (inclusive) match.
  static MatchRule centroid(double mm = 5.0) {
    return MatchRule{Kind::CentroidDistance, mm};
  }
  /// Voxel IoU strictly above `fraction` matches.
  static MatchRule iou(double fraction = 0.10) {
    return MatchRule{Kind::Iou, fraction};
  }
  void validate() const;
};

struct MatchPair {
  int pred_id = 0;
  int gt_id = 0;
  double score = 0.0;  ///< centroid distance in mm, or IoU fraction
};

/// One-to-one matching outcome; every lesion id appears exactly once across
/// matches and the unmatched lists.
struct DetectionResult {
  std::vector<MatchPair> matches;
  std::vector<int> unmatched_pred;  ///< false positives
  std::vector<int> unmatched_gt;    ///< false negatives
};

/// Greedy best-first one-to-one matching: candidate pairs that satisfy the
/// rule are visited best-first (smallest distance / largest IoU, ties by
/// pred id then gt id) and accepted while both endpoints are free.
DetectionResult match_instances(const std::vector<Lesion>& pred,
                                const std::vector<Lesion>& gt,
                                const MatchRule& rule);

struct DetectionMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  int tp = 0;
  int fp = 0;
  int fn = 0;
};

/// Instance counts to fractions. Empty-side conventions: a 0/0 ratio is 1
/// when the other side is also empty and 0 otherwise, which keeps the
/// pred/gt role swap exchanging precision and recall.
DetectionMetrics detection_metrics(const DetectionResult& result);

/// 2|P∩G| / (|P|+|G|); 1.0 when both masks are empty.
double dice(const BinaryMask& pred, const BinaryMask& gt);

/// Normalized surface distance at tolerance tau (mm). Surface voxels are
/// foreground voxels with at least one background 6-neighbor, with
/// out-of-bounds counting as background; distances are between voxel
/// centers. Both surfaces empty -> 1.0; exactly one empty -> 0.0.
double nsd(const BinaryMask& pred, const BinaryMask& gt, double tolerance_mm);

struct CaseMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  int fp_count = 0;
  int fn_count = 0;
  int tp_count = 0;
  /// Mean DSC / NSD over matched pairs, each pair evaluated on masks
  /// containing only that lesion; absent when there are no matches.
  std::optional<double> dsc;
  std::optional<double> nsd;
};

CaseMetrics evaluate_case(const std::vector<Lesion>& pred_lesions,
                          const std::vector<Lesion>& gt_lesions,
                          const BinaryMask& pred_mask, const BinaryMask& gt_mask,
                          const MatchRule& rule, double nsd_tolerance_mm = 1.0);

}  // namespace csvd
