#include "csvd/match_eval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "csvd/edt.hpp"

namespace csvd {
namespace {

double centroid_distance(const Lesion& a, const Lesion& b) {
  const double dx = a.centroid_mm[0] - b.centroid_mm[0];
  const double dy = a.centroid_mm[1] - b.centroid_mm[1];
  const double dz = a.centroid_mm[2] - b.centroid_mm[2];
  return std::sqrt(dx * dx + dy * dy + dz * dz);
}

// Voxel lists are sorted, so intersection is a linear merge.
double lesion_iou(const Lesion& a, const Lesion& b) {
  std::size_t i = 0, j = 0, inter = 0;
  while (i < a.voxels.size() && j < b.voxels.size()) {
    if (a.voxels[i] < b.voxels[j]) {
      ++i;
    } else if (b.voxels[j] < a.voxels[i]) {
      ++j;
    } else {
      ++inter;
      ++i;
      ++j;
    }
  }
  const std::size_t uni = a.voxels.size() + b.voxels.size() - inter;
  return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

// Surface voxels: foreground with a background 6-neighbor (out of bounds is
// background).
std::vector<std::uint8_t> surface_of(const BinaryMask& mask) {
  const VoxelGrid& g = mask.grid();
  const int nx = g.dims()[0], ny = g.dims()[1], nz = g.dims()[2];
  std::vector<std::uint8_t> surf(g.size(), 0);
  static constexpr int off[6][3] = {{-1, 0, 0}, {1, 0, 0},  {0, -1, 0},
                                    {0, 1, 0},  {0, 0, -1}, {0, 0, 1}};
  for (int k = 0; k < nz; ++k) {
    for (int j = 0; j < ny; ++j) {
      for (int i = 0; i < nx; ++i) {
        if (!mask.foreground(i, j, k)) continue;
        for (const auto& o : off) {
          const int ni = i + o[0], nj = j + o[1], nk = k + o[2];
          if (!g.in_bounds(ni, nj, nk) || !mask.foreground(ni, nj, nk)) {
            surf[g.linear(i, j, k)] = 1;
            break;
          }
        }
      }
    }
  }
  return surf;
}

std::size_t count_within(const std::vector<std::uint8_t>& query_surface,
                         const std::vector<std::uint8_t>& target_surface,
                         const VoxelGrid& g, double tol) {
  const std::vector<double> sq = squared_edt(target_surface, g.dims(), g.spacing());
  const double tol_sq = tol * tol;
  std::size_t n = 0;
  for (std::size_t i = 0; i < query_surface.size(); ++i) {
    if (query_surface[i] && sq[i] <= tol_sq) ++n;
  }
  return n;
}

// Extracts a matched pair into stand-alone masks cropped to the union of
// their bounding boxes; a one-voxel background rim keeps each surface
// identical to the full-volume extraction.
std::pair<BinaryMask, BinaryMask> isolate_pair(const Lesion& a, const Lesion& b,
                                               const VoxelGrid& ref) {
  std::array<int, 3> lo = a.voxels.front();
  std::array<int, 3> hi = a.voxels.front();
  for (const Lesion* l : {&a, &b}) {
    for (const auto& v : l->voxels) {
      for (int ax = 0; ax < 3; ++ax) {
        lo[ax] = std::min(lo[ax], v[ax]);
        hi[ax] = std::max(hi[ax], v[ax]);
      }
    }
  }
  std::array<int, 3> dims{};
  for (int ax = 0; ax < 3; ++ax) {
    lo[ax] -= 1;
    dims[ax] = hi[ax] - lo[ax] + 2;
  }
  const VoxelGrid geom(dims, ref.spacing(),
                       ref.affine().with_index_offset(lo[0], lo[1], lo[2]),
                       std::vector<double>(std::size_t(dims[0]) * dims[1] * dims[2], 0.0));
  auto fill = [&](const Lesion& l) {
    std::vector<double> data = geom.data();
    for (const auto& v : l.voxels) {
      data[geom.linear(v[0] - lo[0], v[1] - lo[1], v[2] - lo[2])] = 1.0;
    }
    return BinaryMask(geom.like(std::move(data)));
  };
  return {fill(a), fill(b)};
}

}  // namespace

void MatchRule::validate() const {
  if (!(threshold > 0.0)) {
    throw std::invalid_argument("MatchRule: threshold must be > 0");
  }
}

DetectionResult match_instances(const std::vector<Lesion>& pred,
                                const std::vector<Lesion>& gt,
                                const MatchRule& rule) {
  rule.validate();

  struct Candidate {
    double score;
    int pred_idx;
    int gt_idx;
  };
  std::vector<Candidate> candidates;
  for (std::size_t p = 0; p < pred.size(); ++p) {
    for (std::size_t g = 0; g < gt.size(); ++g) {
      double score;
      bool ok;
      if (rule.kind == MatchRule::Kind::CentroidDistance) {
        score = centroid_distance(pred[p], gt[g]);
        ok = score <= rule.threshold;  // inclusive
      } else {
        score = lesion_iou(pred[p], gt[g]);
        ok = score > rule.threshold;  // strict
      }
      if (ok) candidates.push_back({score, int(p), int(g)});
    }
  }

  const bool smaller_is_better = rule.kind == MatchRule::Kind::CentroidDistance;
  std::sort(candidates.begin(), candidates.end(),
            [&](const Candidate& a, const Candidate& b) {
              if (a.score != b.score) {
                return smaller_is_better ? a.score < b.score : a.score > b.score;
              }
              if (pred[a.pred_idx].id != pred[b.pred_idx].id) {
                return pred[a.pred_idx].id < pred[b.pred_idx].id;
              }
              return gt[a.gt_idx].id < gt[b.gt_idx].id;
            });

  DetectionResult result;
  std::vector<bool> pred_used(pred.size(), false), gt_used(gt.size(), false);
  for (const Candidate& c : candidates) {
    if (pred_used[c.pred_idx] || gt_used[c.gt_idx]) continue;
    pred_used[c.pred_idx] = true;
    gt_used[c.gt_idx] = true;
    result.matches.push_back({pred[c.pred_idx].id, gt[c.gt_idx].id, c.score});
  }
  for (std::size_t p = 0; p < pred.size(); ++p) {
    if (!pred_used[p]) result.unmatched_pred.push_back(pred[p].id);
  }
  for (std::size_t g = 0; g < gt.size(); ++g) {
    if (!gt_used[g]) result.unmatched_gt.push_back(gt[g].id);
  }
  return result;
}

DetectionMetrics detection_metrics(const DetectionResult& result) {
  DetectionMetrics m;
  m.tp = static_cast<int>(result.matches.size());
  m.fp = static_cast<int>(result.unmatched_pred.size());
  m.fn = static_cast<int>(result.unmatched_gt.size());

  const int n_pred = m.tp + m.fp;
  const int n_gt = m.tp + m.fn;
  m.precision = n_pred > 0 ? double(m.tp) / n_pred : (n_gt == 0 ? 1.0 : 0.0);
  m.recall = n_gt > 0 ? double(m.tp) / n_gt : (n_pred == 0 ? 1.0 : 0.0);
  m.f1 = m.precision + m.recall > 0.0
             ? 2.0 * m.precision * m.recall / (m.precision + m.recall)
             : 0.0;
  return m;
}

double dice(const BinaryMask& pred, const BinaryMask& gt) {
  assert_same_geometry(pred.grid(), gt.grid());
  const std::vector<double>& p = pred.grid().data();
  const std::vector<double>& g = gt.grid().data();
  std::size_t np = 0, ng = 0, inter = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const bool fp = p[i] != 0.0, fg = g[i] != 0.0;
    np += fp;
    ng += fg;
    inter += fp && fg;
  }
  if (np + ng == 0) return 1.0;
  return 2.0 * double(inter) / double(np + ng);
}

double nsd(const BinaryMask& pred, const BinaryMask& gt, double tolerance_mm) {
  assert_same_geometry(pred.grid(), gt.grid());
  if (!(tolerance_mm > 0.0)) {
    throw std::invalid_argument("nsd: tolerance must be > 0");
  }

  const std::vector<std::uint8_t> sp = surface_of(pred);
  const std::vector<std::uint8_t> sg = surface_of(gt);
  std::size_t n_sp = 0, n_sg = 0;
  for (auto v : sp) n_sp += v;
  for (auto v : sg) n_sg += v;

  if (n_sp == 0 && n_sg == 0) return 1.0;
  if (n_sp == 0 || n_sg == 0) return 0.0;

  const VoxelGrid& g = pred.grid();
  const std::size_t close_p = count_within(sp, sg, g, tolerance_mm);
  const std::size_t close_g = count_within(sg, sp, g, tolerance_mm);
  return double(close_p + close_g) / double(n_sp + n_sg);
}

CaseMetrics evaluate_case(const std::vector<Lesion>& pred_lesions,
                          const std::vector<Lesion>& gt_lesions,
                          const BinaryMask& pred_mask, const BinaryMask& gt_mask,
                          const MatchRule& rule, double nsd_tolerance_mm) {
  assert_same_geometry(pred_mask.grid(), gt_mask.grid());

  const DetectionResult result = match_instances(pred_lesions, gt_lesions, rule);
  const DetectionMetrics dm = detection_metrics(result);

  CaseMetrics out;
  out.precision = dm.precision;
  out.recall = dm.recall;
  out.f1 = dm.f1;
  out.tp_count = dm.tp;
  out.fp_count = dm.fp;
  out.fn_count = dm.fn;

  if (!result.matches.empty()) {
    auto find_by_id = [](const std::vector<Lesion>& lesions, int id) -> const Lesion& {
      for (const Lesion& l : lesions) {
        if (l.id == id) return l;
      }
      throw std::logic_error("lesion id not found");
    };
    double dsc_sum = 0.0, nsd_sum = 0.0;
    for (const MatchPair& mp : result.matches) {
      const Lesion& lp = find_by_id(pred_lesions, mp.pred_id);
      const Lesion& lg = find_by_id(gt_lesions, mp.gt_id);
      const auto [mask_p, mask_g] = isolate_pair(lp, lg, pred_mask.grid());
      dsc_sum += dice(mask_p, mask_g);
      nsd_sum += nsd(mask_p, mask_g, nsd_tolerance_mm);
    }
    out.dsc = dsc_sum / double(result.matches.size());
    out.nsd = nsd_sum / double(result.matches.size());
  }
  return out;
}

}  // namespace csvd
