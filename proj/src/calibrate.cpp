#include "csvd/calibrate.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "csvd/parallel.hpp"

namespace csvd {
namespace {

// Backward half-neighborhoods (offsets with negative linearized order), so a
// single raster scan sees every adjacency exactly once.
std::vector<std::array<int, 3>> backward_offsets(int connectivity) {
  std::vector<std::array<int, 3>> out;
  for (int dk = -1; dk <= 0; ++dk) {
    for (int dj = -1; dj <= 1; ++dj) {
      for (int di = -1; di <= 1; ++di) {
        if (dk == 0 && (dj > 0 || (dj == 0 && di >= 0))) continue;
        const int manhattan = std::abs(di) + std::abs(dj) + std::abs(dk);
        if (connectivity == 6 && manhattan > 1) continue;
        if (connectivity == 18 && manhattan > 2) continue;
        out.push_back({di, dj, dk});
      }
    }
  }
  return out;
}

struct UnionFind {
  std::vector<std::int32_t> parent;

  explicit UnionFind(std::size_t n) : parent(n) {
    std::iota(parent.begin(), parent.end(), 0);
  }
  std::int32_t find(std::int32_t x) {
    while (parent[x] != x) {
      parent[x] = parent[parent[x]];
      x = parent[x];
    }
    return x;
  }
  void unite(std::int32_t a, std::int32_t b) {
    a = find(a);
    b = find(b);
    if (a != b) parent[std::max(a, b)] = std::min(a, b);
  }
};

}  // namespace

void CalibrationParams::validate() const {
  if (!(base > 0.0 && base < 1.0)) {
    throw std::invalid_argument("CalibrationParams: base must lie in (0,1)");
  }
  if (!(lambda >= 0.0)) {
    throw std::invalid_argument("CalibrationParams: lambda must be >= 0");
  }
  if (!(gamma > 0.0)) {
    throw std::invalid_argument("CalibrationParams: gamma must be > 0");
  }
  if (base + lambda > 1.0) {
    throw std::invalid_argument("CalibrationParams: base + lambda must be <= 1");
  }
  if (connectivity != 6 && connectivity != 18 && connectivity != 26) {
    throw std::invalid_argument("CalibrationParams: connectivity must be 6, 18 or 26");
  }
  if (min_voxels < 1) {
    throw std::invalid_argument("CalibrationParams: min_voxels must be >= 1");
  }
}

VoxelGrid adaptive_threshold(const DistanceField& distance, const ZoneMap& zones,
                             const CalibrationParams& params, int workers) {
  params.validate();
  assert_same_geometry(distance.grid(), zones.grid());

  const std::vector<double>& d = distance.grid().data();
  const std::vector<double>& z = zones.grid().data();
  std::vector<double> t(d.size());
  parallel_for(d.size(), workers, [&](std::size_t lo, std::size_t hi) {
    for (std::size_t i = lo; i < hi; ++i) {
      t[i] = z[i] == 1.0
                 ? params.base
                 : params.base + params.lambda * std::tanh(params.gamma * d[i]);
    }
  });
  return distance.grid().like(std::move(t));
}

BinaryMask binarize(const ProbVolume& prob, const VoxelGrid& threshold) {
  assert_same_geometry(prob.grid(), threshold);
  const std::vector<double>& p = prob.grid().data();
  const std::vector<double>& t = threshold.data();
  std::vector<double> m(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) {
    m[i] = p[i] >= t[i] ? 1.0 : 0.0;
  }
  return BinaryMask(prob.grid().like(std::move(m)));
}

std::vector<Lesion> connected_components(const BinaryMask& mask,
                                         const CalibrationParams& params,
                                         const ZoneMap* zones) {
  params.validate();
  if (zones != nullptr) assert_same_geometry(mask.grid(), zones->grid());

  const VoxelGrid& g = mask.grid();
  const int nx = g.dims()[0], ny = g.dims()[1], nz = g.dims()[2];
  const std::vector<double>& data = g.data();

  const auto offsets = backward_offsets(params.connectivity);
  UnionFind uf(data.size());

  for (int k = 0; k < nz; ++k) {
    for (int j = 0; j < ny; ++j) {
      for (int i = 0; i < nx; ++i) {
        const std::size_t idx = g.linear(i, j, k);
        if (data[idx] == 0.0) continue;
        for (const auto& off : offsets) {
          const int ni = i + off[0], nj = j + off[1], nk = k + off[2];
          if (!g.in_bounds(ni, nj, nk)) continue;
          const std::size_t nidx = g.linear(ni, nj, nk);
          if (data[nidx] != 0.0) {
            uf.unite(static_cast<std::int32_t>(idx), static_cast<std::int32_t>(nidx));
          }
        }
      }
    }
  }

  // Gather voxels per root; scan order keeps each component's voxel list
  // sorted by linearized index.
  std::vector<std::int32_t> root_slot(data.size(), -1);
  std::vector<Lesion> lesions;
  for (int k = 0; k < nz; ++k) {
    for (int j = 0; j < ny; ++j) {
      for (int i = 0; i < nx; ++i) {
        const std::size_t idx = g.linear(i, j, k);
        if (data[idx] == 0.0) continue;
        const std::int32_t root = uf.find(static_cast<std::int32_t>(idx));
        if (root_slot[root] < 0) {
          root_slot[root] = static_cast<std::int32_t>(lesions.size());
          lesions.emplace_back();
        }
        lesions[root_slot[root]].voxels.push_back({i, j, k});
      }
    }
  }

  lesions.erase(std::remove_if(lesions.begin(), lesions.end(),
                               [&](const Lesion& l) {
                                 return static_cast<int>(l.voxels.size()) <
                                        params.min_voxels;
                               }),
                lesions.end());

  const double voxel_volume = g.voxel_volume_mm3();
  for (Lesion& l : lesions) {
    std::sort(l.voxels.begin(), l.voxels.end());
    l.voxel_count = static_cast<int>(l.voxels.size());
    l.volume_mm3 = l.voxel_count * voxel_volume;

    double mi = 0, mj = 0, mk = 0;
    for (const auto& v : l.voxels) {
      mi += v[0];
      mj += v[1];
      mk += v[2];
    }
    mi /= l.voxel_count;
    mj /= l.voxel_count;
    mk /= l.voxel_count;
    l.centroid_mm = g.affine().apply(mi, mj, mk);

    if (zones != nullptr) {
      const std::array<int, 3> rounded = {static_cast<int>(std::lround(mi)),
                                          static_cast<int>(std::lround(mj)),
                                          static_cast<int>(std::lround(mk))};
      const bool inside =
          std::binary_search(l.voxels.begin(), l.voxels.end(), rounded);
      const std::array<int, 3>& at = inside ? rounded : l.voxels.front();
      l.zone_tier = zones->tier_at(at[0], at[1], at[2]);
    }
  }

  std::sort(lesions.begin(), lesions.end(), [](const Lesion& a, const Lesion& b) {
    if (a.voxel_count != b.voxel_count) return a.voxel_count > b.voxel_count;
    return a.voxels.front() < b.voxels.front();
  });
  for (std::size_t i = 0; i < lesions.size(); ++i) {
    lesions[i].id = static_cast<int>(i + 1);
  }
  return lesions;
}

DetectOutput calibrated_detect(const ProbVolume& prob, const LabelVolume& anatomy,
                               const ZoneConfig& cfg, const CalibrationParams& params,
                               double distance_cap_mm, int workers) {
  assert_same_geometry(prob.grid(), anatomy.grid());
  const ZoneMap zones = build_zone_map(anatomy, cfg);
  const DistanceField dist = distance_field(zones, distance_cap_mm, workers);
  const VoxelGrid threshold = adaptive_threshold(dist, zones, params, workers);
  BinaryMask mask = binarize(prob, threshold);
  std::vector<Lesion> lesions = connected_components(mask, params, &zones);
  return DetectOutput{std::move(mask), std::move(lesions)};
}

}  // namespace csvd
