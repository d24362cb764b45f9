#pragma once

#include <cstdint>
#include <set>
#include <string>

#include "csvd/volume.hpp"

namespace csvd {

/// Maps parcellation labels onto the three reliability tiers:
/// 1 = allowed, 2 = transition, 3 = exclusion. Labels absent from all
/// three sets fall into `unlisted_zone`.
struct ZoneConfig {
  std::set<std::int64_t> zone1_labels;
  std::set<std::int64_t> zone2_labels;
  std::set<std::int64_t> zone3_labels;
  int unlisted_zone = 3;

  /// Throws unless the three sets are pairwise disjoint and the policy
  /// names a valid tier.
  void validate() const;

  /// Built-in mapping for FastSurfer/FreeSurfer-style whole-brain
  /// parcellations: cerebral white matter, deep grey nuclei and the
  /// brainstem are allowed; hippocampus and cerebellar white matter are
  /// transition; everything else (cortex, ventricles, CSF, background)
  /// is exclusion via the unlisted policy.
  static ZoneConfig defaults();

  /// Loads a JSON file {"zone1": [..], "zone2": [..], "zone3": [..],
  /// "unlisted_zone": 3}; missing keys keep their defaults.
  static ZoneConfig load(const std::string& path);
};

/// Per-voxel reliability tier in {1,2,3}.
class ZoneMap {
 public:
  explicit ZoneMap(VoxelGrid grid);
  const VoxelGrid& grid() const { return grid_; }
  int tier_at(int i, int j, int k) const {
    return static_cast<int>(grid_.at(i, j, k));
  }

 private:
  VoxelGrid grid_;
};

/// Truncated one-sided distance to the allowed zone, in mm: zero on tier-1
/// voxels, Euclidean distance to the nearest tier-1 voxel center elsewhere,
/// capped at `cap`.
class DistanceField {
 public:
  DistanceField(VoxelGrid grid, double cap);
  const VoxelGrid& grid() const { return grid_; }
  double cap() const { return cap_; }

 private:
  VoxelGrid grid_;
  double cap_;
};

ZoneMap build_zone_map(const LabelVolume& labels, const ZoneConfig& cfg);

/// Exact (non-chamfer) Euclidean distance under anisotropic spacing.
/// Throws when the zone map contains no tier-1 voxel.
DistanceField distance_field(const ZoneMap& zones, double cap_mm,
                             int workers = 1);

}  // namespace csvd
