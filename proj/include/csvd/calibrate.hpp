#pragma once

#include <array>
#include <vector>

#include "csvd/anatomy.hpp"
#include "csvd/volume.hpp"

namespace csvd {

struct CalibrationParams {
  double base = 0.5;    ///< threshold inside the allowed zone
  double lambda = 0.5;  ///< penalty magnitude outside it
  double gamma = 0.5;   ///< penalty steepness
  int connectivity = 26;
  int min_voxels = 1;

  void validate() const;
};

/// One connected lesion instance. Voxels are stored sorted by (i,j,k);
/// zone_tier is 0 when no zone map was supplied.
struct Lesion {
  int id = 0;
  std::vector<std::array<int, 3>> voxels;
  std::array<double, 3> centroid_mm{};
  int voxel_count = 0;
  double volume_mm3 = 0.0;
  int zone_tier = 0;
};

/// Spatially adaptive decision boundary: T(x) = base inside the allowed
/// zone, base + lambda*tanh(gamma*D(x)) elsewhere.
VoxelGrid adaptive_threshold(const DistanceField& distance, const ZoneMap& zones,
                             const CalibrationParams& params, int workers = 1);

/// M(x) = 1 iff p(x) >= T(x). The comparison is inclusive.
BinaryMask binarize(const ProbVolume& prob, const VoxelGrid& threshold);

/// Maximal connected foreground components under params.connectivity,
/// components smaller than min_voxels dropped, sorted by descending voxel
/// count with ties broken by smallest (i,j,k). When a zone map is given,
/// each lesion records the tier of the voxel containing its centroid
/// (falling back to its first voxel if the rounded centroid lies outside
/// the component).
std::vector<Lesion> connected_components(const BinaryMask& mask,
                                         const CalibrationParams& params,
                                         const ZoneMap* zones = nullptr);

struct DetectOutput {
  BinaryMask mask;
  std::vector<Lesion> lesions;
};

/// Full anatomically calibrated inference path: zone map, truncated
/// distance field, adaptive threshold, binarization, instance extraction.
DetectOutput calibrated_detect(const ProbVolume& prob, const LabelVolume& anatomy,
                               const ZoneConfig& cfg, const CalibrationParams& params,
                               double distance_cap_mm = 10.0, int workers = 1);

}  // namespace csvd
