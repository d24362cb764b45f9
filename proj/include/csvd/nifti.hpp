#pragma once

#include <string>

#include "csvd/volume.hpp"

namespace csvd {

/// On-disk datum types supported by the NIfTI-1 reader/writer.
enum class NiftiDataType : int {
  Uint8 = 2,
  Int16 = 4,
  Int32 = 8,
  Float32 = 16,
  Float64 = 64,
};

/// Reads a single-file NIfTI-1 volume (.nii or .nii.gz, gzip detected from
/// the stream itself). Little- and big-endian headers are both accepted.
/// The affine is taken from the sform when valid, falling back to the qform,
/// and finally to a diagonal built from pixdim. Spacing is derived from the
/// affine column norms. Data is converted to 64-bit float, with scl_slope /
/// scl_inter applied per the format's scaling convention.
VoxelGrid load_volume(const std::string& path);

/// Writes a single-file NIfTI-1 volume (gzip-compressed when the path ends
/// in .gz). The affine goes into the sform; output is always little-endian.
/// The default float64 payload makes load(save(g)) bit-exact on the data.
void save_volume(const VoxelGrid& grid, const std::string& path,
                 NiftiDataType dtype = NiftiDataType::Float64);

}  // namespace csvd
