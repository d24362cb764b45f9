#pragma once

#include <array>
#include <cstdint>
#include <vector>

namespace csvd {

/// Exact squared Euclidean distance transform of a seed set on a regular
/// grid with per-axis spacing, computed by the separable lower-envelope
/// (parabola) method, one pass per axis. Distances are between voxel
/// centers in physical units; exact for grids whose axes are orthogonal
/// in world space. Seeds get 0; a grid with no seeds comes back all +inf.
///
/// seeds: one byte per voxel, x-fastest linearization, nonzero = seed.
std::vector<double> squared_edt(const std::vector<std::uint8_t>& seeds,
                                const std::array<int, 3>& dims,
                                const std::array<double, 3>& spacing,
                                int workers = 1);

}  // namespace csvd
