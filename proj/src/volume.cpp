#include "csvd/volume.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>
#include <utility>

namespace csvd {

Affine Affine::from_spacing(const std::array<double, 3>& spacing) {
  Affine a;
  a(0, 0) = spacing[0];
  a(1, 1) = spacing[1];
  a(2, 2) = spacing[2];
  return a;
}

std::array<double, 3> Affine::apply(double i, double j, double k) const {
  std::array<double, 3> out{};
  for (int r = 0; r < 3; ++r) {
    out[r] = m[4 * r + 0] * i + m[4 * r + 1] * j + m[4 * r + 2] * k + m[4 * r + 3];
  }
  return out;
}

Affine Affine::with_index_offset(int di, int dj, int dk) const {
  Affine out = *this;
  const auto origin = apply(di, dj, dk);
  out(0, 3) = origin[0];
  out(1, 3) = origin[1];
  out(2, 3) = origin[2];
  return out;
}

std::array<double, 3> Affine::column_norms() const {
  std::array<double, 3> out{};
  for (int c = 0; c < 3; ++c) {
    out[c] = std::sqrt(m[c] * m[c] + m[4 + c] * m[4 + c] + m[8 + c] * m[8 + c]);
  }
  return out;
}

double Affine::det3() const {
  return m[0] * (m[5] * m[10] - m[6] * m[9]) -
         m[1] * (m[4] * m[10] - m[6] * m[8]) +
         m[2] * (m[4] * m[9] - m[5] * m[8]);
}

bool Affine::almost_equal(const Affine& other, double tol) const {
  for (int i = 0; i < 16; ++i) {
    if (std::abs(m[i] - other.m[i]) > tol) return false;
  }
  return true;
}

VoxelGrid::VoxelGrid(std::array<int, 3> dims, std::array<double, 3> spacing,
                     Affine affine, std::vector<double> data)
    : dims_(dims), spacing_(spacing), affine_(affine), data_(std::move(data)) {
  for (int a = 0; a < 3; ++a) {
    if (dims_[a] < 1) {
      std::ostringstream os;
      os << "VoxelGrid: dims must be >= 1, got (" << dims_[0] << ", "
         << dims_[1] << ", " << dims_[2] << ")";
      throw std::invalid_argument(os.str());
    }
    if (!(spacing_[a] > 0.0)) {
      throw std::invalid_argument("VoxelGrid: spacing components must be > 0");
    }
  }
  const std::size_t expected = static_cast<std::size_t>(dims_[0]) *
                               static_cast<std::size_t>(dims_[1]) *
                               static_cast<std::size_t>(dims_[2]);
  if (data_.size() != expected) {
    std::ostringstream os;
    os << "VoxelGrid: data length " << data_.size() << " does not match dims "
       << expected;
    throw std::invalid_argument(os.str());
  }
  if (std::abs(affine_.det3()) < 1e-30) {
    throw std::invalid_argument("VoxelGrid: affine is singular");
  }
  const auto norms = affine_.column_norms();
  for (int c = 0; c < 3; ++c) {
    if (std::abs(norms[c] - spacing_[c]) > 1e-6 * spacing_[c]) {
      std::ostringstream os;
      os << "VoxelGrid: affine column " << c << " norm " << norms[c]
         << " does not match spacing " << spacing_[c];
      throw std::invalid_argument(os.str());
    }
  }
}

VoxelGrid VoxelGrid::with_spacing(std::array<int, 3> dims,
                                  std::array<double, 3> spacing,
                                  std::vector<double> data) {
  return VoxelGrid(dims, spacing, Affine::from_spacing(spacing), std::move(data));
}

double VoxelGrid::voxel_volume_mm3() const { return std::abs(affine_.det3()); }

VoxelGrid VoxelGrid::like(std::vector<double> data) const {
  return VoxelGrid(dims_, spacing_, affine_, std::move(data));
}

std::array<double, 3> index_to_world(const VoxelGrid& grid, int i, int j, int k) {
  if (!grid.in_bounds(i, j, k)) {
    std::ostringstream os;
    os << "index_to_world: index (" << i << ", " << j << ", " << k
       << ") out of range for dims (" << grid.dims()[0] << ", " << grid.dims()[1]
       << ", " << grid.dims()[2] << ")";
    throw std::out_of_range(os.str());
  }
  return grid.affine().apply(i, j, k);
}

void assert_same_geometry(const VoxelGrid& a, const VoxelGrid& b) {
  if (a.dims() != b.dims()) {
    std::ostringstream os;
    os << "geometry mismatch: dims (" << a.dims()[0] << ", " << a.dims()[1]
       << ", " << a.dims()[2] << ") vs (" << b.dims()[0] << ", " << b.dims()[1]
       << ", " << b.dims()[2] << ")";
    throw std::runtime_error(os.str());
  }
  if (!a.affine().almost_equal(b.affine(), 1e-4)) {
    throw std::runtime_error("geometry mismatch: affines differ by more than 1e-4");
  }
}

ProbVolume::ProbVolume(VoxelGrid grid) : grid_(std::move(grid)) {
  std::vector<double> data = grid_.data();
  bool changed = false;
  for (double& v : data) {
    if (v < 0.0 || v > 1.0) {
      if (v < -1e-9 || v > 1.0 + 1e-9) {
        std::ostringstream os;
        os << "ProbVolume: value " << v << " outside [0,1]";
        throw std::invalid_argument(os.str());
      }
      v = v < 0.0 ? 0.0 : 1.0;
      changed = true;
    }
  }
  if (changed) grid_ = grid_.like(std::move(data));
}

LabelVolume::LabelVolume(VoxelGrid grid) : grid_(std::move(grid)) {
  for (double v : grid_.data()) {
    if (v < 0.0 || v != std::floor(v)) {
      std::ostringstream os;
      os << "LabelVolume: value " << v << " is not a non-negative integer";
      throw std::invalid_argument(os.str());
    }
  }
}

BinaryMask::BinaryMask(VoxelGrid grid) : grid_(std::move(grid)) {
  for (double v : grid_.data()) {
    if (v != 0.0 && v != 1.0) {
      std::ostringstream os;
      os << "BinaryMask: value " << v << " is not in {0,1}";
      throw std::invalid_argument(os.str());
    }
  }
}

std::size_t BinaryMask::foreground_count() const {
  std::size_t n = 0;
  for (double v : grid_.data()) n += (v != 0.0);
  return n;
}

}  // namespace csvd
