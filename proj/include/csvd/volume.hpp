#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace csvd {

/// Row-major 4x4 homogeneous index->world transform, in millimetres.
struct Affine {
  std::array<double, 16> m{1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1};

  static Affine identity() { return Affine{}; }
  static Affine from_spacing(const std::array<double, 3>& spacing);

  double operator()(int r, int c) const { return m[4 * r + c]; }
  double& operator()(int r, int c) { return m[4 * r + c]; }

  std::array<double, 3> apply(double i, double j, double k) const;

  /// Shifts the index origin: result maps index x to apply(x + offset).
  Affine with_index_offset(int di, int dj, int dk) const;

  std::array<double, 3> column_norms() const;
  double det3() const;
  bool almost_equal(const Affine& other, double tol) const;
};

/// A 3D scalar field with physical spacing and an index->world affine.
/// Data is linearized x-fastest: linear = i + nx*(j + ny*k).
/// Grids are immutable after construction.
class VoxelGrid {
 public:
  VoxelGrid(std::array<int, 3> dims, std::array<double, 3> spacing,
            Affine affine, std::vector<double> data);

  /// Convenience constructor with a diagonal affine built from the spacing.
  static VoxelGrid with_spacing(std::array<int, 3> dims,
                                std::array<double, 3> spacing,
                                std::vector<double> data);

  const std::array<int, 3>& dims() const { return dims_; }
  const std::array<double, 3>& spacing() const { return spacing_; }
  const Affine& affine() const { return affine_; }
  const std::vector<double>& data() const { return data_; }

  std::size_t size() const { return data_.size(); }
  double voxel_volume_mm3() const;

  bool in_bounds(int i, int j, int k) const {
    return i >= 0 && i < dims_[0] && j >= 0 && j < dims_[1] && k >= 0 &&
           k < dims_[2];
  }
  std::size_t linear(int i, int j, int k) const {
    return static_cast<std::size_t>(i) +
           static_cast<std::size_t>(dims_[0]) *
               (static_cast<std::size_t>(j) +
                static_cast<std::size_t>(dims_[1]) * static_cast<std::size_t>(k));
  }
  double at(int i, int j, int k) const { return data_[linear(i, j, k)]; }

  /// Same dims/spacing/affine, new data.
  VoxelGrid like(std::vector<double> data) const;

 private:
  std::array<int, 3> dims_;
  std::array<double, 3> spacing_;
  Affine affine_;
  std::vector<double> data_;
};

/// World-space position of a voxel center; throws on out-of-range index.
std::array<double, 3> index_to_world(const VoxelGrid& grid, int i, int j, int k);

/// Passes iff dims are equal and affines agree within 1e-4 mm per element.
void assert_same_geometry(const VoxelGrid& a, const VoxelGrid& b);

/// Probability field: values in [0,1]. Values within 1e-9 outside the range
/// are clamped; anything worse is rejected.
class ProbVolume {
 public:
  explicit ProbVolume(VoxelGrid grid);
  const VoxelGrid& grid() const { return grid_; }

 private:
  VoxelGrid grid_;
};

/// Non-negative exact integer labels; 0 is background.
class LabelVolume {
 public:
  explicit LabelVolume(VoxelGrid grid);
  const VoxelGrid& grid() const { return grid_; }
  std::int64_t label_at(int i, int j, int k) const {
    return static_cast<std::int64_t>(grid_.at(i, j, k));
  }

 private:
  VoxelGrid grid_;
};

/// Strictly binary {0,1} field.
class BinaryMask {
 public:
  explicit BinaryMask(VoxelGrid grid);
  const VoxelGrid& grid() const { return grid_; }
  bool foreground(int i, int j, int k) const { return grid_.at(i, j, k) != 0.0; }
  std::size_t foreground_count() const;

 private:
  VoxelGrid grid_;
};

}  // namespace csvd
