#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <vector>

namespace csvd {

/// Channel-first 4D tensor (C, D, H, W), 64-bit values, x fastest within
/// each channel: linear = x + W*(y + H*(z + D*c)).
struct Tensor4D {
  std::array<int, 4> shape{1, 1, 1, 1};
  std::vector<double> data;

  Tensor4D() = default;
  Tensor4D(int c, int d, int h, int w);

  static Tensor4D zeros(int c, int d, int h, int w) { return Tensor4D(c, d, h, w); }

  int channels() const { return shape[0]; }
  std::size_t voxels_per_channel() const {
    return std::size_t(shape[1]) * shape[2] * shape[3];
  }
  std::size_t size() const { return data.size(); }

  std::size_t linear(int c, int z, int y, int x) const {
    return ((std::size_t(c) * shape[1] + z) * shape[2] + y) * shape[3] + x;
  }
  double at(int c, int z, int y, int x) const { return data[linear(c, z, y, x)]; }
  double& at(int c, int z, int y, int x) { return data[linear(c, z, y, x)]; }

  bool same_shape(const Tensor4D& other) const { return shape == other.shape; }
};

/// Single-channel spatial field (D, H, W), same linearization.
struct Tensor3D {
  std::array<int, 3> shape{1, 1, 1};
  std::vector<double> data;

  Tensor3D() = default;
  Tensor3D(int d, int h, int w);

  std::size_t linear(int z, int y, int x) const {
    return (std::size_t(z) * shape[1] + y) * shape[2] + x;
  }
  double at(int z, int y, int x) const { return data[linear(z, y, x)]; }
  double& at(int z, int y, int x) { return data[linear(z, y, x)]; }
  std::size_t size() const { return data.size(); }
};

/// Sum with a fixed pairwise reduction tree; the result depends only on the
/// element order, never on chunking or thread count.
double pairwise_sum(std::span<const double> values);

}  // namespace csvd
