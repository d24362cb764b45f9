#include "csvd/tensor.hpp"

#include <stdexcept>

namespace csvd {

Tensor4D::Tensor4D(int c, int d, int h, int w) : shape{c, d, h, w} {
  for (int s : shape) {
    if (s < 1) throw std::invalid_argument("Tensor4D: shape components must be >= 1");
  }
  data.assign(std::size_t(c) * d * h * w, 0.0);
}

Tensor3D::Tensor3D(int d, int h, int w) : shape{d, h, w} {
  for (int s : shape) {
    if (s < 1) throw std::invalid_argument("Tensor3D: shape components must be >= 1");
  }
  data.assign(std::size_t(d) * h * w, 0.0);
}

double pairwise_sum(std::span<const double> values) {
  if (values.size() <= 8) {
    double s = 0.0;
    for (double v : values) s += v;
    return s;
  }
  const std::size_t mid = values.size() / 2;
  return pairwise_sum(values.first(mid)) + pairwise_sum(values.subspan(mid));
}

}  // namespace csvd
