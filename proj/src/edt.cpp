#include "csvd/edt.hpp"

#include <limits>

#include "csvd/parallel.hpp"

namespace csvd {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// 1D squared-distance transform along a line with sample step `s`:
// out[p] = min_q ( ((p-q)*s)^2 + f[q] ). Lower envelope of parabolas;
// infinite f values never enter the hull.
void edt_line(const double* f, double* out, int n, double s, int* hull_v,
              double* hull_z, double* hull_f) {
  int k = -1;
  const double s2 = s * s;
  for (int q = 0; q < n; ++q) {
    if (f[q] == kInf) continue;
    const double fq = f[q];
    while (k >= 0) {
      const int v = hull_v[k];
      // Intersection of parabola q with parabola v, in index units.
      const double x = ((fq - hull_f[k]) / s2 + double(q) * q - double(v) * v) /
                       (2.0 * (q - v));
      if (x <= hull_z[k]) {
        --k;
      } else {
        ++k;
        hull_v[k] = q;
        hull_f[k] = fq;
        hull_z[k] = x;
        break;
      }
    }
    if (k < 0) {
      k = 0;
      hull_v[0] = q;
      hull_f[0] = fq;
      hull_z[0] = -kInf;
    }
  }

  if (k < 0) {
    for (int p = 0; p < n; ++p) out[p] = kInf;
    return;
  }

  int j = 0;
  for (int p = 0; p < n; ++p) {
    while (j < k && hull_z[j + 1] < double(p)) ++j;
    const double d = double(p - hull_v[j]) * s;
    out[p] = d * d + hull_f[j];
  }
}

}  // namespace

std::vector<double> squared_edt(const std::vector<std::uint8_t>& seeds,
                                const std::array<int, 3>& dims,
                                const std::array<double, 3>& spacing,
                                int workers) {
  const int nx = dims[0], ny = dims[1], nz = dims[2];
  const std::size_t count = std::size_t(nx) * ny * nz;

  std::vector<double> field(count);
  for (std::size_t i = 0; i < count; ++i) {
    field[i] = seeds[i] ? 0.0 : kInf;
  }

  // Pass 1: along x. Lines are contiguous in memory.
  parallel_for(std::size_t(ny) * nz, workers, [&](std::size_t lo, std::size_t hi) {
    std::vector<double> in(nx), hz(nx), hf(nx);
    std::vector<int> hv(nx);
    for (std::size_t line = lo; line < hi; ++line) {
      double* row = field.data() + line * nx;
      for (int i = 0; i < nx; ++i) in[i] = row[i];
      edt_line(in.data(), row, nx, spacing[0], hv.data(), hz.data(), hf.data());
    }
  });

  // Pass 2: along y, one (x,z) line at a time.
  parallel_for(std::size_t(nx) * nz, workers, [&](std::size_t lo, std::size_t hi) {
    std::vector<double> in(ny), out(ny), hz(ny), hf(ny);
    std::vector<int> hv(ny);
    for (std::size_t line = lo; line < hi; ++line) {
      const int i = int(line % nx);
      const int k = int(line / nx);
      const std::size_t base = std::size_t(i) + std::size_t(nx) * ny * k;
      for (int j = 0; j < ny; ++j) in[j] = field[base + std::size_t(j) * nx];
      edt_line(in.data(), out.data(), ny, spacing[1], hv.data(), hz.data(),
               hf.data());
      for (int j = 0; j < ny; ++j) field[base + std::size_t(j) * nx] = out[j];
    }
  });

  // Pass 3: along z.
  parallel_for(std::size_t(nx) * ny, workers, [&](std::size_t lo, std::size_t hi) {
    std::vector<double> in(nz), out(nz), hz(nz), hf(nz);
    std::vector<int> hv(nz);
    const std::size_t stride = std::size_t(nx) * ny;
    for (std::size_t line = lo; line < hi; ++line) {
      for (int k = 0; k < nz; ++k) in[k] = field[line + std::size_t(k) * stride];
      edt_line(in.data(), out.data(), nz, spacing[2], hv.data(), hz.data(),
               hf.data());
      for (int k = 0; k < nz; ++k) field[line + std::size_t(k) * stride] = out[k];
    }
  });

  return field;
}

}  // namespace csvd
