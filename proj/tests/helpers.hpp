// Shared fixtures and independent oracles for the test suites. Everything
// here is written against the public contracts only, on purpose: oracle code
// must not share logic with the implementation it checks.
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <functional>
#include <iterator>
#include <limits>
#include <map>
#include <queue>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "csvd/kernels.hpp"
#include "csvd/volume.hpp"

namespace testutil {

// ---------------------------------------------------------------------------
// Random grids and tensors

inline std::mt19937_64 make_rng(std::uint64_t seed) { return std::mt19937_64(seed); }

inline csvd::VoxelGrid random_grid(std::mt19937_64& rng, std::array<int, 3> dims,
                                   std::array<double, 3> spacing, double lo = 0.0,
                                   double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> data(std::size_t(dims[0]) * dims[1] * dims[2]);
  for (double& v : data) v = dist(rng);
  return csvd::VoxelGrid::with_spacing(dims, spacing, std::move(data));
}

// Rotation about z times diag(spacing), plus translation: realistic and keeps
// affine columns orthogonal with norms equal to the spacing.
inline csvd::Affine rotated_affine(std::array<double, 3> spacing, double angle,
                                   std::array<double, 3> offset) {
  csvd::Affine a;
  const double c = std::cos(angle), s = std::sin(angle);
  a(0, 0) = c * spacing[0];
  a(0, 1) = -s * spacing[1];
  a(1, 0) = s * spacing[0];
  a(1, 1) = c * spacing[1];
  a(2, 2) = spacing[2];
  a(0, 3) = offset[0];
  a(1, 3) = offset[1];
  a(2, 3) = offset[2];
  return a;
}

inline csvd::Tensor4D random_tensor(std::mt19937_64& rng, int c, int d, int h,
                                    int w, double lo, double hi) {
  csvd::Tensor4D t(c, d, h, w);
  std::uniform_real_distribution<double> dist(lo, hi);
  for (double& v : t.data) v = dist(rng);
  return t;
}

inline csvd::Tensor4D random_binary_tensor(std::mt19937_64& rng, int c, int d,
                                           int h, int w, double p_one = 0.5) {
  csvd::Tensor4D t(c, d, h, w);
  std::uniform_real_distribution<double> dist(0.0, 1.0);
  for (double& v : t.data) v = dist(rng) < p_one ? 1.0 : 0.0;
  return t;
}

/// Smooth random field in (0.15, 0.85): a product of sinusoids with random
/// frequencies and phases. Smoothness keeps pooling margins and gradient
/// magnitudes well away from the floating-point noise floor.
inline csvd::Tensor4D smooth_random_tensor(std::mt19937_64& rng, int c, int d,
                                           int h, int w) {
  csvd::Tensor4D t(c, d, h, w);
  std::uniform_real_distribution<double> freq(0.4, 1.6), phase(0.0, 6.28);
  for (int ch = 0; ch < c; ++ch) {
    const double ax = freq(rng), ay = freq(rng), az = freq(rng);
    const double px = phase(rng), py = phase(rng), pz = phase(rng);
    for (int z = 0; z < d; ++z) {
      for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
          t.at(ch, z, y, x) = 0.5 + 0.35 * std::sin(ax * x + px) *
                                        std::sin(ay * y + py) *
                                        std::sin(az * z + pz);
        }
      }
    }
  }
  return t;
}

// ---------------------------------------------------------------------------
// Byte-level NIfTI-1 reference reader/writer, independent of src/nifti.cpp.
// Serializes field by field at the documented offsets rather than through a
// packed struct, and supports emitting either byte order.

struct RefNifti {
  std::array<int, 3> dims{};
  std::array<float, 3> pixdim{};
  std::array<std::array<float, 4>, 3> srow{};
  short datatype = 64;
  float scl_slope = 1.0f;
  float scl_inter = 0.0f;
  std::vector<double> data;  // converted to double for comparisons
};

inline void put_bytes(std::vector<unsigned char>& buf, std::size_t off,
                      const void* src, std::size_t n, bool big_endian) {
  const auto* p = static_cast<const unsigned char*>(src);
  for (std::size_t i = 0; i < n; ++i) {
    buf[off + i] = big_endian ? p[n - 1 - i] : p[i];
  }
}

template <typename T>
inline void put_value(std::vector<unsigned char>& buf, std::size_t off, T v,
                      bool big_endian) {
  put_bytes(buf, off, &v, sizeof(T), big_endian);
}

template <typename T>
inline T get_value(const std::vector<unsigned char>& buf, std::size_t off,
                   bool big_endian) {
  unsigned char tmp[sizeof(T)];
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    tmp[i] = big_endian ? buf[off + sizeof(T) - 1 - i] : buf[off + i];
  }
  T v;
  std::memcpy(&v, tmp, sizeof(T));
  return v;
}

/// Writes a single-file NIfTI-1 volume from raw parts. dtype codes:
/// 2=uint8, 4=int16, 8=int32, 16=float32, 64=float64.
inline std::vector<unsigned char> ref_nifti_bytes(
    const std::array<int, 3>& dims, const std::array<float, 3>& pixdim,
    const std::array<std::array<float, 4>, 3>& srow, short dtype,
    const std::vector<double>& values, bool big_endian, float scl_slope = 1.0f,
    float scl_inter = 0.0f) {
  const short bitpix = dtype == 2 ? 8 : dtype == 4 ? 16 : dtype == 64 ? 64 : 32;
  std::vector<unsigned char> buf(352, 0);
  put_value<std::int32_t>(buf, 0, 348, big_endian);
  put_value<std::int16_t>(buf, 40, 3, big_endian);  // dim[0]
  for (int a = 0; a < 3; ++a) {
    put_value<std::int16_t>(buf, 42 + 2 * a, static_cast<std::int16_t>(dims[a]),
                            big_endian);
  }
  for (int a = 4; a < 8; ++a) put_value<std::int16_t>(buf, 40 + 2 * a, 1, big_endian);
  put_value<std::int16_t>(buf, 70, dtype, big_endian);
  put_value<std::int16_t>(buf, 72, bitpix, big_endian);
  put_value<float>(buf, 76, 1.0f, big_endian);  // pixdim[0] (qfac)
  for (int a = 0; a < 3; ++a) put_value<float>(buf, 80 + 4 * a, pixdim[a], big_endian);
  put_value<float>(buf, 108, 352.0f, big_endian);  // vox_offset
  put_value<float>(buf, 112, scl_slope, big_endian);
  put_value<float>(buf, 116, scl_inter, big_endian);
  put_value<std::int16_t>(buf, 254, 1, big_endian);  // sform_code
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 4; ++c) {
      put_value<float>(buf, 280 + 16 * r + 4 * c, srow[r][c], big_endian);
    }
  }
  buf[344] = 'n';
  buf[345] = '+';
  buf[346] = '1';
  buf[347] = 0;

  const std::size_t n = values.size();
  std::size_t off = 352;
  buf.resize(off + n * (bitpix / 8));
  for (std::size_t i = 0; i < n; ++i) {
    switch (dtype) {
      case 2:
        buf[off + i] = static_cast<unsigned char>(values[i]);
        break;
      case 4:
        put_value<std::int16_t>(buf, off + 2 * i,
                                static_cast<std::int16_t>(values[i]), big_endian);
        break;
      case 8:
        put_value<std::int32_t>(buf, off + 4 * i,
                                static_cast<std::int32_t>(values[i]), big_endian);
        break;
      case 16:
        put_value<float>(buf, off + 4 * i, static_cast<float>(values[i]), big_endian);
        break;
      case 64:
        put_value<double>(buf, off + 8 * i, values[i], big_endian);
        break;
    }
  }
  return buf;
}

inline void write_file(const std::string& path, const std::vector<unsigned char>& bytes) {
  std::ofstream out(path, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
}

/// Parses a single-file uncompressed NIfTI-1 written by anyone.
inline RefNifti ref_nifti_parse(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::vector<unsigned char> buf((std::istreambuf_iterator<char>(in)),
                                 std::istreambuf_iterator<char>());
  bool big_endian = false;
  if (get_value<std::int32_t>(buf, 0, false) != 348) {
    big_endian = true;
    if (get_value<std::int32_t>(buf, 0, true) != 348) {
      throw std::runtime_error("ref reader: bad header");
    }
  }
  RefNifti out;
  for (int a = 0; a < 3; ++a) {
    out.dims[a] = get_value<std::int16_t>(buf, 42 + 2 * a, big_endian);
    out.pixdim[a] = get_value<float>(buf, 80 + 4 * a, big_endian);
  }
  out.datatype = get_value<std::int16_t>(buf, 70, big_endian);
  out.scl_slope = get_value<float>(buf, 112, big_endian);
  out.scl_inter = get_value<float>(buf, 116, big_endian);
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 4; ++c) {
      out.srow[r][c] = get_value<float>(buf, 280 + 16 * r + 4 * c, big_endian);
    }
  }
  const std::size_t vox_offset =
      static_cast<std::size_t>(get_value<float>(buf, 108, big_endian));
  const std::size_t n =
      std::size_t(out.dims[0]) * out.dims[1] * out.dims[2];
  out.data.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    switch (out.datatype) {
      case 2:
        out.data[i] = buf[vox_offset + i];
        break;
      case 4:
        out.data[i] = get_value<std::int16_t>(buf, vox_offset + 2 * i, big_endian);
        break;
      case 8:
        out.data[i] = get_value<std::int32_t>(buf, vox_offset + 4 * i, big_endian);
        break;
      case 16:
        out.data[i] = get_value<float>(buf, vox_offset + 4 * i, big_endian);
        break;
      case 64:
        out.data[i] = get_value<double>(buf, vox_offset + 8 * i, big_endian);
        break;
      default:
        throw std::runtime_error("ref reader: unexpected datatype");
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Brute-force oracles

/// O(n^2) distance to the nearest seed in world coordinates.
inline std::vector<double> brute_force_distance(
    const csvd::VoxelGrid& geom, const std::vector<std::uint8_t>& seeds) {
  const auto& dims = geom.dims();
  std::vector<std::array<double, 3>> seed_pos;
  for (int k = 0; k < dims[2]; ++k) {
    for (int j = 0; j < dims[1]; ++j) {
      for (int i = 0; i < dims[0]; ++i) {
        if (seeds[geom.linear(i, j, k)]) {
          seed_pos.push_back(geom.affine().apply(i, j, k));
        }
      }
    }
  }
  std::vector<double> out(geom.size(), std::numeric_limits<double>::infinity());
  for (int k = 0; k < dims[2]; ++k) {
    for (int j = 0; j < dims[1]; ++j) {
      for (int i = 0; i < dims[0]; ++i) {
        const auto p = geom.affine().apply(i, j, k);
        double best = std::numeric_limits<double>::infinity();
        for (const auto& s : seed_pos) {
          const double dx = p[0] - s[0], dy = p[1] - s[1], dz = p[2] - s[2];
          best = std::min(best, dx * dx + dy * dy + dz * dz);
        }
        out[geom.linear(i, j, k)] = std::sqrt(best);
      }
    }
  }
  return out;
}

/// BFS flood-fill component partition; label 0 = background, labels start
/// at 1 in discovery (scan) order.
inline std::vector<int> flood_fill_components(const csvd::VoxelGrid& g,
                                              const std::vector<double>& mask,
                                              int connectivity) {
  const auto& dims = g.dims();
  std::vector<std::array<int, 3>> offsets;
  for (int dk = -1; dk <= 1; ++dk) {
    for (int dj = -1; dj <= 1; ++dj) {
      for (int di = -1; di <= 1; ++di) {
        if (di == 0 && dj == 0 && dk == 0) continue;
        const int manhattan = std::abs(di) + std::abs(dj) + std::abs(dk);
        if (connectivity == 6 && manhattan > 1) continue;
        if (connectivity == 18 && manhattan > 2) continue;
        offsets.push_back({di, dj, dk});
      }
    }
  }
  std::vector<int> labels(g.size(), 0);
  int next = 0;
  for (int k = 0; k < dims[2]; ++k) {
    for (int j = 0; j < dims[1]; ++j) {
      for (int i = 0; i < dims[0]; ++i) {
        const std::size_t idx = g.linear(i, j, k);
        if (mask[idx] == 0.0 || labels[idx] != 0) continue;
        ++next;
        std::queue<std::array<int, 3>> frontier;
        frontier.push({i, j, k});
        labels[idx] = next;
        while (!frontier.empty()) {
          const auto [ci, cj, ck] = frontier.front();
          frontier.pop();
          for (const auto& o : offsets) {
            const int ni = ci + o[0], nj = cj + o[1], nk = ck + o[2];
            if (ni < 0 || ni >= dims[0] || nj < 0 || nj >= dims[1] || nk < 0 ||
                nk >= dims[2]) {
              continue;
            }
            const std::size_t nidx = g.linear(ni, nj, nk);
            if (mask[nidx] != 0.0 && labels[nidx] == 0) {
              labels[nidx] = next;
              frontier.push({ni, nj, nk});
            }
          }
        }
      }
    }
  }
  return labels;
}

/// Maximum bipartite matching size by exhaustive recursion (small graphs).
inline int max_matching_size(const std::vector<std::vector<int>>& adj, int n_right) {
  const int n_left = static_cast<int>(adj.size());
  int best = 0;
  std::vector<bool> right_used(n_right, false);
  std::function<void(int, int)> go = [&](int left, int matched) {
    best = std::max(best, matched);
    if (left == n_left) return;
    // upper bound prune
    if (matched + (n_left - left) <= best) return;
    go(left + 1, matched);
    for (int r : adj[left]) {
      if (!right_used[r]) {
        right_used[r] = true;
        go(left + 1, matched + 1);
        right_used[r] = false;
      }
    }
  };
  go(0, 0);
  return best;
}

/// All surface-pair distances checked directly: the NSD oracle.
inline double brute_force_nsd(const csvd::BinaryMask& a, const csvd::BinaryMask& b,
                              double tol) {
  const auto& g = a.grid();
  const auto& dims = g.dims();
  auto surface = [&](const csvd::BinaryMask& m) {
    std::vector<std::array<int, 3>> out;
    static constexpr int off[6][3] = {{-1, 0, 0}, {1, 0, 0},  {0, -1, 0},
                                      {0, 1, 0},  {0, 0, -1}, {0, 0, 1}};
    for (int k = 0; k < dims[2]; ++k) {
      for (int j = 0; j < dims[1]; ++j) {
        for (int i = 0; i < dims[0]; ++i) {
          if (!m.foreground(i, j, k)) continue;
          for (const auto& o : off) {
            const int ni = i + o[0], nj = j + o[1], nk = k + o[2];
            if (ni < 0 || ni >= dims[0] || nj < 0 || nj >= dims[1] || nk < 0 ||
                nk >= dims[2] || !m.foreground(ni, nj, nk)) {
              out.push_back({i, j, k});
              break;
            }
          }
        }
      }
    }
    return out;
  };
  const auto sa = surface(a);
  const auto sb = surface(b);
  if (sa.empty() && sb.empty()) return 1.0;
  if (sa.empty() || sb.empty()) return 0.0;

  auto world = [&](const std::array<int, 3>& v) {
    return g.affine().apply(v[0], v[1], v[2]);
  };
  auto count_close = [&](const std::vector<std::array<int, 3>>& from,
                         const std::vector<std::array<int, 3>>& to) {
    std::size_t n = 0;
    for (const auto& f : from) {
      const auto pf = world(f);
      double best = std::numeric_limits<double>::infinity();
      for (const auto& t : to) {
        const auto pt = world(t);
        const double dx = pf[0] - pt[0], dy = pf[1] - pt[1], dz = pf[2] - pt[2];
        best = std::min(best, std::sqrt(dx * dx + dy * dy + dz * dz));
      }
      n += best <= tol;
    }
    return n;
  };
  return double(count_close(sa, sb) + count_close(sb, sa)) /
         double(sa.size() + sb.size());
}

/// Re-runs the skeleton recurrence with plain loops and reports how far the
/// evaluation stays from every relu kink and pooling tie. Finite-difference
/// probes are only trustworthy when this margin dwarfs the step, because a
/// kink inside the probe interval changes the active branch.
inline double skeleton_kink_margin(const csvd::Tensor4D& p, int iterations) {
  const int C = p.shape[0], D = p.shape[1], H = p.shape[2], W = p.shape[3];
  double margin = 1e300;
  auto pool = [&](const csvd::Tensor4D& in, bool take_max) {
    csvd::Tensor4D out(C, D, H, W);
    for (int c = 0; c < C; ++c) {
      for (int z = 0; z < D; ++z) {
        for (int y = 0; y < H; ++y) {
          for (int x = 0; x < W; ++x) {
            double best = in.at(c, z, y, x);
            for (int dz = -1; dz <= 1; ++dz) {
              for (int dy = -1; dy <= 1; ++dy) {
                for (int dx = -1; dx <= 1; ++dx) {
                  const int zz = z + dz, yy = y + dy, xx = x + dx;
                  if (zz < 0 || zz >= D || yy < 0 || yy >= H || xx < 0 ||
                      xx >= W) {
                    continue;
                  }
                  const double v = in.at(c, zz, yy, xx);
                  best = take_max ? std::max(best, v) : std::min(best, v);
                }
              }
            }
            out.at(c, z, y, x) = best;
            for (int dz = -1; dz <= 1; ++dz) {
              for (int dy = -1; dy <= 1; ++dy) {
                for (int dx = -1; dx <= 1; ++dx) {
                  const int zz = z + dz, yy = y + dy, xx = x + dx;
                  if (zz < 0 || zz >= D || yy < 0 || yy >= H || xx < 0 ||
                      xx >= W) {
                    continue;
                  }
                  const double v = in.at(c, zz, yy, xx);
                  if (v != best) margin = std::min(margin, std::abs(v - best));
                }
              }
            }
          }
        }
      }
    }
    return out;
  };

  csvd::Tensor4D e = p;
  csvd::Tensor4D skel;
  for (int k = 0; k <= iterations; ++k) {
    const csvd::Tensor4D eroded = pool(e, false);
    const csvd::Tensor4D opened = pool(eroded, true);
    csvd::Tensor4D delta(C, D, H, W);
    for (std::size_t i = 0; i < delta.size(); ++i) {
      const double d = e.data[i] - opened.data[i];
      if (d != 0.0) margin = std::min(margin, std::abs(d));
      delta.data[i] = d > 0.0 ? d : 0.0;
    }
    if (k == 0) {
      skel = delta;
    } else {
      for (std::size_t i = 0; i < skel.size(); ++i) {
        const double u = delta.data[i] - skel.data[i] * delta.data[i];
        if (u != 0.0) margin = std::min(margin, std::abs(u));
        skel.data[i] += u > 0.0 ? u : 0.0;
      }
    }
    e = eroded;
  }
  return margin;
}

/// Straight-line evaluation of the gated attention formula: materializes the
/// full Q, K, V tensors first, then combines them, mirroring the equation
/// term by term rather than the implementation's fused loop.
inline csvd::AttentionOutput attention_oracle(const csvd::Tensor4D& f_lac,
                                              const csvd::Tensor4D& f_epvs,
                                              const csvd::AttentionWeights& w) {
  const int C = f_lac.shape[0], D = f_lac.shape[1], H = f_lac.shape[2],
            W = f_lac.shape[3];
  const int R = w.reduced;
  std::vector<csvd::Tensor3D> q, k, v;
  for (int cr = 0; cr < R; ++cr) {
    csvd::Tensor3D qq(D, H, W), kk(D, H, W);
    for (int z = 0; z < D; ++z) {
      for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) {
          double sq = 0.0, sk = 0.0;
          for (int c = 0; c < C; ++c) {
            sq += w.wq[std::size_t(cr) * C + c] * f_lac.at(c, z, y, x);
            sk += w.wk[std::size_t(cr) * C + c] * f_epvs.at(c, z, y, x);
          }
          qq.at(z, y, x) = sq;
          kk.at(z, y, x) = sk;
        }
      }
    }
    q.push_back(std::move(qq));
    k.push_back(std::move(kk));
  }
  for (int c = 0; c < C; ++c) {
    csvd::Tensor3D vv(D, H, W);
    for (int z = 0; z < D; ++z) {
      for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) {
          double s = 0.0;
          for (int c2 = 0; c2 < C; ++c2) {
            s += w.wv[std::size_t(c) * C + c2] * f_epvs.at(c2, z, y, x);
          }
          vv.at(z, y, x) = s;
        }
      }
    }
    v.push_back(std::move(vv));
  }

  csvd::AttentionOutput out;
  out.gate = csvd::Tensor3D(D, H, W);
  out.refined = csvd::Tensor4D(C, D, H, W);
  for (int z = 0; z < D; ++z) {
    for (int y = 0; y < H; ++y) {
      for (int x = 0; x < W; ++x) {
        double dot = 0.0;
        for (int cr = 0; cr < R; ++cr) {
          dot += q[cr].at(z, y, x) * k[cr].at(z, y, x);
        }
        const double gate = 1.0 / (1.0 + std::exp(-dot / std::sqrt(double(R))));
        out.gate.at(z, y, x) = gate;
        for (int c = 0; c < C; ++c) {
          out.refined.at(c, z, y, x) = f_lac.at(c, z, y, x) + gate * v[c].at(z, y, x);
        }
      }
    }
  }
  return out;
}

}  // namespace testutil
