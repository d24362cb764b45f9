#include "csvd/nifti.hpp"

#include <zlib.h>

#include <cmath>
#include <cstdio>
#include <cstring>
#include <sstream>
#include <stdexcept>
#include <vector>

namespace csvd {
namespace {

#pragma pack(push, 1)
struct NiftiHeader {
  std::int32_t sizeof_hdr;
  char data_type[10];
  char db_name[18];
  std::int32_t extents;
  std::int16_t session_error;
  char regular;
  char dim_info;
  std::int16_t dim[8];
  float intent_p1;
  float intent_p2;
  float intent_p3;
  std::int16_t intent_code;
  std::int16_t datatype;
  std::int16_t bitpix;
  std::int16_t slice_start;
  float pixdim[8];
  float vox_offset;
  float scl_slope;
  float scl_inter;
  std::int16_t slice_end;
  char slice_code;
  char xyzt_units;
  float cal_max;
  float cal_min;
  float slice_duration;
  float toffset;
  std::int32_t glmax;
  std::int32_t glmin;
  char descrip[80];
  char aux_file[24];
  std::int16_t qform_code;
  std::int16_t sform_code;
  float quatern_b;
  float quatern_c;
  float quatern_d;
  float qoffset_x;
  float qoffset_y;
  float qoffset_z;
  float srow_x[4];
  float srow_y[4];
  float srow_z[4];
  char intent_name[16];
  char magic[4];
};
#pragma pack(pop)

static_assert(sizeof(NiftiHeader) == 348, "NIfTI-1 header must be 348 bytes");

template <typename T>
void swap_bytes(T& value) {
  auto* p = reinterpret_cast<unsigned char*>(&value);
  for (std::size_t i = 0; i < sizeof(T) / 2; ++i) {
    std::swap(p[i], p[sizeof(T) - 1 - i]);
  }
}

void swap_header(NiftiHeader& h) {
  swap_bytes(h.sizeof_hdr);
  swap_bytes(h.extents);
  swap_bytes(h.session_error);
  for (auto& d : h.dim) swap_bytes(d);
  swap_bytes(h.intent_p1);
  swap_bytes(h.intent_p2);
  swap_bytes(h.intent_p3);
  swap_bytes(h.intent_code);
  swap_bytes(h.datatype);
  swap_bytes(h.bitpix);
  swap_bytes(h.slice_start);
  for (auto& p : h.pixdim) swap_bytes(p);
  swap_bytes(h.vox_offset);
  swap_bytes(h.scl_slope);
  swap_bytes(h.scl_inter);
  swap_bytes(h.slice_end);
  swap_bytes(h.cal_max);
  swap_bytes(h.cal_min);
  swap_bytes(h.slice_duration);
  swap_bytes(h.toffset);
  swap_bytes(h.glmax);
  swap_bytes(h.glmin);
  swap_bytes(h.qform_code);
  swap_bytes(h.sform_code);
  swap_bytes(h.quatern_b);
  swap_bytes(h.quatern_c);
  swap_bytes(h.quatern_d);
  swap_bytes(h.qoffset_x);
  swap_bytes(h.qoffset_y);
  swap_bytes(h.qoffset_z);
  for (auto& v : h.srow_x) swap_bytes(v);
  for (auto& v : h.srow_y) swap_bytes(v);
  for (auto& v : h.srow_z) swap_bytes(v);
}

class GzReader {
 public:
  explicit GzReader(const std::string& path) {
    // zlib reads plain files transparently, so one path covers .nii and .nii.gz
    file_ = gzopen(path.c_str(), "rb");
    if (file_ == nullptr) {
      throw std::runtime_error("cannot open file: " + path);
    }
  }
  ~GzReader() {
    if (file_ != nullptr) gzclose(file_);
  }
  GzReader(const GzReader&) = delete;
  GzReader& operator=(const GzReader&) = delete;

  void read_exact(void* dst, std::size_t n, const std::string& what) {
    auto* p = static_cast<unsigned char*>(dst);
    while (n > 0) {
      const unsigned chunk =
          n > (1u << 30) ? (1u << 30) : static_cast<unsigned>(n);
      const int got = gzread(file_, p, chunk);
      if (got <= 0) {
        throw std::runtime_error("truncated or corrupt file while reading " + what);
      }
      p += got;
      n -= static_cast<std::size_t>(got);
    }
  }

  void skip(std::size_t n) {
    std::vector<unsigned char> junk(4096);
    while (n > 0) {
      const std::size_t chunk = n < junk.size() ? n : junk.size();
      read_exact(junk.data(), chunk, "header padding");
      n -= chunk;
    }
  }

 private:
  gzFile file_ = nullptr;
};

class GzWriter {
 public:
  GzWriter(const std::string& path, bool compress) {
    file_ = gzopen(path.c_str(), compress ? "wb6" : "wbT");
    if (file_ == nullptr) {
      throw std::runtime_error("cannot open file for writing: " + path);
    }
  }
  ~GzWriter() {
    if (file_ != nullptr) gzclose(file_);
  }
  GzWriter(const GzWriter&) = delete;
  GzWriter& operator=(const GzWriter&) = delete;

  void write(const void* src, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(src);
    while (n > 0) {
      const unsigned chunk =
          n > (1u << 30) ? (1u << 30) : static_cast<unsigned>(n);
      if (gzwrite(file_, p, chunk) != static_cast<int>(chunk)) {
        throw std::runtime_error("write failed (disk full or unwritable path?)");
      }
      p += chunk;
      n -= chunk;
    }
  }

 private:
  gzFile file_ = nullptr;
};

int bitpix_for(NiftiDataType t) {
  switch (t) {
    case NiftiDataType::Uint8:
      return 8;
    case NiftiDataType::Int16:
      return 16;
    case NiftiDataType::Int32:
    case NiftiDataType::Float32:
      return 32;
    case NiftiDataType::Float64:
      return 64;
  }
  throw std::invalid_argument("unsupported datum type");
}

Affine affine_from_quaternion(const NiftiHeader& h) {
  double b = h.quatern_b, c = h.quatern_c, d = h.quatern_d;
  double a2 = 1.0 - (b * b + c * c + d * d);
  const double a = a2 > 0.0 ? std::sqrt(a2) : 0.0;
  const double qfac = h.pixdim[0] < 0.0f ? -1.0 : 1.0;
  const double sx = h.pixdim[1], sy = h.pixdim[2], sz = h.pixdim[3] * qfac;

  Affine out;
  out(0, 0) = (a * a + b * b - c * c - d * d) * sx;
  out(0, 1) = (2 * b * c - 2 * a * d) * sy;
  out(0, 2) = (2 * b * d + 2 * a * c) * sz;
  out(1, 0) = (2 * b * c + 2 * a * d) * sx;
  out(1, 1) = (a * a + c * c - b * b - d * d) * sy;
  out(1, 2) = (2 * c * d - 2 * a * b) * sz;
  out(2, 0) = (2 * b * d - 2 * a * c) * sx;
  out(2, 1) = (2 * c * d + 2 * a * b) * sy;
  out(2, 2) = (a * a + d * d - b * b - c * c) * sz;
  out(0, 3) = h.qoffset_x;
  out(1, 3) = h.qoffset_y;
  out(2, 3) = h.qoffset_z;
  return out;
}

template <typename T>
void convert_payload(const std::vector<unsigned char>& raw, bool swap,
                     std::vector<double>& out) {
  const std::size_t n = raw.size() / sizeof(T);
  out.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    T v;
    std::memcpy(&v, raw.data() + i * sizeof(T), sizeof(T));
    if (swap) swap_bytes(v);
    out[i] = static_cast<double>(v);
  }
}

}  // namespace

VoxelGrid load_volume(const std::string& path) {
  GzReader in(path);

  NiftiHeader h{};
  in.read_exact(&h, sizeof(h), "header");

  bool swap = false;
  if (h.sizeof_hdr != 348) {
    swap_header(h);
    swap = true;
    if (h.sizeof_hdr != 348) {
      throw std::runtime_error("malformed header in " + path +
                               " (sizeof_hdr is not 348 in either byte order)");
    }
  }
  if (std::strncmp(h.magic, "n+1", 3) != 0) {
    if (std::strncmp(h.magic, "ni1", 3) == 0) {
      throw std::runtime_error("two-file .hdr/.img pairs are not supported: " + path);
    }
    throw std::runtime_error("malformed header in " + path + " (bad magic)");
  }

  if (h.dim[0] < 3 || h.dim[0] > 7) {
    std::ostringstream os;
    os << "not a 3D image: " << path << " has dim[0]=" << h.dim[0];
    throw std::runtime_error(os.str());
  }
  for (int a = h.dim[0]; a > 3; --a) {
    if (h.dim[a] > 1) {
      std::ostringstream os;
      os << "not a 3D image: " << path << " has " << h.dim[a]
         << " samples along axis " << a;
      throw std::runtime_error(os.str());
    }
  }
  const std::int64_t nx = h.dim[1], ny = h.dim[2], nz = h.dim[3];
  if (nx < 1 || ny < 1 || nz < 1) {
    std::ostringstream os;
    os << "invalid dimensions in " << path << ": (" << nx << ", " << ny << ", "
       << nz << ")";
    throw std::runtime_error(os.str());
  }
  const std::int64_t count = nx * ny * nz;
  if (count > (std::int64_t(1) << 31)) {
    throw std::runtime_error("dimension overflow: volume too large in " + path);
  }

  NiftiDataType dtype;
  switch (h.datatype) {
    case 2:
      dtype = NiftiDataType::Uint8;
      break;
    case 4:
      dtype = NiftiDataType::Int16;
      break;
    case 8:
      dtype = NiftiDataType::Int32;
      break;
    case 16:
      dtype = NiftiDataType::Float32;
      break;
    case 64:
      dtype = NiftiDataType::Float64;
      break;
    default: {
      std::ostringstream os;
      os << "unsupported datum type " << h.datatype << " in " << path;
      throw std::runtime_error(os.str());
    }
  }
  const std::size_t elem = static_cast<std::size_t>(bitpix_for(dtype)) / 8;

  if (h.vox_offset < 348.0f || !std::isfinite(h.vox_offset)) {
    throw std::runtime_error("malformed header in " + path + " (bad vox_offset)");
  }
  in.skip(static_cast<std::size_t>(h.vox_offset) - sizeof(NiftiHeader));

  std::vector<unsigned char> raw(static_cast<std::size_t>(count) * elem);
  in.read_exact(raw.data(), raw.size(), "voxel data");

  std::vector<double> data;
  switch (dtype) {
    case NiftiDataType::Uint8:
      convert_payload<std::uint8_t>(raw, swap, data);
      break;
    case NiftiDataType::Int16:
      convert_payload<std::int16_t>(raw, swap, data);
      break;
    case NiftiDataType::Int32:
      convert_payload<std::int32_t>(raw, swap, data);
      break;
    case NiftiDataType::Float32:
      convert_payload<float>(raw, swap, data);
      break;
    case NiftiDataType::Float64:
      convert_payload<double>(raw, swap, data);
      break;
  }

  // Scaling convention: slope 0 means "no scaling stored".
  if (std::isfinite(h.scl_slope) && h.scl_slope != 0.0f &&
      !(h.scl_slope == 1.0f && h.scl_inter == 0.0f)) {
    const double slope = h.scl_slope, inter = h.scl_inter;
    for (double& v : data) v = v * slope + inter;
  }

  Affine affine;
  if (h.sform_code > 0) {
    for (int c = 0; c < 4; ++c) {
      affine(0, c) = h.srow_x[c];
      affine(1, c) = h.srow_y[c];
      affine(2, c) = h.srow_z[c];
    }
  } else if (h.qform_code > 0) {
    affine = affine_from_quaternion(h);
  } else {
    // No orientation stored; fall back to spacing only.
    affine = Affine::from_spacing({std::abs(h.pixdim[1]) > 0 ? double(h.pixdim[1]) : 1.0,
                                   std::abs(h.pixdim[2]) > 0 ? double(h.pixdim[2]) : 1.0,
                                   std::abs(h.pixdim[3]) > 0 ? double(h.pixdim[3]) : 1.0});
    std::fprintf(stderr,
                 "warning: %s carries neither sform nor qform; "
                 "using a spacing-only affine\n",
                 path.c_str());
  }

  // Spacing from the affine keeps the column-norm invariant exact even when
  // pixdim and the sform disagree slightly.
  const auto spacing = affine.column_norms();
  for (int c = 0; c < 3; ++c) {
    if (!(spacing[c] > 0.0)) {
      throw std::runtime_error("malformed header in " + path +
                               " (degenerate affine column)");
    }
  }

  return VoxelGrid({static_cast<int>(nx), static_cast<int>(ny), static_cast<int>(nz)},
                   spacing, affine, std::move(data));
}

void save_volume(const VoxelGrid& grid, const std::string& path,
                 NiftiDataType dtype) {
  NiftiHeader h{};
  h.sizeof_hdr = 348;
  h.regular = 'r';
  h.dim[0] = 3;
  h.dim[1] = static_cast<std::int16_t>(grid.dims()[0]);
  h.dim[2] = static_cast<std::int16_t>(grid.dims()[1]);
  h.dim[3] = static_cast<std::int16_t>(grid.dims()[2]);
  for (int a = 4; a < 8; ++a) h.dim[a] = 1;
  if (grid.dims()[0] > 32767 || grid.dims()[1] > 32767 || grid.dims()[2] > 32767) {
    throw std::runtime_error("dimension overflow: NIfTI-1 stores dims as int16");
  }
  h.datatype = static_cast<std::int16_t>(dtype);
  h.bitpix = static_cast<std::int16_t>(bitpix_for(dtype));
  h.pixdim[0] = 1.0f;
  for (int a = 0; a < 3; ++a) {
    h.pixdim[a + 1] = static_cast<float>(grid.spacing()[a]);
  }
  h.vox_offset = 352.0f;
  h.scl_slope = 1.0f;
  h.scl_inter = 0.0f;
  h.xyzt_units = 2;  // millimetres
  std::snprintf(h.descrip, sizeof(h.descrip), "csvd toolkit");
  h.qform_code = 0;
  h.sform_code = 1;
  for (int c = 0; c < 4; ++c) {
    h.srow_x[c] = static_cast<float>(grid.affine()(0, c));
    h.srow_y[c] = static_cast<float>(grid.affine()(1, c));
    h.srow_z[c] = static_cast<float>(grid.affine()(2, c));
  }
  std::memcpy(h.magic, "n+1", 4);

  const bool compress =
      path.size() >= 3 && path.compare(path.size() - 3, 3, ".gz") == 0;
  GzWriter out(path, compress);
  out.write(&h, sizeof(h));
  const char pad[4] = {0, 0, 0, 0};
  out.write(pad, 4);

  const std::vector<double>& data = grid.data();
  switch (dtype) {
    case NiftiDataType::Uint8: {
      std::vector<std::uint8_t> buf(data.size());
      for (std::size_t i = 0; i < data.size(); ++i) {
        buf[i] = static_cast<std::uint8_t>(data[i]);
      }
      out.write(buf.data(), buf.size());
      break;
    }
    case NiftiDataType::Int16: {
      std::vector<std::int16_t> buf(data.size());
      for (std::size_t i = 0; i < data.size(); ++i) {
        buf[i] = static_cast<std::int16_t>(data[i]);
      }
      out.write(buf.data(), buf.size() * 2);
      break;
    }
    case NiftiDataType::Int32: {
      std::vector<std::int32_t> buf(data.size());
      for (std::size_t i = 0; i < data.size(); ++i) {
        buf[i] = static_cast<std::int32_t>(data[i]);
      }
      out.write(buf.data(), buf.size() * 4);
      break;
    }
    case NiftiDataType::Float32: {
      std::vector<float> buf(data.size());
      for (std::size_t i = 0; i < data.size(); ++i) {
        buf[i] = static_cast<float>(data[i]);
      }
      out.write(buf.data(), buf.size() * 4);
      break;
    }
    case NiftiDataType::Float64:
      out.write(data.data(), data.size() * 8);
      break;
  }
}

}  // namespace csvd
