#pragma once

// Volume and field files: single-file NIfTI-1 (.nii) and raw little-endian
// data with a key=value text sidecar (.raw + .raw.txt). Volumes are written
// as float32; uint8/int16 inputs are normalized to [0,1] on read.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "ddr/error.hpp"
#include "ddr/grid.hpp"

namespace ddr {

static_assert(std::endian::native == std::endian::little, "file I/O assumes a little-endian host");

enum class FileFormat { nifti1, raw };

enum class DiskType : std::int16_t { uint8 = 2, int16 = 4, float32 = 16 };

/// Intensity range before normalization; `applied` is false for float32 data read as-is.
struct Normalization {
  double min = 0.0;
  double max = 0.0;
  bool applied = false;
  bool constant = false;
};

struct LoadedVolume {
  Volume volume;
  DiskType dtype = DiskType::float32;
  Normalization norm;
};

inline FileFormat format_for_path(const std::string& path) {
  const auto ext = std::filesystem::path(path).extension().string();
  if (ext == ".nii") return FileFormat::nifti1;
  if (ext == ".raw") return FileFormat::raw;
  throw IoError("unrecognized volume extension '" + ext + "' in " + path + " (expected .nii or .raw)");
}

inline std::string sidecar_path(const std::string& raw_path) { return raw_path + ".txt"; }

/// "out/disp.nii" -> "out/disp.c1.nii"
inline std::string component_path(const std::string& path, int c) {
  const std::filesystem::path p(path);
  return (p.parent_path() / (p.stem().string() + ".c" + std::to_string(c) + p.extension().string())).string();
}

/// (v - min) / (max - min) in place; a constant image becomes all zeros.
inline Normalization normalize_unit(Volume& v) {
  Normalization n{v.min(), v.max(), true, false};
  if (n.max > n.min) {
    const double range = n.max - n.min;
    for (double& x : v.values()) x = (x - n.min) / range;
  } else {
    n.constant = true;
    for (double& x : v.values()) x = 0.0;
  }
  return n;
}

namespace detail {

inline std::vector<char> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  return std::vector<char>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

inline void write_file(const std::string& path, const std::vector<char>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path);
}

template <class T>
T get(const std::vector<char>& b, std::size_t off) {
  T v;
  std::memcpy(&v, b.data() + off, sizeof(T));
  return v;
}

template <class T>
void put(std::vector<char>& b, std::size_t off, T v) {
  std::memcpy(b.data() + off, &v, sizeof(T));
}

inline std::size_t dtype_size(DiskType t) {
  switch (t) {
    case DiskType::uint8: return 1;
    case DiskType::int16: return 2;
    case DiskType::float32: return 4;
  }
  return 0;
}

inline const char* dtype_name(DiskType t) {
  switch (t) {
    case DiskType::uint8: return "uint8";
    case DiskType::int16: return "int16";
    case DiskType::float32: return "float32";
  }
  return "?";
}

inline LoadedVolume decode_payload(const std::vector<char>& b, std::size_t off, DiskType t, Grid grid,
                                   const std::string& path) {
  const std::size_t n = grid.size();
  const std::size_t need = n * dtype_size(t);
  if (b.size() < off + need)
    throw IoError("truncated payload in " + path + ": need " + std::to_string(need) + " bytes, have " +
                  std::to_string(b.size() > off ? b.size() - off : 0));
  LoadedVolume out{Volume(std::move(grid)), t, {}};
  auto& v = out.volume;
  for (std::size_t i = 0; i < n; ++i) {
    switch (t) {
      case DiskType::uint8: v[i] = static_cast<unsigned char>(b[off + i]); break;
      case DiskType::int16: v[i] = get<std::int16_t>(b, off + 2 * i); break;
      case DiskType::float32: v[i] = get<float>(b, off + 4 * i); break;
    }
  }
  if (t == DiskType::float32) {
    if (!v.all_finite()) throw IoError("non-finite voxel values in " + path);
    out.norm = {v.min(), v.max(), false, v.min() == v.max()};
  } else {
    out.norm = normalize_unit(v);
  }
  return out;
}

inline void append_float32(std::vector<char>& b, const Volume& v) {
  const std::size_t off = b.size();
  b.resize(off + 4 * v.size());
  for (std::size_t i = 0; i < v.size(); ++i) put<float>(b, off + 4 * i, static_cast<float>(v[i]));
}

inline void check_writable_volume(const Volume& v, const std::string& path) {
  for (int a = 0; a < v.rank(); ++a)
    if (v.grid().dim(a) == 0) throw InvalidInput("refusing to write " + path + ": zero-length dimension");
  if (!v.all_finite()) throw InvalidInput("refusing to write " + path + ": non-finite voxel values");
}

// NIfTI-1 single file: 348-byte header, 4 extension bytes, data at 352.
inline constexpr std::size_t kNiftiHeader = 348;
inline constexpr std::size_t kNiftiOffset = 352;

inline std::vector<char> encode_nifti(const Volume& v) {
  std::vector<char> b(kNiftiOffset, 0);
  const Grid& g = v.grid();
  const int r = g.rank();
  put<std::int32_t>(b, 0, static_cast<std::int32_t>(kNiftiHeader));
  put<char>(b, 38, 'r');
  put<std::int16_t>(b, 40, static_cast<std::int16_t>(r));
  // dim[1] is the fastest axis on disk, our last axis.
  for (int i = 1; i <= 7; ++i) {
    const std::int16_t d = i <= r ? static_cast<std::int16_t>(g.dim(r - i)) : 1;
    put<std::int16_t>(b, 40 + 2 * i, d);
  }
  put<std::int16_t>(b, 70, static_cast<std::int16_t>(DiskType::float32));
  put<std::int16_t>(b, 72, 32);
  put<float>(b, 76, 1.0f);
  for (int i = 1; i <= 7; ++i) put<float>(b, 76 + 4 * i, i <= r ? static_cast<float>(g.spacing(r - i)) : 1.0f);
  put<float>(b, 108, static_cast<float>(kNiftiOffset));
  put<float>(b, 112, 1.0f);  // scl_slope
  put<char>(b, 123, 2);      // xyzt_units: mm
  std::memcpy(b.data() + 344, "n+1\0", 4);
  append_float32(b, v);
  return b;
}

inline LoadedVolume decode_nifti(const std::vector<char>& b, const std::string& path) {
  if (b.size() < kNiftiHeader) throw IoError("truncated NIfTI header in " + path);
  const auto hdr = get<std::int32_t>(b, 0);
  if (hdr != static_cast<std::int32_t>(kNiftiHeader)) {
    if (hdr == 0x5C010000)  // 348 byte-swapped
      throw IoError("big-endian NIfTI not supported: " + path);
    throw IoError("bad sizeof_hdr " + std::to_string(hdr) + " in " + path);
  }
  if (std::memcmp(b.data() + 344, "n+1\0", 4) != 0) throw IoError("bad NIfTI magic in " + path + " (need n+1)");
  const int datatype = get<std::int16_t>(b, 70);
  if (datatype != 2 && datatype != 4 && datatype != 16)
    throw IoError("unsupported datatype " + std::to_string(datatype) + " in " + path);
  const int ndim = get<std::int16_t>(b, 40);
  if (ndim < 1 || ndim > 7) throw IoError("bad dim[0] = " + std::to_string(ndim) + " in " + path);
  std::vector<std::size_t> disk_dims;
  std::vector<double> disk_spacing;
  for (int i = 1; i <= ndim; ++i) {
    const int d = get<std::int16_t>(b, 40 + 2 * i);
    if (d < 1) throw IoError("bad dim[" + std::to_string(i) + "] = " + std::to_string(d) + " in " + path);
    if (i > 3) {
      if (d != 1) throw IoError("dim[" + std::to_string(i) + "] = " + std::to_string(d) + " > 1 not supported: " + path);
      continue;
    }
    disk_dims.push_back(static_cast<std::size_t>(d));
    const double s = std::abs(static_cast<double>(get<float>(b, 76 + 4 * i)));
    disk_spacing.push_back(s > 0.0 && std::isfinite(s) ? s : 1.0);
  }
  const double vox = get<float>(b, 108);
  if (!(vox >= static_cast<double>(kNiftiHeader))) throw IoError("bad vox_offset in " + path);
  std::reverse(disk_dims.begin(), disk_dims.end());
  std::reverse(disk_spacing.begin(), disk_spacing.end());
  return decode_payload(b, static_cast<std::size_t>(vox), static_cast<DiskType>(datatype),
                        Grid(disk_dims, disk_spacing), path);
}

inline std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, sep)) out.push_back(item);
  return out;
}

inline std::string join_numbers(const auto& xs) {
  std::ostringstream os;
  os.precision(17);
  for (std::size_t i = 0; i < xs.size(); ++i) os << (i ? "," : "") << xs[i];
  return os.str();
}

inline std::string encode_sidecar(const Grid& g) {
  return "dims=" + join_numbers(g.dims()) + "\nspacing=" + join_numbers(g.spacing()) +
         "\ndtype=float32\nendian=little\n";
}

inline LoadedVolume decode_raw(const std::string& path) {
  const std::string sc = sidecar_path(path);
  std::ifstream in(sc);
  if (!in) throw IoError("missing sidecar " + sc);
  std::vector<std::size_t> dims;
  std::vector<double> spacing;
  DiskType dtype = DiskType::float32;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw IoError("malformed sidecar line '" + line + "' in " + sc);
    const std::string key = line.substr(0, eq), val = line.substr(eq + 1);
    try {
      if (key == "dims") {
        for (const auto& d : split(val, ',')) dims.push_back(std::stoul(d));
      } else if (key == "spacing") {
        for (const auto& s : split(val, ',')) spacing.push_back(std::stod(s));
      } else if (key == "dtype") {
        if (val == "float32") dtype = DiskType::float32;
        else if (val == "int16") dtype = DiskType::int16;
        else if (val == "uint8") dtype = DiskType::uint8;
        else throw IoError("unsupported dtype " + val + " in " + sc);
      } else if (key == "endian") {
        if (val != "little") throw IoError("unsupported endian " + val + " in " + sc);
      } else {
        throw IoError("unknown sidecar key '" + key + "' in " + sc);
      }
    } catch (const std::logic_error&) {
      throw IoError("bad value for '" + key + "' in " + sc);
    }
  }
  if (dims.empty()) throw IoError("sidecar " + sc + " has no dims");
  if (!spacing.empty() && spacing.size() != dims.size()) throw IoError("dims/spacing length mismatch in " + sc);
  for (std::size_t d : dims)
    if (d == 0) throw IoError("zero dim in " + sc);
  const auto bytes = read_file(path);
  Grid g(dims, spacing);
  const std::size_t need = g.size() * dtype_size(dtype);
  if (bytes.size() != need)
    throw IoError("dim mismatch: " + path + " has " + std::to_string(bytes.size()) + " bytes, sidecar dims need " +
                  std::to_string(need));
  return decode_payload(bytes, 0, dtype, std::move(g), path);
}

}  // namespace detail

inline LoadedVolume load_volume(const std::string& path) {
  if (format_for_path(path) == FileFormat::nifti1) return detail::decode_nifti(detail::read_file(path), path);
  return detail::decode_raw(path);
}

inline Volume read_volume(const std::string& path) { return load_volume(path).volume; }

inline void write_volume(const Volume& v, const std::string& path) {
  const FileFormat fmt = format_for_path(path);
  detail::check_writable_volume(v, path);
  if (fmt == FileFormat::nifti1) {
    for (int a = 0; a < v.rank(); ++a)
      if (v.grid().dim(a) > 32767) throw InvalidInput("refusing to write " + path + ": NIfTI dims are limited to 32767");
    detail::write_file(path, detail::encode_nifti(v));
  } else {
    std::vector<char> b;
    detail::append_float32(b, v);
    detail::write_file(path, b);
    const std::string sc = detail::encode_sidecar(v.grid());
    detail::write_file(sidecar_path(path), std::vector<char>(sc.begin(), sc.end()));
  }
}

inline void write_field(const VectorField& f, const std::string& path) {
  format_for_path(path);
  for (int c = 0; c < f.components(); ++c) detail::check_writable_volume(f[c], component_path(path, c));
  for (int c = 0; c < f.components(); ++c) write_volume(f[c], component_path(path, c));
}

inline VectorField read_field(const std::string& path, int components) {
  detail::require(components >= 1 && components <= 3, "read_field: components must be 1, 2 or 3");
  std::vector<Volume> comps;
  for (int c = 0; c < components; ++c) {
    auto lv = load_volume(component_path(path, c));
    if (lv.dtype != DiskType::float32) throw IoError("field component " + component_path(path, c) + " is not float32");
    if (c > 0 && !lv.volume.grid().same_dims(comps[0].grid()))
      throw IoError("dim mismatch between field components of " + path);
    comps.push_back(std::move(lv.volume));
  }
  detail::require(static_cast<int>(comps[0].rank()) == components,
                  "read_field: " + path + " has rank " + std::to_string(comps[0].rank()) + ", not " +
                      std::to_string(components));
  return VectorField(std::move(comps));
}

/// Grows every axis to a multiple of m by replicating the last slice.
inline Volume pad_to_multiple(const Volume& v, std::size_t m) {
  detail::require(m >= 1, "pad_to_multiple: m must be >= 1");
  const Grid& g = v.grid();
  std::vector<std::size_t> dims(g.dims().begin(), g.dims().end());
  for (auto& d : dims) d = (d + m - 1) / m * m;
  Volume out(Grid(dims, std::vector<double>(g.spacing().begin(), g.spacing().end())));
  const auto src = g.ext3();
  detail::for_each_voxel(out.grid(), [&](std::size_t l, std::array<double, 3> p) {
    std::array<std::size_t, 3> q;
    for (int a = 0; a < 3; ++a) q[a] = std::min(static_cast<std::size_t>(p[a]), src[a] - 1);
    out[l] = v[g.index(q[0], q[1], q[2])];
  });
  return out;
}

/// Leading block of `v` with the given dims.
inline Volume crop_to(const Volume& v, const Grid& target) {
  detail::require(target.rank() == v.rank(), "crop_to: rank mismatch");
  for (int a = 0; a < v.rank(); ++a) detail::require(target.dim(a) <= v.grid().dim(a), "crop_to: target is larger");
  Volume out(target);
  detail::for_each_voxel(target, [&](std::size_t l, std::array<double, 3> p) {
    out[l] = v[v.grid().index(static_cast<std::size_t>(p[0]), static_cast<std::size_t>(p[1]),
                              static_cast<std::size_t>(p[2]))];
  });
  return out;
}

inline VectorField crop_to(const VectorField& f, const Grid& target) {
  std::vector<Volume> comps;
  for (int c = 0; c < f.components(); ++c) comps.push_back(crop_to(f[c], target));
  return VectorField(std::move(comps));
}

/// Rounds every value through float32, so results match what a file round trip yields.
inline VectorField quantize_float32(VectorField f) {
  for (int c = 0; c < f.components(); ++c)
    for (double& x : f[c].values()) x = static_cast<float>(x);
  return f;
}

}  // namespace ddr
