// Volume I/O: a little-endian NIfTI-1 single-file subset and the "rawj"
// format (JSON sidecar + raw payload). Paths ending in ".gz" are gzip
// compressed; reading accepts compressed and plain streams alike.
#pragma once

#include <zlib.h>

#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>
#include <stdexcept>
#include <string>
#include <vector>

#include "resectkit/volgrid.hpp"

namespace rk {

enum class VolumeFormat { Nifti1, Rawj };
enum class VoxelType { UInt8, Int16, Float32 };

struct VolumeFileMeta {
  std::filesystem::path path;
  VolumeFormat format = VolumeFormat::Nifti1;
  VoxelType datatype = VoxelType::Float32;
  bool compressed = false;
};

enum class IoErrorKind {
  BadMagic,
  UnsupportedDatatype,
  TruncatedPayload,
  NonpositiveSpacing,
  NonFiniteValue,
  BadHeader,
  BigEndian,
  Io,
};

inline const char* to_string(IoErrorKind k) {
  switch (k) {
    case IoErrorKind::BadMagic: return "bad magic";
    case IoErrorKind::UnsupportedDatatype: return "unsupported datatype";
    case IoErrorKind::TruncatedPayload: return "truncated payload";
    case IoErrorKind::NonpositiveSpacing: return "nonpositive voxel dimension";
    case IoErrorKind::NonFiniteValue: return "non-finite voxel value";
    case IoErrorKind::BadHeader: return "malformed header";
    case IoErrorKind::BigEndian: return "big-endian file not supported";
    case IoErrorKind::Io: return "i/o failure";
  }
  return "unknown";
}

class IoError : public std::runtime_error {
 public:
  IoError(IoErrorKind kind, const std::filesystem::path& path, const std::string& detail)
      : std::runtime_error(path.string() + ": " + to_string(kind) + (detail.empty() ? "" : " (" + detail + ")")),
        kind_(kind) {}
  IoErrorKind kind() const { return kind_; }

 private:
  IoErrorKind kind_;
};

namespace detail {

inline bool has_suffix(const std::string& s, std::string_view suf) {
  return s.size() >= suf.size() && s.compare(s.size() - suf.size(), suf.size(), suf) == 0;
}

inline std::vector<std::uint8_t> read_all(const std::filesystem::path& path) {
  gzFile f = gzopen(path.string().c_str(), "rb");
  if (!f) throw IoError(IoErrorKind::Io, path, std::strerror(errno));
  std::vector<std::uint8_t> out;
  std::array<std::uint8_t, 1 << 16> buf{};
  for (;;) {
    const int n = gzread(f, buf.data(), static_cast<unsigned>(buf.size()));
    if (n < 0) {
      int errnum = 0;
      std::string msg = gzerror(f, &errnum);
      gzclose(f);
      throw IoError(IoErrorKind::Io, path, msg);
    }
    if (n == 0) break;
    out.insert(out.end(), buf.begin(), buf.begin() + n);
  }
  gzclose(f);
  return out;
}

// Writes to a sibling temp file and renames it into place.
inline void write_all(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes, bool gzip) {
  auto tmp = path;
  tmp += ".tmp";
  if (gzip) {
    gzFile f = gzopen(tmp.string().c_str(), "wb6");
    if (!f) throw IoError(IoErrorKind::Io, path, std::strerror(errno));
    std::size_t off = 0;
    while (off < bytes.size()) {
      const unsigned chunk = static_cast<unsigned>(std::min<std::size_t>(bytes.size() - off, 1u << 30));
      if (gzwrite(f, bytes.data() + off, chunk) != static_cast<int>(chunk)) {
        int errnum = 0;
        std::string msg = gzerror(f, &errnum);
        gzclose(f);
        throw IoError(IoErrorKind::Io, path, msg);
      }
      off += chunk;
    }
    if (gzclose(f) != Z_OK) throw IoError(IoErrorKind::Io, path, "gzclose failed");
  } else {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError(IoErrorKind::Io, path, std::strerror(errno));
    os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    os.close();
    if (!os) throw IoError(IoErrorKind::Io, path, "write failed");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError(IoErrorKind::Io, path, ec.message());
}

template <class T>
T load_le(const std::uint8_t* p) {
  T v;
  std::memcpy(&v, p, sizeof(T));
  return v;
}

template <class T>
void store_le(std::uint8_t* p, T v) {
  std::memcpy(p, &v, sizeof(T));
}

inline std::size_t voxel_bytes(VoxelType t) {
  switch (t) {
    case VoxelType::UInt8: return 1;
    case VoxelType::Int16: return 2;
    case VoxelType::Float32: return 4;
  }
  return 0;
}

inline std::vector<double> decode_payload(const std::uint8_t* p, std::size_t n, VoxelType t, double slope,
                                          double inter, const std::filesystem::path& path) {
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    double v = 0.0;
    switch (t) {
      case VoxelType::UInt8: v = p[i]; break;
      case VoxelType::Int16: v = load_le<std::int16_t>(p + 2 * i); break;
      case VoxelType::Float32: v = load_le<float>(p + 4 * i); break;
    }
    v = v * slope + inter;
    if (!std::isfinite(v)) throw IoError(IoErrorKind::NonFiniteValue, path, "voxel " + std::to_string(i));
    out[i] = v;
  }
  return out;
}

inline void append_payload(std::vector<std::uint8_t>& bytes, const std::vector<double>& values, VoxelType t) {
  const std::size_t off = bytes.size();
  bytes.resize(off + values.size() * voxel_bytes(t));
  std::uint8_t* p = bytes.data() + off;
  for (std::size_t i = 0; i < values.size(); ++i) {
    switch (t) {
      case VoxelType::UInt8: p[i] = static_cast<std::uint8_t>(values[i]); break;
      case VoxelType::Int16: store_le<std::int16_t>(p + 2 * i, static_cast<std::int16_t>(values[i])); break;
      case VoxelType::Float32: store_le<float>(p + 4 * i, static_cast<float>(values[i])); break;
    }
  }
}

inline void check_host_little_endian() {
  const std::uint16_t probe = 1;
  std::uint8_t b = 0;
  std::memcpy(&b, &probe, 1);
  if (b != 1) throw std::runtime_error("resectkit I/O requires a little-endian host");
}

}  // namespace detail

inline bool is_rawj_path(const std::filesystem::path& p) {
  const auto s = p.string();
  return detail::has_suffix(s, ".rawj");
}

inline bool is_volume_path(const std::filesystem::path& p) {
  const auto s = p.filename().string();
  return detail::has_suffix(s, ".nii") || detail::has_suffix(s, ".nii.gz") || detail::has_suffix(s, ".rawj");
}

/// Strips .nii, .nii.gz or .rawj from a file name.
inline std::string volume_stem(const std::filesystem::path& p) {
  std::string s = p.filename().string();
  for (std::string_view suf : {".nii.gz", ".nii", ".rawj"}) {
    if (detail::has_suffix(s, suf)) return s.substr(0, s.size() - suf.size());
  }
  return s;
}

// ---------------------------------------------------------------------------
// NIfTI-1

namespace nifti {

inline constexpr std::size_t kHeaderSize = 348;
inline constexpr std::size_t kVoxOffset = 352;

inline VoxelType datatype_from_code(std::int16_t code, const std::filesystem::path& path) {
  switch (code) {
    case 2: return VoxelType::UInt8;
    case 4: return VoxelType::Int16;
    case 16: return VoxelType::Float32;
    default: throw IoError(IoErrorKind::UnsupportedDatatype, path, "datatype code " + std::to_string(code));
  }
}

inline std::int16_t code_from_datatype(VoxelType t) {
  switch (t) {
    case VoxelType::UInt8: return 2;
    case VoxelType::Int16: return 4;
    case VoxelType::Float32: return 16;
  }
  return 0;
}

struct Decoded {
  ScalarVolume volume;
  VoxelType datatype;
};

inline Decoded decode(const std::vector<std::uint8_t>& b, const std::filesystem::path& path) {
  using detail::load_le;
  if (b.size() < kHeaderSize) throw IoError(IoErrorKind::BadHeader, path, "file shorter than 348-byte header");
  const auto sizeof_hdr = load_le<std::int32_t>(b.data());
  if (sizeof_hdr != 348) {
    if (__builtin_bswap32(static_cast<std::uint32_t>(sizeof_hdr)) == 348u) {
      throw IoError(IoErrorKind::BigEndian, path, "");
    }
    throw IoError(IoErrorKind::BadHeader, path, "sizeof_hdr " + std::to_string(sizeof_hdr));
  }
  if (std::memcmp(b.data() + 344, "n+1\0", 4) != 0) throw IoError(IoErrorKind::BadMagic, path, "expected n+1");

  std::array<std::int16_t, 8> dim{};
  for (int i = 0; i < 8; ++i) dim[i] = load_le<std::int16_t>(b.data() + 40 + 2 * i);
  if (dim[0] < 1 || dim[0] > 7) throw IoError(IoErrorKind::BadHeader, path, "dim[0] " + std::to_string(dim[0]));
  Dims dims;
  std::array<std::size_t*, 3> dptr{&dims.x, &dims.y, &dims.z};
  for (int k = 0; k < 3; ++k) {
    const int d = k < dim[0] ? dim[k + 1] : 1;
    if (d < 1) throw IoError(IoErrorKind::BadHeader, path, "dim[" + std::to_string(k + 1) + "] " + std::to_string(d));
    *dptr[k] = static_cast<std::size_t>(d);
  }
  for (int k = 3; k < dim[0]; ++k) {
    if (dim[k + 1] > 1) throw IoError(IoErrorKind::BadHeader, path, "more than three non-singleton dimensions");
  }

  const VoxelType dt = datatype_from_code(load_le<std::int16_t>(b.data() + 70), path);

  Spacing sp;
  sp.x = load_le<float>(b.data() + 80);
  sp.y = load_le<float>(b.data() + 84);
  sp.z = load_le<float>(b.data() + 88);
  if (!sp.valid()) throw IoError(IoErrorKind::NonpositiveSpacing, path, "pixdim[1..3]");

  const float vox_offset = load_le<float>(b.data() + 108);
  if (!(vox_offset >= static_cast<float>(kHeaderSize))) {
    throw IoError(IoErrorKind::BadHeader, path, "vox_offset " + std::to_string(vox_offset));
  }
  double slope = load_le<float>(b.data() + 112);
  double inter = load_le<float>(b.data() + 116);
  if (slope == 0.0 || !std::isfinite(slope)) slope = 1.0;
  if (!std::isfinite(inter)) inter = 0.0;

  const auto off = static_cast<std::size_t>(vox_offset);
  const std::size_t n = dims.count();
  const std::size_t need = off + n * detail::voxel_bytes(dt);
  if (b.size() < need) {
    throw IoError(IoErrorKind::TruncatedPayload, path,
                  "need " + std::to_string(need) + " bytes, have " + std::to_string(b.size()));
  }

  GridGeometry geo;
  geo.dims = dims;
  geo.spacing = sp;
  // qoffset_x/y/z
  geo.origin = {load_le<float>(b.data() + 268), load_le<float>(b.data() + 272), load_le<float>(b.data() + 276)};
  for (double& o : geo.origin) {
    if (!std::isfinite(o)) o = 0.0;
  }
  return {ScalarVolume(geo, detail::decode_payload(b.data() + off, n, dt, slope, inter, path)), dt};
}

inline std::vector<std::uint8_t> encode(const GridGeometry& geo, const std::vector<double>& values, VoxelType dt,
                                        double slope = 1.0, double inter = 0.0) {
  using detail::store_le;
  for (std::size_t k = 0; k < 3; ++k) {
    if (geo.dims[k] > 32767) throw std::invalid_argument("NIfTI-1 dimension exceeds 32767");
  }
  std::vector<std::uint8_t> b(kVoxOffset, 0);
  store_le<std::int32_t>(b.data(), 348);
  const std::array<std::int16_t, 8> dim{3,
                                        static_cast<std::int16_t>(geo.dims.x),
                                        static_cast<std::int16_t>(geo.dims.y),
                                        static_cast<std::int16_t>(geo.dims.z),
                                        1, 1, 1, 1};
  for (int i = 0; i < 8; ++i) store_le<std::int16_t>(b.data() + 40 + 2 * i, dim[i]);
  store_le<std::int16_t>(b.data() + 70, code_from_datatype(dt));
  store_le<std::int16_t>(b.data() + 72, static_cast<std::int16_t>(8 * detail::voxel_bytes(dt)));
  const std::array<float, 8> pixdim{1.0f,
                                    static_cast<float>(geo.spacing.x),
                                    static_cast<float>(geo.spacing.y),
                                    static_cast<float>(geo.spacing.z),
                                    0.0f, 0.0f, 0.0f, 0.0f};
  for (int i = 0; i < 8; ++i) store_le<float>(b.data() + 76 + 4 * i, pixdim[i]);
  store_le<float>(b.data() + 108, static_cast<float>(kVoxOffset));
  store_le<float>(b.data() + 112, static_cast<float>(slope));
  store_le<float>(b.data() + 116, static_cast<float>(inter));
  store_le<std::uint8_t>(b.data() + 123, 2);  // xyzt_units: mm
  store_le<float>(b.data() + 268, static_cast<float>(geo.origin[0]));
  store_le<float>(b.data() + 272, static_cast<float>(geo.origin[1]));
  store_le<float>(b.data() + 276, static_cast<float>(geo.origin[2]));
  std::memcpy(b.data() + 344, "n+1\0", 4);
  detail::append_payload(b, values, dt);
  return b;
}

}  // namespace nifti

// ---------------------------------------------------------------------------
// rawj: `<name>.rawj` holds the JSON header; the payload lives next to it in
// `<name>.bin` or, when compressed, `<name>.bin.gz`.

namespace rawj {

inline std::filesystem::path payload_path(const std::filesystem::path& header, bool compressed) {
  auto p = header;
  p.replace_extension(compressed ? ".bin.gz" : ".bin");
  return p;
}

inline const char* dtype_name(VoxelType t) {
  switch (t) {
    case VoxelType::UInt8: return "uint8";
    case VoxelType::Int16: return "int16";
    case VoxelType::Float32: return "float32";
  }
  return "";
}

inline nlohmann::json make_header(const GridGeometry& geo, VoxelType dt) {
  nlohmann::json j;
  j["dims"] = {geo.dims.x, geo.dims.y, geo.dims.z};
  j["spacing_mm"] = {geo.spacing.x, geo.spacing.y, geo.spacing.z};
  j["dtype"] = dtype_name(dt);
  j["order"] = "x-fastest";
  j["endian"] = "little";
  return j;
}

inline nifti::Decoded read(const std::filesystem::path& header_path) {
  std::ifstream is(header_path);
  if (!is) throw IoError(IoErrorKind::Io, header_path, std::strerror(errno));
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::exception& e) {
    throw IoError(IoErrorKind::BadMagic, header_path, std::string("not a JSON header: ") + e.what());
  }
  try {
    if (!j.is_object() || !j.contains("dims") || !j.contains("spacing_mm") || !j.contains("dtype")) {
      throw IoError(IoErrorKind::BadMagic, header_path, "missing dims/spacing_mm/dtype");
    }
    if (j.value("order", "x-fastest") != "x-fastest") throw IoError(IoErrorKind::BadHeader, header_path, "order");
    if (j.value("endian", "little") != "little") throw IoError(IoErrorKind::BigEndian, header_path, "");
    const auto dims = j.at("dims").get<std::vector<long long>>();
    const auto sp = j.at("spacing_mm").get<std::vector<double>>();
    if (dims.size() != 3 || sp.size() != 3) throw IoError(IoErrorKind::BadHeader, header_path, "expected 3 dims");
    for (auto d : dims) {
      if (d < 1) throw IoError(IoErrorKind::BadHeader, header_path, "dims must be >= 1");
    }
    const std::string dtype = j.at("dtype").get<std::string>();
    VoxelType dt;
    if (dtype == "float32") dt = VoxelType::Float32;
    else if (dtype == "uint8") dt = VoxelType::UInt8;
    else if (dtype == "int16") dt = VoxelType::Int16;
    else throw IoError(IoErrorKind::UnsupportedDatatype, header_path, dtype);

    GridGeometry geo;
    geo.dims = {static_cast<std::size_t>(dims[0]), static_cast<std::size_t>(dims[1]), static_cast<std::size_t>(dims[2])};
    geo.spacing = {sp[0], sp[1], sp[2]};
    if (!geo.spacing.valid()) throw IoError(IoErrorKind::NonpositiveSpacing, header_path, "spacing_mm");

    auto payload = payload_path(header_path, false);
    if (!std::filesystem::exists(payload)) payload = payload_path(header_path, true);
    if (!std::filesystem::exists(payload)) throw IoError(IoErrorKind::Io, header_path, "payload file not found");
    const auto bytes = detail::read_all(payload);
    const std::size_t need = geo.dims.count() * detail::voxel_bytes(dt);
    if (bytes.size() < need) {
      throw IoError(IoErrorKind::TruncatedPayload, payload,
                    "need " + std::to_string(need) + " bytes, have " + std::to_string(bytes.size()));
    }
    return {ScalarVolume(geo, detail::decode_payload(bytes.data(), geo.dims.count(), dt, 1.0, 0.0, payload)), dt};
  } catch (const nlohmann::json::exception& e) {
    throw IoError(IoErrorKind::BadHeader, header_path, e.what());
  }
}

inline void write(const std::filesystem::path& header_path, const GridGeometry& geo, const std::vector<double>& values,
                  VoxelType dt, bool compress) {
  std::vector<std::uint8_t> payload;
  payload.reserve(values.size() * detail::voxel_bytes(dt));
  detail::append_payload(payload, values, dt);
  detail::write_all(payload_path(header_path, compress), payload, compress);
  // Drop a stale payload of the other flavour so readers cannot pick it up.
  std::error_code ec;
  std::filesystem::remove(payload_path(header_path, !compress), ec);
  const std::string text = make_header(geo, dt).dump(2) + "\n";
  detail::write_all(header_path, std::vector<std::uint8_t>(text.begin(), text.end()), false);
}

}  // namespace rawj

// ---------------------------------------------------------------------------

inline VolumeFileMeta probe_volume_path(const std::filesystem::path& path) {
  VolumeFileMeta m;
  m.path = path;
  const auto s = path.string();
  if (is_rawj_path(path)) {
    m.format = VolumeFormat::Rawj;
    m.compressed = std::filesystem::exists(rawj::payload_path(path, true)) &&
                   !std::filesystem::exists(rawj::payload_path(path, false));
  } else {
    m.format = VolumeFormat::Nifti1;
    m.compressed = detail::has_suffix(s, ".gz");
  }
  return m;
}

inline ScalarVolume read_volume(const std::filesystem::path& path, VolumeFileMeta* meta = nullptr) {
  detail::check_host_little_endian();
  VolumeFileMeta m = probe_volume_path(path);
  nifti::Decoded dec = m.format == VolumeFormat::Rawj ? rawj::read(path) : nifti::decode(detail::read_all(path), path);
  m.datatype = dec.datatype;
  if (meta) *meta = m;
  return std::move(dec.volume);
}

/// Reads a volume and accepts only {0,1} payloads.
inline BinaryMask read_mask(const std::filesystem::path& path) {
  const ScalarVolume v = read_volume(path);
  BinaryMask m(v.geometry());
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (v[i] != 0.0 && v[i] != 1.0) {
      throw IoError(IoErrorKind::BadHeader, path, "mask voxel " + std::to_string(i) + " is neither 0 nor 1");
    }
    m[i] = v[i] != 0.0 ? 1 : 0;
  }
  return m;
}

inline ProbabilityMap read_probability(const std::filesystem::path& path) {
  const ScalarVolume v = read_volume(path);
  try {
    return ProbabilityMap(v);
  } catch (const std::invalid_argument& e) {
    throw IoError(IoErrorKind::BadHeader, path, e.what());
  }
}

struct WriteOptions {
  /// Only used by rawj; NIfTI compression follows the ".gz" suffix.
  bool compress_rawj = false;
};

inline void write_volume(const Grid<double>& vol, const std::filesystem::path& path, WriteOptions opt = {}) {
  detail::check_host_little_endian();
  if (is_rawj_path(path)) {
    rawj::write(path, vol.geometry(), vol.data(), VoxelType::Float32, opt.compress_rawj);
  } else {
    detail::write_all(path, nifti::encode(vol.geometry(), vol.data(), VoxelType::Float32),
                      detail::has_suffix(path.string(), ".gz"));
  }
}

inline void write_volume(const BinaryMask& mask, const std::filesystem::path& path, WriteOptions opt = {}) {
  detail::check_host_little_endian();
  std::vector<double> values(mask.size());
  for (std::size_t i = 0; i < values.size(); ++i) values[i] = mask.test(i) ? 1.0 : 0.0;
  if (is_rawj_path(path)) {
    rawj::write(path, mask.geometry(), values, VoxelType::UInt8, opt.compress_rawj);
  } else {
    detail::write_all(path, nifti::encode(mask.geometry(), values, VoxelType::UInt8),
                      detail::has_suffix(path.string(), ".gz"));
  }
}

}  // namespace rk
