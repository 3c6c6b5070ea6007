// Core 3D grid types shared by every resectkit module.
//
// All grids use one linearization: x fastest, then y, then z
// (index = x + nx * (y + ny * z)). The third axis is treated as axial.
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace rk {

/// Raised when two grids that must share a geometry do not.
class GeometryError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Millimeters per voxel along x, y, z.
struct Spacing {
  double x = 1.0;
  double y = 1.0;
  double z = 1.0;

  bool valid() const {
    return std::isfinite(x) && std::isfinite(y) && std::isfinite(z) && x > 0 && y > 0 && z > 0;
  }
  double operator[](std::size_t axis) const { return axis == 0 ? x : (axis == 1 ? y : z); }
};

struct Dims {
  std::size_t x = 1;
  std::size_t y = 1;
  std::size_t z = 1;

  std::size_t count() const { return x * y * z; }
  std::size_t operator[](std::size_t axis) const { return axis == 0 ? x : (axis == 1 ? y : z); }
  friend bool operator==(const Dims&, const Dims&) = default;
};

using Index3 = std::array<std::size_t, 3>;

inline bool spacing_close(double a, double b) {
  return std::abs(a - b) <= 1e-6 * std::max(std::abs(a), std::abs(b));
}

struct GridGeometry {
  Dims dims;
  Spacing spacing;
  std::array<double, 3> origin{0.0, 0.0, 0.0};

  bool valid() const { return dims.x >= 1 && dims.y >= 1 && dims.z >= 1 && spacing.valid(); }

  std::size_t voxel_count() const { return dims.count(); }

  std::size_t linear(std::size_t x, std::size_t y, std::size_t z) const {
    return x + dims.x * (y + dims.y * z);
  }
  std::size_t linear(const Index3& i) const { return linear(i[0], i[1], i[2]); }

  Index3 coords(std::size_t idx) const {
    const std::size_t x = idx % dims.x;
    const std::size_t rest = idx / dims.x;
    return {x, rest % dims.y, rest / dims.y};
  }

  // Dims must match exactly, spacing to 1e-6 relative. Origin is not compared.
  bool compatible(const GridGeometry& o) const {
    return dims == o.dims && spacing_close(spacing.x, o.spacing.x) &&
           spacing_close(spacing.y, o.spacing.y) && spacing_close(spacing.z, o.spacing.z);
  }

  std::string describe() const {
    std::ostringstream os;
    os << "dims (" << dims.x << "," << dims.y << "," << dims.z << ") spacing (" << spacing.x << ","
       << spacing.y << "," << spacing.z << ") mm";
    return os.str();
  }
};

inline void require_compatible(const GridGeometry& a, const GridGeometry& b, std::string_view what) {
  if (!a.compatible(b)) {
    throw GeometryError(std::string(what) + ": geometry mismatch between [" + a.describe() +
                        "] and [" + b.describe() + "]");
  }
}

/// Dense voxel grid holding one value per voxel in the canonical order.
template <class T>
class Grid {
 public:
  using value_type = T;

  Grid() = default;
  explicit Grid(GridGeometry geometry, T fill = T{})
      : geometry_(std::move(geometry)), data_(geometry_.voxel_count(), fill) {
    if (!geometry_.valid()) throw std::invalid_argument("invalid grid geometry: " + geometry_.describe());
  }
  Grid(GridGeometry geometry, std::vector<T> data) : geometry_(std::move(geometry)), data_(std::move(data)) {
    if (!geometry_.valid()) throw std::invalid_argument("invalid grid geometry: " + geometry_.describe());
    if (data_.size() != geometry_.voxel_count()) {
      throw std::invalid_argument("grid payload has " + std::to_string(data_.size()) +
                                  " values, geometry needs " + std::to_string(geometry_.voxel_count()));
    }
  }

  const GridGeometry& geometry() const { return geometry_; }
  const Dims& dims() const { return geometry_.dims; }
  const Spacing& spacing() const { return geometry_.spacing; }
  std::size_t size() const { return data_.size(); }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }
  T& at(std::size_t x, std::size_t y, std::size_t z) { return data_[geometry_.linear(x, y, z)]; }
  const T& at(std::size_t x, std::size_t y, std::size_t z) const { return data_[geometry_.linear(x, y, z)]; }

  std::vector<T>& data() { return data_; }
  const std::vector<T>& data() const { return data_; }

  void set_origin(const std::array<double, 3>& o) { geometry_.origin = o; }

  friend bool operator==(const Grid& a, const Grid& b) {
    return a.geometry_.compatible(b.geometry_) && a.data_ == b.data_;
  }

 protected:
  GridGeometry geometry_;
  std::vector<T> data_;
};

/// Real-valued volume (MR intensities, difference channels, ...). Values are finite.
class ScalarVolume : public Grid<double> {
 public:
  using Grid<double>::Grid;
};

/// Voxelwise probabilities in [0,1].
class ProbabilityMap : public Grid<double> {
 public:
  ProbabilityMap() = default;
  explicit ProbabilityMap(GridGeometry geometry, double fill = 0.0) : Grid<double>(std::move(geometry), fill) {
    validate();
  }
  ProbabilityMap(GridGeometry geometry, std::vector<double> data)
      : Grid<double>(std::move(geometry), std::move(data)) {
    validate();
  }
  explicit ProbabilityMap(const ScalarVolume& v) : Grid<double>(v.geometry(), v.data()) { validate(); }

  void validate() const {
    for (std::size_t i = 0; i < data_.size(); ++i) {
      const double p = data_[i];
      if (!(p >= 0.0 && p <= 1.0)) {
        throw std::invalid_argument("probability map value " + std::to_string(p) + " at voxel " +
                                    std::to_string(i) + " is outside [0,1]");
      }
    }
  }
};

/// Per-voxel boolean stored as 0/1 bytes.
class BinaryMask : public Grid<std::uint8_t> {
 public:
  using Grid<std::uint8_t>::Grid;

  bool test(std::size_t i) const { return data_[i] != 0; }
  void set(std::size_t i, bool on = true) { data_[i] = on ? 1 : 0; }

  std::size_t count() const {
    return static_cast<std::size_t>(std::count_if(data_.begin(), data_.end(), [](std::uint8_t v) { return v != 0; }));
  }
  bool empty() const {
    return std::none_of(data_.begin(), data_.end(), [](std::uint8_t v) { return v != 0; });
  }
};

enum class StructureKind { Brain, TumorCore, NETC, ResidualTumor, ResectionCavity, SNFH, WholeTumor };

inline constexpr std::array<StructureKind, 7> kAllStructureKinds{
    StructureKind::Brain,           StructureKind::TumorCore, StructureKind::NETC,
    StructureKind::ResidualTumor,   StructureKind::ResectionCavity,
    StructureKind::SNFH,            StructureKind::WholeTumor};

inline std::string_view to_string(StructureKind k) {
  switch (k) {
    case StructureKind::Brain: return "brain";
    case StructureKind::TumorCore: return "tc";
    case StructureKind::NETC: return "netc";
    case StructureKind::ResidualTumor: return "residual";
    case StructureKind::ResectionCavity: return "cavity";
    case StructureKind::SNFH: return "snfh";
    case StructureKind::WholeTumor: return "wt";
  }
  return "unknown";
}

inline StructureKind structure_from_string(std::string_view s) {
  for (auto k : kAllStructureKinds) {
    if (to_string(k) == s) return k;
  }
  if (s == "et") return StructureKind::ResidualTumor;
  throw std::invalid_argument("unknown structure kind '" + std::string(s) + "'");
}

// ---------------------------------------------------------------------------
// Volumes and mask algebra

inline double voxel_volume_ml(const Spacing& s) { return s.x * s.y * s.z / 1000.0; }

inline double mask_volume_ml(const BinaryMask& m) {
  return static_cast<double>(m.count()) * voxel_volume_ml(m.spacing());
}

// Volume comparisons against ml cutoffs. Voxel counts times a non-representable
// per-voxel volume land a few ulps off the cutoff, so a 1e-9 relative slack
// keeps count-exact fixtures on the intended side.
inline bool ml_at_least(double volume_ml, double cutoff_ml) {
  return volume_ml >= cutoff_ml - 1e-9 * std::max(1.0, std::abs(cutoff_ml));
}

enum class MaskOp { Union, Intersect, Subtract };

inline BinaryMask mask_algebra(const BinaryMask& a, const BinaryMask& b, MaskOp op) {
  require_compatible(a.geometry(), b.geometry(), "mask_algebra");
  BinaryMask out(a.geometry());
  const auto& da = a.data();
  const auto& db = b.data();
  auto& o = out.data();
  for (std::size_t i = 0; i < o.size(); ++i) {
    const bool x = da[i] != 0;
    const bool y = db[i] != 0;
    bool r = false;
    switch (op) {
      case MaskOp::Union: r = x || y; break;
      case MaskOp::Intersect: r = x && y; break;
      case MaskOp::Subtract: r = x && !y; break;
    }
    o[i] = r ? 1 : 0;
  }
  return out;
}

inline BinaryMask mask_union(const BinaryMask& a, const BinaryMask& b) { return mask_algebra(a, b, MaskOp::Union); }
inline BinaryMask mask_intersect(const BinaryMask& a, const BinaryMask& b) {
  return mask_algebra(a, b, MaskOp::Intersect);
}
inline BinaryMask mask_subtract(const BinaryMask& a, const BinaryMask& b) {
  return mask_algebra(a, b, MaskOp::Subtract);
}

/// True when every voxel of `a` is also set in `b`.
inline bool mask_subset(const BinaryMask& a, const BinaryMask& b) {
  require_compatible(a.geometry(), b.geometry(), "mask_subset");
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a.test(i) && !b.test(i)) return false;
  }
  return true;
}

inline std::size_t intersection_count(const BinaryMask& a, const BinaryMask& b) {
  require_compatible(a.geometry(), b.geometry(), "intersection_count");
  std::size_t n = 0;
  for (std::size_t i = 0; i < a.size(); ++i) n += (a[i] != 0 && b[i] != 0) ? 1 : 0;
  return n;
}

/// Voxel set iff p(v) >= t.
inline BinaryMask binarize(const ProbabilityMap& p, double t) {
  if (!(t >= 0.0 && t <= 1.0)) throw std::invalid_argument("binarize: threshold " + std::to_string(t) + " outside [0,1]");
  BinaryMask out(p.geometry());
  const auto& d = p.data();
  auto& o = out.data();
  for (std::size_t i = 0; i < d.size(); ++i) o[i] = d[i] >= t ? 1 : 0;
  return out;
}

inline ProbabilityMap mask_to_probability(const BinaryMask& m) {
  std::vector<double> d(m.size());
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = m.test(i) ? 1.0 : 0.0;
  return ProbabilityMap(m.geometry(), std::move(d));
}

// ---------------------------------------------------------------------------
// Axis-aligned boxes in voxel coordinates, half-open [lo, hi).

struct Box {
  Index3 lo{0, 0, 0};
  Index3 hi{0, 0, 0};

  bool empty() const { return hi[0] <= lo[0] || hi[1] <= lo[1] || hi[2] <= lo[2]; }
  Dims extent() const { return {hi[0] - lo[0], hi[1] - lo[1], hi[2] - lo[2]}; }
  friend bool operator==(const Box&, const Box&) = default;

  static Box full(const Dims& d) { return {{0, 0, 0}, {d.x, d.y, d.z}}; }
};

inline Box box_union(const Box& a, const Box& b) {
  if (a.empty()) return b;
  if (b.empty()) return a;
  Box r;
  for (int k = 0; k < 3; ++k) {
    r.lo[k] = std::min(a.lo[k], b.lo[k]);
    r.hi[k] = std::max(a.hi[k], b.hi[k]);
  }
  return r;
}

inline Box box_grow(const Box& b, std::size_t margin, const Dims& d) {
  if (b.empty()) return b;
  Box r;
  for (std::size_t k = 0; k < 3; ++k) {
    r.lo[k] = b.lo[k] > margin ? b.lo[k] - margin : 0;
    r.hi[k] = std::min(b.hi[k] + margin, d[k]);
  }
  return r;
}

/// Bounding box of voxels where `pred(value)` holds; empty box when none do.
template <class T, class Pred>
Box bounding_box(const Grid<T>& g, Pred pred) {
  const Dims& d = g.dims();
  Box b{{d.x, d.y, d.z}, {0, 0, 0}};
  bool any = false;
  std::size_t i = 0;
  for (std::size_t z = 0; z < d.z; ++z) {
    for (std::size_t y = 0; y < d.y; ++y) {
      for (std::size_t x = 0; x < d.x; ++x, ++i) {
        if (!pred(g[i])) continue;
        any = true;
        b.lo[0] = std::min(b.lo[0], x);
        b.hi[0] = std::max(b.hi[0], x + 1);
        b.lo[1] = std::min(b.lo[1], y);
        b.hi[1] = std::max(b.hi[1], y + 1);
        b.lo[2] = std::min(b.lo[2], z);
        b.hi[2] = std::max(b.hi[2], z + 1);
      }
    }
  }
  if (!any) return Box{};
  return b;
}

inline Box mask_bounding_box(const BinaryMask& m) {
  return bounding_box(m, [](std::uint8_t v) { return v != 0; });
}

/// Copies the sub-grid inside `box`; the origin moves to the box corner.
template <class G>
G extract_box(const G& g, const Box& box) {
  const auto& geo = g.geometry();
  GridGeometry out_geo;
  out_geo.dims = box.extent();
  out_geo.spacing = geo.spacing;
  for (std::size_t k = 0; k < 3; ++k) out_geo.origin[k] = geo.origin[k] + static_cast<double>(box.lo[k]) * geo.spacing[k];
  G out(out_geo);
  std::size_t o = 0;
  for (std::size_t z = box.lo[2]; z < box.hi[2]; ++z) {
    for (std::size_t y = box.lo[1]; y < box.hi[1]; ++y) {
      const std::size_t row = geo.linear(box.lo[0], y, z);
      for (std::size_t x = 0; x < out_geo.dims.x; ++x) out[o++] = g[row + x];
    }
  }
  return out;
}

/// Writes `patch` into `target` with its (0,0,0) voxel at `corner`.
template <class G, class P>
void insert_box(G& target, const P& patch, const Index3& corner) {
  const auto& pd = patch.dims();
  for (std::size_t z = 0; z < pd.z; ++z) {
    for (std::size_t y = 0; y < pd.y; ++y) {
      for (std::size_t x = 0; x < pd.x; ++x) {
        target.at(corner[0] + x, corner[1] + y, corner[2] + z) = patch.at(x, y, z);
      }
    }
  }
}

}  // namespace rk
