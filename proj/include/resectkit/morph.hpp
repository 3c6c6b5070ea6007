// Connected components, boundary extraction and axial extent analysis.
#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "resectkit/volgrid.hpp"

namespace rk {

enum class Connectivity { Six = 6, TwentySix = 26 };

inline Connectivity connectivity_from_int(int c) {
  if (c == 6) return Connectivity::Six;
  if (c == 26) return Connectivity::TwentySix;
  throw std::invalid_argument("connectivity must be 6 or 26, got " + std::to_string(c));
}

/// Component ids are dense 1..count, ordered by each component's smallest
/// linear index. Label 0 is background.
struct ComponentLabeling {
  GridGeometry geometry;
  std::vector<std::uint32_t> labels;
  std::size_t count = 0;
  std::vector<std::size_t> sizes;  // sizes[id - 1]

  std::size_t size_of(std::uint32_t id) const { return sizes.at(id - 1); }
};

namespace detail {

class DisjointSet {
 public:
  std::uint32_t make() {
    parent_.push_back(static_cast<std::uint32_t>(parent_.size()));
    return parent_.back();
  }
  std::uint32_t find(std::uint32_t a) {
    while (parent_[a] != a) {
      parent_[a] = parent_[parent_[a]];
      a = parent_[a];
    }
    return a;
  }
  void unite(std::uint32_t a, std::uint32_t b) {
    a = find(a);
    b = find(b);
    if (a == b) return;
    if (a < b) parent_[b] = a;
    else parent_[a] = b;
  }
  std::size_t size() const { return parent_.size(); }

 private:
  std::vector<std::uint32_t> parent_;
};

struct Offset {
  int dx, dy, dz;
};

// Previously-visited neighbours in raster order.
inline std::vector<Offset> backward_offsets(Connectivity c) {
  std::vector<Offset> out;
  for (int dz = -1; dz <= 0; ++dz) {
    for (int dy = -1; dy <= 1; ++dy) {
      for (int dx = -1; dx <= 1; ++dx) {
        if (dz == 0 && (dy > 0 || (dy == 0 && dx >= 0))) continue;
        const int manhattan = std::abs(dx) + std::abs(dy) + std::abs(dz);
        if (c == Connectivity::Six && manhattan != 1) continue;
        out.push_back({dx, dy, dz});
      }
    }
  }
  return out;
}

}  // namespace detail

/// Two-pass union-find labeling over the mask's bounding box.
inline ComponentLabeling connected_components(const BinaryMask& mask, Connectivity conn = Connectivity::TwentySix) {
  ComponentLabeling out;
  out.geometry = mask.geometry();
  out.labels.assign(mask.size(), 0);
  const Box box = mask_bounding_box(mask);
  if (box.empty()) return out;

  const auto& geo = mask.geometry();
  const auto offsets = detail::backward_offsets(conn);
  detail::DisjointSet ds;
  ds.make();  // provisional label 0 is background
  std::vector<std::uint32_t> provisional(mask.size(), 0);

  for (std::size_t z = box.lo[2]; z < box.hi[2]; ++z) {
    for (std::size_t y = box.lo[1]; y < box.hi[1]; ++y) {
      for (std::size_t x = box.lo[0]; x < box.hi[0]; ++x) {
        const std::size_t i = geo.linear(x, y, z);
        if (!mask.test(i)) continue;
        std::uint32_t label = 0;
        for (const auto& o : offsets) {
          const auto nx = static_cast<std::ptrdiff_t>(x) + o.dx;
          const auto ny = static_cast<std::ptrdiff_t>(y) + o.dy;
          const auto nz = static_cast<std::ptrdiff_t>(z) + o.dz;
          if (nx < static_cast<std::ptrdiff_t>(box.lo[0]) || nx >= static_cast<std::ptrdiff_t>(box.hi[0]) ||
              ny < static_cast<std::ptrdiff_t>(box.lo[1]) || ny >= static_cast<std::ptrdiff_t>(box.hi[1]) ||
              nz < static_cast<std::ptrdiff_t>(box.lo[2])) {
            continue;
          }
          const std::uint32_t nl = provisional[geo.linear(static_cast<std::size_t>(nx), static_cast<std::size_t>(ny),
                                                          static_cast<std::size_t>(nz))];
          if (nl == 0) continue;
          if (label == 0) label = nl;
          else ds.unite(label, nl);
        }
        if (label == 0) label = ds.make();
        provisional[i] = label;
      }
    }
  }

  // Final ids follow first appearance in raster order.
  std::vector<std::uint32_t> final_id(ds.size(), 0);
  for (std::size_t z = box.lo[2]; z < box.hi[2]; ++z) {
    for (std::size_t y = box.lo[1]; y < box.hi[1]; ++y) {
      for (std::size_t x = box.lo[0]; x < box.hi[0]; ++x) {
        const std::size_t i = geo.linear(x, y, z);
        if (provisional[i] == 0) continue;
        const std::uint32_t root = ds.find(provisional[i]);
        if (final_id[root] == 0) {
          final_id[root] = static_cast<std::uint32_t>(++out.count);
          out.sizes.push_back(0);
        }
        const std::uint32_t id = final_id[root];
        out.labels[i] = id;
        ++out.sizes[id - 1];
      }
    }
  }
  return out;
}

/// Keeps components with at least `min_voxels` voxels.
inline BinaryMask filter_components(const ComponentLabeling& lab, std::size_t min_voxels) {
  BinaryMask out(lab.geometry);
  for (std::size_t i = 0; i < lab.labels.size(); ++i) {
    const auto id = lab.labels[i];
    if (id != 0 && lab.sizes[id - 1] >= min_voxels) out[i] = 1;
  }
  return out;
}

inline BinaryMask component_mask(const ComponentLabeling& lab, std::uint32_t id) {
  BinaryMask out(lab.geometry);
  for (std::size_t i = 0; i < lab.labels.size(); ++i) out[i] = lab.labels[i] == id ? 1 : 0;
  return out;
}

/// Id of the component with the most voxels (lowest id on ties); 0 when empty.
inline std::uint32_t largest_component(const ComponentLabeling& lab) {
  std::uint32_t best = 0;
  std::size_t best_size = 0;
  for (std::size_t k = 0; k < lab.count; ++k) {
    if (lab.sizes[k] > best_size) {
      best_size = lab.sizes[k];
      best = static_cast<std::uint32_t>(k + 1);
    }
  }
  return best;
}

namespace detail {

// A set voxel is on the boundary when one of its 6-neighbours is outside
// the set or outside the grid.
template <class InSet>
bool is_boundary_voxel(const GridGeometry& geo, std::size_t x, std::size_t y, std::size_t z, InSet&& in_set) {
  const Dims& d = geo.dims;
  if (x == 0 || y == 0 || z == 0 || x + 1 == d.x || y + 1 == d.y || z + 1 == d.z) return true;
  const std::size_t i = geo.linear(x, y, z);
  const std::size_t sy = d.x;
  const std::size_t sz = d.x * d.y;
  return !in_set(i - 1) || !in_set(i + 1) || !in_set(i - sy) || !in_set(i + sy) || !in_set(i - sz) ||
         !in_set(i + sz);
}

/// Boundary voxels (linear indices, ascending) of the set defined by
/// `in_set`, scanning only `box`, which must contain the whole set.
template <class InSet>
std::vector<std::size_t> boundary_indices(const GridGeometry& geo, const Box& box, InSet&& in_set) {
  std::vector<std::size_t> out;
  if (box.empty()) return out;
  for (std::size_t z = box.lo[2]; z < box.hi[2]; ++z) {
    for (std::size_t y = box.lo[1]; y < box.hi[1]; ++y) {
      for (std::size_t x = box.lo[0]; x < box.hi[0]; ++x) {
        const std::size_t i = geo.linear(x, y, z);
        if (in_set(i) && is_boundary_voxel(geo, x, y, z, in_set)) out.push_back(i);
      }
    }
  }
  return out;
}

}  // namespace detail

/// Set voxels with at least one unset 6-neighbour or lying on the grid border.
inline std::vector<Index3> boundary_voxels(const BinaryMask& mask) {
  const auto& geo = mask.geometry();
  const auto idx =
      detail::boundary_indices(geo, mask_bounding_box(mask), [&](std::size_t i) { return mask.test(i); });
  std::vector<Index3> out;
  out.reserve(idx.size());
  for (auto i : idx) out.push_back(geo.coords(i));
  return out;
}

/// Longest run of consecutive z slices intersected by each component, by id - 1.
inline std::vector<std::size_t> axial_run_lengths(const ComponentLabeling& lab) {
  const Dims& d = lab.geometry.dims;
  std::vector<std::size_t> best(lab.count, 0);
  std::vector<std::size_t> current(lab.count, 0);
  std::vector<std::uint8_t> present(lab.count, 0);
  const std::size_t slice = d.x * d.y;
  for (std::size_t z = 0; z < d.z; ++z) {
    std::fill(present.begin(), present.end(), 0);
    const std::size_t base = z * slice;
    for (std::size_t k = 0; k < slice; ++k) {
      const auto id = lab.labels[base + k];
      if (id != 0) present[id - 1] = 1;
    }
    for (std::size_t c = 0; c < lab.count; ++c) {
      current[c] = present[c] ? current[c] + 1 : 0;
      best[c] = std::max(best[c], current[c]);
    }
  }
  return best;
}

inline std::size_t axial_run_length(const ComponentLabeling& lab, std::uint32_t component_id) {
  if (component_id == 0 || component_id > lab.count) {
    throw std::out_of_range("axial_run_length: component id " + std::to_string(component_id) + " not in 1.." +
                            std::to_string(lab.count));
  }
  const Dims& d = lab.geometry.dims;
  const std::size_t slice = d.x * d.y;
  std::size_t best = 0;
  std::size_t run = 0;
  for (std::size_t z = 0; z < d.z; ++z) {
    const auto first = lab.labels.begin() + static_cast<std::ptrdiff_t>(z * slice);
    const bool hit = std::find(first, first + static_cast<std::ptrdiff_t>(slice), component_id) != first + static_cast<std::ptrdiff_t>(slice);
    run = hit ? run + 1 : 0;
    best = std::max(best, run);
  }
  return best;
}

}  // namespace rk
