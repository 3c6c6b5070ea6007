// Independent reference implementations used by the tests. They are written
// for clarity and brute force, and share no code with the library beyond the
// grid containers.
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <numeric>
#include <queue>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "resectkit/volgrid.hpp"

namespace oracle {

using rk::BinaryMask;
using rk::GridGeometry;

inline GridGeometry geometry(std::size_t nx, std::size_t ny, std::size_t nz, double sx = 1.0, double sy = 1.0,
                             double sz = 1.0) {
  GridGeometry g;
  g.dims = {nx, ny, nz};
  g.spacing = {sx, sy, sz};
  return g;
}

inline std::set<std::size_t> voxel_set(const BinaryMask& m) {
  std::set<std::size_t> s;
  for (std::size_t i = 0; i < m.size(); ++i) {
    if (m[i]) s.insert(i);
  }
  return s;
}

inline std::size_t intersection_size(const std::set<std::size_t>& a, const std::set<std::size_t>& b) {
  std::vector<std::size_t> out;
  std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out));
  return out.size();
}

/// Random mask with each voxel set with probability `fill`, optionally
/// seeded with a few solid blobs so that boundaries are nontrivial.
inline BinaryMask random_mask(std::mt19937_64& rng, const GridGeometry& g, double fill, int blobs = 0) {
  BinaryMask m(g);
  std::bernoulli_distribution b(fill);
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = b(rng) ? 1 : 0;
  for (int k = 0; k < blobs; ++k) {
    std::uniform_int_distribution<std::size_t> ux(0, g.dims.x - 1), uy(0, g.dims.y - 1), uz(0, g.dims.z - 1);
    std::uniform_int_distribution<int> ur(0, 3);
    const long cx = static_cast<long>(ux(rng)), cy = static_cast<long>(uy(rng)), cz = static_cast<long>(uz(rng));
    const long r = ur(rng);
    for (std::size_t z = 0; z < g.dims.z; ++z) {
      for (std::size_t y = 0; y < g.dims.y; ++y) {
        for (std::size_t x = 0; x < g.dims.x; ++x) {
          const long dx = static_cast<long>(x) - cx, dy = static_cast<long>(y) - cy, dz = static_cast<long>(z) - cz;
          if (dx * dx + dy * dy + dz * dz <= r * r) m.at(x, y, z) = 1;
        }
      }
    }
  }
  return m;
}

/// Linear-interpolated percentile by full sort.
inline double percentile_sorted(std::vector<double> v, double pct) {
  std::sort(v.begin(), v.end());
  const double rank = pct / 100.0 * static_cast<double>(v.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(rank);
  if (lo + 1 >= v.size()) return v.back();
  const double frac = rank - static_cast<double>(lo);
  return v[lo] * (1.0 - frac) + v[lo + 1] * frac;
}

/// Set voxels with an unset 6-neighbour or touching the grid border.
inline std::vector<std::array<long, 3>> boundary(const BinaryMask& m) {
  const auto& d = m.dims();
  std::vector<std::array<long, 3>> out;
  const long n[3] = {static_cast<long>(d.x), static_cast<long>(d.y), static_cast<long>(d.z)};
  const int off[6][3] = {{1, 0, 0}, {-1, 0, 0}, {0, 1, 0}, {0, -1, 0}, {0, 0, 1}, {0, 0, -1}};
  for (long z = 0; z < n[2]; ++z) {
    for (long y = 0; y < n[1]; ++y) {
      for (long x = 0; x < n[0]; ++x) {
        if (!m.at(x, y, z)) continue;
        bool b = false;
        for (const auto& o : off) {
          const long xx = x + o[0], yy = y + o[1], zz = z + o[2];
          if (xx < 0 || yy < 0 || zz < 0 || xx >= n[0] || yy >= n[1] || zz >= n[2] || !m.at(xx, yy, zz)) {
            b = true;
            break;
          }
        }
        if (b) out.push_back({x, y, z});
      }
    }
  }
  return out;
}

/// All-pairs HD95 over boundary voxel centres.
inline double hd95_brute(const BinaryMask& a, const BinaryMask& b) {
  const auto ba = boundary(a);
  const auto bb = boundary(b);
  const auto& sp = a.spacing();
  auto dist = [&](const std::array<long, 3>& p, const std::array<long, 3>& q) {
    const double dx = static_cast<double>(p[0] - q[0]) * sp.x;
    const double dy = static_cast<double>(p[1] - q[1]) * sp.y;
    const double dz = static_cast<double>(p[2] - q[2]) * sp.z;
    return std::sqrt(dx * dx + dy * dy + dz * dz);
  };
  std::vector<double> pooled;
  for (const auto& p : ba) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& q : bb) best = std::min(best, dist(p, q));
    pooled.push_back(best);
  }
  for (const auto& q : bb) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& p : ba) best = std::min(best, dist(p, q));
    pooled.push_back(best);
  }
  return percentile_sorted(pooled, 95.0);
}

/// BFS flood fill; returns per-voxel labels (0 background) numbered by first
/// voxel in linear order, plus sizes.
struct Flood {
  std::vector<int> labels;
  std::vector<std::size_t> sizes;
};

inline Flood flood_components(const BinaryMask& m, int connectivity) {
  const auto& d = m.dims();
  Flood f;
  f.labels.assign(m.size(), 0);
  std::vector<std::array<int, 3>> nb;
  for (int dz = -1; dz <= 1; ++dz) {
    for (int dy = -1; dy <= 1; ++dy) {
      for (int dx = -1; dx <= 1; ++dx) {
        const int manhattan = std::abs(dx) + std::abs(dy) + std::abs(dz);
        if (manhattan == 0) continue;
        if (connectivity == 6 && manhattan != 1) continue;
        nb.push_back({dx, dy, dz});
      }
    }
  }
  int next = 0;
  for (std::size_t start = 0; start < m.size(); ++start) {
    if (!m[start] || f.labels[start]) continue;
    ++next;
    std::size_t count = 0;
    std::queue<std::size_t> q;
    q.push(start);
    f.labels[start] = next;
    while (!q.empty()) {
      const std::size_t i = q.front();
      q.pop();
      ++count;
      const long x = static_cast<long>(i % d.x), y = static_cast<long>((i / d.x) % d.y), z = static_cast<long>(i / (d.x * d.y));
      for (const auto& o : nb) {
        const long xx = x + o[0], yy = y + o[1], zz = z + o[2];
        if (xx < 0 || yy < 0 || zz < 0 || xx >= static_cast<long>(d.x) || yy >= static_cast<long>(d.y) ||
            zz >= static_cast<long>(d.z)) {
          continue;
        }
        const std::size_t j = static_cast<std::size_t>(xx + static_cast<long>(d.x) * (yy + static_cast<long>(d.y) * zz));
        if (m[j] && !f.labels[j]) {
          f.labels[j] = next;
          q.push(j);
        }
      }
    }
    f.sizes.push_back(count);
  }
  return f;
}

/// Maximum total of `score` over all one-to-one matchings of min(r, c) pairs.
inline double best_matching_total(const std::vector<std::vector<double>>& score) {
  const std::size_t r = score.size();
  const std::size_t c = r ? score[0].size() : 0;
  if (r == 0 || c == 0) return 0.0;
  double best = -std::numeric_limits<double>::infinity();
  if (r <= c) {
    std::vector<std::size_t> cols(c);
    std::iota(cols.begin(), cols.end(), 0);
    do {
      double t = 0.0;
      for (std::size_t i = 0; i < r; ++i) t += score[i][cols[i]];
      best = std::max(best, t);
    } while (std::next_permutation(cols.begin(), cols.end()));
  } else {
    std::vector<std::size_t> rows(r);
    std::iota(rows.begin(), rows.end(), 0);
    do {
      double t = 0.0;
      for (std::size_t j = 0; j < c; ++j) t += score[rows[j]][j];
      best = std::max(best, t);
    } while (std::next_permutation(rows.begin(), rows.end()));
  }
  return best;
}

/// Sphere of `radius` mm voxelized by centre inclusion.
inline BinaryMask sphere(const GridGeometry& g, std::array<double, 3> centre_mm, double radius) {
  BinaryMask m(g);
  for (std::size_t z = 0; z < g.dims.z; ++z) {
    for (std::size_t y = 0; y < g.dims.y; ++y) {
      for (std::size_t x = 0; x < g.dims.x; ++x) {
        const double dx = static_cast<double>(x) * g.spacing.x - centre_mm[0];
        const double dy = static_cast<double>(y) * g.spacing.y - centre_mm[1];
        const double dz = static_cast<double>(z) * g.spacing.z - centre_mm[2];
        if (dx * dx + dy * dy + dz * dz <= radius * radius) m.at(x, y, z) = 1;
      }
    }
  }
  return m;
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& name) {
  const auto p = std::filesystem::temp_directory_path() / ("resectkit_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace oracle
