// Deterministic synthetic pre/postoperative phantoms with closed-form
// ground-truth volumes.
//
// Geometry (all in mm, voxel centre i sits at i * spacing):
//   brain   ellipsoid centred on the grid
//   TC      sphere of tumor_radius around tumor_center
//   NETC    inner sphere of tumor_radius - rim_thickness
//   SNFH    shell tumor_radius < r <= tumor_radius + edema_thickness, clipped to the brain
//   cavity  (postop) sphere of cavity_radius around tumor_center
//   residual (postop) part of the shell cavity_radius < r <= tumor_radius inside a
//           polar cap around +x covering residual_fraction of the full solid angle
//
// Noise comes from a counter-based generator (SplitMix64 of seed, channel and
// voxel index), so any voxel can be regenerated independently.
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <numbers>
#include <nlohmann/json.hpp>
#include <stdexcept>
#include <string>
#include <vector>

#include "resectkit/refine.hpp"
#include "resectkit/volgrid.hpp"

namespace rk {

inline constexpr std::array<const char*, 4> kSequenceTags{"t1c", "t1w", "t2f", "t2w"};

struct PhantomSpec {
  std::uint64_t seed = 1;
  Dims dims{128, 128, 128};
  Spacing spacing{1.0, 1.0, 1.0};
  std::array<double, 3> brain_semi_axes_mm{55.0, 60.0, 50.0};
  std::array<double, 3> tumor_center_mm{81.3, 70.6, 66.2};
  double tumor_radius_mm = 10.0;
  double rim_thickness_mm = 3.0;
  double edema_thickness_mm = 5.0;
  double cavity_radius_mm = 6.0;
  double residual_fraction = 0.0;
  double noise_amplitude = 0.0;

  std::array<double, 3> brain_center_mm() const {
    return {0.5 * static_cast<double>(dims.x - 1) * spacing.x, 0.5 * static_cast<double>(dims.y - 1) * spacing.y,
            0.5 * static_cast<double>(dims.z - 1) * spacing.z};
  }

  void validate() const {
    if (dims.x < 1 || dims.y < 1 || dims.z < 1 || !spacing.valid()) throw std::invalid_argument("phantom: invalid grid");
    for (double a : brain_semi_axes_mm) {
      if (!(a > 0.0)) throw std::invalid_argument("phantom: brain semi-axes must be > 0");
    }
    if (!(tumor_radius_mm > 0.0)) throw std::invalid_argument("phantom: tumor radius must be > 0");
    if (!(rim_thickness_mm > 0.0 && rim_thickness_mm <= tumor_radius_mm)) {
      throw std::invalid_argument("phantom: rim thickness must lie in (0, tumor radius]");
    }
    if (!(edema_thickness_mm >= 0.0)) throw std::invalid_argument("phantom: edema thickness must be >= 0");
    if (!(cavity_radius_mm > 0.0 && cavity_radius_mm < tumor_radius_mm)) {
      throw std::invalid_argument("phantom: cavity radius must lie in (0, tumor radius)");
    }
    if (!(residual_fraction >= 0.0 && residual_fraction <= 1.0)) throw std::invalid_argument("phantom: residual fraction must lie in [0,1]");
    if (!(noise_amplitude >= 0.0)) throw std::invalid_argument("phantom: noise amplitude must be >= 0");
    // The tumor sphere must sit inside the brain ellipsoid; checking the
    // sphere against the inscribed ball of the ellipsoid is sufficient.
    const auto bc = brain_center_mm();
    const double dx = tumor_center_mm[0] - bc[0], dy = tumor_center_mm[1] - bc[1], dz = tumor_center_mm[2] - bc[2];
    const double off = std::sqrt(dx * dx + dy * dy + dz * dz);
    const double inner = std::min({brain_semi_axes_mm[0], brain_semi_axes_mm[1], brain_semi_axes_mm[2]});
    if (off + tumor_radius_mm > inner) throw std::invalid_argument("phantom: tumor does not fit inside the brain");
  }
};

/// Closed-form structure volumes in ml.
using AnalyticVolumes = std::map<StructureKind, double>;

struct Phantom {
  std::vector<ScalarVolume> channels;  // t1c, t1w, t2f, t2w
  StructureSet truth;
  AnalyticVolumes analytic_ml;
};

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace detail

/// Uniform in [0,1) from (seed, stream, counter).
inline double counter_uniform(std::uint64_t seed, std::uint64_t stream, std::uint64_t counter) {
  const std::uint64_t h = detail::splitmix64(detail::splitmix64(seed ^ (stream * 0xd1342543de82ef95ULL)) + counter);
  return static_cast<double>(h >> 11) * 0x1.0p-53;
}

namespace detail {

constexpr double kFourThirdsPi = 4.0 / 3.0 * std::numbers::pi;

struct PhantomGeometry {
  const PhantomSpec& s;
  std::array<double, 3> bc;

  explicit PhantomGeometry(const PhantomSpec& spec) : s(spec), bc(spec.brain_center_mm()) {}

  std::array<double, 3> pos(std::size_t x, std::size_t y, std::size_t z) const {
    return {static_cast<double>(x) * s.spacing.x, static_cast<double>(y) * s.spacing.y, static_cast<double>(z) * s.spacing.z};
  }
  bool in_brain(const std::array<double, 3>& p) const {
    double q = 0.0;
    for (int k = 0; k < 3; ++k) {
      const double t = (p[k] - bc[k]) / s.brain_semi_axes_mm[k];
      q += t * t;
    }
    return q <= 1.0;
  }
  double tumor_r(const std::array<double, 3>& p) const {
    const double dx = p[0] - s.tumor_center_mm[0], dy = p[1] - s.tumor_center_mm[1], dz = p[2] - s.tumor_center_mm[2];
    return std::sqrt(dx * dx + dy * dy + dz * dz);
  }
  bool in_residual_cap(const std::array<double, 3>& p, double r) const {
    if (s.residual_fraction <= 0.0 || r == 0.0) return false;
    const double cos_theta = (p[0] - s.tumor_center_mm[0]) / r;
    return cos_theta >= 1.0 - 2.0 * s.residual_fraction;
  }
};

inline Phantom generate(const PhantomSpec& spec, Timepoint tp) {
  spec.validate();
  const PhantomGeometry g(spec);
  GridGeometry geo;
  geo.dims = spec.dims;
  geo.spacing = spec.spacing;

  Phantom out;
  for (std::size_t c = 0; c < 4; ++c) out.channels.emplace_back(geo);
  BinaryMask brain(geo), tc(geo), netc(geo), snfh(geo), cav(geo), res(geo);

  const double R = spec.tumor_radius_mm;
  const double Rn = R - spec.rim_thickness_mm;
  const double Re = R + spec.edema_thickness_mm;
  const double Rc = spec.cavity_radius_mm;

  std::size_t i = 0;
  for (std::size_t z = 0; z < geo.dims.z; ++z) {
    for (std::size_t y = 0; y < geo.dims.y; ++y) {
      for (std::size_t x = 0; x < geo.dims.x; ++x, ++i) {
        const auto p = g.pos(x, y, z);
        if (!g.in_brain(p)) continue;
        brain[i] = 1;
        const double r = g.tumor_r(p);
        // t1c, t1w, t2f, t2w
        std::array<double, 4> v{0.40, 0.50, 0.30, 0.35};
        if (r > R && r <= Re) {
          snfh[i] = 1;
          v = {0.40, 0.45, 0.80, 0.70};
        }
        if (tp == Timepoint::Preop) {
          if (r <= R) {
            tc[i] = 1;
            v = {1.00, 0.45, 0.70, 0.60};
          }
          if (r <= Rn) {
            netc[i] = 1;
            v = {0.20, 0.30, 0.60, 0.90};
          }
        } else {
          if (r <= Rc) {
            cav[i] = 1;
            v = {0.10, 0.10, 0.15, 0.95};
          } else if (r <= R && g.in_residual_cap(p, r)) {
            res[i] = 1;
            v = {1.00, 0.45, 0.70, 0.60};
          }
        }
        for (std::size_t c = 0; c < 4; ++c) {
          double val = v[c];
          if (spec.noise_amplitude > 0.0) {
            const std::uint64_t stream = (tp == Timepoint::Preop ? 0u : 4u) + c;
            val += spec.noise_amplitude * (2.0 * counter_uniform(spec.seed, stream, i) - 1.0);
          }
          out.channels[c][i] = std::max(val, 1e-3);
        }
      }
    }
  }

  const auto& a = spec.brain_semi_axes_mm;
  out.analytic_ml[StructureKind::Brain] = kFourThirdsPi * a[0] * a[1] * a[2] / 1000.0;
  out.analytic_ml[StructureKind::SNFH] = kFourThirdsPi * (Re * Re * Re - R * R * R) / 1000.0;
  if (tp == Timepoint::Preop) {
    out.truth = StructureSet(Timepoint::Preop, Enhancement::ContrastEnhancing);
    out.truth.set(StructureKind::Brain, std::move(brain));
    out.truth.set(StructureKind::TumorCore, std::move(tc));
    out.truth.set(StructureKind::NETC, std::move(netc));
    out.truth.set(StructureKind::SNFH, std::move(snfh));
    out.analytic_ml[StructureKind::TumorCore] = kFourThirdsPi * R * R * R / 1000.0;
    out.analytic_ml[StructureKind::NETC] = kFourThirdsPi * Rn * Rn * Rn / 1000.0;
  } else {
    out.truth = StructureSet(Timepoint::Postop, Enhancement::ContrastEnhancing);
    out.truth.set(StructureKind::Brain, std::move(brain));
    out.truth.set(StructureKind::ResectionCavity, std::move(cav));
    out.truth.set(StructureKind::ResidualTumor, std::move(res));
    out.truth.set(StructureKind::SNFH, std::move(snfh));
    out.analytic_ml[StructureKind::ResectionCavity] = kFourThirdsPi * Rc * Rc * Rc / 1000.0;
    out.analytic_ml[StructureKind::ResidualTumor] =
        spec.residual_fraction * kFourThirdsPi * (R * R * R - Rc * Rc * Rc) / 1000.0;
  }
  return out;
}

}  // namespace detail

inline Phantom generate_preop(const PhantomSpec& spec) { return detail::generate(spec, Timepoint::Preop); }
inline Phantom generate_postop(const PhantomSpec& spec) { return detail::generate(spec, Timepoint::Postop); }

/// Residual fraction that makes the analytic residual volume equal `residual_ml`.
inline double residual_fraction_for(const PhantomSpec& spec, double residual_ml) {
  const double R = spec.tumor_radius_mm, Rc = spec.cavity_radius_mm;
  return residual_ml * 1000.0 / (detail::kFourThirdsPi * (R * R * R - Rc * Rc * Rc));
}

/// Imperfect "model output" for a spherical phantom structure: a logistic
/// ramp across a perturbed sphere plus seeded noise. Values below 1e-3 are
/// set to exactly 0.
struct ProbabilityPerturbation {
  double radius_scale = 1.0;
  std::array<double, 3> center_shift_mm{0.0, 0.0, 0.0};
  double softness_mm = 1.0;
  double noise = 0.0;
  std::uint64_t seed = 7;
};

inline ProbabilityMap phantom_probability(const PhantomSpec& spec, StructureKind kind, const ProbabilityPerturbation& pert) {
  spec.validate();
  double radius = 0.0;
  switch (kind) {
    case StructureKind::TumorCore: radius = spec.tumor_radius_mm; break;
    case StructureKind::NETC: radius = spec.tumor_radius_mm - spec.rim_thickness_mm; break;
    case StructureKind::ResectionCavity: radius = spec.cavity_radius_mm; break;
    default: throw std::invalid_argument("phantom_probability: only tc, netc and cavity are spherical");
  }
  radius *= pert.radius_scale;
  GridGeometry geo;
  geo.dims = spec.dims;
  geo.spacing = spec.spacing;
  ProbabilityMap p(geo);
  const detail::PhantomGeometry g(spec);
  const double w = std::max(pert.softness_mm, 1e-6);
  std::size_t i = 0;
  for (std::size_t z = 0; z < geo.dims.z; ++z) {
    for (std::size_t y = 0; y < geo.dims.y; ++y) {
      for (std::size_t x = 0; x < geo.dims.x; ++x, ++i) {
        const auto pos = g.pos(x, y, z);
        const double dx = pos[0] - spec.tumor_center_mm[0] - pert.center_shift_mm[0];
        const double dy = pos[1] - spec.tumor_center_mm[1] - pert.center_shift_mm[1];
        const double dz = pos[2] - spec.tumor_center_mm[2] - pert.center_shift_mm[2];
        const double r = std::sqrt(dx * dx + dy * dy + dz * dz);
        if (r > radius + 12.0 * w) continue;
        double v = 1.0 / (1.0 + std::exp((r - radius) / w));
        if (pert.noise > 0.0) v += pert.noise * (2.0 * counter_uniform(pert.seed, 99, i) - 1.0);
        v = std::clamp(v, 0.0, 1.0);
        p[i] = v < 1e-3 ? 0.0 : v;
      }
    }
  }
  return p;
}

/// Varied, reproducible phantom and perturbation for cohort member `index`.
inline std::pair<PhantomSpec, ProbabilityPerturbation> cohort_member(std::uint64_t seed, std::size_t index, Dims dims) {
  auto u = [&](std::uint64_t k) { return counter_uniform(seed, 1000 + index, k); };
  PhantomSpec s;
  s.seed = seed * 1000003ULL + index;
  s.dims = dims;
  const double scale = static_cast<double>(std::min({dims.x, dims.y, dims.z})) / 128.0;
  s.brain_semi_axes_mm = {55.0 * scale, 60.0 * scale, 50.0 * scale};
  s.tumor_radius_mm = (5.0 + 7.0 * u(0)) * scale;
  s.rim_thickness_mm = 0.3 * s.tumor_radius_mm;
  s.edema_thickness_mm = 4.0 * scale;
  s.cavity_radius_mm = 0.6 * s.tumor_radius_mm;
  const auto bc = s.brain_center_mm();
  const double reach = std::min({s.brain_semi_axes_mm[0], s.brain_semi_axes_mm[1], s.brain_semi_axes_mm[2]}) -
                       s.tumor_radius_mm - 1.0;
  for (int k = 0; k < 3; ++k) s.tumor_center_mm[k] = bc[k] + (2.0 * u(1 + k) - 1.0) * reach / std::sqrt(3.0);
  s.noise_amplitude = 0.05;

  ProbabilityPerturbation p;
  p.seed = s.seed + 17;
  p.radius_scale = 0.8 + 0.35 * u(4);
  for (int k = 0; k < 3; ++k) p.center_shift_mm[k] = (2.0 * u(5 + k) - 1.0) * 2.0 * scale;
  p.softness_mm = 0.5 + 1.5 * u(8);
  p.noise = 0.05 * u(9);
  return {s, p};
}

inline nlohmann::json analytic_json(const AnalyticVolumes& v) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [k, ml] : v) j[std::string(to_string(k))] = ml;
  return j;
}

}  // namespace rk
