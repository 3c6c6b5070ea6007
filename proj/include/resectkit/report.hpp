// Standardized per-timepoint features and the pre/postoperative surgical
// report: volumes, component statistics, diameters, tumor-to-brain ratio,
// volumetric evolution, extent of resection and resection class.
#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <nlohmann/json.hpp>
#include <numbers>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "resectkit/morph.hpp"
#include "resectkit/refine.hpp"
#include "resectkit/volgrid.hpp"

namespace rk {

inline constexpr const char* kToolkitVersion = "resectkit 1.0.0";

/// Distances between voxel centres in mm, so a one-voxel lesion measures 0
/// on every diameter.
struct Diameters {
  double long_axis = 0.0;
  double short_axis = 0.0;
  double feret_3d = 0.0;
  double equivalent_area = 0.0;
  friend bool operator==(const Diameters&, const Diameters&) = default;
};

namespace detail {

struct Point2 {
  double x, y;
};
struct Point3 {
  double x, y, z;
};

inline double dist2(const Point3& a, const Point3& b) {
  const double dx = a.x - b.x, dy = a.y - b.y, dz = a.z - b.z;
  return dx * dx + dy * dy + dz * dz;
}

}  // namespace detail

/// Diameters of the largest component. Feret is the 3D caliper over
/// boundary voxel centres. The axial slice with the largest cross-section
/// gives the long axis (largest in-plane distance), the short axis (longest
/// extent perpendicular to it) and the equivalent-area diameter.
inline Diameters diameters(const BinaryMask& mask, Connectivity conn = Connectivity::TwentySix) {
  Diameters d;
  const auto lab = connected_components(mask, conn);
  const std::uint32_t id = largest_component(lab);
  if (id == 0 || lab.size_of(id) == 1) return d;

  const auto& geo = mask.geometry();
  const Spacing& sp = geo.spacing;
  Box box{{geo.dims.x, geo.dims.y, geo.dims.z}, {0, 0, 0}};
  std::vector<std::size_t> per_slice(geo.dims.z, 0);
  for (std::size_t i = 0; i < lab.labels.size(); ++i) {
    if (lab.labels[i] != id) continue;
    const Index3 c = geo.coords(i);
    ++per_slice[c[2]];
    for (int k = 0; k < 3; ++k) {
      box.lo[k] = std::min(box.lo[k], c[k]);
      box.hi[k] = std::max(box.hi[k], c[k] + 1);
    }
  }
  auto in_comp = [&](std::size_t i) { return lab.labels[i] == id; };

  // 3D caliper
  std::vector<detail::Point3> surf;
  for (auto i : detail::boundary_indices(geo, box, in_comp)) {
    const Index3 c = geo.coords(i);
    surf.push_back({static_cast<double>(c[0]) * sp.x, static_cast<double>(c[1]) * sp.y, static_cast<double>(c[2]) * sp.z});
  }
  double best = 0.0;
  for (std::size_t a = 0; a < surf.size(); ++a) {
    for (std::size_t b = a + 1; b < surf.size(); ++b) best = std::max(best, detail::dist2(surf[a], surf[b]));
  }
  d.feret_3d = std::sqrt(best);

  // Largest axial cross-section (lowest z on ties).
  const auto zmax = static_cast<std::size_t>(std::max_element(per_slice.begin(), per_slice.end()) - per_slice.begin());
  std::vector<detail::Point2> pts;
  std::vector<detail::Point2> rim;
  for (std::size_t y = box.lo[1]; y < box.hi[1]; ++y) {
    for (std::size_t x = box.lo[0]; x < box.hi[0]; ++x) {
      const std::size_t i = geo.linear(x, y, zmax);
      if (!in_comp(i)) continue;
      const detail::Point2 p{static_cast<double>(x) * sp.x, static_cast<double>(y) * sp.y};
      pts.push_back(p);
      const bool edge = x == 0 || y == 0 || x + 1 == geo.dims.x || y + 1 == geo.dims.y || !in_comp(i - 1) ||
                        !in_comp(i + 1) || !in_comp(i - geo.dims.x) || !in_comp(i + geo.dims.x);
      if (edge) rim.push_back(p);
    }
  }
  d.equivalent_area = 2.0 * std::sqrt(static_cast<double>(pts.size()) * sp.x * sp.y / std::numbers::pi);

  double best2 = 0.0;
  detail::Point2 ua{0, 0}, ub{0, 0};
  for (std::size_t a = 0; a < rim.size(); ++a) {
    for (std::size_t b = a + 1; b < rim.size(); ++b) {
      const double dx = rim[a].x - rim[b].x, dy = rim[a].y - rim[b].y;
      const double dd = dx * dx + dy * dy;
      if (dd > best2) {
        best2 = dd;
        ua = rim[a];
        ub = rim[b];
      }
    }
  }
  d.long_axis = std::sqrt(best2);
  if (best2 == 0.0) return d;

  // Perpendicular chords: group voxel centres into strips one voxel wide
  // across the long axis and take the widest strip.
  const double ux = (ub.x - ua.x) / d.long_axis, uy = (ub.y - ua.y) / d.long_axis;
  const double vx = -uy, vy = ux;
  const double w = std::min(sp.x, sp.y);
  std::map<long long, std::pair<double, double>> strips;
  for (const auto& p : pts) {
    const auto key = static_cast<long long>(std::llround((p.x * ux + p.y * uy) / w));
    const double t = p.x * vx + p.y * vy;
    auto [it, fresh] = strips.try_emplace(key, t, t);
    if (!fresh) {
      it->second.first = std::min(it->second.first, t);
      it->second.second = std::max(it->second.second, t);
    }
  }
  for (const auto& [k, s] : strips) d.short_axis = std::max(d.short_axis, s.second - s.first);
  d.short_axis = std::min(d.short_axis, d.long_axis);
  return d;
}

// ---------------------------------------------------------------------------

struct ReportParams {
  Connectivity connectivity = Connectivity::TwentySix;
  std::size_t min_component_voxels = 0;
};

struct StructureFeatures {
  StructureKind kind = StructureKind::TumorCore;
  double volume_ml = 0.0;
  std::size_t components = 0;
  double largest_ml = 0.0;
  std::optional<Diameters> diameters_mm;
  std::optional<double> tumor_brain_ratio;
  friend bool operator==(const StructureFeatures&, const StructureFeatures&) = default;
};

struct TimepointFeatures {
  Timepoint tag = Timepoint::Preop;
  Enhancement enhancement = Enhancement::ContrastEnhancing;
  std::vector<StructureFeatures> structures;  // ordered by kind
  std::vector<std::string> notes;
  friend bool operator==(const TimepointFeatures&, const TimepointFeatures&) = default;

  const StructureFeatures* find(StructureKind k) const {
    for (const auto& s : structures) {
      if (s.kind == k) return &s;
    }
    return nullptr;
  }
};

/// Tumor structure that carries diameters and drives the resection assessment.
inline StructureKind reference_structure(Enhancement e, Timepoint t) {
  if (e == Enhancement::NonEnhancing) return StructureKind::WholeTumor;
  return t == Timepoint::Preop ? StructureKind::TumorCore : StructureKind::ResidualTumor;
}

inline TimepointFeatures timepoint_features(const StructureSet& set, const BinaryMask* brain = nullptr,
                                            const ReportParams& params = {}) {
  TimepointFeatures f;
  f.tag = set.timepoint();
  f.enhancement = set.enhancement();
  f.notes = set.notes();
  if (!brain) brain = set.find(StructureKind::Brain);
  std::optional<double> brain_ml;
  if (brain) brain_ml = mask_volume_ml(*brain);
  const StructureKind ref = reference_structure(set.enhancement(), set.timepoint());

  for (const auto& [kind, mask] : set.masks()) {
    StructureFeatures s;
    s.kind = kind;
    s.volume_ml = mask_volume_ml(mask);
    const double vml = voxel_volume_ml(mask.spacing());
    const auto lab = connected_components(mask, params.connectivity);
    std::size_t largest = 0;
    for (auto n : lab.sizes) {
      if (n < params.min_component_voxels) continue;
      ++s.components;
      largest = std::max(largest, n);
    }
    s.largest_ml = static_cast<double>(largest) * vml;
    if (kind == ref) s.diameters_mm = diameters(mask, params.connectivity);
    if (brain_ml && kind != StructureKind::Brain && *brain_ml > 0.0) s.tumor_brain_ratio = s.volume_ml / *brain_ml;
    f.structures.push_back(s);
  }
  if (!set.has(ref)) {
    f.notes.push_back("reference structure '" + std::string(to_string(ref)) + "' was not segmented");
  }
  return f;
}

/// Percent reduction from pre to post; nullopt when pre is 0. Growth is negative.
inline std::optional<double> volumetric_evolution(double pre_ml, double post_ml) {
  if (pre_ml < 0.0 || post_ml < 0.0) throw std::invalid_argument("volumetric_evolution: negative volume");
  if (pre_ml == 0.0) return std::nullopt;
  return 100.0 * (pre_ml - post_ml) / pre_ml;
}

enum class ResectionClass { Complete, NearTotal, Subtotal, NotApplicable };

inline std::string_view to_string(ResectionClass c) {
  switch (c) {
    case ResectionClass::Complete: return "complete";
    case ResectionClass::NearTotal: return "near_total";
    case ResectionClass::Subtotal: return "subtotal";
    case ResectionClass::NotApplicable: return "not_applicable";
  }
  return "?";
}

inline ResectionClass resection_class_from_string(std::string_view s) {
  for (auto c : {ResectionClass::Complete, ResectionClass::NearTotal, ResectionClass::Subtotal, ResectionClass::NotApplicable}) {
    if (to_string(c) == s) return c;
  }
  throw std::invalid_argument("unknown resection class '" + std::string(s) + "'");
}

struct ResectionThresholds {
  double measurability_ml = 0.175;
  double near_total_max_ml = 1.0;

  void validate() const {
    if (!(measurability_ml >= 0.0 && measurability_ml <= near_total_max_ml)) {
      throw std::invalid_argument("resection thresholds must satisfy 0 <= measurability_ml <= near_total_max_ml");
    }
  }
};

/// Complete below the measurability cutoff, near total up to
/// near_total_max_ml, subtotal above; not applicable without a preoperative
/// reference volume.
inline ResectionClass classify_resection(std::optional<double> preop_ml, double residual_ml, const ResectionThresholds& t) {
  t.validate();
  if (residual_ml < 0.0 || (preop_ml && *preop_ml < 0.0)) throw std::invalid_argument("classify_resection: negative volume");
  if (!preop_ml) return ResectionClass::NotApplicable;
  if (!ml_at_least(residual_ml, t.measurability_ml)) return ResectionClass::Complete;
  if (residual_ml <= t.near_total_max_ml + 1e-9 * std::max(1.0, t.near_total_max_ml)) return ResectionClass::NearTotal;
  return ResectionClass::Subtotal;
}

struct SurgicalAssessment {
  std::map<StructureKind, std::optional<double>> evolution_pct;
  std::optional<double> eor_pct;
  std::optional<double> residual_ml;
  std::optional<double> preop_reference_ml;
  ResectionClass resection_class = ResectionClass::NotApplicable;
  std::vector<std::string> notes;
  friend bool operator==(const SurgicalAssessment&, const SurgicalAssessment&) = default;
};

struct SurgicalReport {
  std::string patient_id;
  std::vector<TimepointFeatures> timepoints;
  std::optional<SurgicalAssessment> surgical;
  nlohmann::json config_echo = nlohmann::json::object();
  std::string version = kToolkitVersion;
  friend bool operator==(const SurgicalReport&, const SurgicalReport&) = default;
};

inline SurgicalReport build_surgical_report(const TimepointFeatures& pre, const TimepointFeatures& post,
                                            const ResectionThresholds& thresholds) {
  thresholds.validate();
  SurgicalReport r;
  r.timepoints = {pre, post};
  SurgicalAssessment s;
  for (auto k : kAllStructureKinds) {
    const auto* a = pre.find(k);
    const auto* b = post.find(k);
    if (!a && !b) continue;
    s.evolution_pct[k] = (a && b) ? volumetric_evolution(a->volume_ml, b->volume_ml) : std::nullopt;
  }
  const StructureKind pre_ref = reference_structure(pre.enhancement, Timepoint::Preop);
  const StructureKind post_ref = reference_structure(post.enhancement, Timepoint::Postop);
  const auto* a = pre.find(pre_ref);
  const auto* b = post.find(post_ref);
  if (a) s.preop_reference_ml = a->volume_ml;
  if (b) s.residual_ml = b->volume_ml;
  if (a && b) {
    s.eor_pct = volumetric_evolution(a->volume_ml, b->volume_ml);
    if (!s.eor_pct) s.notes.push_back("extent of resection undefined: preoperative reference volume is 0");
    s.resection_class = classify_resection(a->volume_ml, b->volume_ml, thresholds);
  } else {
    s.resection_class = ResectionClass::NotApplicable;
    if (!a) s.notes.push_back("warning: preoperative reference structure '" + std::string(to_string(pre_ref)) + "' missing");
    if (!b) s.notes.push_back("warning: postoperative reference structure '" + std::string(to_string(post_ref)) + "' missing");
  }
  for (const auto& n : post.notes) s.notes.push_back(n);
  r.surgical = std::move(s);
  return r;
}

// ---------------------------------------------------------------------------
// JSON

namespace detail {

inline nlohmann::json opt_json(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); }
inline std::optional<double> opt_from(const nlohmann::json& j) {
  if (j.is_null()) return std::nullopt;
  return j.get<double>();
}

}  // namespace detail

inline nlohmann::json to_json(const Diameters& d) {
  return {{"long_axis", d.long_axis}, {"short_axis", d.short_axis}, {"feret_3d", d.feret_3d}, {"equivalent_area", d.equivalent_area}};
}

inline nlohmann::json to_json(const TimepointFeatures& t) {
  nlohmann::json j;
  j["tag"] = to_string(t.tag);
  j["enhancement"] = to_string(t.enhancement);
  j["structures"] = nlohmann::json::array();
  for (const auto& s : t.structures) {
    j["structures"].push_back({{"kind", to_string(s.kind)},
                               {"volume_ml", s.volume_ml},
                               {"components", s.components},
                               {"largest_ml", s.largest_ml},
                               {"diameters_mm", s.diameters_mm ? to_json(*s.diameters_mm) : nlohmann::json(nullptr)},
                               {"tumor_brain_ratio", detail::opt_json(s.tumor_brain_ratio)}});
  }
  j["notes"] = t.notes;
  return j;
}

inline nlohmann::json to_json(const SurgicalReport& r) {
  nlohmann::json j;
  j["patient_id"] = r.patient_id;
  j["timepoints"] = nlohmann::json::array();
  for (const auto& t : r.timepoints) j["timepoints"].push_back(to_json(t));
  if (r.surgical) {
    const auto& s = *r.surgical;
    nlohmann::json ev = nlohmann::json::object();
    for (const auto& [k, v] : s.evolution_pct) ev[std::string(to_string(k))] = detail::opt_json(v);
    j["surgical"] = {{"evolution_pct", ev},
                     {"eor_pct", detail::opt_json(s.eor_pct)},
                     {"residual_ml", detail::opt_json(s.residual_ml)},
                     {"preop_reference_ml", detail::opt_json(s.preop_reference_ml)},
                     {"resection_class", to_string(s.resection_class)},
                     {"notes", s.notes}};
  }
  j["config_echo"] = r.config_echo;
  j["version"] = r.version;
  return j;
}

inline TimepointFeatures timepoint_from_json(const nlohmann::json& j) {
  TimepointFeatures t;
  t.tag = timepoint_from_string(j.at("tag").get<std::string>());
  t.enhancement = enhancement_from_string(j.at("enhancement").get<std::string>());
  for (const auto& s : j.at("structures")) {
    StructureFeatures f;
    f.kind = structure_from_string(s.at("kind").get<std::string>());
    f.volume_ml = s.at("volume_ml").get<double>();
    f.components = s.at("components").get<std::size_t>();
    f.largest_ml = s.at("largest_ml").get<double>();
    if (!s.at("diameters_mm").is_null()) {
      const auto& d = s.at("diameters_mm");
      f.diameters_mm = Diameters{d.at("long_axis").get<double>(), d.at("short_axis").get<double>(),
                                 d.at("feret_3d").get<double>(), d.at("equivalent_area").get<double>()};
    }
    f.tumor_brain_ratio = detail::opt_from(s.at("tumor_brain_ratio"));
    t.structures.push_back(f);
  }
  t.notes = j.at("notes").get<std::vector<std::string>>();
  return t;
}

inline SurgicalReport report_from_json(const nlohmann::json& j) {
  SurgicalReport r;
  r.patient_id = j.at("patient_id").get<std::string>();
  for (const auto& t : j.at("timepoints")) r.timepoints.push_back(timepoint_from_json(t));
  if (j.contains("surgical") && !j.at("surgical").is_null()) {
    const auto& sj = j.at("surgical");
    SurgicalAssessment s;
    for (const auto& [k, v] : sj.at("evolution_pct").items()) s.evolution_pct[structure_from_string(k)] = detail::opt_from(v);
    s.eor_pct = detail::opt_from(sj.at("eor_pct"));
    s.residual_ml = detail::opt_from(sj.at("residual_ml"));
    s.preop_reference_ml = detail::opt_from(sj.at("preop_reference_ml"));
    s.resection_class = resection_class_from_string(sj.at("resection_class").get<std::string>());
    s.notes = sj.at("notes").get<std::vector<std::string>>();
    r.surgical = std::move(s);
  }
  r.config_echo = j.at("config_echo");
  r.version = j.at("version").get<std::string>();
  return r;
}

}  // namespace rk
