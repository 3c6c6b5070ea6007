// Pipeline configuration: one JSON document, strictly parsed (unknown keys
// are errors), with every numeric constant defaulted in one place.
#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "resectkit/evalcls.hpp"
#include "resectkit/evalseg.hpp"
#include "resectkit/infer.hpp"
#include "resectkit/prep.hpp"
#include "resectkit/refine.hpp"
#include "resectkit/report.hpp"

namespace rk {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class SequenceLabelSource { Sidecar, Filename, External };

inline std::string_view to_string(SequenceLabelSource s) {
  switch (s) {
    case SequenceLabelSource::Sidecar: return "sidecar";
    case SequenceLabelSource::Filename: return "filename";
    case SequenceLabelSource::External: return "external";
  }
  return "?";
}

struct ClassificationParams {
  std::vector<std::string> classes{"t1c", "t1w", "t2f", "t2w"};
  Averaging averaging = Averaging::Macro;
};

struct PipelineConfig {
  Enhancement enhancement = Enhancement::ContrastEnhancing;
  SequenceLabelSource sequence_labels = SequenceLabelSource::Filename;
  double threshold = 0.5;  // operating threshold for reporting
  PrepParams prep;
  InferParams infer;
  PostprocParams postprocess;
  StructureCutoffs cutoffs;
  EvalParams eval;
  ResectionThresholds resection;
  ReportParams report;
  ClassificationParams classification;

  /// Evaluation shares the postprocessing parameters of the pipeline.
  EvalParams eval_params() const {
    EvalParams e = eval;
    e.postprocess = postprocess;
    return e;
  }

  void validate() const {
    try {
      if (!(threshold >= 0.0 && threshold <= 1.0)) throw std::invalid_argument("threshold must lie in [0,1]");
      prep.validate();
      infer.validate();
      postprocess.validate();
      eval_params().validate();
      resection.validate();
      for (const auto& [k, v] : cutoffs.ml) {
        if (!(v >= 0.0)) throw std::invalid_argument("cutoff for '" + std::string(to_string(k)) + "' must be >= 0");
      }
      if (classification.classes.empty()) throw std::invalid_argument("classification.classes must not be empty");
      std::set<std::string> seen(classification.classes.begin(), classification.classes.end());
      if (seen.size() != classification.classes.size()) throw std::invalid_argument("classification.classes has duplicates");
    } catch (const std::invalid_argument& e) {
      throw ConfigError(std::string("config: ") + e.what());
    }
  }
};

namespace detail {

// Reads fields from one JSON object and rejects whatever was not read.
class StrictObject {
 public:
  StrictObject(const nlohmann::json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError("config: '" + path_ + "' must be an object");
  }

  const nlohmann::json* get(const std::string& key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  template <class T>
  void read(const std::string& key, T& out) {
    if (const auto* v = get(key)) {
      try {
        out = v->get<T>();
      } catch (const nlohmann::json::exception&) {
        throw ConfigError("config: '" + where(key) + "' has the wrong type");
      }
    }
  }

  std::string where(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  void finish() const {
    for (const auto& [k, v] : j_.items()) {
      if (!seen_.count(k)) throw ConfigError("config: unknown key '" + where(k) + "'");
    }
  }

 private:
  const nlohmann::json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

inline Connectivity read_connectivity(StrictObject& o, const std::string& key, Connectivity def) {
  int c = static_cast<int>(def);
  o.read(key, c);
  try {
    return connectivity_from_int(c);
  } catch (const std::invalid_argument&) {
    throw ConfigError("config: '" + o.where(key) + "' must be 6 or 26");
  }
}

template <class F>
auto convert(const std::string& where, F f) {
  try {
    return f();
  } catch (const std::invalid_argument& e) {
    throw ConfigError("config: '" + where + "': " + e.what());
  }
}

inline std::array<double, 3> read_triple(StrictObject& o, const std::string& key, std::array<double, 3> def) {
  if (const auto* v = o.get(key)) {
    std::vector<double> t;
    try {
      t = v->get<std::vector<double>>();
    } catch (const nlohmann::json::exception&) {
      throw ConfigError("config: '" + o.where(key) + "' must be an array of 3 numbers");
    }
    if (t.size() != 3) throw ConfigError("config: '" + o.where(key) + "' must be an array of 3 numbers");
    return {t[0], t[1], t[2]};
  }
  return def;
}

}  // namespace detail

inline PipelineConfig config_from_json(const nlohmann::json& j) {
  using detail::StrictObject;
  PipelineConfig c;
  StrictObject root(j, "");

  std::string s = std::string(to_string(c.enhancement));
  root.read("enhancement", s);
  c.enhancement = detail::convert("enhancement", [&] { return enhancement_from_string(s); });

  s = std::string(to_string(c.sequence_labels));
  root.read("sequence_labels", s);
  if (s == "sidecar") c.sequence_labels = SequenceLabelSource::Sidecar;
  else if (s == "filename") c.sequence_labels = SequenceLabelSource::Filename;
  else if (s == "external") c.sequence_labels = SequenceLabelSource::External;
  else throw ConfigError("config: 'sequence_labels' must be sidecar, filename or external");

  root.read("threshold", c.threshold);

  if (const auto* v = root.get("prep")) {
    StrictObject o(*v, "prep");
    const auto sp = detail::read_triple(o, "target_spacing_mm", {c.prep.target_spacing.x, c.prep.target_spacing.y, c.prep.target_spacing.z});
    c.prep.target_spacing = {sp[0], sp[1], sp[2]};
    o.read("clip_lo_pct", c.prep.clip_lo_pct);
    o.read("clip_hi_pct", c.prep.clip_hi_pct);
    o.read("crop_margin_voxels", c.prep.crop_margin_voxels);
    o.finish();
  }

  if (const auto* v = root.get("infer")) {
    StrictObject o(*v, "infer");
    const auto pd = detail::read_triple(o, "patch_dims", {static_cast<double>(c.infer.patch_dims.x),
                                                          static_cast<double>(c.infer.patch_dims.y),
                                                          static_cast<double>(c.infer.patch_dims.z)});
    for (double d : pd) {
      if (!(d >= 1.0) || d != std::floor(d)) throw ConfigError("config: 'infer.patch_dims' must be positive integers");
    }
    c.infer.patch_dims = {static_cast<std::size_t>(pd[0]), static_cast<std::size_t>(pd[1]), static_cast<std::size_t>(pd[2])};
    o.read("overlap_fraction", c.infer.overlap_fraction);
    std::string f(to_string(c.infer.fusion_mode));
    o.read("fusion", f);
    c.infer.fusion_mode = detail::convert("infer.fusion", [&] { return fusion_from_string(f); });
    std::vector<int> axes;
    o.read("tta_flip_axes", axes);
    for (int a : axes) {
      if (a < 0 || a > 2) throw ConfigError("config: 'infer.tta_flip_axes' entries must be 0, 1 or 2");
      c.infer.tta_flips[static_cast<std::size_t>(a)] = true;
    }
    o.finish();
  }

  if (const auto* v = root.get("postprocess")) {
    StrictObject o(*v, "postprocess");
    o.read("min_component_ml", c.postprocess.min_component_ml);
    o.read("min_consecutive_slices", c.postprocess.min_consecutive_slices);
    o.read("brain_filter", c.postprocess.brain_filter);
    o.read("noise_removal", c.postprocess.noise_removal);
    c.postprocess.connectivity = detail::read_connectivity(o, "connectivity", c.postprocess.connectivity);
    o.finish();
  }

  if (const auto* v = root.get("cutoffs_ml")) {
    if (!v->is_object()) throw ConfigError("config: 'cutoffs_ml' must be an object");
    for (const auto& [k, ml] : v->items()) {
      const auto kind = detail::convert("cutoffs_ml." + k, [&] { return structure_from_string(k); });
      if (!ml.is_number()) throw ConfigError("config: 'cutoffs_ml." + k + "' must be a number");
      c.cutoffs.ml[kind] = ml.get<double>();
    }
  }

  if (const auto* v = root.get("eval")) {
    StrictObject o(*v, "eval");
    o.read("thresholds", c.eval.thresholds);
    o.read("tp_dice_min", c.eval.tp_dice_min);
    o.read("min_object_voxels", c.eval.min_object_voxels);
    if (const auto* m = o.get("min_object_voxels_by_kind")) {
      if (!m->is_object()) throw ConfigError("config: 'eval.min_object_voxels_by_kind' must be an object");
      c.eval.min_object_voxels_by_kind.clear();
      for (const auto& [k, n] : m->items()) {
        const auto kind = detail::convert("eval.min_object_voxels_by_kind." + k, [&] { return structure_from_string(k); });
        if (!n.is_number_unsigned()) throw ConfigError("config: 'eval.min_object_voxels_by_kind." + k + "' must be a count");
        c.eval.min_object_voxels_by_kind[kind] = n.get<std::size_t>();
      }
    }
    c.eval.connectivity = detail::read_connectivity(o, "connectivity", c.eval.connectivity);
    if (const auto* m = o.get("noise_removal_kinds")) {
      std::vector<std::string> names;
      try {
        names = m->get<std::vector<std::string>>();
      } catch (const nlohmann::json::exception&) {
        throw ConfigError("config: 'eval.noise_removal_kinds' must be an array of structure names");
      }
      c.eval.noise_removal_kinds.clear();
      for (const auto& n : names) {
        c.eval.noise_removal_kinds.insert(detail::convert("eval.noise_removal_kinds", [&] { return structure_from_string(n); }));
      }
    }
    o.read("apply_postprocess", c.eval.apply_postprocess);
    o.read("n_folds", c.eval.n_folds);
    o.finish();
  }

  if (const auto* v = root.get("resection")) {
    StrictObject o(*v, "resection");
    o.read("measurability_ml", c.resection.measurability_ml);
    o.read("near_total_max_ml", c.resection.near_total_max_ml);
    o.finish();
  }

  if (const auto* v = root.get("report")) {
    StrictObject o(*v, "report");
    c.report.connectivity = detail::read_connectivity(o, "connectivity", c.report.connectivity);
    o.read("min_component_voxels", c.report.min_component_voxels);
    o.finish();
  }

  if (const auto* v = root.get("classification")) {
    StrictObject o(*v, "classification");
    o.read("classes", c.classification.classes);
    std::string a = c.classification.averaging == Averaging::Macro ? "macro" : "micro";
    o.read("averaging", a);
    if (a == "macro") c.classification.averaging = Averaging::Macro;
    else if (a == "micro") c.classification.averaging = Averaging::Micro;
    else throw ConfigError("config: 'classification.averaging' must be macro or micro");
    o.finish();
  }

  root.finish();
  c.validate();
  return c;
}

/// Fully resolved configuration; feeding it back to config_from_json gives
/// the same configuration.
inline nlohmann::json config_to_json(const PipelineConfig& c) {
  using nlohmann::json;
  json cut = json::object();
  for (const auto& [k, v] : c.cutoffs.ml) cut[std::string(to_string(k))] = v;
  json by_kind = json::object();
  for (const auto& [k, v] : c.eval.min_object_voxels_by_kind) by_kind[std::string(to_string(k))] = v;
  json nr = json::array();
  for (auto k : c.eval.noise_removal_kinds) nr.push_back(std::string(to_string(k)));
  json flips = json::array();
  for (int a = 0; a < 3; ++a) {
    if (c.infer.tta_flips[static_cast<std::size_t>(a)]) flips.push_back(a);
  }
  return {
      {"enhancement", to_string(c.enhancement)},
      {"sequence_labels", to_string(c.sequence_labels)},
      {"threshold", c.threshold},
      {"prep",
       {{"target_spacing_mm", {c.prep.target_spacing.x, c.prep.target_spacing.y, c.prep.target_spacing.z}},
        {"clip_lo_pct", c.prep.clip_lo_pct},
        {"clip_hi_pct", c.prep.clip_hi_pct},
        {"crop_margin_voxels", c.prep.crop_margin_voxels}}},
      {"infer",
       {{"patch_dims", {c.infer.patch_dims.x, c.infer.patch_dims.y, c.infer.patch_dims.z}},
        {"overlap_fraction", c.infer.overlap_fraction},
        {"fusion", to_string(c.infer.fusion_mode)},
        {"tta_flip_axes", flips}}},
      {"postprocess",
       {{"min_component_ml", c.postprocess.min_component_ml},
        {"min_consecutive_slices", c.postprocess.min_consecutive_slices},
        {"brain_filter", c.postprocess.brain_filter},
        {"noise_removal", c.postprocess.noise_removal},
        {"connectivity", static_cast<int>(c.postprocess.connectivity)}}},
      {"cutoffs_ml", cut},
      {"eval",
       {{"thresholds", c.eval.thresholds},
        {"tp_dice_min", c.eval.tp_dice_min},
        {"min_object_voxels", c.eval.min_object_voxels},
        {"min_object_voxels_by_kind", by_kind},
        {"connectivity", static_cast<int>(c.eval.connectivity)},
        {"noise_removal_kinds", nr},
        {"apply_postprocess", c.eval.apply_postprocess},
        {"n_folds", c.eval.n_folds}}},
      {"resection", {{"measurability_ml", c.resection.measurability_ml}, {"near_total_max_ml", c.resection.near_total_max_ml}}},
      {"report", {{"connectivity", static_cast<int>(c.report.connectivity)}, {"min_component_voxels", c.report.min_component_voxels}}},
      {"classification",
       {{"classes", c.classification.classes},
        {"averaging", c.classification.averaging == Averaging::Macro ? "macro" : "micro"}}},
  };
}

inline PipelineConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open '" + path.string() + "'");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config: '" + path.string() + "' is not valid JSON: " + e.what());
  }
  return config_from_json(j);
}

// ---------------------------------------------------------------------------
// Deterministic output formatting

/// Real numbers with 6 significant digits; non-finite values become null.
inline std::string format_number(double v) {
  if (!std::isfinite(v)) return "null";
  if (v == 0.0) return "0";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

namespace detail {

inline void dump_json(const nlohmann::json& j, std::ostringstream& os, int indent) {
  const std::string pad(static_cast<std::size_t>(indent + 2), ' ');
  const std::string end_pad(static_cast<std::size_t>(indent), ' ');
  switch (j.type()) {
    case nlohmann::json::value_t::object: {
      if (j.empty()) {
        os << "{}";
        return;
      }
      os << "{\n";
      bool first = true;
      for (const auto& [k, v] : j.items()) {
        if (!first) os << ",\n";
        first = false;
        os << pad << nlohmann::json(k).dump() << ": ";
        dump_json(v, os, indent + 2);
      }
      os << "\n" << end_pad << "}";
      return;
    }
    case nlohmann::json::value_t::array: {
      if (j.empty()) {
        os << "[]";
        return;
      }
      os << "[\n";
      for (std::size_t i = 0; i < j.size(); ++i) {
        if (i) os << ",\n";
        os << pad;
        dump_json(j[i], os, indent + 2);
      }
      os << "\n" << end_pad << "]";
      return;
    }
    case nlohmann::json::value_t::number_float: os << format_number(j.get<double>()); return;
    default: os << j.dump();
  }
}

}  // namespace detail

/// Pretty JSON with sorted keys and 6-significant-digit reals.
inline std::string format_json(const nlohmann::json& j) {
  std::ostringstream os;
  detail::dump_json(j, os, 0);
  os << "\n";
  return os.str();
}

}  // namespace rk
