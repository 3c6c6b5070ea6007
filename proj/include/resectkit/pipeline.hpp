// Patient-folder ingestion and the batch commands behind the CLI: surgical
// reports, segmentation evaluation and classification evaluation.
//
// Folder layout (this toolkit's own contract):
//   root/<patient>/patient.json              optional, {"fold": k}
//   root/<patient>/<preop|postop>/
//       <tag>.nii[.gz] | <tag>.rawj          MR sequence, tag in {t1c,t1w,t2f,t2w}
//       prob_<kind>.*                        structure probability map
//       mask_<kind>.*                        structure mask (mask_brain = brain mask)
//       gt_<kind>.*                          ground-truth mask for evaluation
//       manifest.json                        optional, {"sequences": {"<file name>": "<tag>"}}
#pragma once

#include <algorithm>
#include <atomic>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "resectkit/config.hpp"
#include "resectkit/imgio.hpp"
#include "resectkit/phantom.hpp"

namespace rk {

namespace fs = std::filesystem;

class IngestError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class EvaluationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline bool is_sequence_tag(std::string_view s) {
  return std::find(kSequenceTags.begin(), kSequenceTags.end(), s) != kSequenceTags.end();
}

struct TimepointInputs {
  std::map<std::string, fs::path> sequences;  // tag -> file
  std::map<StructureKind, fs::path> prob_maps;
  std::map<StructureKind, fs::path> masks;
  std::map<StructureKind, fs::path> gt_masks;

  bool empty() const { return sequences.empty() && prob_maps.empty() && masks.empty() && gt_masks.empty(); }
};

struct PatientStudy {
  std::string id;
  std::map<Timepoint, TimepointInputs> timepoints;
  std::optional<int> fold;
};

struct IngestResult {
  std::vector<PatientStudy> studies;  // sorted by id
  std::vector<std::string> diagnostics;
};

/// patient -> timepoint -> file name -> tag, from an external classifier.
using ExternalLabels = std::map<std::string, std::map<std::string, std::map<std::string, std::string>>>;

// ---------------------------------------------------------------------------
// Small text helpers

inline void write_text_atomic(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError(IoErrorKind::Io, path, "cannot open for writing");
    os << text;
    if (!os) throw IoError(IoErrorKind::Io, path, "write failed");
  }
  fs::rename(tmp, path);
}

inline std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream is(line);
  while (std::getline(is, cur, ',')) out.push_back(trim(cur));
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

/// Reads a CSV with a required header; returns data rows with their 1-based line numbers.
inline std::vector<std::pair<std::size_t, std::vector<std::string>>> read_csv(const fs::path& path,
                                                                            const std::vector<std::string>& header) {
  std::ifstream in(path);
  if (!in) throw IngestError("cannot open '" + path.string() + "'");
  std::string line;
  std::size_t lineno = 0;
  std::vector<std::pair<std::size_t, std::vector<std::string>>> rows;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    auto cells = split_csv_line(line);
    if (!have_header) {
      if (cells != header) {
        std::string want;
        for (const auto& h : header) want += (want.empty() ? "" : ",") + h;
        throw IngestError(path.string() + ": line " + std::to_string(lineno) + ": expected header '" + want + "'");
      }
      have_header = true;
      continue;
    }
    if (cells.size() != header.size()) {
      throw IngestError(path.string() + ": line " + std::to_string(lineno) + ": expected " + std::to_string(header.size()) +
                        " columns, found " + std::to_string(cells.size()));
    }
    rows.emplace_back(lineno, std::move(cells));
  }
  if (!have_header) throw IngestError(path.string() + ": file is empty");
  return rows;
}

inline ExternalLabels read_external_labels(const fs::path& csv) {
  ExternalLabels out;
  for (const auto& [line, r] : read_csv(csv, {"patient_id", "timepoint", "filename", "tag"})) {
    if (!is_sequence_tag(r[3])) {
      throw IngestError(csv.string() + ": line " + std::to_string(line) + ": unknown sequence tag '" + r[3] + "'");
    }
    out[r[0]][r[1]][r[2]] = r[3];
  }
  return out;
}

// ---------------------------------------------------------------------------
// Ingestion

struct IngestOptions {
  SequenceLabelSource labels = SequenceLabelSource::Filename;
  const ExternalLabels* external = nullptr;
};

namespace detail {

inline std::map<std::string, std::string> read_manifest(const fs::path& path) {
  std::ifstream in(path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw IngestError("manifest.json is not valid JSON: " + std::string(e.what()));
  }
  if (!j.is_object()) throw IngestError("manifest.json must be an object");
  std::map<std::string, std::string> out;
  for (const auto& [k, v] : j.items()) {
    if (k != "sequences") throw IngestError("manifest.json: unknown key '" + k + "'");
    if (!v.is_object()) throw IngestError("manifest.json: 'sequences' must be an object");
    for (const auto& [file, tag] : v.items()) {
      if (!tag.is_string() || !is_sequence_tag(tag.get<std::string>())) {
        throw IngestError("manifest.json: file '" + file + "' has an invalid sequence tag");
      }
      out[file] = tag.get<std::string>();
    }
  }
  return out;
}

inline int read_fold(const fs::path& path) {
  std::ifstream in(path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw IngestError("patient.json is not valid JSON: " + std::string(e.what()));
  }
  if (!j.is_object()) throw IngestError("patient.json must be an object");
  for (const auto& [k, v] : j.items()) {
    if (k != "fold") throw IngestError("patient.json: unknown key '" + k + "'");
  }
  if (!j.contains("fold") || !j["fold"].is_number_integer()) throw IngestError("patient.json: 'fold' must be an integer");
  return j["fold"].get<int>();
}

template <class K>
void add_unique(std::map<K, fs::path>& m, const K& key, const fs::path& p, const std::string& what) {
  auto [it, inserted] = m.emplace(key, p);
  if (!inserted) {
    throw IngestError("duplicate " + what + ": '" + it->second.filename().string() + "' and '" + p.filename().string() + "'");
  }
}

inline TimepointInputs ingest_timepoint(const fs::path& dir, const std::string& patient, const std::string& tp,
                                        const IngestOptions& opt) {
  std::map<std::string, std::string> manifest;
  const fs::path mpath = dir / "manifest.json";
  const bool has_manifest = fs::exists(mpath);
  if (has_manifest) manifest = read_manifest(mpath);
  if (opt.labels == SequenceLabelSource::Sidecar && !has_manifest) {
    throw IngestError(tp + ": sequence labels come from manifest.json, which is missing");
  }
  const std::map<std::string, std::string>* external = nullptr;
  if (opt.labels == SequenceLabelSource::External) {
    if (!opt.external) throw IngestError("sequence labels are external but no label file was given");
    auto pi = opt.external->find(patient);
    if (pi != opt.external->end()) {
      auto ti = pi->second.find(tp);
      if (ti != pi->second.end()) external = &ti->second;
    }
  }

  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && is_volume_path(e.path())) files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());

  TimepointInputs in;
  for (const auto& f : files) {
    const std::string name = f.filename().string();
    const std::string stem = volume_stem(f);
    auto structure = [&](std::size_t prefix) {
      try {
        return structure_from_string(stem.substr(prefix));
      } catch (const std::invalid_argument&) {
        throw IngestError(tp + ": file '" + name + "' names an unknown structure");
      }
    };
    if (stem.rfind("prob_", 0) == 0) {
      add_unique(in.prob_maps, structure(5), f, tp + " probability map");
      continue;
    }
    if (stem.rfind("mask_", 0) == 0) {
      add_unique(in.masks, structure(5), f, tp + " mask");
      continue;
    }
    if (stem.rfind("gt_", 0) == 0) {
      add_unique(in.gt_masks, structure(3), f, tp + " ground-truth mask");
      continue;
    }
    std::optional<std::string> tag;
    if (opt.labels == SequenceLabelSource::External) {
      if (external) {
        auto it = external->find(name);
        if (it != external->end()) tag = it->second;
      }
    } else {
      if (opt.labels == SequenceLabelSource::Filename && is_sequence_tag(stem)) tag = stem;
      auto it = manifest.find(name);
      if (it != manifest.end()) tag = it->second;  // the manifest wins over the file name
    }
    if (!tag) throw IngestError(tp + ": no sequence label for '" + name + "'");
    add_unique(in.sequences, *tag, f, tp + " sequence tag '" + *tag + "'");
  }
  return in;
}

}  // namespace detail

/// Scans root/<patient>/<timepoint>/. Patients with problems are skipped and
/// explained in the diagnostics; only an unusable root is an error.
inline IngestResult ingest(const fs::path& root, const IngestOptions& opt = {}) {
  if (!fs::is_directory(root)) throw IngestError("input root '" + root.string() + "' is not a directory");
  std::vector<fs::path> dirs;
  for (const auto& e : fs::directory_iterator(root)) {
    if (e.is_directory()) dirs.push_back(e.path());
  }
  if (dirs.empty()) throw IngestError("input root '" + root.string() + "' contains no patient folders");
  std::sort(dirs.begin(), dirs.end());

  IngestResult out;
  for (const auto& pdir : dirs) {
    PatientStudy s;
    s.id = pdir.filename().string();
    try {
      if (fs::exists(pdir / "patient.json")) s.fold = detail::read_fold(pdir / "patient.json");
      std::vector<fs::path> tps;
      for (const auto& e : fs::directory_iterator(pdir)) {
        if (e.is_directory()) tps.push_back(e.path());
      }
      std::sort(tps.begin(), tps.end());
      for (const auto& tdir : tps) {
        const std::string name = tdir.filename().string();
        if (name != "preop" && name != "postop") {
          out.diagnostics.push_back(s.id + ": ignoring folder '" + name + "' (expected preop or postop)");
          continue;
        }
        TimepointInputs in = detail::ingest_timepoint(tdir, s.id, name, opt);
        if (in.empty()) {
          out.diagnostics.push_back(s.id + ": " + name + " has no volumes, ignored");
          continue;
        }
        s.timepoints.emplace(timepoint_from_string(name), std::move(in));
      }
      if (s.timepoints.empty()) throw IngestError("no usable timepoint folders");
    } catch (const std::exception& e) {
      out.diagnostics.push_back(s.id + ": skipped: " + e.what());
      continue;
    }
    out.studies.push_back(std::move(s));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Deterministic patient-level parallelism

/// Runs f(i) for i in [0, n) on up to `jobs` threads. Callers store results
/// by index, so output order never depends on scheduling.
inline void parallel_for(std::size_t n, std::size_t jobs, const std::function<void(std::size_t)>& f) {
  jobs = std::max<std::size_t>(1, std::min(jobs, n));
  if (jobs == 1) {
    for (std::size_t i = 0; i < n; ++i) f(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(jobs);
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < jobs; ++t) {
    pool.emplace_back([&, t] {
      try {
        for (std::size_t i = next++; i < n; i = next++) f(i);
      } catch (...) {
        errors[t] = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

// ---------------------------------------------------------------------------
// Reports

struct ReportOptions {
  bool toy_predictor = false;
  /// Probability maps given on the command line, used when the study has none for that slot.
  std::map<Timepoint, std::map<StructureKind, fs::path>> extra_prob_maps;
  std::optional<fs::path> output_dir;  // writes <dir>/<patient>/... when set
  std::string mask_extension = ".nii.gz";
};

struct TimepointOutput {
  StructureSet refined;
  TimepointFeatures features;
};

namespace detail {

// Runs preprocessing and the toy predictor on the timepoint's sequences and
// returns a map on the resampled (uncropped) grid.
inline ProbabilityMap toy_reference_map(const TimepointInputs& in, const PipelineConfig& cfg) {
  std::vector<ScalarVolume> chans;
  for (auto tag : kSequenceTags) {
    auto it = in.sequences.find(tag);
    if (it != in.sequences.end()) chans.push_back(read_volume(it->second));
  }
  if (chans.empty()) throw std::invalid_argument("toy predictor needs at least one sequence");
  const PreprocessResult pre = preprocess_chain(chans, {}, cfg.prep);
  const ToyPredictor predictor;
  const ProbabilityMap cropped = tta_predict(pre.channels, predictor, cfg.infer);
  GridGeometry full = pre.resampled_geometry;
  ProbabilityMap out(full);
  insert_box(out, cropped, pre.crop_box.lo);
  return out;
}

}  // namespace detail

inline TimepointOutput process_timepoint(const TimepointInputs& in, Timepoint tp, const PipelineConfig& cfg,
                                         const ReportOptions& opt) {
  StructureSet set(tp, cfg.enhancement);
  std::optional<BinaryMask> brain;
  if (auto it = in.masks.find(StructureKind::Brain); it != in.masks.end()) brain = read_mask(it->second);

  std::map<StructureKind, fs::path> probs = in.prob_maps;
  if (auto it = opt.extra_prob_maps.find(tp); it != opt.extra_prob_maps.end()) {
    for (const auto& [k, p] : it->second) probs.emplace(k, p);
  }

  for (const auto& [kind, path] : in.masks) set.set(kind, kind == StructureKind::Brain ? *brain : read_mask(path));
  for (const auto& [kind, path] : probs) {
    if (set.has(kind)) continue;  // an explicit mask wins over a probability map
    const ProbabilityMap p = read_probability(path);
    if (kind == StructureKind::Brain) {
      brain = binarize(p, cfg.threshold);
      set.set(kind, *brain);
      continue;
    }
    set.set(kind, postprocess(p, brain ? &*brain : nullptr, cfg.threshold, cfg.postprocess).mask);
  }

  const StructureKind ref = reference_structure(cfg.enhancement, tp);
  if (!set.has(ref) && opt.toy_predictor && !in.sequences.empty()) {
    const ProbabilityMap p = detail::toy_reference_map(in, cfg);
    set.set(ref, postprocess(p, brain ? &*brain : nullptr, cfg.threshold, cfg.postprocess).mask);
    set.add_note("reference structure '" + std::string(to_string(ref)) + "' predicted by the toy predictor");
  }

  StructureSet refined = set;
  try {
    refined = refine(set);
  } catch (const RefinementError& e) {
    refined.add_note(std::string("warning: refinement skipped: ") + e.what());
  }
  TimepointOutput out{refined, timepoint_features(refined, brain ? &*brain : nullptr, cfg.report)};
  return out;
}

struct ReportResult {
  SurgicalReport report;
  std::map<Timepoint, TimepointOutput> timepoints;
};

inline ReportResult run_report(const PatientStudy& study, const PipelineConfig& cfg, const ReportOptions& opt = {}) {
  ReportResult r;
  for (const auto& [tp, in] : study.timepoints) r.timepoints.emplace(tp, process_timepoint(in, tp, cfg, opt));

  auto pre = r.timepoints.find(Timepoint::Preop);
  auto post = r.timepoints.find(Timepoint::Postop);
  if (pre != r.timepoints.end() && post != r.timepoints.end()) {
    r.report = build_surgical_report(pre->second.features, post->second.features, cfg.resection);
  } else if (pre != r.timepoints.end()) {
    r.report.timepoints = {pre->second.features};
  } else {
    r.report.timepoints = {post->second.features};
    SurgicalAssessment s;
    s.resection_class = ResectionClass::NotApplicable;
    s.notes.push_back("warning: no preoperative timepoint; resection cannot be assessed");
    r.report.surgical = s;
  }
  r.report.patient_id = study.id;
  r.report.config_echo = config_to_json(cfg);

  if (opt.output_dir) {
    const fs::path dir = *opt.output_dir / study.id;
    fs::create_directories(dir);
    for (const auto& [tp, t] : r.timepoints) {
      const fs::path tdir = dir / std::string(to_string(tp));
      fs::create_directories(tdir);
      write_text_atomic(tdir / "features.json", format_json(to_json(t.features)));
      for (const auto& [kind, mask] : t.refined.masks()) {
        write_volume(mask, tdir / (std::string(to_string(kind)) + opt.mask_extension));
      }
    }
    write_text_atomic(dir / "report.json", format_json(to_json(r.report)));
  }
  return r;
}

struct BatchReportResult {
  std::vector<std::optional<SurgicalReport>> reports;  // parallel to the studies
  std::vector<std::string> diagnostics;
};

inline BatchReportResult run_reports(const std::vector<PatientStudy>& studies, const PipelineConfig& cfg,
                                     const ReportOptions& opt, std::size_t jobs) {
  BatchReportResult out;
  out.reports.resize(studies.size());
  std::vector<std::string> errors(studies.size());
  parallel_for(studies.size(), jobs, [&](std::size_t i) {
    try {
      out.reports[i] = run_report(studies[i], cfg, opt).report;
    } catch (const std::exception& e) {
      errors[i] = studies[i].id + ": report failed: " + e.what();
    }
  });
  for (auto& e : errors) {
    if (!e.empty()) out.diagnostics.push_back(std::move(e));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Segmentation evaluation

struct EvalSample {
  std::string id;
  int fold = 0;
  fs::path prob;
  fs::path gt;
  std::optional<fs::path> brain;
};

/// One sample per (patient, timepoint) holding both prob_<kind> and gt_<kind>.
/// The id is the patient id, suffixed with the timepoint when a patient has both.
inline std::vector<EvalSample> collect_eval_samples(const std::vector<PatientStudy>& studies, StructureKind kind,
                                                    std::vector<std::string>& diagnostics) {
  std::vector<EvalSample> out;
  for (const auto& s : studies) {
    std::vector<std::pair<Timepoint, const TimepointInputs*>> usable;
    for (const auto& [tp, in] : s.timepoints) {
      const bool has_p = in.prob_maps.count(kind) != 0;
      const bool has_g = in.gt_masks.count(kind) != 0;
      if (has_p && !has_g) diagnostics.push_back(s.id + ": " + std::string(to_string(tp)) + " has no ground truth for '" +
                                                 std::string(to_string(kind)) + "', skipped");
      if (has_p && has_g) usable.emplace_back(tp, &in);
    }
    if (usable.empty()) continue;
    if (!s.fold) {
      diagnostics.push_back(s.id + ": no fold id (patient.json), skipped");
      continue;
    }
    for (const auto& [tp, in] : usable) {
      EvalSample e;
      e.id = usable.size() > 1 ? s.id + "/" + std::string(to_string(tp)) : s.id;
      e.fold = *s.fold;
      e.prob = in->prob_maps.at(kind);
      e.gt = in->gt_masks.at(kind);
      if (auto it = in->masks.find(StructureKind::Brain); it != in->masks.end()) e.brain = it->second;
      out.push_back(std::move(e));
    }
  }
  std::sort(out.begin(), out.end(), [](const EvalSample& a, const EvalSample& b) { return a.id < b.id; });
  return out;
}

struct ThresholdMean {
  double threshold = 0.0;
  std::optional<double> mean_voxel_dice;
  std::size_t n_positive = 0;
};

struct EvalSegResult {
  StructureKind kind = StructureKind::TumorCore;
  std::vector<EvalRecord> records;  // by sample id, then threshold
  std::vector<ThresholdMean> sweep;
  double best_threshold = 0.0;
  FoldSummary summary;
  std::vector<std::string> diagnostics;
};

inline EvalSegResult run_eval_seg(const std::vector<EvalSample>& samples, StructureKind kind, const PipelineConfig& cfg,
                                  std::size_t jobs) {
  const EvalParams params = cfg.eval_params();
  EvalSegResult r;
  r.kind = kind;
  std::vector<std::vector<EvalRecord>> per(samples.size());
  std::vector<std::string> errors(samples.size());
  parallel_for(samples.size(), jobs, [&](std::size_t i) {
    const auto& s = samples[i];
    try {
      const ProbabilityMap p = read_probability(s.prob);
      const BinaryMask g = read_mask(s.gt);
      std::optional<BinaryMask> brain;
      if (s.brain) brain = read_mask(*s.brain);
      auto recs = sweep_thresholds(p, g, kind, params, cfg.cutoffs, brain ? &*brain : nullptr);
      for (auto& rec : recs) {
        rec.sample_id = s.id;
        rec.fold = s.fold;
      }
      per[i] = std::move(recs);
    } catch (const std::exception& e) {
      errors[i] = s.id + ": skipped: " + e.what();
    }
  });
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (!errors[i].empty()) r.diagnostics.push_back(errors[i]);
    for (auto& rec : per[i]) r.records.push_back(std::move(rec));
  }
  if (r.records.empty()) throw EvaluationError("no sample could be evaluated");

  for (double t : params.thresholds) {
    ThresholdMean m;
    m.threshold = t;
    double sum = 0.0;
    for (const auto& rec : r.records) {
      if (rec.threshold == t && rec.gt_positive && rec.voxel.dice) {
        sum += *rec.voxel.dice;
        ++m.n_positive;
      }
    }
    if (m.n_positive) m.mean_voxel_dice = sum / static_cast<double>(m.n_positive);
    r.sweep.push_back(m);
  }
  try {
    r.best_threshold = select_best_threshold(r.records);
    std::vector<EvalRecord> best;
    for (const auto& rec : r.records) {
      if (rec.threshold == r.best_threshold) best.push_back(rec);
    }
    r.summary = pool_folds(best, params.n_folds);
  } catch (const std::invalid_argument& e) {
    throw EvaluationError(e.what());
  }
  return r;
}

inline const std::vector<std::string>& eval_csv_columns() {
  static const std::vector<std::string> cols{
      "sample_id",      "fold",          "threshold",       "gt_positive",    "pred_positive",
      "outcome",        "gt_volume_ml",  "pred_volume_ml",  "voxel_dice",     "voxel_recall",
      "voxel_precision", "voxel_hd95_mm", "object_dice",    "object_recall",  "object_precision",
      "object_hd95_mm", "object_dice_zero_filled", "n_gt_objects", "n_pred_objects", "n_matched"};
  return cols;
}

inline std::string eval_records_csv(const std::vector<EvalRecord>& records) {
  std::ostringstream os;
  const auto& cols = eval_csv_columns();
  for (std::size_t i = 0; i < cols.size(); ++i) os << (i ? "," : "") << cols[i];
  os << "\n";
  auto opt = [](const std::optional<double>& v) { return v ? format_number(*v) : std::string(); };
  for (const auto& r : records) {
    os << r.sample_id << ',' << r.fold << ',' << format_number(r.threshold) << ',' << (r.gt_positive ? 1 : 0) << ','
       << (r.pred_positive ? 1 : 0) << ',' << to_string(r.outcome) << ',' << format_number(r.gt_volume_ml) << ','
       << format_number(r.pred_volume_ml) << ',' << opt(r.voxel.dice) << ',' << opt(r.voxel.recall) << ','
       << opt(r.voxel.precision) << ',' << opt(r.voxel_hd95_mm) << ',' << opt(r.object.dice) << ','
       << opt(r.object.recall) << ',' << opt(r.object.precision) << ',' << opt(r.object.hd95_mm) << ','
       << opt(r.object.dice_zero_filled) << ',' << r.object.n_gt_objects << ',' << r.object.n_pred_objects << ','
       << r.object.n_matched << "\n";
  }
  return os.str();
}

inline nlohmann::json to_json(const MetricSummary& m) {
  return {{"mean", detail::opt_json(m.mean)}, {"std", detail::opt_json(m.std)}, {"n", m.n}, {"n_undefined", m.n_undefined}};
}

inline nlohmann::json eval_summary_json(const EvalSegResult& r, const PipelineConfig& cfg) {
  using nlohmann::json;
  const auto& s = r.summary;
  json folds = json::object();
  for (const auto& [f, n] : s.samples_per_fold) folds[std::to_string(f)] = n;
  json metrics = json::object();
  for (const auto& [name, m] : s.metrics) metrics[name] = to_json(m);
  json sweep = json::array();
  for (const auto& t : r.sweep) {
    sweep.push_back({{"threshold", t.threshold}, {"mean_voxel_dice", detail::opt_json(t.mean_voxel_dice)}, {"n_positive", t.n_positive}});
  }
  return {{"structure", to_string(r.kind)},
          {"best_threshold", r.best_threshold},
          {"n_samples", s.n_samples},
          {"n_positive", s.n_positive},
          {"samples_per_fold", folds},
          {"patient",
           {{"tp", s.counts.tp},
            {"fp", s.counts.fp},
            {"tn", s.counts.tn},
            {"fn", s.counts.fn},
            {"recall", detail::opt_json(s.rates.recall)},
            {"precision", detail::opt_json(s.rates.precision)},
            {"specificity", detail::opt_json(s.rates.specificity)},
            {"balanced_accuracy", detail::opt_json(s.rates.balanced_accuracy)}}},
          {"metrics", metrics},
          {"threshold_sweep", sweep},
          {"diagnostics", r.diagnostics},
          {"config_echo", config_to_json(cfg)},
          {"version", kToolkitVersion}};
}

inline void write_eval_seg(const EvalSegResult& r, const PipelineConfig& cfg, const fs::path& out_dir) {
  fs::create_directories(out_dir);
  write_text_atomic(out_dir / "eval_records.csv", eval_records_csv(r.records));
  write_text_atomic(out_dir / "eval_summary.json", format_json(eval_summary_json(r, cfg)));
}

// ---------------------------------------------------------------------------
// Classification evaluation

struct EvalClsResult {
  ConfusionMatrix matrix;
  ClassificationMetrics metrics;
};

inline EvalClsResult run_eval_cls(const fs::path& labels_csv, const PipelineConfig& cfg) {
  const auto rows = read_csv(labels_csv, {"sample_id", "gt_label", "pred_label"});
  if (rows.empty()) throw EvaluationError(labels_csv.string() + ": no samples");
  const auto& classes = cfg.classification.classes;
  auto index_of = [&](const std::string& name, std::size_t line) {
    auto it = std::find(classes.begin(), classes.end(), name);
    if (it == classes.end()) {
      throw EvaluationError(labels_csv.string() + ": line " + std::to_string(line) + ": unknown class '" + name + "'");
    }
    return static_cast<std::size_t>(it - classes.begin());
  };
  std::vector<std::size_t> gt, pred;
  std::set<std::string> ids;
  for (const auto& [line, r] : rows) {
    if (!ids.insert(r[0]).second) {
      throw EvaluationError(labels_csv.string() + ": line " + std::to_string(line) + ": duplicate sample id '" + r[0] + "'");
    }
    gt.push_back(index_of(r[1], line));
    pred.push_back(index_of(r[2], line));
  }
  EvalClsResult out;
  out.matrix = confusion_matrix(gt, pred, classes.size(), classes);
  out.metrics = multiclass_metrics(out.matrix, cfg.classification.averaging);
  return out;
}

inline nlohmann::json eval_cls_json(const EvalClsResult& r, const PipelineConfig& cfg) {
  using nlohmann::json;
  const auto& m = r.metrics;
  json per = json::object();
  for (std::size_t c = 0; c < m.per_class.size(); ++c) {
    const auto& pc = m.per_class[c];
    per[r.matrix.class_names[c]] = {{"recall", detail::opt_json(pc.recall)},
                                    {"precision", detail::opt_json(pc.precision)},
                                    {"specificity", detail::opt_json(pc.specificity)},
                                    {"f1", detail::opt_json(pc.f1)}};
  }
  return {{"classes", r.matrix.class_names},
          {"n_samples", r.matrix.total()},
          {"averaging", cfg.classification.averaging == Averaging::Macro ? "macro" : "micro"},
          {"recall", detail::opt_json(m.recall)},
          {"precision", detail::opt_json(m.precision)},
          {"specificity", detail::opt_json(m.specificity)},
          {"f1", detail::opt_json(m.f1)},
          {"accuracy", m.accuracy},
          {"balanced_accuracy", detail::opt_json(m.balanced_accuracy)},
          {"excluded",
           {{"recall", m.excluded_recall},
            {"precision", m.excluded_precision},
            {"specificity", m.excluded_specificity},
            {"f1", m.excluded_f1}}},
          {"per_class", per},
          {"config_echo", config_to_json(cfg)},
          {"version", kToolkitVersion}};
}

inline std::string confusion_csv(const ConfusionMatrix& cm) {
  std::ostringstream os;
  os << "gt\\pred";
  for (const auto& n : cm.class_names) os << ',' << n;
  os << "\n";
  for (std::size_t g = 0; g < cm.n_classes; ++g) {
    os << cm.class_names[g];
    for (std::size_t p = 0; p < cm.n_classes; ++p) os << ',' << cm.at(g, p);
    os << "\n";
  }
  return os.str();
}

// ---------------------------------------------------------------------------
// Phantom writers

/// Writes a pre/postop phantom patient: sequences plus truth masks as
/// mask_<kind>, and analytic_volumes.json next to the timepoint folders.
inline void write_phantom_patient(const fs::path& patient_dir, const PhantomSpec& spec, const std::string& ext = ".nii.gz") {
  nlohmann::json analytic = nlohmann::json::object();
  for (auto tp : {Timepoint::Preop, Timepoint::Postop}) {
    const Phantom ph = tp == Timepoint::Preop ? generate_preop(spec) : generate_postop(spec);
    const fs::path dir = patient_dir / std::string(to_string(tp));
    fs::create_directories(dir);
    for (std::size_t c = 0; c < ph.channels.size(); ++c) write_volume(ph.channels[c], dir / (std::string(kSequenceTags[c]) + ext));
    for (const auto& [kind, mask] : ph.truth.masks()) write_volume(mask, dir / ("mask_" + std::string(to_string(kind)) + ext));
    analytic[std::string(to_string(tp))] = analytic_json(ph.analytic_ml);
  }
  write_text_atomic(patient_dir / "analytic_volumes.json", format_json(analytic));
}

/// Evaluation cohort: root/pNNN/preop/{gt_tc, prob_tc, mask_brain} and
/// patient.json with folds 1..5 assigned round robin.
inline void write_phantom_cohort(const fs::path& root, std::size_t n, std::uint64_t seed, Dims dims, std::size_t jobs,
                                 const std::string& ext = ".nii.gz") {
  fs::create_directories(root);
  parallel_for(n, jobs, [&](std::size_t i) {
    const auto [spec, pert] = cohort_member(seed, i, dims);
    char name[32];
    std::snprintf(name, sizeof name, "p%03zu", i);
    const fs::path dir = root / name / "preop";
    fs::create_directories(dir);
    const Phantom ph = generate_preop(spec);
    write_volume(ph.truth.get(StructureKind::TumorCore), dir / ("gt_tc" + ext));
    write_volume(ph.truth.get(StructureKind::Brain), dir / ("mask_brain" + ext));
    write_volume(phantom_probability(spec, StructureKind::TumorCore, pert), dir / ("prob_tc" + ext));
    write_text_atomic(root / name / "patient.json", format_json({{"fold", static_cast<int>(i % 5) + 1}}));
  });
}

}  // namespace rk
