// resectkit command-line front end.
#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "resectkit/pipeline.hpp"

namespace {

enum ExitCode { kOk = 0, kUsage = 1, kConfig = 2, kIngest = 3, kEval = 4, kRuntime = 5 };

struct Shared {
  std::string config;
  std::string input;
  std::string output;
  std::size_t jobs = 1;
  std::optional<double> threshold;
  std::string structure = "tc";
  std::string fusion;
};

rk::PipelineConfig load(const Shared& s) {
  rk::PipelineConfig cfg = s.config.empty() ? rk::PipelineConfig{} : rk::load_config(s.config);
  if (s.threshold) cfg.threshold = *s.threshold;
  if (!s.fusion.empty()) cfg.infer.fusion_mode = rk::fusion_from_string(s.fusion);
  cfg.validate();
  return cfg;
}

void report_diagnostics(const std::vector<std::string>& d) {
  for (const auto& m : d) std::cerr << "warning: " << m << "\n";
}

int cmd_report(const Shared& s, bool toy, const std::vector<std::string>& prob_maps, const std::string& labels_csv) {
  const auto cfg = load(s);
  rk::ExternalLabels external;
  rk::IngestOptions iopt;
  iopt.labels = cfg.sequence_labels;
  if (!labels_csv.empty()) {
    external = rk::read_external_labels(labels_csv);
    iopt.external = &external;
  }
  auto ing = rk::ingest(s.input, iopt);
  report_diagnostics(ing.diagnostics);

  rk::ReportOptions opt;
  opt.toy_predictor = toy;
  opt.output_dir = s.output;
  for (const auto& spec : prob_maps) {
    // [timepoint:]kind=file
    const auto eq = spec.find('=');
    if (eq == std::string::npos) throw rk::ConfigError("--prob-map expects [timepoint:]kind=file, got '" + spec + "'");
    std::string key = spec.substr(0, eq);
    rk::Timepoint tp = rk::Timepoint::Preop;
    if (const auto colon = key.find(':'); colon != std::string::npos) {
      tp = rk::timepoint_from_string(key.substr(0, colon));
      key = key.substr(colon + 1);
    }
    opt.extra_prob_maps[tp][rk::structure_from_string(key)] = spec.substr(eq + 1);
  }
  if (!opt.extra_prob_maps.empty() && ing.studies.size() != 1) {
    throw rk::ConfigError("--prob-map can only be used when the input holds exactly one patient");
  }

  const auto res = rk::run_reports(ing.studies, cfg, opt, s.jobs);
  report_diagnostics(res.diagnostics);
  nlohmann::json patients = nlohmann::json::array();
  for (std::size_t i = 0; i < ing.studies.size(); ++i) {
    const auto& r = res.reports[i];
    nlohmann::json p{{"patient_id", ing.studies[i].id}, {"status", r ? "ok" : "failed"}};
    if (r && r->surgical) p["resection_class"] = rk::to_string(r->surgical->resection_class);
    patients.push_back(p);
  }
  std::vector<std::string> diags = ing.diagnostics;
  diags.insert(diags.end(), res.diagnostics.begin(), res.diagnostics.end());
  rk::write_text_atomic(std::filesystem::path(s.output) / "summary.json",
                        rk::format_json({{"patients", patients},
                                         {"diagnostics", diags},
                                         {"config_echo", rk::config_to_json(cfg)},
                                         {"version", rk::kToolkitVersion}}));
  std::size_t ok = 0;
  for (const auto& r : res.reports) ok += r.has_value();
  std::cout << ok << " of " << ing.studies.size() << " reports written to " << s.output << "\n";
  return ok == 0 ? kEval : kOk;
}

int cmd_eval_seg(const Shared& s) {
  auto cfg = load(s);
  if (s.threshold) cfg.eval.thresholds = {*s.threshold};
  cfg.validate();
  const auto kind = rk::structure_from_string(s.structure);
  auto ing = rk::ingest(s.input, {cfg.sequence_labels, nullptr});
  std::vector<std::string> diags = ing.diagnostics;
  const auto samples = rk::collect_eval_samples(ing.studies, kind, diags);
  if (samples.empty()) throw rk::IngestError("no patient has both prob_" + s.structure + " and gt_" + s.structure);
  auto r = rk::run_eval_seg(samples, kind, cfg, s.jobs);
  diags.insert(diags.end(), r.diagnostics.begin(), r.diagnostics.end());
  r.diagnostics = diags;
  report_diagnostics(diags);
  rk::write_eval_seg(r, cfg, s.output);
  const auto& dice = r.summary.metrics.at("voxel_dice");
  std::cout << "structure " << s.structure << ": " << r.summary.n_samples << " samples, best threshold "
            << rk::format_number(r.best_threshold) << ", voxel dice "
            << (dice.mean ? rk::format_number(*dice.mean) : "n/a") << " +- "
            << (dice.std ? rk::format_number(*dice.std) : "n/a") << "\n";
  return kOk;
}

int cmd_eval_cls(const Shared& s) {
  const auto cfg = load(s);
  const auto r = rk::run_eval_cls(s.input, cfg);
  std::filesystem::create_directories(s.output);
  rk::write_text_atomic(std::filesystem::path(s.output) / "metrics.json", rk::format_json(rk::eval_cls_json(r, cfg)));
  rk::write_text_atomic(std::filesystem::path(s.output) / "confusion.csv", rk::confusion_csv(r.matrix));
  std::cout << "accuracy " << rk::format_number(r.metrics.accuracy) << ", balanced accuracy "
            << (r.metrics.balanced_accuracy ? rk::format_number(*r.metrics.balanced_accuracy) : "n/a") << "\n";
  return kOk;
}

struct PhantomArgs {
  std::uint64_t seed = 1;
  std::vector<std::size_t> dims{128, 128, 128};
  double spacing = 1.0;
  double radius = 10.0;
  double residual_ml = 0.0;
  double noise = 0.0;
  std::size_t cohort = 0;
  std::string id = "phantom";
  std::string format = "nii.gz";
};

int cmd_phantom(const Shared& s, const PhantomArgs& a) {
  if (a.dims.size() != 3) throw rk::ConfigError("--dims expects three values");
  const std::string ext = "." + a.format;
  if (ext != ".nii.gz" && ext != ".nii" && ext != ".rawj") throw rk::ConfigError("--format must be nii.gz, nii or rawj");
  const rk::Dims dims{a.dims[0], a.dims[1], a.dims[2]};
  if (a.cohort > 0) {
    rk::write_phantom_cohort(s.output, a.cohort, a.seed, dims, s.jobs, ext);
    std::cout << a.cohort << " phantom patients written to " << s.output << "\n";
    return kOk;
  }
  rk::PhantomSpec spec;
  spec.seed = a.seed;
  spec.dims = dims;
  spec.spacing = {a.spacing, a.spacing, a.spacing};
  const double scale = static_cast<double>(std::min({dims.x, dims.y, dims.z})) * a.spacing / 128.0;
  spec.brain_semi_axes_mm = {55.0 * scale, 60.0 * scale, 50.0 * scale};
  const auto c = spec.brain_center_mm();
  spec.tumor_center_mm = {c[0] + 18.0 * scale, c[1] + 7.0 * scale, c[2] + 3.0 * scale};
  spec.tumor_radius_mm = a.radius;
  spec.rim_thickness_mm = 0.3 * a.radius;
  spec.cavity_radius_mm = 0.6 * a.radius;
  spec.noise_amplitude = a.noise;
  spec.residual_fraction = rk::residual_fraction_for(spec, a.residual_ml);
  try {
    spec.validate();
  } catch (const std::invalid_argument& e) {
    throw rk::ConfigError(e.what());
  }
  rk::write_phantom_patient(std::filesystem::path(s.output) / a.id, spec, ext);
  std::cout << "phantom '" << a.id << "' written to " << s.output << "\n";
  return kOk;
}

std::vector<std::filesystem::path> volume_inputs(const std::vector<std::string>& inputs) {
  std::vector<std::filesystem::path> out;
  for (const auto& in : inputs) {
    if (std::filesystem::is_directory(in)) {
      std::vector<std::filesystem::path> files;
      for (const auto& e : std::filesystem::directory_iterator(in)) {
        if (e.is_regular_file() && rk::is_volume_path(e.path())) files.push_back(e.path());
      }
      std::sort(files.begin(), files.end());
      out.insert(out.end(), files.begin(), files.end());
    } else {
      out.emplace_back(in);
    }
  }
  if (out.empty()) throw rk::IngestError("no input volumes");
  return out;
}

int cmd_preprocess(const Shared& s, const std::vector<std::string>& inputs, const std::vector<std::string>& subtract) {
  const auto cfg = load(s);
  const auto files = volume_inputs(inputs);
  std::vector<rk::ScalarVolume> vols;
  std::vector<std::string> names;
  for (const auto& f : files) {
    vols.push_back(rk::read_volume(f));
    names.push_back(rk::volume_stem(f));
  }
  std::vector<rk::SubtractionPair> pairs;
  for (const auto& p : subtract) {
    const auto dash = p.find('-');
    if (dash == std::string::npos) throw rk::ConfigError("--subtract expects a-b, got '" + p + "'");
    auto idx = [&](const std::string& n) {
      auto it = std::find(names.begin(), names.end(), n);
      if (it == names.end()) throw rk::ConfigError("--subtract names unknown input '" + n + "'");
      return static_cast<std::size_t>(it - names.begin());
    };
    pairs.emplace_back(idx(p.substr(0, dash)), idx(p.substr(dash + 1)));
    names.push_back(p.substr(0, dash) + "_minus_" + p.substr(dash + 1));
  }
  const auto res = rk::preprocess_chain(vols, pairs, cfg.prep);
  std::filesystem::create_directories(s.output);
  for (std::size_t i = 0; i < res.channels.size(); ++i) {
    rk::write_volume(res.channels[i], std::filesystem::path(s.output) / (names[i] + ".nii.gz"));
  }
  const auto& b = res.crop_box;
  rk::write_text_atomic(std::filesystem::path(s.output) / "crop.json",
                        rk::format_json({{"resampled_dims", {res.resampled_geometry.dims.x, res.resampled_geometry.dims.y,
                                                             res.resampled_geometry.dims.z}},
                                         {"box_lo", {b.lo[0], b.lo[1], b.lo[2]}},
                                         {"box_hi", {b.hi[0], b.hi[1], b.hi[2]}},
                                         {"channels", std::vector<std::string>(names.begin(), names.end())},
                                         {"config_echo", rk::config_to_json(cfg)}}));
  std::cout << res.channels.size() << " channels written to " << s.output << "\n";
  return kOk;
}

int cmd_fuse(const Shared& s, const std::vector<std::string>& inputs) {
  const auto cfg = load(s);
  std::vector<rk::ProbabilityMap> maps;
  for (const auto& f : volume_inputs(inputs)) maps.push_back(rk::read_probability(f));
  const auto fused = rk::fuse_probability_maps(maps, cfg.infer.fusion_mode);
  rk::write_volume(fused, s.output);
  std::cout << maps.size() << " maps fused (" << rk::to_string(cfg.infer.fusion_mode) << ") into " << s.output << "\n";
  return kOk;
}

int cmd_postprocess(const Shared& s, const std::string& brain_path, const std::string& prob_out) {
  const auto cfg = load(s);
  const auto p = rk::read_probability(s.input);
  std::optional<rk::BinaryMask> brain;
  if (!brain_path.empty()) brain = rk::read_mask(brain_path);
  const auto r = rk::postprocess(p, brain ? &*brain : nullptr, cfg.threshold, cfg.postprocess);
  rk::write_volume(r.mask, s.output);
  if (!prob_out.empty()) rk::write_volume(r.probabilities, prob_out);
  std::cout << r.removed_components << " components removed, " << r.mask.count() << " voxels kept\n";
  return kOk;
}

void add_shared(CLI::App* app, Shared& s, bool input_required, bool output_required) {
  app->add_option("--config", s.config, "Pipeline configuration (JSON)")->check(CLI::ExistingFile);
  auto* in = app->add_option("--input", s.input, "Input directory or file");
  if (input_required) in->required();
  auto* out = app->add_option("--output", s.output, "Output directory or file");
  if (output_required) out->required();
  app->add_option("--jobs", s.jobs, "Patients processed in parallel")->check(CLI::PositiveNumber);
  app->add_option("--threshold", s.threshold, "Operating probability threshold")->check(CLI::Range(0.0, 1.0));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"resectkit: postoperative CNS tumor segmentation evaluation and surgical reporting"};
  app.require_subcommand(1);
  Shared s;

  auto* report = app.add_subcommand("report", "Per-patient reports from a patient folder tree");
  add_shared(report, s, true, true);
  bool toy = false;
  std::vector<std::string> prob_maps;
  std::string labels_csv;
  report->add_flag("--toy-predictor", toy, "Predict missing reference structures with the built-in toy predictor");
  report->add_option("--prob-map", prob_maps, "Probability map as [timepoint:]kind=file (single-patient input)");
  report->add_option("--sequence-labels", labels_csv, "External sequence labels CSV (patient_id,timepoint,filename,tag)");

  auto* evalseg = app.add_subcommand("eval-seg", "Threshold sweep and pooled cross-validation metrics");
  add_shared(evalseg, s, true, true);
  evalseg->add_option("--structure", s.structure, "Structure to evaluate");

  auto* evalcls = app.add_subcommand("eval-cls", "Classification metrics from a labels CSV (sample_id,gt_label,pred_label)");
  add_shared(evalcls, s, true, true);

  auto* phantom = app.add_subcommand("phantom", "Write a synthetic phantom patient or evaluation cohort");
  add_shared(phantom, s, false, true);
  PhantomArgs pa;
  phantom->add_option("--seed", pa.seed, "Generator seed");
  phantom->add_option("--dims", pa.dims, "Grid dims (3 values)")->expected(3);
  phantom->add_option("--spacing", pa.spacing, "Isotropic spacing in mm")->check(CLI::PositiveNumber);
  phantom->add_option("--tumor-radius", pa.radius, "Tumor radius in mm")->check(CLI::PositiveNumber);
  phantom->add_option("--residual-ml", pa.residual_ml, "Analytic postoperative residual volume in ml")->check(CLI::NonNegativeNumber);
  phantom->add_option("--noise", pa.noise, "Uniform noise amplitude")->check(CLI::NonNegativeNumber);
  phantom->add_option("--cohort", pa.cohort, "Write an evaluation cohort of this many patients instead");
  phantom->add_option("--id", pa.id, "Patient id of a single phantom");
  phantom->add_option("--format", pa.format, "nii.gz, nii or rawj");

  auto* prep = app.add_subcommand("preprocess", "Resample, crop, subtract, clip and normalize input volumes");
  std::vector<std::string> prep_inputs, subtract;
  prep->add_option("--config", s.config, "Pipeline configuration (JSON)")->check(CLI::ExistingFile);
  prep->add_option("--input", prep_inputs, "Input volumes or directories (order defines channels)")->required();
  prep->add_option("--output", s.output, "Output directory")->required();
  prep->add_option("--subtract", subtract, "Difference channel as a-b using input file stems");

  auto* fuse = app.add_subcommand("fuse", "Fuse 1 to 5 probability maps");
  std::vector<std::string> fuse_inputs;
  fuse->add_option("--config", s.config, "Pipeline configuration (JSON)")->check(CLI::ExistingFile);
  fuse->add_option("--input", fuse_inputs, "Probability maps or directories")->required();
  fuse->add_option("--output", s.output, "Output probability map file")->required();
  fuse->add_option("--fusion", s.fusion, "average or amax")->check(CLI::IsMember({"average", "amax"}));

  auto* post = app.add_subcommand("postprocess", "Brain filtering and small-component removal of a probability map");
  add_shared(post, s, true, true);
  std::string brain_path, prob_out;
  post->add_option("--brain", brain_path, "Brain mask")->check(CLI::ExistingFile);
  post->add_option("--prob-output", prob_out, "Also write the cleaned probability map here");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kUsage;
  }

  try {
    if (*report) return cmd_report(s, toy, prob_maps, labels_csv);
    if (*evalseg) return cmd_eval_seg(s);
    if (*evalcls) return cmd_eval_cls(s);
    if (*phantom) return cmd_phantom(s, pa);
    if (*prep) return cmd_preprocess(s, prep_inputs, subtract);
    if (*fuse) return cmd_fuse(s, fuse_inputs);
    if (*post) return cmd_postprocess(s, brain_path, prob_out);
  } catch (const rk::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const rk::IngestError& e) {
    std::cerr << "ingestion error: " << e.what() << "\n";
    return kIngest;
  } catch (const rk::IoError& e) {
    std::cerr << "ingestion error: " << e.what() << "\n";
    return kIngest;
  } catch (const rk::GeometryError& e) {
    std::cerr << "ingestion error: " << e.what() << "\n";
    return kIngest;
  } catch (const rk::EvaluationError& e) {
    std::cerr << "evaluation error: " << e.what() << "\n";
    return kEval;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntime;
  }
  return kUsage;
}
