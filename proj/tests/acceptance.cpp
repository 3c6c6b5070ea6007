// Acceptance checks. Prints one line per criterion and exits nonzero when any fails.
#include <sys/wait.h>
#include <zlib.h>

#include <chrono>
#include <cstring>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>

#include "oracles.hpp"
#include "resectkit/hungarian.hpp"
#include "resectkit/pipeline.hpp"

using namespace rk;
namespace fs = std::filesystem;
using SK = StructureKind;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
  bool pass = true;
  std::ostringstream detail;

  void check(bool ok, const std::string& what) {
    if (!ok && pass) detail << "first failure: " << what << "; ";
    pass = pass && ok;
  }
};

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

BinaryMask first_n(const GridGeometry& g, std::size_t n, std::size_t offset = 0) {
  BinaryMask m(g);
  for (std::size_t i = offset; i < offset + n; ++i) m[i] = 1;
  return m;
}

BinaryMask box(const GridGeometry& g, Index3 lo, Index3 hi) {
  BinaryMask m(g);
  for (std::size_t z = lo[2]; z < hi[2]; ++z)
    for (std::size_t y = lo[1]; y < hi[1]; ++y)
      for (std::size_t x = lo[0]; x < hi[0]; ++x) m.at(x, y, z) = 1;
  return m;
}

ProbabilityMap as_prob(const BinaryMask& m) {
  ProbabilityMap p(m.geometry());
  for (std::size_t i = 0; i < m.size(); ++i) p[i] = m[i] ? 1.0 : 0.0;
  return p;
}

std::vector<std::uint8_t> read_file(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

void write_file(const fs::path& p, const std::vector<std::uint8_t>& bytes) {
  std::ofstream os(p, std::ios::binary);
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

std::vector<std::uint8_t> gunzip_file(const fs::path& p) {
  gzFile f = gzopen(p.string().c_str(), "rb");
  std::vector<std::uint8_t> out;
  std::uint8_t buf[1 << 14];
  int n;
  while ((n = gzread(f, buf, sizeof buf)) > 0) out.insert(out.end(), buf, buf + n);
  gzclose(f);
  return out;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(RESECTKIT_CLI) + " " + args + " >/dev/null 2>&1";
  const int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

// ---------------------------------------------------------------------------

Outcome metric_oracles() {
  Outcome o;
  const auto t0 = Clock::now();
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<std::size_t> dim(1, 16);
  std::uniform_real_distribution<double> fill(0.0, 0.6);
  for (int t = 0; t < 200; ++t) {
    const auto g = oracle::geometry(dim(rng), dim(rng), dim(rng));
    const auto a = oracle::random_mask(rng, g, fill(rng), t % 3);
    const auto b = oracle::random_mask(rng, g, fill(rng), (t + 1) % 3);
    const auto sa = oracle::voxel_set(a), sb = oracle::voxel_set(b);
    const std::size_t both = oracle::intersection_size(sa, sb);
    const auto m = voxel_overlap(a, b);
    const std::optional<double> dice =
        sa.empty() && sb.empty() ? 1.0 : 2.0 * static_cast<double>(both) / static_cast<double>(sa.size() + sb.size());
    const std::optional<double> recall =
        sa.empty() ? std::nullopt : std::optional<double>(static_cast<double>(both) / static_cast<double>(sa.size()));
    const std::optional<double> precision =
        sb.empty() ? std::nullopt : std::optional<double>(static_cast<double>(both) / static_cast<double>(sb.size()));
    o.check(m.dice == dice && m.recall == recall && m.precision == precision, "overlap pair " + std::to_string(t));
  }
  std::uniform_int_distribution<std::size_t> small(1, 12);
  std::uniform_real_distribution<double> sp(0.4, 2.5);
  double worst = 0.0;
  int hd_pairs = 0;
  for (int t = 0; t < 200; ++t) {
    const auto g = oracle::geometry(small(rng), small(rng), small(rng), sp(rng), sp(rng), sp(rng));
    const auto a = oracle::random_mask(rng, g, 0.03 * (t % 5), 1 + t % 3);
    const auto b = oracle::random_mask(rng, g, 0.02 * (t % 4), 1 + (t + 1) % 3);
    const auto h = hd95(a, b);
    if (a.empty() || b.empty()) {
      o.check(!h.has_value(), "hd95 of an empty mask must be undefined");
      continue;
    }
    ++hd_pairs;
    const double err = std::abs(*h - oracle::hd95_brute(a, b));
    worst = std::max(worst, err);
    o.check(err <= 1e-9, "hd95 pair " + std::to_string(t));
  }
  const double secs = seconds_since(t0);
  o.check(secs < 10.0, "runtime");
  o.detail << "200 overlap pairs exact, " << hd_pairs << " hd95 pairs max err " << worst << " mm, " << secs << " s";
  return o;
}

Outcome hungarian() {
  Outcome o;
  std::mt19937_64 rng(99);
  const auto g = oracle::geometry(14, 12, 10);
  int n = 0;
  std::size_t max_objects = 0;
  while (n < 100) {
    const auto gt = oracle::random_mask(rng, g, 0.0, 5);
    const auto pred = oracle::random_mask(rng, g, 0.0, 5);
    const auto fg = oracle::flood_components(gt, 26), fp = oracle::flood_components(pred, 26);
    if (fg.sizes.empty() || fp.sizes.empty()) continue;
    ++n;
    max_objects = std::max({max_objects, fg.sizes.size(), fp.sizes.size()});
    std::vector<std::vector<double>> score(fg.sizes.size(), std::vector<double>(fp.sizes.size(), 0.0));
    for (std::size_t i = 0; i < gt.size(); ++i) {
      if (fg.labels[i] && fp.labels[i]) score[static_cast<std::size_t>(fg.labels[i] - 1)][static_cast<std::size_t>(fp.labels[i] - 1)] += 1.0;
    }
    for (std::size_t a = 0; a < score.size(); ++a)
      for (std::size_t b = 0; b < score[a].size(); ++b) score[a][b] = 2.0 * score[a][b] / static_cast<double>(fg.sizes[a] + fp.sizes[b]);
    const double best = oracle::best_matching_total(score);
    const auto m = objectwise_eval(gt, pred, 1);
    const double total = m.dice ? *m.dice * static_cast<double>(m.n_matched) : 0.0;
    o.check(std::abs(total - best) <= 1e-9, "instance " + std::to_string(n));

    // The solver itself on the same dice matrix.
    const std::size_t r = score.size(), c = score[0].size();
    std::vector<double> cost(r * c);
    for (std::size_t a = 0; a < r; ++a)
      for (std::size_t b = 0; b < c; ++b) cost[a * c + b] = -score[a][b];
    const auto as = solve_assignment(cost, r, c);
    double sum = 0.0;
    std::set<int> used;
    for (std::size_t a = 0; a < r; ++a) {
      if (as.row_to_col[a] < 0) continue;
      o.check(used.insert(as.row_to_col[a]).second, "column used twice");
      sum += score[a][static_cast<std::size_t>(as.row_to_col[a])];
    }
    o.check(used.size() == std::min(r, c) && std::abs(sum - best) <= 1e-9, "assignment instance " + std::to_string(n));
  }
  o.check(max_objects <= 5, "more than 5 components on a side");
  o.detail << n << " instances, up to " << max_objects << " components per side";
  return o;
}

Outcome paper_constants() {
  Outcome o;
  int fixtures = 0;
  const auto g = oracle::geometry(20, 20, 20);
  const StructureCutoffs cut;
  const EvalParams ep;
  o.check(cut.ml.at(SK::ResidualTumor) == 0.175 && cut.ml.at(SK::NETC) == 0.05 && cut.ml.at(SK::ResectionCavity) == 0.1 &&
              cut.ml.at(SK::TumorCore) == 0.1,
          "cutoff defaults");
  o.check(ep.tp_dice_min == 0.001 && ep.min_objects_for(SK::TumorCore) == 75 && ep.min_objects_for(SK::NETC) == 50,
          "evaluation defaults");
  o.check(PostprocParams{}.min_component_ml == 0.05, "postprocessing default");

  // Ground-truth positivity on both sides of each volume cutoff (1 mm voxels).
  const std::vector<std::pair<SK, std::size_t>> cutoffs{
      {SK::ResidualTumor, 175}, {SK::NETC, 50}, {SK::ResectionCavity, 100}, {SK::TumorCore, 100}};
  for (const auto& [kind, at] : cutoffs) {
    const auto pred = first_n(g, at);
    o.check(patient_outcome(first_n(g, at), pred, kind, cut, ep.tp_dice_min) == PatientOutcome::TP,
            std::string(to_string(kind)) + " at cutoff");
    o.check(patient_outcome(first_n(g, at - 1), pred, kind, cut, ep.tp_dice_min) == PatientOutcome::FP,
            std::string(to_string(kind)) + " below cutoff with prediction");
    o.check(patient_outcome(first_n(g, at - 1), BinaryMask(g), kind, cut, ep.tp_dice_min) == PatientOutcome::TN,
            std::string(to_string(kind)) + " below cutoff without prediction");
    o.check(patient_outcome(first_n(g, at), BinaryMask(g), kind, cut, ep.tp_dice_min) == PatientOutcome::FN,
            std::string(to_string(kind)) + " at cutoff missed");
    fixtures += 4;
  }

  // TP dice floor: one shared voxel of 200 gt voxels; dice = 2 / (200 + p).
  const auto gt = first_n(g, 200);
  const auto at_floor = first_n(g, 1800, 199);
  const auto below = first_n(g, 1801, 199);
  o.check(voxel_overlap(gt, at_floor).dice == 0.001, "dice at the floor");
  o.check(patient_outcome(gt, at_floor, SK::TumorCore, cut, ep.tp_dice_min) == PatientOutcome::TP, "dice = 0.001 is TP");
  o.check(patient_outcome(gt, below, SK::TumorCore, cut, ep.tp_dice_min) == PatientOutcome::FN, "dice < 0.001 is FN");
  fixtures += 2;

  // Object minima: 75 voxels (5x5x3) counts for tc, 74 does not; 50 (5x5x2) counts for netc, 49 does not.
  const auto big = box(g, {0, 0, 0}, {5, 5, 3});
  const auto tc75 = big;
  auto tc74 = big;
  tc74.at(4, 4, 2) = 0;
  const auto netc50 = box(g, {0, 0, 0}, {5, 5, 2});
  auto netc49 = netc50;
  netc49.at(4, 4, 1) = 0;
  o.check(objectwise_eval(tc75, tc75, ep.min_objects_for(SK::TumorCore)).n_gt_objects == 1, "75-voxel tc object");
  o.check(objectwise_eval(tc74, tc74, ep.min_objects_for(SK::TumorCore)).n_gt_objects == 0, "74-voxel tc object");
  o.check(objectwise_eval(netc50, netc50, ep.min_objects_for(SK::NETC)).n_gt_objects == 1, "50-voxel netc object");
  o.check(objectwise_eval(netc49, netc49, ep.min_objects_for(SK::NETC)).n_gt_objects == 0, "49-voxel netc object");
  fixtures += 4;

  // Postprocessing floor: 50 voxels = 0.05 ml kept, 49 removed; both span two slices.
  const PostprocParams pp;
  o.check(postprocess(as_prob(netc50), nullptr, 0.5, pp).mask.count() == 50, "0.05 ml component kept");
  o.check(postprocess(as_prob(netc49), nullptr, 0.5, pp).mask.count() == 0, "0.049 ml component removed");
  const auto half = oracle::geometry(20, 20, 20, 0.5, 0.5, 0.5);  // 400 voxels of 0.125 mm^3
  const auto fine400 = box(half, {0, 0, 0}, {10, 10, 4});
  auto fine399 = fine400;
  fine399.at(9, 9, 3) = 0;
  o.check(postprocess(as_prob(fine400), nullptr, 0.5, pp).mask.count() == 400, "0.05 ml at 0.5 mm kept");
  o.check(postprocess(as_prob(fine399), nullptr, 0.5, pp).mask.count() == 0, "below 0.05 ml at 0.5 mm removed");
  fixtures += 4;

  o.detail << fixtures << " boundary fixtures";
  return o;
}

Outcome refinement_invariants() {
  Outcome o;
  std::mt19937_64 rng(500);
  std::uniform_int_distribution<std::size_t> dim(3, 10);
  std::uniform_real_distribution<double> fill(0.05, 0.5);
  auto subset = [](const BinaryMask& a, const BinaryMask& b) {
    const auto sa = oracle::voxel_set(a), sb = oracle::voxel_set(b);
    return oracle::intersection_size(sa, sb) == sa.size();
  };
  auto disjoint = [](const BinaryMask& a, const BinaryMask& b) {
    return oracle::intersection_size(oracle::voxel_set(a), oracle::voxel_set(b)) == 0;
  };
  for (int t = 0; t < 500; ++t) {
    const auto g = oracle::geometry(dim(rng), dim(rng), dim(rng));
    const auto m1 = oracle::random_mask(rng, g, fill(rng), t % 3);
    const auto m2 = oracle::random_mask(rng, g, fill(rng), t % 2);
    const auto m3 = oracle::random_mask(rng, g, fill(rng), 1);

    StructureSet pre(Timepoint::Preop, Enhancement::ContrastEnhancing);
    pre.set(SK::TumorCore, m1);
    pre.set(SK::NETC, m2);
    pre.set(SK::SNFH, m3);
    const auto r = refine(pre);
    const auto& tc = r.get(SK::TumorCore);
    const auto& snfh = r.get(SK::SNFH);
    o.check(subset(r.get(SK::NETC), tc), "netc inside tc, triple " + std::to_string(t));
    o.check(disjoint(snfh, tc), "snfh disjoint from tc, triple " + std::to_string(t));
    o.check(r.get(SK::WholeTumor).count() == tc.count() + snfh.count(), "|wt| = |tc| + |snfh|, triple " + std::to_string(t));
    o.check(refine(r) == r, "preop idempotence, triple " + std::to_string(t));

    StructureSet post(Timepoint::Postop, Enhancement::ContrastEnhancing);
    post.set(SK::ResidualTumor, m1);
    post.set(SK::ResectionCavity, m2);
    post.set(SK::SNFH, m3);
    const auto q = refine(post);
    o.check(disjoint(q.get(SK::SNFH), q.get(SK::ResectionCavity)), "postop snfh disjoint from cavity, triple " + std::to_string(t));
    o.check(disjoint(q.get(SK::SNFH), q.get(SK::ResidualTumor)), "postop snfh disjoint from residual, triple " + std::to_string(t));
    o.check(refine(q) == q, "postop idempotence, triple " + std::to_string(t));
  }
  o.detail << "500 preop and 500 postop triples";
  return o;
}

// Writes a phantom patient whose structures arrive as probability maps, so the
// report goes through postprocessing and refinement.
void write_prob_patient(const fs::path& dir, const PhantomSpec& spec) {
  for (auto tp : {Timepoint::Preop, Timepoint::Postop}) {
    const Phantom ph = tp == Timepoint::Preop ? generate_preop(spec) : generate_postop(spec);
    const fs::path d = dir / std::string(to_string(tp));
    fs::create_directories(d);
    for (const auto& [kind, mask] : ph.truth.masks()) {
      if (kind == SK::Brain) write_volume(mask, d / "mask_brain.nii");
      else write_volume(as_prob(mask), d / ("prob_" + std::string(to_string(kind)) + ".nii"));
    }
  }
}

Outcome phantom_end_to_end() {
  Outcome o;
  const auto root = oracle::temp_dir("acceptance_phantom");
  PhantomSpec near;
  near.residual_fraction = residual_fraction_for(near, 0.5);
  PhantomSpec complete;
  write_prob_patient(root / "near_total", near);
  write_prob_patient(root / "complete", complete);
  const auto ing = ingest(root);
  o.check(ing.studies.size() == 2, "two studies ingested");
  if (ing.studies.size() != 2) return o;

  const double tc_ml = 4.0 / 3.0 * std::numbers::pi * 1000.0 / 1000.0;
  const double analytic_eor = 100.0 * (tc_ml - 0.5) / tc_ml;
  const auto rc = run_report(ing.studies[0], PipelineConfig{}).report;
  const auto rn = run_report(ing.studies[1], PipelineConfig{}).report;
  o.check(ing.studies[1].id == "near_total", "study order");

  double pre_err = 1e9, res_err = 1e9, eor_err = 1e9;
  if (rn.surgical && rn.surgical->preop_reference_ml && rn.surgical->residual_ml && rn.surgical->eor_pct) {
    const auto& s = *rn.surgical;
    const auto* tc = rn.timepoints.front().find(SK::TumorCore);
    pre_err = std::abs(*s.preop_reference_ml - 4.18879) / 4.18879;
    res_err = std::abs(*s.residual_ml - 0.5) / 0.5;
    eor_err = std::abs(*s.eor_pct - analytic_eor);
    o.check(tc && tc->volume_ml == *s.preop_reference_ml, "preop tc feature equals reference volume");
    o.check(pre_err <= 0.02, "preop tc within 2%");
    o.check(res_err <= 0.05, "residual within 5%");
    o.check(eor_err <= 1.0, "eor within 1 point");
    o.check(s.resection_class == ResectionClass::NearTotal, "near total class");
  } else {
    o.check(false, "near-total report incomplete");
  }
  const bool comp = rc.surgical && rc.surgical->resection_class == ResectionClass::Complete && rc.surgical->eor_pct &&
                    *rc.surgical->eor_pct == 100.0;
  o.check(comp, "fraction 0 gives Complete with EOR 100");
  o.detail << "tc err " << 100.0 * pre_err << "%, residual err " << 100.0 * res_err << "%, eor err " << eor_err
           << " points, fraction-0 " << (comp ? "Complete/100" : "wrong");
  return o;
}

Outcome sweep_and_pooling() {
  Outcome o;
  std::mt19937_64 rng(66);
  const EvalParams params;
  const std::vector<double> want_t{0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0};
  o.check(params.thresholds.size() == want_t.size(), "threshold count");
  for (std::size_t i = 0; i < want_t.size() && i < params.thresholds.size(); ++i) {
    o.check(std::abs(params.thresholds[i] - want_t[i]) < 1e-12, "threshold value");
  }
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int t = 0; t < 100; ++t) {
    const auto g = oracle::geometry(12, 11, 10);
    const auto gt = oracle::random_mask(rng, g, 0.05, 3);
    ProbabilityMap p(g);
    const auto blobs = oracle::random_mask(rng, g, 0.0, 4);
    for (std::size_t i = 0; i < p.size(); ++i) p[i] = blobs[i] ? 0.5 + 0.5 * u(rng) : u(rng) * u(rng);
    const auto brain = oracle::random_mask(rng, g, 0.9);
    const SK kind = t % 2 ? SK::ResidualTumor : SK::TumorCore;
    const auto recs = sweep_thresholds(p, gt, kind, params, StructureCutoffs{}, t % 3 ? &brain : nullptr);
    for (std::size_t k = 1; k < recs.size(); ++k) {
      o.check(recs[k].pred_volume_ml <= recs[k - 1].pred_volume_ml, "volume increased, map " + std::to_string(t));
    }
  }

  // Pooling against a single-pass sum / sum-of-squares recomputation.
  double worst = 0.0;
  for (int t = 0; t < 50; ++t) {
    std::vector<EvalRecord> recs;
    double s1 = 0.0, s2 = 0.0;
    std::size_t n = 0;
    for (int k = 0; k < 40; ++k) {
      EvalRecord r;
      r.sample_id = "s" + std::to_string(k);
      r.fold = k % 5 + 1;
      r.threshold = 0.5;
      r.gt_positive = u(rng) < 0.8;
      if (u(rng) < 0.9) r.voxel.dice = u(rng);
      if (r.gt_positive && r.voxel.dice) {
        s1 += *r.voxel.dice;
        s2 += *r.voxel.dice * *r.voxel.dice;
        ++n;
      }
      recs.push_back(r);
    }
    if (n == 0) continue;
    const double mean = s1 / static_cast<double>(n);
    const double sd = std::sqrt(std::max(0.0, s2 / static_cast<double>(n) - mean * mean));
    const auto m = pool_folds(recs).metrics.at("voxel_dice");
    if (!m.mean || !m.std) {
      o.check(false, "pooled voxel dice undefined");
      continue;
    }
    worst = std::max({worst, std::abs(*m.mean - mean), std::abs(*m.std - sd)});
    o.check(std::abs(*m.mean - mean) <= 1e-12 && std::abs(*m.std - sd) <= 1e-12, "pooling round " + std::to_string(t));
  }

  // Perfect maps.
  std::vector<EvalRecord> best;
  for (int k = 0; k < 25; ++k) {
    const auto gt = oracle::random_mask(rng, oracle::geometry(10, 10, 10), 0.15, 3);
    auto recs = sweep_thresholds(as_prob(gt), gt, SK::SNFH, params, StructureCutoffs{});
    for (auto& r : recs) {
      r.fold = k % 5 + 1;
      r.sample_id = std::to_string(k);
    }
    best.insert(best.end(), recs.begin(), recs.end());
  }
  const double bt = select_best_threshold(best);
  std::vector<EvalRecord> at_best;
  for (const auto& r : best) {
    if (r.threshold == bt) at_best.push_back(r);
  }
  const auto pm = pool_folds(at_best).metrics.at("voxel_dice");
  const bool perfect = pm.mean == 1.0 && pm.std == 0.0;
  o.check(perfect, "perfect maps pool to 1.0 +- 0.0");
  o.detail << "100 sweeps monotone, pooling max diff " << worst << ", perfect cohort "
           << (perfect ? "1.0 +- 0.0" : "wrong");
  return o;
}

Outcome classification() {
  Outcome o;
  // rows: ground truth, columns: prediction; class 3 is never predicted.
  const std::vector<std::vector<std::size_t>> rows{{5, 1, 0, 0}, {2, 6, 1, 0}, {0, 1, 4, 0}, {1, 0, 2, 0}};
  std::vector<std::size_t> gt, pred;
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j)
      for (std::size_t k = 0; k < rows[i][j]; ++k) {
        gt.push_back(i);
        pred.push_back(j);
      }
  const auto m = multiclass_metrics(confusion_matrix(gt, pred, 4), Averaging::Macro);
  const double recall = (5.0 / 6.0 + 6.0 / 9.0 + 4.0 / 5.0 + 0.0) / 4.0;
  const double precision = (5.0 / 8.0 + 6.0 / 8.0 + 4.0 / 7.0) / 3.0;
  const double specificity = (14.0 / 17.0 + 12.0 / 14.0 + 15.0 / 18.0 + 20.0 / 20.0) / 4.0;
  const double f1 = (10.0 / 14.0 + 12.0 / 17.0 + 8.0 / 12.0 + 0.0) / 4.0;
  const double accuracy = 15.0 / 23.0;
  const double bacc = (recall + specificity) / 2.0;
  auto near = [](const std::optional<double>& a, double b) { return a && std::abs(*a - b) <= 1e-12; };
  o.check(near(m.recall, recall), "recall");
  o.check(near(m.precision, precision), "precision");
  o.check(m.excluded_precision == 1, "zero-prediction class excluded from precision");
  o.check(near(m.specificity, specificity), "specificity");
  o.check(near(m.f1, f1), "f1");
  o.check(std::abs(m.accuracy - accuracy) <= 1e-12, "accuracy");
  o.check(near(m.balanced_accuracy, bacc), "balanced accuracy");

  std::vector<std::size_t> id;
  for (std::size_t c = 0; c < 4; ++c)
    for (int k = 0; k < 3; ++k) id.push_back(c);
  const auto p = multiclass_metrics(confusion_matrix(id, id, 4));
  o.check(p.recall == 1.0 && p.precision == 1.0 && p.specificity == 1.0 && p.f1 == 1.0 && p.accuracy == 1.0 &&
              p.balanced_accuracy == 1.0,
          "identity matrix");
  o.detail << "macro recall " << *m.recall << ", precision " << *m.precision << " (1 class excluded), bAcc "
           << m.balanced_accuracy.value_or(-1);
  return o;
}

// Single-file NIfTI-1 built field by field.
std::vector<std::uint8_t> nifti_bytes(std::int16_t datatype, float pixdim_x, const char* magic,
                                      const std::vector<std::uint8_t>& payload) {
  std::vector<std::uint8_t> b(352 + payload.size(), 0);
  auto put = [&](std::size_t off, const void* v, std::size_t n) { std::memcpy(b.data() + off, v, n); };
  const std::int32_t hdr = 348;
  put(0, &hdr, 4);
  const std::int16_t dim[8] = {3, 2, 2, 2, 1, 1, 1, 1};
  put(40, dim, 16);
  put(70, &datatype, 2);
  const float pd[8] = {1, pixdim_x, 1, 1, 0, 0, 0, 0};
  put(76, pd, 32);
  const float vox = 352.0f;
  put(108, &vox, 4);
  put(344, magic, 4);
  std::copy(payload.begin(), payload.end(), b.begin() + 352);
  return b;
}

std::optional<IoErrorKind> error_kind(const fs::path& p) {
  try {
    read_volume(p);
  } catch (const IoError& e) {
    return e.kind();
  }
  return std::nullopt;
}

Outcome io_round_trips() {
  Outcome o;
  const auto dir = oracle::temp_dir("acceptance_io");
  std::mt19937_64 rng(8);
  std::normal_distribution<float> n(0.0f, 50.0f);
  ScalarVolume v(oracle::geometry(9, 7, 5, 0.9, 1.1, 3.0));
  for (auto& x : v.data()) x = static_cast<double>(n(rng));
  std::vector<std::uint8_t> want(v.size() * 4);
  for (std::size_t i = 0; i < v.size(); ++i) {
    const float f = static_cast<float>(v[i]);
    std::memcpy(want.data() + 4 * i, &f, 4);
  }
  auto payload_of_read = [](const ScalarVolume& r) {
    std::vector<std::uint8_t> out(r.size() * 4);
    for (std::size_t i = 0; i < r.size(); ++i) {
      const float f = static_cast<float>(r[i]);
      std::memcpy(out.data() + 4 * i, &f, 4);
    }
    return out;
  };
  int trips = 0;
  for (const char* name : {"v.nii", "v.nii.gz"}) {
    write_volume(v, dir / name);
    const auto raw = std::string(name).ends_with(".gz") ? gunzip_file(dir / name) : read_file(dir / name);
    o.check(raw.size() == 352 + want.size() && std::equal(want.begin(), want.end(), raw.begin() + 352),
            std::string(name) + " file payload");
    o.check(payload_of_read(read_volume(dir / name)) == want, std::string(name) + " read payload");
    ++trips;
  }
  for (bool gz : {false, true}) {
    const auto p = dir / (gz ? "c.rawj" : "u.rawj");
    write_volume(v, p, {gz});
    const auto bin = rawj::payload_path(p, gz);
    const auto raw = gz ? gunzip_file(bin) : read_file(bin);
    o.check(raw == want, std::string("rawj file payload, gzip ") + (gz ? "on" : "off"));
    o.check(payload_of_read(read_volume(p)) == want, "rawj read payload");
    ++trips;
  }
  BinaryMask m(v.geometry());
  for (std::size_t i = 0; i < m.size(); i += 3) m[i] = 1;
  for (const char* name : {"m.nii.gz", "m.rawj"}) {
    write_volume(m, dir / name);
    o.check(read_mask(dir / name) == m, std::string(name) + " mask");
    ++trips;
  }

  const std::vector<std::uint8_t> zeros(32, 0);
  std::vector<std::uint8_t> nan_payload = zeros;
  const float q = std::nanf("");
  std::memcpy(nan_payload.data(), &q, 4);
  const std::vector<std::pair<std::vector<std::uint8_t>, IoErrorKind>> bad{
      {nifti_bytes(16, 1.0f, "ni1", zeros), IoErrorKind::BadMagic},
      {nifti_bytes(64, 1.0f, "n+1", zeros), IoErrorKind::UnsupportedDatatype},
      {nifti_bytes(16, 1.0f, "n+1", std::vector<std::uint8_t>(31, 0)), IoErrorKind::TruncatedPayload},
      {nifti_bytes(16, -1.0f, "n+1", zeros), IoErrorKind::NonpositiveSpacing},
      {nifti_bytes(16, 1.0f, "n+1", nan_payload), IoErrorKind::NonFiniteValue},
      {std::vector<std::uint8_t>(100, 0), IoErrorKind::BadHeader},
  };
  std::set<IoErrorKind> seen;
  for (std::size_t k = 0; k < bad.size(); ++k) {
    const auto p = dir / ("bad" + std::to_string(k) + ".nii");
    write_file(p, bad[k].first);
    const auto kind = error_kind(p);
    o.check(kind == bad[k].second, std::string("malformed nifti ") + std::to_string(k));
    if (kind) seen.insert(*kind);
  }
  std::ofstream(dir / "a.rawj") << "not json";
  std::ofstream(dir / "b.rawj") << R"({"dims":[2,2,2],"spacing_mm":[1,1,1],"dtype":"float64"})";
  std::ofstream(dir / "c.rawj") << R"({"dims":[2,2,2],"spacing_mm":[1,0,1],"dtype":"uint8"})";
  std::ofstream(dir / "d.rawj") << R"({"dims":[2,2,2],"spacing_mm":[1,1,1],"dtype":"uint8"})";
  write_file(dir / "d.bin", std::vector<std::uint8_t>(7, 0));
  o.check(error_kind(dir / "a.rawj") == IoErrorKind::BadMagic, "rawj not json");
  o.check(error_kind(dir / "b.rawj") == IoErrorKind::UnsupportedDatatype, "rawj dtype");
  o.check(error_kind(dir / "c.rawj") == IoErrorKind::NonpositiveSpacing, "rawj spacing");
  o.check(error_kind(dir / "d.rawj") == IoErrorKind::TruncatedPayload, "rawj truncated");
  o.check(seen.size() == bad.size(), "nifti diagnostics distinct");
  o.detail << trips << " round trips bit-exact, " << seen.size() << " distinct nifti diagnostics, 4 rawj diagnostics";
  return o;
}

Outcome determinism_and_throughput() {
  Outcome o;
  const auto dir = oracle::temp_dir("acceptance_cohort");
  const std::string d = dir.string();
  const auto tg = Clock::now();
  const int gen = run_cli("phantom --output " + d + "/cohort --cohort 100 --dims 128 128 128 --seed 11 --jobs 8");
  const double gen_s = seconds_since(tg);
  o.check(gen == 0, "cohort generation");
  if (gen != 0) return o;

  const auto t1 = Clock::now();
  const int r1 = run_cli("eval-seg --input " + d + "/cohort --output " + d + "/run1 --jobs 1");
  const double s1 = seconds_since(t1);
  const int r2 = run_cli("eval-seg --input " + d + "/cohort --output " + d + "/run2 --jobs 1");
  const auto t8 = Clock::now();
  const int r8 = run_cli("eval-seg --input " + d + "/cohort --output " + d + "/run8 --jobs 8");
  const double s8 = seconds_since(t8);
  o.check(r1 == 0 && r2 == 0 && r8 == 0, "eval-seg exit codes");
  bool same = true;
  for (const char* f : {"eval_records.csv", "eval_summary.json"}) {
    const auto a = read_file(dir / "run1" / f);
    same = same && !a.empty() && a == read_file(dir / "run2" / f) && a == read_file(dir / "run8" / f);
  }
  o.check(same, "outputs byte-identical");
  o.check(s1 < 120.0, "single-threaded eval-seg under 120 s");
  o.detail << "generation " << gen_s << " s, eval-seg single-threaded " << s1 << " s, --jobs 8 " << s8
           << " s, outputs " << (same ? "identical" : "differ");
  return o;
}

Outcome sliding_window() {
  Outcome o;
  const FunctionPredictor constant([](std::span<const ScalarVolume> p) {
    Grid<double> out(p[0].geometry());
    for (auto& x : out.data()) x = 0.7;
    return out;
  });
  std::size_t checked = 0;
  auto all_exact = [&](const ProbabilityMap& m) {
    checked += m.size();
    for (double x : m.data()) {
      if (x != 0.7) return false;
    }
    return true;
  };
  InferParams big;
  ScalarVolume v240(oracle::geometry(240, 240, 240));
  o.check(all_exact(sliding_window_predict({v240}, constant, big)), "240^3 constant");
  for (Dims patch : {Dims{7, 5, 3}, Dims{16, 16, 16}, Dims{40, 40, 40}}) {
    InferParams p;
    p.patch_dims = patch;
    p.overlap_fraction = 0.6;
    ScalarVolume v(oracle::geometry(37, 29, 19));
    o.check(all_exact(sliding_window_predict({v}, constant, p)), "small constant");
    p.tta_flips = {true, true, false};
    o.check(all_exact(tta_predict({v}, constant, p)), "small constant with flips");
  }

  // Oracle: start offsets k * 80 while the window fits, plus the flush window.
  std::set<Index3> want;
  std::vector<std::size_t> starts;
  for (std::size_t s = 0; s + 160 <= 240; s += 80) starts.push_back(s);
  if (starts.back() != 240 - 160) starts.push_back(240 - 160);
  for (auto z : starts)
    for (auto y : starts)
      for (auto x : starts) want.insert({x, y, z});
  const auto got = enumerate_windows({240, 240, 240}, big);
  const std::set<Index3> got_set(got.begin(), got.end());
  o.check(got.size() == got_set.size() && got_set == want, "window set");
  o.detail << checked << " voxels exactly 0.7, " << got.size() << " windows for 240^3 / 160^3 / 0.5";
  return o;
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"metric oracle equivalence", metric_oracles},
      {"hungarian correctness", hungarian},
      {"paper-constant conformance", paper_constants},
      {"refinement invariants", refinement_invariants},
      {"phantom end-to-end", phantom_end_to_end},
      {"sweep and pooling", sweep_and_pooling},
      {"classification metrics", classification},
      {"i/o round trips and diagnostics", io_round_trips},
      {"determinism and throughput", determinism_and_throughput},
      {"sliding-window harness", sliding_window},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail << "exception: " << e.what();
    }
    failed += !o.pass;
    std::cout << "criterion " << i + 1 << ": " << (o.pass ? "PASS" : "FAIL") << " " << criteria[i].first << " ("
              << o.detail.str() << ")" << std::endl;
  }
  std::cout << (failed ? std::to_string(failed) + " criteria failed" : "all criteria passed") << std::endl;
  return failed ? 1 : 0;
}
