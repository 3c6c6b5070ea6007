// Segmentation validation in three tiers: patient-wise classification,
// voxel-wise overlap and surface distance, and object-wise metrics over
// Hungarian-matched connected components. Also the threshold sweep, best
// threshold selection and cross-validation pooling.
#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "resectkit/hungarian.hpp"
#include "resectkit/infer.hpp"
#include "resectkit/morph.hpp"
#include "resectkit/stats.hpp"
#include "resectkit/volgrid.hpp"

namespace rk {

/// Minimum ground-truth volume (ml) for a sample to count as positive.
/// Kinds without an entry only need a nonempty mask.
struct StructureCutoffs {
  std::map<StructureKind, double> ml{{StructureKind::ResidualTumor, 0.175},
                                     {StructureKind::NETC, 0.05},
                                     {StructureKind::ResectionCavity, 0.1},
                                     {StructureKind::TumorCore, 0.1}};

  double cutoff(StructureKind k) const {
    auto it = ml.find(k);
    return it == ml.end() ? 0.0 : it->second;
  }
};

struct EvalParams {
  std::vector<double> thresholds{0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0};
  double tp_dice_min = 0.001;
  std::size_t min_object_voxels = 75;
  std::map<StructureKind, std::size_t> min_object_voxels_by_kind{{StructureKind::NETC, 50}};
  Connectivity connectivity = Connectivity::TwentySix;
  /// Brain filtering runs for every structure when a brain mask is given;
  /// component noise removal only for these kinds.
  std::set<StructureKind> noise_removal_kinds{StructureKind::ResidualTumor};
  PostprocParams postprocess{};
  bool apply_postprocess = true;
  int n_folds = 5;

  std::size_t min_objects_for(StructureKind k) const {
    auto it = min_object_voxels_by_kind.find(k);
    return it == min_object_voxels_by_kind.end() ? min_object_voxels : it->second;
  }

  void validate() const {
    if (thresholds.empty()) throw std::invalid_argument("eval: at least one threshold is required");
    for (std::size_t i = 0; i < thresholds.size(); ++i) {
      if (!(thresholds[i] > 0.0 && thresholds[i] <= 1.0)) throw std::invalid_argument("eval: thresholds must lie in (0,1]");
      if (i > 0 && !(thresholds[i] > thresholds[i - 1])) throw std::invalid_argument("eval: thresholds must be strictly increasing");
    }
    if (!(tp_dice_min >= 0.0 && tp_dice_min <= 1.0)) throw std::invalid_argument("eval: tp_dice_min must lie in [0,1]");
    if (n_folds < 1) throw std::invalid_argument("eval: n_folds must be >= 1");
    postprocess.validate();
  }
};

// ---------------------------------------------------------------------------
// Voxel tier

/// Empty-set conventions: both empty gives dice 1; recall needs a nonempty
/// ground truth and precision a nonempty prediction, otherwise undefined.
struct VoxelOverlap {
  std::optional<double> dice;
  std::optional<double> recall;
  std::optional<double> precision;
};

inline VoxelOverlap overlap_from_counts(std::size_t gt, std::size_t pred, std::size_t both) {
  VoxelOverlap o;
  o.dice = (gt + pred) == 0 ? 1.0 : 2.0 * static_cast<double>(both) / static_cast<double>(gt + pred);
  if (gt > 0) o.recall = static_cast<double>(both) / static_cast<double>(gt);
  if (pred > 0) o.precision = static_cast<double>(both) / static_cast<double>(pred);
  return o;
}

inline VoxelOverlap voxel_overlap(const BinaryMask& gt, const BinaryMask& pred) {
  require_compatible(gt.geometry(), pred.geometry(), "voxel_overlap");
  std::size_t g = 0, p = 0, both = 0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    const bool a = gt[i] != 0;
    const bool b = pred[i] != 0;
    g += a;
    p += b;
    both += a && b;
  }
  return overlap_from_counts(g, p, both);
}

namespace detail {

constexpr double kInf = std::numeric_limits<double>::infinity();

// 1D squared distance transform (lower envelope of parabolas) on samples
// spaced `sp` apart; f holds squared distances, +inf where unknown.
inline void edt_1d(double* f, std::size_t n, std::size_t stride, double sp, std::vector<double>& tmp,
                   std::vector<std::size_t>& v, std::vector<double>& z) {
  tmp.resize(n);
  v.resize(n);
  z.resize(n + 1);
  for (std::size_t q = 0; q < n; ++q) tmp[q] = f[q * stride];
  std::ptrdiff_t k = -1;
  for (std::size_t q = 0; q < n; ++q) {
    if (tmp[q] == kInf) continue;
    const double xq = static_cast<double>(q) * sp;
    if (k < 0) {
      k = 0;
      v[0] = q;
      z[0] = -kInf;
      z[1] = kInf;
      continue;
    }
    // z[0] is -inf, so k never drops below 0.
    double s = 0.0;
    for (;;) {
      const std::size_t p = v[static_cast<std::size_t>(k)];
      const double xp = static_cast<double>(p) * sp;
      s = ((tmp[q] + xq * xq) - (tmp[p] + xp * xp)) / (2.0 * (xq - xp));
      if (s > z[static_cast<std::size_t>(k)]) break;
      --k;
    }
    ++k;
    v[static_cast<std::size_t>(k)] = q;
    z[static_cast<std::size_t>(k)] = s;
    z[static_cast<std::size_t>(k) + 1] = kInf;
  }
  if (k < 0) return;  // no sites on this line
  std::size_t j = 0;
  for (std::size_t q = 0; q < n; ++q) {
    const double xq = static_cast<double>(q) * sp;
    while (z[j + 1] < xq) ++j;
    const double d = static_cast<double>(static_cast<std::ptrdiff_t>(q) - static_cast<std::ptrdiff_t>(v[j])) * sp;
    f[q * stride] = d * d + tmp[v[j]];
  }
}

// Exact squared Euclidean distance (mm^2) to the nearest feature voxel, for
// every voxel of `box`. `features` are linear indices in `geo` inside `box`.
inline std::vector<double> squared_distance_field(const GridGeometry& geo, const Box& box,
                                                  const std::vector<std::size_t>& features) {
  const Dims e = box.extent();
  std::vector<double> f(e.count(), kInf);
  for (auto i : features) {
    const Index3 c = geo.coords(i);
    f[(c[0] - box.lo[0]) + e.x * ((c[1] - box.lo[1]) + e.y * (c[2] - box.lo[2]))] = 0.0;
  }
  std::vector<double> tmp, z;
  std::vector<std::size_t> v;
  for (std::size_t zz = 0; zz < e.z; ++zz) {
    for (std::size_t y = 0; y < e.y; ++y) edt_1d(&f[e.x * (y + e.y * zz)], e.x, 1, geo.spacing.x, tmp, v, z);
  }
  for (std::size_t zz = 0; zz < e.z; ++zz) {
    for (std::size_t x = 0; x < e.x; ++x) edt_1d(&f[x + e.x * e.y * zz], e.y, e.x, geo.spacing.y, tmp, v, z);
  }
  for (std::size_t y = 0; y < e.y; ++y) {
    for (std::size_t x = 0; x < e.x; ++x) edt_1d(&f[x + e.x * y], e.z, e.x * e.y, geo.spacing.z, tmp, v, z);
  }
  return f;
}

inline Box indices_box(const GridGeometry& geo, const std::vector<std::size_t>& idx) {
  if (idx.empty()) return Box{};
  Box b{{geo.dims.x, geo.dims.y, geo.dims.z}, {0, 0, 0}};
  for (auto i : idx) {
    const Index3 c = geo.coords(i);
    for (int k = 0; k < 3; ++k) {
      b.lo[k] = std::min(b.lo[k], c[k]);
      b.hi[k] = std::max(b.hi[k], c[k] + 1);
    }
  }
  return b;
}

/// Pooled boundary-to-boundary nearest distances in both directions.
inline std::vector<double> pooled_surface_distances(const GridGeometry& geo, const std::vector<std::size_t>& ba,
                                                    const std::vector<std::size_t>& bb) {
  std::vector<double> out;
  if (ba.empty() || bb.empty()) return out;
  const Box box = box_union(indices_box(geo, ba), indices_box(geo, bb));
  const Dims e = box.extent();
  auto local = [&](std::size_t i) {
    const Index3 c = geo.coords(i);
    return (c[0] - box.lo[0]) + e.x * ((c[1] - box.lo[1]) + e.y * (c[2] - box.lo[2]));
  };
  out.reserve(ba.size() + bb.size());
  const auto to_b = squared_distance_field(geo, box, bb);
  for (auto i : ba) out.push_back(std::sqrt(to_b[local(i)]));
  const auto to_a = squared_distance_field(geo, box, ba);
  for (auto i : bb) out.push_back(std::sqrt(to_a[local(i)]));
  return out;
}

template <class InA, class InB>
std::optional<double> hd95_sets(const GridGeometry& geo, const Box& box_a, InA&& in_a, const Box& box_b, InB&& in_b) {
  const auto ba = boundary_indices(geo, box_a, in_a);
  const auto bb = boundary_indices(geo, box_b, in_b);
  if (ba.empty() || bb.empty()) return std::nullopt;
  return percentile(pooled_surface_distances(geo, ba, bb), 95.0);
}

}  // namespace detail

/// 95th percentile (linear interpolation) of the pooled symmetric
/// boundary-to-boundary distances in mm; nullopt when either mask is empty.
inline std::optional<double> hd95(const BinaryMask& gt, const BinaryMask& pred) {
  require_compatible(gt.geometry(), pred.geometry(), "hd95");
  return detail::hd95_sets(
      gt.geometry(), mask_bounding_box(gt), [&](std::size_t i) { return gt.test(i); }, mask_bounding_box(pred),
      [&](std::size_t i) { return pred.test(i); });
}

// ---------------------------------------------------------------------------
// Patient tier

enum class PatientOutcome { TP, FP, TN, FN };

inline std::string_view to_string(PatientOutcome o) {
  switch (o) {
    case PatientOutcome::TP: return "TP";
    case PatientOutcome::FP: return "FP";
    case PatientOutcome::TN: return "TN";
    case PatientOutcome::FN: return "FN";
  }
  return "?";
}

inline bool gt_positive(const BinaryMask& gt, StructureKind kind, const StructureCutoffs& cutoffs) {
  const std::size_t n = gt.count();
  return n > 0 && ml_at_least(static_cast<double>(n) * voxel_volume_ml(gt.spacing()), cutoffs.cutoff(kind));
}

/// Ground truth is positive at or above the structure cutoff; a positive
/// case is a true positive only if dice reaches tp_dice_min.
inline PatientOutcome patient_outcome(const BinaryMask& gt, const BinaryMask& pred, StructureKind kind,
                                      const StructureCutoffs& cutoffs, double tp_dice_min) {
  require_compatible(gt.geometry(), pred.geometry(), "patient_outcome");
  const bool gpos = gt_positive(gt, kind, cutoffs);
  const bool ppos = !pred.empty();
  if (gpos) {
    const double dice = voxel_overlap(gt, pred).dice.value_or(0.0);
    return dice >= tp_dice_min ? PatientOutcome::TP : PatientOutcome::FN;
  }
  return ppos ? PatientOutcome::FP : PatientOutcome::TN;
}

struct PatientCounts {
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;

  void add(PatientOutcome o) {
    switch (o) {
      case PatientOutcome::TP: ++tp; break;
      case PatientOutcome::FP: ++fp; break;
      case PatientOutcome::TN: ++tn; break;
      case PatientOutcome::FN: ++fn; break;
    }
  }
  std::size_t total() const { return tp + fp + tn + fn; }
};

struct PatientRates {
  std::optional<double> recall;
  std::optional<double> precision;
  std::optional<double> specificity;
  std::optional<double> balanced_accuracy;
};

inline PatientRates patient_rates(const PatientCounts& c) {
  auto ratio = [](std::size_t num, std::size_t den) -> std::optional<double> {
    if (den == 0) return std::nullopt;
    return static_cast<double>(num) / static_cast<double>(den);
  };
  PatientRates r;
  r.recall = ratio(c.tp, c.tp + c.fn);
  r.precision = ratio(c.tp, c.tp + c.fp);
  r.specificity = ratio(c.tn, c.tn + c.fp);
  if (r.recall && r.specificity) r.balanced_accuracy = (*r.recall + *r.specificity) / 2.0;
  return r;
}

// ---------------------------------------------------------------------------
// Object tier

struct ObjectMetrics {
  std::optional<double> dice;       // mean over matched pairs
  std::optional<double> recall;     // matched / gt objects
  std::optional<double> precision;  // matched / predicted objects
  std::optional<double> hd95_mm;    // mean over matched pairs
  std::optional<double> dice_zero_filled;  // unmatched objects on either side count as 0
  std::size_t n_gt_objects = 0;
  std::size_t n_pred_objects = 0;
  std::size_t n_matched = 0;
  std::vector<std::pair<std::size_t, std::size_t>> pairs;  // (gt object, pred object), 0-based after filtering
};

namespace detail {

struct Objects {
  const ComponentLabeling* lab = nullptr;
  std::vector<std::uint32_t> ids;            // kept component ids
  std::vector<std::uint32_t> index_of;       // component id -> object index + 1 (0 = discarded)
  std::vector<Box> boxes;                    // per kept object
};

inline Objects select_objects(const ComponentLabeling& lab, std::size_t min_voxels) {
  Objects o;
  o.lab = &lab;
  o.index_of.assign(lab.count + 1, 0);
  for (std::size_t c = 0; c < lab.count; ++c) {
    if (lab.sizes[c] >= min_voxels) {
      o.ids.push_back(static_cast<std::uint32_t>(c + 1));
      o.index_of[c + 1] = static_cast<std::uint32_t>(o.ids.size());
    }
  }
  const Dims& d = lab.geometry.dims;
  o.boxes.assign(o.ids.size(), Box{{d.x, d.y, d.z}, {0, 0, 0}});
  std::size_t i = 0;
  for (std::size_t z = 0; z < d.z; ++z) {
    for (std::size_t y = 0; y < d.y; ++y) {
      for (std::size_t x = 0; x < d.x; ++x, ++i) {
        const auto id = lab.labels[i];
        if (id == 0 || o.index_of[id] == 0) continue;
        Box& b = o.boxes[o.index_of[id] - 1];
        const Index3 c{x, y, z};
        for (int k = 0; k < 3; ++k) {
          b.lo[k] = std::min(b.lo[k], c[k]);
          b.hi[k] = std::max(b.hi[k], c[k] + 1);
        }
      }
    }
  }
  return o;
}

}  // namespace detail

/// Object-wise metrics with precomputed labelings (both on one geometry).
inline ObjectMetrics objectwise_eval(const ComponentLabeling& gt_lab, const ComponentLabeling& pred_lab,
                                     std::size_t min_object_voxels) {
  require_compatible(gt_lab.geometry, pred_lab.geometry, "objectwise_eval");
  const auto g = detail::select_objects(gt_lab, min_object_voxels);
  const auto p = detail::select_objects(pred_lab, min_object_voxels);
  ObjectMetrics m;
  m.n_gt_objects = g.ids.size();
  m.n_pred_objects = p.ids.size();
  const std::size_t ng = m.n_gt_objects;
  const std::size_t np = m.n_pred_objects;

  if (ng > 0 && np > 0) {
    std::vector<std::size_t> overlap(ng * np, 0);
    for (std::size_t i = 0; i < gt_lab.labels.size(); ++i) {
      const auto a = gt_lab.labels[i];
      const auto b = pred_lab.labels[i];
      if (a == 0 || b == 0) continue;
      const auto ia = g.index_of[a];
      const auto ib = p.index_of[b];
      if (ia == 0 || ib == 0) continue;
      ++overlap[(ia - 1) * np + (ib - 1)];
    }
    std::vector<double> dice(ng * np, 0.0);
    std::vector<double> cost(ng * np, 1.0);
    for (std::size_t a = 0; a < ng; ++a) {
      for (std::size_t b = 0; b < np; ++b) {
        const double sa = static_cast<double>(gt_lab.sizes[g.ids[a] - 1]);
        const double sb = static_cast<double>(pred_lab.sizes[p.ids[b] - 1]);
        dice[a * np + b] = 2.0 * static_cast<double>(overlap[a * np + b]) / (sa + sb);
        cost[a * np + b] = 1.0 - dice[a * np + b];
      }
    }
    const Assignment asg = solve_assignment(cost, ng, np);
    double dice_sum = 0.0;
    double hd_sum = 0.0;
    std::size_t hd_n = 0;
    for (std::size_t a = 0; a < ng; ++a) {
      const int b = asg.row_to_col[a];
      if (b < 0 || overlap[a * np + static_cast<std::size_t>(b)] == 0) continue;
      const auto bi = static_cast<std::size_t>(b);
      m.pairs.emplace_back(a, bi);
      dice_sum += dice[a * np + bi];
      const std::uint32_t ga = g.ids[a];
      const std::uint32_t pb = p.ids[bi];
      const auto h = detail::hd95_sets(
          gt_lab.geometry, g.boxes[a], [&](std::size_t i) { return gt_lab.labels[i] == ga; }, p.boxes[bi],
          [&](std::size_t i) { return pred_lab.labels[i] == pb; });
      if (h) {
        hd_sum += *h;
        ++hd_n;
      }
    }
    m.n_matched = m.pairs.size();
    if (m.n_matched > 0) m.dice = dice_sum / static_cast<double>(m.n_matched);
    if (hd_n > 0) m.hd95_mm = hd_sum / static_cast<double>(hd_n);
    m.dice_zero_filled = dice_sum / static_cast<double>(ng + np - m.n_matched);
  } else if (ng + np > 0) {
    m.dice_zero_filled = 0.0;
  }
  if (ng > 0) m.recall = static_cast<double>(m.n_matched) / static_cast<double>(ng);
  if (np > 0) m.precision = static_cast<double>(m.n_matched) / static_cast<double>(np);
  return m;
}

inline ObjectMetrics objectwise_eval(const BinaryMask& gt, const BinaryMask& pred, std::size_t min_object_voxels,
                                     Connectivity conn = Connectivity::TwentySix) {
  require_compatible(gt.geometry(), pred.geometry(), "objectwise_eval");
  return objectwise_eval(connected_components(gt, conn), connected_components(pred, conn), min_object_voxels);
}

// ---------------------------------------------------------------------------
// Records, sweep, selection and pooling

struct EvalRecord {
  std::string sample_id;
  int fold = 0;
  double threshold = 0.0;
  bool gt_positive = false;
  bool pred_positive = false;
  PatientOutcome outcome = PatientOutcome::TN;
  double gt_volume_ml = 0.0;
  double pred_volume_ml = 0.0;
  VoxelOverlap voxel;
  std::optional<double> voxel_hd95_mm;
  ObjectMetrics object;
};

/// Evaluates one probability map against ground truth at every threshold.
/// With postprocessing enabled the brain filter runs when `brain` is given
/// and noise removal runs for the kinds listed in params.
inline std::vector<EvalRecord> sweep_thresholds(const ProbabilityMap& prob, const BinaryMask& gt, StructureKind kind,
                                                const EvalParams& params, const StructureCutoffs& cutoffs,
                                                const BinaryMask* brain = nullptr) {
  params.validate();
  require_compatible(prob.geometry(), gt.geometry(), "sweep_thresholds");
  const auto gt_lab = connected_components(gt, params.connectivity);
  const std::size_t gt_count = gt.count();
  const bool gpos = gt_positive(gt, kind, cutoffs);
  const double vml = voxel_volume_ml(gt.spacing());
  const std::size_t min_obj = params.min_objects_for(kind);

  PostprocParams pp = params.postprocess;
  pp.connectivity = params.connectivity;
  pp.brain_filter = params.apply_postprocess;
  pp.noise_removal = params.apply_postprocess && params.noise_removal_kinds.count(kind) != 0;

  std::vector<EvalRecord> out;
  out.reserve(params.thresholds.size());
  for (double t : params.thresholds) {
    BinaryMask pred = (pp.brain_filter && brain) || pp.noise_removal ? postprocess(prob, brain, t, pp).mask : binarize(prob, t);
    EvalRecord r;
    r.threshold = t;
    r.gt_positive = gpos;
    std::size_t p = 0, both = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
      const bool b = pred[i] != 0;
      p += b;
      both += b && gt[i] != 0;
    }
    r.pred_positive = p > 0;
    r.gt_volume_ml = static_cast<double>(gt_count) * vml;
    r.pred_volume_ml = static_cast<double>(p) * vml;
    r.voxel = overlap_from_counts(gt_count, p, both);
    if (gpos) {
      r.outcome = r.voxel.dice.value_or(0.0) >= params.tp_dice_min ? PatientOutcome::TP : PatientOutcome::FN;
    } else {
      r.outcome = r.pred_positive ? PatientOutcome::FP : PatientOutcome::TN;
    }
    r.voxel_hd95_mm = hd95(gt, pred);
    r.object = objectwise_eval(gt_lab, connected_components(pred, params.connectivity), min_obj);
    out.push_back(std::move(r));
  }
  return out;
}

/// Threshold with the highest mean voxel dice over ground-truth-positive
/// records; ties go to the lowest threshold.
inline double select_best_threshold(const std::vector<EvalRecord>& records) {
  std::map<double, std::pair<double, std::size_t>> acc;
  for (const auto& r : records) {
    auto& slot = acc[r.threshold];
    if (r.gt_positive && r.voxel.dice) {
      slot.first += *r.voxel.dice;
      ++slot.second;
    }
  }
  std::optional<double> best_t;
  double best_mean = -1.0;
  for (const auto& [t, s] : acc) {
    if (s.second == 0) continue;
    const double mean = s.first / static_cast<double>(s.second);
    if (!best_t || mean > best_mean) {
      best_t = t;
      best_mean = mean;
    }
  }
  if (!best_t) throw std::invalid_argument("select_best_threshold: no ground-truth-positive samples");
  return *best_t;
}

struct FoldSummary {
  double threshold = 0.0;
  std::size_t n_samples = 0;
  std::size_t n_positive = 0;
  std::map<int, std::size_t> samples_per_fold;
  PatientCounts counts;
  PatientRates rates;
  /// Voxel and object tiers over ground-truth-positive samples only.
  std::map<std::string, MetricSummary> metrics;
};

inline const std::vector<std::string>& pooled_metric_names() {
  static const std::vector<std::string> names{
      "voxel_dice",  "voxel_recall",     "voxel_precision", "voxel_hd95_mm",          "object_dice",
      "object_recall", "object_precision", "object_hd95_mm", "object_dice_zero_filled"};
  return names;
}

/// Pools per-sample records (one threshold) across folds: values are
/// concatenated and summarized as one mean and population std.
inline FoldSummary pool_folds(const std::vector<EvalRecord>& records, int n_folds = 5) {
  if (records.empty()) throw std::invalid_argument("pool_folds: empty pool");
  FoldSummary s;
  s.threshold = records.front().threshold;
  std::map<std::string, std::vector<std::optional<double>>> cols;
  for (const auto& r : records) {
    if (r.fold < 1 || r.fold > n_folds) {
      throw std::invalid_argument("pool_folds: sample '" + r.sample_id + "' has fold " + std::to_string(r.fold) +
                                  ", expected 1.." + std::to_string(n_folds));
    }
    if (r.threshold != s.threshold) throw std::invalid_argument("pool_folds: records mix thresholds");
    ++s.n_samples;
    ++s.samples_per_fold[r.fold];
    s.counts.add(r.outcome);
    if (!r.gt_positive) continue;
    ++s.n_positive;
    cols["voxel_dice"].push_back(r.voxel.dice);
    cols["voxel_recall"].push_back(r.voxel.recall);
    cols["voxel_precision"].push_back(r.voxel.precision);
    cols["voxel_hd95_mm"].push_back(r.voxel_hd95_mm);
    cols["object_dice"].push_back(r.object.dice);
    cols["object_recall"].push_back(r.object.recall);
    cols["object_precision"].push_back(r.object.precision);
    cols["object_hd95_mm"].push_back(r.object.hd95_mm);
    cols["object_dice_zero_filled"].push_back(r.object.dice_zero_filled);
  }
  s.rates = patient_rates(s.counts);
  for (const auto& name : pooled_metric_names()) s.metrics[name] = summarize(cols[name]);
  return s;
}

}  // namespace rk
