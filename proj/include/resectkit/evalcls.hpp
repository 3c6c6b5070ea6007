// Confusion matrices and multiclass-averaged classification metrics for
// externally produced labels (MR sequence type, tumor type).
#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace rk {

struct ConfusionMatrix {
  std::size_t n_classes = 0;
  std::vector<std::string> class_names;
  std::vector<std::size_t> counts;  // counts[gt * n_classes + pred]

  std::size_t at(std::size_t gt, std::size_t pred) const { return counts[gt * n_classes + pred]; }
  std::size_t total() const {
    std::size_t t = 0;
    for (auto c : counts) t += c;
    return t;
  }
};

inline ConfusionMatrix confusion_matrix(const std::vector<std::size_t>& gt, const std::vector<std::size_t>& pred,
                                        std::size_t n_classes, std::vector<std::string> names = {}) {
  if (gt.size() != pred.size()) throw std::invalid_argument("confusion_matrix: label lists differ in length");
  if (!names.empty() && names.size() != n_classes) throw std::invalid_argument("confusion_matrix: class name count mismatch");
  ConfusionMatrix cm;
  cm.n_classes = n_classes;
  cm.class_names = std::move(names);
  cm.counts.assign(n_classes * n_classes, 0);
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (gt[i] >= n_classes || pred[i] >= n_classes) {
      throw std::out_of_range("confusion_matrix: sample " + std::to_string(i) + " has a label outside 0.." +
                              std::to_string(n_classes - 1));
    }
    ++cm.counts[gt[i] * n_classes + pred[i]];
  }
  return cm;
}

enum class Averaging { Macro, Micro };

struct PerClassMetrics {
  std::optional<double> recall, precision, specificity, f1;
};

struct ClassificationMetrics {
  std::optional<double> recall;
  std::optional<double> precision;
  std::optional<double> specificity;
  std::optional<double> f1;
  double accuracy = 0.0;
  std::optional<double> balanced_accuracy;
  std::vector<PerClassMetrics> per_class;
  /// Per-class values left out of the macro mean because their denominator was zero.
  std::size_t excluded_recall = 0, excluded_precision = 0, excluded_specificity = 0, excluded_f1 = 0;
};

/// One-vs-rest per-class metrics averaged over classes. Macro averaging is
/// unweighted and skips undefined per-class values; micro averaging pools
/// the one-vs-rest counts. bAcc = (recall + specificity) / 2.
inline ClassificationMetrics multiclass_metrics(const ConfusionMatrix& cm, Averaging avg = Averaging::Macro) {
  const std::size_t total = cm.total();
  if (total == 0) throw std::invalid_argument("multiclass_metrics: confusion matrix is empty");
  const std::size_t n = cm.n_classes;
  ClassificationMetrics m;
  std::size_t trace = 0;
  std::size_t s_tp = 0, s_fp = 0, s_fn = 0, s_tn = 0;
  auto ratio = [](std::size_t a, std::size_t b) -> std::optional<double> {
    if (b == 0) return std::nullopt;
    return static_cast<double>(a) / static_cast<double>(b);
  };
  for (std::size_t c = 0; c < n; ++c) {
    std::size_t tp = cm.at(c, c), row = 0, col = 0;
    for (std::size_t k = 0; k < n; ++k) {
      row += cm.at(c, k);
      col += cm.at(k, c);
    }
    const std::size_t fn = row - tp;
    const std::size_t fp = col - tp;
    const std::size_t tn = total - tp - fn - fp;
    trace += tp;
    s_tp += tp;
    s_fp += fp;
    s_fn += fn;
    s_tn += tn;
    PerClassMetrics pc;
    pc.recall = ratio(tp, tp + fn);
    pc.precision = ratio(tp, tp + fp);
    pc.specificity = ratio(tn, tn + fp);
    pc.f1 = ratio(2 * tp, 2 * tp + fp + fn);
    m.per_class.push_back(pc);
  }
  m.accuracy = static_cast<double>(trace) / static_cast<double>(total);

  if (avg == Averaging::Micro) {
    m.recall = ratio(s_tp, s_tp + s_fn);
    m.precision = ratio(s_tp, s_tp + s_fp);
    m.specificity = ratio(s_tn, s_tn + s_fp);
    m.f1 = ratio(2 * s_tp, 2 * s_tp + s_fp + s_fn);
  } else {
    auto macro = [&](auto member, std::size_t& excluded) -> std::optional<double> {
      double sum = 0.0;
      std::size_t k = 0;
      for (const auto& pc : m.per_class) {
        const auto& v = pc.*member;
        if (v) {
          sum += *v;
          ++k;
        } else {
          ++excluded;
        }
      }
      if (k == 0) return std::nullopt;
      return sum / static_cast<double>(k);
    };
    m.recall = macro(&PerClassMetrics::recall, m.excluded_recall);
    m.precision = macro(&PerClassMetrics::precision, m.excluded_precision);
    m.specificity = macro(&PerClassMetrics::specificity, m.excluded_specificity);
    m.f1 = macro(&PerClassMetrics::f1, m.excluded_f1);
  }
  if (m.recall && m.specificity) m.balanced_accuracy = (*m.recall + *m.specificity) / 2.0;
  return m;
}

}  // namespace rk
