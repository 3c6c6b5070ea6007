// Small descriptive statistics helpers shared by preprocessing and evaluation.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <stdexcept>
#include <vector>

namespace rk {

/// Linear interpolation between order statistics (rank = p/100 * (n-1)).
inline double percentile(std::vector<double> values, double pct) {
  if (values.empty()) throw std::invalid_argument("percentile of an empty set");
  if (!(pct >= 0.0 && pct <= 100.0)) throw std::invalid_argument("percentile must lie in [0,100]");
  const double rank = pct / 100.0 * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(rank));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(lo), values.end());
  const double vlo = values[lo];
  if (hi == lo) return vlo;
  const double vhi = *std::min_element(values.begin() + static_cast<std::ptrdiff_t>(lo) + 1, values.end());
  return vlo + (vhi - vlo) * (rank - static_cast<double>(lo));
}

/// Mean and population standard deviation of the defined values; undefined
/// values are counted, not averaged.
struct MetricSummary {
  std::optional<double> mean;
  std::optional<double> std;
  std::size_t n = 0;
  std::size_t n_undefined = 0;
};

inline MetricSummary summarize(const std::vector<std::optional<double>>& values) {
  MetricSummary s;
  double sum = 0.0;
  for (const auto& v : values) {
    if (v) {
      sum += *v;
      ++s.n;
    } else {
      ++s.n_undefined;
    }
  }
  if (s.n == 0) return s;
  const double mean = sum / static_cast<double>(s.n);
  double ss = 0.0;
  for (const auto& v : values) {
    if (v) ss += (*v - mean) * (*v - mean);
  }
  s.mean = mean;
  s.std = std::sqrt(ss / static_cast<double>(s.n));
  return s;
}

}  // namespace rk
