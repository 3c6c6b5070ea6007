// Sliding-window prediction around a pluggable predictor, flip test-time
// augmentation, probability-map fusion and two-step postprocessing.
#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <sstream>
#include <stdexcept>
#include <thread>
#include <vector>

#include "resectkit/morph.hpp"
#include "resectkit/volgrid.hpp"

namespace rk {

/// Maps a stack of co-located channel patches to a probability patch of the
/// same dims. Implementations that are safe to call concurrently say so
/// through reentrant(); the harness serializes all others.
class Predictor {
 public:
  virtual ~Predictor() = default;
  virtual Grid<double> predict(std::span<const ScalarVolume> patch) const = 0;
  virtual bool reentrant() const { return false; }
};

/// Wraps a callable as a Predictor.
class FunctionPredictor final : public Predictor {
 public:
  using Fn = std::function<Grid<double>(std::span<const ScalarVolume>)>;
  explicit FunctionPredictor(Fn fn, bool reentrant = false) : fn_(std::move(fn)), reentrant_(reentrant) {}
  Grid<double> predict(std::span<const ScalarVolume> patch) const override { return fn_(patch); }
  bool reentrant() const override { return reentrant_; }

 private:
  Fn fn_;
  bool reentrant_;
};

/// Analytic stand-in for a trained network: a logistic response to the
/// first channel's intensity, smoothed by a 3x3x3 box filter.
class ToyPredictor final : public Predictor {
 public:
  explicit ToyPredictor(double threshold = 1.0, double softness = 0.25) : threshold_(threshold), softness_(softness) {}

  Grid<double> predict(std::span<const ScalarVolume> patch) const override {
    if (patch.empty()) throw std::invalid_argument("ToyPredictor: no channels");
    const auto& c = patch[0];
    const auto& geo = c.geometry();
    Grid<double> resp(geo);
    for (std::size_t i = 0; i < c.size(); ++i) resp[i] = 1.0 / (1.0 + std::exp(-(c[i] - threshold_) / softness_));
    Grid<double> out(geo);
    const Dims& d = geo.dims;
    for (std::size_t z = 0; z < d.z; ++z) {
      for (std::size_t y = 0; y < d.y; ++y) {
        for (std::size_t x = 0; x < d.x; ++x) {
          double s = 0.0;
          int n = 0;
          for (int dz = -1; dz <= 1; ++dz) {
            for (int dy = -1; dy <= 1; ++dy) {
              for (int dx = -1; dx <= 1; ++dx) {
                const auto xx = static_cast<std::ptrdiff_t>(x) + dx;
                const auto yy = static_cast<std::ptrdiff_t>(y) + dy;
                const auto zz = static_cast<std::ptrdiff_t>(z) + dz;
                if (xx < 0 || yy < 0 || zz < 0 || xx >= static_cast<std::ptrdiff_t>(d.x) ||
                    yy >= static_cast<std::ptrdiff_t>(d.y) || zz >= static_cast<std::ptrdiff_t>(d.z)) {
                  continue;
                }
                s += resp.at(static_cast<std::size_t>(xx), static_cast<std::size_t>(yy), static_cast<std::size_t>(zz));
                ++n;
              }
            }
          }
          out.at(x, y, z) = std::clamp(s / n, 0.0, 1.0);
        }
      }
    }
    return out;
  }
  bool reentrant() const override { return true; }

 private:
  double threshold_;
  double softness_;
};

enum class FusionMode { Average, Amax };

inline FusionMode fusion_from_string(std::string_view s) {
  if (s == "average") return FusionMode::Average;
  if (s == "amax") return FusionMode::Amax;
  throw std::invalid_argument("fusion mode must be 'average' or 'amax', got '" + std::string(s) + "'");
}

inline std::string_view to_string(FusionMode m) { return m == FusionMode::Average ? "average" : "amax"; }

struct InferParams {
  Dims patch_dims{160, 160, 160};
  double overlap_fraction = 0.5;
  FusionMode fusion_mode = FusionMode::Average;
  std::array<bool, 3> tta_flips{false, false, false};
  std::size_t threads = 1;

  void validate() const {
    if (!(overlap_fraction >= 0.0 && overlap_fraction < 1.0)) {
      throw std::invalid_argument("infer: overlap_fraction must lie in [0,1)");
    }
    if (patch_dims.x < 1 || patch_dims.y < 1 || patch_dims.z < 1) throw std::invalid_argument("infer: patch dims must be >= 1");
  }
};

/// Window start offsets along one axis. Stride is floor(patch * (1 - overlap))
/// (at least 1); the final window is shifted flush with the border.
inline std::vector<std::size_t> window_starts(std::size_t grid, std::size_t patch, double overlap) {
  if (grid <= patch) return {0};
  const auto stride = std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(static_cast<double>(patch) * (1.0 - overlap))));
  std::vector<std::size_t> out;
  std::size_t s = 0;
  for (; s + patch < grid; s += stride) out.push_back(s);
  const std::size_t last = grid - patch;
  if (out.empty() || out.back() != last) out.push_back(last);
  return out;
}

inline std::vector<Index3> enumerate_windows(const Dims& grid, const InferParams& params) {
  const auto wx = window_starts(grid.x, params.patch_dims.x, params.overlap_fraction);
  const auto wy = window_starts(grid.y, params.patch_dims.y, params.overlap_fraction);
  const auto wz = window_starts(grid.z, params.patch_dims.z, params.overlap_fraction);
  std::vector<Index3> out;
  out.reserve(wx.size() * wy.size() * wz.size());
  for (auto z : wz) {
    for (auto y : wy) {
      for (auto x : wx) out.push_back({x, y, z});
    }
  }
  return out;
}

namespace detail {

// Zero-pads a channel to at least the patch size on every axis.
inline ScalarVolume pad_to(const ScalarVolume& v, const Dims& min_dims) {
  const Dims& d = v.dims();
  if (d.x >= min_dims.x && d.y >= min_dims.y && d.z >= min_dims.z) return v;
  GridGeometry g = v.geometry();
  g.dims = {std::max(d.x, min_dims.x), std::max(d.y, min_dims.y), std::max(d.z, min_dims.z)};
  ScalarVolume out(g);
  insert_box(out, v, {0, 0, 0});
  return out;
}

inline std::string window_label(const Index3& w) {
  std::ostringstream os;
  os << "window at (" << w[0] << "," << w[1] << "," << w[2] << ")";
  return os.str();
}

}  // namespace detail

/// Tiles the grid with overlapping patches and averages the predictor
/// outputs uniformly per voxel.
inline ProbabilityMap sliding_window_predict(const std::vector<ScalarVolume>& channels, const Predictor& predictor,
                                             const InferParams& params) {
  params.validate();
  if (channels.empty()) throw std::invalid_argument("sliding_window_predict: no channels");
  for (std::size_t k = 1; k < channels.size(); ++k) {
    require_compatible(channels[0].geometry(), channels[k].geometry(), "sliding_window_predict");
  }
  const GridGeometry& geo = channels[0].geometry();
  std::vector<ScalarVolume> padded;
  padded.reserve(channels.size());
  for (const auto& c : channels) padded.push_back(detail::pad_to(c, params.patch_dims));
  const Dims work = padded[0].dims();
  const Dims patch{std::min(params.patch_dims.x, work.x), std::min(params.patch_dims.y, work.y),
                   std::min(params.patch_dims.z, work.z)};
  const auto windows = enumerate_windows(work, params);

  auto run_window = [&](const Index3& w) {
    std::vector<ScalarVolume> stack;
    stack.reserve(padded.size());
    const Box box{w, {w[0] + patch.x, w[1] + patch.y, w[2] + patch.z}};
    for (const auto& c : padded) stack.push_back(extract_box(c, box));
    Grid<double> out = predictor.predict(std::span<const ScalarVolume>(stack));
    if (!(out.dims() == patch)) {
      throw std::runtime_error("predictor returned wrong patch shape for " + detail::window_label(w));
    }
    for (double p : out.data()) {
      if (!(p >= 0.0 && p <= 1.0)) {
        throw std::runtime_error("predictor returned value " + std::to_string(p) + " outside [0,1] for " +
                                 detail::window_label(w));
      }
    }
    return out;
  };

  // Running mean per voxel in window order: a constant prediction stays exact
  // and the result does not depend on how windows were scheduled.
  GridGeometry work_geo = padded[0].geometry();
  Grid<double> mean(work_geo, 0.0);
  std::vector<std::uint32_t> count(work_geo.voxel_count(), 0);
  auto accumulate = [&](const Index3& w, const Grid<double>& out) {
    for (std::size_t z = 0; z < patch.z; ++z) {
      for (std::size_t y = 0; y < patch.y; ++y) {
        const std::size_t row = work_geo.linear(w[0], w[1] + y, w[2] + z);
        for (std::size_t x = 0; x < patch.x; ++x) {
          const std::size_t i = row + x;
          const std::uint32_t n = ++count[i];
          mean[i] += (out.at(x, y, z) - mean[i]) / n;
        }
      }
    }
  };

  const std::size_t threads = predictor.reentrant() ? std::max<std::size_t>(1, params.threads) : 1;
  for (std::size_t begin = 0; begin < windows.size(); begin += threads) {
    const std::size_t end = std::min(windows.size(), begin + threads);
    std::vector<std::optional<Grid<double>>> batch(end - begin);
    if (end - begin == 1) {
      batch[0] = run_window(windows[begin]);
    } else {
      std::vector<std::exception_ptr> errors(end - begin);
      std::vector<std::thread> pool;
      for (std::size_t k = begin; k < end; ++k) {
        pool.emplace_back([&, k] {
          try {
            batch[k - begin] = run_window(windows[k]);
          } catch (...) {
            errors[k - begin] = std::current_exception();
          }
        });
      }
      for (auto& t : pool) t.join();
      for (auto& e : errors) {
        if (e) std::rethrow_exception(e);
      }
    }
    for (std::size_t k = begin; k < end; ++k) accumulate(windows[k], *batch[k - begin]);
  }

  Grid<double> cropped = extract_box(mean, Box{{0, 0, 0}, {geo.dims.x, geo.dims.y, geo.dims.z}});
  for (auto& p : cropped.data()) p = std::clamp(p, 0.0, 1.0);
  return ProbabilityMap(geo, std::move(cropped.data()));
}

template <class G>
G flip_axis(const G& g, std::size_t axis) {
  G out(g.geometry());
  const Dims& d = g.dims();
  for (std::size_t z = 0; z < d.z; ++z) {
    for (std::size_t y = 0; y < d.y; ++y) {
      for (std::size_t x = 0; x < d.x; ++x) {
        Index3 s{x, y, z};
        s[axis] = d[axis] - 1 - s[axis];
        out.at(x, y, z) = g.at(s[0], s[1], s[2]);
      }
    }
  }
  return out;
}

/// Identity pass plus one pass per configured flip axis, un-flipped and averaged.
inline ProbabilityMap tta_predict(const std::vector<ScalarVolume>& channels, const Predictor& predictor,
                                  const InferParams& params) {
  ProbabilityMap mean = sliding_window_predict(channels, predictor, params);
  std::uint32_t n = 1;
  for (std::size_t axis = 0; axis < 3; ++axis) {
    if (!params.tta_flips[axis]) continue;
    std::vector<ScalarVolume> flipped;
    flipped.reserve(channels.size());
    for (const auto& c : channels) flipped.push_back(flip_axis(c, axis));
    const ProbabilityMap p = flip_axis(sliding_window_predict(flipped, predictor, params), axis);
    ++n;
    for (std::size_t i = 0; i < mean.size(); ++i) mean[i] += (p[i] - mean[i]) / n;
  }
  for (auto& v : mean.data()) v = std::clamp(v, 0.0, 1.0);
  return mean;
}

/// Voxelwise mean or maximum of 1 to 5 maps.
inline ProbabilityMap fuse_probability_maps(const std::vector<ProbabilityMap>& maps, FusionMode mode) {
  if (maps.empty()) throw std::invalid_argument("fuse_probability_maps: no maps given");
  if (maps.size() > 5) throw std::invalid_argument("fuse_probability_maps: at most 5 maps can be fused");
  for (std::size_t k = 1; k < maps.size(); ++k) require_compatible(maps[0].geometry(), maps[k].geometry(), "fuse_probability_maps");
  ProbabilityMap out = maps[0];
  for (std::size_t i = 0; i < out.size(); ++i) {
    double lo = maps[0][i];
    double hi = lo;
    double acc = lo;
    for (std::size_t k = 1; k < maps.size(); ++k) {
      const double v = maps[k][i];
      lo = std::min(lo, v);
      hi = std::max(hi, v);
      acc = mode == FusionMode::Amax ? hi : acc + (v - acc) / static_cast<double>(k + 1);
    }
    out[i] = std::clamp(acc, lo, hi);
  }
  return out;
}

// ---------------------------------------------------------------------------

struct PostprocParams {
  double min_component_ml = 0.05;
  std::size_t min_consecutive_slices = 2;
  bool brain_filter = true;
  bool noise_removal = true;
  Connectivity connectivity = Connectivity::TwentySix;

  void validate() const {
    if (!(min_component_ml >= 0.0)) throw std::invalid_argument("postprocess: min_component_ml must be >= 0");
    if (min_consecutive_slices < 1) throw std::invalid_argument("postprocess: min_consecutive_slices must be >= 1");
  }
};

struct PostprocResult {
  ProbabilityMap probabilities;
  BinaryMask mask;
  std::size_t removed_components = 0;
};

/// Step 1 zeroes probabilities outside the brain (skipped without a brain
/// mask). Step 2 binarizes at `threshold` and drops components smaller than
/// min_component_ml or seen in fewer than min_consecutive_slices axial
/// slices, zeroing them in the map as well.
inline PostprocResult postprocess(const ProbabilityMap& prob, const BinaryMask* brain, double threshold,
                                  const PostprocParams& params) {
  params.validate();
  if (!(threshold >= 0.0 && threshold <= 1.0)) {
    throw std::invalid_argument("postprocess: threshold " + std::to_string(threshold) + " outside [0,1]");
  }
  PostprocResult r{prob, BinaryMask(prob.geometry()), 0};
  if (params.brain_filter && brain != nullptr) {
    require_compatible(prob.geometry(), brain->geometry(), "postprocess");
    for (std::size_t i = 0; i < r.probabilities.size(); ++i) {
      if (!brain->test(i)) r.probabilities[i] = 0.0;
    }
  }
  r.mask = binarize(r.probabilities, threshold);
  if (!params.noise_removal) return r;

  const auto lab = connected_components(r.mask, params.connectivity);
  const auto runs = axial_run_lengths(lab);
  const double vml = voxel_volume_ml(prob.spacing());
  std::vector<std::uint8_t> drop(lab.count, 0);
  for (std::size_t c = 0; c < lab.count; ++c) {
    const double vol = static_cast<double>(lab.sizes[c]) * vml;
    if (!ml_at_least(vol, params.min_component_ml) || runs[c] < params.min_consecutive_slices) {
      drop[c] = 1;
      ++r.removed_components;
    }
  }
  if (r.removed_components == 0) return r;
  for (std::size_t i = 0; i < lab.labels.size(); ++i) {
    const auto id = lab.labels[i];
    if (id != 0 && drop[id - 1]) {
      r.mask[i] = 0;
      r.probabilities[i] = 0.0;
    }
  }
  return r;
}

}  // namespace rk
