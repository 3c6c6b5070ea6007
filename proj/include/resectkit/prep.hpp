// Input preprocessing: resampling, tight cropping, difference channels,
// percentile clipping and nonzero normalization, applied in that order.
#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <utility>
#include <vector>

#include "resectkit/stats.hpp"
#include "resectkit/volgrid.hpp"

namespace rk {

struct PrepParams {
  Spacing target_spacing{1.0, 1.0, 1.0};
  double clip_lo_pct = 0.0;
  double clip_hi_pct = 99.5;
  std::size_t crop_margin_voxels = 0;

  void validate() const {
    if (!target_spacing.valid()) throw std::invalid_argument("prep: target spacing must be positive and finite");
    if (!(clip_lo_pct >= 0.0 && clip_lo_pct < clip_hi_pct && clip_hi_pct <= 100.0)) {
      throw std::invalid_argument("prep: clip percentiles must satisfy 0 <= lo < hi <= 100");
    }
  }
};

enum class Interpolation { Linear, Nearest };

namespace detail {

struct AxisSamples {
  std::vector<std::size_t> i0, i1;
  std::vector<double> w1;  // weight of i1
};

// Output voxel k sits at input coordinate k * out_sp / in_sp (voxel centres,
// shared origin), clamped to the input extent.
inline AxisSamples axis_samples(std::size_t in_n, double in_sp, std::size_t out_n, double out_sp, Interpolation mode) {
  AxisSamples s;
  s.i0.resize(out_n);
  s.i1.resize(out_n);
  s.w1.resize(out_n);
  const double last = static_cast<double>(in_n - 1);
  for (std::size_t k = 0; k < out_n; ++k) {
    double c = static_cast<double>(k) * out_sp / in_sp;
    c = std::clamp(c, 0.0, last);
    if (mode == Interpolation::Nearest) {
      const auto r = static_cast<std::size_t>(std::floor(c + 0.5));
      s.i0[k] = s.i1[k] = std::min(r, in_n - 1);
      s.w1[k] = 0.0;
    } else {
      const auto f = static_cast<std::size_t>(std::floor(c));
      s.i0[k] = f;
      s.i1[k] = std::min(f + 1, in_n - 1);
      s.w1[k] = c - static_cast<double>(f);
    }
  }
  return s;
}

inline double lerp(double a, double b, double w) { return w == 0.0 ? a : a + (b - a) * w; }

}  // namespace detail

inline Dims resampled_dims(const GridGeometry& in, const Spacing& target) {
  auto n = [](std::size_t d, double s, double t) {
    const double r = std::round(static_cast<double>(d) * s / t);
    return r < 1.0 ? std::size_t{1} : static_cast<std::size_t>(r);
  };
  return {n(in.dims.x, in.spacing.x, target.x), n(in.dims.y, in.spacing.y, target.y),
          n(in.dims.z, in.spacing.z, target.z)};
}

/// Trilinear (or nearest-neighbour) resampling onto `target` spacing; origin preserved.
template <class G>
G resample_grid(const G& vol, const Spacing& target, Interpolation mode) {
  if (!target.valid()) throw std::invalid_argument("resample: target spacing must be positive and finite");
  const auto& in = vol.geometry();
  GridGeometry out_geo;
  out_geo.dims = resampled_dims(in, target);
  out_geo.spacing = target;
  out_geo.origin = in.origin;
  if (out_geo.dims == in.dims && in.compatible(out_geo)) {
    G copy = vol;
    copy.set_origin(in.origin);
    return copy;
  }

  const auto ax = detail::axis_samples(in.dims.x, in.spacing.x, out_geo.dims.x, target.x, mode);
  const auto ay = detail::axis_samples(in.dims.y, in.spacing.y, out_geo.dims.y, target.y, mode);
  const auto az = detail::axis_samples(in.dims.z, in.spacing.z, out_geo.dims.z, target.z, mode);

  G out(out_geo);
  std::size_t o = 0;
  for (std::size_t z = 0; z < out_geo.dims.z; ++z) {
    for (std::size_t y = 0; y < out_geo.dims.y; ++y) {
      for (std::size_t x = 0; x < out_geo.dims.x; ++x, ++o) {
        if (mode == Interpolation::Nearest) {
          out[o] = vol.at(ax.i0[x], ay.i0[y], az.i0[z]);
          continue;
        }
        auto v = [&](std::size_t xi, std::size_t yi, std::size_t zi) { return static_cast<double>(vol.at(xi, yi, zi)); };
        const double c00 = detail::lerp(v(ax.i0[x], ay.i0[y], az.i0[z]), v(ax.i1[x], ay.i0[y], az.i0[z]), ax.w1[x]);
        const double c10 = detail::lerp(v(ax.i0[x], ay.i1[y], az.i0[z]), v(ax.i1[x], ay.i1[y], az.i0[z]), ax.w1[x]);
        const double c01 = detail::lerp(v(ax.i0[x], ay.i0[y], az.i1[z]), v(ax.i1[x], ay.i0[y], az.i1[z]), ax.w1[x]);
        const double c11 = detail::lerp(v(ax.i0[x], ay.i1[y], az.i1[z]), v(ax.i1[x], ay.i1[y], az.i1[z]), ax.w1[x]);
        const double c0 = detail::lerp(c00, c10, ay.w1[y]);
        const double c1 = detail::lerp(c01, c11, ay.w1[y]);
        out[o] = static_cast<typename G::value_type>(detail::lerp(c0, c1, az.w1[z]));
      }
    }
  }
  return out;
}

inline ScalarVolume resample(const ScalarVolume& vol, const Spacing& target, Interpolation mode = Interpolation::Linear) {
  return resample_grid(vol, target, mode);
}

/// Masks are always resampled nearest-neighbour so they stay binary.
inline BinaryMask resample(const BinaryMask& mask, const Spacing& target) {
  return resample_grid(mask, target, Interpolation::Nearest);
}

inline ProbabilityMap resample(const ProbabilityMap& p, const Spacing& target) {
  return resample_grid(p, target, Interpolation::Linear);
}

// ---------------------------------------------------------------------------

struct CropResult {
  ScalarVolume volume;
  Box box;  // in the input grid
};

/// Foreground (intensity > 0) bounding box grown by `margin`; the full grid when empty.
inline Box foreground_box(const ScalarVolume& vol, std::size_t margin) {
  const Box b = bounding_box(vol, [](double v) { return v > 0.0; });
  if (b.empty()) return Box::full(vol.dims());
  return box_grow(b, margin, vol.dims());
}

inline CropResult tight_crop(const ScalarVolume& vol, std::size_t margin = 0) {
  const Box b = foreground_box(vol, margin);
  return {extract_box(vol, b), b};
}

/// Crops any grid with a box computed on another grid of the same geometry.
template <class G>
G apply_crop(const G& g, const Box& box) {
  return extract_box(g, box);
}

/// Inverse of apply_crop: zero-pads `cropped` back into `full_geometry`.
template <class G>
G uncrop(const G& cropped, const Box& box, const GridGeometry& full_geometry) {
  if (!(cropped.dims() == box.extent())) throw GeometryError("uncrop: cropped dims do not match the crop box");
  G out(full_geometry);
  insert_box(out, cropped, box.lo);
  return out;
}

inline ScalarVolume subtract_channel(const ScalarVolume& a, const ScalarVolume& b) {
  require_compatible(a.geometry(), b.geometry(), "subtract_channel");
  ScalarVolume out(a.geometry());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
  return out;
}

inline ScalarVolume clip_percentile(const ScalarVolume& vol, double lo_pct, double hi_pct) {
  if (!(lo_pct >= 0.0 && lo_pct < hi_pct && hi_pct <= 100.0)) {
    throw std::invalid_argument("clip_percentile: need 0 <= lo < hi <= 100");
  }
  const double lo = percentile(vol.data(), lo_pct);
  const double hi = percentile(vol.data(), hi_pct);
  ScalarVolume out = vol;
  for (auto& v : out.data()) v = std::clamp(v, lo, hi);
  return out;
}

/// Zero-mean, unit (population) std over nonzero voxels; zeros stay zero.
inline ScalarVolume normalize_nonzero(const ScalarVolume& vol) {
  double sum = 0.0;
  std::size_t n = 0;
  for (double v : vol.data()) {
    if (v != 0.0) {
      sum += v;
      ++n;
    }
  }
  ScalarVolume out = vol;
  if (n == 0) return out;
  const double mean = sum / static_cast<double>(n);
  double ss = 0.0;
  for (double v : vol.data()) {
    if (v != 0.0) ss += (v - mean) * (v - mean);
  }
  const double sd = std::sqrt(ss / static_cast<double>(n));
  const bool scale = n > 1 && sd > 0.0;
  for (auto& v : out.data()) {
    if (v == 0.0) continue;
    v = scale ? (v - mean) / sd : v - mean;
  }
  return out;
}

struct PreprocessResult {
  std::vector<ScalarVolume> channels;
  GridGeometry resampled_geometry;  // grid the crop box refers to
  Box crop_box;
};

/// Indices into the input list; each pair appends channel inputs[first] - inputs[second].
using SubtractionPair = std::pair<std::size_t, std::size_t>;

inline PreprocessResult preprocess_chain(const std::vector<ScalarVolume>& inputs,
                                         const std::vector<SubtractionPair>& pairs, const PrepParams& params) {
  params.validate();
  if (inputs.empty()) throw std::invalid_argument("preprocess_chain: at least one input is required");
  for (std::size_t k = 1; k < inputs.size(); ++k) require_compatible(inputs[0].geometry(), inputs[k].geometry(), "preprocess_chain");
  for (const auto& [a, b] : pairs) {
    if (a >= inputs.size() || b >= inputs.size()) throw std::out_of_range("preprocess_chain: subtraction pair index out of range");
  }

  // (i) resample
  std::vector<ScalarVolume> chans;
  chans.reserve(inputs.size() + pairs.size());
  for (const auto& v : inputs) chans.push_back(resample(v, params.target_spacing, Interpolation::Linear));

  // (ii) one crop box for all channels: union over inputs that have foreground
  Box box{};
  for (const auto& c : chans) {
    const Box b = bounding_box(c, [](double v) { return v > 0.0; });
    box = box_union(box, b);
  }
  const Dims rdims = chans[0].dims();
  box = box.empty() ? Box::full(rdims) : box_grow(box, params.crop_margin_voxels, rdims);

  PreprocessResult out;
  out.resampled_geometry = chans[0].geometry();
  out.crop_box = box;
  for (auto& c : chans) c = apply_crop(c, box);

  // (iii) difference channels
  for (const auto& [a, b] : pairs) chans.push_back(subtract_channel(chans[a], chans[b]));

  // (iv) clip, (v) normalize
  for (auto& c : chans) c = normalize_nonzero(clip_percentile(c, params.clip_lo_pct, params.clip_hi_pct));
  out.channels = std::move(chans);
  return out;
}

}  // namespace rk
