// Cross-structure consistency rules applied per timepoint.
#pragma once

#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "resectkit/volgrid.hpp"

namespace rk {

enum class Timepoint { Preop, Postop };
enum class Enhancement { ContrastEnhancing, NonEnhancing };

inline std::string_view to_string(Timepoint t) { return t == Timepoint::Preop ? "preop" : "postop"; }
inline std::string_view to_string(Enhancement e) {
  return e == Enhancement::ContrastEnhancing ? "contrast_enhancing" : "non_enhancing";
}
inline Timepoint timepoint_from_string(std::string_view s) {
  if (s == "preop") return Timepoint::Preop;
  if (s == "postop") return Timepoint::Postop;
  throw std::invalid_argument("timepoint must be 'preop' or 'postop', got '" + std::string(s) + "'");
}
inline Enhancement enhancement_from_string(std::string_view s) {
  if (s == "contrast_enhancing") return Enhancement::ContrastEnhancing;
  if (s == "non_enhancing") return Enhancement::NonEnhancing;
  throw std::invalid_argument("enhancement must be 'contrast_enhancing' or 'non_enhancing', got '" + std::string(s) + "'");
}

class RefinementError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Structure masks for one patient at one timepoint. A present-but-empty
/// mask means "segmented, nothing found"; an absent one means "not segmented".
class StructureSet {
 public:
  StructureSet() = default;
  StructureSet(Timepoint tp, Enhancement enh) : timepoint_(tp), enhancement_(enh) {}

  Timepoint timepoint() const { return timepoint_; }
  Enhancement enhancement() const { return enhancement_; }

  bool has(StructureKind k) const { return masks_.count(k) != 0; }
  const BinaryMask& get(StructureKind k) const {
    auto it = masks_.find(k);
    if (it == masks_.end()) throw std::out_of_range("structure '" + std::string(to_string(k)) + "' not present");
    return it->second;
  }
  const BinaryMask* find(StructureKind k) const {
    auto it = masks_.find(k);
    return it == masks_.end() ? nullptr : &it->second;
  }

  void set(StructureKind k, BinaryMask m) {
    if (!masks_.empty()) require_compatible(masks_.begin()->second.geometry(), m.geometry(), "StructureSet");
    masks_.insert_or_assign(k, std::move(m));
  }
  void erase(StructureKind k) { masks_.erase(k); }

  const std::map<StructureKind, BinaryMask>& masks() const { return masks_; }

  void add_note(std::string n) { notes_.push_back(std::move(n)); }
  const std::vector<std::string>& notes() const { return notes_; }

  friend bool operator==(const StructureSet& a, const StructureSet& b) {
    return a.timepoint_ == b.timepoint_ && a.enhancement_ == b.enhancement_ && a.masks_ == b.masks_;
  }

 private:
  Timepoint timepoint_ = Timepoint::Preop;
  Enhancement enhancement_ = Enhancement::ContrastEnhancing;
  std::map<StructureKind, BinaryMask> masks_;
  std::vector<std::string> notes_;
};

/// Preoperative contrast-enhancing: NETC := NETC n TC, SNFH := SNFH \ TC, WT := TC u SNFH.
inline StructureSet refine_preop_ce(const StructureSet& in) {
  if (!in.has(StructureKind::TumorCore)) {
    throw RefinementError("refine_preop_ce: tumor core mask is required for contrast-enhancing preoperative input");
  }
  StructureSet out = in;
  const BinaryMask& tc = in.get(StructureKind::TumorCore);
  if (const auto* netc = in.find(StructureKind::NETC)) out.set(StructureKind::NETC, mask_intersect(*netc, tc));
  BinaryMask wt = tc;
  if (const auto* snfh = in.find(StructureKind::SNFH)) {
    BinaryMask s = mask_subtract(*snfh, tc);
    wt = mask_union(tc, s);
    out.set(StructureKind::SNFH, std::move(s));
  }
  out.set(StructureKind::WholeTumor, std::move(wt));
  return out;
}

/// Postoperative contrast-enhancing: SNFH := SNFH \ (cavity u residual).
/// Residual tumor and cavity are kept as they are, overlap included.
inline StructureSet refine_postop_ce(const StructureSet& in) {
  if (!in.has(StructureKind::ResidualTumor)) {
    throw RefinementError("refine_postop_ce: residual tumor mask is required (supply an empty mask if none was found)");
  }
  StructureSet out = in;
  const BinaryMask& et = in.get(StructureKind::ResidualTumor);
  if (const auto* snfh = in.find(StructureKind::SNFH)) {
    BinaryMask s = mask_subtract(*snfh, et);
    if (const auto* cav = in.find(StructureKind::ResectionCavity)) s = mask_subtract(s, *cav);
    out.set(StructureKind::SNFH, std::move(s));
  }
  if (const auto* cav = in.find(StructureKind::ResectionCavity)) {
    const std::size_t overlap = intersection_count(*cav, et);
    if (overlap > 0) {
      out.add_note("residual tumor and resection cavity overlap by " + std::to_string(overlap) +
                   " voxels; both volumes are reported as segmented");
    }
  }
  if (in.has(StructureKind::NETC)) {
    out.add_note("postoperative NETC is reported unconstrained; no rule relates it to the resection cavity");
  }
  return out;
}

/// Non-enhancing tumors: SNFH is the whole tumor; postoperatively the cavity
/// is removed from it first.
inline StructureSet refine_non_ce(const StructureSet& in) {
  if (!in.has(StructureKind::SNFH)) throw RefinementError("refine_non_ce: SNFH mask is required");
  StructureSet out = in;
  BinaryMask snfh = in.get(StructureKind::SNFH);
  if (in.timepoint() == Timepoint::Postop) {
    if (const auto* cav = in.find(StructureKind::ResectionCavity)) snfh = mask_subtract(snfh, *cav);
    out.set(StructureKind::SNFH, snfh);
  }
  out.set(StructureKind::WholeTumor, std::move(snfh));
  return out;
}

/// Dispatches on the set's enhancement mode and timepoint.
inline StructureSet refine(const StructureSet& in) {
  if (in.enhancement() == Enhancement::NonEnhancing) return refine_non_ce(in);
  return in.timepoint() == Timepoint::Preop ? refine_preop_ce(in) : refine_postop_ce(in);
}

}  // namespace rk
