#pragma once

#include <algorithm>
#include <string>

#include "emb/error.hpp"

namespace emb {

enum class Unit { frames, clips, seconds, continuous };

inline const char* unit_name(Unit u) {
  switch (u) {
    case Unit::frames: return "frames";
    case Unit::clips: return "clips";
    case Unit::seconds: return "seconds";
    case Unit::continuous: return "continuous";
  }
  return "?";
}

/// Closed-open span on a continuous axis.
struct Interval {
  double start = 0.0;
  double end = 0.0;
  Unit unit = Unit::continuous;

  double length() const { return end - start; }
};

/// Inclusive range of integer indices (frames or clips), 0-based.
struct IndexRange {
  long first = 0;
  long last = 0;

  long size() const { return last - first + 1; }
  bool contains(long i) const { return first <= i && i <= last; }
  bool operator==(const IndexRange&) const = default;

  /// Index t occupies [t, t+1) on the continuous axis.
  Interval span(Unit unit = Unit::frames) const { return {double(first), double(last + 1), unit}; }
};

inline double temporal_iou(const Interval& a, const Interval& b) {
  if (a.unit != b.unit)
    fail(Error::Kind::validation, std::string("temporal_iou: unit mismatch (") + unit_name(a.unit) + " vs " +
                                      unit_name(b.unit) + ")");
  if (a.start > a.end || b.start > b.end) fail(Error::Kind::validation, "temporal_iou: reversed interval");
  const double inter = std::max(0.0, std::min(a.end, b.end) - std::max(a.start, b.start));
  const double uni = std::max(a.end, b.end) - std::min(a.start, b.start);
  if (uni <= 0.0) return a.start == b.start ? 1.0 : 0.0;
  return inter / uni;
}

inline double temporal_iou(const IndexRange& a, const IndexRange& b) {
  return temporal_iou(a.span(), b.span());
}

}  // namespace emb
