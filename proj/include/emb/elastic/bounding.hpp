#pragma once

#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "emb/elastic/interval.hpp"

namespace emb {

/// Candidate start and end ranges (inclusive indices).
struct ElasticBoundary {
  IndexRange start;
  IndexRange end;

  static ElasticBoundary singleton(const IndexRange& b) { return {{b.first, b.first}, {b.last, b.last}}; }
  bool operator==(const ElasticBoundary&) const = default;
};

/// Index of the highest-scoring valid proposal whose IoU with the manual
/// boundary reaches tau; ties go to the smaller index.
inline std::optional<std::size_t> select_pseudo_boundary(std::span<const double> scores,
                                                         std::span<const double> alpha,
                                                         std::span<const std::uint8_t> valid, double tau) {
  if (scores.size() != alpha.size() || scores.size() != valid.size())
    fail(Error::Kind::shape, "select_pseudo_boundary: score, IoU and validity lengths differ");
  std::optional<std::size_t> best;
  for (std::size_t k = 0; k < scores.size(); ++k) {
    if (!valid[k] || alpha[k] < tau) continue;
    if (!best || scores[k] > scores[*best]) best = k;
  }
  return best;
}

/// Ranges spanning the manual and pseudo endpoints; singleton ranges on the
/// manual boundary when no pseudo boundary qualified.
inline ElasticBoundary build_elastic(const IndexRange& manual, const std::optional<IndexRange>& pseudo) {
  if (manual.first > manual.last) fail(Error::Kind::validation, "build_elastic: reversed manual boundary");
  if (!pseudo) return ElasticBoundary::singleton(manual);
  return {{std::min(pseudo->first, manual.first), std::max(pseudo->first, manual.first)},
          {std::min(pseudo->last, manual.last), std::max(pseudo->last, manual.last)}};
}

enum class ScheduleScheme { constant, linear, sigmoid };

inline ScheduleScheme parse_schedule(const std::string& s) {
  if (s == "constant") return ScheduleScheme::constant;
  if (s == "linear") return ScheduleScheme::linear;
  if (s == "sigmoid") return ScheduleScheme::sigmoid;
  fail(Error::Kind::config, "unknown threshold schedule '" + s + "' (constant|linear|sigmoid)");
}

inline const char* schedule_name(ScheduleScheme s) {
  switch (s) {
    case ScheduleScheme::constant: return "constant";
    case ScheduleScheme::linear: return "linear";
    case ScheduleScheme::sigmoid: return "sigmoid";
  }
  return "?";
}

struct ThresholdSchedule {
  ScheduleScheme scheme = ScheduleScheme::sigmoid;
  double start = 1.0;
  double end = 0.5;
  double midpoint = 0.5;
  double steepness = 12.0;
};

inline double threshold_at(const ThresholdSchedule& s, std::size_t epoch, std::size_t total_epochs) {
  if (epoch > total_epochs) fail(Error::Kind::validation, "threshold_at: epoch beyond schedule");
  const double x = total_epochs ? double(epoch) / double(total_epochs) : 1.0;
  switch (s.scheme) {
    case ScheduleScheme::constant: return s.end;
    case ScheduleScheme::linear: return s.start + (s.end - s.start) * x;
    case ScheduleScheme::sigmoid:
      return s.end + (s.start - s.end) / (1.0 + std::exp(s.steepness * (x - s.midpoint)));
  }
  return s.end;
}

/// Pair (i, j), i <= j < valid_frames, maximising p_start[i] * p_end[j].
inline IndexRange infer_det(std::span<const double> p_start, std::span<const double> p_end,
                            std::size_t valid_frames) {
  if (valid_frames == 0 || p_start.size() < valid_frames || p_end.size() < valid_frames)
    fail(Error::Kind::validation, "infer_det: no valid frames");
  IndexRange best{0, 0};
  double best_score = -1.0;
  for (std::size_t i = 0; i < valid_frames; ++i)
    for (std::size_t j = i; j < valid_frames; ++j) {
      const double v = p_start[i] * p_end[j];
      if (v > best_score) {
        best_score = v;
        best = {long(i), long(j)};
      }
    }
  return best;
}

/// Combines the determined boundary with the top-scoring proposal.
inline ElasticBoundary infer_ela(const IndexRange& det, const IndexRange& proposal) {
  return build_elastic(det, proposal);
}

}  // namespace emb
