#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "emb/data/sampling.hpp"
#include "emb/elastic/bounding.hpp"

namespace emb {

inline const std::vector<double> kDefaultThresholds{0.3, 0.5, 0.7};

/// Maps frame indices of one sample to seconds.
struct FrameGrid {
  double duration = 0.0;
  std::size_t frames = 0;

  Interval seconds(const IndexRange& r) const { return frames_to_seconds(r, duration, frames); }
};

struct SampleRecord {
  std::string id;
  Interval prediction;  // seconds; for elastic reports the best enumerated pair
  Interval truth;
  double iou = 0.0;
  bool empty = false;  // elastic: no start <= end pair was available
};

struct EvalReport {
  std::string mode = "DET";
  std::vector<double> thresholds;
  std::vector<double> recall;
  double miou = 0.0;
  std::size_t count = 0;
  std::vector<SampleRecord> samples;

  double recall_at(double m) const {
    for (std::size_t i = 0; i < thresholds.size(); ++i)
      if (thresholds[i] == m) return recall[i];
    fail(Error::Kind::validation, "report has no threshold " + std::to_string(m));
  }
};

namespace detail {

inline void summarise(EvalReport& r, const std::vector<double>& thresholds) {
  r.thresholds = thresholds;
  r.count = r.samples.size();
  r.recall.assign(thresholds.size(), 0.0);
  if (r.count == 0) return;
  double sum = 0.0;
  std::vector<std::size_t> hits(thresholds.size(), 0);
  for (const auto& s : r.samples) {
    sum += s.iou;
    for (std::size_t i = 0; i < thresholds.size(); ++i)
      if (s.iou >= thresholds[i]) ++hits[i];
  }
  for (std::size_t i = 0; i < thresholds.size(); ++i) r.recall[i] = double(hits[i]) / double(r.count);
  r.miou = sum / double(r.count);
}

}  // namespace detail

/// Recall at each IoU threshold (IoU >= m counts as correct) and mean IoU.
inline EvalReport recall_at_iou(const std::vector<Interval>& predictions, const std::vector<Interval>& truths,
                                const std::vector<double>& thresholds = kDefaultThresholds,
                                const std::vector<std::string>& ids = {}) {
  if (predictions.size() != truths.size())
    fail(Error::Kind::shape, "recall_at_iou: " + std::to_string(predictions.size()) + " predictions for " +
                                 std::to_string(truths.size()) + " ground truths");
  EvalReport r;
  for (std::size_t i = 0; i < predictions.size(); ++i)
    r.samples.push_back({ids.empty() ? std::to_string(i) : ids[i], predictions[i], truths[i],
                         temporal_iou(predictions[i], truths[i]), false});
  detail::summarise(r, thresholds);
  return r;
}

/// Best IoU over every (s, e) pair with s in the start range, e in the end
/// range and s <= e. A sample without such a pair scores 0 and is flagged.
inline EvalReport evaluate_elastic(const std::vector<ElasticBoundary>& predictions,
                                   const std::vector<Interval>& truths, const std::vector<FrameGrid>& grids,
                                   const std::vector<double>& thresholds = kDefaultThresholds,
                                   const std::vector<std::string>& ids = {}) {
  if (predictions.size() != truths.size() || grids.size() != truths.size())
    fail(Error::Kind::shape, "evaluate_elastic: prediction, truth and grid counts differ");
  EvalReport r;
  r.mode = "ELA";
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const auto& p = predictions[i];
    if (p.start.first > p.start.last || p.end.first > p.end.last)
      fail(Error::Kind::validation, "evaluate_elastic: reversed candidate range");
    SampleRecord rec{ids.empty() ? std::to_string(i) : ids[i], {0.0, 0.0, Unit::seconds}, truths[i], 0.0, true};
    for (long s = p.start.first; s <= p.start.last; ++s)
      for (long e = std::max(s, p.end.first); e <= p.end.last; ++e) {
        const Interval cand = grids[i].seconds({s, e});
        const double iou = temporal_iou(cand, truths[i]);
        if (rec.empty || iou > rec.iou) {
          rec.iou = iou;
          rec.prediction = cand;
        }
        rec.empty = false;
      }
    r.samples.push_back(rec);
  }
  detail::summarise(r, thresholds);
  return r;
}

/// Widens both endpoints of each prediction by ceil(fraction * length)
/// frames, clipped to the valid frames.
inline std::vector<ElasticBoundary> global_shift_baseline(const std::vector<IndexRange>& predictions,
                                                          const std::vector<std::size_t>& valid_frames,
                                                          double fraction = 0.1) {
  if (predictions.size() != valid_frames.size()) fail(Error::Kind::shape, "global_shift_baseline: size mismatch");
  if (!(fraction >= 0.0)) fail(Error::Kind::validation, "global_shift_baseline: fraction must be nonnegative");
  std::vector<ElasticBoundary> out;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const auto& p = predictions[i];
    const long r = long(std::ceil(fraction * double(p.size()) - 1e-9));
    const long hi = long(valid_frames[i]) - 1;
    out.push_back({{std::max(0L, p.first - r), std::min(hi, p.first + r)},
                   {std::max(0L, p.last - r), std::min(hi, p.last + r)}});
  }
  return out;
}

}  // namespace emb
