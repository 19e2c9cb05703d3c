#pragma once

#include <cmath>
#include <vector>

#include "emb/elastic/bounding.hpp"
#include "emb/tensor/ops.hpp"

namespace emb {

struct LossWeights {
  double bound = 1.0;      // lambda_1
  double align = 1.0;      // lambda_2
  double highlight = 5.0;  // lambda_3
  double tau_upper = 0.7;
  double tau_lower = 0.3;
};

/// Soft alignment target: 1 above tau_u, 0 below tau_l, alpha in between.
inline double alignment_target(double alpha, const LossWeights& w) {
  if (alpha >= w.tau_upper) return 1.0;
  if (alpha < w.tau_lower) return 0.0;
  return alpha;
}

/// Mean BCE between sigmoid(logits) and the soft targets over valid slots.
template <class Real>
Tensor<Real> loss_align(const Tensor<Real>& logits, const std::vector<double>& alpha, const Mask& valid,
                        std::size_t slots, const LossWeights& w) {
  std::vector<Real> y(alpha.size());
  for (std::size_t i = 0; i < alpha.size(); ++i) y[i] = Real(alignment_target(alpha[i], w));
  return bce_with_logits(logits, y, valid, slots);
}

/// -log of the start mass inside the start range, plus the same for the end.
template <class Real>
Tensor<Real> loss_bound(const Tensor<Real>& p_start, const Tensor<Real>& p_end,
                        const std::vector<ElasticBoundary>& targets, std::size_t length,
                        std::size_t* clamped = nullptr) {
  std::vector<ColumnRange> s, e;
  for (const auto& t : targets) {
    if (t.start.first < 0 || t.end.first < 0) fail(Error::Kind::validation, "loss_bound: negative candidate index");
    s.emplace_back(std::size_t(t.start.first), std::size_t(t.start.last));
    e.emplace_back(std::size_t(t.end.first), std::size_t(t.end.last));
  }
  std::size_t c1 = 0, c2 = 0;
  Tensor<Real> l = add(log_mass_loss(p_start, s, length, &c1), log_mass_loss(p_end, e, length, &c2));
  if (clamped) *clamped = c1 + c2;
  return l;
}

/// Cross-entropy against soft start/end target distributions.
template <class Real>
Tensor<Real> loss_bound_soft(const Tensor<Real>& p_start, const Tensor<Real>& p_end,
                             const std::vector<Real>& target_start, const std::vector<Real>& target_end,
                             std::size_t length) {
  return add(soft_cross_entropy(p_start, target_start, length), soft_cross_entropy(p_end, target_end, length));
}

/// Foreground indicator over [min start, max end], widened by rho times the
/// span length on both sides (floor/ceil) and clipped to the valid frames.
inline std::vector<double> highlight_target(const ElasticBoundary& b, double rho, std::size_t valid_frames,
                                            std::size_t length) {
  if (rho < 0) fail(Error::Kind::validation, "highlight extension ratio must be nonnegative");
  const double lo = double(b.start.first), hi = double(b.end.last);
  const double ext = rho * (hi - lo + 1.0);
  const long first = std::max(0L, long(std::floor(lo - ext)));
  const long last = std::min(long(valid_frames) - 1, long(std::ceil(hi + ext)));
  std::vector<double> y(length, 0.0);
  for (long t = first; t <= last; ++t) y[std::size_t(t)] = 1.0;
  return y;
}

template <class Real>
Tensor<Real> loss_highlight(const Tensor<Real>& highlight_logits, const std::vector<ElasticBoundary>& targets,
                            const std::vector<std::size_t>& valid_frames, const Mask& frame_mask,
                            std::size_t length, double rho) {
  std::vector<Real> y;
  y.reserve(targets.size() * length);
  for (std::size_t s = 0; s < targets.size(); ++s)
    for (double v : highlight_target(targets[s], rho, valid_frames[s], length)) y.push_back(Real(v));
  return bce_with_logits(highlight_logits, y, frame_mask, length);
}

template <class Real>
Tensor<Real> total_loss(const Tensor<Real>& bound, const Tensor<Real>& align, const Tensor<Real>& highlight,
                        const LossWeights& w) {
  for (const auto* t : {&bound, &align, &highlight})
    if (t->defined() && !std::isfinite(double(t->item())))
      fail(Error::Kind::numeric, "total_loss: non-finite component");
  Tensor<Real> total = scale(bound, Real(w.bound));
  if (align.defined()) total = add(total, scale(align, Real(w.align)));
  return add(total, scale(highlight, Real(w.highlight)));
}

}  // namespace emb
