#pragma once

#include <string>
#include <vector>

#include "emb/elastic/interval.hpp"
#include "emb/encoders/attention.hpp"
#include "emb/heads/fusion.hpp"

namespace emb {

/// Enumeration of the upper triangle of the clip-pair grid. Slot k runs in
/// row-major order: (0,0), (0,1), ..., (0,N-1), (1,1), ...
struct ProposalLayout {
  std::size_t num_clips = 0;
  std::size_t frames_per_clip = 1;
  std::vector<std::size_t> start_clip, end_clip;
  std::vector<long> grid_slot;  // N*N entries: slot index, or -1 below the diagonal

  std::size_t slots() const { return start_clip.size(); }
  std::size_t frames() const { return num_clips * frames_per_clip; }

  IndexRange clip_range(std::size_t k) const { return {long(start_clip[k]), long(end_clip[k])}; }

  std::size_t valid_clips(std::size_t valid_frames) const {
    return (valid_frames + frames_per_clip - 1) / frames_per_clip;
  }

  /// Frames covered by slot k, truncated at the end of the video.
  IndexRange frame_range(std::size_t k, std::size_t valid_frames) const {
    const long first = long(start_clip[k] * frames_per_clip);
    const long last = long(std::min((end_clip[k] + 1) * frames_per_clip, valid_frames)) - 1;
    return {first, last};
  }

  bool valid(std::size_t k, std::size_t valid_frames) const { return end_clip[k] < valid_clips(valid_frames); }
};

inline ProposalLayout make_proposal_layout(std::size_t num_clips, std::size_t frames_per_clip) {
  if (num_clips == 0 || frames_per_clip == 0) fail(Error::Kind::config, "proposal layout needs at least one clip");
  ProposalLayout p;
  p.num_clips = num_clips;
  p.frames_per_clip = frames_per_clip;
  p.grid_slot.assign(num_clips * num_clips, -1);
  for (std::size_t i = 0; i < num_clips; ++i)
    for (std::size_t j = i; j < num_clips; ++j) {
      p.grid_slot[i * num_clips + j] = long(p.start_clip.size());
      p.start_clip.push_back(i);
      p.end_clip.push_back(j);
    }
  return p;
}

/// Max-pools each run of frames_per_clip frames into a clip; a clip with no
/// unmasked frame is masked.
template <class Real>
Sequence<Real> pool_clips(const Sequence<Real>& frames, const ProposalLayout& layout) {
  const std::size_t T = frames.length, N = layout.num_clips, fpc = layout.frames_per_clip, segs = frames.segments();
  if (T != N * fpc)
    fail(Error::Kind::shape, "pool_clips: " + std::to_string(T) + " frames do not form " + std::to_string(N) +
                                 " clips of " + std::to_string(fpc));
  std::vector<ColumnRange> ranges;
  Mask mask(segs * N, 0);
  for (std::size_t s = 0; s < segs; ++s)
    for (std::size_t c = 0; c < N; ++c) {
      ranges.emplace_back(s * T + c * fpc, s * T + (c + 1) * fpc);
      for (std::size_t t = c * fpc; t < (c + 1) * fpc; ++t)
        if (frames.mask.empty() || frames.mask[s * T + t]) mask[s * N + c] = 1;
    }
  return {pool_max(frames.x, ranges, frames.mask), mask, N};
}

/// Batch of proposal maps: features, validity and IoU to the manual boundary.
template <class Real>
struct ProposalMap {
  ProposalLayout layout;
  Sequence<Real> features;          // D x (S*K), mask = validity
  std::vector<std::size_t> valid_frames;
  std::vector<double> alpha;        // S*K; empty when no boundary was given
  Tensor<Real> logits;              // 1 x (S*K) once scored
  Tensor<Real> scores;              // sigmoid(logits)

  std::size_t slots() const { return layout.slots(); }
  std::size_t segments() const { return valid_frames.size(); }
  const Mask& valid() const { return features.mask; }

  std::vector<double> score_values() const {
    if (!scores.defined()) fail(Error::Kind::validation, "proposal map has not been scored");
    const auto v = scores.data();
    return {v.begin(), v.end()};
  }

  /// Highest-scoring valid slot of sample s; ties go to the smaller slot.
  std::size_t top_slot(std::size_t s) const {
    const auto v = scores.data();
    const std::size_t K = slots();
    long best = -1;
    for (std::size_t k = 0; k < K; ++k)
      if (valid()[s * K + k] && (best < 0 || v[s * K + k] > v[s * K + std::size_t(best)])) best = long(k);
    if (best < 0) fail(Error::Kind::validation, "sample " + std::to_string(s) + " has no valid proposal");
    return std::size_t(best);
  }
};

/// IoU of every slot with `truth` on the frame axis; invalid slots get 0.
inline std::vector<double> proposal_iou(const ProposalLayout& layout, std::size_t valid_frames,
                                        const IndexRange& truth) {
  std::vector<double> alpha(layout.slots(), 0.0);
  for (std::size_t k = 0; k < layout.slots(); ++k)
    if (layout.valid(k, valid_frames)) alpha[k] = temporal_iou(layout.frame_range(k, valid_frames), truth);
  return alpha;
}

/// v_k = max over the clips of slot k. `truth`, when non-empty, holds each
/// sample's manual boundary in frames.
template <class Real>
ProposalMap<Real> build_proposal_map(const Sequence<Real>& clips, const ProposalLayout& layout,
                                     const std::vector<std::size_t>& valid_frames,
                                     const std::vector<IndexRange>& truth = {}) {
  const std::size_t N = layout.num_clips, K = layout.slots(), segs = clips.segments();
  if (clips.length != N || valid_frames.size() != segs)
    fail(Error::Kind::shape, "build_proposal_map: clip batch does not match layout");
  if (!truth.empty() && truth.size() != segs) fail(Error::Kind::shape, "build_proposal_map: one boundary per sample");
  ProposalMap<Real> map;
  map.layout = layout;
  map.valid_frames = valid_frames;
  std::vector<ColumnRange> ranges;
  Mask valid(segs * K, 0);
  ranges.reserve(segs * K);
  for (std::size_t s = 0; s < segs; ++s)
    for (std::size_t k = 0; k < K; ++k) {
      ranges.emplace_back(s * N + layout.start_clip[k], s * N + layout.end_clip[k] + 1);
      valid[s * K + k] = layout.valid(k, valid_frames[s]);
    }
  map.features = {mask_columns(pool_max(clips.x, ranges, clips.mask), valid), valid, K};
  if (!truth.empty()) {
    map.alpha.reserve(segs * K);
    for (std::size_t s = 0; s < segs; ++s) {
      auto a = proposal_iou(layout, valid_frames[s], truth[s]);
      map.alpha.insert(map.alpha.end(), a.begin(), a.end());
    }
  }
  return map;
}

/// Fusion with the query, re-arrangement onto the N x N grid and a 2D
/// convolution producing one logit per slot.
template <class Real>
struct AlignmentHead {
  ContextQueryFusion<Real> fusion;
  Tensor<Real> conv_weight, conv_bias;

  static AlignmentHead create(ParameterSet<Real>& params, const std::string& name, std::size_t width,
                              std::size_t kernel, std::mt19937_64& rng) {
    if (kernel % 2 == 0) fail(Error::Kind::config, "alignment kernel size must be odd");
    AlignmentHead h;
    h.fusion = ContextQueryFusion<Real>::create(params, name + ".fusion", width, rng);
    h.conv_weight = params.uniform(name + ".conv.weight", {1, width, kernel, kernel}, width * kernel * kernel, rng);
    h.conv_bias = params.constant(name + ".conv.bias", {1}, Real(0));
    return h;
  }
};

/// Scores the encoded proposals in `map.features` against the query and
/// stores logits and sigmoid scores in the map.
template <class Real>
void predict_alignment(const AlignmentHead<Real>& head, ProposalMap<Real>& map, const Sequence<Real>& query) {
  const std::size_t N = map.layout.num_clips, K = map.slots(), segs = map.segments();
  Tensor<Real> fused = fuse_context_query(head.fusion, map.features, query);
  std::vector<long> to_grid(segs * N * N, -1), from_grid(segs * K);
  for (std::size_t s = 0; s < segs; ++s) {
    for (std::size_t g = 0; g < N * N; ++g) {
      const long k = map.layout.grid_slot[g];
      if (k >= 0 && map.valid()[s * K + std::size_t(k)]) to_grid[s * N * N + g] = long(s * K) + k;
    }
    for (std::size_t k = 0; k < K; ++k)
      from_grid[s * K + k] = long(s * N * N + map.layout.start_clip[k] * N + map.layout.end_clip[k]);
  }
  Tensor<Real> grid = gather_columns(fused, to_grid);
  Tensor<Real> grid_logits = conv2d(grid, head.conv_weight, head.conv_bias, N, N);
  map.logits = gather_columns(grid_logits, from_grid);
  map.scores = sigmoid(map.logits);
}

}  // namespace emb
