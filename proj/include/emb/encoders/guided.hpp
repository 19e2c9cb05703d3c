#pragma once

#include <string>
#include <vector>

#include "emb/encoders/attention.hpp"

namespace emb {

/// Learned 1x1 convolution mixing three stacked D x N feature maps into one.
template <class Real>
struct StackFusion {
  Tensor<Real> weight;  // {1, 3, 1, 1}
  Tensor<Real> bias;    // {1}

  static StackFusion create(ParameterSet<Real>& params, const std::string& name, std::mt19937_64& rng) {
    StackFusion f;
    f.weight = params.uniform(name + ".weight", {1, 3, 1, 1}, 3, rng);
    f.bias = params.constant(name + ".bias", {1}, Real(0));
    return f;
  }

  Tensor<Real> operator()(const Tensor<Real>& a, const Tensor<Real>& b, const Tensor<Real>& c) const {
    const std::size_t D = a.rows(), n = a.cols();
    const Shape flat{1, D * n};
    Tensor<Real> stacked = concat_rows<Real>({reshape(a, flat), reshape(b, flat), reshape(c, flat)});
    return reshape(conv2d(stacked, weight, bias, 1, D * n), Shape{D, n});
  }
};

template <class Real>
struct GuidedFrameFeatures {
  Tensor<Real> preceding;
  Tensor<Real> subsequent;
  Sequence<Real> fused;
};

template <class Real>
struct GuidedSegmentFeatures {
  Tensor<Real> start_frames;
  Tensor<Real> end_frames;
  Sequence<Real> fused;
};

/// Running max over each sample's unmasked frames in both directions, fused
/// with the frames themselves.
template <class Real>
GuidedFrameFeatures<Real> content_guided(const StackFusion<Real>& fusion, const Sequence<Real>& frames) {
  const std::size_t T = frames.length, segs = frames.segments();
  if (T == 0 || segs == 0) fail(Error::Kind::validation, "content_guided: empty sequence");
  GuidedFrameFeatures<Real> g;
  g.preceding = cumulative_max(frames.x, frames.mask, T, false);
  g.subsequent = cumulative_max(frames.x, frames.mask, T, true);
  g.fused = {mask_columns(fusion(frames.x, g.preceding, g.subsequent), frames.mask), frames.mask, T};
  return g;
}

/// Proposal features fused with the features of their first and last clip.
/// `start` and `end` give the clip index of every proposal slot; `clips` is
/// D x (segments * num_clips).
template <class Real>
GuidedSegmentFeatures<Real> boundary_guided(const StackFusion<Real>& fusion, const Sequence<Real>& segments,
                                            const Tensor<Real>& clips, std::size_t num_clips,
                                            const std::vector<std::size_t>& start,
                                            const std::vector<std::size_t>& end) {
  const std::size_t K = segments.length, segs = segments.segments();
  if (start.size() != K || end.size() != K)
    fail(Error::Kind::shape, "boundary_guided: one boundary per proposal slot required");
  if (clips.cols() != segs * num_clips) fail(Error::Kind::shape, "boundary_guided: clip batch mismatch");
  std::vector<long> sta(segs * K), fin(segs * K);
  for (std::size_t k = 0; k < K; ++k) {
    if (start[k] > end[k] || end[k] >= num_clips)
      fail(Error::Kind::validation, "boundary_guided: proposal " + std::to_string(k) + " boundary (" +
                                        std::to_string(start[k]) + ", " + std::to_string(end[k]) +
                                        ") outside " + std::to_string(num_clips) + " clips");
    for (std::size_t s = 0; s < segs; ++s) {
      sta[s * K + k] = long(s * num_clips + start[k]);
      fin[s * K + k] = long(s * num_clips + end[k]);
    }
  }
  GuidedSegmentFeatures<Real> g;
  g.start_frames = gather_columns(clips, sta);
  g.end_frames = gather_columns(clips, fin);
  g.fused = {mask_columns(fusion(segments.x, g.start_frames, g.end_frames), segments.mask), segments.mask, K};
  return g;
}

}  // namespace emb
