#pragma once

#include <string>
#include <vector>

#include "emb/encoders/guided.hpp"

namespace emb {

/// One interaction block: optional guided fusion of the visual stream, then
/// self-attention in each modality and cross-attention between them.
template <class Real>
struct MginBlock {
  bool guided = true;
  StackFusion<Real> fusion;
  AttentionLayer<Real> self_visual, self_query, cross_visual, cross_query;

  static MginBlock create(ParameterSet<Real>& params, const std::string& name, std::size_t width,
                          std::size_t heads, bool guided, std::mt19937_64& rng) {
    MginBlock b;
    b.guided = guided;
    if (guided) b.fusion = StackFusion<Real>::create(params, name + ".guide", rng);
    b.self_visual = AttentionLayer<Real>::create(params, name + ".self_visual", width, heads, rng);
    b.self_query = AttentionLayer<Real>::create(params, name + ".self_query", width, heads, rng);
    b.cross_visual = AttentionLayer<Real>::create(params, name + ".cross_visual", width, heads, rng);
    b.cross_query = AttentionLayer<Real>::create(params, name + ".cross_query", width, heads, rng);
    return b;
  }
};

template <class Real>
struct MginOutput {
  Sequence<Real> visual;
  Sequence<Real> query;
};

namespace detail {

template <class Real>
MginOutput<Real> interact(const MginBlock<Real>& b, const Sequence<Real>& visual, const Sequence<Real>& query,
                          const ForwardContext& ctx) {
  Sequence<Real> v = multi_head(b.self_visual, visual, visual, ctx);
  Sequence<Real> q = multi_head(b.self_query, query, query, ctx);
  // Both cross steps read the self-attended streams.
  Sequence<Real> v2 = multi_head(b.cross_visual, v, q, ctx);
  Sequence<Real> q2 = multi_head(b.cross_query, q, v, ctx);
  return {v2, q2};
}

}  // namespace detail

/// Frame-level network: content-guided fusion feeds each block.
template <class Real>
MginOutput<Real> mgin_frames(const std::vector<MginBlock<Real>>& blocks, Sequence<Real> frames,
                             Sequence<Real> query, const ForwardContext& ctx) {
  for (const auto& b : blocks) {
    Sequence<Real> v = b.guided ? content_guided(b.fusion, frames).fused : frames;
    auto out = detail::interact(b, v, query, ctx);
    frames = out.visual;
    query = out.query;
  }
  return {frames, query};
}

/// Segment-level network: boundary-guided fusion with the clip features at
/// each proposal's endpoints.
template <class Real>
MginOutput<Real> mgin_segments(const std::vector<MginBlock<Real>>& blocks, Sequence<Real> segments,
                               Sequence<Real> query, const Tensor<Real>& clips, std::size_t num_clips,
                               const std::vector<std::size_t>& start, const std::vector<std::size_t>& end,
                               const ForwardContext& ctx) {
  for (const auto& b : blocks) {
    Sequence<Real> v =
        b.guided ? boundary_guided(b.fusion, segments, clips, num_clips, start, end).fused : segments;
    auto out = detail::interact(b, v, query, ctx);
    segments = out.visual;
    query = out.query;
  }
  return {segments, query};
}

}  // namespace emb
