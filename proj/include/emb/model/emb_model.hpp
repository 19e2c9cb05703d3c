#pragma once

#include <random>
#include <string>
#include <vector>

#include "emb/data/batch.hpp"
#include "emb/encoders/mgin.hpp"
#include "emb/heads/endpoints.hpp"
#include "emb/heads/fusion.hpp"
#include "emb/heads/proposals.hpp"

namespace emb {

struct ModelConfig {
  std::size_t video_dim = 1024;
  std::size_t query_dim = 300;
  std::size_t width = 128;
  std::size_t heads = 8;
  std::size_t depth = 1;  // interaction blocks per branch
  std::size_t lstm_layers = 2;
  std::size_t highlight_kernel = 1;
  std::size_t align_kernel = 3;
  std::size_t num_clips = 16;
  std::size_t max_frames = 128;
  double dropout = 0.2;
  bool guided = true;

  std::size_t frames_per_clip() const { return max_frames / num_clips; }

  void validate() const {
    if (width == 0 || video_dim == 0 || query_dim == 0) fail(Error::Kind::config, "model widths must be positive");
    if (heads == 0 || width % heads != 0) fail(Error::Kind::config, "model width must be divisible by heads");
    if (num_clips == 0 || max_frames % num_clips != 0)
      fail(Error::Kind::config, "max_frames must be a multiple of num_clips");
    if (depth == 0 || lstm_layers == 0) fail(Error::Kind::config, "depth and lstm_layers must be positive");
    if (dropout < 0 || dropout >= 1) fail(Error::Kind::config, "dropout must lie in [0, 1)");
  }
};

/// Input projections and interaction network of one branch.
template <class Real>
struct BranchEncoder {
  Dense<Real> video_proj, query_proj;
  std::vector<MginBlock<Real>> blocks;

  static BranchEncoder create(ParameterSet<Real>& params, const std::string& name, const ModelConfig& c,
                              std::mt19937_64& rng) {
    BranchEncoder b;
    b.video_proj = Dense<Real>::create(params, name + ".video_proj", c.video_dim, c.width, rng);
    b.query_proj = Dense<Real>::create(params, name + ".query_proj", c.query_dim, c.width, rng);
    for (std::size_t i = 0; i < c.depth; ++i)
      b.blocks.push_back(
          MginBlock<Real>::create(params, name + ".mgin" + std::to_string(i), c.width, c.heads, c.guided, rng));
    return b;
  }

  std::pair<Sequence<Real>, Sequence<Real>> embed(const Batch<Real>& batch) const {
    Sequence<Real> f{mask_columns(video_proj(batch.video), batch.video_mask), batch.video_mask, batch.frames};
    Sequence<Real> q{mask_columns(query_proj(batch.query), batch.query_mask), batch.query_mask, batch.words};
    return {positional_embed(f), positional_embed(q)};
  }
};

template <class Real>
struct ModelOutput {
  EndpointOutput<Real> endpoints;
  std::optional<ProposalMap<Real>> proposals;
};

/// Two-branch network: a bounding branch predicting endpoint distributions
/// and highlight scores, and an alignment branch scoring clip proposals.
template <class Real>
class EmbModel {
 public:
  EmbModel(const EmbModel&) = delete;
  EmbModel& operator=(const EmbModel&) = delete;

  EmbModel(const ModelConfig& config, std::uint64_t seed) : config_(config) {
    config_.validate();
    std::mt19937_64 rng(seed);
    bound_ = BranchEncoder<Real>::create(params_, "bound", config_, rng);
    bound_fusion_ = ContextQueryFusion<Real>::create(params_, "bound.fusion", config_.width, rng);
    endpoint_ = EndpointHead<Real>::create(params_, "bound.endpoint", config_.width, config_.lstm_layers,
                                           config_.highlight_kernel, rng);
    bound_count_ = params_.size();
    align_ = BranchEncoder<Real>::create(params_, "align", config_, rng);
    align_head_ = AlignmentHead<Real>::create(params_, "align.head", config_.width, config_.align_kernel, rng);
  }

  const ModelConfig& config() const { return config_; }
  ParameterSet<Real>& parameters() { return params_; }
  const ParameterSet<Real>& parameters() const { return params_; }
  /// Parameters [0, bounding_parameter_count()) belong to the bounding branch.
  std::size_t bounding_parameter_count() const { return bound_count_; }

  ProposalLayout layout_for(std::size_t frames) const {
    const std::size_t fpc = config_.frames_per_clip();
    if (frames % fpc != 0)
      fail(Error::Kind::shape, "frame container " + std::to_string(frames) + " is not a multiple of " +
                                   std::to_string(fpc) + " frames per clip");
    return make_proposal_layout(frames / fpc, fpc);
  }

  EndpointOutput<Real> forward_bounding(const Batch<Real>& batch, const ForwardContext& ctx) const {
    auto [f, q] = bound_.embed(batch);
    auto enc = mgin_frames(bound_.blocks, f, q, ctx);
    Sequence<Real> fused{fuse_context_query(bound_fusion_, enc.visual, enc.query), enc.visual.mask, enc.visual.length};
    return predict_endpoints(endpoint_, fused, enc.query);
  }

  /// Scored proposal map; alpha is filled when `with_truth` is set.
  ProposalMap<Real> forward_alignment(const Batch<Real>& batch, const ForwardContext& ctx, bool with_truth) const {
    const ProposalLayout layout = layout_for(batch.frames);
    auto [f, q] = align_.embed(batch);
    Sequence<Real> clips = pool_clips(f, layout);
    ProposalMap<Real> map = build_proposal_map(clips, layout, batch.valid_frames,
                                               with_truth ? batch.truth : std::vector<IndexRange>{});
    auto enc = mgin_segments(align_.blocks, map.features, q, clips.x, layout.num_clips, layout.start_clip,
                             layout.end_clip, ctx);
    map.features = enc.visual;
    predict_alignment(align_head_, map, enc.query);
    return map;
  }

  ModelOutput<Real> forward(const Batch<Real>& batch, const ForwardContext& ctx, bool with_alignment = true,
                            bool with_truth = true) const {
    ModelOutput<Real> out;
    out.endpoints = forward_bounding(batch, ctx);
    if (with_alignment) out.proposals = forward_alignment(batch, ctx, with_truth);
    return out;
  }

 private:
  ModelConfig config_;
  ParameterSet<Real> params_;
  BranchEncoder<Real> bound_, align_;
  ContextQueryFusion<Real> bound_fusion_;
  EndpointHead<Real> endpoint_;
  AlignmentHead<Real> align_head_;
  std::size_t bound_count_ = 0;
};

}  // namespace emb
