#pragma once

#include <optional>
#include <string>
#include <vector>

#include "emb/data/annotations.hpp"
#include "emb/data/sampling.hpp"
#include "emb/data/synthetic.hpp"
#include "emb/tensor/ops.hpp"

namespace emb {

/// One model-ready sample.
struct VideoInstance {
  std::string video_id;
  double duration = 0.0;
  DownsampledVideo video;
  std::size_t query_dim = 0;
  std::size_t words = 0;
  std::vector<float> query;  // query_dim x words
  IndexRange truth;          // annotated moment in frames
  Interval truth_seconds;
  std::optional<Interval> clean_seconds;

  std::size_t valid_frames() const { return video.valid; }
};

inline VideoInstance make_instance(const AnnotationRecord& r, const FeatureStore& store, std::size_t max_frames,
                                   std::size_t container, const CleanTruth* clean = nullptr) {
  VideoInstance v;
  v.video_id = r.video_id;
  v.duration = r.duration;
  v.video = downsample_video(store.get(r.video_id), max_frames, container);
  const auto tokens = tokenize(r.query);
  v.query_dim = store.vocab.dim();
  v.words = tokens.size();
  v.query.assign(v.query_dim * v.words, 0.0f);
  for (std::size_t l = 0; l < tokens.size(); ++l) {
    const auto e = store.vocab.embed(tokens[l]);
    for (std::size_t d = 0; d < v.query_dim; ++d) v.query[d * v.words + l] = e[d];
  }
  v.truth = seconds_to_frames(r.start, r.end, r.duration, v.video.valid);
  v.truth_seconds = {r.start, r.end, Unit::seconds};
  if (clean) v.clean_seconds = Interval{clean->start, clean->end, Unit::seconds};
  return v;
}

inline std::vector<VideoInstance> make_instances(const Corpus& corpus, const std::string& split,
                                                 std::size_t max_frames, std::size_t container) {
  std::vector<VideoInstance> out;
  for (const auto& r : corpus.records) {
    if (r.split != split) continue;
    auto it = corpus.clean.find(r.video_id);
    out.push_back(make_instance(r, corpus.store, max_frames, container,
                                it == corpus.clean.end() ? nullptr : &it->second));
  }
  return out;
}

/// Samples packed side by side: video is Dv x (S*T), query is Dq x (S*L)
/// with L the longest query in the batch.
template <class Real>
struct Batch {
  Tensor<Real> video, query;
  Mask video_mask, query_mask;
  std::size_t frames = 0, words = 0;
  std::vector<std::size_t> valid_frames;
  std::vector<IndexRange> truth;
  std::vector<std::size_t> indices;

  std::size_t size() const { return valid_frames.size(); }
};

template <class Real>
Batch<Real> pack_batch(const std::vector<VideoInstance>& data, const std::vector<std::size_t>& indices) {
  if (indices.empty()) fail(Error::Kind::validation, "pack_batch: empty batch");
  const auto& first = data[indices.front()];
  const std::size_t T = first.video.frames, Dv = first.video.dim, Dq = first.query_dim, S = indices.size();
  std::size_t L = 0;
  for (auto i : indices) {
    const auto& v = data[i];
    if (v.video.frames != T || v.video.dim != Dv || v.query_dim != Dq)
      fail(Error::Kind::shape, "pack_batch: sample '" + v.video_id + "' has a different layout");
    L = std::max(L, v.words);
  }
  Batch<Real> b;
  b.frames = T;
  b.words = L;
  b.indices = indices;
  Buffer<Real> video(Dv * S * T, Real(0)), query(Dq * S * L, Real(0));
  b.video_mask.assign(S * T, 0);
  b.query_mask.assign(S * L, 0);
  for (std::size_t s = 0; s < S; ++s) {
    const auto& v = data[indices[s]];
    for (std::size_t d = 0; d < Dv; ++d)
      for (std::size_t t = 0; t < T; ++t) video[d * S * T + s * T + t] = Real(v.video.values[d * T + t]);
    for (std::size_t t = 0; t < v.video.valid; ++t) b.video_mask[s * T + t] = 1;
    for (std::size_t d = 0; d < Dq; ++d)
      for (std::size_t l = 0; l < v.words; ++l) query[d * S * L + s * L + l] = Real(v.query[d * v.words + l]);
    for (std::size_t l = 0; l < v.words; ++l) b.query_mask[s * L + l] = 1;
    b.valid_frames.push_back(v.video.valid);
    b.truth.push_back(v.truth);
  }
  b.video = Tensor<Real>::matrix(Dv, S * T, std::move(video));
  b.query = Tensor<Real>::matrix(Dq, S * L, std::move(query));
  return b;
}

}  // namespace emb
