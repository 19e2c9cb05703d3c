#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "emb/data/features.hpp"
#include "emb/elastic/interval.hpp"

namespace emb {

/// Fixed-size frame container: `frames` columns of which the first `valid`
/// are real; bin_start[t] is the first raw frame pooled into frame t.
struct DownsampledVideo {
  std::size_t dim = 0;
  std::size_t frames = 0;
  std::size_t valid = 0;
  std::size_t raw_frames = 0;
  std::vector<float> values;  // dim x frames, zero in padded columns
  std::vector<std::size_t> bin_start;

  /// Raw frames [first, last] pooled into downsampled frame t.
  IndexRange raw_range(std::size_t t) const {
    const std::size_t end = t + 1 < valid ? bin_start[t + 1] : raw_frames;
    return {long(bin_start[t]), long(end) - 1};
  }

  std::size_t frame_of_raw(std::size_t raw) const {
    auto it = std::upper_bound(bin_start.begin(), bin_start.end(), raw);
    return std::size_t(it - bin_start.begin()) - 1;
  }
};

/// Max-pools raw frames into at most `max_frames` contiguous bins (bin t
/// covers raw frames floor(t*R/T) .. floor((t+1)*R/T)-1) and zero-pads to
/// `container` columns.
inline DownsampledVideo downsample_video(const VideoFeatures& raw, std::size_t max_frames, std::size_t container) {
  if (raw.frames == 0) fail(Error::Kind::validation, "downsample_video: empty video");
  if (container < max_frames) fail(Error::Kind::config, "downsample_video: container smaller than max_frames");
  DownsampledVideo v;
  v.dim = raw.dim;
  v.frames = container;
  v.raw_frames = raw.frames;
  v.valid = std::min(raw.frames, max_frames);
  v.values.assign(raw.dim * container, 0.0f);
  for (std::size_t t = 0; t < v.valid; ++t) {
    const std::size_t lo = t * raw.frames / v.valid, hi = (t + 1) * raw.frames / v.valid;
    v.bin_start.push_back(lo);
    for (std::size_t d = 0; d < raw.dim; ++d) {
      float m = raw.at(d, lo);
      for (std::size_t r = lo + 1; r < hi; ++r) m = std::max(m, raw.at(d, r));
      v.values[d * container + t] = m;
    }
  }
  return v;
}

inline DownsampledVideo downsample_video(const VideoFeatures& raw, std::size_t max_frames) {
  return downsample_video(raw, max_frames, max_frames);
}

/// Seconds to the inclusive frame range on a grid of `frames` frames over
/// `duration` seconds. Endpoints round to the nearest frame boundary; frame
/// t spans [t, t+1) * duration / frames.
inline IndexRange seconds_to_frames(double start, double end, double duration, std::size_t frames) {
  if (!(duration > 0.0) || frames == 0) fail(Error::Kind::validation, "seconds_to_frames: empty grid");
  const double scale = double(frames) / duration;
  long first = std::lround(start * scale);
  long last = std::lround(end * scale) - 1;
  first = std::clamp(first, 0L, long(frames) - 1);
  last = std::clamp(last, first, long(frames) - 1);
  return {first, last};
}

inline Interval frames_to_seconds(const IndexRange& r, double duration, std::size_t frames) {
  const double unit = duration / double(frames);
  return {double(r.first) * unit, double(r.last + 1) * unit, Unit::seconds};
}

inline std::size_t clip_of_frame(std::size_t frame, std::size_t frames_per_clip) { return frame / frames_per_clip; }

inline IndexRange frames_of_clip(std::size_t clip, std::size_t frames_per_clip) {
  return {long(clip * frames_per_clip), long((clip + 1) * frames_per_clip) - 1};
}

}  // namespace emb
