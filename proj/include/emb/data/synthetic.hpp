#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "emb/data/annotations.hpp"
#include "emb/data/features.hpp"

namespace emb {

struct SyntheticConfig {
  std::size_t train_samples = 2000;
  std::size_t test_samples = 500;
  std::size_t archetypes = 8;
  std::size_t video_dim = 32;
  std::size_t query_dim = 32;
  std::size_t min_frames = 40;  // raw frames per video
  std::size_t max_frames = 64;
  double fps = 2.0;
  double min_moment = 0.15;  // moment length as a fraction of the video
  double max_moment = 0.35;
  double signal = 1.0;       // amplitude of the archetype signature
  double noise = 0.6;        // per-entry background standard deviation
  double max_cosine = 0.3;   // upper bound on signature cosine similarity
  std::size_t distractors = 1;
  double jitter = 0.3;       // endpoint offset amplitude, fraction of moment length
  double asymmetry = 0.0;    // shifts the offset distribution outward (>0) or inward (<0)
  std::uint64_t seed = 1;
};

enum FrameFlag : std::uint8_t { kBackground = 0, kTarget = 1, kDistractor = 2 };

/// Noise-free moment and per-frame construction flags of one sample.
struct CleanTruth {
  std::string video_id;
  double start = 0.0;  // seconds
  double end = 0.0;
  std::size_t archetype = 0;
  std::vector<std::uint8_t> flags;
};

struct Corpus {
  std::vector<AnnotationRecord> records;
  FeatureStore store;
  std::map<std::string, CleanTruth> clean;

  std::vector<AnnotationRecord> split(const std::string& name) const {
    std::vector<AnnotationRecord> out;
    for (const auto& r : records)
      if (r.split == name) out.push_back(r);
    return out;
  }
};

namespace detail {

inline const std::vector<std::string>& synth_verbs() {
  static const std::vector<std::string> v{"opens", "closes", "lifts", "pours", "washes", "throws",
                                          "folds", "cuts",   "sweeps", "paints", "drinks", "reads"};
  return v;
}

inline const std::vector<std::string>& synth_objects() {
  static const std::vector<std::string> v{"door", "box",  "cup", "window", "towel", "bottle",
                                          "book", "bag", "bread", "chair", "laptop", "phone"};
  return v;
}

inline std::vector<std::vector<double>> make_signatures(const SyntheticConfig& c, std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<std::vector<double>> sigs;
  for (int attempt = 0; sigs.size() < c.archetypes; ++attempt) {
    if (attempt > 100000) fail(Error::Kind::config, "synthetic: cannot separate archetype signatures");
    std::vector<double> v(c.video_dim);
    double n = 0;
    for (auto& x : v) {
      x = g(rng);
      n += x * x;
    }
    for (auto& x : v) x /= std::sqrt(n);
    bool ok = true;
    for (const auto& s : sigs) {
      double dot = 0;
      for (std::size_t d = 0; d < v.size(); ++d) dot += v[d] * s[d];
      ok = ok && dot <= c.max_cosine;
    }
    if (ok) sigs.push_back(std::move(v));
  }
  // Scale so a signature frame's norm matches signal * sqrt(dim).
  for (auto& s : sigs)
    for (auto& x : s) x *= c.signal * std::sqrt(double(c.video_dim));
  return sigs;
}

}  // namespace detail

/// Expected |annotated - clean| per endpoint in moment lengths.
inline double expected_jitter(const SyntheticConfig& c) {
  const double a = std::abs(c.asymmetry);
  return c.jitter * (a <= 1.0 ? (1.0 + a * a) / 2.0 : a);
}

inline void validate(const SyntheticConfig& c) {
  if (c.archetypes == 0 || c.archetypes > detail::synth_verbs().size())
    fail(Error::Kind::config, "synthetic: archetypes must be in 1.." + std::to_string(detail::synth_verbs().size()));
  if (c.video_dim == 0 || c.query_dim == 0) fail(Error::Kind::config, "synthetic: feature widths must be positive");
  if (c.min_frames < 2 || c.min_frames > c.max_frames) fail(Error::Kind::config, "synthetic: bad frame range");
  if (!(c.min_moment > 0 && c.min_moment <= c.max_moment && c.max_moment < 1))
    fail(Error::Kind::config, "synthetic: moment fractions must satisfy 0 < min <= max < 1");
  if (c.jitter < 0 || !(c.fps > 0) || c.noise < 0) fail(Error::Kind::config, "synthetic: negative parameter");
  if (c.jitter * (1.0 - c.asymmetry) >= 0.5)
    fail(Error::Kind::config, "synthetic: jitter can collapse a moment (need jitter*(1-asymmetry) < 0.5)");
  const double margin = c.jitter * (1.0 + std::abs(c.asymmetry));
  if (c.max_moment * (1.0 + 2.0 * margin) > 1.0)
    fail(Error::Kind::config, "synthetic: moment plus jitter margin exceeds the video");
}

/// Builds a corpus of train and test samples. Each video is background noise
/// with the queried archetype's signature over the clean moment, plus
/// distractor segments of other archetypes elsewhere; the annotated boundary
/// is the clean one with each endpoint moved outward by jitter*len*u,
/// u ~ U[asymmetry-1, asymmetry+1].
inline Corpus generate_synthetic(const SyntheticConfig& c) {
  validate(c);
  std::mt19937_64 rng(c.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Corpus corpus;
  corpus.store.vocab = Vocabulary(c.query_dim);
  const auto sigs = detail::make_signatures(c, rng);

  std::vector<std::string> words{"a", "the", "person", "someone", "then"};
  for (std::size_t k = 0; k < c.archetypes; ++k) {
    words.push_back(detail::synth_verbs()[k]);
    words.push_back(detail::synth_objects()[k]);
  }
  for (const auto& w : words) {
    std::vector<float> v(c.query_dim);
    for (auto& x : v) x = float(gauss(rng) / std::sqrt(double(c.query_dim)));
    corpus.store.vocab.set(w, std::move(v));
  }

  const std::size_t total = c.train_samples + c.test_samples;
  for (std::size_t i = 0; i < total; ++i) {
    const std::string id = "s" + std::to_string(c.seed) + "_" + std::to_string(i);
    const std::size_t T = c.min_frames + std::size_t(rng() % (c.max_frames - c.min_frames + 1));
    const double frac = c.min_moment + (c.max_moment - c.min_moment) * unit(rng);
    const std::size_t len = std::max<std::size_t>(1, std::size_t(std::lround(frac * double(T))));
    const double reach = c.jitter * double(len) * (1.0 + std::abs(c.asymmetry));
    const std::size_t margin = std::size_t(std::ceil(reach));
    if (len + 2 * margin > T) fail(Error::Kind::config, "synthetic: moment with jitter margin exceeds video " + id);
    const std::size_t s0 = margin + std::size_t(rng() % (T - len - 2 * margin + 1));
    const std::size_t target = std::size_t(rng() % c.archetypes);

    std::vector<std::uint8_t> flags(T, kBackground);
    std::vector<std::size_t> owner(T, target);
    for (std::size_t t = s0; t < s0 + len; ++t) flags[t] = kTarget;
    for (std::size_t d = 0; d < c.distractors && c.archetypes > 1; ++d) {
      const std::size_t dlen = std::max<std::size_t>(1, len / 2 + std::size_t(rng() % (len / 2 + 1)));
      if (dlen + 2 > T) continue;
      const std::size_t ds = std::size_t(rng() % (T - dlen + 1));
      std::size_t other = std::size_t(rng() % (c.archetypes - 1));
      if (other >= target) ++other;
      bool clear = true;
      for (std::size_t t = ds; t < ds + dlen; ++t) clear = clear && flags[t] == kBackground;
      // Keep one background frame between a distractor and the moment.
      if (ds > 0) clear = clear && flags[ds - 1] != kTarget;
      if (ds + dlen < T) clear = clear && flags[ds + dlen] != kTarget;
      if (!clear) continue;
      for (std::size_t t = ds; t < ds + dlen; ++t) {
        flags[t] = kDistractor;
        owner[t] = other;
      }
    }

    VideoFeatures f;
    f.dim = c.video_dim;
    f.frames = T;
    f.fps = float(c.fps);
    f.values.resize(c.video_dim * T);
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t d = 0; d < c.video_dim; ++d) {
        double v = c.noise * gauss(rng);
        if (flags[t] != kBackground) v += sigs[owner[t]][d];
        f.values[d * T + t] = float(v);
      }

    const double u_start = c.asymmetry - 1.0 + 2.0 * unit(rng);
    const double u_end = c.asymmetry - 1.0 + 2.0 * unit(rng);
    const double clean_start = double(s0), clean_end = double(s0 + len);
    const double ann_start = clean_start - c.jitter * double(len) * u_start;
    const double ann_end = clean_end + c.jitter * double(len) * u_end;

    const std::string& verb = detail::synth_verbs()[target];
    const std::string& object = detail::synth_objects()[target];
    const std::string subject = rng() % 2 ? "person" : "someone";
    const std::string article = rng() % 2 ? "the" : "a";

    AnnotationRecord r;
    r.video_id = id;
    r.duration = double(T) / c.fps;
    r.start = std::clamp(ann_start / c.fps, 0.0, r.duration);
    r.end = std::clamp(ann_end / c.fps, 0.0, r.duration);
    r.query = subject + " " + verb + " " + article + " " + object;
    r.split = i < c.train_samples ? "train" : "test";
    validate(r);
    corpus.records.push_back(r);
    corpus.store.videos[id] = std::move(f);
    corpus.clean[id] = {id, clean_start / c.fps, clean_end / c.fps, target, std::move(flags)};
  }
  return corpus;
}

inline void save_corpus(const Corpus& corpus, const std::filesystem::path& root) {
  std::filesystem::create_directories(root / "annotations");
  std::map<std::string, std::vector<AnnotationRecord>> by_split;
  for (const auto& r : corpus.records) by_split[r.split].push_back(r);
  for (const auto& [split, recs] : by_split) save_annotations(recs, (root / "annotations" / (split + ".jsonl")).string());
  corpus.store.save(root);
  std::ofstream os(root / "clean_truth.jsonl");
  if (!os) fail(Error::Kind::io, "cannot write clean_truth.jsonl under " + root.string());
  for (const auto& r : corpus.records) {
    const auto& c = corpus.clean.at(r.video_id);
    nlohmann::json j{{"video_id", c.video_id}, {"start", c.start}, {"end", c.end},
                     {"archetype", c.archetype}, {"frame_flags", c.flags}};
    os << j.dump() << '\n';
  }
}

/// Loads annotations/{train,val,test}.jsonl (whichever exist), the referenced
/// features, the vocabulary and, if present, clean_truth.jsonl.
inline Corpus load_corpus(const std::filesystem::path& root) {
  Corpus corpus;
  for (const char* split : {"train", "val", "test"}) {
    const auto path = root / "annotations" / (std::string(split) + ".jsonl");
    if (!std::filesystem::exists(path)) continue;
    auto recs = load_annotations(path.string());
    for (auto& r : recs)
      if (r.split != split)
        fail(Error::Kind::validation, path.string() + ": record for '" + r.video_id + "' has split " + r.split);
    corpus.records.insert(corpus.records.end(), recs.begin(), recs.end());
  }
  if (corpus.records.empty()) fail(Error::Kind::io, "no annotation files under " + root.string());
  std::vector<std::string> ids;
  for (const auto& r : corpus.records) ids.push_back(r.video_id);
  corpus.store = FeatureStore::load(root, ids);
  const auto clean_path = root / "clean_truth.jsonl";
  if (std::filesystem::exists(clean_path)) {
    std::ifstream is(clean_path);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
      ++lineno;
      if (line.empty()) continue;
      try {
        auto j = nlohmann::json::parse(line);
        CleanTruth c{j.at("video_id").get<std::string>(), j.at("start").get<double>(), j.at("end").get<double>(),
                     j.at("archetype").get<std::size_t>(), j.at("frame_flags").get<std::vector<std::uint8_t>>()};
        corpus.clean[c.video_id] = std::move(c);
      } catch (const nlohmann::json::exception& e) {
        fail(Error::Kind::validation, clean_path.string() + ":" + std::to_string(lineno) + ": " + e.what());
      }
    }
  }
  return corpus;
}

}  // namespace emb
