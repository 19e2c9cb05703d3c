#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include <unistd.h>

#include "emb/data/batch.hpp"
#include "emb/data/synthetic.hpp"

using namespace emb;
namespace fs = std::filesystem;

namespace {

VideoFeatures ramp(std::size_t dim, std::size_t frames, float fps = 2.0f) {
  VideoFeatures f;
  f.dim = dim;
  f.frames = frames;
  f.fps = fps;
  for (std::size_t d = 0; d < dim; ++d)
    for (std::size_t t = 0; t < frames; ++t) f.values.push_back(float(d * 1000 + t));
  return f;
}

fs::path scratch_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("emb_test_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

SyntheticConfig small_synthetic() {
  SyntheticConfig c;
  c.train_samples = 1200;
  c.test_samples = 0;
  c.video_dim = 8;
  c.query_dim = 8;
  return c;
}

}  // namespace

TEST(Downsample, ShortVideoIsPaddedNotPooled) {
  const auto v = downsample_video(ramp(2, 64), 128);
  EXPECT_EQ(v.valid, 64u);
  EXPECT_EQ(v.frames, 128u);
  for (std::size_t t = 0; t < 64; ++t) EXPECT_EQ(v.values[t], float(t));
  for (std::size_t t = 64; t < 128; ++t) EXPECT_EQ(v.values[128 + t], 0.0f);
}

TEST(Downsample, LongVideoPoolsPairs) {
  const auto v = downsample_video(ramp(1, 256), 128);
  EXPECT_EQ(v.valid, 128u);
  for (std::size_t t = 0; t < 128; ++t) {
    EXPECT_EQ(v.values[t], float(2 * t + 1));
    EXPECT_EQ(v.raw_range(t), (IndexRange{long(2 * t), long(2 * t + 1)}));
  }
}

TEST(Downsample, BinwiseMax) {
  VideoFeatures f{1, 4, 1.0f, {1, 5, 2, 4}};
  const auto v = downsample_video(f, 2);
  EXPECT_EQ(v.values, (std::vector<float>{5, 4}));
}

TEST(Downsample, EmptyVideoAndSmallContainerAreErrors) {
  EXPECT_THROW(downsample_video(VideoFeatures{1, 0, 1.0f, {}}, 4), Error);
  EXPECT_THROW(downsample_video(ramp(1, 8), 8, 4), Error);
}

TEST(Downsample, RawFrameMappingRoundTrips) {
  for (std::size_t raw : {1u, 7u, 100u, 129u, 300u, 1000u}) {
    const auto v = downsample_video(ramp(1, raw), 128);
    for (std::size_t t = 0; t < v.valid; ++t) {
      const auto r = v.raw_range(t);
      ASSERT_LE(r.first, r.last);
      ASSERT_EQ(v.frame_of_raw(std::size_t(r.first)), t);
      ASSERT_EQ(v.frame_of_raw(std::size_t(r.last)), t);
    }
    ASSERT_EQ(v.raw_range(v.valid - 1).last, long(raw) - 1);
  }
}

TEST(Clips, EightFramesPerClip) {
  for (std::size_t c = 0; c < 16; ++c) {
    EXPECT_EQ(frames_of_clip(c, 8), (IndexRange{long(8 * c), long(8 * c + 7)}));
    for (long f = long(8 * c); f <= long(8 * c + 7); ++f) EXPECT_EQ(clip_of_frame(std::size_t(f), 8), c);
  }
}

TEST(Units, SecondsFramesRoundTripWithinOneFrame) {
  std::mt19937_64 rng(71);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 5000; ++i) {
    const double duration = 5.0 + 100.0 * u(rng);
    const std::size_t frames = 1 + rng() % 128;
    double a = duration * u(rng), b = duration * u(rng);
    if (a > b) std::swap(a, b);
    const IndexRange r = seconds_to_frames(a, b, duration, frames);
    ASSERT_LE(r.first, r.last);
    ASSERT_LT(r.last, long(frames));
    const Interval back = frames_to_seconds(r, duration, frames);
    const double unit = duration / double(frames);
    ASSERT_LE(std::abs(back.start - a), unit + 1e-9);
    if (b - a >= unit) ASSERT_LE(std::abs(back.end - b), unit + 1e-9);
  }
}

TEST(Units, GridAlignedSecondsMapExactly) {
  EXPECT_EQ(seconds_to_frames(2.0, 4.0, 8.0, 16), (IndexRange{4, 7}));
  const auto s = frames_to_seconds({4, 7}, 8.0, 16);
  EXPECT_DOUBLE_EQ(s.start, 2.0);
  EXPECT_DOUBLE_EQ(s.end, 4.0);
  EXPECT_THROW(seconds_to_frames(0, 1, 0.0, 4), Error);
}

TEST(Annotations, ParsesAValidLine) {
  const auto r = parse_annotation(
      R"({"video_id":"v1","duration":30.0,"start":5.2,"end":12.8,"query":"person puts on shoes","split":"test"})");
  EXPECT_EQ(r.video_id, "v1");
  EXPECT_DOUBLE_EQ(r.start, 5.2);
  EXPECT_DOUBLE_EQ(r.end, 12.8);
  EXPECT_EQ(tokenize(r.query), (std::vector<std::string>{"person", "puts", "on", "shoes"}));
  EXPECT_EQ(r.split, "test");
}

TEST(Annotations, RejectsDegenerateAndOutOfRangeMoments) {
  EXPECT_THROW(parse_annotation(R"({"video_id":"v","duration":30,"start":5,"end":5,"query":"a b"})"), Error);
  EXPECT_THROW(parse_annotation(R"({"video_id":"v","duration":30,"start":31,"end":32,"query":"a b"})"), Error);
  EXPECT_THROW(parse_annotation(R"({"video_id":"v","duration":30,"start":1,"end":2,"query":" ,. "})"), Error);
  EXPECT_THROW(parse_annotation(R"({"video_id":"v","duration":30,"start":1,"end":2,"query":"a","split":"dev"})"),
               Error);
}

TEST(Annotations, FileErrorsCarryTheLineNumber) {
  const auto dir = scratch_dir("ann");
  const auto path = (dir / "a.jsonl").string();
  {
    std::ofstream os(path);
    os << R"({"video_id":"v","duration":30,"start":1,"end":2,"query":"open door"})" << "\n\n";
    os << R"({"video_id":"v","duration":30,"start":1,)" << "\n";
  }
  try {
    load_annotations(path);
    FAIL() << "expected a parse error";
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find(":3:"), std::string::npos) << e.what();
  }
  EXPECT_THROW(load_annotations((dir / "missing.jsonl").string()), Error);
  fs::remove_all(dir);
}

TEST(Annotations, SaveLoadRoundTrip) {
  const auto dir = scratch_dir("ann_rt");
  const std::vector<AnnotationRecord> recs{{"a", 10, 1, 2, "open the door", "train"},
                                           {"b", 20, 0, 20, "cut bread", "test"}};
  save_annotations(recs, (dir / "x.jsonl").string());
  const auto back = load_annotations((dir / "x.jsonl").string());
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[1].video_id, "b");
  EXPECT_EQ(back[1].end, 20.0);
  fs::remove_all(dir);
}

TEST(Features, BinaryRoundTripIsExact) {
  const auto dir = scratch_dir("feat");
  auto f = ramp(3, 5, 2.5f);
  f.values[4] = -0.125f;
  write_features(f, (dir / "v.embf").string());
  const auto g = read_features((dir / "v.embf").string());
  EXPECT_EQ(g.dim, 3u);
  EXPECT_EQ(g.frames, 5u);
  EXPECT_EQ(g.fps, 2.5f);
  EXPECT_EQ(g.values, f.values);
  EXPECT_DOUBLE_EQ(g.duration(), 2.0);
  fs::remove_all(dir);
}

TEST(Features, BadMagicAndTruncationAreErrors) {
  const auto dir = scratch_dir("feat_bad");
  {
    std::ofstream os(dir / "bad.embf", std::ios::binary);
    os << "NOPE0000000000000000";
  }
  EXPECT_THROW(read_features((dir / "bad.embf").string()), Error);
  write_features(ramp(2, 4), (dir / "ok.embf").string());
  fs::resize_file(dir / "ok.embf", fs::file_size(dir / "ok.embf") - 4);
  EXPECT_THROW(read_features((dir / "ok.embf").string()), Error);
  fs::remove_all(dir);
}

TEST(Vocabulary, RoundTripAndDeterministicFallback) {
  const auto dir = scratch_dir("vocab");
  Vocabulary v(3);
  v.set("door", {1, 2, 3});
  EXPECT_THROW(v.set("cup", {1, 2}), Error);
  v.save((dir / "v.embv").string());
  const auto w = Vocabulary::load((dir / "v.embv").string());
  EXPECT_EQ(w.embed("door"), (std::vector<float>{1, 2, 3}));
  EXPECT_FALSE(w.contains("zebra"));
  EXPECT_EQ(w.embed("zebra"), v.embed("zebra"));
  EXPECT_NE(w.embed("zebra"), w.embed("zebras"));
  for (float x : w.embed("zebra")) EXPECT_LE(std::abs(x), 1.0f / std::sqrt(3.0f) + 1e-6f);
  fs::remove_all(dir);
}

TEST(Batch, PackingMasksPaddingAndShortQueries) {
  FeatureStore store;
  store.vocab = Vocabulary(2);
  store.videos["a"] = ramp(2, 6);
  store.videos["b"] = ramp(2, 3);
  const auto a = make_instance({"a", 3.0, 0.5, 2.0, "open the door"}, store, 8, 8);
  const auto b = make_instance({"b", 1.5, 0.0, 1.0, "cut"}, store, 8, 8);
  const auto batch = pack_batch<double>({a, b}, {0, 1});
  EXPECT_EQ(batch.frames, 8u);
  EXPECT_EQ(batch.words, 3u);
  EXPECT_EQ(batch.valid_frames, (std::vector<std::size_t>{6, 3}));
  EXPECT_EQ(batch.video_mask, (Mask{1, 1, 1, 1, 1, 1, 0, 0, 1, 1, 1, 0, 0, 0, 0, 0}));
  EXPECT_EQ(batch.query_mask, (Mask{1, 1, 1, 1, 0, 0}));
  EXPECT_EQ(batch.truth[0], (IndexRange{1, 3}));
  EXPECT_EQ(batch.video.at(1, 8 + 2), 1002.0);
}

TEST(Synthetic, ZeroJitterAnnotatesTheCleanBoundary) {
  auto c = small_synthetic();
  c.train_samples = 200;
  c.jitter = 0.0;
  const auto corpus = generate_synthetic(c);
  for (const auto& r : corpus.records) {
    const auto& t = corpus.clean.at(r.video_id);
    ASSERT_EQ(r.start, t.start);
    ASSERT_EQ(r.end, t.end);
  }
}

TEST(Synthetic, JitterMagnitudeMatchesItsExpectation) {
  for (double asym : {0.0, 0.4}) {
    auto c = small_synthetic();
    c.asymmetry = asym;
    std::vector<double> off;
    for (std::uint64_t seed = 1; seed <= 4; ++seed) {
      c.seed = seed;
      const auto corpus = generate_synthetic(c);
      for (const auto& r : corpus.records) {
        const auto& t = corpus.clean.at(r.video_id);
        const double len = t.end - t.start;
        off.push_back(std::abs(r.start - t.start) / len);
        off.push_back(std::abs(r.end - t.end) / len);
      }
    }
    double mean = 0, var = 0;
    for (double x : off) mean += x;
    mean /= double(off.size());
    for (double x : off) var += (x - mean) * (x - mean);
    const double se = std::sqrt(var / double(off.size() - 1) / double(off.size()));
    EXPECT_NEAR(mean, expected_jitter(c), 3 * se) << "asymmetry " << asym;
  }
}

TEST(Synthetic, SeedsGiveDistinctStreamsWithMatchingStatistics) {
  auto c1 = small_synthetic(), c2 = small_synthetic();
  c2.seed = 2;
  const auto a = generate_synthetic(c1), b = generate_synthetic(c2);
  auto stats = [](const Corpus& k) {
    double frac = 0, frames = 0;
    for (const auto& r : k.records) {
      const auto& t = k.clean.at(r.video_id);
      frac += (t.end - t.start) / r.duration;
      frames += double(k.store.get(r.video_id).frames);
    }
    return std::pair{frac / double(k.records.size()), frames / double(k.records.size())};
  };
  EXPECT_NE(a.records[0].video_id, b.records[0].video_id);
  EXPECT_NE(a.store.videos.begin()->second.values, b.store.videos.begin()->second.values);
  const auto [fa, na] = stats(a);
  const auto [fb, nb] = stats(b);
  // Fractions are U(0.15, 0.35) (sd 0.058) and lengths U{40..64} (sd 7.2)
  // over 1200 samples; allow four standard errors of the difference.
  EXPECT_NEAR(fa, fb, 4 * 0.058 * std::sqrt(2.0 / 1200));
  EXPECT_NEAR(na, nb, 4 * 7.2 * std::sqrt(2.0 / 1200));
}

TEST(Synthetic, FlagsMarkTheSignatureOnlyInsideTheCleanMoment) {
  auto c = small_synthetic();
  c.train_samples = 300;
  c.distractors = 2;
  const auto corpus = generate_synthetic(c);
  for (const auto& r : corpus.records) {
    const auto& t = corpus.clean.at(r.video_id);
    const double fps = c.fps;
    for (std::size_t f = 0; f < t.flags.size(); ++f) {
      const bool inside = double(f) >= t.start * fps && double(f) < t.end * fps;
      ASSERT_EQ(t.flags[f] == kTarget, inside) << r.video_id << " frame " << f;
    }
  }
}

TEST(Synthetic, InfeasibleConfigsAreRejected) {
  auto c = small_synthetic();
  c.max_moment = 0.9;
  EXPECT_THROW(generate_synthetic(c), Error);
  c = small_synthetic();
  c.archetypes = 50;
  EXPECT_THROW(validate(c), Error);
}

TEST(Synthetic, CorpusSurvivesSaveAndLoad) {
  const auto dir = scratch_dir("corpus");
  auto c = small_synthetic();
  c.train_samples = 20;
  c.test_samples = 5;
  const auto corpus = generate_synthetic(c);
  save_corpus(corpus, dir);
  const auto back = load_corpus(dir);
  ASSERT_EQ(back.records.size(), 25u);
  EXPECT_EQ(back.split("test").size(), 5u);
  for (const auto& r : corpus.records) {
    EXPECT_EQ(back.store.get(r.video_id).values, corpus.store.get(r.video_id).values);
    EXPECT_EQ(back.clean.at(r.video_id).flags, corpus.clean.at(r.video_id).flags);
  }
  EXPECT_EQ(back.store.vocab.entries(), corpus.store.vocab.entries());
  fs::remove_all(dir);
}
