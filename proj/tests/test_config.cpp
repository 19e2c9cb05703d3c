#include <gtest/gtest.h>

#include <filesystem>

#include "emb/eval/config.hpp"

using namespace emb;

namespace {

Error::Kind kind_of(const std::string& text) {
  try {
    parse_config(text);
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "accepted: " << text;
  return Error::Kind::io;
}

}  // namespace

TEST(Config, DefaultsFollowTheReferenceSetup) {
  const auto c = parse_config("");
  EXPECT_EQ(c.model.width, 128u);
  EXPECT_EQ(c.model.heads, 8u);
  EXPECT_EQ(c.model.dropout, 0.2);
  EXPECT_EQ(c.model.num_clips, 16u);
  EXPECT_EQ(c.model.max_frames, 128u);
  EXPECT_EQ(c.model.frames_per_clip(), 8u);
  EXPECT_EQ(c.train.epochs, 100u);
  EXPECT_EQ(c.train.batch_size, 16u);
  EXPECT_EQ(c.train.lr, 5e-4);
  EXPECT_EQ(c.train.clip, 1.0);
  EXPECT_EQ(c.train.highlight_extension, 0.1);
  EXPECT_EQ(c.loss.tau_upper, 0.7);
  EXPECT_EQ(c.loss.tau_lower, 0.3);
  EXPECT_EQ(c.loss.bound, 1.0);
  EXPECT_EQ(c.loss.align, 1.0);
  EXPECT_EQ(c.loss.highlight, 5.0);
  EXPECT_EQ(c.schedule.start, 1.0);
  EXPECT_EQ(c.schedule.end, 0.5);
  EXPECT_EQ(c.eval.thresholds, (std::vector<double>{0.3, 0.5, 0.7}));
  EXPECT_EQ(c.supervision.kernel_width, 0.1);
}

TEST(Config, ReadsEverySection) {
  const auto c = parse_config(R"(
[model]
width = 64
heads = 4
max_frames = 64
guided = false
[train]
epochs = 3
strategies = fixed, elastic
seeds = 4, 5
kernel_width = 0.2
[loss]
lambda_highlight = 2.5
[schedule]
scheme = linear
[data]
source = synthetic
container = 80
eval_truth = annotated
[synthetic]
noise = 1.5
distractors = 2
[eval]
thresholds = 0.1, 0.5
[output]
dir = /tmp/x
)");
  EXPECT_EQ(c.model.width, 64u);
  EXPECT_FALSE(c.model.guided);
  EXPECT_EQ(c.strategies, (std::vector<Strategy>{Strategy::fixed, Strategy::elastic}));
  EXPECT_EQ(c.seeds, (std::vector<std::uint64_t>{4, 5}));
  EXPECT_EQ(c.supervision.kernel_width, 0.2);
  EXPECT_EQ(c.loss.highlight, 2.5);
  EXPECT_EQ(c.schedule.scheme, ScheduleScheme::linear);
  EXPECT_EQ(c.container(), 80u);
  EXPECT_FALSE(c.data.clean_truth);
  EXPECT_EQ(c.synthetic.noise, 1.5);
  EXPECT_EQ(c.synthetic.distractors, 2u);
  EXPECT_EQ(c.eval.thresholds, (std::vector<double>{0.1, 0.5}));
  EXPECT_EQ(c.out_dir, "/tmp/x");
}

TEST(Config, RejectsUnknownSectionsKeysAndBadValues) {
  EXPECT_EQ(kind_of("[optimizer]\nlr = 1\n"), Error::Kind::config);
  EXPECT_EQ(kind_of("[model]\nwidht = 64\n"), Error::Kind::config);
  EXPECT_EQ(kind_of("[model]\nwidth = sixty\n"), Error::Kind::config);
  EXPECT_EQ(kind_of("[model]\nwidth = -4\n"), Error::Kind::config);
  EXPECT_EQ(kind_of("[model]\nguided = maybe\n"), Error::Kind::config);
  EXPECT_EQ(kind_of("[train]\nstrategies = fixed, soft\n"), Error::Kind::config);
  EXPECT_EQ(kind_of("[train]\nseeds = 1, x\n"), Error::Kind::config);
  EXPECT_EQ(kind_of("[schedule]\nscheme = cosine\n"), Error::Kind::config);
  EXPECT_EQ(kind_of("[eval]\nthresholds = 0.5, 0.3\n"), Error::Kind::config);
  EXPECT_EQ(kind_of("[eval]\nthresholds = 0.5x\n"), Error::Kind::config);
  EXPECT_EQ(kind_of("[data]\nsource = http\n"), Error::Kind::config);
  EXPECT_EQ(kind_of("this is not ini\n[\n"), Error::Kind::config);
}

TEST(Config, ValidationCatchesInconsistentModels) {
  EXPECT_EQ(kind_of("[model]\nwidth = 30\nheads = 8\n"), Error::Kind::config);
  EXPECT_EQ(kind_of("[model]\nmax_frames = 100\n"), Error::Kind::config);
  EXPECT_EQ(kind_of("[loss]\ntau_lower = 0.8\n"), Error::Kind::config);
  EXPECT_EQ(kind_of("[data]\ncontainer = 132\n"), Error::Kind::config);
  EXPECT_EQ(kind_of("[data]\nsource = files\n"), Error::Kind::config);
  EXPECT_EQ(kind_of("[schedule]\nstart = 0.2\n"), Error::Kind::config);
}

TEST(Config, ShippedConfigsLoad) {
  const std::filesystem::path root = EMB_SOURCE_DIR;
  const auto d = load_config((root / "configs/default.ini").string());
  EXPECT_EQ(d.model.width, 128u);
  const auto s = load_config((root / "configs/synthetic.ini").string());
  EXPECT_EQ(s.model.width, 64u);
  EXPECT_EQ(s.model.max_frames, 64u);
  EXPECT_EQ(s.model.num_clips, 16u);
  EXPECT_EQ(s.train.epochs, 30u);
  EXPECT_EQ(s.seeds.size(), 3u);
  EXPECT_EQ(s.synthetic.train_samples, 2000u);
  EXPECT_EQ(s.synthetic.test_samples, 500u);
  EXPECT_EQ(s.synthetic.jitter, 0.3);
  EXPECT_THROW(load_config((root / "configs/missing.ini").string()), Error);
}
