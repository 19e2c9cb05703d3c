#pragma once

#include <cstdint>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <type_traits>
#include <vector>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "emb/data/synthetic.hpp"
#include "emb/eval/metrics.hpp"
#include "emb/eval/supervision.hpp"
#include "emb/heads/losses.hpp"
#include "emb/model/emb_model.hpp"

namespace emb {

struct TrainConfig {
  std::size_t epochs = 100;
  std::size_t batch_size = 16;
  double lr = 5e-4;
  double clip = 1.0;
  bool lr_decay = true;              // linear decay of the step size
  double highlight_extension = 0.1;  // rho
  bool always_align = false;         // train the alignment branch for non-elastic strategies too
};

struct DataConfig {
  bool synthetic = true;
  std::string root;            // corpus directory when not synthetic
  std::size_t container = 0;   // frame container; 0 means max_frames
  bool clean_truth = true;     // evaluate against clean boundaries when the corpus has them
  std::string train_split = "train";
  std::string test_split = "test";
};

struct EvalConfig {
  std::vector<double> thresholds = kDefaultThresholds;
  double shift_fraction = 0.1;
  std::size_t batch_size = 32;
};

struct ExperimentConfig {
  ModelConfig model;
  TrainConfig train;
  LossWeights loss;
  ThresholdSchedule schedule;
  SupervisionStrategy supervision;
  std::vector<Strategy> strategies{Strategy::elastic};
  std::vector<std::uint64_t> seeds{1};
  SyntheticConfig synthetic;
  DataConfig data;
  EvalConfig eval;
  std::string out_dir = "runs";

  std::size_t container() const { return data.container ? data.container : model.max_frames; }

  void validate() const {
    model.validate();
    supervision.validate();
    if (train.batch_size == 0) fail(Error::Kind::config, "train.batch_size must be positive");
    if (!(train.lr > 0)) fail(Error::Kind::config, "train.lr must be positive");
    if (!(train.clip > 0)) fail(Error::Kind::config, "train.clip must be positive");
    if (train.highlight_extension < 0) fail(Error::Kind::config, "train.highlight_extension must be nonnegative");
    if (!(loss.tau_lower <= loss.tau_upper)) fail(Error::Kind::config, "loss.tau_lower must not exceed loss.tau_upper");
    if (schedule.start < schedule.end) fail(Error::Kind::config, "schedule.start must be >= schedule.end");
    if (strategies.empty() || seeds.empty()) fail(Error::Kind::config, "at least one strategy and seed required");
    if (container() < model.max_frames || container() % model.frames_per_clip() != 0)
      fail(Error::Kind::config, "data.container must be >= max_frames and a multiple of the clip size");
    if (!data.synthetic && data.root.empty()) fail(Error::Kind::config, "data.root is required for file corpora");
    if (eval.batch_size == 0) fail(Error::Kind::config, "eval.batch_size must be positive");
    for (std::size_t i = 0; i < eval.thresholds.size(); ++i)
      if (!(eval.thresholds[i] > 0 && eval.thresholds[i] <= 1) || (i && eval.thresholds[i] <= eval.thresholds[i - 1]))
        fail(Error::Kind::config, "eval.thresholds must be increasing values in (0, 1]");
    if (data.synthetic) emb::validate(synthetic);
  }
};

namespace detail {

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto a = item.find_first_not_of(" \t"), b = item.find_last_not_of(" \t");
    if (a != std::string::npos) out.push_back(item.substr(a, b - a + 1));
  }
  return out;
}

// Reads typed keys from one section and rejects keys nobody asked for.
class SectionReader {
 public:
  SectionReader(const boost::property_tree::ptree& root, std::string name) : name_(std::move(name)) {
    if (auto child = root.get_child_optional(name_)) tree_ = *child;
  }

  template <class T>
  void read(const std::string& key, T& value) {
    seen_.insert(key);
    auto v = tree_.get_optional<std::string>(key);
    if (!v) return;
    if constexpr (std::is_same_v<T, bool>) {
      if (*v == "true" || *v == "1" || *v == "yes") value = true;
      else if (*v == "false" || *v == "0" || *v == "no") value = false;
      else bad(key, *v);
    } else if constexpr (std::is_same_v<T, std::string>) {
      value = *v;
    } else {
      std::istringstream is(*v);
      T parsed{};
      if (!(is >> parsed) || !(is >> std::ws).eof()) bad(key, *v);
      if constexpr (std::is_unsigned_v<T>)
        if (v->find('-') != std::string::npos) bad(key, *v);
      value = parsed;
    }
  }

  std::optional<std::string> raw(const std::string& key) {
    seen_.insert(key);
    if (auto v = tree_.get_optional<std::string>(key)) return *v;
    return std::nullopt;
  }

  void finish() const {
    for (const auto& [key, _] : tree_)
      if (!seen_.count(key)) fail(Error::Kind::config, "unknown key '" + name_ + "." + key + "'");
  }

 private:
  [[noreturn]] void bad(const std::string& key, const std::string& v) const {
    fail(Error::Kind::config, "invalid value '" + v + "' for " + name_ + "." + key);
  }

  std::string name_;
  boost::property_tree::ptree tree_;
  std::set<std::string> seen_;
};

}  // namespace detail

/// Parses INI text (sections model, train, loss, schedule, data, synthetic,
/// eval, output) over the defaults.
inline ExperimentConfig parse_config(const std::string& text, const std::string& origin = "<config>") {
  namespace pt = boost::property_tree;
  pt::ptree root;
  try {
    std::istringstream is(text);
    pt::read_ini(is, root);
  } catch (const pt::ini_parser_error& e) {
    fail(Error::Kind::config, origin + ":" + std::to_string(e.line()) + ": " + e.message());
  }
  static const std::set<std::string> sections{"model", "train", "loss", "schedule", "data",
                                              "synthetic", "eval", "output"};
  for (const auto& [name, _] : root)
    if (!sections.count(name)) fail(Error::Kind::config, origin + ": unknown section [" + name + "]");

  ExperimentConfig c;
  {
    detail::SectionReader r(root, "model");
    auto& m = c.model;
    r.read("width", m.width);
    r.read("heads", m.heads);
    r.read("depth", m.depth);
    r.read("lstm_layers", m.lstm_layers);
    r.read("highlight_kernel", m.highlight_kernel);
    r.read("align_kernel", m.align_kernel);
    r.read("num_clips", m.num_clips);
    r.read("max_frames", m.max_frames);
    r.read("dropout", m.dropout);
    r.read("guided", m.guided);
    r.finish();
  }
  {
    detail::SectionReader r(root, "train");
    auto& t = c.train;
    r.read("epochs", t.epochs);
    r.read("batch_size", t.batch_size);
    r.read("lr", t.lr);
    r.read("clip", t.clip);
    r.read("lr_decay", t.lr_decay);
    r.read("highlight_extension", t.highlight_extension);
    r.read("always_align", t.always_align);
    r.read("extend_fraction", c.supervision.extend_fraction);
    r.read("kernel_width", c.supervision.kernel_width);
    if (auto v = r.raw("strategies")) {
      c.strategies.clear();
      for (const auto& s : detail::split_list(*v)) c.strategies.push_back(parse_strategy(s));
    }
    if (auto v = r.raw("seeds")) {
      c.seeds.clear();
      for (const auto& s : detail::split_list(*v)) {
        if (s.empty() || s.find_first_not_of("0123456789") != std::string::npos)
          fail(Error::Kind::config, "invalid seed '" + s + "'");
        c.seeds.push_back(std::stoull(s));
      }
    }
    r.finish();
  }
  {
    detail::SectionReader r(root, "loss");
    r.read("lambda_bound", c.loss.bound);
    r.read("lambda_align", c.loss.align);
    r.read("lambda_highlight", c.loss.highlight);
    r.read("tau_upper", c.loss.tau_upper);
    r.read("tau_lower", c.loss.tau_lower);
    r.finish();
  }
  {
    detail::SectionReader r(root, "schedule");
    if (auto v = r.raw("scheme")) c.schedule.scheme = parse_schedule(*v);
    r.read("start", c.schedule.start);
    r.read("end", c.schedule.end);
    r.read("midpoint", c.schedule.midpoint);
    r.read("steepness", c.schedule.steepness);
    r.finish();
  }
  {
    detail::SectionReader r(root, "data");
    if (auto v = r.raw("source")) {
      if (*v == "synthetic") c.data.synthetic = true;
      else if (*v == "files") c.data.synthetic = false;
      else fail(Error::Kind::config, "data.source must be synthetic or files");
    }
    r.read("root", c.data.root);
    r.read("container", c.data.container);
    if (auto v = r.raw("eval_truth")) {
      if (*v == "clean") c.data.clean_truth = true;
      else if (*v == "annotated") c.data.clean_truth = false;
      else fail(Error::Kind::config, "data.eval_truth must be clean or annotated");
    }
    r.read("train_split", c.data.train_split);
    r.read("test_split", c.data.test_split);
    r.finish();
  }
  {
    detail::SectionReader r(root, "synthetic");
    auto& s = c.synthetic;
    r.read("train_samples", s.train_samples);
    r.read("test_samples", s.test_samples);
    r.read("archetypes", s.archetypes);
    r.read("video_dim", s.video_dim);
    r.read("query_dim", s.query_dim);
    r.read("min_frames", s.min_frames);
    r.read("max_frames", s.max_frames);
    r.read("fps", s.fps);
    r.read("min_moment", s.min_moment);
    r.read("max_moment", s.max_moment);
    r.read("signal", s.signal);
    r.read("noise", s.noise);
    r.read("max_cosine", s.max_cosine);
    r.read("distractors", s.distractors);
    r.read("jitter", s.jitter);
    r.read("asymmetry", s.asymmetry);
    r.read("seed", s.seed);
    r.finish();
  }
  {
    detail::SectionReader r(root, "eval");
    if (auto v = r.raw("thresholds")) {
      c.eval.thresholds.clear();
      for (const auto& s : detail::split_list(*v)) {
        try {
          std::size_t used = 0;
          c.eval.thresholds.push_back(std::stod(s, &used));
          if (used != s.size()) throw std::invalid_argument(s);
        } catch (const std::exception&) {
          fail(Error::Kind::config, "invalid threshold '" + s + "'");
        }
      }
    }
    r.read("shift_fraction", c.eval.shift_fraction);
    r.read("batch_size", c.eval.batch_size);
    r.finish();
  }
  {
    detail::SectionReader r(root, "output");
    r.read("dir", c.out_dir);
    r.finish();
  }
  c.validate();
  return c;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) fail(Error::Kind::io, "cannot open config '" + path + "'");
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_config(ss.str(), path);
}

}  // namespace emb
