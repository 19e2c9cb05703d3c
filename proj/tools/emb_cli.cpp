// Command-line front end: synth, train, eval, gradcheck, predict.

#include <chrono>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "emb/emb.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out_dir;
  std::string strategy;
  std::string schedule;
};

emb::ExperimentConfig load(const Common& o) {
  emb::ExperimentConfig c = o.config.empty() ? emb::ExperimentConfig{} : emb::load_config(o.config);
  if (o.seed) c.seeds = {*o.seed};
  if (!o.out_dir.empty()) c.out_dir = o.out_dir;
  if (!o.strategy.empty()) c.strategies = {emb::parse_strategy(o.strategy)};
  if (!o.schedule.empty()) c.schedule.scheme = emb::parse_schedule(o.schedule);
  c.validate();
  return c;
}

bool wants_ela(const std::string& mode) {
  if (mode == "det") return false;
  if (mode == "ela") return true;
  emb::fail(emb::Error::Kind::config, "--mode must be det or ela, got '" + mode + "'");
}

json interval_json(const emb::Interval& i) { return {{"start", i.start}, {"end", i.end}}; }

int cmd_synth(const Common& o) {
  auto c = load(o);
  if (o.out_dir.empty()) emb::fail(emb::Error::Kind::config, "synth needs --out-dir");
  if (o.seed) c.synthetic.seed = *o.seed;
  const auto corpus = emb::generate_synthetic(c.synthetic);
  emb::save_corpus(corpus, o.out_dir);
  std::map<std::string, std::size_t> splits;
  for (const auto& r : corpus.records) ++splits[r.split];
  std::cout << json{{"root", o.out_dir}, {"videos", corpus.store.videos.size()}, {"splits", splits}}.dump(2) << "\n";
  return 0;
}

int cmd_train(const Common& o) {
  const auto c = load(o);
  const auto runs = emb::run_experiment(c, &std::cerr);
  std::cout << emb::comparison_table(emb::compare_runs(runs), c.eval.thresholds);
  if (!c.out_dir.empty()) std::cout << "artifacts in " << c.out_dir << "\n";
  return 0;
}

int cmd_eval(const Common& o, const std::string& checkpoint, const std::string& mode) {
  const auto c = load(o);
  const bool ela = wants_ela(mode);
  const auto d = emb::prepare_data(c);
  emb::EmbModel<float> model(emb::model_config_for(c, d), 0);
  emb::load_checkpoint(model.parameters(), checkpoint);
  const auto ev = emb::evaluate_model(model, d.test, emb::eval_options_for(c, ela));
  json j;
  j["schema"] = emb::kReportSchema;
  j["checkpoint"] = checkpoint;
  j["reports"]["DET"] = emb::report_json(ev.det);
  j["reports"]["SHIFT"] = emb::report_json(ev.shift);
  if (ev.ela) j["reports"]["ELA"] = emb::report_json(*ev.ela);
  if (!o.out_dir.empty()) {
    emb::write_json(j, fs::path(o.out_dir) / "metrics.json");
    std::vector<const emb::EvalReport*> reports{&ev.det, &ev.shift};
    if (ev.ela) reports.push_back(&*ev.ela);
    emb::write_samples_csv(reports, fs::path(o.out_dir) / "samples.csv");
  }
  std::cout << j.dump(2) << "\n";
  return 0;
}

int cmd_gradcheck() {
  bool ok = true;
  json cases = json::array();
  for (const auto& gc : emb::gradcheck_battery()) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto r = gc.run();
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    ok = ok && r.passed;
    std::cerr << (r.passed ? "ok   " : "FAIL ") << gc.name << "  rel " << r.max_rel_error << "\n";
    cases.push_back({{"name", gc.name}, {"passed", r.passed}, {"max_rel_error", r.max_rel_error},
                     {"tolerance", gc.tolerance}, {"seconds", secs}});
  }
  std::cout << json{{"passed", ok}, {"cases", cases}}.dump(2) << "\n";
  return ok ? 0 : 1;
}

int cmd_predict(const Common& o, const std::string& checkpoint, const std::string& video,
                const std::string& vocab, const std::string& query, const std::string& mode) {
  const auto c = load(o);
  const bool ela = wants_ela(mode);
  emb::FeatureStore store;
  store.vocab = emb::Vocabulary::load(vocab);
  const std::string id = fs::path(video).stem().string();
  store.videos[id] = emb::read_features(video);
  const double duration = store.videos[id].duration();
  emb::AnnotationRecord rec{id, duration, 0.0, duration, query, "test"};
  emb::validate(rec);
  const std::vector<emb::VideoInstance> data{emb::make_instance(rec, store, c.model.max_frames, c.container())};

  emb::ModelConfig mc = c.model;
  mc.video_dim = store.videos[id].dim;
  mc.query_dim = store.vocab.dim();
  emb::EmbModel<float> model(mc, 0);
  emb::load_checkpoint(model.parameters(), checkpoint);
  const auto ev = emb::evaluate_model(model, data, emb::eval_options_for(c, ela));

  const emb::FrameGrid grid{duration, data[0].valid_frames()};
  const auto& det = ev.det_frames[0];
  json j{{"video_id", id}, {"query", query}, {"duration", duration}, {"mode", mode}};
  j["det"] = interval_json(grid.seconds(det));
  j["det"]["frames"] = {det.first, det.last};
  if (ela) {
    const auto& b = ev.ela_frames[0];
    j["ela"]["start"] = {grid.seconds({b.start.first, b.start.first}).start, grid.seconds({b.start.last, b.start.last}).start};
    j["ela"]["end"] = {grid.seconds({b.end.first, b.end.first}).end, grid.seconds({b.end.last, b.end.last}).end};
    j["ela"]["frames"] = {{"start", {b.start.first, b.start.last}}, {"end", {b.end.first, b.end.last}}};
  }
  std::cout << j.dump(2) << "\n";
  return 0;
}

void report_error(const std::string& kind, const std::string& message) {
  std::cerr << json{{"error", {{"kind", kind}, {"message", message}}}}.dump() << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  emb::tune_allocator();
  CLI::App app{"Elastic moment bounding for video activity localisation"};
  app.require_subcommand(1);
  Common o;
  auto common = [&o](CLI::App* sub, bool selection) {
    sub->add_option("--config", o.config, "INI experiment config")->check(CLI::ExistingFile);
    sub->add_option("--seed", o.seed, "training seed; for synth, the corpus seed");
    sub->add_option("--out-dir", o.out_dir, "output directory");
    if (selection) {
      sub->add_option("--strategy", o.strategy, "fixed|extend|kernel|elastic");
      sub->add_option("--schedule", o.schedule, "constant|linear|sigmoid");
    }
  };
  std::string checkpoint, mode = "det", video, vocab, query;

  auto* synth = app.add_subcommand("synth", "generate a synthetic corpus under --out-dir");
  common(synth, false);
  auto* train = app.add_subcommand("train", "train every configured strategy and seed");
  common(train, true);
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on the test split");
  common(eval, false);
  eval->add_option("--checkpoint", checkpoint, "model weights (.embw)")->required()->check(CLI::ExistingFile);
  eval->add_option("--mode", mode, "det|ela");
  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference check of every kernel and the full loss");
  auto* predict = app.add_subcommand("predict", "localise a query in one video");
  common(predict, false);
  predict->add_option("--checkpoint", checkpoint, "model weights (.embw)")->required()->check(CLI::ExistingFile);
  predict->add_option("--video", video, "video features (.embf)")->required()->check(CLI::ExistingFile);
  predict->add_option("--vocab", vocab, "token embeddings (.embv)")->required()->check(CLI::ExistingFile);
  predict->add_option("--query", query, "sentence")->required();
  predict->add_option("--mode", mode, "det|ela");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    report_error("usage", e.what());
    return 2;
  }

  try {
    if (*synth) return cmd_synth(o);
    if (*train) return cmd_train(o);
    if (*eval) return cmd_eval(o, checkpoint, mode);
    if (*gradcheck) return cmd_gradcheck();
    if (*predict) return cmd_predict(o, checkpoint, video, vocab, query, mode);
  } catch (const emb::Error& e) {
    report_error(e.kind_name(), e.what());
    return 1;
  } catch (const std::exception& e) {
    report_error("internal", e.what());
    return 1;
  }
  return 0;
}
