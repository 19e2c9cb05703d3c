#pragma once

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "emb/eval/experiment.hpp"

namespace emb {

inline constexpr const char* kReportSchema = "emb-report-v1";

inline nlohmann::json report_json(const EvalReport& r) {
  nlohmann::json j;
  j["mode"] = r.mode;
  j["count"] = r.count;
  j["miou"] = r.miou;
  nlohmann::json rec = nlohmann::json::object();
  for (std::size_t i = 0; i < r.thresholds.size(); ++i) {
    std::ostringstream key;
    key << "R@" << r.thresholds[i];
    rec[key.str()] = r.recall[i];
  }
  j["recall"] = rec;
  std::size_t empty = 0;
  for (const auto& s : r.samples) empty += s.empty;
  if (r.mode != "DET") j["empty_samples"] = empty;
  return j;
}

inline nlohmann::json run_json(const RunResult& r) {
  nlohmann::json j;
  j["schema"] = kReportSchema;
  j["strategy"] = strategy_name(r.strategy);
  j["schedule"] = schedule_name(r.schedule);
  j["seed"] = r.seed;
  j["epochs"] = r.epochs;
  nlohmann::json reports;
  reports["DET"] = report_json(r.eval.det);
  reports["SHIFT"] = report_json(r.eval.shift);
  if (r.eval.ela) reports["ELA"] = report_json(*r.eval.ela);
  j["reports"] = reports;
  if (!r.curve.empty()) {
    const auto& last = r.curve.back();
    j["final_loss"] = {{"total", last.total}, {"bound", last.bound}, {"align", last.align},
                       {"highlight", last.highlight}};
  }
  return j;
}

namespace detail {

inline std::ofstream open_out(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path);
  if (!os) fail(Error::Kind::io, "cannot write '" + path.string() + "'");
  os << std::setprecision(10);
  return os;
}

}  // namespace detail

inline void write_json(const nlohmann::json& j, const std::filesystem::path& path) {
  auto os = detail::open_out(path);
  os << j.dump(2) << "\n";
}

/// One row per (report, sample): mode, id, predicted and true seconds, IoU.
inline void write_samples_csv(const std::vector<const EvalReport*>& reports, const std::filesystem::path& path) {
  auto os = detail::open_out(path);
  os << "mode,video_id,pred_start,pred_end,gt_start,gt_end,iou,empty\n";
  for (const auto* r : reports)
    for (const auto& s : r->samples)
      os << r->mode << ',' << s.id << ',' << s.prediction.start << ',' << s.prediction.end << ','
         << s.truth.start << ',' << s.truth.end << ',' << s.iou << ',' << int(s.empty) << "\n";
}

inline void write_loss_csv(const std::vector<EpochStats>& curve, const std::filesystem::path& path) {
  auto os = detail::open_out(path);
  os << "epoch,tau,lr_scale,total,bound,align,highlight,pseudo_rate,clamped\n";
  for (const auto& e : curve)
    os << e.epoch << ',' << e.tau << ',' << e.lr_scale << ',' << e.total << ',' << e.bound << ',' << e.align << ','
       << e.highlight << ',' << e.pseudo_rate << ',' << e.clamped << "\n";
}

inline std::string run_name(const RunResult& r) {
  return std::string(strategy_name(r.strategy)) + "_" + schedule_name(r.schedule) + "_seed" + std::to_string(r.seed);
}

/// metrics.json, samples.csv and loss.csv under dir/<run name>/.
inline std::filesystem::path write_run(const RunResult& r, const std::filesystem::path& dir) {
  const auto sub = dir / run_name(r);
  write_json(run_json(r), sub / "metrics.json");
  std::vector<const EvalReport*> reports{&r.eval.det, &r.eval.shift};
  if (r.eval.ela) reports.push_back(&*r.eval.ela);
  write_samples_csv(reports, sub / "samples.csv");
  write_loss_csv(r.curve, sub / "loss.csv");
  return sub;
}

/// Seed-averaged DET numbers per (strategy, schedule), in first-seen order.
struct ComparisonRow {
  std::string strategy, schedule;
  std::vector<std::uint64_t> seeds;
  std::vector<double> miou;  // per seed
  double mean_miou = 0.0;
  std::vector<double> mean_recall;
  std::optional<double> mean_ela_miou;
};

inline std::vector<ComparisonRow> compare_runs(const std::vector<RunResult>& runs) {
  std::vector<ComparisonRow> rows;
  std::map<std::string, std::size_t> where;
  std::map<std::string, std::pair<double, std::size_t>> ela;
  for (const auto& r : runs) {
    const std::string key = std::string(strategy_name(r.strategy)) + "/" + schedule_name(r.schedule);
    auto [it, fresh] = where.emplace(key, rows.size());
    if (fresh) rows.push_back({strategy_name(r.strategy), schedule_name(r.schedule), {}, {}, 0.0,
                               std::vector<double>(r.eval.det.recall.size(), 0.0), std::nullopt});
    auto& row = rows[it->second];
    row.seeds.push_back(r.seed);
    row.miou.push_back(r.eval.det.miou);
    for (std::size_t i = 0; i < row.mean_recall.size(); ++i) row.mean_recall[i] += r.eval.det.recall[i];
    if (r.eval.ela) {
      ela[key].first += r.eval.ela->miou;
      ++ela[key].second;
    }
  }
  for (auto& row : rows) {
    const double n = double(row.seeds.size());
    for (double m : row.miou) row.mean_miou += m;
    row.mean_miou /= n;
    for (auto& v : row.mean_recall) v /= n;
    const auto e = ela.find(row.strategy + "/" + row.schedule);
    if (e != ela.end()) row.mean_ela_miou = e->second.first / double(e->second.second);
  }
  return rows;
}

inline nlohmann::json comparison_json(const std::vector<ComparisonRow>& rows, const std::vector<double>& thresholds) {
  nlohmann::json j;
  j["schema"] = kReportSchema;
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& r : rows) {
    nlohmann::json o;
    o["strategy"] = r.strategy;
    o["schedule"] = r.schedule;
    o["seeds"] = r.seeds;
    o["det_miou"] = r.miou;
    o["mean_det_miou"] = r.mean_miou;
    nlohmann::json rec = nlohmann::json::object();
    for (std::size_t i = 0; i < thresholds.size() && i < r.mean_recall.size(); ++i) {
      std::ostringstream key;
      key << "R@" << thresholds[i];
      rec[key.str()] = r.mean_recall[i];
    }
    o["mean_det_recall"] = rec;
    if (r.mean_ela_miou) o["mean_ela_miou"] = *r.mean_ela_miou;
    arr.push_back(o);
  }
  j["rows"] = arr;
  return j;
}

/// Fixed-width text table of the comparison.
inline std::string comparison_table(const std::vector<ComparisonRow>& rows, const std::vector<double>& thresholds) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(4);
  os << std::left << std::setw(10) << "strategy" << std::setw(10) << "schedule" << std::right << std::setw(8) << "seeds";
  for (double t : thresholds) {
    std::ostringstream h;
    h << "R@" << t;
    os << std::setw(9) << h.str();
  }
  os << std::setw(9) << "mIoU" << std::setw(10) << "ELA mIoU" << "\n";
  for (const auto& r : rows) {
    os << std::left << std::setw(10) << r.strategy << std::setw(10) << r.schedule << std::right << std::setw(8)
       << r.seeds.size();
    for (double v : r.mean_recall) os << std::setw(9) << v;
    os << std::setw(9) << r.mean_miou;
    if (r.mean_ela_miou) os << std::setw(10) << *r.mean_ela_miou;
    else os << std::setw(10) << "-";
    os << "\n";
  }
  return os.str();
}

/// Every (strategy, seed) run of `c`, with artifacts under c.out_dir when it
/// is non-empty.
inline std::vector<RunResult> run_experiment(const ExperimentConfig& c, std::ostream* log = nullptr) {
  c.validate();
  const ExperimentData d = prepare_data(c);
  std::vector<RunResult> runs;
  for (Strategy s : c.strategies)
    for (std::uint64_t seed : c.seeds) {
      if (log) *log << "run " << strategy_name(s) << " seed " << seed << "\n" << std::flush;
      std::string ckpt;
      RunResult probe;
      probe.strategy = s;
      probe.schedule = c.schedule.scheme;
      probe.seed = seed;
      if (!c.out_dir.empty()) ckpt = (std::filesystem::path(c.out_dir) / run_name(probe) / "model.embw").string();
      if (!ckpt.empty()) std::filesystem::create_directories(std::filesystem::path(ckpt).parent_path());
      runs.push_back(run_single(c, d, s, seed, log, {}, ckpt));
      if (!c.out_dir.empty()) write_run(runs.back(), c.out_dir);
      if (log)
        *log << "  DET mIoU " << runs.back().eval.det.miou << " (" << runs.back().seconds << " s)\n" << std::flush;
    }
  if (!c.out_dir.empty()) {
    const auto rows = compare_runs(runs);
    write_json(comparison_json(rows, c.eval.thresholds), std::filesystem::path(c.out_dir) / "comparison.json");
    auto os = detail::open_out(std::filesystem::path(c.out_dir) / "comparison.txt");
    os << comparison_table(rows, c.eval.thresholds);
  }
  return runs;
}

}  // namespace emb
