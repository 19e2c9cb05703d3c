#pragma once

#include <cctype>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "emb/error.hpp"

namespace emb {

struct AnnotationRecord {
  std::string video_id;
  double duration = 0.0;
  double start = 0.0;
  double end = 0.0;
  std::string query;
  std::string split = "train";
};

/// Lower-cased alphanumeric runs.
inline std::vector<std::string> tokenize(const std::string& text) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isalnum(c) || ch == '\'') {
      cur.push_back(char(std::tolower(c)));
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

inline void validate(const AnnotationRecord& r) {
  if (r.video_id.empty()) fail(Error::Kind::validation, "empty video_id");
  if (!(r.duration > 0.0)) fail(Error::Kind::validation, "duration must be positive");
  if (!(r.start >= 0.0)) fail(Error::Kind::validation, "start must be nonnegative");
  if (!(r.start < r.end)) fail(Error::Kind::validation, "start must be before end");
  if (r.end > r.duration) fail(Error::Kind::validation, "moment ends after the video");
  if (tokenize(r.query).empty()) fail(Error::Kind::validation, "empty query");
  if (r.split != "train" && r.split != "val" && r.split != "test")
    fail(Error::Kind::validation, "unknown split '" + r.split + "'");
}

inline AnnotationRecord parse_annotation(const std::string& line) {
  nlohmann::json j = nlohmann::json::parse(line);
  AnnotationRecord r;
  r.video_id = j.at("video_id").get<std::string>();
  r.duration = j.at("duration").get<double>();
  r.start = j.at("start").get<double>();
  r.end = j.at("end").get<double>();
  r.query = j.at("query").get<std::string>();
  if (j.contains("split")) r.split = j.at("split").get<std::string>();
  validate(r);
  return r;
}

inline nlohmann::json to_json(const AnnotationRecord& r) {
  return {{"video_id", r.video_id}, {"duration", r.duration}, {"start", r.start},
          {"end", r.end},           {"query", r.query},       {"split", r.split}};
}

/// Reads one JSON object per line; blank lines are skipped. Errors carry
/// the file name and line number.
inline std::vector<AnnotationRecord> load_annotations(const std::string& path) {
  std::ifstream is(path);
  if (!is) fail(Error::Kind::io, "cannot open annotations '" + path + "'");
  std::vector<AnnotationRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(parse_annotation(line));
    } catch (const nlohmann::json::exception& e) {
      fail(Error::Kind::validation, path + ":" + std::to_string(lineno) + ": " + e.what());
    } catch (const Error& e) {
      fail(e.kind(), path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

inline void save_annotations(const std::vector<AnnotationRecord>& records, const std::string& path) {
  std::ofstream os(path);
  if (!os) fail(Error::Kind::io, "cannot write '" + path + "'");
  for (const auto& r : records) os << to_json(r).dump() << '\n';
}

}  // namespace emb
