#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "emb/tensor/parameters.hpp"

namespace emb {

/// Raw per-video features, D x frames, row-major.
struct VideoFeatures {
  std::size_t dim = 0;
  std::size_t frames = 0;
  float fps = 1.0f;
  std::vector<float> values;

  float at(std::size_t d, std::size_t t) const { return values[d * frames + t]; }
  double duration() const { return double(frames) / double(fps); }
};

inline constexpr std::uint32_t kFeatureVersion = 1;
inline constexpr std::uint32_t kVocabVersion = 1;

inline void write_features(const VideoFeatures& f, const std::string& path) {
  if (f.values.size() != f.dim * f.frames) fail(Error::Kind::shape, "write_features: value count mismatch");
  std::ofstream os(path, std::ios::binary);
  if (!os) fail(Error::Kind::io, "cannot write '" + path + "'");
  os.write("EMBF", 4);
  io::write_pod<std::uint32_t>(os, kFeatureVersion);
  io::write_pod<std::uint32_t>(os, std::uint32_t(f.dim));
  io::write_pod<std::uint32_t>(os, std::uint32_t(f.frames));
  io::write_pod<float>(os, f.fps);
  os.write(reinterpret_cast<const char*>(f.values.data()), std::streamsize(f.values.size() * sizeof(float)));
  if (!os) fail(Error::Kind::io, "write failed for '" + path + "'");
}

inline VideoFeatures read_features(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail(Error::Kind::io, "cannot open features '" + path + "'");
  io::expect_magic(is, "EMBF", path);
  const auto version = io::read_pod<std::uint32_t>(is, "version");
  if (version != kFeatureVersion) fail(Error::Kind::io, path + ": unsupported feature version");
  VideoFeatures f;
  f.dim = io::read_pod<std::uint32_t>(is, "dim");
  f.frames = io::read_pod<std::uint32_t>(is, "frame count");
  f.fps = io::read_pod<float>(is, "frame rate");
  if (f.dim == 0 || f.frames == 0) fail(Error::Kind::validation, path + ": empty feature matrix");
  if (!(f.fps > 0.0f)) fail(Error::Kind::validation, path + ": frame rate must be positive");
  f.values.resize(f.dim * f.frames);
  if (!is.read(reinterpret_cast<char*>(f.values.data()), std::streamsize(f.values.size() * sizeof(float))))
    fail(Error::Kind::io, path + ": truncated feature data");
  if (!all_finite<float>(f.values)) fail(Error::Kind::numeric, path + ": non-finite feature values");
  return f;
}

/// Token embedding table with a deterministic hashed fallback for unknown
/// tokens.
class Vocabulary {
 public:
  Vocabulary() = default;
  explicit Vocabulary(std::size_t dim) : dim_(dim) {}

  std::size_t dim() const { return dim_; }
  std::size_t size() const { return table_.size(); }
  const std::map<std::string, std::vector<float>>& entries() const { return table_; }
  bool contains(const std::string& token) const { return table_.count(token) > 0; }

  void set(const std::string& token, std::vector<float> vec) {
    if (vec.size() != dim_) fail(Error::Kind::shape, "vocabulary vector for '" + token + "' has wrong width");
    table_[token] = std::move(vec);
  }

  std::vector<float> embed(const std::string& token) const {
    auto it = table_.find(token);
    return it != table_.end() ? it->second : fallback(token);
  }

  /// FNV-1a of the token seeds a splitmix64 stream mapped to [-1, 1]/sqrt(dim).
  std::vector<float> fallback(const std::string& token) const {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : token) {
      h ^= c;
      h *= 1099511628211ULL;
    }
    std::vector<float> v(dim_);
    const double norm = 1.0 / std::sqrt(double(std::max<std::size_t>(dim_, 1)));
    for (auto& x : v) {
      h += 0x9e3779b97f4a7c15ULL;
      std::uint64_t z = h;
      z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
      z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
      z ^= z >> 31;
      x = float((double(z >> 11) * 0x1.0p-53 * 2.0 - 1.0) * norm);
    }
    return v;
  }

  void save(const std::string& path) const {
    std::ofstream os(path, std::ios::binary);
    if (!os) fail(Error::Kind::io, "cannot write '" + path + "'");
    os.write("EMBV", 4);
    io::write_pod<std::uint32_t>(os, kVocabVersion);
    io::write_pod<std::uint32_t>(os, std::uint32_t(dim_));
    io::write_pod<std::uint32_t>(os, std::uint32_t(table_.size()));
    for (const auto& [token, vec] : table_) {
      io::write_pod<std::uint16_t>(os, std::uint16_t(token.size()));
      os.write(token.data(), std::streamsize(token.size()));
      os.write(reinterpret_cast<const char*>(vec.data()), std::streamsize(vec.size() * sizeof(float)));
    }
  }

  static Vocabulary load(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) fail(Error::Kind::io, "cannot open vocabulary '" + path + "'");
    io::expect_magic(is, "EMBV", path);
    if (io::read_pod<std::uint32_t>(is, "version") != kVocabVersion)
      fail(Error::Kind::io, path + ": unsupported vocabulary version");
    Vocabulary v(io::read_pod<std::uint32_t>(is, "dim"));
    const auto count = io::read_pod<std::uint32_t>(is, "count");
    for (std::uint32_t i = 0; i < count; ++i) {
      const auto len = io::read_pod<std::uint16_t>(is, "token length");
      std::string token(len, '\0');
      std::vector<float> vec(v.dim_);
      if (!is.read(token.data(), len) ||
          !is.read(reinterpret_cast<char*>(vec.data()), std::streamsize(vec.size() * sizeof(float))))
        fail(Error::Kind::io, path + ": truncated vocabulary entry");
      v.set(token, std::move(vec));
    }
    return v;
  }

 private:
  std::size_t dim_ = 0;
  std::map<std::string, std::vector<float>> table_;
};

/// In-memory feature matrices keyed by video id, plus the query embedder.
struct FeatureStore {
  std::map<std::string, VideoFeatures> videos;
  Vocabulary vocab;

  const VideoFeatures& get(const std::string& id) const {
    auto it = videos.find(id);
    if (it == videos.end()) fail(Error::Kind::validation, "no features for video '" + id + "'");
    return it->second;
  }

  /// Loads features/{id}.embf for every id in `ids` and vocab.embv from `root`.
  static FeatureStore load(const std::filesystem::path& root, const std::vector<std::string>& ids) {
    FeatureStore s;
    s.vocab = Vocabulary::load((root / "vocab.embv").string());
    for (const auto& id : ids)
      if (!s.videos.count(id)) s.videos[id] = read_features((root / "features" / (id + ".embf")).string());
    return s;
  }

  void save(const std::filesystem::path& root) const {
    std::filesystem::create_directories(root / "features");
    vocab.save((root / "vocab.embv").string());
    for (const auto& [id, f] : videos) write_features(f, (root / "features" / (id + ".embf")).string());
  }
};

}  // namespace emb
