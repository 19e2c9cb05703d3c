#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "emb/tensor/tensor.hpp"

namespace emb {

/// Ordered collection of named trainable tensors.
template <class Real>
class ParameterSet {
 public:
  /// Uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)].
  Tensor<Real> uniform(const std::string& name, Shape shape, std::size_t fan_in, std::mt19937_64& rng) {
    const double bound = 1.0 / std::sqrt(double(std::max<std::size_t>(fan_in, 1)));
    std::uniform_real_distribution<double> dist(-bound, bound);
    Buffer<Real> values(numel(shape));
    for (auto& v : values) v = Real(dist(rng));
    return add(name, Tensor<Real>::from(std::move(shape), std::move(values), true));
  }

  Tensor<Real> constant(const std::string& name, Shape shape, Real value) {
    Buffer<Real> values(numel(shape), value);
    return add(name, Tensor<Real>::from(std::move(shape), std::move(values), true));
  }

  Tensor<Real> add(const std::string& name, Tensor<Real> t) {
    if (index_.count(name)) fail(Error::Kind::validation, "duplicate parameter name '" + name + "'");
    index_[name] = tensors_.size();
    names_.push_back(name);
    tensors_.push_back(t);
    return t;
  }

  std::size_t size() const { return tensors_.size(); }
  const std::vector<std::string>& names() const { return names_; }
  std::vector<Tensor<Real>>& tensors() { return tensors_; }
  const std::vector<Tensor<Real>>& tensors() const { return tensors_; }

  const Tensor<Real>& get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) fail(Error::Kind::validation, "unknown parameter '" + name + "'");
    return tensors_[it->second];
  }

  std::size_t count_scalars() const {
    std::size_t n = 0;
    for (const auto& t : tensors_) n += t.size();
    return n;
  }

  void zero_grad() {
    for (auto& t : tensors_) t.zero_grad();
  }

 private:
  std::vector<std::string> names_;
  std::vector<Tensor<Real>> tensors_;
  std::map<std::string, std::size_t> index_;
};

namespace io {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

template <class T>
void write_pod(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T read_pod(std::istream& is, const std::string& what) {
  T v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(T)))
    fail(Error::Kind::io, "truncated file while reading " + what);
  return v;
}

inline void expect_magic(std::istream& is, const char (&magic)[5], const std::string& path) {
  char buf[4];
  if (!is.read(buf, 4) || std::memcmp(buf, magic, 4) != 0)
    fail(Error::Kind::io, path + ": bad magic, expected '" + std::string(magic) + "'");
}

}  // namespace io

inline constexpr std::uint32_t kCheckpointVersion = 1;

template <class Real>
void save_checkpoint(const ParameterSet<Real>& params, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) fail(Error::Kind::io, "cannot open '" + path + "' for writing");
  os.write("EMBW", 4);
  io::write_pod<std::uint32_t>(os, kCheckpointVersion);
  io::write_pod<std::uint32_t>(os, std::uint32_t(params.size()));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& name = params.names()[i];
    const auto& t = params.tensors()[i];
    io::write_pod<std::uint16_t>(os, std::uint16_t(name.size()));
    os.write(name.data(), std::streamsize(name.size()));
    io::write_pod<std::uint8_t>(os, std::uint8_t(t.rank()));
    for (auto d : t.shape()) io::write_pod<std::uint32_t>(os, std::uint32_t(d));
    for (Real v : t.data()) io::write_pod<float>(os, float(v));
  }
  if (!os) fail(Error::Kind::io, "write failed for '" + path + "'");
}

/// Overwrites the values of `params` from a checkpoint. Names and shapes
/// must match exactly.
template <class Real>
void load_checkpoint(ParameterSet<Real>& params, const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail(Error::Kind::io, "cannot open checkpoint '" + path + "'");
  io::expect_magic(is, "EMBW", path);
  const auto version = io::read_pod<std::uint32_t>(is, "version");
  if (version != kCheckpointVersion)
    fail(Error::Kind::io, path + ": unsupported checkpoint version " + std::to_string(version));
  const auto count = io::read_pod<std::uint32_t>(is, "tensor count");
  if (count != params.size())
    fail(Error::Kind::validation, path + ": holds " + std::to_string(count) + " tensors, model has " +
                                      std::to_string(params.size()));
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = io::read_pod<std::uint16_t>(is, "name length");
    std::string name(len, '\0');
    if (!is.read(name.data(), len)) fail(Error::Kind::io, path + ": truncated tensor name");
    const auto rank = io::read_pod<std::uint8_t>(is, "rank");
    Shape shape(rank);
    for (auto& d : shape) d = io::read_pod<std::uint32_t>(is, "dims");
    Tensor<Real> t = params.get(name);
    if (t.shape() != shape)
      fail(Error::Kind::validation, path + ": tensor '" + name + "' has shape " + shape_str(shape) +
                                        ", model expects " + shape_str(t.shape()));
    auto values = t.mutable_data();
    for (auto& v : values) v = Real(io::read_pod<float>(is, "tensor data"));
    if (!all_finite<Real>(values)) fail(Error::Kind::numeric, path + ": non-finite values in '" + name + "'");
  }
}

}  // namespace emb
