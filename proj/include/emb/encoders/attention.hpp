#pragma once

#include <cmath>
#include <random>
#include <string>

#include "emb/tensor/ops.hpp"
#include "emb/tensor/parameters.hpp"

namespace emb {

/// Packed batch of sequences: `x` is D x (segments * length), one segment per
/// sample, with a per-column validity mask.
template <class Real>
struct Sequence {
  Tensor<Real> x;
  Mask mask;
  std::size_t length = 0;

  std::size_t width() const { return x.rows(); }
  std::size_t segments() const { return length ? x.cols() / length : 0; }
};

/// Training-mode switches shared by every layer in one forward pass.
struct ForwardContext {
  bool training = false;
  double dropout = 0.2;
  std::mt19937_64* rng = nullptr;
};

template <class Real>
Tensor<Real> apply_dropout(const Tensor<Real>& x, const ForwardContext& ctx) {
  if (!ctx.training || ctx.dropout <= 0.0) return x;
  if (!ctx.rng) fail(Error::Kind::validation, "training-mode forward needs a random generator");
  return dropout(x, ctx.dropout, true, *ctx.rng);
}

/// A fully connected layer applied to every column.
template <class Real>
struct Dense {
  Tensor<Real> weight;  // out x in
  Tensor<Real> bias;    // out, may be undefined

  static Dense create(ParameterSet<Real>& params, const std::string& name, std::size_t in, std::size_t out,
                      std::mt19937_64& rng, bool with_bias = true) {
    Dense d;
    d.weight = params.uniform(name + ".weight", {out, in}, in, rng);
    if (with_bias) d.bias = params.constant(name + ".bias", {out}, Real(0));
    return d;
  }

  Tensor<Real> operator()(const Tensor<Real>& x) const { return linear(x, weight, bias); }
};

/// One attention layer: query/key/value projections plus the layer norm that
/// follows the multi-head residual.
template <class Real>
struct AttentionLayer {
  Dense<Real> query, key, value;
  Tensor<Real> norm_gamma, norm_beta;
  std::size_t heads = 8;

  static AttentionLayer create(ParameterSet<Real>& params, const std::string& name, std::size_t width,
                               std::size_t heads, std::mt19937_64& rng) {
    if (heads == 0 || width % heads != 0)
      fail(Error::Kind::config, name + ": width " + std::to_string(width) + " is not divisible by " +
                                    std::to_string(heads) + " heads");
    AttentionLayer a;
    a.heads = heads;
    a.query = Dense<Real>::create(params, name + ".query", width, width, rng);
    a.key = Dense<Real>::create(params, name + ".key", width, width, rng);
    a.value = Dense<Real>::create(params, name + ".value", width, width, rng);
    a.norm_gamma = params.constant(name + ".norm.gamma", {width}, Real(1));
    a.norm_beta = params.constant(name + ".norm.beta", {width}, Real(0));
    return a;
  }
};

namespace detail {

template <class Real>
void check_pair(const Sequence<Real>& target, const Sequence<Real>& reference) {
  if (target.width() != reference.width())
    fail(Error::Kind::shape, "attention: target width " + std::to_string(target.width()) +
                                 " != reference width " + std::to_string(reference.width()));
  if (target.segments() != reference.segments())
    fail(Error::Kind::shape, "attention: target and reference hold different batch sizes");
}

}  // namespace detail

/// Target-reference correlations fc(X^t)^T fc(X^r) / sqrt(D), one
/// L^t x L^r block per sample, before any masking.
template <class Real>
Tensor<Real> attention_matrix(const AttentionLayer<Real>& layer, const Sequence<Real>& target,
                              const Sequence<Real>& reference) {
  detail::check_pair(target, reference);
  Tensor<Real> a = batched_matmul(layer.query(target.x), layer.key(reference.x), target.segments(), true, false);
  return scale(a, Real(1) / std::sqrt(Real(target.width())));
}

/// Residual attention X^t + fc(X^r) softmax(A)^T using `heads` heads of
/// width D/heads; masked reference positions receive zero weight.
template <class Real>
Tensor<Real> attention_residual(const AttentionLayer<Real>& layer, const Sequence<Real>& target,
                                const Sequence<Real>& reference, std::size_t heads) {
  detail::check_pair(target, reference);
  Tensor<Real> mixed = multihead_attention(layer.query(target.x), layer.key(reference.x), layer.value(reference.x),
                                           reference.mask, heads, target.length, reference.length);
  return add(target.x, mixed);
}

/// Single-head attentive encoding g(X^t, X^r).
template <class Real>
Sequence<Real> attention_encode(const AttentionLayer<Real>& layer, const Sequence<Real>& target,
                                const Sequence<Real>& reference) {
  return {mask_columns(attention_residual(layer, target, reference, 1), target.mask), target.mask, target.length};
}

/// Multi-head encoding: heads are concatenated, the residual sum is
/// layer-normalised, and dropout acts on the attention branch in training.
template <class Real>
Sequence<Real> multi_head(const AttentionLayer<Real>& layer, const Sequence<Real>& target,
                          const Sequence<Real>& reference, const ForwardContext& ctx) {
  detail::check_pair(target, reference);
  Tensor<Real> mixed =
      multihead_attention(layer.query(target.x), layer.key(reference.x), layer.value(reference.x), reference.mask,
                          layer.heads, target.length, reference.length);
  Tensor<Real> y = layer_norm(add(target.x, apply_dropout(mixed, ctx)), layer.norm_gamma, layer.norm_beta);
  return {mask_columns(y, target.mask), target.mask, target.length};
}

/// Sinusoidal position code: channel 2i holds sin(p / 10000^(2i/D)),
/// channel 2i+1 holds cos of the same angle.
inline double position_code(std::size_t position, std::size_t channel, std::size_t width) {
  const double exponent = double(channel - channel % 2) / double(width);
  const double angle = double(position) / std::pow(10000.0, exponent);
  return channel % 2 == 0 ? std::sin(angle) : std::cos(angle);
}

/// Adds position codes to unmasked positions; masked columns pass through.
template <class Real>
Sequence<Real> positional_embed(const Sequence<Real>& seq) {
  const std::size_t D = seq.width(), cols = seq.x.cols();
  Buffer<Real> table(D * seq.length);
  for (std::size_t d = 0; d < D; ++d)
    for (std::size_t p = 0; p < seq.length; ++p) table[d * seq.length + p] = Real(position_code(p, d, D));
  Buffer<Real> code(D * cols, Real(0));
  for (std::size_t c = 0; c < cols; ++c) {
    if (!seq.mask.empty() && !seq.mask[c]) continue;
    const std::size_t p = c % seq.length;
    for (std::size_t d = 0; d < D; ++d) code[d * cols + c] = table[d * seq.length + p];
  }
  return {add(seq.x, Tensor<Real>::matrix(D, cols, std::move(code))), seq.mask, seq.length};
}

}  // namespace emb
