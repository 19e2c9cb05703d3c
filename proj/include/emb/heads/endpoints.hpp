#pragma once

#include <string>
#include <vector>

#include "emb/encoders/attention.hpp"

namespace emb {

template <class Real>
struct LstmLayer {
  Tensor<Real> w_ih, w_hh, bias;

  static LstmLayer create(ParameterSet<Real>& params, const std::string& name, std::size_t in, std::size_t hidden,
                          std::mt19937_64& rng) {
    LstmLayer l;
    l.w_ih = params.uniform(name + ".w_ih", {4 * hidden, in}, hidden, rng);
    l.w_hh = params.uniform(name + ".w_hh", {4 * hidden, hidden}, hidden, rng);
    l.bias = params.uniform(name + ".bias", {4 * hidden}, hidden, rng);
    return l;
  }

  Tensor<Real> operator()(const Tensor<Real>& x, std::size_t length) const {
    return lstm(x, w_ih, w_hh, bias, length);
  }
};

/// Sentence pooling, highlight scoring, stacked LSTMs and the two endpoint
/// heads of the bounding branch.
template <class Real>
struct EndpointHead {
  Tensor<Real> word_score;  // 1 x D
  Tensor<Real> highlight_weight, highlight_bias;
  std::vector<LstmLayer<Real>> layers;
  Dense<Real> logits;  // D -> 2 (start, end)

  static EndpointHead create(ParameterSet<Real>& params, const std::string& name, std::size_t width,
                             std::size_t lstm_layers, std::size_t highlight_kernel, std::mt19937_64& rng) {
    if (highlight_kernel % 2 == 0) fail(Error::Kind::config, "highlight kernel size must be odd");
    EndpointHead h;
    h.word_score = params.uniform(name + ".word_score", {1, width}, width, rng);
    h.highlight_weight =
        params.uniform(name + ".highlight.weight", {1, 2 * width, highlight_kernel}, 2 * width * highlight_kernel, rng);
    h.highlight_bias = params.constant(name + ".highlight.bias", {1}, Real(0));
    for (std::size_t i = 0; i < lstm_layers; ++i)
      h.layers.push_back(LstmLayer<Real>::create(params, name + ".lstm" + std::to_string(i), width, width, rng));
    h.logits = Dense<Real>::create(params, name + ".logits", width, 2, rng);
    return h;
  }
};

template <class Real>
struct EndpointOutput {
  Tensor<Real> sentence;          // D x S
  Tensor<Real> highlight_logits;  // 1 x (S*T)
  Tensor<Real> highlight;         // sigmoid of the above
  Tensor<Real> p_start;           // 1 x (S*T)
  Tensor<Real> p_end;             // 1 x (S*T)
};

/// Attention-weighted sum of word features, one column per sample.
template <class Real>
Tensor<Real> sentence_vector(const Tensor<Real>& word_score, const Sequence<Real>& query) {
  Tensor<Real> weights = segment_softmax(matmul(word_score, query.x), query.mask, query.length);
  return batched_matmul(query.x, weights, query.segments(), false, true);
}

template <class Real>
EndpointOutput<Real> predict_endpoints(const EndpointHead<Real>& head, const Sequence<Real>& fused,
                                       const Sequence<Real>& query) {
  const std::size_t T = fused.length;
  if (fused.segments() != query.segments()) fail(Error::Kind::shape, "predict_endpoints: batch size mismatch");
  EndpointOutput<Real> out;
  out.sentence = sentence_vector(head.word_score, query);
  Tensor<Real> cat = mask_columns(concat_rows<Real>({fused.x, repeat_segments(out.sentence, T)}), fused.mask);
  out.highlight_logits = conv1d(cat, head.highlight_weight, head.highlight_bias, T);
  out.highlight = sigmoid(out.highlight_logits);
  Tensor<Real> x = mask_columns(mul(fused.x, out.highlight), fused.mask);
  for (const auto& layer : head.layers) x = layer(x, T);
  Tensor<Real> p = segment_softmax(head.logits(x), fused.mask, T);
  out.p_start = slice_rows(p, 0, 1);
  out.p_end = slice_rows(p, 1, 2);
  return out;
}

}  // namespace emb
