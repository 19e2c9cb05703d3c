#pragma once

#include <functional>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "emb/eval/supervision.hpp"
#include "emb/heads/losses.hpp"
#include "emb/model/emb_model.hpp"
#include "emb/tensor/gradcheck.hpp"

namespace emb {

struct GradcheckCase {
  std::string name;
  double tolerance;
  std::function<GradcheckResult()> run;
};

namespace detail {

using DTensor = Tensor<double>;
using DInputs = std::vector<DTensor>;

inline DTensor gc_random(const Shape& shape, std::mt19937_64& rng, bool grad = true) {
  std::normal_distribution<double> dist(0.0, 1.0);
  std::vector<double> v(numel(shape));
  for (auto& x : v) x = dist(rng);
  return DTensor::from(shape, std::move(v), grad);
}

// Shuffled multiples of 0.1: no two entries are within a finite-difference
// step of each other, so max selections never flip.
inline DTensor gc_separated(const Shape& shape, std::mt19937_64& rng) {
  std::vector<double> v(numel(shape));
  std::iota(v.begin(), v.end(), 0.0);
  std::shuffle(v.begin(), v.end(), rng);
  for (auto& x : v) x *= 0.1;
  return DTensor::from(shape, std::move(v), true);
}

// Scalar reduction through a fixed random projection.
inline DTensor gc_project(const DTensor& y) {
  std::mt19937_64 rng(99);
  return sum(mul(y, gc_random(y.shape(), rng, false)));
}

inline GradcheckCase gc_case(std::string name, std::function<DTensor(const DInputs&)> f, DInputs inputs,
                             double tol = 1e-4) {
  return {std::move(name), tol, [f = std::move(f), inputs, tol]() mutable {
            return gradcheck([&](const DInputs& v) { return gc_project(f(v)); }, inputs, tol, 1e-5);
          }};
}

}  // namespace detail

/// Toy batch for the end-to-end check: two samples, the second padded.
inline Batch<double> toy_batch(std::size_t T, std::size_t L, std::size_t dim, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Batch<double> b;
  b.frames = T;
  b.words = L;
  const std::size_t S = 2;
  b.video = detail::gc_random({dim, S * T}, rng, false);
  b.query = detail::gc_random({dim, S * L}, rng, false);
  b.video_mask.assign(S * T, 1);
  b.query_mask.assign(S * L, 1);
  const std::size_t short_frames = T - T / 4, short_words = L - 1;
  for (std::size_t t = short_frames; t < T; ++t) b.video_mask[T + t] = 0;
  for (std::size_t l = short_words; l < L; ++l) b.query_mask[L + l] = 0;
  b.valid_frames = {T, short_frames};
  b.truth = {{1, long(T / 2)}, {long(T / 4), long(short_frames) - 1}};
  b.indices = {0, 1};
  return b;
}

/// The weighted total loss on the toy batch as a function of every model
/// parameter. Elastic targets are fixed from the unperturbed model so the
/// function is smooth in the parameters.
inline GradcheckCase full_loss_case(double tol = 1e-3) {
  return {"full_loss", tol, [tol]() {
            ModelConfig mc;
            mc.video_dim = mc.query_dim = 8;
            mc.width = 8;
            mc.heads = 2;
            mc.max_frames = 8;
            mc.num_clips = 4;
            mc.dropout = 0.0;
            EmbModel<double> model(mc, 7);
            const Batch<double> batch = toy_batch(8, 4, 8, 11);
            const ForwardContext ctx{true, 0.0, nullptr};
            const LossWeights w;
            SupervisionStrategy strategy;
            strategy.variant = Strategy::elastic;
            Supervision sup;
            {
              NoGradGuard guard;
              auto map = model.forward_alignment(batch, ctx, true);
              sup = make_supervision(strategy, batch.truth, batch.valid_frames, batch.frames, map, 0.3);
            }
            auto f = [&](const detail::DInputs&) {
              auto ep = model.forward_bounding(batch, ctx);
              auto map = model.forward_alignment(batch, ctx, true);
              auto lb = loss_bound(ep.p_start, ep.p_end, sup.ranges, batch.frames);
              auto la = loss_align(map.logits, map.alpha, map.valid(), map.slots(), w);
              auto lh = loss_highlight(ep.highlight_logits, sup.ranges, batch.valid_frames, batch.video_mask,
                                       batch.frames, 0.1);
              return total_loss(lb, la, lh, w);
            };
            auto params = model.parameters().tensors();
            return gradcheck(f, params, tol, 1e-5);
          }};
}

/// Every differentiable kernel at tolerance 1e-4 plus the end-to-end loss.
inline std::vector<GradcheckCase> gradcheck_battery() {
  using namespace detail;
  std::mt19937_64 rng(2024);
  std::vector<GradcheckCase> c;
  c.push_back(gc_case("matmul", [](const DInputs& v) { return matmul(v[0], v[1]); },
                      {gc_random({3, 4}, rng), gc_random({4, 5}, rng)}));
  c.push_back(gc_case("transpose", [](const DInputs& v) { return transpose(v[0]); }, {gc_random({3, 4}, rng)}));
  c.push_back(gc_case("reshape", [](const DInputs& v) { return reshape(v[0], {2, 6}); }, {gc_random({3, 4}, rng)}));
  c.push_back(gc_case("linear", [](const DInputs& v) { return linear(v[0], v[1], v[2]); },
                      {gc_random({4, 6}, rng), gc_random({3, 4}, rng), gc_random({3}, rng)}));
  c.push_back(gc_case("batched_matmul", [](const DInputs& v) { return batched_matmul(v[0], v[1], 2, true, false); },
                      {gc_random({4, 6}, rng), gc_random({4, 4}, rng)}));
  for (Shape bs : {Shape{3, 4}, Shape{1, 4}, Shape{3, 1}, Shape{1}}) {
    const std::string tag = shape_str(bs);
    c.push_back(gc_case("add " + tag, [](const DInputs& v) { return add(v[0], v[1]); },
                        {gc_random({3, 4}, rng), gc_random(bs, rng)}));
    c.push_back(gc_case("sub " + tag, [](const DInputs& v) { return sub(v[0], v[1]); },
                        {gc_random({3, 4}, rng), gc_random(bs, rng)}));
    c.push_back(gc_case("mul " + tag, [](const DInputs& v) { return mul(v[0], v[1]); },
                        {gc_random({3, 4}, rng), gc_random(bs, rng)}));
  }
  c.push_back(gc_case("mask_columns", [](const DInputs& v) { return mask_columns(v[0], Mask{1, 0, 1, 1}); },
                      {gc_random({2, 4}, rng)}));
  c.push_back(gc_case("scale", [](const DInputs& v) { return scale(v[0], 0.7); }, {gc_random({2, 3}, rng)}));
  c.push_back(gc_case("sigmoid", [](const DInputs& v) { return sigmoid(v[0]); }, {gc_random({3, 3}, rng)}));
  c.push_back(gc_case("sum", [](const DInputs& v) { return sum(v[0]); }, {gc_random({2, 3}, rng)}));
  c.push_back(gc_case("mean", [](const DInputs& v) { return mean(v[0]); }, {gc_random({2, 3}, rng)}));
  c.push_back(gc_case("concat_rows", [](const DInputs& v) { return concat_rows<double>({v[0], v[1]}); },
                      {gc_random({2, 5}, rng), gc_random({3, 5}, rng)}));
  c.push_back(gc_case("slice_rows", [](const DInputs& v) { return slice_rows(v[0], 1, 3); }, {gc_random({4, 3}, rng)}));
  c.push_back(gc_case("gather_columns", [](const DInputs& v) { return gather_columns(v[0], {2, -1, 0, 2}); },
                      {gc_random({3, 4}, rng)}));
  c.push_back(gc_case("repeat_segments", [](const DInputs& v) { return repeat_segments(v[0], 3); },
                      {gc_random({2, 2}, rng)}));
  c.push_back(gc_case("segment_softmax",
                      [](const DInputs& v) { return segment_softmax(v[0], Mask{1, 1, 0, 1, 1, 1, 1, 0}, 4); },
                      {gc_random({2, 8}, rng)}));
  c.push_back(gc_case("pool_max",
                      [](const DInputs& v) {
                        return pool_max(v[0], {{0, 3}, {2, 6}, {5, 6}, {4, 4}}, Mask{1, 1, 1, 0, 1, 1});
                      },
                      {gc_separated({3, 6}, rng)}));
  for (bool reverse : {false, true})
    c.push_back(gc_case(reverse ? "cumulative_max reverse" : "cumulative_max",
                        [reverse](const DInputs& v) {
                          return cumulative_max(v[0], Mask{1, 1, 0, 1, 1, 1, 1, 0}, 4, reverse);
                        },
                        {gc_separated({3, 8}, rng)}));
  c.push_back(gc_case("conv1d", [](const DInputs& v) { return conv1d(v[0], v[1], v[2], 5); },
                      {gc_random({3, 10}, rng), gc_random({2, 3, 3}, rng), gc_random({2}, rng)}));
  c.push_back(gc_case("conv2d", [](const DInputs& v) { return conv2d(v[0], v[1], v[2], 4, 3); },
                      {gc_random({2, 24}, rng), gc_random({3, 2, 3, 3}, rng), gc_random({3}, rng)}));
  c.push_back(gc_case("conv2d 1x1", [](const DInputs& v) { return conv2d(v[0], v[1], v[2], 1, 6); },
                      {gc_random({3, 6}, rng), gc_random({1, 3, 1, 1}, rng), gc_random({1}, rng)}));
  c.push_back(gc_case("layer_norm", [](const DInputs& v) { return layer_norm(v[0], v[1], v[2]); },
                      {gc_random({5, 4}, rng), gc_random({5}, rng), gc_random({5}, rng)}));
  c.push_back(gc_case("dropout",
                      [](const DInputs& v) {
                        std::mt19937_64 drop(5);
                        return dropout(v[0], 0.5, true, drop);
                      },
                      {gc_random({3, 4}, rng)}));
  c.push_back(gc_case("lstm", [](const DInputs& v) { return lstm(v[0], v[1], v[2], v[3], 4); },
                      {gc_random({3, 8}, rng), gc_random({16, 3}, rng), gc_random({16, 4}, rng),
                       gc_random({16}, rng)}));
  c.push_back(gc_case("multihead_attention",
                      [](const DInputs& v) {
                        return multihead_attention(v[0], v[1], v[2], Mask{1, 1, 0, 1, 1, 1}, 2, 2, 3);
                      },
                      {gc_random({4, 4}, rng), gc_random({4, 6}, rng), gc_random({4, 6}, rng)}));
  c.push_back(gc_case("log_mass_loss",
                      [](const DInputs& v) { return log_mass_loss(segment_softmax(v[0], {}, 4), {{1, 2}, {0, 3}}, 4); },
                      {gc_random({1, 8}, rng)}));
  c.push_back(gc_case("soft_cross_entropy",
                      [](const DInputs& v) {
                        return soft_cross_entropy(segment_softmax(v[0], {}, 4),
                                                  std::vector<double>{0.1, 0.6, 0.3, 0, 0, 0, 0.5, 0.5}, 4);
                      },
                      {gc_random({1, 8}, rng)}));
  c.push_back(gc_case("bce_with_logits",
                      [](const DInputs& v) {
                        return bce_with_logits(v[0], std::vector<double>{1, 0, 0.5, 1, 0, 0, 1, 0.3},
                                               Mask{1, 1, 1, 0, 1, 1, 1, 1}, 4);
                      },
                      {gc_random({1, 8}, rng)}));
  c.push_back(full_loss_case());
  return c;
}

}  // namespace emb
