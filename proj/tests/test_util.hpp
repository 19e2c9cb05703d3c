#pragma once

#include <algorithm>
#include <numeric>
#include <random>

#include "emb/tensor/tensor.hpp"

namespace testutil {

inline emb::Tensor<double> random_like(const emb::Shape& shape, std::mt19937_64& rng, double scale = 1.0,
                                       bool requires_grad = false) {
  std::normal_distribution<double> dist(0.0, scale);
  std::vector<double> v(emb::numel(shape));
  for (auto& x : v) x = dist(rng);
  return emb::Tensor<double>::from(shape, std::move(v), requires_grad);
}

inline emb::Tensor<double> random_param(const emb::Shape& shape, std::mt19937_64& rng, double scale = 1.0) {
  return random_like(shape, rng, scale, true);
}

// Distinct values at least 0.1 apart so central differences never cross a
// max-pool decision boundary.
inline emb::Tensor<double> separated_param(const emb::Shape& shape, std::mt19937_64& rng) {
  std::vector<double> v(emb::numel(shape));
  std::iota(v.begin(), v.end(), 0.0);
  std::shuffle(v.begin(), v.end(), rng);
  for (auto& x : v) x *= 0.1;
  return emb::Tensor<double>::from(shape, std::move(v), true);
}

}  // namespace testutil
