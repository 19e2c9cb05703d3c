#pragma once

// Primitive kernels with hand-written backward passes.
//
// Layout convention: sequence data is a rank-2 tensor of shape D x (S*n),
// i.e. S samples ("segments") of n columns each, one column per position.
// Ops that mix positions take the segment length so samples never interact.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "emb/tensor/tensor.hpp"

namespace emb {

using Mask = std::vector<std::uint8_t>;
using ColumnRange = std::pair<std::size_t, std::size_t>;  // half-open [first, second)

/// Additive logit offset applied to masked positions before normalisation.
inline constexpr double kMaskedLogit = -1e9;

namespace detail {

template <class Real>
using RowMatrix = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class Real>
using MatMap = Eigen::Map<RowMatrix<Real>, 0, Eigen::OuterStride<>>;
template <class Real>
using ConstMatMap = Eigen::Map<const RowMatrix<Real>, 0, Eigen::OuterStride<>>;

template <class Real>
MatMap<Real> map(Real* p, std::size_t rows, std::size_t cols, std::size_t stride) {
  return MatMap<Real>(p, Eigen::Index(rows), Eigen::Index(cols),
                      Eigen::OuterStride<>(Eigen::Index(stride)));
}
template <class Real>
ConstMatMap<Real> cmap(const Real* p, std::size_t rows, std::size_t cols, std::size_t stride) {
  return ConstMatMap<Real>(p, Eigen::Index(rows), Eigen::Index(cols),
                           Eigen::OuterStride<>(Eigen::Index(stride)));
}
template <class Real>
MatMap<Real> map(Buffer<Real>& v, std::size_t rows, std::size_t cols) {
  return map(v.data(), rows, cols, cols);
}
template <class Real>
ConstMatMap<Real> cmap(const Buffer<Real>& v, std::size_t rows, std::size_t cols) {
  return cmap(v.data(), rows, cols, cols);
}

inline void check_rank2(const char* op, const Shape& s) {
  if (s.size() != 2) fail(Error::Kind::shape, std::string(op) + ": expected a matrix, got " + shape_str(s));
}

inline void check_segments(const char* op, std::size_t cols, std::size_t n) {
  if (n == 0 || cols % n != 0)
    fail(Error::Kind::shape, std::string(op) + ": " + std::to_string(cols) +
                                 " columns do not split into segments of " + std::to_string(n));
}

inline void check_mask(const char* op, const Mask& mask, std::size_t cols) {
  if (!mask.empty() && mask.size() != cols)
    fail(Error::Kind::shape, std::string(op) + ": mask length " + std::to_string(mask.size()) +
                                 " != " + std::to_string(cols));
}

template <class Real>
Real sigmoid(Real x) {
  return x >= 0 ? Real(1) / (Real(1) + std::exp(-x)) : std::exp(x) / (Real(1) + std::exp(x));
}

}  // namespace detail

// ---------------------------------------------------------------- matmul

template <class Real>
Tensor<Real> matmul(const Tensor<Real>& a, const Tensor<Real>& b) {
  using namespace detail;
  check_rank2("matmul", a.shape());
  check_rank2("matmul", b.shape());
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k)
    fail(Error::Kind::shape, "matmul: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  Buffer<Real> out(m * n);
  map(out, m, n).noalias() = cmap(a.node()->value, m, k) * cmap(b.node()->value, k, n);
  return make_result<Real>("matmul", Shape{m, n}, std::move(out), {&a, &b},
                           [m, k, n](Node<Real>& self) {
                             auto g = cmap(self.grad, m, n);
                             if (auto* ga = grad_sink(self, 0))
                               map(*ga, m, k).noalias() += g * cmap(self.inputs[1]->value, k, n).transpose();
                             if (auto* gb = grad_sink(self, 1))
                               map(*gb, k, n).noalias() += cmap(self.inputs[0]->value, m, k).transpose() * g;
                           });
}

template <class Real>
Tensor<Real> transpose(const Tensor<Real>& a) {
  using namespace detail;
  check_rank2("transpose", a.shape());
  const std::size_t r = a.rows(), c = a.cols();
  Buffer<Real> out(r * c);
  map(out, c, r) = cmap(a.node()->value, r, c).transpose();
  return make_result<Real>("transpose", Shape{c, r}, std::move(out), {&a}, [r, c](Node<Real>& self) {
    if (auto* g = grad_sink(self, 0)) map(*g, r, c) += cmap(self.grad, c, r).transpose();
  });
}

/// Fully-connected projection of every column: W x + b. `bias` may be undefined.
template <class Real>
Tensor<Real> linear(const Tensor<Real>& x, const Tensor<Real>& weight, const Tensor<Real>& bias) {
  using namespace detail;
  check_rank2("linear", x.shape());
  check_rank2("linear", weight.shape());
  const std::size_t out_dim = weight.rows(), in_dim = weight.cols(), n = x.cols();
  if (x.rows() != in_dim)
    fail(Error::Kind::shape, "linear: weight " + shape_str(weight.shape()) + " vs input " +
                                 shape_str(x.shape()));
  const bool has_bias = bias.defined();
  if (has_bias && bias.size() != out_dim)
    fail(Error::Kind::shape, "linear: bias " + shape_str(bias.shape()));
  Buffer<Real> out(out_dim * n);
  auto y = map(out, out_dim, n);
  y.noalias() = cmap(weight.node()->value, out_dim, in_dim) * cmap(x.node()->value, in_dim, n);
  if (has_bias) {
    const Real* b = bias.node()->value.data();
    for (std::size_t r = 0; r < out_dim; ++r) y.row(Eigen::Index(r)).array() += b[r];
  }
  std::vector<const Tensor<Real>*> inputs{&x, &weight};
  if (has_bias) inputs.push_back(&bias);
  return make_result<Real>("linear", Shape{out_dim, n}, std::move(out), inputs,
                           [out_dim, in_dim, n, has_bias](Node<Real>& self) {
                             auto g = cmap(self.grad, out_dim, n);
                             if (auto* gx = grad_sink(self, 0))
                               map(*gx, in_dim, n).noalias() +=
                                   cmap(self.inputs[1]->value, out_dim, in_dim).transpose() * g;
                             if (auto* gw = grad_sink(self, 1))
                               map(*gw, out_dim, in_dim).noalias() +=
                                   g * cmap(self.inputs[0]->value, in_dim, n).transpose();
                             if (has_bias)
                               if (auto* gb = grad_sink(self, 2))
                                 for (std::size_t r = 0; r < out_dim; ++r)
                                   (*gb)[r] += g.row(Eigen::Index(r)).sum();
                           });
}

/// Per-block products for packed operands. `a` holds S blocks of shape
/// a.rows() x (a.cols()/S) side by side, likewise `b`; block s of the result
/// is op(a_s) * op(b_s).
template <class Real>
Tensor<Real> batched_matmul(const Tensor<Real>& a, const Tensor<Real>& b, std::size_t segments,
                            bool transpose_a = false, bool transpose_b = false) {
  using namespace detail;
  check_rank2("batched_matmul", a.shape());
  check_rank2("batched_matmul", b.shape());
  check_segments("batched_matmul", a.cols(), segments);
  check_segments("batched_matmul", b.cols(), segments);
  const std::size_t ar = a.rows(), ac = a.cols() / segments;
  const std::size_t br = b.rows(), bc = b.cols() / segments;
  const std::size_t m = transpose_a ? ac : ar, k = transpose_a ? ar : ac;
  const std::size_t k2 = transpose_b ? bc : br, p = transpose_b ? br : bc;
  if (k != k2)
    fail(Error::Kind::shape, "batched_matmul: inner dimensions " + std::to_string(k) + " vs " +
                                 std::to_string(k2));
  const std::size_t a_stride = a.cols(), b_stride = b.cols(), o_stride = segments * p;
  Buffer<Real> out(m * o_stride);
  for (std::size_t s = 0; s < segments; ++s) {
    auto A = cmap(a.node()->value.data() + s * ac, ar, ac, a_stride);
    auto B = cmap(b.node()->value.data() + s * bc, br, bc, b_stride);
    auto C = map(out.data() + s * p, m, p, o_stride);
    if (!transpose_a && !transpose_b) C.noalias() = A * B;
    else if (!transpose_a) C.noalias() = A * B.transpose();
    else if (!transpose_b) C.noalias() = A.transpose() * B;
    else C.noalias() = A.transpose() * B.transpose();
  }
  return make_result<Real>(
      "batched_matmul", Shape{m, o_stride}, std::move(out), {&a, &b},
      [=](Node<Real>& self) {
        auto* ga = grad_sink(self, 0);
        auto* gb = grad_sink(self, 1);
        for (std::size_t s = 0; s < segments; ++s) {
          auto A = cmap(self.inputs[0]->value.data() + s * ac, ar, ac, a_stride);
          auto B = cmap(self.inputs[1]->value.data() + s * bc, br, bc, b_stride);
          auto G = cmap(self.grad.data() + s * p, m, p, o_stride);
          if (ga) {
            auto dA = map(ga->data() + s * ac, ar, ac, a_stride);
            // d op(A) = G op(B)^T
            if (!transpose_a && !transpose_b) dA.noalias() += G * B.transpose();
            else if (!transpose_a) dA.noalias() += G * B;
            else if (!transpose_b) dA.noalias() += B * G.transpose();
            else dA.noalias() += B.transpose() * G.transpose();
          }
          if (gb) {
            auto dB = map(gb->data() + s * bc, br, bc, b_stride);
            // d op(B) = op(A)^T G
            if (!transpose_a && !transpose_b) dB.noalias() += A.transpose() * G;
            else if (!transpose_a) dB.noalias() += G.transpose() * A;
            else if (!transpose_b) dB.noalias() += A * G;
            else dB.noalias() += G.transpose() * A.transpose();
          }
        }
      });
}

// ------------------------------------------------------- elementwise family

namespace detail {

enum class Broadcast { same, row, column, scalar };

template <class Real>
Broadcast broadcast_kind(const char* op, const Tensor<Real>& a, const Tensor<Real>& b) {
  if (b.shape() == a.shape()) return Broadcast::same;
  if (b.size() == 1) return Broadcast::scalar;
  if (b.rows() == 1 && b.cols() == a.cols() && a.rank() == 2) return Broadcast::row;
  if (b.cols() == 1 && b.rows() == a.rows() && a.rank() == 2) return Broadcast::column;
  fail(Error::Kind::shape, std::string(op) + ": cannot broadcast " + shape_str(b.shape()) +
                               " onto " + shape_str(a.shape()));
}

// Calls fn(a_index, b_index) over an r x c grid; the switch is hoisted out of
// the loops so each case vectorises.
template <class Fn>
void for_each_pair(Broadcast kind, std::size_t r, std::size_t c, Fn&& fn) {
  switch (kind) {
    case Broadcast::same:
      for (std::size_t i = 0; i < r * c; ++i) fn(i, i);
      return;
    case Broadcast::row:
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) fn(i * c + j, j);
      return;
    case Broadcast::column:
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) fn(i * c + j, i);
      return;
    case Broadcast::scalar:
      for (std::size_t i = 0; i < r * c; ++i) fn(i, std::size_t(0));
      return;
  }
}

}  // namespace detail

/// a + b, with `b` broadcast as a row (1 x c), column (r x 1) or scalar.
template <class Real>
Tensor<Real> add(const Tensor<Real>& a, const Tensor<Real>& b) {
  using namespace detail;
  const Broadcast kind = broadcast_kind("add", a, b);
  const std::size_t r = a.rows(), c = a.cols();
  Buffer<Real> out(a.node()->value);
  const auto& bv = b.node()->value;
  for_each_pair(kind, r, c, [&](std::size_t ai, std::size_t bi) { out[ai] += bv[bi]; });
  return make_result<Real>("add", a.shape(), std::move(out), {&a, &b}, [=](Node<Real>& self) {
    if (auto* ga = grad_sink(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) (*ga)[i] += self.grad[i];
    if (auto* gb = grad_sink(self, 1))
      for_each_pair(kind, r, c, [&](std::size_t ai, std::size_t bi) { (*gb)[bi] += self.grad[ai]; });
  });
}

template <class Real>
Tensor<Real> sub(const Tensor<Real>& a, const Tensor<Real>& b) {
  using namespace detail;
  const Broadcast kind = broadcast_kind("sub", a, b);
  const std::size_t r = a.rows(), c = a.cols();
  Buffer<Real> out(a.node()->value);
  const auto& bv = b.node()->value;
  for_each_pair(kind, r, c, [&](std::size_t ai, std::size_t bi) { out[ai] -= bv[bi]; });
  return make_result<Real>("sub", a.shape(), std::move(out), {&a, &b}, [=](Node<Real>& self) {
    if (auto* ga = grad_sink(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) (*ga)[i] += self.grad[i];
    if (auto* gb = grad_sink(self, 1))
      for_each_pair(kind, r, c, [&](std::size_t ai, std::size_t bi) { (*gb)[bi] -= self.grad[ai]; });
  });
}

/// Hadamard product with the same broadcasting rules as add().
template <class Real>
Tensor<Real> mul(const Tensor<Real>& a, const Tensor<Real>& b) {
  using namespace detail;
  const Broadcast kind = broadcast_kind("mul", a, b);
  const std::size_t r = a.rows(), c = a.cols();
  Buffer<Real> out(a.node()->value);
  const auto& bv = b.node()->value;
  for_each_pair(kind, r, c, [&](std::size_t ai, std::size_t bi) { out[ai] *= bv[bi]; });
  return make_result<Real>("mul", a.shape(), std::move(out), {&a, &b}, [=](Node<Real>& self) {
    const auto& av = self.inputs[0]->value;
    const auto& bv = self.inputs[1]->value;
    if (auto* ga = grad_sink(self, 0))
      for_each_pair(kind, r, c, [&](std::size_t ai, std::size_t bi) { (*ga)[ai] += self.grad[ai] * bv[bi]; });
    if (auto* gb = grad_sink(self, 1))
      for_each_pair(kind, r, c, [&](std::size_t ai, std::size_t bi) { (*gb)[bi] += self.grad[ai] * av[ai]; });
  });
}

/// Multiplies every column by a constant 0/1 mask entry.
template <class Real>
Tensor<Real> mask_columns(const Tensor<Real>& x, const Mask& mask) {
  detail::check_mask("mask_columns", mask, x.cols());
  if (mask.empty()) return x;
  Buffer<Real> m(mask.begin(), mask.end());
  return mul(x, Tensor<Real>::matrix(1, x.cols(), std::move(m)));
}

template <class Real>
Tensor<Real> scale(const Tensor<Real>& a, Real factor) {
  Buffer<Real> out(a.node()->value);
  for (auto& v : out) v *= factor;
  return make_result<Real>("scale", a.shape(), std::move(out), {&a}, [factor](Node<Real>& self) {
    if (auto* g = grad_sink(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) (*g)[i] += factor * self.grad[i];
  });
}

template <class Real>
Tensor<Real> sigmoid(const Tensor<Real>& a) {
  Buffer<Real> out(a.size());
  const auto& av = a.node()->value;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = detail::sigmoid(av[i]);
  auto saved = std::make_shared<Buffer<Real>>(out);
  return make_result<Real>("sigmoid", a.shape(), std::move(out), {&a}, [saved](Node<Real>& self) {
    if (auto* g = grad_sink(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) {
        const Real y = (*saved)[i];
        (*g)[i] += self.grad[i] * y * (Real(1) - y);
      }
  });
}

/// Sum of all entries (64-bit accumulation).
template <class Real>
Tensor<Real> sum(const Tensor<Real>& a) {
  double acc = 0;
  for (Real v : a.node()->value) acc += v;
  return make_result<Real>("sum", Shape{1}, Buffer<Real>{Real(acc)}, {&a}, [](Node<Real>& self) {
    if (auto* g = grad_sink(self, 0))
      for (auto& v : *g) v += self.grad[0];
  });
}

template <class Real>
Tensor<Real> mean(const Tensor<Real>& a) {
  return scale(sum(a), Real(1) / Real(a.size()));
}

// ------------------------------------------------------------- reshaping

template <class Real>
Tensor<Real> reshape(const Tensor<Real>& a, Shape shape) {
  if (numel(shape) != a.size())
    fail(Error::Kind::shape, "reshape: " + shape_str(a.shape()) + " -> " + shape_str(shape));
  return make_result<Real>("reshape", std::move(shape), Buffer<Real>(a.node()->value), {&a},
                           [](Node<Real>& self) {
                             if (auto* g = grad_sink(self, 0))
                               for (std::size_t i = 0; i < self.grad.size(); ++i) (*g)[i] += self.grad[i];
                           });
}

/// Stacks matrices with equal column counts on top of each other.
template <class Real>
Tensor<Real> concat_rows(const std::vector<Tensor<Real>>& parts) {
  if (parts.empty()) fail(Error::Kind::shape, "concat_rows: no inputs");
  const std::size_t c = parts.front().cols();
  std::size_t total = 0;
  std::vector<const Tensor<Real>*> inputs;
  std::vector<std::size_t> offsets;
  for (const auto& p : parts) {
    if (p.cols() != c)
      fail(Error::Kind::shape, "concat_rows: column mismatch " + shape_str(p.shape()));
    offsets.push_back(total * c);
    total += p.rows();
    inputs.push_back(&p);
  }
  Buffer<Real> out;
  out.reserve(total * c);
  for (const auto& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
  return make_result<Real>("concat_rows", Shape{total, c}, std::move(out), inputs,
                           [offsets](Node<Real>& self) {
                             for (std::size_t i = 0; i < offsets.size(); ++i)
                               if (auto* g = grad_sink(self, i))
                                 for (std::size_t j = 0; j < g->size(); ++j)
                                   (*g)[j] += self.grad[offsets[i] + j];
                           });
}

template <class Real>
Tensor<Real> slice_rows(const Tensor<Real>& a, std::size_t first, std::size_t last) {
  detail::check_rank2("slice_rows", a.shape());
  if (first >= last || last > a.rows())
    fail(Error::Kind::shape, "slice_rows: bad range for " + shape_str(a.shape()));
  const std::size_t c = a.cols();
  Buffer<Real> out(a.data().begin() + first * c, a.data().begin() + last * c);
  return make_result<Real>("slice_rows", Shape{last - first, c}, std::move(out), {&a},
                           [first, c](Node<Real>& self) {
                             if (auto* g = grad_sink(self, 0))
                               for (std::size_t j = 0; j < self.grad.size(); ++j)
                                 (*g)[first * c + j] += self.grad[j];
                           });
}

/// Column gather; negative indices produce zero columns.
template <class Real>
Tensor<Real> gather_columns(const Tensor<Real>& a, const std::vector<long>& index) {
  detail::check_rank2("gather_columns", a.shape());
  const std::size_t r = a.rows(), c = a.cols(), n = index.size();
  for (long i : index)
    if (i >= long(c)) fail(Error::Kind::shape, "gather_columns: index " + std::to_string(i) + " out of range");
  Buffer<Real> out(r * n, Real(0));
  const auto& av = a.node()->value;
  for (std::size_t row = 0; row < r; ++row)
    for (std::size_t j = 0; j < n; ++j)
      if (index[j] >= 0) out[row * n + j] = av[row * c + std::size_t(index[j])];
  return make_result<Real>("gather_columns", Shape{r, n}, std::move(out), {&a},
                           [index, r, c, n](Node<Real>& self) {
                             if (auto* g = grad_sink(self, 0))
                               for (std::size_t row = 0; row < r; ++row)
                                 for (std::size_t j = 0; j < n; ++j)
                                   if (index[j] >= 0)
                                     (*g)[row * c + std::size_t(index[j])] += self.grad[row * n + j];
                           });
}

/// Broadcasts column s of `a` across segment s of length n.
template <class Real>
Tensor<Real> repeat_segments(const Tensor<Real>& a, std::size_t n) {
  detail::check_rank2("repeat_segments", a.shape());
  const std::size_t r = a.rows(), segs = a.cols();
  Buffer<Real> out(r * segs * n);
  const auto& av = a.node()->value;
  for (std::size_t row = 0; row < r; ++row)
    for (std::size_t s = 0; s < segs; ++s)
      std::fill_n(out.begin() + std::ptrdiff_t(row * segs * n + s * n), n, av[row * segs + s]);
  return make_result<Real>("repeat_segments", Shape{r, segs * n}, std::move(out), {&a},
                           [r, segs, n](Node<Real>& self) {
                             if (auto* g = grad_sink(self, 0))
                               for (std::size_t row = 0; row < r; ++row)
                                 for (std::size_t s = 0; s < segs; ++s) {
                                   Real acc = 0;
                                   for (std::size_t t = 0; t < n; ++t)
                                     acc += self.grad[row * segs * n + s * n + t];
                                   (*g)[row * segs + s] += acc;
                                 }
                           });
}

// --------------------------------------------------------------- softmax

/// Softmax along each row within every column segment of length n. Masked
/// columns get logit offset kMaskedLogit and therefore exactly zero mass.
template <class Real>
Tensor<Real> segment_softmax(const Tensor<Real>& x, const Mask& mask, std::size_t n) {
  detail::check_rank2("segment_softmax", x.shape());
  const std::size_t r = x.rows(), c = x.cols();
  detail::check_segments("segment_softmax", c, n);
  detail::check_mask("segment_softmax", mask, c);
  const std::size_t segs = c / n;
  for (std::size_t s = 0; s < segs && !mask.empty(); ++s) {
    bool any = false;
    for (std::size_t t = 0; t < n; ++t) any = any || mask[s * n + t];
    if (!any)
      fail(Error::Kind::validation, "softmax over a fully masked segment (" + std::to_string(s) + ")");
  }
  Buffer<Real> out(r * c);
  const auto& xv = x.node()->value;
  for (std::size_t row = 0; row < r; ++row)
    for (std::size_t s = 0; s < segs; ++s) {
      const std::size_t base = row * c + s * n;
      Real mx = -std::numeric_limits<Real>::infinity();
      for (std::size_t t = 0; t < n; ++t) {
        Real v = xv[base + t] + ((mask.empty() || mask[s * n + t]) ? Real(0) : Real(kMaskedLogit));
        out[base + t] = v;
        mx = std::max(mx, v);
      }
      Real z = 0;
      for (std::size_t t = 0; t < n; ++t) {
        out[base + t] = std::exp(out[base + t] - mx);
        z += out[base + t];
      }
      for (std::size_t t = 0; t < n; ++t) out[base + t] /= z;
    }
  auto saved = std::make_shared<Buffer<Real>>(out);
  return make_result<Real>("segment_softmax", x.shape(), std::move(out), {&x},
                           [saved, r, c, n, segs](Node<Real>& self) {
                             auto* g = grad_sink(self, 0);
                             if (!g) return;
                             const auto& p = *saved;
                             for (std::size_t row = 0; row < r; ++row)
                               for (std::size_t s = 0; s < segs; ++s) {
                                 const std::size_t base = row * c + s * n;
                                 Real dot = 0;
                                 for (std::size_t t = 0; t < n; ++t) dot += p[base + t] * self.grad[base + t];
                                 for (std::size_t t = 0; t < n; ++t)
                                   (*g)[base + t] += p[base + t] * (self.grad[base + t] - dot);
                               }
                           });
}

// -------------------------------------------------------------- max-pool

/// Max aggregation over column ranges: output column j is the elementwise
/// max over unmasked input columns in ranges[j]; an empty set yields zeros.
template <class Real>
Tensor<Real> pool_max(const Tensor<Real>& x, const std::vector<ColumnRange>& ranges,
                      const Mask& mask = {}) {
  detail::check_rank2("pool_max", x.shape());
  const std::size_t r = x.rows(), c = x.cols(), n = ranges.size();
  detail::check_mask("pool_max", mask, c);
  for (const auto& [lo, hi] : ranges)
    if (lo > hi || hi > c) fail(Error::Kind::shape, "pool_max: range out of bounds");
  Buffer<Real> out(r * n, Real(0));
  auto arg = std::make_shared<std::vector<long>>(r * n, -1);
  const auto& xv = x.node()->value;
  for (std::size_t row = 0; row < r; ++row)
    for (std::size_t j = 0; j < n; ++j) {
      long best = -1;
      for (std::size_t t = ranges[j].first; t < ranges[j].second; ++t) {
        if (!mask.empty() && !mask[t]) continue;
        if (best < 0 || xv[row * c + t] > xv[row * c + std::size_t(best)]) best = long(t);
      }
      (*arg)[row * n + j] = best;
      if (best >= 0) out[row * n + j] = xv[row * c + std::size_t(best)];
    }
  return make_result<Real>("pool_max", Shape{r, n}, std::move(out), {&x}, [arg, r, c, n](Node<Real>& self) {
    if (auto* g = grad_sink(self, 0))
      for (std::size_t row = 0; row < r; ++row)
        for (std::size_t j = 0; j < n; ++j)
          if (long a = (*arg)[row * n + j]; a >= 0) (*g)[row * c + std::size_t(a)] += self.grad[row * n + j];
  });
}

/// Running max along each segment of n columns over unmasked entries:
/// column t holds the max over [start, t] (or [t, end] when `reverse`).
/// Positions with no unmasked entry in their window are zero. Ties go to
/// the earliest column, as in pool_max.
template <class Real>
Tensor<Real> cumulative_max(const Tensor<Real>& x, const Mask& mask, std::size_t n, bool reverse) {
  detail::check_rank2("cumulative_max", x.shape());
  const std::size_t r = x.rows(), c = x.cols();
  detail::check_segments("cumulative_max", c, n);
  detail::check_mask("cumulative_max", mask, c);
  Buffer<Real> out(r * c);
  auto arg = std::make_shared<std::vector<long>>(r * c);
  const auto& xv = x.node()->value;
  for (std::size_t row = 0; row < r; ++row)
    for (std::size_t s = 0; s < c / n; ++s) {
      long best = -1;
      for (std::size_t step = 0; step < n; ++step) {
        const std::size_t t = s * n + (reverse ? n - 1 - step : step);
        const std::size_t i = row * c + t;
        if (mask.empty() || mask[t]) {
          if (best < 0) best = long(t);
          else if (reverse ? xv[i] >= xv[row * c + std::size_t(best)] : xv[i] > xv[row * c + std::size_t(best)])
            best = long(t);
        }
        (*arg)[i] = best;
        out[i] = best >= 0 ? xv[row * c + std::size_t(best)] : Real(0);
      }
    }
  return make_result<Real>("cumulative_max", x.shape(), std::move(out), {&x}, [arg, r, c](Node<Real>& self) {
    if (auto* g = grad_sink(self, 0))
      for (std::size_t row = 0; row < r; ++row)
        for (std::size_t j = 0; j < c; ++j)
          if (long a = (*arg)[row * c + j]; a >= 0) (*g)[row * c + std::size_t(a)] += self.grad[row * c + j];
  });
}

// ----------------------------------------------------------- convolution

namespace detail {

template <class Real>
Tensor<Real> conv2d_impl(const char* op, const Tensor<Real>& x, const Tensor<Real>& weight,
                         const Tensor<Real>& bias, std::size_t c_out, std::size_t c_in,
                         std::size_t kh, std::size_t kw, std::size_t height, std::size_t width) {
  check_rank2(op, x.shape());
  if (kh % 2 == 0 || kw % 2 == 0) fail(Error::Kind::shape, std::string(op) + ": kernel sizes must be odd");
  if (x.rows() != c_in)
    fail(Error::Kind::shape, std::string(op) + ": input has " + std::to_string(x.rows()) +
                                 " channels, weight expects " + std::to_string(c_in));
  const std::size_t plane = height * width;
  check_segments(op, x.cols(), plane);
  const std::size_t images = x.cols() / plane, cols = x.cols();
  const bool has_bias = bias.defined();
  if (has_bias && bias.size() != c_out) fail(Error::Kind::shape, std::string(op) + ": bias size");
  const long ph = long(kh / 2), pw = long(kw / 2);

  // Lowered to a GEMM over an im2col matrix of (C_in*kh*kw) x cols; a 1x1
  // kernel uses the input directly.
  const std::size_t taps = c_in * kh * kw;
  const bool pointwise = kh == 1 && kw == 1;
  auto im2col = [=](const Buffer<Real>& xv) {
    auto col = std::make_shared<Buffer<Real>>(taps * cols, Real(0));
    for (std::size_t ci = 0; ci < c_in; ++ci)
      for (std::size_t ky = 0; ky < kh; ++ky)
        for (std::size_t kx = 0; kx < kw; ++kx) {
          Real* dst = col->data() + ((ci * kh + ky) * kw + kx) * cols;
          const long dy = long(ky) - ph, dx = long(kx) - pw;
          const long x0 = std::max(0L, -dx), x1 = std::min(long(width), long(width) - dx);
          for (std::size_t im = 0; im < images; ++im)
            for (long y = 0; y < long(height); ++y) {
              const long sy = y + dy;
              if (sy < 0 || sy >= long(height) || x0 >= x1) continue;
              const Real* src = xv.data() + ci * cols + im * plane + std::size_t(sy) * width + dx;
              Real* d = dst + im * plane + std::size_t(y) * width;
              for (long xx = x0; xx < x1; ++xx) d[xx] = src[xx];
            }
        }
    return col;
  };
  auto col2im = [=](const Buffer<Real>& dcol, Buffer<Real>& gx) {
    for (std::size_t ci = 0; ci < c_in; ++ci)
      for (std::size_t ky = 0; ky < kh; ++ky)
        for (std::size_t kx = 0; kx < kw; ++kx) {
          const Real* src = dcol.data() + ((ci * kh + ky) * kw + kx) * cols;
          const long dy = long(ky) - ph, dx = long(kx) - pw;
          const long x0 = std::max(0L, -dx), x1 = std::min(long(width), long(width) - dx);
          for (std::size_t im = 0; im < images; ++im)
            for (long y = 0; y < long(height); ++y) {
              const long sy = y + dy;
              if (sy < 0 || sy >= long(height) || x0 >= x1) continue;
              Real* d = gx.data() + ci * cols + im * plane + std::size_t(sy) * width + dx;
              const Real* g = src + im * plane + std::size_t(y) * width;
              for (long xx = x0; xx < x1; ++xx) d[xx] += g[xx];
            }
        }
  };

  const auto& xv = x.node()->value;
  std::shared_ptr<Buffer<Real>> col = pointwise ? nullptr : im2col(xv);
  Buffer<Real> out(c_out * cols);
  {
    auto O = map(out, c_out, cols);
    auto W = cmap(weight.node()->value, c_out, taps);
    O.noalias() = W * (pointwise ? cmap(xv, taps, cols) : cmap(*col, taps, cols));
  }
  if (has_bias)
    for (std::size_t co = 0; co < c_out; ++co) {
      const Real b = bias.node()->value[co];
      for (std::size_t j = 0; j < cols; ++j) out[co * cols + j] += b;
    }
  std::vector<const Tensor<Real>*> inputs{&x, &weight};
  if (has_bias) inputs.push_back(&bias);
  return make_result<Real>(op, Shape{c_out, cols}, std::move(out), inputs, [=](Node<Real>& self) {
    auto G = cmap(self.grad, c_out, cols);
    const auto& wv = self.inputs[1]->value;
    if (auto* gw = grad_sink(self, 1)) {
      auto X = pointwise ? cmap(self.inputs[0]->value, taps, cols) : cmap(*col, taps, cols);
      map(*gw, c_out, taps).noalias() += G * X.transpose();
    }
    if (auto* gx = grad_sink(self, 0)) {
      if (pointwise) {
        map(*gx, taps, cols).noalias() += cmap(wv, c_out, taps).transpose() * G;
      } else {
        Buffer<Real> dcol(taps * cols);
        map(dcol, taps, cols).noalias() = cmap(wv, c_out, taps).transpose() * G;
        col2im(dcol, *gx);
      }
    }
    if (has_bias)
      if (auto* gb = grad_sink(self, 2))
        for (std::size_t co = 0; co < c_out; ++co)
          for (std::size_t j = 0; j < cols; ++j) (*gb)[co] += self.grad[co * cols + j];
  });
}

}  // namespace detail

/// 2D convolution with zero "same" padding. `x` is C_in x (images*H*W),
/// `weight` has shape {C_out, C_in, kh, kw}; `bias` may be undefined.
template <class Real>
Tensor<Real> conv2d(const Tensor<Real>& x, const Tensor<Real>& weight, const Tensor<Real>& bias,
                    std::size_t height, std::size_t width) {
  const auto& ws = weight.shape();
  if (ws.size() != 4) fail(Error::Kind::shape, "conv2d: weight must be {C_out, C_in, kh, kw}");
  return detail::conv2d_impl("conv2d", x, weight, bias, ws[0], ws[1], ws[2], ws[3], height, width);
}

/// 1D convolution along each segment of `length` columns, zero padded.
/// `weight` has shape {C_out, C_in, k}.
template <class Real>
Tensor<Real> conv1d(const Tensor<Real>& x, const Tensor<Real>& weight, const Tensor<Real>& bias,
                    std::size_t length) {
  const auto& ws = weight.shape();
  if (ws.size() != 3) fail(Error::Kind::shape, "conv1d: weight must be {C_out, C_in, k}");
  return detail::conv2d_impl("conv1d", x, weight, bias, ws[0], ws[1], 1, ws[2], 1, length);
}

// ---------------------------------------------------------- normalisation

/// Layer normalisation of every column over its rows.
template <class Real>
Tensor<Real> layer_norm(const Tensor<Real>& x, const Tensor<Real>& gamma, const Tensor<Real>& beta,
                        Real eps = Real(1e-5)) {
  detail::check_rank2("layer_norm", x.shape());
  const std::size_t r = x.rows(), c = x.cols();
  if (gamma.size() != r || beta.size() != r) fail(Error::Kind::shape, "layer_norm: affine size");
  const auto& xv = x.node()->value;
  std::vector<double> mu(c, 0.0), var(c, 0.0);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) mu[j] += xv[i * c + j];
  for (auto& m : mu) m /= double(r);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) {
      const double d = xv[i * c + j] - mu[j];
      var[j] += d * d;
    }
  auto rstd = std::make_shared<Buffer<Real>>(c);
  for (std::size_t j = 0; j < c; ++j) (*rstd)[j] = Real(1.0 / std::sqrt(var[j] / double(r) + double(eps)));
  auto xhat = std::make_shared<Buffer<Real>>(r * c);
  Buffer<Real> out(r * c);
  const auto& gv = gamma.node()->value;
  const auto& bv = beta.node()->value;
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) {
      const Real h = Real(xv[i * c + j] - mu[j]) * (*rstd)[j];
      (*xhat)[i * c + j] = h;
      out[i * c + j] = gv[i] * h + bv[i];
    }
  return make_result<Real>("layer_norm", x.shape(), std::move(out), {&x, &gamma, &beta},
                           [=](Node<Real>& self) {
                             const auto& gv = self.inputs[1]->value;
                             const Real* go = self.grad.data();
                             if (auto* gg = grad_sink(self, 1))
                               for (std::size_t i = 0; i < r; ++i)
                                 for (std::size_t j = 0; j < c; ++j) (*gg)[i] += go[i * c + j] * (*xhat)[i * c + j];
                             if (auto* gb = grad_sink(self, 2))
                               for (std::size_t i = 0; i < r; ++i)
                                 for (std::size_t j = 0; j < c; ++j) (*gb)[i] += go[i * c + j];
                             auto* gx = grad_sink(self, 0);
                             if (!gx) return;
                             Buffer<Real> s1(c, Real(0)), s2(c, Real(0));
                             for (std::size_t i = 0; i < r; ++i)
                               for (std::size_t j = 0; j < c; ++j) {
                                 const Real d = go[i * c + j] * gv[i];
                                 s1[j] += d;
                                 s2[j] += d * (*xhat)[i * c + j];
                               }
                             const Real inv_r = Real(1) / Real(r);
                             for (std::size_t i = 0; i < r; ++i)
                               for (std::size_t j = 0; j < c; ++j) {
                                 const Real d = go[i * c + j] * gv[i];
                                 (*gx)[i * c + j] +=
                                     (*rstd)[j] * (d - inv_r * s1[j] - (*xhat)[i * c + j] * inv_r * s2[j]);
                               }
                           });
}

/// Inverted dropout; identity when not training.
template <class Real>
Tensor<Real> dropout(const Tensor<Real>& x, double rate, bool training, std::mt19937_64& rng) {
  if (!training || rate <= 0.0) return x;
  if (rate >= 1.0) fail(Error::Kind::validation, "dropout rate must be < 1");
  const Real keep_scale = Real(1.0 / (1.0 - rate));
  auto keep = std::make_shared<Buffer<Real>>(x.size());
  Buffer<Real> out(x.node()->value);
  // One draw from the caller's engine seeds a splitmix64 stream for the mask.
  std::uint64_t state = rng();
  const auto threshold = std::uint64_t(rate * 0x1.0p53);
  for (std::size_t i = 0; i < out.size(); ++i) {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    z ^= z >> 31;
    (*keep)[i] = (z >> 11) < threshold ? Real(0) : keep_scale;
    out[i] *= (*keep)[i];
  }
  return make_result<Real>("dropout", x.shape(), std::move(out), {&x}, [keep](Node<Real>& self) {
    if (auto* g = grad_sink(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) (*g)[i] += self.grad[i] * (*keep)[i];
  });
}

// ------------------------------------------------------------------ LSTM

/// Unidirectional LSTM over every segment of n columns, zero initial state.
/// Gate order in the stacked weights is (input, forget, cell, output).
/// `x` is D x (S*n); w_ih is 4H x D, w_hh is 4H x H, bias has 4H entries.
template <class Real>
Tensor<Real> lstm(const Tensor<Real>& x, const Tensor<Real>& w_ih, const Tensor<Real>& w_hh,
                  const Tensor<Real>& bias, std::size_t n) {
  using namespace detail;
  check_rank2("lstm", x.shape());
  const std::size_t in_dim = x.rows(), cols = x.cols();
  check_segments("lstm", cols, n);
  const std::size_t segs = cols / n;
  const std::size_t H = w_hh.cols();
  if (w_hh.rows() != 4 * H || w_ih.rows() != 4 * H || w_ih.cols() != in_dim || bias.size() != 4 * H)
    fail(Error::Kind::shape, "lstm: weight shapes do not match input " + shape_str(x.shape()));

  // Time-major copy: column t*S + s holds step t of sample s.
  auto x_tm = std::make_shared<Buffer<Real>>(in_dim * cols);
  const auto& xv = x.node()->value;
  for (std::size_t d = 0; d < in_dim; ++d)
    for (std::size_t s = 0; s < segs; ++s)
      for (std::size_t t = 0; t < n; ++t) (*x_tm)[d * cols + t * segs + s] = xv[d * cols + s * n + t];

  // Gate activations, cell states and hidden states, all time-major.
  auto gates = std::make_shared<Buffer<Real>>(4 * H * cols);
  auto cell = std::make_shared<Buffer<Real>>(H * cols);
  auto hidden = std::make_shared<Buffer<Real>>(H * cols);
  auto G = map(*gates, 4 * H, cols);
  G.noalias() = cmap(w_ih.node()->value, 4 * H, in_dim) * cmap(*x_tm, in_dim, cols);
  const auto& bv = bias.node()->value;
  for (std::size_t r = 0; r < 4 * H; ++r) G.row(Eigen::Index(r)).array() += bv[r];
  auto Whh = cmap(w_hh.node()->value, 4 * H, H);
  for (std::size_t t = 0; t < n; ++t) {
    auto Gt = map(gates->data() + t * segs, 4 * H, segs, cols);
    if (t > 0) Gt.noalias() += Whh * cmap(hidden->data() + (t - 1) * segs, H, segs, cols);
    auto gate = [&](std::size_t k) { return map(gates->data() + k * H * cols + t * segs, H, segs, cols).array(); };
    auto gi = gate(0), gf = gate(1), gg = gate(2), go = gate(3);
    gi = gi.logistic();
    gf = gf.logistic();
    gg = gg.tanh();
    go = go.logistic();
    auto c = map(cell->data() + t * segs, H, segs, cols).array();
    if (t > 0) c = gf * map(cell->data() + (t - 1) * segs, H, segs, cols).array() + gi * gg;
    else c = gi * gg;
    map(hidden->data() + t * segs, H, segs, cols).array() = go * c.tanh();
  }
  Buffer<Real> out(H * cols);
  for (std::size_t h = 0; h < H; ++h)
    for (std::size_t s = 0; s < segs; ++s)
      for (std::size_t t = 0; t < n; ++t) out[h * cols + s * n + t] = (*hidden)[h * cols + t * segs + s];

  return make_result<Real>(
      "lstm", Shape{H, cols}, std::move(out), {&x, &w_ih, &w_hh, &bias},
      [=](Node<Real>& self) {
        Buffer<Real> dgates(4 * H * cols);
        Buffer<Real> dh(H * segs, Real(0)), dc(H * segs, Real(0)), g_tm(H * cols);
        for (std::size_t h = 0; h < H; ++h)
          for (std::size_t s = 0; s < segs; ++s)
            for (std::size_t t = 0; t < n; ++t) g_tm[h * cols + t * segs + s] = self.grad[h * cols + s * n + t];
        auto Whh = cmap(self.inputs[2]->value, 4 * H, H);
        auto DH = map(dh, H, segs).array();
        auto DC = map(dc, H, segs).array();
        for (std::size_t tt = n; tt-- > 0;) {
          auto gate = [&](std::size_t k) {
            return cmap(gates->data() + k * H * cols + tt * segs, H, segs, cols).array();
          };
          auto dgate = [&](std::size_t k) { return map(dgates.data() + k * H * cols + tt * segs, H, segs, cols).array(); };
          const auto i = gate(0), f = gate(1), g = gate(2), o = gate(3);
          const auto tc = cmap(cell->data() + tt * segs, H, segs, cols).array().tanh().eval();
          DH += cmap(g_tm.data() + tt * segs, H, segs, cols).array();
          DC += DH * o * (Real(1) - tc * tc);
          dgate(0) = DC * g * i * (Real(1) - i);
          if (tt > 0)
            dgate(1) = DC * cmap(cell->data() + (tt - 1) * segs, H, segs, cols).array() * f * (Real(1) - f);
          else
            dgate(1).setZero();
          dgate(2) = DC * i * (Real(1) - g * g);
          dgate(3) = DH * tc * o * (Real(1) - o);
          DC *= f;
          if (tt > 0)
            map(dh, H, segs).noalias() = Whh.transpose() * cmap(dgates.data() + tt * segs, 4 * H, segs, cols);
        }
        auto dG = cmap(dgates, 4 * H, cols);
        if (auto* gx = grad_sink(self, 0)) {
          Buffer<Real> dx_tm(in_dim * cols);
          map(dx_tm, in_dim, cols).noalias() = cmap(self.inputs[1]->value, 4 * H, in_dim).transpose() * dG;
          for (std::size_t d = 0; d < in_dim; ++d)
            for (std::size_t s = 0; s < segs; ++s)
              for (std::size_t t = 0; t < n; ++t) (*gx)[d * cols + s * n + t] += dx_tm[d * cols + t * segs + s];
        }
        if (auto* gw = grad_sink(self, 1))
          map(*gw, 4 * H, in_dim).noalias() += dG * cmap(*x_tm, in_dim, cols).transpose();
        if (auto* gw = grad_sink(self, 2))
          if (n > 1)  // h_{t-1} pairs with dG_t for t >= 1
            map(*gw, 4 * H, H).noalias() += cmap(dgates.data() + segs, 4 * H, cols - segs, cols) *
                                            cmap(hidden->data(), H, cols - segs, cols).transpose();
        if (auto* gb = grad_sink(self, 3))
          for (std::size_t r = 0; r < 4 * H; ++r) (*gb)[r] += dG.row(Eigen::Index(r)).sum();
      });
}

// ------------------------------------------------------------- attention

/// Multi-head scaled dot-product attention over packed segments.
/// q is D x (S*n_t); k, v are D x (S*n_r). Head h uses rows [h*D/H, (h+1)*D/H)
/// and scores scaled by 1/sqrt(D/H). Returns the concatenated head outputs.
template <class Real>
Tensor<Real> multihead_attention(const Tensor<Real>& q, const Tensor<Real>& k, const Tensor<Real>& v,
                                 const Mask& ref_mask, std::size_t heads, std::size_t n_t,
                                 std::size_t n_r) {
  using namespace detail;
  check_rank2("attention", q.shape());
  const std::size_t D = q.rows();
  if (heads == 0 || D % heads != 0)
    fail(Error::Kind::shape, "attention: width " + std::to_string(D) + " not divisible by " +
                                 std::to_string(heads) + " heads");
  if (k.rows() != D || v.rows() != D || k.cols() != v.cols())
    fail(Error::Kind::shape, "attention: width mismatch between target and reference");
  check_segments("attention", q.cols(), n_t);
  check_segments("attention", k.cols(), n_r);
  const std::size_t segs = q.cols() / n_t;
  if (k.cols() / n_r != segs) fail(Error::Kind::shape, "attention: segment count mismatch");
  check_mask("attention", ref_mask, k.cols());
  for (std::size_t s = 0; s < segs && !ref_mask.empty(); ++s) {
    bool any = false;
    for (std::size_t j = 0; j < n_r; ++j) any = any || ref_mask[s * n_r + j];
    if (!any) fail(Error::Kind::validation, "attention: reference has no attendable positions");
  }
  const std::size_t dh = D / heads, qc = q.cols(), kc = k.cols();
  const Real inv_scale = Real(1) / std::sqrt(Real(dh));
  const std::size_t block = n_t * n_r;
  auto probs = std::make_shared<Buffer<Real>>(segs * heads * block);
  Buffer<Real> out(D * qc);
  RowMatrix<Real> bias_row = RowMatrix<Real>::Zero(1, Eigen::Index(n_r));
  for (std::size_t s = 0; s < segs; ++s) {
    for (std::size_t j = 0; j < n_r && !ref_mask.empty(); ++j)
      bias_row(0, Eigen::Index(j)) = ref_mask[s * n_r + j] ? Real(0) : Real(kMaskedLogit);
    for (std::size_t h = 0; h < heads; ++h) {
      auto Q = cmap(q.node()->value.data() + h * dh * qc + s * n_t, dh, n_t, qc);
      auto K = cmap(k.node()->value.data() + h * dh * kc + s * n_r, dh, n_r, kc);
      auto V = cmap(v.node()->value.data() + h * dh * kc + s * n_r, dh, n_r, kc);
      auto P = map(probs->data() + (s * heads + h) * block, n_t, n_r, n_r);
      P.noalias() = (Q.transpose() * K) * inv_scale;
      P.rowwise() += bias_row.row(0);
      auto mx = P.rowwise().maxCoeff().eval();
      P.colwise() -= mx;
      P = P.array().exp();
      auto z = P.rowwise().sum().eval();
      P.array().colwise() /= z.array();
      auto O = map(out.data() + h * dh * qc + s * n_t, dh, n_t, qc);
      O.noalias() = V * P.transpose();
    }
  }
  return make_result<Real>(
      "attention", Shape{D, qc}, std::move(out), {&q, &k, &v},
      [=](Node<Real>& self) {
        auto* gq = grad_sink(self, 0);
        auto* gk = grad_sink(self, 1);
        auto* gv = grad_sink(self, 2);
        RowMatrix<Real> dP{Eigen::Index(n_t), Eigen::Index(n_r)};
        for (std::size_t s = 0; s < segs; ++s)
          for (std::size_t h = 0; h < heads; ++h) {
            auto Q = cmap(self.inputs[0]->value.data() + h * dh * qc + s * n_t, dh, n_t, qc);
            auto K = cmap(self.inputs[1]->value.data() + h * dh * kc + s * n_r, dh, n_r, kc);
            auto V = cmap(self.inputs[2]->value.data() + h * dh * kc + s * n_r, dh, n_r, kc);
            auto P = cmap(probs->data() + (s * heads + h) * block, n_t, n_r, n_r);
            auto G = cmap(self.grad.data() + h * dh * qc + s * n_t, dh, n_t, qc);
            if (gv) map(gv->data() + h * dh * kc + s * n_r, dh, n_r, kc).noalias() += G * P;
            if (!gq && !gk) continue;
            dP.noalias() = G.transpose() * V;
            auto rowdot = (dP.array() * P.array()).rowwise().sum().eval();
            dP = (P.array() * (dP.array().colwise() - rowdot)) * inv_scale;
            if (gq) map(gq->data() + h * dh * qc + s * n_t, dh, n_t, qc).noalias() += K * dP.transpose();
            if (gk) map(gk->data() + h * dh * kc + s * n_r, dh, n_r, kc).noalias() += Q * dP;
          }
      });
}

// ---------------------------------------------------------- loss kernels

/// Mean over segments of -log(sum of p inside the segment's inclusive index
/// range). Sums are taken in 64-bit and clamped at 1e-12; `clamped` counts
/// segments where the clamp engaged.
template <class Real>
Tensor<Real> log_mass_loss(const Tensor<Real>& p, const std::vector<ColumnRange>& inclusive_sets,
                           std::size_t n, std::size_t* clamped = nullptr) {
  const std::size_t c = p.cols();
  if (p.rows() != 1) fail(Error::Kind::shape, "log_mass_loss: expects a single row");
  detail::check_segments("log_mass_loss", c, n);
  const std::size_t segs = c / n;
  if (inclusive_sets.size() != segs) fail(Error::Kind::shape, "log_mass_loss: one set per segment");
  const auto& pv = p.node()->value;
  auto inv_mass = std::make_shared<std::vector<double>>(segs, 0.0);
  double total = 0;
  std::size_t clamp_count = 0;
  for (std::size_t s = 0; s < segs; ++s) {
    const auto [lo, hi] = inclusive_sets[s];
    if (lo > hi || hi >= n) fail(Error::Kind::validation, "log_mass_loss: candidate set outside segment");
    double mass = 0.0;
    for (std::size_t t = lo; t <= hi; ++t) mass += double(pv[s * n + t]);
    if (mass < 1e-12) {
      ++clamp_count;
      mass = 1e-12;
    } else {
      (*inv_mass)[s] = 1.0 / mass;
    }
    total += -std::log(mass);
  }
  if (clamped) *clamped = clamp_count;
  return make_result<Real>("log_mass_loss", Shape{1}, Buffer<Real>{Real(total / double(segs))}, {&p},
                           [=](Node<Real>& self) {
                             auto* g = grad_sink(self, 0);
                             if (!g) return;
                             const double up = double(self.grad[0]) / double(segs);
                             for (std::size_t s = 0; s < segs; ++s) {
                               const auto [lo, hi] = inclusive_sets[s];
                               for (std::size_t t = lo; t <= hi; ++t)
                                 (*g)[s * n + t] += Real(-up * (*inv_mass)[s]);
                             }
                           });
}

/// Mean over segments of the cross-entropy -sum_t y_t log p_t against soft
/// targets (probabilities clamped at 1e-12).
template <class Real>
Tensor<Real> soft_cross_entropy(const Tensor<Real>& p, const std::vector<Real>& target, std::size_t n) {
  const std::size_t c = p.cols();
  if (p.rows() != 1 || target.size() != c) fail(Error::Kind::shape, "soft_cross_entropy: shape");
  detail::check_segments("soft_cross_entropy", c, n);
  const std::size_t segs = c / n;
  const auto& pv = p.node()->value;
  double total = 0;
  for (std::size_t i = 0; i < c; ++i)
    if (target[i] != Real(0)) total -= double(target[i]) * std::log(std::max(double(pv[i]), 1e-12));
  return make_result<Real>("soft_cross_entropy", Shape{1}, Buffer<Real>{Real(total / double(segs))},
                           {&p}, [=](Node<Real>& self) {
                             auto* g = grad_sink(self, 0);
                             if (!g) return;
                             const auto& pv = self.inputs[0]->value;
                             const double up = double(self.grad[0]) / double(segs);
                             for (std::size_t i = 0; i < c; ++i)
                               if (target[i] != Real(0) && double(pv[i]) > 1e-12)
                                 (*g)[i] += Real(-up * double(target[i]) / double(pv[i]));
                           });
}

/// Binary cross-entropy between soft targets y and sigmoid(z): per segment
/// the mean over unmasked entries, then the mean over segments.
template <class Real>
Tensor<Real> bce_with_logits(const Tensor<Real>& z, const std::vector<Real>& target, const Mask& mask,
                             std::size_t n) {
  const std::size_t c = z.cols();
  if (z.rows() != 1 || target.size() != c) fail(Error::Kind::shape, "bce_with_logits: shape");
  detail::check_segments("bce_with_logits", c, n);
  detail::check_mask("bce_with_logits", mask, c);
  const std::size_t segs = c / n;
  auto weight = std::make_shared<std::vector<double>>(c, 0.0);
  for (std::size_t s = 0; s < segs; ++s) {
    std::size_t count = 0;
    for (std::size_t t = 0; t < n; ++t) count += (mask.empty() || mask[s * n + t]) ? 1 : 0;
    if (count == 0) fail(Error::Kind::validation, "bce_with_logits: segment without unmasked entries");
    for (std::size_t t = 0; t < n; ++t)
      if (mask.empty() || mask[s * n + t]) (*weight)[s * n + t] = 1.0 / double(count) / double(segs);
  }
  const auto& zv = z.node()->value;
  double total = 0;
  for (std::size_t i = 0; i < c; ++i) {
    if ((*weight)[i] == 0.0) continue;
    const double x = zv[i], y = target[i];
    total += (*weight)[i] * (std::max(x, 0.0) - y * x + std::log1p(std::exp(-std::abs(x))));
  }
  return make_result<Real>("bce_with_logits", Shape{1}, Buffer<Real>{Real(total)}, {&z},
                           [=](Node<Real>& self) {
                             auto* g = grad_sink(self, 0);
                             if (!g) return;
                             const auto& zv = self.inputs[0]->value;
                             for (std::size_t i = 0; i < c; ++i)
                               if ((*weight)[i] != 0.0)
                                 (*g)[i] += Real(double(self.grad[0]) * (*weight)[i] *
                                                 (detail::sigmoid(double(zv[i])) - double(target[i])));
                           });
}

}  // namespace emb
