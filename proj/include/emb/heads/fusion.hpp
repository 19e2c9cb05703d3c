#pragma once

#include <cmath>
#include <string>

#include "emb/encoders/attention.hpp"

namespace emb {

/// Context-query fusion H(X, Q) for frames or proposal segments.
template <class Real>
struct ContextQueryFusion {
  Dense<Real> visual_proj, query_proj, out;

  static ContextQueryFusion create(ParameterSet<Real>& params, const std::string& name, std::size_t width,
                                   std::mt19937_64& rng) {
    ContextQueryFusion f;
    f.visual_proj = Dense<Real>::create(params, name + ".visual_proj", width, width, rng);
    f.query_proj = Dense<Real>::create(params, name + ".query_proj", width, width, rng);
    f.out = Dense<Real>::create(params, name + ".out", 4 * width, width, rng);
    return f;
  }
};

/// Intermediate products of the fusion, kept for inspection in tests.
template <class Real>
struct FusionTrace {
  Tensor<Real> row_attention;  // A^r: N x (S*L), softmax over words
  Tensor<Real> col_attention;  // A^c transposed: L x (S*N), softmax over visual positions
  Tensor<Real> v2q;            // D x (S*N)
  Tensor<Real> q2v;            // D x (S*N)
  Tensor<Real> fused;          // D x (S*N)
};

template <class Real>
FusionTrace<Real> fuse_context_query_traced(const ContextQueryFusion<Real>& f, const Sequence<Real>& visual,
                                            const Sequence<Real>& query) {
  if (visual.width() != query.width()) fail(Error::Kind::shape, "fusion: width mismatch");
  const std::size_t segs = visual.segments();
  if (query.segments() != segs) fail(Error::Kind::shape, "fusion: batch size mismatch");
  const Real inv = Real(1) / std::sqrt(Real(visual.width()));
  Tensor<Real> pv = f.visual_proj(visual.x);
  Tensor<Real> pq = f.query_proj(query.x);
  FusionTrace<Real> t;
  t.row_attention = segment_softmax(scale(batched_matmul(pv, pq, segs, true, false), inv), query.mask, query.length);
  t.col_attention =
      segment_softmax(scale(batched_matmul(pq, pv, segs, true, false), inv), visual.mask, visual.length);
  t.v2q = batched_matmul(query.x, t.row_attention, segs, false, true);
  // (X A^r) A^c^T, associated so the inner product is D x L.
  t.q2v = batched_matmul(batched_matmul(visual.x, t.row_attention, segs), t.col_attention, segs);
  Tensor<Real> cat = concat_rows<Real>({visual.x, t.v2q, mul(visual.x, t.v2q), mul(visual.x, t.q2v)});
  t.fused = mask_columns(f.out(cat), visual.mask);
  return t;
}

template <class Real>
Tensor<Real> fuse_context_query(const ContextQueryFusion<Real>& f, const Sequence<Real>& visual,
                                const Sequence<Real>& query) {
  return fuse_context_query_traced(f, visual, query).fused;
}

}  // namespace emb
