#pragma once

#include <algorithm>
#include <chrono>
#include <functional>
#include <numeric>
#include <optional>
#include <ostream>
#include <random>
#include <vector>

#include "emb/data/batch.hpp"
#include "emb/eval/config.hpp"
#include "emb/eval/metrics.hpp"
#include "emb/eval/supervision.hpp"
#include "emb/heads/losses.hpp"
#include "emb/model/emb_model.hpp"
#include "emb/tensor/optim.hpp"

namespace emb {

/// Independent 64-bit seed for stream `stream` of a run seeded with `seed`.
inline std::uint64_t seed_stream(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

struct RunSpec {
  TrainConfig train;
  LossWeights loss;
  ThresholdSchedule schedule;
  SupervisionStrategy supervision;
  std::uint64_t seed = 1;

  bool trains_alignment() const { return supervision.variant == Strategy::elastic || train.always_align; }
};

inline RunSpec make_run_spec(const ExperimentConfig& c, Strategy strategy, std::uint64_t seed) {
  RunSpec r{c.train, c.loss, c.schedule, c.supervision, seed};
  r.supervision.variant = strategy;
  return r;
}

/// Per-epoch means over batches.
struct EpochStats {
  std::size_t epoch = 0;
  double tau = 1.0;
  double lr_scale = 1.0;
  double total = 0.0, bound = 0.0, align = 0.0, highlight = 0.0;
  double pseudo_rate = 0.0;  // fraction of samples whose pseudo boundary came from a proposal
  std::size_t clamped = 0;   // log-mass terms clamped at the floor
};

template <class Real>
struct BatchEvent {
  std::size_t epoch;
  std::size_t batch;
  const Batch<Real>& data;
  const Supervision& supervision;
};

template <class Real>
using BatchObserver = std::function<void(const BatchEvent<Real>&)>;

namespace detail {

template <class Real>
std::vector<Real> to_real(const std::vector<double>& v) {
  return std::vector<Real>(v.begin(), v.end());
}

inline std::vector<std::vector<std::size_t>> batches_of(const std::vector<std::size_t>& order, std::size_t size) {
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t i = 0; i < order.size(); i += size)
    out.emplace_back(order.begin() + long(i), order.begin() + long(std::min(order.size(), i + size)));
  return out;
}

}  // namespace detail

/// Mini-batch training of both branches. The bounding and alignment branches
/// share no parameters and each has its gradient norm clipped on its own, so
/// a strategy that ignores the proposal scores can leave the alignment branch
/// untouched without changing the bounding branch's trajectory.
template <class Real>
std::vector<EpochStats> train_model(EmbModel<Real>& model, const std::vector<VideoInstance>& data,
                                    const RunSpec& spec, const BatchObserver<Real>& observer = {},
                                    std::ostream* log = nullptr) {
  const auto& tc = spec.train;
  if (tc.epochs == 0) return {};
  if (data.empty()) fail(Error::Kind::validation, "train_model: no training samples");
  const bool elastic = spec.supervision.variant == Strategy::elastic;
  const bool align = spec.trains_alignment();
  const std::size_t T = data.front().video.frames;
  const std::size_t per_epoch = (data.size() + tc.batch_size - 1) / tc.batch_size;
  const std::uint64_t total_steps = std::uint64_t(per_epoch * tc.epochs);

  auto& params = model.parameters().tensors();
  const std::size_t split = model.bounding_parameter_count();
  std::vector<Tensor<Real>> bound_params(params.begin(), params.begin() + long(split));
  std::vector<Tensor<Real>> align_params(params.begin() + long(split), params.end());
  AdamState<Real> adam;
  adam.config.lr = tc.lr;

  std::mt19937_64 order_rng(seed_stream(spec.seed, 1)), bound_rng(seed_stream(spec.seed, 2)),
      align_rng(seed_stream(spec.seed, 3));
  const ForwardContext bound_ctx{true, model.config().dropout, &bound_rng};
  const ForwardContext align_ctx{true, model.config().dropout, &align_rng};

  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t(0));
  std::vector<EpochStats> curve;
  std::uint64_t step = 0;
  for (std::size_t epoch = 0; epoch < tc.epochs; ++epoch) {
    EpochStats st;
    st.epoch = epoch;
    st.tau = threshold_at(spec.schedule, epoch, std::max<std::size_t>(tc.epochs - 1, 1));
    std::shuffle(order.begin(), order.end(), order_rng);
    const auto batches = detail::batches_of(order, tc.batch_size);
    std::size_t pseudo = 0, seen = 0;
    for (std::size_t b = 0; b < batches.size(); ++b) {
      try {
        const Batch<Real> batch = pack_batch<Real>(data, batches[b]);
        for (auto& p : params) p.zero_grad();
        const auto ep = model.forward_bounding(batch, bound_ctx);
        std::optional<ProposalMap<Real>> map;
        if (align) map = model.forward_alignment(batch, align_ctx, true);
        const Supervision sup =
            elastic ? make_supervision(spec.supervision, batch.truth, batch.valid_frames, T, *map, st.tau)
                    : make_supervision(spec.supervision, batch.truth, batch.valid_frames, T);
        if (observer) observer(BatchEvent<Real>{epoch, b, batch, sup});

        std::size_t clamped = 0;
        const Tensor<Real> lb =
            sup.soft() ? loss_bound_soft(ep.p_start, ep.p_end, detail::to_real<Real>(sup.soft_start),
                                         detail::to_real<Real>(sup.soft_end), T)
                       : loss_bound(ep.p_start, ep.p_end, sup.ranges, T, &clamped);
        Tensor<Real> la;
        if (map) la = loss_align(map->logits, map->alpha, map->valid(), map->slots(), spec.loss);
        const Tensor<Real> lh = loss_highlight(ep.highlight_logits, sup.ranges, batch.valid_frames,
                                               batch.video_mask, T, tc.highlight_extension);
        const Tensor<Real> total = total_loss(lb, la, lh, spec.loss);
        backward(total);
        clip_global_norm(bound_params, tc.clip);
        if (align) clip_global_norm(align_params, tc.clip);
        st.lr_scale = tc.lr_decay ? linear_lr_scale(step, total_steps) : 1.0;
        adam_step(params, adam, st.lr_scale);
        ++step;

        st.total += double(total.item());
        st.bound += double(lb.item());
        st.align += la.defined() ? double(la.item()) : 0.0;
        st.highlight += double(lh.item());
        st.clamped += clamped;
        pseudo += sup.pseudo_found;
        seen += batch.size();
      } catch (const Error& e) {
        if (e.kind() == Error::Kind::numeric)
          fail(Error::Kind::numeric,
               "epoch " + std::to_string(epoch) + " batch " + std::to_string(b) + ": " + e.what());
        throw;
      }
    }
    const double nb = double(batches.size());
    st.total /= nb;
    st.bound /= nb;
    st.align /= nb;
    st.highlight /= nb;
    st.pseudo_rate = elastic ? double(pseudo) / double(seen) : 0.0;
    curve.push_back(st);
    if (log)
      *log << "  epoch " << epoch + 1 << "/" << tc.epochs << " loss " << st.total << " (bound " << st.bound
           << ", align " << st.align << ", highlight " << st.highlight << ") tau " << st.tau << "\n"
           << std::flush;
  }
  return curve;
}

struct EvalOptions {
  bool with_alignment = true;
  bool clean_truth = true;
  std::vector<double> thresholds = kDefaultThresholds;
  double shift_fraction = 0.1;
  std::size_t batch_size = 32;
};

/// DET, SHIFT and (with the alignment branch) ELA reports on `data`.
struct Evaluation {
  EvalReport det;
  EvalReport shift;
  std::optional<EvalReport> ela;
  std::vector<IndexRange> det_frames;
  std::vector<ElasticBoundary> ela_frames;
};

template <class Real>
Evaluation evaluate_model(const EmbModel<Real>& model, const std::vector<VideoInstance>& data,
                          const EvalOptions& opt) {
  NoGradGuard guard;
  const ForwardContext ctx{false, 0.0, nullptr};
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t(0));
  Evaluation ev;
  std::vector<Interval> det_seconds, truths;
  std::vector<FrameGrid> grids;
  std::vector<std::string> ids;
  std::vector<std::size_t> valid;
  for (const auto& idx : detail::batches_of(order, opt.batch_size)) {
    const Batch<Real> batch = pack_batch<Real>(data, idx);
    const std::size_t T = batch.frames;
    const auto ep = model.forward_bounding(batch, ctx);
    std::optional<ProposalMap<Real>> map;
    if (opt.with_alignment) map = model.forward_alignment(batch, ctx, false);
    const auto ps = ep.p_start.data(), pe = ep.p_end.data();
    for (std::size_t s = 0; s < batch.size(); ++s) {
      const VideoInstance& v = data[idx[s]];
      const std::vector<double> a(ps.begin() + long(s * T), ps.begin() + long((s + 1) * T));
      const std::vector<double> b(pe.begin() + long(s * T), pe.begin() + long((s + 1) * T));
      const IndexRange det = infer_det(a, b, v.valid_frames());
      const FrameGrid grid{v.duration, v.valid_frames()};
      ev.det_frames.push_back(det);
      det_seconds.push_back(grid.seconds(det));
      grids.push_back(grid);
      truths.push_back(opt.clean_truth && v.clean_seconds ? *v.clean_seconds : v.truth_seconds);
      ids.push_back(v.video_id);
      valid.push_back(v.valid_frames());
      if (map) {
        const std::size_t k = map->top_slot(s);
        ev.ela_frames.push_back(infer_ela(det, map->layout.frame_range(k, v.valid_frames())));
      }
    }
  }
  ev.det = recall_at_iou(det_seconds, truths, opt.thresholds, ids);
  ev.shift = evaluate_elastic(global_shift_baseline(ev.det_frames, valid, opt.shift_fraction), truths, grids,
                              opt.thresholds, ids);
  ev.shift.mode = "SHIFT";
  if (opt.with_alignment) ev.ela = evaluate_elastic(ev.ela_frames, truths, grids, opt.thresholds, ids);
  return ev;
}

struct RunResult {
  Strategy strategy = Strategy::elastic;
  ScheduleScheme schedule = ScheduleScheme::sigmoid;
  std::uint64_t seed = 1;
  std::size_t epochs = 0;
  std::vector<EpochStats> curve;
  Evaluation eval;
  double seconds = 0.0;
};

/// Training and test instances of an experiment, built once and shared by
/// every run.
struct ExperimentData {
  Corpus corpus;
  std::vector<VideoInstance> train, test;
  std::size_t video_dim = 0, query_dim = 0;
};

inline ExperimentData prepare_data(const ExperimentConfig& c) {
  ExperimentData d;
  d.corpus = c.data.synthetic ? generate_synthetic(c.synthetic) : load_corpus(c.data.root);
  d.train = make_instances(d.corpus, c.data.train_split, c.model.max_frames, c.container());
  d.test = make_instances(d.corpus, c.data.test_split, c.model.max_frames, c.container());
  if (d.corpus.store.videos.empty()) fail(Error::Kind::validation, "corpus has no videos");
  d.video_dim = d.corpus.store.videos.begin()->second.dim;
  d.query_dim = d.corpus.store.vocab.dim();
  return d;
}

inline ModelConfig model_config_for(const ExperimentConfig& c, const ExperimentData& d) {
  ModelConfig m = c.model;
  m.video_dim = d.video_dim;
  m.query_dim = d.query_dim;
  return m;
}

inline EvalOptions eval_options_for(const ExperimentConfig& c, bool with_alignment) {
  return {with_alignment, c.data.clean_truth, c.eval.thresholds, c.eval.shift_fraction, c.eval.batch_size};
}

/// Trains and evaluates one (strategy, seed) pair, saving the weights to
/// `checkpoint` when it is non-empty.
inline RunResult run_single(const ExperimentConfig& c, const ExperimentData& d, Strategy strategy,
                            std::uint64_t seed, std::ostream* log = nullptr,
                            const BatchObserver<float>& observer = {}, const std::string& checkpoint = "") {
  const auto t0 = std::chrono::steady_clock::now();
  const RunSpec spec = make_run_spec(c, strategy, seed);
  EmbModel<float> model(model_config_for(c, d), seed);
  RunResult r;
  r.strategy = strategy;
  r.schedule = c.schedule.scheme;
  r.seed = seed;
  r.epochs = c.train.epochs;
  r.curve = train_model(model, d.train, spec, observer, log);
  if (!checkpoint.empty()) save_checkpoint(model.parameters(), checkpoint);
  r.eval = evaluate_model(model, d.test, eval_options_for(c, spec.trains_alignment()));
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

}  // namespace emb
