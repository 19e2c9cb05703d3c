#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "emb/elastic/bounding.hpp"
#include "emb/heads/proposals.hpp"

namespace emb {

enum class Strategy { fixed, extend, kernel, elastic };

inline Strategy parse_strategy(const std::string& s) {
  if (s == "fixed") return Strategy::fixed;
  if (s == "extend") return Strategy::extend;
  if (s == "kernel") return Strategy::kernel;
  if (s == "elastic") return Strategy::elastic;
  fail(Error::Kind::config, "unknown supervision strategy '" + s + "' (fixed|extend|kernel|elastic)");
}

inline const char* strategy_name(Strategy s) {
  switch (s) {
    case Strategy::fixed: return "fixed";
    case Strategy::extend: return "extend";
    case Strategy::kernel: return "kernel";
    case Strategy::elastic: return "elastic";
  }
  return "?";
}

struct SupervisionStrategy {
  Strategy variant = Strategy::elastic;
  double extend_fraction = 0.2;  // extend: radius as a fraction of moment length
  double kernel_width = 0.1;     // kernel: gaussian sigma as a fraction of moment length

  void validate() const {
    if (!(extend_fraction >= 0.0)) fail(Error::Kind::config, "extend fraction must be nonnegative");
    if (!(kernel_width > 0.0)) fail(Error::Kind::config, "kernel width must be positive");
  }
};

/// Endpoint targets for one batch. `ranges` drive the log-mass loss and the
/// highlight target; the soft distributions are filled for the kernel variant.
struct Supervision {
  Strategy variant = Strategy::fixed;
  std::vector<ElasticBoundary> ranges;
  std::vector<double> soft_start, soft_end;  // S*T when variant == kernel
  std::size_t pseudo_found = 0;              // elastic: samples with a qualifying proposal
  double tau = 1.0;

  bool soft() const { return variant == Strategy::kernel; }
};

/// [center - r, center + r] with r = ceil(fraction * length), clipped to the
/// valid frames.
inline IndexRange extend_range(long center, long length, double fraction, std::size_t valid_frames) {
  const long r = long(std::ceil(fraction * double(length) - 1e-9));
  return {std::max(0L, center - r), std::min(long(valid_frames) - 1, center + r)};
}

/// Gaussian over the valid frames centred on `center`, normalised to sum 1.
inline std::vector<double> gaussian_target(long center, double sigma, std::size_t valid_frames,
                                           std::size_t length) {
  std::vector<double> t(length, 0.0);
  double z = 0.0;
  for (std::size_t i = 0; i < valid_frames; ++i) {
    const double d = (double(i) - double(center)) / sigma;
    t[i] = std::exp(-0.5 * d * d);
    z += t[i];
  }
  for (auto& v : t) v /= z;
  return t;
}

/// Elastic ranges of every sample from the scored map at threshold tau.
template <class Real>
std::vector<ElasticBoundary> elastic_targets(const ProposalMap<Real>& map, const std::vector<IndexRange>& manual,
                                             double tau, std::size_t* found = nullptr) {
  const std::size_t K = map.layout.slots(), S = manual.size();
  if (map.alpha.size() != S * K) fail(Error::Kind::validation, "elastic_targets: proposal IoUs missing");
  const auto scores = map.score_values();
  std::vector<ElasticBoundary> out;
  std::size_t hits = 0;
  for (std::size_t s = 0; s < S; ++s) {
    std::vector<std::uint8_t> valid(K);
    for (std::size_t k = 0; k < K; ++k) valid[k] = map.layout.valid(k, map.valid_frames[s]);
    const std::span<const double> sc(scores.data() + s * K, K), al(map.alpha.data() + s * K, K);
    const auto k = select_pseudo_boundary(sc, al, valid, tau);
    std::optional<IndexRange> pseudo;
    if (k) {
      pseudo = map.layout.frame_range(*k, map.valid_frames[s]);
      ++hits;
    }
    out.push_back(build_elastic(manual[s], pseudo));
  }
  if (found) *found = hits;
  return out;
}

/// Targets for the non-elastic strategies; `length` is the frame container.
inline Supervision make_supervision(const SupervisionStrategy& strategy, const std::vector<IndexRange>& manual,
                                    const std::vector<std::size_t>& valid_frames, std::size_t length) {
  strategy.validate();
  if (manual.size() != valid_frames.size()) fail(Error::Kind::shape, "make_supervision: batch size mismatch");
  Supervision sup;
  sup.variant = strategy.variant;
  for (std::size_t s = 0; s < manual.size(); ++s) {
    const IndexRange& m = manual[s];
    switch (strategy.variant) {
      case Strategy::fixed:
      case Strategy::elastic:
      case Strategy::kernel:
        sup.ranges.push_back(ElasticBoundary::singleton(m));
        break;
      case Strategy::extend:
        sup.ranges.push_back({extend_range(m.first, m.size(), strategy.extend_fraction, valid_frames[s]),
                              extend_range(m.last, m.size(), strategy.extend_fraction, valid_frames[s])});
        break;
    }
    if (strategy.variant == Strategy::kernel) {
      const double sigma = strategy.kernel_width * double(m.size());
      for (double v : gaussian_target(m.first, sigma, valid_frames[s], length)) sup.soft_start.push_back(v);
      for (double v : gaussian_target(m.last, sigma, valid_frames[s], length)) sup.soft_end.push_back(v);
    }
  }
  return sup;
}

/// Elastic variant: pseudo boundaries from the scored proposal map.
template <class Real>
Supervision make_supervision(const SupervisionStrategy& strategy, const std::vector<IndexRange>& manual,
                             const std::vector<std::size_t>& valid_frames, std::size_t length,
                             const ProposalMap<Real>& map, double tau) {
  if (strategy.variant != Strategy::elastic) return make_supervision(strategy, manual, valid_frames, length);
  Supervision sup;
  sup.variant = Strategy::elastic;
  sup.tau = tau;
  sup.ranges = elastic_targets(map, manual, tau, &sup.pseudo_found);
  return sup;
}

}  // namespace emb
