#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "emb/tensor/tensor.hpp"

namespace emb {

struct GradcheckResult {
  bool passed = false;
  double max_rel_error = 0.0;
  std::size_t worst_input = 0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

/// Relative error with a floor on the denominator so entries whose true
/// gradient is ~0 are judged on absolute error instead.
inline double relative_error(double analytic, double numeric, double floor = 1e-3) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

/// Compares reverse-mode gradients of a scalar function against central
/// differences with step h. `inputs` are perturbed in place and restored.
inline GradcheckResult gradcheck(const std::function<Tensor<double>(const std::vector<Tensor<double>>&)>& f,
                                 std::vector<Tensor<double>>& inputs, double tolerance,
                                 double h = 1e-3, double floor = 1e-3) {
  for (auto& x : inputs) {
    if (!x.requires_grad()) fail(Error::Kind::validation, "gradcheck: inputs must require grad");
    x.zero_grad();
  }
  Tensor<double> out = f(inputs);
  if (out.size() != 1) fail(Error::Kind::shape, "gradcheck: function must be scalar-valued");
  backward(out);

  GradcheckResult r;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    std::vector<double> analytic(inputs[i].size(), 0.0);
    if (inputs[i].has_grad()) analytic.assign(inputs[i].grad().begin(), inputs[i].grad().end());
    auto values = inputs[i].mutable_data();
    for (std::size_t j = 0; j < values.size(); ++j) {
      const double saved = values[j];
      double fp, fm;
      {
        NoGradGuard guard;
        values[j] = saved + h;
        fp = f(inputs).item();
        values[j] = saved - h;
        fm = f(inputs).item();
      }
      values[j] = saved;
      const double numeric = (fp - fm) / (2.0 * h);
      const double err = relative_error(analytic[j], numeric, floor);
      if (err > r.max_rel_error || (i == 0 && j == 0)) {
        r.max_rel_error = std::max(r.max_rel_error, err);
        if (err >= r.max_rel_error) {
          r.worst_input = i;
          r.worst_index = j;
          r.analytic = analytic[j];
          r.numeric = numeric;
        }
      }
    }
  }
  r.passed = r.max_rel_error <= tolerance;
  return r;
}

}  // namespace emb
