#pragma once

#include "vimts/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>

namespace vimts::testing {

// |a - n| / max(|a|, |n|, floor): relative error with an absolute floor so
// near-zero gradients are compared absolutely.
inline double relative_error(double a, double n, double floor = 1e-6) {
  return std::abs(a - n) / std::max({std::abs(a), std::abs(n), floor});
}

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst;
  int checked = 0;
};

// Builds the scalar loss on a fresh tape over `params`; compares backprop
// gradients with five-point central differences for every trainable scalar.
inline GradCheckResult gradcheck(ad::ParameterSet& params, const std::function<ad::Var(ad::Tape&)>& loss,
                                 double step = 1e-4, int max_per_param = 64) {
  ad::Gradients analytic(params);
  {
    ad::Tape tape(&params);
    tape.backward(loss(tape));
    tape.collect(analytic);
  }
  auto eval = [&] {
    ad::Tape tape(&params);
    return loss(tape).scalar();
  };
  GradCheckResult result;
  for (ad::ParamId id = 0; id < params.size(); ++id) {
    auto& p = params[id];
    if (!p.trainable) continue;
    const Eigen::Index n = p.value.size();
    const Eigen::Index stride = std::max<Eigen::Index>(1, n / max_per_param);
    for (Eigen::Index i = 0; i < n; i += stride) {
      const double orig = p.value.data()[i];
      auto at = [&](double delta) {
        p.value.data()[i] = orig + delta;
        return eval();
      };
      const double numeric = (-at(2 * step) + 8 * at(step) - 8 * at(-step) + at(-2 * step)) / (12.0 * step);
      p.value.data()[i] = orig;
      const double a = analytic.has(id) ? analytic[id].data()[i] : 0.0;
      const double err = relative_error(a, numeric);
      ++result.checked;
      if (err > result.max_rel_error) {
        result.max_rel_error = err;
        result.worst = p.name + "[" + std::to_string(i) + "] analytic=" + std::to_string(a) +
                       " numeric=" + std::to_string(numeric);
      }
    }
  }
  return result;
}

}  // namespace vimts::testing
