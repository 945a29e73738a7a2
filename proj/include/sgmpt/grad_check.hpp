#pragma once

#include <functional>
#include <string>
#include <vector>

#include "sgmpt/parameter.hpp"

namespace sgmpt::num {

struct GradCheckBlock {
  std::string name;
  double max_relative_error = 0.0;
  double max_abs_error = 0.0;
  std::size_t worst_index = 0;
};

struct GradCheckReport {
  std::vector<GradCheckBlock> blocks;  // trainable parameters only
  double max_relative_error = 0.0;

  bool passed(double tolerance) const { return max_relative_error < tolerance; }
  const GradCheckBlock* find(const std::string& name) const;
};

// Pure scalar loss of the current parameter values. When `buffer` is non-null
// the function must also run backward and add its gradients into it.
using LossFunction = std::function<double(GradientBuffer* buffer)>;

struct GradCheckOptions {
  double epsilon = 1e-3;
  // Five-point stencil, O(eps^4) truncation. With the larger step the
  // cancellation error drops to about 1e-13 so gradients near 1e-7 stay
  // resolvable. Off gives plain central differences.
  bool five_point = true;
  // Relative error is |analytic - numeric| / max(|analytic|, |numeric|, floor);
  // the floor keeps near-zero coordinates from reporting roundoff as error.
  double denominator_floor = 1e-7;
};

// Finite differences against the analytic gradient, coordinate by coordinate, for every trainable parameter in
// `params`. Throws NumericError if any evaluation is non-finite.
GradCheckReport finite_diff_check(const LossFunction& loss, const std::vector<Parameter*>& params,
                                  const GradCheckOptions& opts = {});

}  // namespace sgmpt::num
