#include "sgmpt/grad_check.hpp"

#include <algorithm>
#include <cmath>

#include "sgmpt/errors.hpp"

namespace sgmpt::num {

const GradCheckBlock* GradCheckReport::find(const std::string& name) const {
  for (const auto& b : blocks)
    if (b.name == name) return &b;
  return nullptr;
}

namespace {
double checked(double v, const char* where) {
  if (!std::isfinite(v)) throw NumericError(std::string("finite_diff_check: non-finite loss at ") + where);
  return v;
}
}  // namespace

GradCheckReport finite_diff_check(const LossFunction& loss, const std::vector<Parameter*>& params,
                                  const GradCheckOptions& opts) {
  GradientBuffer analytic;
  checked(loss(&analytic), "base point");

  GradCheckReport report;
  for (Parameter* p : params) {
    if (!p->trainable) continue;
    GradCheckBlock block;
    block.name = p->name;
    const Tensor* g = analytic.find(*p);
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const double original = p->value[i];
      const auto at = [&](double offset, const char* where) {
        p->value[i] = original + offset;
        return checked(loss(nullptr), where);
      };
      const double h = opts.epsilon;
      double numeric;
      if (opts.five_point) {
        const double f2 = at(2 * h, "theta+2eps"), f1 = at(h, "theta+eps");
        const double b1 = at(-h, "theta-eps"), b2 = at(-2 * h, "theta-2eps");
        numeric = (-f2 + 8.0 * f1 - 8.0 * b1 + b2) / (12.0 * h);
      } else {
        numeric = (at(h, "theta+eps") - at(-h, "theta-eps")) / (2.0 * h);
      }
      p->value[i] = original;
      const double a = g != nullptr ? (*g)[i] : 0.0;
      const double abs_err = std::abs(a - numeric);
      const double denom = std::max({std::abs(a), std::abs(numeric), opts.denominator_floor});
      const double rel = abs_err / denom;
      if (rel > block.max_relative_error) {
        block.max_relative_error = rel;
        block.worst_index = i;
      }
      block.max_abs_error = std::max(block.max_abs_error, abs_err);
    }
    report.max_relative_error = std::max(report.max_relative_error, block.max_relative_error);
    report.blocks.push_back(std::move(block));
  }
  return report;
}

}  // namespace sgmpt::num
