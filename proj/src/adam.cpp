#include "sgmpt/adam.hpp"

#include <cmath>

#include "sgmpt/errors.hpp"

namespace sgmpt::num {

void Adam::step(ParameterStore& params) {
  if (m_.empty()) {
    for (std::size_t i = 0; i < params.size(); ++i) {
      const Tensor& v = params[i].value;
      m_.emplace_back(v.rows(), v.cols());
      v_.emplace_back(v.rows(), v.cols());
    }
  }
  if (m_.size() != params.size()) throw DimensionError("adam: parameter set changed between steps");
  ++step_;
  const double b1 = cfg_.beta1;
  const double b2 = cfg_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(step_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(step_));
  for (std::size_t p = 0; p < params.size(); ++p) {
    Parameter& param = params[p];
    if (!param.trainable) continue;
    Tensor& m = m_[p];
    Tensor& v = v_[p];
    for (std::size_t i = 0; i < param.value.size(); ++i) {
      const double g = param.grad[i];
      m[i] = b1 * m[i] + (1.0 - b1) * g;
      v[i] = b2 * v[i] + (1.0 - b2) * g * g;
      const double mhat = m[i] / c1;
      const double vhat = v[i] / c2;
      param.value[i] -= cfg_.learning_rate * mhat / (std::sqrt(vhat) + cfg_.epsilon);
    }
  }
}

}  // namespace sgmpt::num
