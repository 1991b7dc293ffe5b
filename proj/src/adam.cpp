#include "gdiff/adam.hpp"

#include <cmath>

#include "gdiff/errors.hpp"

namespace gdiff {

void adam_update(Tensor& param, const Tensor& grad, Tensor& m, Tensor& v, long long step,
                 const AdamConfig& hyper) {
  if (!param.same_shape(grad)) {
    throw DimensionError("adam: gradient shape " + grad.shape_str() +
                         " does not match parameter shape " + param.shape_str());
  }
  if (!param.same_shape(m) || !param.same_shape(v)) {
    throw DimensionError("adam: moment shape does not match parameter shape " +
                         param.shape_str());
  }
  const double b1 = hyper.beta1, b2 = hyper.beta2;
  const double bc1 = 1.0 - std::pow(b1, static_cast<double>(step));
  const double bc2 = 1.0 - std::pow(b2, static_cast<double>(step));
  const int n = param.numel();
  for (int i = 0; i < n; ++i) {
    m[i] = b1 * m[i] + (1.0 - b1) * grad[i];
    v[i] = b2 * v[i] + (1.0 - b2) * grad[i] * grad[i];
    const double mhat = m[i] / bc1;
    const double vhat = v[i] / bc2;
    param[i] -= hyper.lr * mhat / (std::sqrt(vhat) + hyper.eps);
  }
  param.ensure_finite("adam update");
}

void adam_step(ParamMap& params, const ParamMap& grads, AdamState& state) {
  state.step += 1;
  for (auto& [name, param] : params) {
    auto git = grads.find(name);
    if (git == grads.end()) {
      throw DimensionError("adam: missing gradient for parameter '" + name + "'");
    }
    auto mit = state.m.find(name);
    if (mit == state.m.end()) {
      mit = state.m.emplace(name, Tensor::zeros(param.shape)).first;
      state.v.emplace(name, Tensor::zeros(param.shape));
    }
    adam_update(param, git->second, mit->second, state.v.at(name), state.step, state.hyper);
  }
}

}  // namespace gdiff
