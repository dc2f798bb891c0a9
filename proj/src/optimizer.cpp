#include "bset/optimizer.hpp"

#include <cmath>

#include "bset/error.hpp"

namespace bset {

void adam_step(ModelParameters& params, const Gradients& grads, AdamState& state, double lr,
               const AdamConfig& config) {
  if (grads.size() != params.size()) {
    throw ShapeError("adam_step: " + std::to_string(grads.size()) + " gradients for " +
                     std::to_string(params.size()) + " parameters");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (grads[i].shape() != params[i].tensor.shape()) {
      throw ShapeError("adam_step: gradient " + shape_string(grads[i].shape()) + " does not match " +
                       params[i].name + " " + shape_string(params[i].tensor.shape()));
    }
  }
  if (state.first_moment.empty()) {
    for (const auto& p : params) {
      state.first_moment.emplace_back(p.tensor.size(), 0.0);
      state.second_moment.emplace_back(p.tensor.size(), 0.0);
    }
    state.step = 0;
  } else if (state.first_moment.size() != params.size()) {
    throw ShapeError("adam_step: optimizer state does not match parameters");
  }

  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(config.beta1, t);
  const double c2 = 1.0 - std::pow(config.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto w = params[i].tensor.values();
    auto g = grads[i].values();
    auto& m = state.first_moment[i];
    auto& v = state.second_moment[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      m[j] = config.beta1 * m[j] + (1.0 - config.beta1) * g[j];
      v[j] = config.beta2 * v[j] + (1.0 - config.beta2) * g[j] * g[j];
      const double m_hat = m[j] / c1;
      const double v_hat = v[j] / c2;
      w[j] -= lr * m_hat / (std::sqrt(v_hat) + config.epsilon);
    }
  }
}

}  // namespace bset
