#include "tirelearn/adam.hpp"

#include <cmath>

#include "tirelearn/error.hpp"

namespace tirelearn {

AdamState::AdamState(std::size_t dim, AdamConfig config) : config_(config), m_(dim, 0.0), v_(dim, 0.0) {}

double AdamState::learning_rate(int epoch) const {
  return config_.lr0 * std::exp(-config_.decay * static_cast<double>(epoch));
}

void AdamState::step(std::span<double> theta, std::span<const double> gradient, int epoch) {
  if (theta.size() != m_.size() || gradient.size() != m_.size()) {
    throw Error(ErrorCode::dimension_mismatch, "Adam state, parameters and gradient must agree in size");
  }
  ++t_;
  const double lr = learning_rate(epoch);
  const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < theta.size(); ++i) {
    m_[i] = config_.beta1 * m_[i] + (1.0 - config_.beta1) * gradient[i];
    v_[i] = config_.beta2 * v_[i] + (1.0 - config_.beta2) * gradient[i] * gradient[i];
    const double m_hat = m_[i] / c1;
    const double v_hat = v_[i] / c2;
    theta[i] -= lr * m_hat / (std::sqrt(v_hat) + config_.eps);
  }
}

}  // namespace tirelearn
