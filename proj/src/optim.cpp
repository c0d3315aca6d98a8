#include "iskd/optim.hpp"

#include <cmath>
#include <string>

namespace iskd {

void SgdConfig::validate() const {
  if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("must be positive", "optim.lr");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("must lie in [0, 1)", "optim.momentum");
  if (!(weight_decay >= 0.0) || !std::isfinite(weight_decay)) {
    throw ConfigError("must be nonnegative", "optim.weight_decay");
  }
}

SgdState::SgdState(const Network& network, SgdConfig config) : config_(config) {
  config_.validate();
  for (const auto& p : network.params()) velocity_.emplace_back(p.value.shape());
}

void SgdState::set_lr(double lr) {
  SgdConfig next = config_;
  next.lr = lr;
  next.validate();
  config_ = next;
}

void sgd_update(Tensor& param, const Tensor& grad, Tensor& velocity, const SgdConfig& config) {
  if (param.shape() != grad.shape() || param.shape() != velocity.shape()) {
    throw DimensionError("sgd: param " + shape_string(param.shape()) + ", grad " +
                         shape_string(grad.shape()) + ", velocity " +
                         shape_string(velocity.shape()) + " disagree");
  }
  const auto lr = static_cast<float>(config.lr);
  const auto mu = static_cast<float>(config.momentum);
  const auto wd = static_cast<float>(config.weight_decay);
  float* theta = param.raw();
  float* v = velocity.raw();
  const float* g = grad.raw();
  for (std::size_t i = 0; i < param.size(); ++i) {
    const float decayed = g[i] + wd * theta[i];
    v[i] = mu * v[i] + decayed;
    theta[i] -= lr * v[i];
  }
}

void sgd_step(Network& network, SgdState& state) {
  auto params = network.mutable_params();
  auto& velocity = state.velocity();
  if (velocity.size() != params.size()) {
    throw DimensionError("sgd: optimizer state tracks " + std::to_string(velocity.size()) +
                         " tensors, network has " + std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    sgd_update(params[i].value, params[i].grad, velocity[i], state.config());
  }
}

std::vector<double> make_schedule(std::size_t epochs, double lr) {
  if (!(lr > 0.0) || !std::isfinite(lr)) {
    throw ConfigError("learning rate must be positive, got " + std::to_string(lr), "optim.lr");
  }
  return std::vector<double>(epochs, lr);
}

}  // namespace iskd
