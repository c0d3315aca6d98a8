#pragma once

#include <vector>

#include "iskd/network.hpp"

namespace iskd {

struct SgdConfig {
  double lr = 0.01;
  double momentum = 0.9;
  double weight_decay = 5e-4;

  void validate() const;
};

/// Momentum buffers for one network.
class SgdState {
 public:
  SgdState(const Network& network, SgdConfig config);

  const SgdConfig& config() const noexcept { return config_; }
  void set_lr(double lr);

  std::vector<Tensor>& velocity() noexcept { return velocity_; }
  const std::vector<Tensor>& velocity() const noexcept { return velocity_; }

 private:
  SgdConfig config_;
  std::vector<Tensor> velocity_;
};

/// One coupled-decay momentum update on a single tensor:
///   g' = g + weight_decay * theta
///   v  = momentum * v + g'
///   theta -= lr * v
void sgd_update(Tensor& param, const Tensor& grad, Tensor& velocity, const SgdConfig& config);

/// Applies sgd_update to every parameter of `network` using its grads.
void sgd_step(Network& network, SgdState& state);

/// Per-epoch learning rates for one KD iteration: constant at `lr`.
std::vector<double> make_schedule(std::size_t epochs, double lr);

}  // namespace iskd
