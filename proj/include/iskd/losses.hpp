#pragma once

#include <span>

#include "iskd/tensor.hpp"

namespace iskd {

/// Weighting of the distillation term.
struct KDConfig {
  double alpha = 0.5;        // weight on the KL term, in [0, 1]
  double temperature = 1.0;  // softens both distributions when > 1
  bool t2_scale = false;     // multiply the KL term by temperature^2

  /// Throws ConfigError naming "kd.alpha" / "kd.temperature".
  void validate() const;

  friend bool operator==(const KDConfig&, const KDConfig&) = default;
};

/// Loss value (batch mean, accumulated in double) and its gradient with
/// respect to the logits it was given.
template <typename T>
struct LossResult {
  double loss = 0.0;
  BasicTensor<T> dlogits;
};

/// Mean softmax cross-entropy over the batch; dlogits = (softmax - onehot) / B.
template <typename T>
LossResult<T> cross_entropy(const BasicTensor<T>& logits, std::span<const int> labels);

/// Mean KL(p_teacher || p_student) with p = softmax(logits / temperature).
/// Teacher logits are constants; only the student receives a gradient.
template <typename T>
LossResult<T> kl_distill(const BasicTensor<T>& student_logits,
                         const BasicTensor<T>& teacher_logits, const KDConfig& config);

/// (1 - alpha) * cross_entropy + alpha * kl_distill. At alpha == 0 or 1 the
/// result is exactly the surviving component.
template <typename T>
LossResult<T> kd_total(const BasicTensor<T>& student_logits, const BasicTensor<T>& teacher_logits,
                       std::span<const int> labels, const KDConfig& config);

}  // namespace iskd
