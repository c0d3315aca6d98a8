#include "iskd/losses.hpp"

#include <cmath>
#include <string>

#include "iskd/ops.hpp"

namespace iskd {

void KDConfig::validate() const {
  if (!(alpha >= 0.0 && alpha <= 1.0)) {
    throw ConfigError("must lie in [0, 1], got " + std::to_string(alpha), "kd.alpha");
  }
  if (!(temperature > 0.0) || !std::isfinite(temperature)) {
    throw ConfigError("must be positive, got " + std::to_string(temperature), "kd.temperature");
  }
}

namespace {

template <typename T>
void require_logits(const BasicTensor<T>& logits, const char* what) {
  if (logits.rank() != 2 || logits.dim(1) < 2) {
    throw DimensionError(std::string(what) + ": expected B x C logits with C >= 2, got " +
                         shape_string(logits.shape()));
  }
}

}  // namespace

template <typename T>
LossResult<T> cross_entropy(const BasicTensor<T>& logits, std::span<const int> labels) {
  require_logits(logits, "cross_entropy");
  const std::size_t batch = logits.dim(0), classes = logits.dim(1);
  if (labels.size() != batch) {
    throw DimensionError("cross_entropy: " + std::to_string(labels.size()) + " labels for batch of " +
                         std::to_string(batch));
  }
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= classes) {
      throw DimensionError("cross_entropy: label " + std::to_string(y) + " outside [0, " +
                           std::to_string(classes) + ")");
    }
  }
  const BasicTensor<T> log_p = log_softmax_rows(logits);
  LossResult<T> result{0.0, BasicTensor<T>(logits.shape())};
  const T inv_b = T{1} / static_cast<T>(batch);
  double total = 0.0;
  for (std::size_t i = 0; i < batch; ++i) {
    const auto lp = log_p.row(i);
    auto g = result.dlogits.row(i);
    total -= static_cast<double>(lp[labels[i]]);
    for (std::size_t j = 0; j < classes; ++j) {
      const T onehot = static_cast<std::size_t>(labels[i]) == j ? T{1} : T{0};
      g[j] = (std::exp(lp[j]) - onehot) * inv_b;
    }
  }
  result.loss = total / static_cast<double>(batch);
  return result;
}

template <typename T>
LossResult<T> kl_distill(const BasicTensor<T>& student_logits,
                         const BasicTensor<T>& teacher_logits, const KDConfig& config) {
  config.validate();
  require_logits(student_logits, "kl_distill");
  if (student_logits.shape() != teacher_logits.shape()) {
    throw DimensionError("kl_distill: student logits " + shape_string(student_logits.shape()) +
                         " vs teacher logits " + shape_string(teacher_logits.shape()));
  }
  const std::size_t batch = student_logits.dim(0), classes = student_logits.dim(1);
  // log-softmax is finite for finite logits, so saturated teachers never
  // produce log(0).
  const BasicTensor<T> log_s = log_softmax_rows(student_logits, config.temperature);
  const BasicTensor<T> log_t = log_softmax_rows(teacher_logits, config.temperature);
  const double scale = config.t2_scale ? config.temperature * config.temperature : 1.0;
  const T grad_scale = static_cast<T>(scale / config.temperature / static_cast<double>(batch));

  LossResult<T> result{0.0, BasicTensor<T>(student_logits.shape())};
  double total = 0.0;
  for (std::size_t i = 0; i < batch; ++i) {
    const auto ls = log_s.row(i);
    const auto lt = log_t.row(i);
    auto g = result.dlogits.row(i);
    double row = 0.0;
    for (std::size_t j = 0; j < classes; ++j) {
      const T pt = std::exp(lt[j]);
      const T ps = std::exp(ls[j]);
      row += static_cast<double>(pt) * (static_cast<double>(lt[j]) - static_cast<double>(ls[j]));
      g[j] = (ps - pt) * grad_scale;
    }
    total += row;
  }
  result.loss = scale * total / static_cast<double>(batch);
  return result;
}

template <typename T>
LossResult<T> kd_total(const BasicTensor<T>& student_logits, const BasicTensor<T>& teacher_logits,
                       std::span<const int> labels, const KDConfig& config) {
  config.validate();
  if (config.alpha == 0.0) return cross_entropy(student_logits, labels);
  if (config.alpha == 1.0) return kl_distill(student_logits, teacher_logits, config);

  LossResult<T> ce = cross_entropy(student_logits, labels);
  const LossResult<T> kl = kl_distill(student_logits, teacher_logits, config);
  const T w_ce = static_cast<T>(1.0 - config.alpha);
  const T w_kl = static_cast<T>(config.alpha);
  for (std::size_t i = 0; i < ce.dlogits.size(); ++i) {
    ce.dlogits[i] = w_ce * ce.dlogits[i] + w_kl * kl.dlogits[i];
  }
  ce.loss = (1.0 - config.alpha) * ce.loss + config.alpha * kl.loss;
  return ce;
}

template LossResult<float> cross_entropy(const Tensor&, std::span<const int>);
template LossResult<double> cross_entropy(const Tensor64&, std::span<const int>);
template LossResult<float> kl_distill(const Tensor&, const Tensor&, const KDConfig&);
template LossResult<double> kl_distill(const Tensor64&, const Tensor64&, const KDConfig&);
template LossResult<float> kd_total(const Tensor&, const Tensor&, std::span<const int>,
                                    const KDConfig&);
template LossResult<double> kd_total(const Tensor64&, const Tensor64&, std::span<const int>,
                                     const KDConfig&);

}  // namespace iskd
