#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "iskd/rng.hpp"
#include "iskd/tensor.hpp"

namespace iskd {

enum class LayerKind { dense, conv2d, relu, maxpool2d, globalavgpool, flatten };

std::string_view to_string(LayerKind kind);
LayerKind layer_kind_from_string(std::string_view name);

struct LayerSpec {
  LayerKind kind = LayerKind::relu;
  std::size_t in = 0;      // dense fan-in, conv input channels
  std::size_t out = 0;     // dense fan-out, conv filter count
  std::size_t kernel = 0;  // conv / pool window
  std::size_t stride = 1;
  std::size_t pad = 0;

  static LayerSpec dense(std::size_t in, std::size_t out);
  static LayerSpec conv2d(std::size_t in_channels, std::size_t filters, std::size_t kernel,
                          std::size_t stride = 1, std::size_t pad = 0);
  static LayerSpec relu();
  static LayerSpec maxpool2d(std::size_t kernel, std::size_t stride);
  static LayerSpec globalavgpool();
  static LayerSpec flatten();

  std::string describe() const;

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

struct Architecture {
  Shape input_shape;  // per sample, e.g. {1, 16, 16}
  std::vector<LayerSpec> layers;
  std::size_t class_count = 0;

  friend bool operator==(const Architecture&, const Architecture&) = default;
};

template <typename T>
struct Parameter {
  std::string name;
  BasicTensor<T> value;
  BasicTensor<T> grad;
};

/// Intermediates retained by forward() for the matching backward().
template <typename T>
struct ForwardCache {
  std::vector<BasicTensor<T>> inputs;                 // input of every layer
  std::vector<std::vector<std::uint32_t>> pool_argmax;  // per layer, empty unless maxpool
  std::uint64_t params_version = 0;
};

/// Ordered layer stack with one gradient buffer per parameter.
///
/// Not thread-safe: forward/backward/update on one instance must be
/// serialized. Distinct instances are independent.
template <typename T>
class BasicNetwork {
 public:
  BasicNetwork() = default;

  const Architecture& architecture() const noexcept { return arch_; }
  const std::vector<LayerSpec>& layers() const noexcept { return arch_.layers; }
  const Shape& input_shape() const noexcept { return arch_.input_shape; }
  std::size_t class_count() const noexcept { return arch_.class_count; }

  /// Per-sample output shape of every layer.
  const std::vector<Shape>& output_shapes() const noexcept { return shapes_; }

  std::span<const Parameter<T>> params() const noexcept { return params_; }

  /// Write access to parameters. Invalidates outstanding forward caches.
  std::span<Parameter<T>> mutable_params() noexcept {
    touch();
    return params_;
  }

  const Parameter<T>& param(std::string_view name) const;

  std::size_t param_count() const noexcept;
  std::uint64_t version() const noexcept { return version_; }

  bool initialized() const noexcept { return initialized_; }
  void mark_initialized() noexcept { initialized_ = true; }

  void zero_grads();

  /// Logits (B x C) plus everything backward() needs.
  std::pair<BasicTensor<T>, ForwardCache<T>> forward(const BasicTensor<T>& batch) const;

  /// Logits only; same arithmetic as forward().
  BasicTensor<T> predict(const BasicTensor<T>& batch) const;

  /// Overwrites every grad buffer with dLoss/dParam given dLoss/dLogits.
  /// The batch mean is expected to be folded into `dlogits` already (the
  /// losses divide by B), so grads here are plain sums over the batch.
  void backward(const ForwardCache<T>& cache, const BasicTensor<T>& dlogits);

  template <typename U>
  BasicNetwork<U> cast() const;

  /// See build_network().
  static BasicNetwork build(Architecture arch);

  template <typename U>
  friend class BasicNetwork;

 private:
  void touch() noexcept;
  BasicTensor<T> run(const BasicTensor<T>& batch, ForwardCache<T>* cache) const;

  Architecture arch_;
  std::vector<Shape> shapes_;
  std::vector<Parameter<T>> params_;
  std::vector<int> weight_slot_;  // per layer: index of its weight in params_, or -1
  std::uint64_t version_ = 0;
  bool initialized_ = false;
};

using Network = BasicNetwork<float>;
using Network64 = BasicNetwork<double>;

/// Validates that the layer shapes chain from `arch.input_shape` to a
/// `class_count`-wide output; throws BuildError naming the offending pair.
/// Parameters are allocated zeroed and the network is marked uninitialized.
Network build_network(Architecture arch);

/// He-normal weights (std = sqrt(2 / fan_in)), zero biases, drawn layer by
/// layer in parameter order.
template <typename T>
void init_params(BasicNetwork<T>& network, SeededRng& rng);

/// Named reference architectures: "mlp-small" and "cnn-small".
Architecture preset_architecture(std::string_view name, const Shape& input_shape,
                                 std::size_t class_count);

/// Default learning rate for a preset.
double preset_learning_rate(std::string_view name);

}  // namespace iskd
