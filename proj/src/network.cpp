#include "iskd/network.hpp"

#include <atomic>
#include <cmath>

#include "iskd/ops.hpp"

namespace iskd {

std::string_view to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::dense: return "dense";
    case LayerKind::conv2d: return "conv2d";
    case LayerKind::relu: return "relu";
    case LayerKind::maxpool2d: return "maxpool2d";
    case LayerKind::globalavgpool: return "globalavgpool";
    case LayerKind::flatten: return "flatten";
  }
  return "?";
}

LayerKind layer_kind_from_string(std::string_view name) {
  for (LayerKind k : {LayerKind::dense, LayerKind::conv2d, LayerKind::relu, LayerKind::maxpool2d,
                      LayerKind::globalavgpool, LayerKind::flatten}) {
    if (to_string(k) == name) return k;
  }
  throw FormatError("unknown layer kind '" + std::string(name) + "'");
}

LayerSpec LayerSpec::dense(std::size_t in, std::size_t out) {
  return {LayerKind::dense, in, out, 0, 1, 0};
}

LayerSpec LayerSpec::conv2d(std::size_t in_channels, std::size_t filters, std::size_t kernel,
                            std::size_t stride, std::size_t pad) {
  return {LayerKind::conv2d, in_channels, filters, kernel, stride, pad};
}

LayerSpec LayerSpec::relu() { return {LayerKind::relu}; }

LayerSpec LayerSpec::maxpool2d(std::size_t kernel, std::size_t stride) {
  return {LayerKind::maxpool2d, 0, 0, kernel, stride, 0};
}

LayerSpec LayerSpec::globalavgpool() { return {LayerKind::globalavgpool}; }
LayerSpec LayerSpec::flatten() { return {LayerKind::flatten}; }

std::string LayerSpec::describe() const {
  const auto n = [](std::size_t v) { return std::to_string(v); };
  switch (kind) {
    case LayerKind::dense: return "dense(" + n(in) + "->" + n(out) + ")";
    case LayerKind::conv2d:
      return "conv2d(" + n(in) + "->" + n(out) + ", k=" + n(kernel) + ", s=" + n(stride) +
             ", p=" + n(pad) + ")";
    case LayerKind::maxpool2d: return "maxpool2d(k=" + n(kernel) + ", s=" + n(stride) + ")";
    default: return std::string(to_string(kind));
  }
}

namespace {

std::atomic<std::uint64_t> next_version{1};

std::string position(const std::vector<LayerSpec>& layers, std::size_t i) {
  return i == 0 ? std::string("network input")
                : "layer " + std::to_string(i - 1) + " " + layers[i - 1].describe();
}

Shape chain_shape(const std::vector<LayerSpec>& layers, std::size_t i, const Shape& in) {
  const LayerSpec& l = layers[i];
  const auto fail = [&](const std::string& why) -> BuildError {
    return BuildError("layer " + std::to_string(i) + " " + l.describe() + " cannot follow " +
                      position(layers, i) + " with output " + shape_string(in) + ": " + why);
  };
  switch (l.kind) {
    case LayerKind::dense:
      if (l.in == 0 || l.out == 0) throw fail("widths must be positive");
      if (in != Shape{l.in}) throw fail("expected input [" + std::to_string(l.in) + "]");
      return {l.out};
    case LayerKind::conv2d: {
      if (l.in == 0 || l.out == 0 || l.kernel == 0) throw fail("sizes must be positive");
      if (in.size() != 3 || in[0] != l.in) {
        throw fail("expected " + std::to_string(l.in) + " x H x W input");
      }
      try {
        return {l.out, conv_output_size(in[1], l.kernel, l.stride, l.pad),
                conv_output_size(in[2], l.kernel, l.stride, l.pad)};
      } catch (const ConfigError& e) {
        throw fail(e.what());
      }
    }
    case LayerKind::maxpool2d:
      if (in.size() != 3) throw fail("expected C x H x W input");
      try {
        return {in[0], conv_output_size(in[1], l.kernel, l.stride, 0),
                conv_output_size(in[2], l.kernel, l.stride, 0)};
      } catch (const ConfigError& e) {
        throw fail(e.what());
      }
    case LayerKind::globalavgpool:
      if (in.size() != 3) throw fail("expected C x H x W input");
      return {in[0]};
    case LayerKind::flatten: return {shape_product(in)};
    case LayerKind::relu: return in;
  }
  throw fail("unknown kind");
}

template <typename T>
Shape batch_shape(std::size_t batch, const Shape& sample) {
  Shape s{batch};
  s.insert(s.end(), sample.begin(), sample.end());
  return s;
}

}  // namespace

template <typename T>
BasicNetwork<T> BasicNetwork<T>::build(Architecture arch) {
  if (arch.class_count < 2) throw BuildError("class_count must be at least 2");
  if (arch.input_shape.empty()) throw BuildError("input shape must be nonempty");
  for (std::size_t d : arch.input_shape) {
    if (d == 0) throw BuildError("input dimensions must be positive");
  }
  if (arch.layers.empty()) throw BuildError("network needs at least one layer");

  BasicNetwork net;
  Shape current = arch.input_shape;
  for (std::size_t i = 0; i < arch.layers.size(); ++i) {
    current = chain_shape(arch.layers, i, current);
    net.shapes_.push_back(current);
    const LayerSpec& l = arch.layers[i];
    const std::string prefix = std::to_string(i);
    if (l.kind == LayerKind::dense || l.kind == LayerKind::conv2d) {
      // Dense weights are stored fan-in x fan-out so the forward pass is a
      // plain row-major product.
      const Shape w = l.kind == LayerKind::dense ? Shape{l.in, l.out}
                                                 : Shape{l.out, l.in, l.kernel, l.kernel};
      net.weight_slot_.push_back(static_cast<int>(net.params_.size()));
      net.params_.push_back({prefix + ".weight", BasicTensor<T>(w), BasicTensor<T>(w)});
      net.params_.push_back({prefix + ".bias", BasicTensor<T>({l.out}), BasicTensor<T>({l.out})});
    } else {
      net.weight_slot_.push_back(-1);
    }
  }
  if (current != Shape{arch.class_count}) {
    throw BuildError("network output " + shape_string(current) + " does not match class_count " +
                     std::to_string(arch.class_count));
  }
  net.arch_ = std::move(arch);
  net.touch();
  return net;
}

Network build_network(Architecture arch) { return Network::build(std::move(arch)); }

template <typename T>
void BasicNetwork<T>::touch() noexcept {
  version_ = next_version.fetch_add(1, std::memory_order_relaxed);
}

template <typename T>
const Parameter<T>& BasicNetwork<T>::param(std::string_view name) const {
  for (const auto& p : params_) {
    if (p.name == name) return p;
  }
  throw std::out_of_range("no parameter named '" + std::string(name) + "'");
}

template <typename T>
std::size_t BasicNetwork<T>::param_count() const noexcept {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

template <typename T>
void BasicNetwork<T>::zero_grads() {
  for (auto& p : params_) p.grad.fill(T{0});
}

template <typename T>
template <typename U>
BasicNetwork<U> BasicNetwork<T>::cast() const {
  BasicNetwork<U> out;
  out.arch_ = arch_;
  out.shapes_ = shapes_;
  out.weight_slot_ = weight_slot_;
  for (const auto& p : params_) {
    out.params_.push_back({p.name, p.value.template cast<U>(), p.grad.template cast<U>()});
  }
  out.initialized_ = initialized_;
  out.touch();
  return out;
}

template <typename T>
std::pair<BasicTensor<T>, ForwardCache<T>> BasicNetwork<T>::forward(
    const BasicTensor<T>& batch) const {
  ForwardCache<T> cache;
  BasicTensor<T> logits = run(batch, &cache);
  return {std::move(logits), std::move(cache)};
}

template <typename T>
BasicTensor<T> BasicNetwork<T>::predict(const BasicTensor<T>& batch) const {
  return run(batch, nullptr);
}

template <typename T>
BasicTensor<T> BasicNetwork<T>::run(const BasicTensor<T>& batch, ForwardCache<T>* cache) const {
  if (!initialized_) throw ContractError("forward on a network whose parameters were never initialized");
  if (batch.rank() < 2 ||
      Shape(batch.shape().begin() + 1, batch.shape().end()) != arch_.input_shape) {
    throw DimensionError("batch shape " + shape_string(batch.shape()) +
                         " does not match network input B x " + shape_string(arch_.input_shape));
  }
  const std::size_t bsz = batch.dim(0);
  if (cache) {
    cache->params_version = version_;
    cache->inputs.clear();
    cache->pool_argmax.assign(arch_.layers.size(), {});
  }

  BasicTensor<T> x = batch;
  for (std::size_t li = 0; li < arch_.layers.size(); ++li) {
    const LayerSpec& l = arch_.layers[li];
    const Shape& in_sample = li == 0 ? arch_.input_shape : shapes_[li - 1];
    BasicTensor<T> y(batch_shape<T>(bsz, shapes_[li]));
    switch (l.kind) {
      case LayerKind::dense: {
        const auto& w = params_[weight_slot_[li]].value;
        const auto& b = params_[weight_slot_[li] + 1].value;
        kernels::gemm(x.raw(), w.raw(), y.raw(), bsz, l.in, l.out, false);
        for (std::size_t i = 0; i < bsz; ++i) {
          T* row = y.raw() + i * l.out;
          for (std::size_t j = 0; j < l.out; ++j) row[j] += b[j];
        }
        break;
      }
      case LayerKind::conv2d: {
        const auto& w = params_[weight_slot_[li]].value;
        const auto& b = params_[weight_slot_[li] + 1].value;
        const std::size_t ckk = l.in * l.kernel * l.kernel;
        const std::size_t plane = shapes_[li][1] * shapes_[li][2];
        const std::size_t in_size = shape_product(in_sample);
        std::vector<T> columns(ckk * plane);
        for (std::size_t s = 0; s < bsz; ++s) {
          kernels::im2col(x.raw() + s * in_size, l.in, in_sample[1], in_sample[2], l.kernel,
                          l.stride, l.pad, columns.data());
          T* out = y.raw() + s * l.out * plane;
          kernels::gemm(w.raw(), columns.data(), out, l.out, ckk, plane, false);
          for (std::size_t f = 0; f < l.out; ++f) {
            for (std::size_t p = 0; p < plane; ++p) out[f * plane + p] += b[f];
          }
        }
        break;
      }
      case LayerKind::relu:
        for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > T{0} ? x[i] : T{0};
        break;
      case LayerKind::maxpool2d: {
        const std::size_t channels = in_sample[0], h = in_sample[1], w = in_sample[2];
        const std::size_t oh = shapes_[li][1], ow = shapes_[li][2];
        std::vector<std::uint32_t> argmax(y.size());
        for (std::size_t s = 0; s < bsz; ++s) {
          const T* src = x.raw() + s * channels * h * w;
          for (std::size_t c = 0; c < channels; ++c) {
            for (std::size_t oy = 0; oy < oh; ++oy) {
              for (std::size_t ox = 0; ox < ow; ++ox) {
                std::size_t best = (c * h + oy * l.stride) * w + ox * l.stride;
                for (std::size_t ky = 0; ky < l.kernel; ++ky) {
                  for (std::size_t kx = 0; kx < l.kernel; ++kx) {
                    const std::size_t idx = (c * h + oy * l.stride + ky) * w + ox * l.stride + kx;
                    if (src[idx] > src[best]) best = idx;
                  }
                }
                const std::size_t o = ((s * channels + c) * oh + oy) * ow + ox;
                y[o] = src[best];
                argmax[o] = static_cast<std::uint32_t>(best);
              }
            }
          }
        }
        if (cache) cache->pool_argmax[li] = std::move(argmax);
        break;
      }
      case LayerKind::globalavgpool: {
        const std::size_t channels = in_sample[0], plane = in_sample[1] * in_sample[2];
        const T scale = T{1} / static_cast<T>(plane);
        for (std::size_t s = 0; s < bsz; ++s) {
          for (std::size_t c = 0; c < channels; ++c) {
            const T* src = x.raw() + (s * channels + c) * plane;
            T sum{0};
            for (std::size_t p = 0; p < plane; ++p) sum += src[p];
            y[s * channels + c] = sum * scale;
          }
        }
        break;
      }
      case LayerKind::flatten:
        std::copy(x.data().begin(), x.data().end(), y.data().begin());
        break;
    }
    if (!y.all_finite()) {
      throw NumericError("non-finite activation at layer " + std::to_string(li) + " " +
                         l.describe());
    }
    if (cache) cache->inputs.push_back(std::move(x));
    x = std::move(y);
  }
  return x;
}

template <typename T>
void BasicNetwork<T>::backward(const ForwardCache<T>& cache, const BasicTensor<T>& dlogits) {
  if (cache.params_version != version_ || cache.inputs.size() != arch_.layers.size()) {
    throw ContractError("backward: forward cache is stale (parameters changed since forward)");
  }
  const std::size_t bsz = cache.inputs.front().dim(0);
  if (dlogits.shape() != Shape{bsz, arch_.class_count}) {
    throw DimensionError("backward: dlogits " + shape_string(dlogits.shape()) + " expected " +
                         shape_string({bsz, arch_.class_count}));
  }
  zero_grads();

  BasicTensor<T> dy = dlogits;
  for (std::size_t li = arch_.layers.size(); li-- > 0;) {
    const LayerSpec& l = arch_.layers[li];
    const BasicTensor<T>& x = cache.inputs[li];
    const Shape& in_sample = li == 0 ? arch_.input_shape : shapes_[li - 1];
    const bool need_dx = li > 0;
    BasicTensor<T> dx;
    if (need_dx) dx = BasicTensor<T>(x.shape());

    switch (l.kind) {
      case LayerKind::dense: {
        auto& w = params_[weight_slot_[li]];
        auto& b = params_[weight_slot_[li] + 1];
        kernels::gemm_tn(x.raw(), dy.raw(), w.grad.raw(), l.in, bsz, l.out, false);
        for (std::size_t i = 0; i < bsz; ++i) {
          const T* row = dy.raw() + i * l.out;
          for (std::size_t j = 0; j < l.out; ++j) b.grad[j] += row[j];
        }
        if (need_dx) kernels::gemm_nt(dy.raw(), w.value.raw(), dx.raw(), bsz, l.out, l.in, false);
        break;
      }
      case LayerKind::conv2d: {
        auto& w = params_[weight_slot_[li]];
        auto& b = params_[weight_slot_[li] + 1];
        const std::size_t ckk = l.in * l.kernel * l.kernel;
        const std::size_t plane = shapes_[li][1] * shapes_[li][2];
        const std::size_t in_size = shape_product(in_sample);
        std::vector<T> columns(ckk * plane);
        for (std::size_t s = 0; s < bsz; ++s) {
          const T* g = dy.raw() + s * l.out * plane;
          kernels::im2col(x.raw() + s * in_size, l.in, in_sample[1], in_sample[2], l.kernel,
                          l.stride, l.pad, columns.data());
          kernels::gemm_nt(g, columns.data(), w.grad.raw(), l.out, plane, ckk, true);
          for (std::size_t f = 0; f < l.out; ++f) {
            T sum{0};
            for (std::size_t p = 0; p < plane; ++p) sum += g[f * plane + p];
            b.grad[f] += sum;
          }
          if (need_dx) {
            kernels::gemm_tn(w.value.raw(), g, columns.data(), ckk, l.out, plane, false);
            kernels::col2im(columns.data(), l.in, in_sample[1], in_sample[2], l.kernel, l.stride,
                            l.pad, dx.raw() + s * in_size);
          }
        }
        break;
      }
      case LayerKind::relu:
        if (need_dx) {
          for (std::size_t i = 0; i < x.size(); ++i) dx[i] = x[i] > T{0} ? dy[i] : T{0};
        }
        break;
      case LayerKind::maxpool2d:
        if (need_dx) {
          const auto& argmax = cache.pool_argmax[li];
          const std::size_t in_size = shape_product(in_sample);
          const std::size_t out_size = shape_product(shapes_[li]);
          for (std::size_t s = 0; s < bsz; ++s) {
            for (std::size_t o = 0; o < out_size; ++o) {
              dx[s * in_size + argmax[s * out_size + o]] += dy[s * out_size + o];
            }
          }
        }
        break;
      case LayerKind::globalavgpool:
        if (need_dx) {
          const std::size_t channels = in_sample[0], plane = in_sample[1] * in_sample[2];
          const T scale = T{1} / static_cast<T>(plane);
          for (std::size_t s = 0; s < bsz; ++s) {
            for (std::size_t c = 0; c < channels; ++c) {
              const T g = dy[s * channels + c] * scale;
              T* dst = dx.raw() + (s * channels + c) * plane;
              for (std::size_t p = 0; p < plane; ++p) dst[p] = g;
            }
          }
        }
        break;
      case LayerKind::flatten:
        if (need_dx) std::copy(dy.data().begin(), dy.data().end(), dx.data().begin());
        break;
    }
    if (need_dx) dy = std::move(dx);
  }
}

template <typename T>
void init_params(BasicNetwork<T>& network, SeededRng& rng) {
  const auto& layers = network.layers();
  auto params = network.mutable_params();
  std::size_t slot = 0;
  for (const LayerSpec& l : layers) {
    if (l.kind != LayerKind::dense && l.kind != LayerKind::conv2d) continue;
    const std::size_t fan_in = l.kind == LayerKind::dense ? l.in : l.in * l.kernel * l.kernel;
    const double std_dev = std::sqrt(2.0 / static_cast<double>(fan_in));
    for (auto& v : params[slot].value.data()) v = static_cast<T>(rng.normal() * std_dev);
    params[slot + 1].value.fill(T{0});
    slot += 2;
  }
  network.zero_grads();
  network.mark_initialized();
}

Architecture preset_architecture(std::string_view name, const Shape& input_shape,
                                 std::size_t class_count) {
  Architecture arch{input_shape, {}, class_count};
  if (name == "mlp-small") {
    arch.layers = {LayerSpec::flatten(), LayerSpec::dense(shape_product(input_shape), 32),
                   LayerSpec::relu(), LayerSpec::dense(32, class_count)};
  } else if (name == "cnn-small") {
    if (input_shape.size() != 3) {
      throw ConfigError("cnn-small needs C x H x W input, got " + shape_string(input_shape), "arch");
    }
    const std::size_t c = input_shape[0];
    const std::size_t flat = 16 * (input_shape[1] / 4) * (input_shape[2] / 4);
    arch.layers = {LayerSpec::conv2d(c, 8, 3, 1, 1),  LayerSpec::relu(),
                   LayerSpec::maxpool2d(2, 2),        LayerSpec::conv2d(8, 16, 3, 1, 1),
                   LayerSpec::relu(),                 LayerSpec::maxpool2d(2, 2),
                   LayerSpec::flatten(),              LayerSpec::dense(flat, 192),
                   LayerSpec::relu(),                 LayerSpec::dense(192, class_count)};
  } else {
    throw ConfigError("unknown architecture preset '" + std::string(name) + "'", "arch");
  }
  return arch;
}

double preset_learning_rate(std::string_view name) {
  if (name == "mlp-small") return 0.05;
  if (name == "cnn-small") return 0.03;
  throw ConfigError("unknown architecture preset '" + std::string(name) + "'", "arch");
}

template class BasicNetwork<float>;
template class BasicNetwork<double>;
template BasicNetwork<double> BasicNetwork<float>::cast<double>() const;
template BasicNetwork<float> BasicNetwork<double>::cast<float>() const;
template void init_params(BasicNetwork<float>&, SeededRng&);
template void init_params(BasicNetwork<double>&, SeededRng&);

}  // namespace iskd
