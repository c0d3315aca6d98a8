// Shared test helpers: independent reference implementations and the
// finite-difference gradient checker. Nothing here calls into the kernels
// it is used to verify.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <string>
#include <vector>

#include "iskd/losses.hpp"
#include "iskd/network.hpp"
#include "iskd/rng.hpp"
#include "iskd/tensor.hpp"

namespace iskd::testing {

// ---------------------------------------------------------------- oracles

/// Naive triple loop, j-k-i order with long double accumulation.
inline std::vector<double> oracle_matmul(const std::vector<double>& a, const std::vector<double>& b,
                                         std::size_t m, std::size_t k, std::size_t n) {
  std::vector<double> c(m * n);
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t i = 0; i < m; ++i) {
      long double sum = 0;
      for (std::size_t p = 0; p < k; ++p) sum += (long double)a[i * k + p] * b[p * n + j];
      c[i * n + j] = static_cast<double>(sum);
    }
  }
  return c;
}

/// Direct sliding-window cross-correlation with explicit zero padding.
inline Tensor64 oracle_conv2d(const Tensor64& in, const Tensor64& w, std::size_t stride,
                              std::size_t pad) {
  const std::size_t c = in.dim(0), h = in.dim(1), wd = in.dim(2);
  const std::size_t f = w.dim(0), k = w.dim(2);
  const std::size_t oh = (h + 2 * pad - k) / stride + 1, ow = (wd + 2 * pad - k) / stride + 1;
  Tensor64 out({f, oh, ow});
  for (std::size_t fi = 0; fi < f; ++fi)
    for (std::size_t y = 0; y < oh; ++y)
      for (std::size_t x = 0; x < ow; ++x) {
        long double sum = 0;
        for (std::size_t ci = 0; ci < c; ++ci)
          for (std::size_t ky = 0; ky < k; ++ky)
            for (std::size_t kx = 0; kx < k; ++kx) {
              const long iy = long(y * stride + ky) - long(pad);
              const long ix = long(x * stride + kx) - long(pad);
              if (iy < 0 || ix < 0 || iy >= long(h) || ix >= long(wd)) continue;
              sum += (long double)in[(ci * h + iy) * wd + ix] * w[((fi * c + ci) * k + ky) * k + kx];
            }
        out[(fi * oh + y) * ow + x] = static_cast<double>(sum);
      }
  return out;
}

/// p_j = exp(z_j / T) / sum_i exp(z_i / T), straight from the definition.
inline std::vector<long double> oracle_probs(std::span<const double> z, double temperature = 1.0) {
  std::vector<long double> p(z.size());
  long double sum = 0;
  for (std::size_t j = 0; j < z.size(); ++j) sum += p[j] = std::exp((long double)z[j] / temperature);
  for (auto& v : p) v /= sum;
  return p;
}

/// Mean over rows of -log p_y.
inline double oracle_cross_entropy(const Tensor64& logits, const std::vector<int>& labels) {
  long double total = 0;
  for (std::size_t i = 0; i < logits.dim(0); ++i) {
    total -= std::log(oracle_probs(logits.row(i))[labels[i]]);
  }
  return static_cast<double>(total / logits.dim(0));
}

/// Mean over rows of sum_j p_t log(p_t / p_s).
inline double oracle_kl(const Tensor64& student, const Tensor64& teacher, double temperature = 1.0) {
  long double total = 0;
  for (std::size_t i = 0; i < student.dim(0); ++i) {
    const auto ps = oracle_probs(student.row(i), temperature);
    const auto pt = oracle_probs(teacher.row(i), temperature);
    for (std::size_t j = 0; j < ps.size(); ++j) total += pt[j] * std::log(pt[j] / ps[j]);
  }
  return static_cast<double>(total / student.dim(0));
}

// ------------------------------------------------------------ generators

template <typename T = double>
BasicTensor<T> random_tensor(const Shape& shape, SeededRng& rng, double scale = 1.0) {
  BasicTensor<T> t(shape);
  for (auto& v : t.data()) v = static_cast<T>(scale * rng.normal());
  return t;
}

inline std::vector<int> random_labels(std::size_t n, std::size_t classes, SeededRng& rng) {
  std::vector<int> out(n);
  for (auto& v : out) v = static_cast<int>(rng.below(classes));
  return out;
}

// -------------------------------------------------------- gradient check

/// |a - n| / max(|a|, |n|, floor). The floor keeps gradients that are zero
/// up to rounding from producing meaningless ratios.
inline double relative_error(double analytic, double numeric, double floor = 1e-6) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

struct GradCheck {
  double max_relative_error = 0.0;
  std::size_t checked = 0;
  std::string worst;  // parameter[index] with the largest error
};

/// Central differences of f at x for every coordinate, compared against the
/// analytic gradient `grad`.
inline void compare_gradient(std::span<double> x, std::span<const double> grad,
                             const std::function<double()>& f, double h, const std::string& label,
                             GradCheck& out) {
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double saved = x[i];
    x[i] = saved + h;
    const double up = f();
    x[i] = saved - h;
    const double down = f();
    x[i] = saved;
    const double err = relative_error(grad[i], (up - down) / (2 * h));
    ++out.checked;
    if (err > out.max_relative_error) {
      out.max_relative_error = err;
      out.worst = label + "[" + std::to_string(i) + "]";
    }
  }
}

/// True when no ReLU input or max-pool window is close enough to a kink
/// that a +/- h perturbation could cross it.
inline bool away_from_kinks(const Network64& net, const ForwardCache<double>& cache, double margin) {
  const auto& layers = net.layers();
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& in = cache.inputs[l];
    if (layers[l].kind == LayerKind::relu) {
      for (double v : in.data()) {
        if (std::abs(v) < margin) return false;
      }
    } else if (layers[l].kind == LayerKind::maxpool2d) {
      const auto& s = l == 0 ? net.input_shape() : net.output_shapes()[l - 1];
      const std::size_t c = s[0], h = s[1], w = s[2], k = layers[l].kernel, st = layers[l].stride;
      const std::size_t oh = (h - k) / st + 1, ow = (w - k) / st + 1;
      for (std::size_t b = 0; b < in.dim(0); ++b)
        for (std::size_t ci = 0; ci < c; ++ci)
          for (std::size_t y = 0; y < oh; ++y)
            for (std::size_t x = 0; x < ow; ++x) {
              std::vector<double> win;
              for (std::size_t ky = 0; ky < k; ++ky)
                for (std::size_t kx = 0; kx < k; ++kx)
                  win.push_back(in[((b * c + ci) * h + y * st + ky) * w + x * st + kx]);
              std::sort(win.rbegin(), win.rend());
              if (win.size() > 1 && win[0] - win[1] < margin) return false;
            }
    }
  }
  return true;
}

/// Checks every parameter gradient of `net` under the scalar loss
/// sum(logits * projection), whose dlogits is the projection itself.
inline GradCheck check_network_gradients(Network64& net, const Tensor64& batch,
                                         const Tensor64& projection, double h = 1e-4) {
  const auto loss = [&] {
    const Tensor64 logits = net.predict(batch);
    long double s = 0;
    for (std::size_t i = 0; i < logits.size(); ++i) s += (long double)logits[i] * projection[i];
    return static_cast<double>(s);
  };
  auto [logits, cache] = net.forward(batch);
  net.backward(cache, projection);
  GradCheck out;
  for (auto& p : net.mutable_params()) {
    const Tensor64 grad = p.grad;
    compare_gradient(p.value.data(), grad.data(), loss, h, p.name, out);
  }
  return out;
}

/// Small single-purpose architectures, one per layer kind, each ending in a
/// dense head so every case has trainable parameters downstream of the layer.
inline Architecture layer_case(LayerKind kind, SeededRng& rng) {
  const std::size_t classes = 2 + rng.below(3);
  Architecture a;
  a.class_count = classes;
  switch (kind) {
    case LayerKind::dense: {
      const std::size_t in = 2 + rng.below(5), mid = 2 + rng.below(5);
      a.input_shape = {in};
      a.layers = {LayerSpec::dense(in, mid), LayerSpec::dense(mid, classes)};
      break;
    }
    case LayerKind::conv2d: {
      const std::size_t c = 1 + rng.below(2), f = 1 + rng.below(3), k = 1 + 2 * rng.below(2);
      const std::size_t stride = 1 + rng.below(2), pad = rng.below(2);
      std::size_t hw = 4 + rng.below(3);
      while ((hw + 2 * pad - k) % stride != 0) ++hw;
      const std::size_t o = (hw + 2 * pad - k) / stride + 1;
      a.input_shape = {c, hw, hw};
      a.layers = {LayerSpec::conv2d(c, f, k, stride, pad), LayerSpec::flatten(),
                  LayerSpec::dense(f * o * o, classes)};
      break;
    }
    case LayerKind::relu: {
      const std::size_t in = 3 + rng.below(4), mid = 3 + rng.below(4);
      a.input_shape = {in};
      a.layers = {LayerSpec::dense(in, mid), LayerSpec::relu(), LayerSpec::dense(mid, classes)};
      break;
    }
    case LayerKind::maxpool2d: {
      const std::size_t f = 1 + rng.below(2);
      a.input_shape = {1, 4, 4};
      a.layers = {LayerSpec::conv2d(1, f, 3, 1, 1), LayerSpec::maxpool2d(2, 2), LayerSpec::flatten(),
                  LayerSpec::dense(f * 4, classes)};
      break;
    }
    case LayerKind::globalavgpool: {
      const std::size_t f = 1 + rng.below(3);
      a.input_shape = {2, 4, 4};
      a.layers = {LayerSpec::conv2d(2, f, 3, 1, 1), LayerSpec::globalavgpool(),
                  LayerSpec::dense(f, classes)};
      break;
    }
    case LayerKind::flatten: {
      const std::size_t f = 1 + rng.below(2);
      a.input_shape = {1, 3, 3};
      a.layers = {LayerSpec::conv2d(1, f, 2, 1, 0), LayerSpec::flatten(), LayerSpec::dense(f * 4, classes)};
      break;
    }
  }
  return a;
}

inline const std::vector<LayerKind>& all_layer_kinds() {
  static const std::vector<LayerKind> kinds{LayerKind::dense,         LayerKind::conv2d,
                                            LayerKind::relu,          LayerKind::maxpool2d,
                                            LayerKind::globalavgpool, LayerKind::flatten};
  return kinds;
}

/// Max relative gradient error over `instances` random draws of one layer
/// kind, resampling draws that sit on a ReLU or max-pool kink.
inline GradCheck gradient_check_layer(LayerKind kind, std::size_t instances, std::uint64_t seed) {
  SeededRng rng(seed);
  GradCheck worst;
  for (std::size_t done = 0; done < instances;) {
    Network64 net = Network64::build(layer_case(kind, rng));
    init_params(net, rng);
    for (auto& p : net.mutable_params()) {
      for (auto& v : p.value.data()) v += 0.1 * rng.normal();  // nonzero biases too
    }
    Shape shape{2 + rng.below(2)};
    shape.insert(shape.end(), net.input_shape().begin(), net.input_shape().end());
    const Tensor64 batch = random_tensor(shape, rng);
    if (!away_from_kinks(net, net.forward(batch).second, 1e-2)) continue;
    const Tensor64 projection = random_tensor({shape[0], net.class_count()}, rng);
    const GradCheck g = check_network_gradients(net, batch, projection);
    worst.checked += g.checked;
    if (g.max_relative_error >= worst.max_relative_error) {
      worst.max_relative_error = g.max_relative_error;
      worst.worst = g.worst;
    }
    ++done;
  }
  return worst;
}

enum class LossKind { cross_entropy, kl_distill, kd_total };

/// Max relative error of the loss gradient w.r.t. student logits.
inline GradCheck gradient_check_loss(LossKind kind, std::size_t instances, std::uint64_t seed) {
  SeededRng rng(seed);
  GradCheck worst;
  for (std::size_t n = 0; n < instances; ++n) {
    const std::size_t b = 1 + rng.below(8), c = 2 + rng.below(9);
    Tensor64 student = random_tensor({b, c}, rng, 2.0);
    const Tensor64 teacher = random_tensor({b, c}, rng, 2.0);
    const std::vector<int> labels = random_labels(b, c, rng);
    KDConfig kd;
    kd.alpha = rng.uniform();
    kd.temperature = rng.uniform(0.5, 4.0);
    kd.t2_scale = rng.below(2) == 1;
    const auto eval = [&]() -> LossResult<double> {
      switch (kind) {
        case LossKind::cross_entropy: return cross_entropy(student, std::span<const int>(labels));
        case LossKind::kl_distill: return kl_distill(student, teacher, kd);
        case LossKind::kd_total: return kd_total(student, teacher, std::span<const int>(labels), kd);
      }
      return {};
    };
    const Tensor64 grad = eval().dlogits;
    GradCheck g;
    compare_gradient(student.data(), grad.data(), [&] { return eval().loss; }, 1e-4, "dlogits", g);
    worst.checked += g.checked;
    worst.max_relative_error = std::max(worst.max_relative_error, g.max_relative_error);
  }
  return worst;
}

// ------------------------------------------------------------------ files

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::filesystem::path& p, const std::string& bytes) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out << bytes;
}

/// Fresh, empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("iskd_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace iskd::testing
