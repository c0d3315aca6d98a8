#include "iskd/ops.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace iskd {

namespace {

template <typename T>
void require_finite(const BasicTensor<T>& t, const char* op) {
  if (!t.all_finite()) throw NumericError(std::string(op) + ": non-finite value");
}

}  // namespace

namespace kernels {

template <typename T>
void gemm(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n,
          bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    T* crow = c + i * n;
    if (!accumulate) std::fill(crow, crow + n, T{0});
    const T* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const T aip = arow[p];
      const T* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
    }
  }
}

template <typename T>
void gemm_tn(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n,
             bool accumulate) {
  if (!accumulate) std::fill(c, c + m * n, T{0});
  for (std::size_t p = 0; p < k; ++p) {
    const T* arow = a + p * m;
    const T* brow = b + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const T api = arow[i];
      T* crow = c + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += api * brow[j];
    }
  }
}

template <typename T>
void gemm_nt(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n,
             bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* arow = a + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const T* brow = b + j * k;
      T sum{0};
      for (std::size_t p = 0; p < k; ++p) sum += arow[p] * brow[p];
      c[i * n + j] = accumulate ? c[i * n + j] + sum : sum;
    }
  }
}

template <typename T>
void im2col(const T* image, std::size_t channels, std::size_t height, std::size_t width,
            std::size_t kernel, std::size_t stride, std::size_t pad, T* columns) {
  const std::size_t out_h = (height + 2 * pad - kernel) / stride + 1;
  const std::size_t out_w = (width + 2 * pad - kernel) / stride + 1;
  const std::size_t plane = out_h * out_w;
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t ky = 0; ky < kernel; ++ky) {
      for (std::size_t kx = 0; kx < kernel; ++kx) {
        T* dst = columns + ((c * kernel + ky) * kernel + kx) * plane;
        for (std::size_t oy = 0; oy < out_h; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * stride + ky) -
                          static_cast<std::ptrdiff_t>(pad);
          for (std::size_t ox = 0; ox < out_w; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * stride + kx) -
                            static_cast<std::ptrdiff_t>(pad);
            const bool inside = iy >= 0 && ix >= 0 && iy < static_cast<std::ptrdiff_t>(height) &&
                                ix < static_cast<std::ptrdiff_t>(width);
            dst[oy * out_w + ox] = inside ? image[(c * height + iy) * width + ix] : T{0};
          }
        }
      }
    }
  }
}

template <typename T>
void col2im(const T* columns, std::size_t channels, std::size_t height, std::size_t width,
            std::size_t kernel, std::size_t stride, std::size_t pad, T* image) {
  const std::size_t out_h = (height + 2 * pad - kernel) / stride + 1;
  const std::size_t out_w = (width + 2 * pad - kernel) / stride + 1;
  const std::size_t plane = out_h * out_w;
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t ky = 0; ky < kernel; ++ky) {
      for (std::size_t kx = 0; kx < kernel; ++kx) {
        const T* src = columns + ((c * kernel + ky) * kernel + kx) * plane;
        for (std::size_t oy = 0; oy < out_h; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * stride + ky) -
                          static_cast<std::ptrdiff_t>(pad);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(height)) continue;
          for (std::size_t ox = 0; ox < out_w; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * stride + kx) -
                            static_cast<std::ptrdiff_t>(pad);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(width)) continue;
            image[(c * height + iy) * width + ix] += src[oy * out_w + ox];
          }
        }
      }
    }
  }
}

}  // namespace kernels

template <typename T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul: cannot multiply " + shape_string(a.shape()) + " by " +
                         shape_string(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  BasicTensor<T> c({m, n});
  kernels::gemm(a.raw(), b.raw(), c.raw(), m, k, n, false);
  require_finite(c, "matmul");
  return c;
}

std::size_t conv_output_size(std::size_t in, std::size_t kernel, std::size_t stride,
                             std::size_t pad) {
  if (stride == 0) throw ConfigError("stride must be positive");
  if (kernel == 0 || in + 2 * pad < kernel) {
    throw ConfigError("window of size " + std::to_string(kernel) + " does not fit input " +
                      std::to_string(in) + " with pad " + std::to_string(pad));
  }
  const std::size_t span = in + 2 * pad - kernel;
  if (span % stride != 0) {
    throw ConfigError("output size (" + std::to_string(in) + " + 2*" + std::to_string(pad) +
                      " - " + std::to_string(kernel) + ")/" + std::to_string(stride) +
                      " + 1 is not an integer");
  }
  return span / stride + 1;
}

template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& input, const BasicTensor<T>& kernels,
                      std::size_t stride, std::size_t pad) {
  if (input.rank() != 3 || kernels.rank() != 4 || kernels.dim(1) != input.dim(0) ||
      kernels.dim(2) != kernels.dim(3)) {
    throw DimensionError("conv2d: input " + shape_string(input.shape()) +
                         " incompatible with kernels " + shape_string(kernels.shape()));
  }
  const std::size_t channels = input.dim(0), height = input.dim(1), width = input.dim(2);
  const std::size_t filters = kernels.dim(0), k = kernels.dim(2);
  const std::size_t out_h = conv_output_size(height, k, stride, pad);
  const std::size_t out_w = conv_output_size(width, k, stride, pad);
  std::vector<T> columns(channels * k * k * out_h * out_w);
  kernels::im2col(input.raw(), channels, height, width, k, stride, pad, columns.data());
  BasicTensor<T> out({filters, out_h, out_w});
  kernels::gemm(kernels.raw(), columns.data(), out.raw(), filters, channels * k * k,
                out_h * out_w, false);
  require_finite(out, "conv2d");
  return out;
}

template <typename T>
BasicTensor<T> softmax(const BasicTensor<T>& logits) {
  if (logits.rank() != 1 || logits.size() < 2) {
    throw DimensionError("softmax: expected a vector of at least 2 logits, got " +
                         shape_string(logits.shape()));
  }
  BasicTensor<T> row = logits;
  row.reshape({1, logits.size()});
  BasicTensor<T> out = softmax_rows(row);
  out.reshape({logits.size()});
  return out;
}

template <typename T>
BasicTensor<T> softmax_rows(const BasicTensor<T>& logits, double temperature) {
  require_finite(logits, "softmax");
  if (logits.rank() != 2) throw DimensionError("softmax_rows: expected B x C logits");
  const T inv_t = static_cast<T>(1.0 / temperature);
  BasicTensor<T> out(logits.shape());
  const std::size_t classes = logits.dim(1);
  for (std::size_t i = 0; i < logits.dim(0); ++i) {
    const auto in = logits.row(i);
    auto dst = out.row(i);
    T top = in[0] * inv_t;
    for (std::size_t j = 1; j < classes; ++j) top = std::max(top, in[j] * inv_t);
    T sum{0};
    for (std::size_t j = 0; j < classes; ++j) {
      dst[j] = std::exp(in[j] * inv_t - top);
      sum += dst[j];
    }
    for (std::size_t j = 0; j < classes; ++j) dst[j] /= sum;
  }
  return out;
}

template <typename T>
BasicTensor<T> log_softmax_rows(const BasicTensor<T>& logits, double temperature) {
  require_finite(logits, "log_softmax");
  if (logits.rank() != 2) throw DimensionError("log_softmax_rows: expected B x C logits");
  const T inv_t = static_cast<T>(1.0 / temperature);
  BasicTensor<T> out(logits.shape());
  const std::size_t classes = logits.dim(1);
  for (std::size_t i = 0; i < logits.dim(0); ++i) {
    const auto in = logits.row(i);
    auto dst = out.row(i);
    T top = in[0] * inv_t;
    for (std::size_t j = 1; j < classes; ++j) top = std::max(top, in[j] * inv_t);
    T sum{0};
    for (std::size_t j = 0; j < classes; ++j) sum += std::exp(in[j] * inv_t - top);
    const T log_sum = std::log(sum);
    for (std::size_t j = 0; j < classes; ++j) dst[j] = in[j] * inv_t - top - log_sum;
  }
  return out;
}

template <typename T>
BasicTensor<T> randn(const Shape& shape, SeededRng& rng) {
  BasicTensor<T> out(shape);
  for (auto& v : out.data()) v = static_cast<T>(rng.normal());
  return out;
}

#define ISKD_INSTANTIATE_OPS(T)                                                             \
  template BasicTensor<T> matmul(const BasicTensor<T>&, const BasicTensor<T>&);           \
  template BasicTensor<T> conv2d(const BasicTensor<T>&, const BasicTensor<T>&, std::size_t, \
                                 std::size_t);                                              \
  template BasicTensor<T> softmax(const BasicTensor<T>&);                                   \
  template BasicTensor<T> softmax_rows(const BasicTensor<T>&, double);                      \
  template BasicTensor<T> log_softmax_rows(const BasicTensor<T>&, double);                  \
  template BasicTensor<T> randn<T>(const Shape&, SeededRng&);                               \
  template void kernels::gemm(const T*, const T*, T*, std::size_t, std::size_t,             \
                              std::size_t, bool);                                           \
  template void kernels::gemm_tn(const T*, const T*, T*, std::size_t, std::size_t,          \
                                 std::size_t, bool);                                        \
  template void kernels::gemm_nt(const T*, const T*, T*, std::size_t, std::size_t,          \
                                 std::size_t, bool);                                        \
  template void kernels::im2col(const T*, std::size_t, std::size_t, std::size_t,            \
                                std::size_t, std::size_t, std::size_t, T*);                 \
  template void kernels::col2im(const T*, std::size_t, std::size_t, std::size_t,            \
                                std::size_t, std::size_t, std::size_t, T*);

ISKD_INSTANTIATE_OPS(float)
ISKD_INSTANTIATE_OPS(double)

#undef ISKD_INSTANTIATE_OPS

}  // namespace iskd
