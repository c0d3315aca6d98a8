#pragma once

#include <cstddef>
#include <span>

#include "iskd/rng.hpp"
#include "iskd/tensor.hpp"

namespace iskd {

/// M x K times K x N. Each output element accumulates over k in ascending
/// order, so results are bitwise reproducible.
template <typename T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b);

/// Output spatial size of a sliding window; throws ConfigError unless
/// (in + 2*pad - kernel) is a nonnegative multiple of stride.
std::size_t conv_output_size(std::size_t in, std::size_t kernel, std::size_t stride,
                             std::size_t pad);

/// Cross-correlation (no kernel flip) with zero padding.
/// input: C x H x W, kernels: F x C x k x k, result: F x H' x W'.
template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& input, const BasicTensor<T>& kernels,
                      std::size_t stride, std::size_t pad);

/// Softmax of a length-C vector (C >= 2), max-subtracted.
template <typename T>
BasicTensor<T> softmax(const BasicTensor<T>& logits);

/// Row-wise softmax of B x C logits divided by `temperature`.
template <typename T>
BasicTensor<T> softmax_rows(const BasicTensor<T>& logits, double temperature = 1.0);

/// Row-wise log-softmax of B x C logits divided by `temperature`.
template <typename T>
BasicTensor<T> log_softmax_rows(const BasicTensor<T>& logits, double temperature = 1.0);

/// I.i.d. standard normal draws in row-major order.
template <typename T = float>
BasicTensor<T> randn(const Shape& shape, SeededRng& rng);

/// Raw kernels shared by the layers. Pointers address row-major blocks.
namespace kernels {

/// c (M x N) = a (M x K) * b (K x N), or c += ... when accumulate.
template <typename T>
void gemm(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n,
          bool accumulate);

/// c (M x N) = a^T * b with a stored K x M and b stored K x N.
template <typename T>
void gemm_tn(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n,
             bool accumulate);

/// c (M x N) = a * b^T with a stored M x K and b stored N x K.
template <typename T>
void gemm_nt(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n,
             bool accumulate);

/// Unfolds one C x H x W image into (C*k*k) x (H'*W') columns.
template <typename T>
void im2col(const T* image, std::size_t channels, std::size_t height, std::size_t width,
            std::size_t kernel, std::size_t stride, std::size_t pad, T* columns);

/// Adjoint of im2col: scatters columns back, accumulating into `image`.
template <typename T>
void col2im(const T* columns, std::size_t channels, std::size_t height, std::size_t width,
            std::size_t kernel, std::size_t stride, std::size_t pad, T* image);

}  // namespace kernels

}  // namespace iskd
