#pragma once

// Dense inner loops behind the tape ops. Every kernel has a serial reference
// in `serial::` and an OpenMP version in `parallel::`. The parallel versions
// split work over independent output rows (or batch samples) and keep each
// output's summation order identical to the serial one, so the two produce
// bit-identical results for any thread count.

#include <cstddef>
#include <span>

namespace dyntask::kernels {

struct ConvGeometry {
  std::size_t batch = 1, channels = 1, height = 1, width = 1;
  std::size_t kernel_h = 1, kernel_w = 1;
  std::size_t stride = 1, padding = 0;

  std::size_t out_h() const { return (height + 2 * padding - kernel_h) / stride + 1; }
  std::size_t out_w() const { return (width + 2 * padding - kernel_w) / stride + 1; }
  std::size_t patch() const { return channels * kernel_h * kernel_w; }
  std::size_t col_rows() const { return batch * out_h() * out_w(); }
};

namespace serial {

// c[m x n] = a[m x k] * b[k x n]
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, std::span<const double> a,
             std::span<const double> b, std::span<double> c);
// c[m x n] = a[k x m]^T * b[k x n]
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, std::span<const double> a,
             std::span<const double> b, std::span<double> c);
// c[m x n] = a[m x k] * b[n x k]^T
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, std::span<const double> a,
             std::span<const double> b, std::span<double> c);

// NCHW image -> (batch*out_h*out_w) x (channels*kh*kw) patch matrix.
void im2col(const ConvGeometry& g, std::span<const double> image, std::span<double> cols);
// Adjoint of im2col: overwrites `image` with the scattered sum of patches.
void col2im(const ConvGeometry& g, std::span<const double> cols, std::span<double> image);

}  // namespace serial

namespace parallel {

void gemm_nn(std::size_t m, std::size_t n, std::size_t k, std::span<const double> a,
             std::span<const double> b, std::span<double> c);
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, std::span<const double> a,
             std::span<const double> b, std::span<double> c);
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, std::span<const double> a,
             std::span<const double> b, std::span<double> c);
void im2col(const ConvGeometry& g, std::span<const double> image, std::span<double> cols);
void col2im(const ConvGeometry& g, std::span<const double> cols, std::span<double> image);

}  // namespace parallel

// Applies DYNTASK_THREADS (if set) to the OpenMP runtime. Returns the thread
// count in effect.
int configure_threads_from_env();

}  // namespace dyntask::kernels
