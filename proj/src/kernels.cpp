#include "dyntask/kernels.hpp"

#include <algorithm>
#include <cstdlib>
#include <string>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace dyntask::kernels {

namespace {

// Row kernels shared by both variants; each writes exactly one output row.
inline void gemm_nn_row(std::size_t i, std::size_t n, std::size_t k, const double* a,
                        const double* b, double* c) {
  double* crow = c + i * n;
  std::fill(crow, crow + n, 0.0);
  const double* arow = a + i * k;
  for (std::size_t p = 0; p < k; ++p) {
    const double av = arow[p];
    const double* brow = b + p * n;
    for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
  }
}

inline void gemm_tn_row(std::size_t i, std::size_t m, std::size_t n, std::size_t k,
                        const double* a, const double* b, double* c) {
  double* crow = c + i * n;
  std::fill(crow, crow + n, 0.0);
  for (std::size_t p = 0; p < k; ++p) {
    const double av = a[p * m + i];
    const double* brow = b + p * n;
    for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
  }
}

inline void gemm_nt_row(std::size_t i, std::size_t n, std::size_t k, const double* a,
                        const double* b, double* c) {
  const double* arow = a + i * k;
  for (std::size_t j = 0; j < n; ++j) {
    const double* brow = b + j * k;
    double s = 0.0;
    for (std::size_t p = 0; p < k; ++p) s += arow[p] * brow[p];
    c[i * n + j] = s;
  }
}

// One row of the patch matrix: output pixel (b, oy, ox).
inline void im2col_row(const ConvGeometry& g, std::size_t r, const double* image, double* cols) {
  const std::size_t oh = g.out_h(), ow = g.out_w();
  const std::size_t b = r / (oh * ow);
  const std::size_t oy = (r / ow) % oh;
  const std::size_t ox = r % ow;
  double* out = cols + r * g.patch();
  std::size_t col = 0;
  for (std::size_t ch = 0; ch < g.channels; ++ch) {
    const double* plane = image + (b * g.channels + ch) * g.height * g.width;
    for (std::size_t ky = 0; ky < g.kernel_h; ++ky) {
      const long y = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.padding);
      for (std::size_t kx = 0; kx < g.kernel_w; ++kx, ++col) {
        const long x = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.padding);
        const bool inside = y >= 0 && x >= 0 && y < static_cast<long>(g.height) &&
                            x < static_cast<long>(g.width);
        out[col] = inside ? plane[static_cast<std::size_t>(y) * g.width + static_cast<std::size_t>(x)]
                          : 0.0;
      }
    }
  }
}

// Scatter all patches belonging to batch sample b.
inline void col2im_sample(const ConvGeometry& g, std::size_t b, const double* cols,
                          double* image) {
  const std::size_t oh = g.out_h(), ow = g.out_w();
  double* sample = image + b * g.channels * g.height * g.width;
  std::fill(sample, sample + g.channels * g.height * g.width, 0.0);
  for (std::size_t oy = 0; oy < oh; ++oy) {
    for (std::size_t ox = 0; ox < ow; ++ox) {
      const double* in = cols + ((b * oh + oy) * ow + ox) * g.patch();
      std::size_t col = 0;
      for (std::size_t ch = 0; ch < g.channels; ++ch) {
        double* plane = sample + ch * g.height * g.width;
        for (std::size_t ky = 0; ky < g.kernel_h; ++ky) {
          const long y = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.padding);
          for (std::size_t kx = 0; kx < g.kernel_w; ++kx, ++col) {
            const long x = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.padding);
            if (y >= 0 && x >= 0 && y < static_cast<long>(g.height) &&
                x < static_cast<long>(g.width)) {
              plane[static_cast<std::size_t>(y) * g.width + static_cast<std::size_t>(x)] += in[col];
            }
          }
        }
      }
    }
  }
}

}  // namespace

namespace serial {

void gemm_nn(std::size_t m, std::size_t n, std::size_t k, std::span<const double> a,
             std::span<const double> b, std::span<double> c) {
  for (std::size_t i = 0; i < m; ++i) gemm_nn_row(i, n, k, a.data(), b.data(), c.data());
}

void gemm_tn(std::size_t m, std::size_t n, std::size_t k, std::span<const double> a,
             std::span<const double> b, std::span<double> c) {
  for (std::size_t i = 0; i < m; ++i) gemm_tn_row(i, m, n, k, a.data(), b.data(), c.data());
}

void gemm_nt(std::size_t m, std::size_t n, std::size_t k, std::span<const double> a,
             std::span<const double> b, std::span<double> c) {
  for (std::size_t i = 0; i < m; ++i) gemm_nt_row(i, n, k, a.data(), b.data(), c.data());
}

void im2col(const ConvGeometry& g, std::span<const double> image, std::span<double> cols) {
  const std::size_t rows = g.col_rows();
  for (std::size_t r = 0; r < rows; ++r) im2col_row(g, r, image.data(), cols.data());
}

void col2im(const ConvGeometry& g, std::span<const double> cols, std::span<double> image) {
  for (std::size_t b = 0; b < g.batch; ++b) col2im_sample(g, b, cols.data(), image.data());
}

}  // namespace serial

namespace parallel {

void gemm_nn(std::size_t m, std::size_t n, std::size_t k, std::span<const double> a,
             std::span<const double> b, std::span<double> c) {
  const long rows = static_cast<long>(m);
#pragma omp parallel for schedule(static)
  for (long i = 0; i < rows; ++i) {
    gemm_nn_row(static_cast<std::size_t>(i), n, k, a.data(), b.data(), c.data());
  }
}

void gemm_tn(std::size_t m, std::size_t n, std::size_t k, std::span<const double> a,
             std::span<const double> b, std::span<double> c) {
  const long rows = static_cast<long>(m);
#pragma omp parallel for schedule(static)
  for (long i = 0; i < rows; ++i) {
    gemm_tn_row(static_cast<std::size_t>(i), m, n, k, a.data(), b.data(), c.data());
  }
}

void gemm_nt(std::size_t m, std::size_t n, std::size_t k, std::span<const double> a,
             std::span<const double> b, std::span<double> c) {
  const long rows = static_cast<long>(m);
#pragma omp parallel for schedule(static)
  for (long i = 0; i < rows; ++i) {
    gemm_nt_row(static_cast<std::size_t>(i), n, k, a.data(), b.data(), c.data());
  }
}

void im2col(const ConvGeometry& g, std::span<const double> image, std::span<double> cols) {
  const long rows = static_cast<long>(g.col_rows());
#pragma omp parallel for schedule(static)
  for (long r = 0; r < rows; ++r) {
    im2col_row(g, static_cast<std::size_t>(r), image.data(), cols.data());
  }
}

void col2im(const ConvGeometry& g, std::span<const double> cols, std::span<double> image) {
  const long batch = static_cast<long>(g.batch);
#pragma omp parallel for schedule(static)
  for (long b = 0; b < batch; ++b) {
    col2im_sample(g, static_cast<std::size_t>(b), cols.data(), image.data());
  }
}

}  // namespace parallel

int configure_threads_from_env() {
#ifdef _OPENMP
  if (const char* env = std::getenv("DYNTASK_THREADS")) {
    try {
      const int n = std::stoi(env);
      if (n > 0) omp_set_num_threads(n);
    } catch (const std::exception&) {
      // unparsable value: keep the runtime default
    }
  }
  return omp_get_max_threads();
#else
  return 1;
#endif
}

}  // namespace dyntask::kernels
