#include "dyntask/ops.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <string>

#include "dyntask/errors.hpp"
#include "dyntask/kernels.hpp"

namespace dyntask::ag {

namespace kp = kernels::parallel;

namespace {

enum class Broadcast { Same, ScalarA, ScalarB };

Broadcast classify(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() == b.shape()) return Broadcast::Same;
  if (a.numel() == 1) return Broadcast::ScalarA;
  if (b.numel() == 1) return Broadcast::ScalarB;
  throw DimensionError(std::string(op) + ": cannot broadcast " + shape_str(a.shape()) + " with " +
                       shape_str(b.shape()));
}

// Adds `g` into the gradient of `target`, summing when target is the scalar
// side of a broadcast.
void accumulate(Tape& t, std::size_t target, const Tensor& g, double factor = 1.0) {
  if (!t.needs_grad(target)) return;
  Tensor& slot = t.grad_slot(target);
  if (slot.numel() == g.numel()) {
    for (std::size_t i = 0; i < g.numel(); ++i) slot[i] += factor * g[i];
  } else {
    double s = 0.0;
    for (std::size_t i = 0; i < g.numel(); ++i) s += g[i];
    slot[0] += factor * s;
  }
}

// Elementwise unary op with derivative expressed through input x and output y.
template <typename F, typename D>
Var unary(const char* name, Var x, F f, D dfdx) {
  const Tensor& xv = x.value();
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = f(xv[i]);
  const std::size_t xi = x.id;
  return x.tape->push(name, std::move(out), {xi}, [xi, dfdx](Tape& t, std::size_t self) {
    if (!t.needs_grad(xi)) return;
    const Tensor& g = t.grad_slot(self);
    const Tensor& in = t.value(xi);
    const Tensor& y = t.value(self);
    Tensor& gx = t.grad_slot(xi);
    for (std::size_t i = 0; i < g.numel(); ++i) gx[i] += g[i] * dfdx(in[i], y[i]);
  });
}

double value_at(const Tensor& t, Broadcast mode, bool is_a, std::size_t i) {
  if (is_a) return mode == Broadcast::ScalarA ? t[0] : t[i];
  return mode == Broadcast::ScalarB ? t[0] : t[i];
}

void require_matrix(const Tensor& t, const char* op) {
  if (t.rank() != 2) {
    throw DimensionError(std::string(op) + ": expected a matrix, got " + shape_str(t.shape()));
  }
}

// Per-channel view for batch norm: [outer, channels, inner].
struct ChannelLayout {
  std::size_t outer = 0, channels = 0, inner = 0;
  std::size_t index(std::size_t o, std::size_t c, std::size_t s) const {
    return (o * channels + c) * inner + s;
  }
};

ChannelLayout channel_layout(const Tensor& x, const char* op) {
  if (x.rank() == 2) return {x.dim(0), x.dim(1), 1};
  if (x.rank() == 4) return {x.dim(0), x.dim(1), x.dim(2) * x.dim(3)};
  throw DimensionError(std::string(op) + ": expected rank 2 or 4, got " + shape_str(x.shape()));
}

void require_channel_vec(const Tensor& v, std::size_t channels, const char* op, const char* what) {
  if (v.numel() != channels) {
    throw DimensionError(std::string(op) + ": " + what + " has shape " + shape_str(v.shape()) +
                         ", expected " + std::to_string(channels) + " entries");
  }
}

}  // namespace

Var add(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  const Broadcast mode = classify(av, bv, "add");
  Tensor out(mode == Broadcast::ScalarA ? bv.shape() : av.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) {
    out[i] = value_at(av, mode, true, i) + value_at(bv, mode, false, i);
  }
  const std::size_t ai = a.id, bi = b.id;
  return a.tape->push("add", std::move(out), {ai, bi}, [ai, bi](Tape& t, std::size_t self) {
    const Tensor& g = t.grad_slot(self);
    accumulate(t, ai, g);
    accumulate(t, bi, g);
  });
}

Var sub(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  const Broadcast mode = classify(av, bv, "sub");
  Tensor out(mode == Broadcast::ScalarA ? bv.shape() : av.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) {
    out[i] = value_at(av, mode, true, i) - value_at(bv, mode, false, i);
  }
  const std::size_t ai = a.id, bi = b.id;
  return a.tape->push("sub", std::move(out), {ai, bi}, [ai, bi](Tape& t, std::size_t self) {
    const Tensor& g = t.grad_slot(self);
    accumulate(t, ai, g);
    accumulate(t, bi, g, -1.0);
  });
}

Var mul(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  const Broadcast mode = classify(av, bv, "mul");
  Tensor out(mode == Broadcast::ScalarA ? bv.shape() : av.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) {
    out[i] = value_at(av, mode, true, i) * value_at(bv, mode, false, i);
  }
  const std::size_t ai = a.id, bi = b.id;
  return a.tape->push("mul", std::move(out), {ai, bi}, [ai, bi, mode](Tape& t, std::size_t self) {
    const Tensor& g = t.grad_slot(self);
    const Tensor& av = t.value(ai);
    const Tensor& bv = t.value(bi);
    Tensor ga(g.shape()), gb(g.shape());
    for (std::size_t i = 0; i < g.numel(); ++i) {
      ga[i] = g[i] * value_at(bv, mode, false, i);
      gb[i] = g[i] * value_at(av, mode, true, i);
    }
    accumulate(t, ai, ga);
    accumulate(t, bi, gb);
  });
}

Var div(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  const Broadcast mode = classify(av, bv, "div");
  for (double v : bv.raw()) {
    if (v == 0.0) throw DomainError("div: division by zero");
  }
  Tensor out(mode == Broadcast::ScalarA ? bv.shape() : av.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) {
    out[i] = value_at(av, mode, true, i) / value_at(bv, mode, false, i);
  }
  const std::size_t ai = a.id, bi = b.id;
  return a.tape->push("div", std::move(out), {ai, bi}, [ai, bi, mode](Tape& t, std::size_t self) {
    const Tensor& g = t.grad_slot(self);
    const Tensor& av = t.value(ai);
    const Tensor& bv = t.value(bi);
    Tensor ga(g.shape()), gb(g.shape());
    for (std::size_t i = 0; i < g.numel(); ++i) {
      const double x = value_at(av, mode, true, i);
      const double y = value_at(bv, mode, false, i);
      ga[i] = g[i] / y;
      gb[i] = -g[i] * x / (y * y);
    }
    accumulate(t, ai, ga);
    accumulate(t, bi, gb);
  });
}

Var relu(Var x) {
  return unary(
      "relu", x, [](double v) { return v > 0.0 ? v : 0.0; },
      [](double in, double) { return in > 0.0 ? 1.0 : 0.0; });
}

Var exp(Var x) {
  return unary(
      "exp", x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Var log(Var x) {
  for (double v : x.value().raw()) {
    if (!(v > 0.0)) throw DomainError("log: non-positive input " + std::to_string(v));
  }
  return unary(
      "log", x, [](double v) { return std::log(v); }, [](double in, double) { return 1.0 / in; });
}

Var sqrt(Var x) {
  for (double v : x.value().raw()) {
    if (!(v > 0.0)) throw DomainError("sqrt: non-positive input " + std::to_string(v));
  }
  return unary(
      "sqrt", x, [](double v) { return std::sqrt(v); },
      [](double, double y) { return 0.5 / y; });
}

Var square(Var x) {
  return unary(
      "square", x, [](double v) { return v * v; }, [](double in, double) { return 2.0 * in; });
}

Var max_const(Var x, double c) {
  return unary(
      "max_const", x, [c](double v) { return v > c ? v : c; },
      [c](double in, double) { return in > c ? 1.0 : 0.0; });
}

Var scale(Var x, double c) {
  return unary(
      "scale", x, [c](double v) { return c * v; }, [c](double, double) { return c; });
}

Var add_scalar(Var x, double c) {
  return unary(
      "add_scalar", x, [c](double v) { return v + c; }, [](double, double) { return 1.0; });
}

Var reduce_sum(Var x) {
  double s = 0.0;
  for (double v : x.value().raw()) s += v;
  const std::size_t xi = x.id;
  return x.tape->push("reduce_sum", Tensor::scalar(s), {xi}, [xi](Tape& t, std::size_t self) {
    if (!t.needs_grad(xi)) return;
    const double g = t.grad_slot(self)[0];
    Tensor& gx = t.grad_slot(xi);
    for (std::size_t i = 0; i < gx.numel(); ++i) gx[i] += g;
  });
}

Var reduce_mean(Var x) {
  const double n = static_cast<double>(x.value().numel());
  double s = 0.0;
  for (double v : x.value().raw()) s += v;
  const std::size_t xi = x.id;
  return x.tape->push("reduce_mean", Tensor::scalar(s / n), {xi},
                      [xi, n](Tape& t, std::size_t self) {
                        if (!t.needs_grad(xi)) return;
                        const double g = t.grad_slot(self)[0] / n;
                        Tensor& gx = t.grad_slot(xi);
                        for (std::size_t i = 0; i < gx.numel(); ++i) gx[i] += g;
                      });
}

Var row_sum(Var x) {
  const Tensor& xv = x.value();
  require_matrix(xv, "row_sum");
  const std::size_t m = xv.rows(), k = xv.cols();
  Tensor out({m, 1});
  for (std::size_t i = 0; i < m; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < k; ++j) s += xv.at(i, j);
    out[i] = s;
  }
  const std::size_t xi = x.id;
  return x.tape->push("row_sum", std::move(out), {xi}, [xi, m, k](Tape& t, std::size_t self) {
    if (!t.needs_grad(xi)) return;
    const Tensor& g = t.grad_slot(self);
    Tensor& gx = t.grad_slot(xi);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < k; ++j) gx.at(i, j) += g[i];
  });
}

Var mean_rows(Var x) {
  const Tensor& xv = x.value();
  require_matrix(xv, "mean_rows");
  const std::size_t m = xv.rows(), k = xv.cols();
  Tensor out({1, k});
  for (std::size_t j = 0; j < k; ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < m; ++i) s += xv.at(i, j);
    out[j] = s / static_cast<double>(m);
  }
  const std::size_t xi = x.id;
  return x.tape->push("mean_rows", std::move(out), {xi}, [xi, m, k](Tape& t, std::size_t self) {
    if (!t.needs_grad(xi)) return;
    const Tensor& g = t.grad_slot(self);
    Tensor& gx = t.grad_slot(xi);
    const double inv = 1.0 / static_cast<double>(m);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < k; ++j) gx.at(i, j) += g[j] * inv;
  });
}

Var sub_rowmax(Var x) {
  const Tensor& xv = x.value();
  require_matrix(xv, "sub_rowmax");
  const std::size_t m = xv.rows(), k = xv.cols();
  Tensor out(xv.shape());
  std::vector<std::size_t> argmax(m);
  for (std::size_t i = 0; i < m; ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < k; ++j) {
      if (xv.at(i, j) > xv.at(i, best)) best = j;
    }
    argmax[i] = best;
    const double mx = xv.at(i, best);
    for (std::size_t j = 0; j < k; ++j) out.at(i, j) = xv.at(i, j) - mx;
  }
  const std::size_t xi = x.id;
  return x.tape->push("sub_rowmax", std::move(out), {xi},
                      [xi, m, k, argmax = std::move(argmax)](Tape& t, std::size_t self) {
                        if (!t.needs_grad(xi)) return;
                        const Tensor& g = t.grad_slot(self);
                        Tensor& gx = t.grad_slot(xi);
                        for (std::size_t i = 0; i < m; ++i) {
                          double s = 0.0;
                          for (std::size_t j = 0; j < k; ++j) {
                            gx.at(i, j) += g.at(i, j);
                            s += g.at(i, j);
                          }
                          gx.at(i, argmax[i]) -= s;
                        }
                      });
}

Var matmul(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_matrix(av, "matmul");
  require_matrix(bv, "matmul");
  if (av.cols() != bv.rows()) {
    throw DimensionError("matmul: inner extents differ, " + shape_str(av.shape()) + " x " +
                         shape_str(bv.shape()));
  }
  const std::size_t m = av.rows(), k = av.cols(), n = bv.cols();
  Tensor out({m, n});
  kp::gemm_nn(m, n, k, av.data(), bv.data(), out.data());
  const std::size_t ai = a.id, bi = b.id;
  return a.tape->push("matmul", std::move(out), {ai, bi},
                      [ai, bi, m, n, k](Tape& t, std::size_t self) {
                        const Tensor& g = t.grad_slot(self);
                        if (t.needs_grad(ai)) {
                          Tensor ga({m, k});
                          kp::gemm_nt(m, k, n, g.data(), t.value(bi).data(), ga.data());
                          accumulate(t, ai, ga);
                        }
                        if (t.needs_grad(bi)) {
                          Tensor gb({k, n});
                          kp::gemm_tn(k, n, m, t.value(ai).data(), g.data(), gb.data());
                          accumulate(t, bi, gb);
                        }
                      });
}

Var conv2d(Var input, Var kernel, std::size_t stride, std::size_t padding) {
  const Tensor& x = input.value();
  const Tensor& w = kernel.value();
  if (x.rank() != 4 || w.rank() != 4) {
    throw DimensionError("conv2d: expected NCHW input and OCKhKw kernel, got " +
                         shape_str(x.shape()) + " and " + shape_str(w.shape()));
  }
  if (x.dim(1) != w.dim(1)) {
    throw DimensionError("conv2d: channel mismatch, input " + shape_str(x.shape()) + " kernel " +
                         shape_str(w.shape()));
  }
  if (stride == 0) throw ConfigError("conv2d: stride must be >= 1");
  kernels::ConvGeometry geo{x.dim(0), x.dim(1), x.dim(2), x.dim(3), w.dim(2), w.dim(3), stride,
                            padding};
  if (padding >= geo.kernel_h || padding >= geo.kernel_w) {
    throw ConfigError("conv2d: padding " + std::to_string(padding) +
                      " must be smaller than the kernel extent");
  }
  if (geo.height + 2 * padding < geo.kernel_h || geo.width + 2 * padding < geo.kernel_w) {
    throw ConfigError("conv2d: padded input " + shape_str(x.shape()) + " smaller than kernel " +
                      shape_str(w.shape()));
  }
  const std::size_t outc = w.dim(0);
  const std::size_t rows = geo.col_rows(), patch = geo.patch();
  const std::size_t plane = geo.out_h() * geo.out_w();

  auto cols = std::make_shared<std::vector<double>>(rows * patch);
  kp::im2col(geo, x.data(), *cols);
  std::vector<double> flat(rows * outc);
  kp::gemm_nt(rows, outc, patch, *cols, w.data(), flat);

  Tensor out({geo.batch, outc, geo.out_h(), geo.out_w()});
  for (std::size_t b = 0; b < geo.batch; ++b)
    for (std::size_t o = 0; o < outc; ++o)
      for (std::size_t s = 0; s < plane; ++s)
        out[(b * outc + o) * plane + s] = flat[(b * plane + s) * outc + o];

  const std::size_t xi = input.id, wi = kernel.id;
  return input.tape->push(
      "conv2d", std::move(out), {xi, wi},
      [xi, wi, geo, outc, rows, patch, plane, cols](Tape& t, std::size_t self) {
        const Tensor& g = t.grad_slot(self);
        std::vector<double> gflat(rows * outc);
        for (std::size_t b = 0; b < geo.batch; ++b)
          for (std::size_t o = 0; o < outc; ++o)
            for (std::size_t s = 0; s < plane; ++s)
              gflat[(b * plane + s) * outc + o] = g[(b * outc + o) * plane + s];
        if (t.needs_grad(wi)) {
          Tensor gw(t.value(wi).shape());
          kp::gemm_tn(outc, patch, rows, gflat, *cols, gw.data());
          accumulate(t, wi, gw);
        }
        if (t.needs_grad(xi)) {
          std::vector<double> gcols(rows * patch);
          kp::gemm_nn(rows, patch, outc, gflat, t.value(wi).data(), gcols);
          Tensor gx(t.value(xi).shape());
          kp::col2im(geo, gcols, gx.data());
          accumulate(t, xi, gx);
        }
      });
}

Var add_rowvec(Var x, Var bias) {
  const Tensor& xv = x.value();
  const Tensor& bv = bias.value();
  require_matrix(xv, "add_rowvec");
  const std::size_t m = xv.rows(), n = xv.cols();
  if (bv.numel() != n) {
    throw DimensionError("add_rowvec: bias " + shape_str(bv.shape()) + " does not match " +
                         shape_str(xv.shape()));
  }
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out.at(i, j) = xv.at(i, j) + bv[j];
  const std::size_t xi = x.id, bi = bias.id;
  return x.tape->push("add_rowvec", std::move(out), {xi, bi},
                      [xi, bi, m, n](Tape& t, std::size_t self) {
                        const Tensor& g = t.grad_slot(self);
                        accumulate(t, xi, g);
                        if (t.needs_grad(bi)) {
                          Tensor& gb = t.grad_slot(bi);
                          for (std::size_t i = 0; i < m; ++i)
                            for (std::size_t j = 0; j < n; ++j) gb[j] += g.at(i, j);
                        }
                      });
}

Var add_channel(Var x, Var bias) {
  const Tensor& xv = x.value();
  if (xv.rank() != 4) throw DimensionError("add_channel: expected NCHW, got " + shape_str(xv.shape()));
  const ChannelLayout L = channel_layout(xv, "add_channel");
  require_channel_vec(bias.value(), L.channels, "add_channel", "bias");
  const Tensor& bv = bias.value();
  Tensor out(xv.shape());
  for (std::size_t o = 0; o < L.outer; ++o)
    for (std::size_t c = 0; c < L.channels; ++c)
      for (std::size_t s = 0; s < L.inner; ++s) out[L.index(o, c, s)] = xv[L.index(o, c, s)] + bv[c];
  const std::size_t xi = x.id, bi = bias.id;
  return x.tape->push("add_channel", std::move(out), {xi, bi}, [xi, bi, L](Tape& t, std::size_t self) {
    const Tensor& g = t.grad_slot(self);
    accumulate(t, xi, g);
    if (t.needs_grad(bi)) {
      Tensor& gb = t.grad_slot(bi);
      for (std::size_t o = 0; o < L.outer; ++o)
        for (std::size_t c = 0; c < L.channels; ++c)
          for (std::size_t s = 0; s < L.inner; ++s) gb[c] += g[L.index(o, c, s)];
    }
  });
}

Var broadcast_cols(Var column, std::size_t k) {
  const Tensor& v = column.value();
  if (v.rank() != 2 || v.cols() != 1) {
    throw DimensionError("broadcast_cols: expected m x 1, got " + shape_str(v.shape()));
  }
  const std::size_t m = v.rows();
  Tensor out({m, k});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < k; ++j) out.at(i, j) = v[i];
  const std::size_t vi = column.id;
  return column.tape->push("broadcast_cols", std::move(out), {vi}, [vi, m, k](Tape& t, std::size_t self) {
    if (!t.needs_grad(vi)) return;
    const Tensor& g = t.grad_slot(self);
    Tensor& gv = t.grad_slot(vi);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < k; ++j) gv[i] += g.at(i, j);
  });
}

Var gather_cols(Var x, std::span<const std::size_t> labels) {
  const Tensor& xv = x.value();
  require_matrix(xv, "gather_cols");
  const std::size_t m = xv.rows(), k = xv.cols();
  if (labels.size() != m) {
    throw DimensionError("gather_cols: " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(m) + " rows");
  }
  std::vector<std::size_t> idx(labels.begin(), labels.end());
  Tensor out({m, 1});
  for (std::size_t i = 0; i < m; ++i) {
    if (idx[i] >= k) {
      throw DataError("label " + std::to_string(idx[i]) + " out of range [0, " + std::to_string(k) +
                      ") at row " + std::to_string(i));
    }
    out[i] = xv.at(i, idx[i]);
  }
  const std::size_t xi = x.id;
  return x.tape->push("gather_cols", std::move(out), {xi},
                      [xi, m, idx = std::move(idx)](Tape& t, std::size_t self) {
                        if (!t.needs_grad(xi)) return;
                        const Tensor& g = t.grad_slot(self);
                        Tensor& gx = t.grad_slot(xi);
                        for (std::size_t i = 0; i < m; ++i) gx.at(i, idx[i]) += g[i];
                      });
}

Var pick(Var x, std::size_t flat_index) {
  const Tensor& xv = x.value();
  if (flat_index >= xv.numel()) {
    throw DimensionError("pick: index " + std::to_string(flat_index) + " outside " +
                         shape_str(xv.shape()));
  }
  const std::size_t xi = x.id;
  return x.tape->push("pick", Tensor::scalar(xv[flat_index]), {xi},
                      [xi, flat_index](Tape& t, std::size_t self) {
                        if (!t.needs_grad(xi)) return;
                        t.grad_slot(xi)[flat_index] += t.grad_slot(self)[0];
                      });
}

Var reshape(Var x, Shape shape) {
  Tensor out = x.value().reshaped(std::move(shape));
  const std::size_t xi = x.id;
  return x.tape->push("reshape", std::move(out), {xi}, [xi](Tape& t, std::size_t self) {
    if (!t.needs_grad(xi)) return;
    const Tensor& g = t.grad_slot(self);
    Tensor& gx = t.grad_slot(xi);
    for (std::size_t i = 0; i < g.numel(); ++i) gx[i] += g[i];
  });
}

Var maxpool2x2(Var x) {
  const Tensor& xv = x.value();
  if (xv.rank() != 4 || xv.dim(2) < 2 || xv.dim(3) < 2) {
    throw DimensionError("maxpool2x2: expected NCHW with H, W >= 2, got " + shape_str(xv.shape()));
  }
  const std::size_t n = xv.dim(0), c = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
  const std::size_t oh = h / 2, ow = w / 2;
  Tensor out({n, c, oh, ow});
  std::vector<std::size_t> src(out.numel());
  for (std::size_t p = 0; p < n * c; ++p) {
    const std::size_t in_base = p * h * w;
    for (std::size_t y = 0; y < oh; ++y) {
      for (std::size_t xx = 0; xx < ow; ++xx) {
        std::size_t best = in_base + (2 * y) * w + 2 * xx;
        for (std::size_t dy = 0; dy < 2; ++dy) {
          for (std::size_t dx = 0; dx < 2; ++dx) {
            const std::size_t idx = in_base + (2 * y + dy) * w + 2 * xx + dx;
            if (xv[idx] > xv[best]) best = idx;
          }
        }
        const std::size_t o = (p * oh + y) * ow + xx;
        out[o] = xv[best];
        src[o] = best;
      }
    }
  }
  const std::size_t xi = x.id;
  return x.tape->push("maxpool2x2", std::move(out), {xi},
                      [xi, src = std::move(src)](Tape& t, std::size_t self) {
                        if (!t.needs_grad(xi)) return;
                        const Tensor& g = t.grad_slot(self);
                        Tensor& gx = t.grad_slot(xi);
                        for (std::size_t o = 0; o < g.numel(); ++o) gx[src[o]] += g[o];
                      });
}

Var softmax_rows(Var logits) {
  const Tensor& z = logits.value();
  require_matrix(z, "softmax_rows");
  const std::size_t m = z.rows(), k = z.cols();
  Tensor out(z.shape());
  for (std::size_t i = 0; i < m; ++i) {
    double mx = z.at(i, 0);
    for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, z.at(i, j));
    double s = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      out.at(i, j) = std::exp(z.at(i, j) - mx);
      s += out.at(i, j);
    }
    for (std::size_t j = 0; j < k; ++j) out.at(i, j) /= s;
  }
  const std::size_t zi = logits.id;
  return logits.tape->push("softmax_rows", std::move(out), {zi}, [zi, m, k](Tape& t, std::size_t self) {
    if (!t.needs_grad(zi)) return;
    const Tensor& g = t.grad_slot(self);
    const Tensor& y = t.value(self);
    Tensor& gz = t.grad_slot(zi);
    for (std::size_t i = 0; i < m; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < k; ++j) dot += g.at(i, j) * y.at(i, j);
      for (std::size_t j = 0; j < k; ++j) gz.at(i, j) += y.at(i, j) * (g.at(i, j) - dot);
    }
  });
}

Var pairwise_distance(Var x, Var centers) {
  const Tensor& xv = x.value();
  const Tensor& cv = centers.value();
  require_matrix(xv, "pairwise_distance");
  require_matrix(cv, "pairwise_distance");
  if (xv.cols() != cv.cols()) {
    throw DimensionError("pairwise_distance: embedding width mismatch " + shape_str(xv.shape()) +
                         " vs " + shape_str(cv.shape()));
  }
  const std::size_t m = xv.rows(), k = cv.rows(), e = xv.cols();
  Tensor out({m, k});
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t l = 0; l < k; ++l) {
      double s = 0.0;
      for (std::size_t d = 0; d < e; ++d) {
        const double diff = xv.at(i, d) - cv.at(l, d);
        s += diff * diff;
      }
      out.at(i, l) = std::sqrt(s);
    }
  }
  const std::size_t xi = x.id, ci = centers.id;
  return x.tape->push("pairwise_distance", std::move(out), {xi, ci},
                      [xi, ci, m, k, e](Tape& t, std::size_t self) {
                        const bool need_x = t.needs_grad(xi), need_c = t.needs_grad(ci);
                        if (!need_x && !need_c) return;
                        const Tensor& g = t.grad_slot(self);
                        const Tensor& xv = t.value(xi);
                        const Tensor& cv = t.value(ci);
                        const Tensor& dist = t.value(self);
                        Tensor gx({m, e}), gc({k, e});
                        for (std::size_t i = 0; i < m; ++i) {
                          for (std::size_t l = 0; l < k; ++l) {
                            const double d = dist.at(i, l);
                            if (d == 0.0) continue;
                            const double f = g.at(i, l) / d;
                            for (std::size_t q = 0; q < e; ++q) {
                              const double v = f * (xv.at(i, q) - cv.at(l, q));
                              gx.at(i, q) += v;
                              gc.at(l, q) -= v;
                            }
                          }
                        }
                        if (need_x) accumulate(t, xi, gx);
                        if (need_c) accumulate(t, ci, gc);
                      });
}

Var batchnorm_train(Var x, Var gamma, Var beta, double eps, BatchStats* stats) {
  const Tensor& xv = x.value();
  const ChannelLayout L = channel_layout(xv, "batchnorm");
  require_channel_vec(gamma.value(), L.channels, "batchnorm", "gamma");
  require_channel_vec(beta.value(), L.channels, "batchnorm", "beta");
  if (L.outer < 2) {
    throw ContractError("batchnorm: train mode needs a batch of at least 2, got " +
                        std::to_string(L.outer));
  }
  const double count = static_cast<double>(L.outer * L.inner);
  const Tensor& gv = gamma.value();
  const Tensor& bv = beta.value();
  std::vector<double> mean(L.channels, 0.0), var(L.channels, 0.0), inv_std(L.channels);
  for (std::size_t c = 0; c < L.channels; ++c) {
    double s = 0.0;
    for (std::size_t o = 0; o < L.outer; ++o)
      for (std::size_t q = 0; q < L.inner; ++q) s += xv[L.index(o, c, q)];
    mean[c] = s / count;
    double v = 0.0;
    for (std::size_t o = 0; o < L.outer; ++o)
      for (std::size_t q = 0; q < L.inner; ++q) {
        const double d = xv[L.index(o, c, q)] - mean[c];
        v += d * d;
      }
    var[c] = v / count;
    inv_std[c] = 1.0 / std::sqrt(var[c] + eps);
  }
  auto xhat = std::make_shared<Tensor>(xv.shape());
  Tensor out(xv.shape());
  for (std::size_t o = 0; o < L.outer; ++o)
    for (std::size_t c = 0; c < L.channels; ++c)
      for (std::size_t q = 0; q < L.inner; ++q) {
        const std::size_t i = L.index(o, c, q);
        (*xhat)[i] = (xv[i] - mean[c]) * inv_std[c];
        out[i] = gv[c] * (*xhat)[i] + bv[c];
      }
  if (stats) *stats = BatchStats{mean, var};
  const std::size_t xi = x.id, gi = gamma.id, bi = beta.id;
  return x.tape->push(
      "batchnorm_train", std::move(out), {xi, gi, bi},
      [xi, gi, bi, L, count, xhat, inv_std = std::move(inv_std)](Tape& t, std::size_t self) {
        const Tensor& g = t.grad_slot(self);
        const Tensor& gam = t.value(gi);
        std::vector<double> sum_g(L.channels, 0.0), sum_gx(L.channels, 0.0);
        for (std::size_t o = 0; o < L.outer; ++o)
          for (std::size_t c = 0; c < L.channels; ++c)
            for (std::size_t q = 0; q < L.inner; ++q) {
              const std::size_t i = L.index(o, c, q);
              sum_g[c] += g[i];
              sum_gx[c] += g[i] * (*xhat)[i];
            }
        if (t.needs_grad(gi)) {
          Tensor& gg = t.grad_slot(gi);
          for (std::size_t c = 0; c < L.channels; ++c) gg[c] += sum_gx[c];
        }
        if (t.needs_grad(bi)) {
          Tensor& gb = t.grad_slot(bi);
          for (std::size_t c = 0; c < L.channels; ++c) gb[c] += sum_g[c];
        }
        if (t.needs_grad(xi)) {
          Tensor& gx = t.grad_slot(xi);
          for (std::size_t o = 0; o < L.outer; ++o)
            for (std::size_t c = 0; c < L.channels; ++c)
              for (std::size_t q = 0; q < L.inner; ++q) {
                const std::size_t i = L.index(o, c, q);
                gx[i] += gam[c] * inv_std[c] / count *
                         (count * g[i] - sum_g[c] - (*xhat)[i] * sum_gx[c]);
              }
        }
      });
}

Var batchnorm_eval(Var x, Var gamma, Var beta, std::span<const double> running_mean,
                   std::span<const double> running_var, double eps) {
  const Tensor& xv = x.value();
  const ChannelLayout L = channel_layout(xv, "batchnorm");
  require_channel_vec(gamma.value(), L.channels, "batchnorm", "gamma");
  require_channel_vec(beta.value(), L.channels, "batchnorm", "beta");
  if (running_mean.size() != L.channels || running_var.size() != L.channels) {
    throw DimensionError("batchnorm: running statistics do not match channel count");
  }
  std::vector<double> mean(running_mean.begin(), running_mean.end());
  std::vector<double> inv_std(L.channels);
  for (std::size_t c = 0; c < L.channels; ++c) inv_std[c] = 1.0 / std::sqrt(running_var[c] + eps);
  const Tensor& gv = gamma.value();
  const Tensor& bv = beta.value();
  Tensor out(xv.shape());
  for (std::size_t o = 0; o < L.outer; ++o)
    for (std::size_t c = 0; c < L.channels; ++c)
      for (std::size_t q = 0; q < L.inner; ++q) {
        const std::size_t i = L.index(o, c, q);
        out[i] = gv[c] * (xv[i] - mean[c]) * inv_std[c] + bv[c];
      }
  const std::size_t xi = x.id, gi = gamma.id, bi = beta.id;
  return x.tape->push(
      "batchnorm_eval", std::move(out), {xi, gi, bi},
      [xi, gi, bi, L, mean = std::move(mean), inv_std = std::move(inv_std)](Tape& t,
                                                                          std::size_t self) {
        const Tensor& g = t.grad_slot(self);
        const Tensor& xv = t.value(xi);
        const Tensor& gam = t.value(gi);
        const bool nx = t.needs_grad(xi), ng = t.needs_grad(gi), nb = t.needs_grad(bi);
        for (std::size_t o = 0; o < L.outer; ++o)
          for (std::size_t c = 0; c < L.channels; ++c)
            for (std::size_t q = 0; q < L.inner; ++q) {
              const std::size_t i = L.index(o, c, q);
              if (nx) t.grad_slot(xi)[i] += g[i] * gam[c] * inv_std[c];
              if (ng) t.grad_slot(gi)[c] += g[i] * (xv[i] - mean[c]) * inv_std[c];
              if (nb) t.grad_slot(bi)[c] += g[i];
            }
      });
}

}  // namespace dyntask::ag
