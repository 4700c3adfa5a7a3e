#include "cactus/ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include <Eigen/Core>

#include "cactus/error.hpp"

namespace cactus {
namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;
using ConstVectorMap = Eigen::Map<const Eigen::VectorXd>;
using VectorMap = Eigen::Map<Eigen::VectorXd>;

Tape& tape_of(Var a) {
  if (!a.valid()) throw Error("operation on an unbound Var");
  return *a.tape();
}

void require_same_shape(const char* op, Var a, Var b) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                     " vs " + shape_str(b.shape()));
  }
}

void require_rank(const char* op, const char* what, Var a, std::size_t rank) {
  if (a.shape().size() != rank) {
    throw ShapeError(std::string(op) + ": " + what + " must have rank " +
                     std::to_string(rank) + ", got " + shape_str(a.shape()));
  }
}

void check_labels(const char* op, std::size_t rows, std::size_t classes,
                  std::span<const int> labels) {
  if (labels.size() != rows) {
    throw ShapeError(std::string(op) + ": " + std::to_string(labels.size()) +
                     " labels for " + std::to_string(rows) + " rows");
  }
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= classes) {
      throw ShapeError(std::string(op) + ": label " + std::to_string(y) +
                       " outside [0, " + std::to_string(classes) + ")");
    }
  }
}

ConstMatrixMap as_matrix(const Tensor& t, std::size_t rows, std::size_t cols) {
  return ConstMatrixMap(t.data().data(), static_cast<Eigen::Index>(rows),
                        static_cast<Eigen::Index>(cols));
}

MatrixMap as_matrix(Tensor& t, std::size_t rows, std::size_t cols) {
  return MatrixMap(t.data().data(), static_cast<Eigen::Index>(rows),
                   static_cast<Eigen::Index>(cols));
}

// Axis-1 layout helper for channel-wise ops on [B, C, ...] tensors.
struct ChannelLayout {
  std::size_t batch;
  std::size_t channels;
  std::size_t spatial;
};

ChannelLayout channel_layout(const char* op, const Shape& shape) {
  if (shape.size() < 2) {
    throw ShapeError(std::string(op) + ": expected [B, C, ...], got " + shape_str(shape));
  }
  std::size_t spatial = 1;
  for (std::size_t i = 2; i < shape.size(); ++i) spatial *= shape[i];
  return {shape[0], shape[1], spatial};
}

template <typename Fn, typename Grad>
Var unary(Var a, Fn&& fn, Grad&& grad) {
  Tape& tape = tape_of(a);
  const Tensor& av = a.value();
  Tensor out(av.shape());
  for (std::size_t i = 0; i < av.numel(); ++i) out[i] = fn(av[i]);
  return tape.record(std::move(out), {a},
                     [a, grad](Tape& t, const Tensor& g) {
                       const Tensor& av = a.value();
                       Tensor& ga = t.grad_buffer(a);
                       for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += grad(av[i]) * g[i];
                     });
}

}  // namespace

Var add(Var a, Var b) {
  require_same_shape("add", a, b);
  Tape& tape = tape_of(a);
  Tensor out = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] += bv[i];
  return tape.record(std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g) {
    if (a.requires_grad()) {
      Tensor& ga = t.grad_buffer(a);
      for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += g[i];
    }
    if (b.requires_grad()) {
      Tensor& gb = t.grad_buffer(b);
      for (std::size_t i = 0; i < g.numel(); ++i) gb[i] += g[i];
    }
  });
}

Var sub(Var a, Var b) {
  require_same_shape("sub", a, b);
  Tape& tape = tape_of(a);
  Tensor out = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] -= bv[i];
  return tape.record(std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g) {
    if (a.requires_grad()) {
      Tensor& ga = t.grad_buffer(a);
      for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += g[i];
    }
    if (b.requires_grad()) {
      Tensor& gb = t.grad_buffer(b);
      for (std::size_t i = 0; i < g.numel(); ++i) gb[i] -= g[i];
    }
  });
}

Var mul(Var a, Var b) {
  require_same_shape("mul", a, b);
  Tape& tape = tape_of(a);
  Tensor out = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= bv[i];
  return tape.record(std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g) {
    if (a.requires_grad()) {
      const Tensor& bv = b.value();
      Tensor& ga = t.grad_buffer(a);
      for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * bv[i];
    }
    if (b.requires_grad()) {
      const Tensor& av = a.value();
      Tensor& gb = t.grad_buffer(b);
      for (std::size_t i = 0; i < g.numel(); ++i) gb[i] += g[i] * av[i];
    }
  });
}

Var scale(Var a, double factor) {
  return unary(a, [factor](double x) { return x * factor; },
               [factor](double) { return factor; });
}

Var add_scalar(Var a, double offset) {
  return unary(a, [offset](double x) { return x + offset; }, [](double) { return 1.0; });
}

Var relu(Var a) {
  return unary(a, [](double x) { return x > 0.0 ? x : 0.0; },
               [](double x) { return x > 0.0 ? 1.0 : 0.0; });
}

Var abs_value(Var a) {
  return unary(a, [](double x) { return std::abs(x); },
               [](double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

Var clamp(Var a, double lo, double hi) {
  if (!(lo <= hi)) throw Error("clamp: lo must not exceed hi");
  return unary(a, [lo, hi](double x) { return std::clamp(x, lo, hi); },
               [lo, hi](double x) { return (x >= lo && x <= hi) ? 1.0 : 0.0; });
}

Var sum(Var a) {
  Tape& tape = tape_of(a);
  double total = 0.0;
  for (double v : a.value().data()) total += v;
  return tape.record(Tensor::scalar(total), {a}, [a](Tape& t, const Tensor& g) {
    Tensor& ga = t.grad_buffer(a);
    for (std::size_t i = 0; i < ga.numel(); ++i) ga[i] += g[0];
  });
}

Var mean(Var a) {
  const std::size_t n = a.value().numel();
  if (n == 0) throw ShapeError("mean: empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(n));
}

Var reshape(Var a, Shape shape) {
  Tape& tape = tape_of(a);
  Tensor out = a.value().reshaped(std::move(shape));
  return tape.record(std::move(out), {a}, [a](Tape& t, const Tensor& g) {
    Tensor& ga = t.grad_buffer(a);
    for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += g[i];
  });
}

Var matmul(Var a, Var b) {
  require_rank("matmul", "lhs", a, 2);
  require_rank("matmul", "rhs", b, 2);
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  if (b.shape()[0] != k) {
    throw ShapeError("matmul: inner extents differ, " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()));
  }
  Tape& tape = tape_of(a);
  Tensor out({m, n});
  as_matrix(out, m, n).noalias() = as_matrix(a.value(), m, k) * as_matrix(b.value(), k, n);
  return tape.record(std::move(out), {a, b}, [a, b, m, k, n](Tape& t, const Tensor& g) {
    auto gm = as_matrix(g, m, n);
    if (a.requires_grad()) {
      as_matrix(t.grad_buffer(a), m, k).noalias() += gm * as_matrix(b.value(), k, n).transpose();
    }
    if (b.requires_grad()) {
      as_matrix(t.grad_buffer(b), k, n).noalias() += as_matrix(a.value(), m, k).transpose() * gm;
    }
  });
}

Var linear(Var x, Var w, std::optional<Var> bias) {
  require_rank("linear", "input", x, 2);
  require_rank("linear", "weight", w, 2);
  const std::size_t batch = x.shape()[0], in = x.shape()[1], out_features = w.shape()[0];
  if (w.shape()[1] != in) {
    throw ShapeError("linear: input " + shape_str(x.shape()) + " does not match weight " +
                     shape_str(w.shape()));
  }
  if (bias && bias->shape() != Shape{out_features}) {
    throw ShapeError("linear: bias " + shape_str(bias->shape()) + " does not match weight " +
                     shape_str(w.shape()));
  }
  Tape& tape = tape_of(x);
  Tensor out({batch, out_features});
  auto om = as_matrix(out, batch, out_features);
  om.noalias() = as_matrix(x.value(), batch, in) * as_matrix(w.value(), out_features, in).transpose();
  if (bias) {
    ConstVectorMap bv(bias->value().data().data(), static_cast<Eigen::Index>(out_features));
    om.rowwise() += bv.transpose();
  }
  auto backward = [x, w, bias, batch, in, out_features](Tape& t, const Tensor& g) {
    auto gm = as_matrix(g, batch, out_features);
    if (x.requires_grad()) {
      as_matrix(t.grad_buffer(x), batch, in).noalias() +=
          gm * as_matrix(w.value(), out_features, in);
    }
    if (w.requires_grad()) {
      as_matrix(t.grad_buffer(w), out_features, in).noalias() +=
          gm.transpose() * as_matrix(x.value(), batch, in);
    }
    if (bias && bias->requires_grad()) {
      VectorMap gb(t.grad_buffer(*bias).data().data(), static_cast<Eigen::Index>(out_features));
      gb += gm.colwise().sum().transpose();
    }
  };
  if (bias) return tape.record(std::move(out), {x, w, *bias}, std::move(backward));
  return tape.record(std::move(out), {x, w}, std::move(backward));
}

Shape conv2d_output_shape(const Shape& input, const Shape& weight, Conv2dGeometry geometry) {
  if (input.size() != 4 || weight.size() != 4) {
    throw ShapeError("conv2d: expected input [B, C, H, W] and weight [O, C, KH, KW], got " +
                     shape_str(input) + " and " + shape_str(weight));
  }
  if (input[1] != weight[1]) {
    throw ShapeError("conv2d: input channels " + std::to_string(input[1]) +
                     " != weight channels " + std::to_string(weight[1]));
  }
  if (geometry.stride == 0) throw ShapeError("conv2d: stride must be positive");
  const std::size_t ph = input[2] + 2 * geometry.padding;
  const std::size_t pw = input[3] + 2 * geometry.padding;
  if (ph < weight[2] || pw < weight[3]) {
    throw ShapeError("conv2d: kernel " + shape_str(weight) + " larger than padded input " +
                     shape_str(input));
  }
  return {input[0], weight[0], (ph - weight[2]) / geometry.stride + 1,
          (pw - weight[3]) / geometry.stride + 1};
}

Var conv2d(Var x, Var w, std::optional<Var> bias, Conv2dGeometry geometry) {
  const Shape out_shape = conv2d_output_shape(x.shape(), w.shape(), geometry);
  if (bias && bias->shape() != Shape{w.shape()[0]}) {
    throw ShapeError("conv2d: bias " + shape_str(bias->shape()) + " does not match " +
                     std::to_string(w.shape()[0]) + " output channels");
  }
  const std::size_t B = x.shape()[0], C = x.shape()[1], H = x.shape()[2], W = x.shape()[3];
  const std::size_t O = w.shape()[0], KH = w.shape()[2], KW = w.shape()[3];
  const std::size_t OH = out_shape[2], OW = out_shape[3];
  const std::ptrdiff_t stride = static_cast<std::ptrdiff_t>(geometry.stride);
  const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(geometry.padding);

  // Visits every (output, input, weight) index triple that contributes.
  auto for_each_tap = [=](auto&& visit) {
    for (std::size_t b = 0; b < B; ++b) {
      for (std::size_t o = 0; o < O; ++o) {
        for (std::size_t c = 0; c < C; ++c) {
          for (std::size_t kh = 0; kh < KH; ++kh) {
            for (std::size_t kw = 0; kw < KW; ++kw) {
              const std::size_t widx = ((o * C + c) * KH + kh) * KW + kw;
              for (std::size_t oh = 0; oh < OH; ++oh) {
                const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh) * stride - pad +
                                          static_cast<std::ptrdiff_t>(kh);
                if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(H)) continue;
                const std::size_t orow = ((b * O + o) * OH + oh) * OW;
                const std::size_t irow = ((b * C + c) * H + static_cast<std::size_t>(ih)) * W;
                for (std::size_t ow = 0; ow < OW; ++ow) {
                  const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(ow) * stride - pad +
                                            static_cast<std::ptrdiff_t>(kw);
                  if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(W)) continue;
                  visit(orow + ow, irow + static_cast<std::size_t>(iw), widx);
                }
              }
            }
          }
        }
      }
    }
  };

  Tape& tape = tape_of(x);
  Tensor out(out_shape, 0.0);
  {
    const Tensor& xv = x.value();
    const Tensor& wv = w.value();
    for_each_tap([&](std::size_t oi, std::size_t ii, std::size_t wi) { out[oi] += wv[wi] * xv[ii]; });
    if (bias) {
      const Tensor& bv = bias->value();
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t o = 0; o < O; ++o)
          for (std::size_t p = 0; p < OH * OW; ++p) out[(b * O + o) * OH * OW + p] += bv[o];
    }
  }
  auto backward = [x, w, bias, for_each_tap, B, O, OH, OW](Tape& t, const Tensor& g) {
    const Tensor& xv = x.value();
    const Tensor& wv = w.value();
    if (x.requires_grad()) {
      Tensor& gx = t.grad_buffer(x);
      for_each_tap([&](std::size_t oi, std::size_t ii, std::size_t wi) { gx[ii] += wv[wi] * g[oi]; });
    }
    if (w.requires_grad()) {
      Tensor& gw = t.grad_buffer(w);
      for_each_tap([&](std::size_t oi, std::size_t ii, std::size_t wi) { gw[wi] += xv[ii] * g[oi]; });
    }
    if (bias && bias->requires_grad()) {
      Tensor& gb = t.grad_buffer(*bias);
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t o = 0; o < O; ++o)
          for (std::size_t p = 0; p < OH * OW; ++p) gb[o] += g[(b * O + o) * OH * OW + p];
    }
  };
  if (bias) return tape.record(std::move(out), {x, w, *bias}, std::move(backward));
  return tape.record(std::move(out), {x, w}, std::move(backward));
}

Var channel_affine(Var x, Var scale_v, std::optional<Var> shift) {
  const ChannelLayout layout = channel_layout("channel_affine", x.shape());
  if (scale_v.shape() != Shape{layout.channels} ||
      (shift && shift->shape() != Shape{layout.channels})) {
    throw ShapeError("channel_affine: per-channel parameters must have shape [" +
                     std::to_string(layout.channels) + "], input is " + shape_str(x.shape()));
  }
  Tape& tape = tape_of(x);
  const Tensor& xv = x.value();
  const Tensor& sv = scale_v.value();
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < xv.numel(); ++i) {
    const std::size_t c = (i / layout.spatial) % layout.channels;
    out[i] = xv[i] * sv[c] + (shift ? shift->value()[c] : 0.0);
  }
  auto backward = [x, scale_v, shift, layout](Tape& t, const Tensor& g) {
    const Tensor& xv = x.value();
    const Tensor& sv = scale_v.value();
    const bool gx_needed = x.requires_grad();
    Tensor* gx = gx_needed ? &t.grad_buffer(x) : nullptr;
    Tensor* gs = scale_v.requires_grad() ? &t.grad_buffer(scale_v) : nullptr;
    Tensor* gh = (shift && shift->requires_grad()) ? &t.grad_buffer(*shift) : nullptr;
    for (std::size_t i = 0; i < g.numel(); ++i) {
      const std::size_t c = (i / layout.spatial) % layout.channels;
      if (gx) (*gx)[i] += g[i] * sv[c];
      if (gs) (*gs)[c] += g[i] * xv[i];
      if (gh) (*gh)[c] += g[i];
    }
  };
  if (shift) return tape.record(std::move(out), {x, scale_v, *shift}, std::move(backward));
  return tape.record(std::move(out), {x, scale_v}, std::move(backward));
}

Var batch_norm(Var x, Var gamma, Var beta, double eps, Tensor* batch_mean, Tensor* batch_var) {
  const ChannelLayout layout = channel_layout("batch_norm", x.shape());
  if (gamma.shape() != Shape{layout.channels} || beta.shape() != Shape{layout.channels}) {
    throw ShapeError("batch_norm: gamma/beta must have shape [" +
                     std::to_string(layout.channels) + "], input is " + shape_str(x.shape()));
  }
  const std::size_t count = layout.batch * layout.spatial;
  if (count < 2) throw ShapeError("batch_norm: batch statistics need at least 2 values per channel");
  const Tensor& xv = x.value();
  Tensor mean_t({layout.channels}, 0.0), var_t({layout.channels}, 0.0);
  for (std::size_t i = 0; i < xv.numel(); ++i) mean_t[(i / layout.spatial) % layout.channels] += xv[i];
  for (double& m : mean_t.data()) m /= static_cast<double>(count);
  for (std::size_t i = 0; i < xv.numel(); ++i) {
    const std::size_t c = (i / layout.spatial) % layout.channels;
    const double d = xv[i] - mean_t[c];
    var_t[c] += d * d;
  }
  for (double& v : var_t.data()) v /= static_cast<double>(count);

  Tensor inv_std({layout.channels});
  for (std::size_t c = 0; c < layout.channels; ++c) inv_std[c] = 1.0 / std::sqrt(var_t[c] + eps);
  Tensor xhat(xv.shape());
  Tensor out(xv.shape());
  const Tensor& gv = gamma.value();
  const Tensor& bv = beta.value();
  for (std::size_t i = 0; i < xv.numel(); ++i) {
    const std::size_t c = (i / layout.spatial) % layout.channels;
    xhat[i] = (xv[i] - mean_t[c]) * inv_std[c];
    out[i] = gv[c] * xhat[i] + bv[c];
  }
  if (batch_mean) *batch_mean = mean_t;
  if (batch_var) *batch_var = var_t;

  Tape& tape = tape_of(x);
  return tape.record(
      std::move(out), {x, gamma, beta},
      [x, gamma, beta, layout, count, xhat = std::move(xhat), inv_std](Tape& t, const Tensor& g) {
        const Tensor& gv = gamma.value();
        std::vector<double> sum_dy(layout.channels, 0.0), sum_dy_xhat(layout.channels, 0.0);
        for (std::size_t i = 0; i < g.numel(); ++i) {
          const std::size_t c = (i / layout.spatial) % layout.channels;
          sum_dy[c] += g[i];
          sum_dy_xhat[c] += g[i] * xhat[i];
        }
        if (gamma.requires_grad()) {
          Tensor& gg = t.grad_buffer(gamma);
          for (std::size_t c = 0; c < layout.channels; ++c) gg[c] += sum_dy_xhat[c];
        }
        if (beta.requires_grad()) {
          Tensor& gb = t.grad_buffer(beta);
          for (std::size_t c = 0; c < layout.channels; ++c) gb[c] += sum_dy[c];
        }
        if (x.requires_grad()) {
          Tensor& gx = t.grad_buffer(x);
          const double n = static_cast<double>(count);
          for (std::size_t i = 0; i < g.numel(); ++i) {
            const std::size_t c = (i / layout.spatial) % layout.channels;
            gx[i] += gv[c] * inv_std[c] / n *
                     (n * g[i] - sum_dy[c] - xhat[i] * sum_dy_xhat[c]);
          }
        }
      });
}

Var log_sum_exp(Var logits) {
  require_rank("log_sum_exp", "logits", logits, 2);
  const std::size_t rows = logits.shape()[0], cols = logits.shape()[1];
  if (cols == 0) throw ShapeError("log_sum_exp: zero columns");
  const Tensor& z = logits.value();
  Tensor out({rows});
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = z.data().data() + r * cols;
    const double m = *std::max_element(row, row + cols);
    double acc = 0.0;
    for (std::size_t c = 0; c < cols; ++c) acc += std::exp(row[c] - m);
    out[r] = m + std::log(acc);
  }
  Tape& tape = tape_of(logits);
  Tensor lse = out;
  return tape.record(std::move(out), {logits},
                     [logits, rows, cols, lse = std::move(lse)](Tape& t, const Tensor& g) {
                       const Tensor& z = logits.value();
                       Tensor& gz = t.grad_buffer(logits);
                       for (std::size_t r = 0; r < rows; ++r)
                         for (std::size_t c = 0; c < cols; ++c)
                           gz[r * cols + c] += g[r] * std::exp(z[r * cols + c] - lse[r]);
                     });
}

Var softmax_cross_entropy(Var logits, std::span<const int> labels) {
  require_rank("softmax_cross_entropy", "logits", logits, 2);
  const std::size_t rows = logits.shape()[0], cols = logits.shape()[1];
  check_labels("softmax_cross_entropy", rows, cols, labels);
  std::vector<int> y(labels.begin(), labels.end());
  const Tensor& z = logits.value();
  Tensor out({rows});
  Tensor lse({rows});
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = z.data().data() + r * cols;
    const double m = *std::max_element(row, row + cols);
    double acc = 0.0;
    for (std::size_t c = 0; c < cols; ++c) acc += std::exp(row[c] - m);
    lse[r] = m + std::log(acc);
    out[r] = lse[r] - row[y[r]];
  }
  Tape& tape = tape_of(logits);
  return tape.record(std::move(out), {logits},
                     [logits, rows, cols, y = std::move(y), lse = std::move(lse)](Tape& t, const Tensor& g) {
                       const Tensor& z = logits.value();
                       Tensor& gz = t.grad_buffer(logits);
                       for (std::size_t r = 0; r < rows; ++r) {
                         for (std::size_t c = 0; c < cols; ++c) {
                           const double p = std::exp(z[r * cols + c] - lse[r]);
                           gz[r * cols + c] += g[r] * (p - (static_cast<int>(c) == y[r] ? 1.0 : 0.0));
                         }
                       }
                     });
}

Var select_by_label(Var lower, Var upper, std::span<const int> labels) {
  require_same_shape("select_by_label", lower, upper);
  require_rank("select_by_label", "bounds", lower, 2);
  const std::size_t rows = lower.shape()[0], cols = lower.shape()[1];
  check_labels("select_by_label", rows, cols, labels);
  std::vector<int> y(labels.begin(), labels.end());
  Tensor out = upper.value();
  const Tensor& lv = lower.value();
  for (std::size_t r = 0; r < rows; ++r) out[r * cols + y[r]] = lv[r * cols + y[r]];
  Tape& tape = tape_of(lower);
  return tape.record(std::move(out), {lower, upper},
                     [lower, upper, cols, y = std::move(y)](Tape& t, const Tensor& g) {
                       const std::size_t rows = y.size();
                       if (lower.requires_grad()) {
                         Tensor& gl = t.grad_buffer(lower);
                         for (std::size_t r = 0; r < rows; ++r) gl[r * cols + y[r]] += g[r * cols + y[r]];
                       }
                       if (upper.requires_grad()) {
                         Tensor& gu = t.grad_buffer(upper);
                         for (std::size_t r = 0; r < rows; ++r)
                           for (std::size_t c = 0; c < cols; ++c)
                             if (static_cast<int>(c) != y[r]) gu[r * cols + c] += g[r * cols + c];
                       }
                     });
}

}  // namespace cactus
