#include "ddsm/nn.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "ddsm/mac_counter.hpp"

namespace ddsm {
namespace {

struct Taps {
  std::size_t i0, i1;
  double w0, w1;
};

// Align-corners source taps for output index i of an n_out-long axis
// resampled from n_in samples.
Taps resize_taps(std::size_t i, std::size_t n_in, std::size_t n_out) {
  if (n_in == 1) return {0, 0, 1.0, 0.0};
  const double src = n_out == 1 ? 0.0
                                 : static_cast<double>(i) * static_cast<double>(n_in - 1) /
                                       static_cast<double>(n_out - 1);
  std::size_t i0 = static_cast<std::size_t>(std::floor(src));
  if (i0 > n_in - 2) i0 = n_in - 2;
  const double frac = src - static_cast<double>(i0);
  return {i0, i0 + 1, 1.0 - frac, frac};
}

std::size_t window_begin(std::size_t i, std::size_t n, std::size_t a) { return (i * n) / a; }
std::size_t window_end(std::size_t i, std::size_t n, std::size_t a) { return ((i + 1) * n + a - 1) / a; }

std::size_t clamp_index(long v, std::size_t n) {
  if (v < 0) return 0;
  if (static_cast<std::size_t>(v) >= n) return n - 1;
  return static_cast<std::size_t>(v);
}

void check_linear(const Tensor& input, const LinearMap& map, const char* what) {
  expect_rank(input, 3, what);
  expect_rank(map.weight, 2, what);
  if (map.weight.dim(1) != input.dim(0)) {
    throw ShapeError(std::string(what) + ": weight " + shape_to_string(map.weight.shape()) +
                     " cannot consume input " + shape_to_string(input.shape()));
  }
  expect_shape(map.bias, {map.weight.dim(0)}, what);
}

void check_conv3x3(const Tensor& input, const Conv3x3& conv, const char* what) {
  expect_rank(input, 3, what);
  expect_rank(conv.weight, 4, what);
  if (conv.weight.dim(1) != input.dim(0) || conv.weight.dim(2) != 3 || conv.weight.dim(3) != 3) {
    throw ShapeError(std::string(what) + ": weight " + shape_to_string(conv.weight.shape()) +
                     " cannot consume input " + shape_to_string(input.shape()));
  }
  expect_shape(conv.bias, {conv.weight.dim(0)}, what);
}

}  // namespace

std::uint64_t& mac_counter() {
  thread_local std::uint64_t count = 0;
  return count;
}

Tensor conv1x1(const Tensor& input, const LinearMap& map) {
  check_linear(input, map, "conv1x1");
  const std::size_t cin = input.dim(0), cout = map.out_channels();
  const std::size_t plane = input.dim(1) * input.dim(2);
  Tensor out({cout, input.dim(1), input.dim(2)});
  std::uint64_t macs = 0;
  for (std::size_t o = 0; o < cout; ++o) {
    double* dst = &out[o * plane];
    for (std::size_t s = 0; s < plane; ++s) dst[s] = map.bias[o];
    for (std::size_t i = 0; i < cin; ++i) {
      const double w = map.weight[o * cin + i];
      const double* src = input.data().data() + i * plane;
      for (std::size_t s = 0; s < plane; ++s) dst[s] += w * src[s];
      macs += plane;
    }
  }
  mac_counter() += macs;
  return out;
}

Tensor conv1x1_backward(const Tensor& upstream, const Tensor& input, const LinearMap& map,
                        LinearMap& grad) {
  check_linear(input, map, "conv1x1_backward");
  const std::size_t cin = input.dim(0), cout = map.out_channels();
  const std::size_t plane = input.dim(1) * input.dim(2);
  expect_shape(upstream, {cout, input.dim(1), input.dim(2)}, "conv1x1_backward upstream");
  expect_shape(grad.weight, map.weight.shape(), "conv1x1_backward grad");
  Tensor grad_in(input.shape());
  for (std::size_t o = 0; o < cout; ++o) {
    const double* up = upstream.data().data() + o * plane;
    double bias_acc = 0.0;
    for (std::size_t s = 0; s < plane; ++s) bias_acc += up[s];
    grad.bias[o] += bias_acc;
    for (std::size_t i = 0; i < cin; ++i) {
      const double w = map.weight[o * cin + i];
      const double* src = input.data().data() + i * plane;
      double* gi = &grad_in[i * plane];
      double acc = 0.0;
      for (std::size_t s = 0; s < plane; ++s) {
        acc += up[s] * src[s];
        gi[s] += w * up[s];
      }
      grad.weight[o * cin + i] += acc;
    }
  }
  return grad_in;
}

Tensor conv3x3(const Tensor& input, const Conv3x3& conv) {
  check_conv3x3(input, conv, "conv3x3");
  const std::size_t cin = input.dim(0), cout = conv.weight.dim(0);
  const std::size_t h = input.dim(1), w = input.dim(2);
  const long dil = static_cast<long>(conv.dilation);
  Tensor out({cout, h, w});
  for (std::size_t o = 0; o < cout; ++o)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        double acc = conv.bias[o];
        for (std::size_t i = 0; i < cin; ++i)
          for (long ky = 0; ky < 3; ++ky) {
            const std::size_t sy = clamp_index(static_cast<long>(y) + (ky - 1) * dil, h);
            for (long kx = 0; kx < 3; ++kx) {
              const std::size_t sx = clamp_index(static_cast<long>(x) + (kx - 1) * dil, w);
              acc += conv.weight[((o * cin + i) * 3 + static_cast<std::size_t>(ky)) * 3 +
                                 static_cast<std::size_t>(kx)] *
                     input(i, sy, sx);
            }
          }
        out(o, y, x) = acc;
      }
  return out;
}

Tensor conv3x3_backward(const Tensor& upstream, const Tensor& input, const Conv3x3& conv,
                        Conv3x3& grad) {
  check_conv3x3(input, conv, "conv3x3_backward");
  const std::size_t cin = input.dim(0), cout = conv.weight.dim(0);
  const std::size_t h = input.dim(1), w = input.dim(2);
  expect_shape(upstream, {cout, h, w}, "conv3x3_backward upstream");
  const long dil = static_cast<long>(conv.dilation);
  Tensor grad_in(input.shape());
  for (std::size_t o = 0; o < cout; ++o)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        const double up = upstream(o, y, x);
        grad.bias[o] += up;
        for (std::size_t i = 0; i < cin; ++i)
          for (long ky = 0; ky < 3; ++ky) {
            const std::size_t sy = clamp_index(static_cast<long>(y) + (ky - 1) * dil, h);
            for (long kx = 0; kx < 3; ++kx) {
              const std::size_t sx = clamp_index(static_cast<long>(x) + (kx - 1) * dil, w);
              const std::size_t wi = ((o * cin + i) * 3 + static_cast<std::size_t>(ky)) * 3 +
                                     static_cast<std::size_t>(kx);
              grad.weight[wi] += up * input(i, sy, sx);
              grad_in(i, sy, sx) += up * conv.weight[wi];
            }
          }
      }
  return grad_in;
}

Tensor avg_pool_to(const Tensor& input, std::size_t a) {
  expect_rank(input, 3, "avg_pool_to");
  const std::size_t h = input.dim(1), w = input.dim(2);
  if (a == 0 || a > h || a > w) {
    throw ShapeError("avg_pool_to: target " + std::to_string(a) + " exceeds input " +
                     shape_to_string(input.shape()));
  }
  Tensor out({input.dim(0), a, a});
  for (std::size_t c = 0; c < input.dim(0); ++c)
    for (std::size_t i = 0; i < a; ++i) {
      const std::size_t y0 = window_begin(i, h, a), y1 = window_end(i, h, a);
      for (std::size_t j = 0; j < a; ++j) {
        const std::size_t x0 = window_begin(j, w, a), x1 = window_end(j, w, a);
        double acc = 0.0;
        for (std::size_t y = y0; y < y1; ++y)
          for (std::size_t x = x0; x < x1; ++x) acc += input(c, y, x);
        out(c, i, j) = acc / static_cast<double>((y1 - y0) * (x1 - x0));
      }
    }
  return out;
}

Tensor avg_pool_to_backward(const Tensor& upstream, const Shape& input_shape) {
  expect_rank(upstream, 3, "avg_pool_to_backward");
  const std::size_t a = upstream.dim(1), h = input_shape.at(1), w = input_shape.at(2);
  Tensor grad(input_shape);
  for (std::size_t c = 0; c < input_shape[0]; ++c)
    for (std::size_t i = 0; i < a; ++i) {
      const std::size_t y0 = window_begin(i, h, a), y1 = window_end(i, h, a);
      for (std::size_t j = 0; j < a; ++j) {
        const std::size_t x0 = window_begin(j, w, a), x1 = window_end(j, w, a);
        const double g = upstream(c, i, j) / static_cast<double>((y1 - y0) * (x1 - x0));
        for (std::size_t y = y0; y < y1; ++y)
          for (std::size_t x = x0; x < x1; ++x) grad(c, y, x) += g;
      }
    }
  return grad;
}

Tensor bilinear_resize(const Tensor& input, std::size_t out_h, std::size_t out_w) {
  expect_rank(input, 3, "bilinear_resize");
  if (out_h == 0 || out_w == 0) throw ShapeError("bilinear_resize: target extents must be positive");
  const std::size_t h = input.dim(1), w = input.dim(2);
  Tensor out({input.dim(0), out_h, out_w});
  for (std::size_t c = 0; c < input.dim(0); ++c)
    for (std::size_t i = 0; i < out_h; ++i) {
      const Taps ty = resize_taps(i, h, out_h);
      for (std::size_t j = 0; j < out_w; ++j) {
        const Taps tx = resize_taps(j, w, out_w);
        out(c, i, j) = ty.w0 * tx.w0 * input(c, ty.i0, tx.i0) + ty.w0 * tx.w1 * input(c, ty.i0, tx.i1) +
                       ty.w1 * tx.w0 * input(c, ty.i1, tx.i0) + ty.w1 * tx.w1 * input(c, ty.i1, tx.i1);
      }
    }
  mac_counter() += 4 * input.dim(0) * out_h * out_w;
  return out;
}

Tensor bilinear_resize_backward(const Tensor& upstream, const Shape& input_shape) {
  expect_rank(upstream, 3, "bilinear_resize_backward");
  const std::size_t h = input_shape.at(1), w = input_shape.at(2);
  Tensor grad(input_shape);
  for (std::size_t c = 0; c < input_shape[0]; ++c)
    for (std::size_t i = 0; i < upstream.dim(1); ++i) {
      const Taps ty = resize_taps(i, h, upstream.dim(1));
      for (std::size_t j = 0; j < upstream.dim(2); ++j) {
        const Taps tx = resize_taps(j, w, upstream.dim(2));
        const double g = upstream(c, i, j);
        grad(c, ty.i0, tx.i0) += ty.w0 * tx.w0 * g;
        grad(c, ty.i0, tx.i1) += ty.w0 * tx.w1 * g;
        grad(c, ty.i1, tx.i0) += ty.w1 * tx.w0 * g;
        grad(c, ty.i1, tx.i1) += ty.w1 * tx.w1 * g;
      }
    }
  return grad;
}

std::vector<double> softmax(std::span<const double> logits) {
  if (logits.empty()) throw std::invalid_argument("softmax: empty input");
  double mx = logits[0];
  for (double z : logits) {
    if (!std::isfinite(z)) throw std::invalid_argument("softmax: non-finite logit");
    mx = std::max(mx, z);
  }
  std::vector<double> out(logits.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - mx);
    sum += out[i];
  }
  for (double& v : out) v /= sum;
  return out;
}

std::vector<double> softmax_backward(std::span<const double> weights, std::span<const double> grad_weights) {
  double inner = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i) inner += weights[i] * grad_weights[i];
  std::vector<double> out(weights.size());
  for (std::size_t i = 0; i < weights.size(); ++i) out[i] = weights[i] * (grad_weights[i] - inner);
  return out;
}

double sigmoid(double t) { return 1.0 / (1.0 + std::exp(-t)); }

Tensor sigmoid(Tensor t) {
  for (double& v : t.data()) v = sigmoid(v);
  return t;
}

Tensor relu(Tensor t) {
  for (double& v : t.data()) v = std::max(v, 0.0);
  return t;
}

Tensor relu_backward(const Tensor& upstream, const Tensor& input) {
  Tensor grad(upstream);
  for (std::size_t i = 0; i < grad.size(); ++i)
    if (input[i] <= 0.0) grad[i] = 0.0;
  return grad;
}

Tensor init_uniform(Rng& rng, Shape shape, double bound) {
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = rng.uniform(-bound, bound);
  return t;
}

LinearMap init_linear(Rng& rng, std::size_t in_channels, std::size_t out_channels) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in_channels));
  return {init_uniform(rng, {out_channels, in_channels}, bound), Tensor({out_channels})};
}

LinearMap zero_linear(std::size_t in_channels, std::size_t out_channels) {
  return {Tensor({out_channels, in_channels}), Tensor({out_channels})};
}

Conv3x3 init_conv3x3(Rng& rng, std::size_t in_channels, std::size_t out_channels, std::size_t dilation) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in_channels * 9));
  return {init_uniform(rng, {out_channels, in_channels, 3, 3}, bound), Tensor({out_channels}), dilation};
}

}  // namespace ddsm
