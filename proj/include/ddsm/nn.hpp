#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "ddsm/rng.hpp"
#include "ddsm/tensor.hpp"

namespace ddsm {

// 1x1 convolution: weight (out_channels, in_channels), bias (out_channels).
struct LinearMap {
  Tensor weight;
  Tensor bias;

  std::size_t in_channels() const { return weight.dim(1); }
  std::size_t out_channels() const { return weight.dim(0); }
};

// 3x3 convolution with dilation and replicate (edge-clamped) padding, so
// constant fields stay constant. weight (out, in, 3, 3), bias (out).
struct Conv3x3 {
  Tensor weight;
  Tensor bias;
  std::size_t dilation = 1;
};

// Backward functions return the input gradient and ACCUMULATE parameter
// gradients into the grad struct, which must have the parameter shapes.

Tensor conv1x1(const Tensor& input, const LinearMap& map);
Tensor conv1x1_backward(const Tensor& upstream, const Tensor& input, const LinearMap& map,
                        LinearMap& grad);

Tensor conv3x3(const Tensor& input, const Conv3x3& conv);
Tensor conv3x3_backward(const Tensor& upstream, const Tensor& input, const Conv3x3& conv,
                        Conv3x3& grad);

// Adaptive average pooling of (C,H,W) to (C,a,a); cell (i,j) averages rows
// [floor(i*H/a), ceil((i+1)*H/a)) and the analogous columns.
Tensor avg_pool_to(const Tensor& input, std::size_t a);
Tensor avg_pool_to_backward(const Tensor& upstream, const Shape& input_shape);

// Align-corners bilinear resize of (C,H,W) to (C,H2,W2). An output extent of
// 1 samples source coordinate 0.
Tensor bilinear_resize(const Tensor& input, std::size_t out_h, std::size_t out_w);
Tensor bilinear_resize_backward(const Tensor& upstream, const Shape& input_shape);

// Max-subtracted softmax. Rejects empty or non-finite input.
std::vector<double> softmax(std::span<const double> logits);
// Given w = softmax(z) and dL/dw, returns dL/dz.
std::vector<double> softmax_backward(std::span<const double> weights, std::span<const double> grad_weights);

double sigmoid(double t);
Tensor sigmoid(Tensor t);

Tensor relu(Tensor t);
Tensor relu_backward(const Tensor& upstream, const Tensor& input);

// Uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)] weights, zero bias.
LinearMap init_linear(Rng& rng, std::size_t in_channels, std::size_t out_channels);
LinearMap zero_linear(std::size_t in_channels, std::size_t out_channels);
Conv3x3 init_conv3x3(Rng& rng, std::size_t in_channels, std::size_t out_channels,
                     std::size_t dilation = 1);
Tensor init_uniform(Rng& rng, Shape shape, double bound);

}  // namespace ddsm
