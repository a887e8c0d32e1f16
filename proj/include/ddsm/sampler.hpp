#pragma once

#include <cstddef>
#include <vector>

#include "ddsm/nn.hpp"
#include "ddsm/tensor.hpp"

namespace ddsm {

struct Displacement {
  long dy = 0;
  long dx = 0;
  bool operator==(const Displacement&) const = default;
};

// Fixed sampling footprint around every position. The regular k x k grid
// (k odd) enumerates displacements row-major from (-(k-1)/2, -(k-1)/2) to
// (+(k-1)/2, +(k-1)/2).
class GridSpec {
 public:
  GridSpec() : GridSpec(1) {}
  explicit GridSpec(std::size_t k);
  // Arbitrary footprint. Used for coverage configurations whose sample count
  // is not an odd square.
  static GridSpec from_displacements(std::vector<Displacement> points);

  std::size_t k() const { return k_; }  // 0 for non-square footprints
  std::size_t size() const { return points_.size(); }
  const Displacement& operator[](std::size_t n) const { return points_[n]; }
  const std::vector<Displacement>& points() const { return points_; }

  bool operator==(const GridSpec&) const = default;

 private:
  std::size_t k_ = 0;
  std::vector<Displacement> points_;
};

// Offset predictor (C_pred -> 2N) and modulation predictor (C_pred -> N).
struct SamplerParams {
  LinearMap offset;
  LinearMap modulation;
};

// Zero-initialized predictors: undeformed grid, every gate at 0.5.
SamplerParams init_sampler(std::size_t in_channels, const GridSpec& grid);

struct SamplingFields {
  Tensor offsets;      // (2N,H,W): dy_1, dx_1, ..., dy_N, dx_N
  Tensor modulations;  // (N,H,W), each in [0,1]
};

SamplingFields predict_offsets(const Tensor& features, const SamplerParams& params, const GridSpec& grid);

struct SamplingFieldGrads {
  Tensor offsets;
  Tensor modulations;
};

// Accumulates predictor gradients; returns the gradient w.r.t. `features`.
Tensor predict_offsets_backward(const SamplingFieldGrads& upstream, const Tensor& features,
                                const SamplingFields& fields, const SamplerParams& params,
                                SamplerParams& grad);

// Zero-padded 4-neighbour bilinear interpolation of every channel at (y, x).
std::vector<double> bilinear_sample(const Tensor& input, double y, double x);

struct SampleContext {
  Tensor input;
  Tensor offsets;
  Tensor modulations;
  GridSpec grid;
  bool valid = false;
};

// output(c, y, x, n) = input(p + p_n + offset_n(p)) * modulation_n(p).
Tensor sample_forward(const Tensor& input, const Tensor& offsets, const Tensor& modulations,
                      const GridSpec& grid, SampleContext* ctx = nullptr);

struct SampleGrads {
  Tensor input;
  Tensor offsets;
  Tensor modulations;
};

// Exact adjoint of sample_forward. At integer sample coordinates the
// coordinate derivative is the right-hand one.
SampleGrads sample_backward(const Tensor& upstream, const SampleContext& ctx);

}  // namespace ddsm
