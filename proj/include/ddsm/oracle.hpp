#pragma once

// Brute-force references. Nothing here calls the kernels in nn/sampler/
// spatial/channel; every routine below has its own scalar loops and only
// shares the Tensor container and parameter structs with the main modules.

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "ddsm/block.hpp"
#include "ddsm/channel.hpp"
#include "ddsm/params.hpp"
#include "ddsm/rng.hpp"
#include "ddsm/sampler.hpp"
#include "ddsm/tensor.hpp"
#include "ddsm/toy.hpp"

namespace ddsm::oracle {

// --- scalar building blocks ------------------------------------------------

Tensor conv1x1(const Tensor& input, const LinearMap& map);
Tensor conv3x3_replicate(const Tensor& input, const Conv3x3& conv);
Tensor avg_pool(const Tensor& input, std::size_t a);
Tensor resize_align_corners(const Tensor& input, std::size_t out_h, std::size_t out_w);
double interpolate(const Tensor& input, std::size_t c, double y, double x);  // zero padded
std::vector<double> softmax(const std::vector<double>& z);
double sigmoid(double t);

// --- attention references --------------------------------------------------

// Full non-local attention over all H*W positions.
Tensor dense_nonlocal(const Tensor& q, const Tensor& k, const Tensor& v);

// Scalar-loop transliteration of the sparse spatial affinity: inputs as for
// spatial_attention.
Tensor enumerate_spatial(const Tensor& q, const Tensor& key_src, const Tensor& val_src, const Tensor& offsets,
                     const Tensor& modulations, const GridSpec& grid);

// Channel affinity from pooled inputs: projections, channel-lattice offset
// prediction and sampling, per-channel softmax, aggregation of d x d value
// maps, final resize to (out_h, out_w).
Tensor enumerate_channel(const PooledInputs& pooled, const ChannelBranchParams& params, std::size_t out_h,
                     std::size_t out_w);

// Whole DDSM recomputed from the references above.
Tensor ddsm_forward(const Tensor& x_l, const Tensor& x_h, const DdsmParams& params);

// Toy pyramid / ASPP-style class scores recomputed from the references above.
Tensor toy_forward(const ToyModel& model, const Tensor& image);

// --- finite differences ----------------------------------------------------

inline constexpr double kDefaultStep = 1e-5;
inline constexpr double kRelativeFloor = 1e-8;

// |a-n| / max(|a|, |n|, 1e-8)
double relative_error(double analytic, double numeric);

using ScalarFn = std::function<double(const Tensor&)>;

// Central differences, one coordinate at a time. Throws std::runtime_error
// naming the coordinate when f is not finite there.
Tensor finite_diff_grad(const ScalarFn& f, const Tensor& x, double h = kDefaultStep);

struct GradCheckEntry {
  std::string group;
  double max_rel_err = 0.0;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0, worst_numeric = 0.0;
  double step = kDefaultStep;
  std::size_t checked = 0;
  std::vector<std::size_t> failing;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;

  bool passed(double tol) const;
  const GradCheckEntry* worst() const;
  // CSV: group,max_rel_err,worst_index,step
  std::string to_csv() const;
};

// Compares `analytic` against central differences of f at x over `coords`
// (all coordinates when empty).
GradCheckEntry check_gradient(const std::string& group, const Tensor& analytic, const ScalarFn& f, const Tensor& x,
                              double tol, std::span<const std::size_t> coords = {}, double h = kDefaultStep);

// Same procedure against tensors perturbed in place: `loss` re-evaluates the
// model after each perturbation. Groups larger than `max_coords` are checked
// on a seeded random subset.
GradCheckReport check_param_gradients(const ParamList& params, const ParamList& grads,
                                      const std::function<double()>& loss, double tol, std::size_t max_coords,
                                      Rng& rng, double h = kDefaultStep);

}  // namespace ddsm::oracle
