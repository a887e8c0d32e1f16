#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace ddsm {

// Sizes for the analytic cost model. Sample counts are given directly so the
// formulas can be evaluated at N = 0.
struct CostConfig {
  std::uint64_t low_channels = 4, high_channels = 4;
  std::uint64_t width = 4;  // C_r, also the channel-branch c
  std::uint64_t height = 4, cols = 4;
  std::uint64_t high_height = 2, high_cols = 2;
  std::uint64_t samples = 9;          // N
  std::uint64_t channel_samples = 9;  // N_c
  std::uint64_t a = 2, d = 2;
};

struct CostRecord {
  std::string name;
  std::uint64_t params = 0;
  std::uint64_t macs = 0;
};

struct CostReport {
  std::string model;
  CostConfig config;
  std::vector<CostRecord> records;

  std::uint64_t total_params() const;
  std::uint64_t total_macs() const;
  std::uint64_t macs_of(const std::string& name) const;
  // model,sub_block,params,macs,flops rows plus a trailing total row; flops
  // counts a multiply-accumulate as two operations.
  std::string to_csv(bool header = true) const;
};

// Multiply-accumulates counted: 1x1 projections, 4 taps per bilinear
// sample/resize output, dot products and aggregations. Pooling (pure sums)
// and elementwise activations count zero. FLOPs = 2 * MACs.
CostReport count_spatial_branch(const CostConfig& cfg);
CostReport count_channel_branch(const CostConfig& cfg);
CostReport count_ddsm(const CostConfig& cfg);
CostReport count_dense_nonlocal(const CostConfig& cfg);

struct Ratio {
  std::uint64_t num = 0, den = 1;
  double value() const { return static_cast<double>(num) / static_cast<double>(den); }
  bool operator==(const Ratio&) const = default;
};

// DDSM over dense affinity MACs, reduced: N / (H W).
Ratio affinity_ratio(const CostConfig& cfg);

}  // namespace ddsm
