#pragma once

#include <cstddef>

#include "ddsm/channel.hpp"
#include "ddsm/params.hpp"
#include "ddsm/spatial.hpp"

namespace ddsm {

struct DdsmConfig {
  std::size_t low_channels = 4;
  std::size_t high_channels = 4;
  std::size_t width = 0;  // C_r; 0 selects reduced_width(low, high)
  std::size_t height = 4, cols = 4;          // x_l extent
  std::size_t high_height = 2, high_cols = 2;  // x_h extent
  std::size_t k = 3;
  std::size_t k_c = 3;
  std::size_t a = 16;  // clamped to the smallest input extent
  std::size_t d = 16;  // clamped to the x_h extent
};

// spatial.reduce_l / spatial.reduce_h are the reducers shared by both
// branches; the channel branch consumes their outputs.
struct DdsmParams {
  SpatialBranchParams spatial;
  ChannelBranchParams channel;
};

DdsmParams init_ddsm(Rng& rng, const DdsmConfig& cfg);
void list_params(DdsmParams& p, const std::string& prefix, ParamList& out);

struct DdsmContext {
  SpatialContext spatial;
  ChannelContext channel;
  Tensor x_l_reduced, s_out, c_out;
  bool valid = false;
};

// x_l_reduced + x_Sout + x_Cout, shape (C_r,H,W).
Tensor ddsm_forward(const Tensor& x_l, const Tensor& x_h, const DdsmParams& params, DdsmContext* ctx = nullptr);

struct DdsmGrads {
  DdsmParams params;
  Tensor x_l, x_h;
};

DdsmGrads ddsm_backward(const Tensor& upstream, const DdsmContext& ctx, const DdsmParams& params);

}  // namespace ddsm
