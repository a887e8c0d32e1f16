#pragma once

#include <cstddef>

#include "ddsm/params.hpp"
#include "ddsm/rng.hpp"
#include "ddsm/sampler.hpp"
#include "ddsm/spatial.hpp"
#include "ddsm/tensor.hpp"

namespace ddsm {

struct ChannelBranchConfig {
  std::size_t channels = 4;  // c, a perfect square
  std::size_t a = 16;        // pooled key resolution
  std::size_t d = 16;        // downsampled value resolution
  std::size_t k_c = 3;       // channel-lattice grid, N_c = k_c^2
};

struct ChannelBranchParams {
  LinearMap alpha;        // c -> c on pooled x_l
  LinearMap beta;         // 2c -> c on pooled x_l ‖ x_h
  LinearMap gamma;        // c -> c on downsampled x_h
  SamplerParams sampler;  // a^2 -> (2 N_c, N_c) over the channel lattice
  GridSpec grid;
  std::size_t a = 16;
  std::size_t d = 16;

  std::size_t channels() const { return alpha.out_channels(); }
};

ChannelBranchParams init_channel_branch(Rng& rng, const ChannelBranchConfig& cfg);
void list_params(ChannelBranchParams& p, const std::string& prefix, ParamList& out);

// Integer square root of a perfect square; throws for anything else.
std::size_t lattice_side(std::size_t channels);

struct PooledInputs {
  Tensor x_l_p;    // (c,a,a)
  Tensor x_cat_p;  // (2c,a,a)
  Tensor x_h_d;    // (c,d,d)
};

PooledInputs pool_and_pack(const Tensor& x_l, const Tensor& x_h, std::size_t a, std::size_t d);

// (C,h,w) -> (h*w, sqrt(C), sqrt(C)): channel c0 = i*sqrt(C)+j lands on
// lattice cell (i,j); spatial cell s = y*w+x becomes the leading axis.
Tensor channel_grid_view(const Tensor& t);
// Inverse of channel_grid_view for an original spatial extent (h,w).
Tensor channel_grid_unview(const Tensor& g, std::size_t h, std::size_t w);

struct ChannelContext {
  Shape x_l_shape, x_h_shape;
  PooledInputs pooled;
  Tensor key_view;    // view of beta(x_cat_p), (a^2, s, s)
  Tensor query_view;  // view of alpha(x_l_p)
  Tensor value_view;  // view of gamma(x_h_d), (d^2, s, s)
  SamplingFields fields;
  AttentionContext attention;
  Tensor core;        // (c,d,d) before the final resize
  bool valid = false;
};

// Per-channel attention over N_c lattice-sampled channels. Returns the
// (c,d,d) aggregate before resizing to full resolution.
Tensor channel_attention_core(const PooledInputs& pooled, const ChannelBranchParams& params,
                              ChannelContext* ctx = nullptr);
// x_Cout: the core bilinearly resized to (out_h, out_w).
Tensor channel_attention(const PooledInputs& pooled, const ChannelBranchParams& params, std::size_t out_h,
                         std::size_t out_w, ChannelContext* ctx = nullptr);
// pool_and_pack + channel_attention at x_l's resolution.
Tensor channel_branch_forward(const Tensor& x_l, const Tensor& x_h, const ChannelBranchParams& params,
                              ChannelContext* ctx = nullptr);

struct ChannelBranchGrads {
  ChannelBranchParams params;
  Tensor x_l, x_h;
};

ChannelBranchGrads channel_branch_backward(const Tensor& upstream, const ChannelContext& ctx,
                                           const ChannelBranchParams& params);

}  // namespace ddsm
