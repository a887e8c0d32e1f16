#include "ddsm/block.hpp"

#include <algorithm>

namespace ddsm {

DdsmParams init_ddsm(Rng& rng, const DdsmConfig& cfg) {
  const std::size_t cr = cfg.width ? cfg.width : reduced_width(cfg.low_channels, cfg.high_channels);
  const std::size_t a = std::min({cfg.a, cfg.height, cfg.cols, cfg.high_height, cfg.high_cols});
  const std::size_t d = std::min({cfg.d, cfg.high_height, cfg.high_cols});
  DdsmParams p;
  p.spatial = init_spatial_branch(rng, {cfg.low_channels, cfg.high_channels, cr, cfg.height, cfg.cols, cfg.k});
  p.channel = init_channel_branch(rng, {cr, a, d, cfg.k_c});
  return p;
}

void list_params(DdsmParams& p, const std::string& prefix, ParamList& out) {
  list_params(p.spatial, join_name(prefix, "spatial"), out);
  list_params(p.channel, join_name(prefix, "channel"), out);
}

Tensor ddsm_forward(const Tensor& x_l, const Tensor& x_h, const DdsmParams& params, DdsmContext* ctx) {
  Tensor low = conv1x1(x_l, params.spatial.reduce_l);
  Tensor high = conv1x1(x_h, params.spatial.reduce_h);
  SpatialContext sctx;
  ChannelContext cctx;
  Tensor s_out = spatial_core_forward(low, high, params.spatial, ctx ? &sctx : nullptr);
  PooledInputs pooled = pool_and_pack(low, high, params.channel.a, params.channel.d);
  Tensor c_out = channel_attention(pooled, params.channel, low.dim(1), low.dim(2), ctx ? &cctx : nullptr);
  Tensor out = low + s_out;
  out += c_out;
  if (ctx) {
    sctx.x_l = x_l;
    sctx.x_h = x_h;
    cctx.x_l_shape = low.shape();
    cctx.x_h_shape = high.shape();
    ctx->spatial = std::move(sctx);
    ctx->channel = std::move(cctx);
    ctx->x_l_reduced = std::move(low);
    ctx->s_out = std::move(s_out);
    ctx->c_out = std::move(c_out);
    ctx->valid = true;
  }
  return out;
}

DdsmGrads ddsm_backward(const Tensor& upstream, const DdsmContext& ctx, const DdsmParams& params) {
  if (!ctx.valid) throw std::logic_error("ddsm_backward: missing forward context");
  ChannelBranchGrads cg = channel_branch_backward(upstream, ctx.channel, params.channel);
  Tensor extra_low = cg.x_l + upstream;
  SpatialBranchGrads sg = spatial_branch_backward(upstream, ctx.spatial, params.spatial, extra_low, cg.x_h);
  return {{std::move(sg.params), std::move(cg.params)}, std::move(sg.x_l), std::move(sg.x_h)};
}

}  // namespace ddsm
