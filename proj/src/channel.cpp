#include "ddsm/channel.hpp"

#include <string>

namespace ddsm {

std::size_t lattice_side(std::size_t channels) {
  std::size_t s = 0;
  while ((s + 1) * (s + 1) <= channels) ++s;
  if (s == 0 || s * s != channels) {
    throw ShapeError("channel count " + std::to_string(channels) + " is not a perfect square");
  }
  return s;
}

ChannelBranchParams init_channel_branch(Rng& rng, const ChannelBranchConfig& cfg) {
  lattice_side(cfg.channels);
  ChannelBranchParams p;
  p.alpha = init_linear(rng, cfg.channels, cfg.channels);
  p.beta = init_linear(rng, 2 * cfg.channels, cfg.channels);
  p.gamma = init_linear(rng, cfg.channels, cfg.channels);
  p.grid = GridSpec(cfg.k_c);
  p.sampler = init_sampler(cfg.a * cfg.a, p.grid);
  p.a = cfg.a;
  p.d = cfg.d;
  return p;
}

void list_params(ChannelBranchParams& p, const std::string& prefix, ParamList& out) {
  list_params(p.alpha, join_name(prefix, "W_alpha"), out);
  list_params(p.beta, join_name(prefix, "W_beta"), out);
  list_params(p.gamma, join_name(prefix, "W_gamma"), out);
  list_params(p.sampler, join_name(prefix, "sampler"), out);
}

PooledInputs pool_and_pack(const Tensor& x_l, const Tensor& x_h, std::size_t a, std::size_t d) {
  expect_rank(x_l, 3, "pool_and_pack x_l");
  expect_rank(x_h, 3, "pool_and_pack x_h");
  if (x_l.dim(0) != x_h.dim(0)) {
    throw ShapeError("pool_and_pack: channel mismatch " + shape_to_string(x_l.shape()) + " vs " +
                     shape_to_string(x_h.shape()));
  }
  if (d == 0 || d > x_h.dim(1) || d > x_h.dim(2)) {
    throw ShapeError("pool_and_pack: value resolution " + std::to_string(d) + " exceeds x_h " +
                     shape_to_string(x_h.shape()));
  }
  Tensor l = avg_pool_to(x_l, a);
  Tensor h = avg_pool_to(x_h, a);
  return {l, concat_channels(l, h), bilinear_resize(x_h, d, d)};
}

Tensor channel_grid_view(const Tensor& t) {
  expect_rank(t, 3, "channel_grid_view");
  const std::size_t s = lattice_side(t.dim(0)), h = t.dim(1), w = t.dim(2);
  Tensor g({h * w, s, s});
  for (std::size_t c0 = 0; c0 < t.dim(0); ++c0)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) g(y * w + x, c0 / s, c0 % s) = t(c0, y, x);
  return g;
}

Tensor channel_grid_unview(const Tensor& g, std::size_t h, std::size_t w) {
  expect_rank(g, 3, "channel_grid_unview");
  if (g.dim(0) != h * w || g.dim(1) != g.dim(2)) {
    throw ShapeError("channel_grid_unview: " + shape_to_string(g.shape()) + " is not a view of extent " +
                     std::to_string(h) + "x" + std::to_string(w));
  }
  const std::size_t s = g.dim(1);
  Tensor t({s * s, h, w});
  for (std::size_t c0 = 0; c0 < s * s; ++c0)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) t(c0, y, x) = g(y * w + x, c0 / s, c0 % s);
  return t;
}

Tensor channel_attention_core(const PooledInputs& pooled, const ChannelBranchParams& params, ChannelContext* ctx) {
  const std::size_t d = pooled.x_h_d.dim(1);
  Tensor query_view = channel_grid_view(conv1x1(pooled.x_l_p, params.alpha));
  Tensor key_view = channel_grid_view(conv1x1(pooled.x_cat_p, params.beta));
  Tensor value_view = channel_grid_view(conv1x1(pooled.x_h_d, params.gamma));
  SamplingFields fields = predict_offsets(key_view, params.sampler, params.grid);
  AttentionContext actx;
  Tensor out_view = spatial_attention(query_view, key_view, value_view, fields.offsets, fields.modulations,
                                      params.grid, ctx ? &actx : nullptr);
  Tensor core = channel_grid_unview(out_view, d, d);
  if (ctx) {
    ctx->pooled = pooled;
    ctx->query_view = std::move(query_view);
    ctx->key_view = std::move(key_view);
    ctx->value_view = std::move(value_view);
    ctx->fields = std::move(fields);
    ctx->attention = std::move(actx);
    ctx->core = core;
    ctx->valid = true;
  }
  return core;
}

Tensor channel_attention(const PooledInputs& pooled, const ChannelBranchParams& params, std::size_t out_h,
                         std::size_t out_w, ChannelContext* ctx) {
  return bilinear_resize(channel_attention_core(pooled, params, ctx), out_h, out_w);
}

Tensor channel_branch_forward(const Tensor& x_l, const Tensor& x_h, const ChannelBranchParams& params,
                              ChannelContext* ctx) {
  PooledInputs pooled = pool_and_pack(x_l, x_h, params.a, params.d);
  Tensor out = channel_attention(pooled, params, x_l.dim(1), x_l.dim(2), ctx);
  if (ctx) {
    ctx->x_l_shape = x_l.shape();
    ctx->x_h_shape = x_h.shape();
  }
  return out;
}

ChannelBranchGrads channel_branch_backward(const Tensor& upstream, const ChannelContext& ctx,
                                           const ChannelBranchParams& params) {
  if (!ctx.valid || ctx.x_l_shape.empty()) throw std::logic_error("channel_branch_backward: missing forward context");
  ChannelBranchGrads g{zeros_like_params(params), {}, {}};
  const PooledInputs& pooled = ctx.pooled;
  const std::size_t a = pooled.x_l_p.dim(1), d = pooled.x_h_d.dim(1);

  Tensor grad_core = bilinear_resize_backward(upstream, ctx.core.shape());
  AttentionGrads ag = spatial_attention_backward(channel_grid_view(grad_core), ctx.attention);
  Tensor grad_key_view = ag.key_src;
  grad_key_view += predict_offsets_backward({ag.offsets, ag.modulations}, ctx.key_view, ctx.fields, params.sampler,
                                            g.params.sampler);

  Tensor grad_l_p = conv1x1_backward(channel_grid_unview(ag.q, a, a), pooled.x_l_p, params.alpha, g.params.alpha);
  Tensor grad_cat_p =
      conv1x1_backward(channel_grid_unview(grad_key_view, a, a), pooled.x_cat_p, params.beta, g.params.beta);
  Tensor grad_h_d =
      conv1x1_backward(channel_grid_unview(ag.val_src, d, d), pooled.x_h_d, params.gamma, g.params.gamma);

  auto [cat_l, cat_h] = split_channels(grad_cat_p, pooled.x_l_p.dim(0));
  grad_l_p += cat_l;
  g.x_l = avg_pool_to_backward(grad_l_p, ctx.x_l_shape);
  g.x_h = avg_pool_to_backward(cat_h, ctx.x_h_shape);
  g.x_h += bilinear_resize_backward(grad_h_d, ctx.x_h_shape);
  return g;
}

}  // namespace ddsm
