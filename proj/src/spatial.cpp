#include "ddsm/spatial.hpp"

#include <algorithm>
#include <cmath>

#include "ddsm/mac_counter.hpp"

namespace ddsm {

std::size_t reduced_width(std::size_t low_channels, std::size_t high_channels) {
  const std::size_t half = (std::min(low_channels, high_channels) + 1) / 2;
  std::size_t side = 2;
  while (side * side < half) side += 2;
  return side * side;
}

SpatialBranchParams init_spatial_branch(Rng& rng, const SpatialBranchConfig& cfg) {
  const std::size_t cr = cfg.width;
  const double emb_bound = 1.0 / std::sqrt(static_cast<double>(cr));
  SpatialBranchParams p;
  p.reduce_l = init_linear(rng, cfg.low_channels, cr);
  p.reduce_h = init_linear(rng, cfg.high_channels, cr);
  p.theta = init_linear(rng, cr, cr);
  p.phi = init_linear(rng, 2 * cr, cr);
  p.g = init_linear(rng, cr, cr);
  p.e_pl = init_uniform(rng, {cr, cfg.height, cfg.cols}, emb_bound);
  p.e_ph = init_uniform(rng, {cr, cfg.height, cfg.cols}, emb_bound);
  p.grid = GridSpec(cfg.k);
  p.sampler = init_sampler(2 * cr, p.grid);
  return p;
}

void list_params(SpatialBranchParams& p, const std::string& prefix, ParamList& out) {
  list_params(p.reduce_l, join_name(prefix, "reduce_l"), out);
  list_params(p.reduce_h, join_name(prefix, "reduce_h"), out);
  list_params(p.theta, join_name(prefix, "W_theta"), out);
  list_params(p.phi, join_name(prefix, "W_phi"), out);
  list_params(p.g, join_name(prefix, "W_g"), out);
  out.push_back({join_name(prefix, "e_pl"), &p.e_pl});
  out.push_back({join_name(prefix, "e_ph"), &p.e_ph});
  list_params(p.sampler, join_name(prefix, "sampler"), out);
}

Qkv prepare_qkv_reduced(const Tensor& low_reduced, const Tensor& high_reduced, const SpatialBranchParams& params) {
  expect_rank(low_reduced, 3, "prepare_qkv low");
  expect_rank(high_reduced, 3, "prepare_qkv high");
  expect_shape(params.e_pl, low_reduced.shape(), "prepare_qkv e_pl");
  expect_shape(params.e_ph, low_reduced.shape(), "prepare_qkv e_ph");
  Qkv r;
  r.low = low_reduced + params.e_pl;
  r.high = bilinear_resize(high_reduced, low_reduced.dim(1), low_reduced.dim(2)) + params.e_ph;
  r.x_cat = concat_channels(r.low, r.high);
  r.q = conv1x1(r.low, params.theta);
  r.key_src = conv1x1(r.x_cat, params.phi);
  r.val_src = conv1x1(r.high, params.g);
  return r;
}

Qkv prepare_qkv(const Tensor& x_l, const Tensor& x_h, const SpatialBranchParams& params) {
  return prepare_qkv_reduced(conv1x1(x_l, params.reduce_l), conv1x1(x_h, params.reduce_h), params);
}

Tensor spatial_attention(const Tensor& q, const Tensor& key_src, const Tensor& val_src, const Tensor& offsets,
                         const Tensor& modulations, const GridSpec& grid, AttentionContext* ctx) {
  expect_rank(q, 3, "spatial_attention q");
  expect_shape(key_src, q.shape(), "spatial_attention key_src");
  expect_rank(val_src, 3, "spatial_attention val_src");
  if (val_src.dim(1) != q.dim(1) || val_src.dim(2) != q.dim(2)) {
    throw ShapeError("spatial_attention: value extents " + shape_to_string(val_src.shape()) +
                     " differ from query " + shape_to_string(q.shape()));
  }
  const std::size_t cr = q.dim(0), cv = val_src.dim(0), h = q.dim(1), w = q.dim(2), n_samples = grid.size();

  SampleContext kctx, vctx;
  Tensor keys = sample_forward(key_src, offsets, modulations, grid, ctx ? &kctx : nullptr);
  Tensor values = sample_forward(val_src, offsets, modulations, grid, ctx ? &vctx : nullptr);
  Tensor weights({1, h, w, n_samples});
  Tensor out({cv, h, w});
  std::vector<double> logits(n_samples);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      for (std::size_t n = 0; n < n_samples; ++n) {
        double z = 0.0;
        for (std::size_t c = 0; c < cr; ++c) z += q(c, y, x) * keys(c, y, x, n);
        logits[n] = z;
      }
      const auto wts = softmax(logits);
      for (std::size_t n = 0; n < n_samples; ++n) weights(0, y, x, n) = wts[n];
      for (std::size_t c = 0; c < cv; ++c) {
        double acc = 0.0;
        for (std::size_t n = 0; n < n_samples; ++n) acc += wts[n] * values(c, y, x, n);
        out(c, y, x) = acc;
      }
    }
  mac_counter() += (cr + cv) * h * w * n_samples;
  if (ctx) {
    ctx->q = q;
    ctx->key_ctx = std::move(kctx);
    ctx->value_ctx = std::move(vctx);
    ctx->key_samples = std::move(keys);
    ctx->value_samples = std::move(values);
    ctx->weights = std::move(weights);
    ctx->valid = true;
  }
  return out;
}

AttentionGrads spatial_attention_backward(const Tensor& upstream, const AttentionContext& ctx) {
  if (!ctx.valid) throw std::logic_error("spatial_attention_backward: missing forward context");
  const std::size_t cr = ctx.q.dim(0), cv = ctx.value_samples.dim(0), h = ctx.q.dim(1), w = ctx.q.dim(2);
  expect_shape(upstream, {cv, h, w}, "spatial_attention_backward upstream");
  const std::size_t n_samples = ctx.key_samples.dim(3);
  AttentionGrads g;
  g.q = Tensor(ctx.q.shape());
  Tensor grad_keys(ctx.key_samples.shape()), grad_values(ctx.value_samples.shape());
  std::vector<double> wts(n_samples), grad_w(n_samples);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      for (std::size_t n = 0; n < n_samples; ++n) {
        wts[n] = ctx.weights(0, y, x, n);
        double gw = 0.0;
        for (std::size_t c = 0; c < cv; ++c) {
          gw += upstream(c, y, x) * ctx.value_samples(c, y, x, n);
          grad_values(c, y, x, n) = wts[n] * upstream(c, y, x);
        }
        grad_w[n] = gw;
      }
      const auto grad_logits = softmax_backward(wts, grad_w);
      for (std::size_t n = 0; n < n_samples; ++n)
        for (std::size_t c = 0; c < cr; ++c) {
          g.q(c, y, x) += grad_logits[n] * ctx.key_samples(c, y, x, n);
          grad_keys(c, y, x, n) = grad_logits[n] * ctx.q(c, y, x);
        }
    }
  SampleGrads kg = sample_backward(grad_keys, ctx.key_ctx);
  SampleGrads vg = sample_backward(grad_values, ctx.value_ctx);
  g.key_src = std::move(kg.input);
  g.val_src = std::move(vg.input);
  g.offsets = kg.offsets + vg.offsets;
  g.modulations = kg.modulations + vg.modulations;
  return g;
}

Tensor spatial_core_forward(const Tensor& low_reduced, const Tensor& high_reduced,
                            const SpatialBranchParams& params, SpatialContext* ctx) {
  Qkv qkv = prepare_qkv_reduced(low_reduced, high_reduced, params);
  SamplingFields fields = predict_offsets(qkv.x_cat, params.sampler, params.grid);
  AttentionContext actx;
  Tensor out = spatial_attention(qkv.q, qkv.key_src, qkv.val_src, fields.offsets, fields.modulations, params.grid,
                                 ctx ? &actx : nullptr);
  if (ctx) {
    ctx->low_reduced = low_reduced;
    ctx->high_reduced = high_reduced;
    ctx->qkv = std::move(qkv);
    ctx->fields = std::move(fields);
    ctx->attention = std::move(actx);
    ctx->valid = true;
  }
  return out;
}

Tensor spatial_branch_forward(const Tensor& x_l, const Tensor& x_h, const SpatialBranchParams& params,
                              SpatialContext* ctx) {
  Tensor low = conv1x1(x_l, params.reduce_l);
  Tensor high = conv1x1(x_h, params.reduce_h);
  Tensor out = spatial_core_forward(low, high, params, ctx);
  if (ctx) {
    ctx->x_l = x_l;
    ctx->x_h = x_h;
  }
  return out;
}

SpatialBranchGrads spatial_core_backward(const Tensor& upstream, const SpatialContext& ctx,
                                         const SpatialBranchParams& params) {
  if (!ctx.valid) throw std::logic_error("spatial_core_backward: missing forward context");
  SpatialBranchGrads g{zeros_like_params(params), {}, {}, {}, {}};
  AttentionGrads ag = spatial_attention_backward(upstream, ctx.attention);

  const Qkv& qkv = ctx.qkv;
  Tensor grad_x_cat = conv1x1_backward(ag.key_src, qkv.x_cat, params.phi, g.params.phi);
  grad_x_cat += predict_offsets_backward({ag.offsets, ag.modulations}, qkv.x_cat, ctx.fields, params.sampler,
                                         g.params.sampler);
  auto [grad_low, grad_high] = split_channels(grad_x_cat, qkv.low.dim(0));
  grad_low += conv1x1_backward(ag.q, qkv.low, params.theta, g.params.theta);
  grad_high += conv1x1_backward(ag.val_src, qkv.high, params.g, g.params.g);

  g.params.e_pl = grad_low;
  g.params.e_ph = grad_high;
  g.low_reduced = std::move(grad_low);
  g.high_reduced = bilinear_resize_backward(grad_high, ctx.high_reduced.shape());
  return g;
}

SpatialBranchGrads spatial_branch_backward(const Tensor& upstream, const SpatialContext& ctx,
                                           const SpatialBranchParams& params, const Tensor& extra_low_reduced,
                                           const Tensor& extra_high_reduced) {
  SpatialBranchGrads g = spatial_core_backward(upstream, ctx, params);
  if (!extra_low_reduced.empty()) g.low_reduced += extra_low_reduced;
  if (!extra_high_reduced.empty()) g.high_reduced += extra_high_reduced;
  g.x_l = conv1x1_backward(g.low_reduced, ctx.x_l, params.reduce_l, g.params.reduce_l);
  g.x_h = conv1x1_backward(g.high_reduced, ctx.x_h, params.reduce_h, g.params.reduce_h);
  return g;
}

}  // namespace ddsm
