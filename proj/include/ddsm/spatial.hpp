#pragma once

#include <cstddef>

#include "ddsm/nn.hpp"
#include "ddsm/params.hpp"
#include "ddsm/rng.hpp"
#include "ddsm/sampler.hpp"
#include "ddsm/tensor.hpp"

namespace ddsm {

// Common width both inputs are reduced to: the smallest even perfect square
// that is at least ceil(min(C_l, C_h) / 2). The channel branch folds this
// width into a sqrt(c) x sqrt(c) lattice, hence the square.
std::size_t reduced_width(std::size_t low_channels, std::size_t high_channels);

struct SpatialBranchConfig {
  std::size_t low_channels = 4;   // C_l
  std::size_t high_channels = 4;  // C_h
  std::size_t width = 2;          // C_r
  std::size_t height = 4;         // H of x_l
  std::size_t cols = 4;           // W of x_l
  std::size_t k = 3;
};

struct SpatialBranchParams {
  LinearMap reduce_l;  // C_l -> C_r
  LinearMap reduce_h;  // C_h -> C_r
  LinearMap theta;     // C_r -> C_r, query
  LinearMap phi;       // 2 C_r -> C_r, key
  LinearMap g;         // C_r -> C_r, value
  Tensor e_pl;         // (C_r,H,W)
  Tensor e_ph;         // (C_r,H,W)
  SamplerParams sampler;  // predicts from x_cat (2 C_r channels)
  GridSpec grid;
};

SpatialBranchParams init_spatial_branch(Rng& rng, const SpatialBranchConfig& cfg);
void list_params(SpatialBranchParams& p, const std::string& prefix, ParamList& out);

struct Qkv {
  Tensor low;       // x_l reduced + e_pl
  Tensor high;      // upsampled reduced x_h + e_ph
  Tensor x_cat;     // low ‖ high
  Tensor q;         // theta(low)
  Tensor key_src;   // phi(x_cat)
  Tensor val_src;   // g(high)
};

// Input reduction, upsampling, embeddings and the three projections, for
// already-reduced inputs (C_r channels each).
Qkv prepare_qkv_reduced(const Tensor& low_reduced, const Tensor& high_reduced, const SpatialBranchParams& params);
// Same, starting from raw x_l (C_l,H,W) and x_h (C_h,H2,W2).
Qkv prepare_qkv(const Tensor& x_l, const Tensor& x_h, const SpatialBranchParams& params);

struct AttentionContext {
  Tensor q;
  SampleContext key_ctx, value_ctx;
  Tensor key_samples;    // (C_r,H,W,N)
  Tensor value_samples;  // (C_r,H,W,N)
  Tensor weights;        // (1,H,W,N) softmax weights
  bool valid = false;
};

// Sparse attention of every query position over its N sampled keys; key and
// value sampling share one offset/modulation field. q and key_src share a
// shape; val_src needs only the same spatial extent.
Tensor spatial_attention(const Tensor& q, const Tensor& key_src, const Tensor& val_src, const Tensor& offsets,
                         const Tensor& modulations, const GridSpec& grid, AttentionContext* ctx = nullptr);

struct AttentionGrads {
  Tensor q, key_src, val_src, offsets, modulations;
};

AttentionGrads spatial_attention_backward(const Tensor& upstream, const AttentionContext& ctx);

struct SpatialContext {
  Tensor x_l, x_h;
  Tensor low_reduced, high_reduced;
  Qkv qkv;
  SamplingFields fields;
  AttentionContext attention;
  bool valid = false;
};

// Core on reduced inputs; returns x_Sout (C_r,H,W).
Tensor spatial_core_forward(const Tensor& low_reduced, const Tensor& high_reduced,
                            const SpatialBranchParams& params, SpatialContext* ctx = nullptr);
// Full branch from raw inputs.
Tensor spatial_branch_forward(const Tensor& x_l, const Tensor& x_h, const SpatialBranchParams& params,
                              SpatialContext* ctx = nullptr);

struct SpatialBranchGrads {
  SpatialBranchParams params;
  Tensor x_l, x_h;
  Tensor low_reduced, high_reduced;
};

// Adjoint of spatial_core_forward: fills params (all but reducers) and the
// reduced-input gradients.
SpatialBranchGrads spatial_core_backward(const Tensor& upstream, const SpatialContext& ctx,
                                         const SpatialBranchParams& params);
// Adjoint of spatial_branch_forward; `extra_low/high_reduced`, when
// non-empty, are added to the reduced-input gradients before the reducers
// are back-propagated (used by the fused block).
SpatialBranchGrads spatial_branch_backward(const Tensor& upstream, const SpatialContext& ctx,
                                           const SpatialBranchParams& params,
                                           const Tensor& extra_low_reduced = {},
                                           const Tensor& extra_high_reduced = {});

}  // namespace ddsm
