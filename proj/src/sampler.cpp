#include "ddsm/sampler.hpp"

#include <array>
#include <cmath>
#include <string>

#include "ddsm/mac_counter.hpp"

namespace ddsm {
namespace {

struct Corner {
  long y, x;
  double w;
};

struct BilinearPoint {
  long y0, x0;
  double ly, lx;

  BilinearPoint(double y, double x) {
    const double fy = std::floor(y), fx = std::floor(x);
    y0 = static_cast<long>(fy);
    x0 = static_cast<long>(fx);
    ly = y - fy;
    lx = x - fx;
  }

  std::array<Corner, 4> corners() const {
    return {{{y0, x0, (1 - ly) * (1 - lx)},
             {y0, x0 + 1, (1 - ly) * lx},
             {y0 + 1, x0, ly * (1 - lx)},
             {y0 + 1, x0 + 1, ly * lx}}};
  }
};

bool inside(long y, long x, std::size_t h, std::size_t w) {
  return y >= 0 && x >= 0 && static_cast<std::size_t>(y) < h && static_cast<std::size_t>(x) < w;
}

double value_at(const Tensor& t, std::size_t c, long y, long x) {
  return inside(y, x, t.dim(1), t.dim(2)) ? t(c, static_cast<std::size_t>(y), static_cast<std::size_t>(x))
                                          : 0.0;
}

void check_fields(const Tensor& input, const Tensor& offsets, const Tensor& modulations, const GridSpec& grid) {
  expect_rank(input, 3, "sample_forward input");
  const std::size_t n = grid.size(), h = input.dim(1), w = input.dim(2);
  if (offsets.rank() != 3 || offsets.dim(0) != 2 * n) {
    throw ShapeError("sample_forward: offsets " + shape_to_string(offsets.shape()) + " do not carry 2N=" +
                     std::to_string(2 * n) + " channels");
  }
  if (modulations.rank() != 3 || modulations.dim(0) != n) {
    throw ShapeError("sample_forward: modulations " + shape_to_string(modulations.shape()) +
                     " do not carry N=" + std::to_string(n) + " channels");
  }
  if (offsets.dim(1) != h || offsets.dim(2) != w || modulations.dim(1) != h || modulations.dim(2) != w) {
    throw ShapeError("sample_forward: spatial extents disagree between input " +
                     shape_to_string(input.shape()) + ", offsets " + shape_to_string(offsets.shape()) +
                     " and modulations " + shape_to_string(modulations.shape()));
  }
}

double sample_y(const GridSpec& grid, const Tensor& offsets, std::size_t n, std::size_t y, std::size_t x) {
  return static_cast<double>(y) + static_cast<double>(grid[n].dy) + offsets(2 * n, y, x);
}

double sample_x(const GridSpec& grid, const Tensor& offsets, std::size_t n, std::size_t y, std::size_t x) {
  return static_cast<double>(x) + static_cast<double>(grid[n].dx) + offsets(2 * n + 1, y, x);
}

}  // namespace

GridSpec::GridSpec(std::size_t k) : k_(k) {
  if (k == 0 || k % 2 == 0) throw std::invalid_argument("GridSpec: k must be odd and positive");
  const long r = static_cast<long>(k - 1) / 2;
  for (long dy = -r; dy <= r; ++dy)
    for (long dx = -r; dx <= r; ++dx) points_.push_back({dy, dx});
}

GridSpec GridSpec::from_displacements(std::vector<Displacement> points) {
  if (points.empty()) throw std::invalid_argument("GridSpec: empty footprint");
  GridSpec g;
  g.k_ = 0;
  g.points_ = std::move(points);
  return g;
}

SamplerParams init_sampler(std::size_t in_channels, const GridSpec& grid) {
  return {zero_linear(in_channels, 2 * grid.size()), zero_linear(in_channels, grid.size())};
}

SamplingFields predict_offsets(const Tensor& features, const SamplerParams& params, const GridSpec& grid) {
  if (params.offset.out_channels() != 2 * grid.size() || params.modulation.out_channels() != grid.size()) {
    throw ShapeError("predict_offsets: predictors emit " + std::to_string(params.offset.out_channels()) + "/" +
                     std::to_string(params.modulation.out_channels()) + " channels, grid needs " +
                     std::to_string(2 * grid.size()) + "/" + std::to_string(grid.size()));
  }
  return {conv1x1(features, params.offset), sigmoid(conv1x1(features, params.modulation))};
}

Tensor predict_offsets_backward(const SamplingFieldGrads& upstream, const Tensor& features,
                                const SamplingFields& fields, const SamplerParams& params,
                                SamplerParams& grad) {
  Tensor mod_logit_grad = upstream.modulations;
  for (std::size_t i = 0; i < mod_logit_grad.size(); ++i) {
    const double s = fields.modulations[i];
    mod_logit_grad[i] *= s * (1.0 - s);
  }
  Tensor g = conv1x1_backward(upstream.offsets, features, params.offset, grad.offset);
  g += conv1x1_backward(mod_logit_grad, features, params.modulation, grad.modulation);
  return g;
}

std::vector<double> bilinear_sample(const Tensor& input, double y, double x) {
  expect_rank(input, 3, "bilinear_sample");
  std::vector<double> out(input.dim(0), 0.0);
  const BilinearPoint pt(y, x);
  for (const auto& cn : pt.corners()) {
    if (!inside(cn.y, cn.x, input.dim(1), input.dim(2))) continue;
    for (std::size_t c = 0; c < input.dim(0); ++c)
      out[c] += cn.w * input(c, static_cast<std::size_t>(cn.y), static_cast<std::size_t>(cn.x));
  }
  return out;
}

Tensor sample_forward(const Tensor& input, const Tensor& offsets, const Tensor& modulations,
                      const GridSpec& grid, SampleContext* ctx) {
  check_fields(input, offsets, modulations, grid);
  const std::size_t ch = input.dim(0), h = input.dim(1), w = input.dim(2), n_samples = grid.size();
  Tensor out({ch, h, w, n_samples});
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t n = 0; n < n_samples; ++n) {
        const double m = modulations(n, y, x);
        const BilinearPoint pt(sample_y(grid, offsets, n, y, x), sample_x(grid, offsets, n, y, x));
        const auto corners = pt.corners();
        for (std::size_t c = 0; c < ch; ++c) {
          double v = 0.0;
          for (const auto& cn : corners) v += (cn.w * m) * value_at(input, c, cn.y, cn.x);
          out(c, y, x, n) = v;
        }
      }
  mac_counter() += 4 * ch * h * w * n_samples;
  if (ctx) *ctx = {input, offsets, modulations, grid, true};
  return out;
}

SampleGrads sample_backward(const Tensor& upstream, const SampleContext& ctx) {
  if (!ctx.valid) throw std::logic_error("sample_backward: missing forward context");
  const Tensor& in = ctx.input;
  const std::size_t ch = in.dim(0), h = in.dim(1), w = in.dim(2), n_samples = ctx.grid.size();
  expect_shape(upstream, {ch, h, w, n_samples}, "sample_backward upstream");
  SampleGrads g{Tensor(in.shape()), Tensor(ctx.offsets.shape()), Tensor(ctx.modulations.shape())};
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t n = 0; n < n_samples; ++n) {
        const double m = ctx.modulations(n, y, x);
        const BilinearPoint pt(sample_y(ctx.grid, ctx.offsets, n, y, x), sample_x(ctx.grid, ctx.offsets, n, y, x));
        const auto corners = pt.corners();
        double g_mod = 0.0, g_y = 0.0, g_x = 0.0;
        for (std::size_t c = 0; c < ch; ++c) {
          const double up = upstream(c, y, x, n);
          if (up == 0.0) continue;
          const double v00 = value_at(in, c, pt.y0, pt.x0), v01 = value_at(in, c, pt.y0, pt.x0 + 1);
          const double v10 = value_at(in, c, pt.y0 + 1, pt.x0), v11 = value_at(in, c, pt.y0 + 1, pt.x0 + 1);
          double v = 0.0;
          for (const auto& cn : corners) {
            v += cn.w * value_at(in, c, cn.y, cn.x);
            if (inside(cn.y, cn.x, h, w))
              g.input(c, static_cast<std::size_t>(cn.y), static_cast<std::size_t>(cn.x)) += up * m * cn.w;
          }
          g_mod += up * v;
          g_y += up * ((1 - pt.lx) * (v10 - v00) + pt.lx * (v11 - v01));
          g_x += up * ((1 - pt.ly) * (v01 - v00) + pt.ly * (v11 - v10));
        }
        g.modulations(n, y, x) = g_mod;
        g.offsets(2 * n, y, x) = m * g_y;
        g.offsets(2 * n + 1, y, x) = m * g_x;
      }
  return g;
}

}  // namespace ddsm
