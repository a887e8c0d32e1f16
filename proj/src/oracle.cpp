#include "ddsm/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "ddsm/io.hpp"
#include "ddsm/mac_counter.hpp"

namespace ddsm::oracle {

Tensor conv1x1(const Tensor& input, const LinearMap& map) {
  const std::size_t cin = input.dim(0), cout = map.weight.dim(0);
  if (map.weight.dim(1) != cin) throw ShapeError("oracle::conv1x1: channel mismatch");
  Tensor out({cout, input.dim(1), input.dim(2)});
  for (std::size_t y = 0; y < input.dim(1); ++y)
    for (std::size_t x = 0; x < input.dim(2); ++x)
      for (std::size_t o = 0; o < cout; ++o) {
        double acc = map.bias[o];
        for (std::size_t i = 0; i < cin; ++i) acc += map.weight[o * cin + i] * input(i, y, x);
        out(o, y, x) = acc;
      }
  return out;
}

Tensor conv3x3_replicate(const Tensor& input, const Conv3x3& conv) {
  const std::size_t cin = input.dim(0), cout = conv.weight.dim(0);
  const long h = static_cast<long>(input.dim(1)), w = static_cast<long>(input.dim(2));
  const long dil = static_cast<long>(conv.dilation);
  Tensor out({cout, input.dim(1), input.dim(2)});
  for (std::size_t o = 0; o < cout; ++o)
    for (long y = 0; y < h; ++y)
      for (long x = 0; x < w; ++x) {
        double acc = conv.bias[o];
        for (std::size_t i = 0; i < cin; ++i)
          for (long ky = -1; ky <= 1; ++ky)
            for (long kx = -1; kx <= 1; ++kx) {
              const long sy = std::clamp(y + ky * dil, 0L, h - 1), sx = std::clamp(x + kx * dil, 0L, w - 1);
              const double wt = conv.weight(o, i, static_cast<std::size_t>(ky + 1), static_cast<std::size_t>(kx + 1));
              acc += wt * input(i, static_cast<std::size_t>(sy), static_cast<std::size_t>(sx));
            }
        out(o, static_cast<std::size_t>(y), static_cast<std::size_t>(x)) = acc;
      }
  return out;
}

Tensor avg_pool(const Tensor& input, std::size_t a) {
  const std::size_t h = input.dim(1), w = input.dim(2);
  Tensor out({input.dim(0), a, a});
  for (std::size_t c = 0; c < input.dim(0); ++c)
    for (std::size_t i = 0; i < a; ++i)
      for (std::size_t j = 0; j < a; ++j) {
        const auto lo_y = static_cast<std::size_t>(std::floor(static_cast<double>(i * h) / static_cast<double>(a)));
        const auto hi_y =
            static_cast<std::size_t>(std::ceil(static_cast<double>((i + 1) * h) / static_cast<double>(a)));
        const auto lo_x = static_cast<std::size_t>(std::floor(static_cast<double>(j * w) / static_cast<double>(a)));
        const auto hi_x =
            static_cast<std::size_t>(std::ceil(static_cast<double>((j + 1) * w) / static_cast<double>(a)));
        double sum = 0.0;
        std::size_t count = 0;
        for (std::size_t y = lo_y; y < hi_y; ++y)
          for (std::size_t x = lo_x; x < hi_x; ++x) {
            sum += input(c, y, x);
            ++count;
          }
        out(c, i, j) = sum / static_cast<double>(count);
      }
  return out;
}

double interpolate(const Tensor& input, std::size_t c, double y, double x) {
  const long h = static_cast<long>(input.dim(1)), w = static_cast<long>(input.dim(2));
  const double fy = std::floor(y), fx = std::floor(x);
  double acc = 0.0;
  for (int dy = 0; dy <= 1; ++dy)
    for (int dx = 0; dx <= 1; ++dx) {
      const long yy = static_cast<long>(fy) + dy, xx = static_cast<long>(fx) + dx;
      if (yy < 0 || xx < 0 || yy >= h || xx >= w) continue;
      const double wy = 1.0 - std::abs(y - static_cast<double>(yy));
      const double wx = 1.0 - std::abs(x - static_cast<double>(xx));
      acc += wy * wx * input(c, static_cast<std::size_t>(yy), static_cast<std::size_t>(xx));
    }
  return acc;
}

Tensor resize_align_corners(const Tensor& input, std::size_t out_h, std::size_t out_w) {
  const std::size_t h = input.dim(1), w = input.dim(2);
  Tensor out({input.dim(0), out_h, out_w});
  for (std::size_t c = 0; c < input.dim(0); ++c)
    for (std::size_t i = 0; i < out_h; ++i)
      for (std::size_t j = 0; j < out_w; ++j) {
        const double sy = out_h > 1 ? static_cast<double>(i) * static_cast<double>(h - 1) / static_cast<double>(out_h - 1) : 0.0;
        const double sx = out_w > 1 ? static_cast<double>(j) * static_cast<double>(w - 1) / static_cast<double>(out_w - 1) : 0.0;
        out(c, i, j) = interpolate(input, c, sy, sx);
      }
  return out;
}

std::vector<double> softmax(const std::vector<double>& z) {
  const double mx = *std::max_element(z.begin(), z.end());
  std::vector<double> e(z.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) sum += (e[i] = std::exp(z[i] - mx));
  for (auto& v : e) v /= sum;
  return e;
}

double sigmoid(double t) { return 1.0 / (1.0 + std::exp(-t)); }

Tensor dense_nonlocal(const Tensor& q, const Tensor& k, const Tensor& v) {
  expect_shape(k, q.shape(), "dense_nonlocal k");
  expect_shape(v, q.shape(), "dense_nonlocal v");
  const std::size_t ch = q.dim(0), h = q.dim(1), w = q.dim(2);
  Tensor out(q.shape());
  std::uint64_t macs = 0;
  for (std::size_t py = 0; py < h; ++py)
    for (std::size_t px = 0; px < w; ++px) {
      std::vector<double> logits;
      for (std::size_t ky = 0; ky < h; ++ky)
        for (std::size_t kx = 0; kx < w; ++kx) {
          double z = 0.0;
          for (std::size_t c = 0; c < ch; ++c) {
            z += q(c, py, px) * k(c, ky, kx);
            ++macs;
          }
          logits.push_back(z);
        }
      const auto wts = softmax(logits);
      for (std::size_t c = 0; c < ch; ++c) {
        double acc = 0.0;
        std::size_t idx = 0;
        for (std::size_t ky = 0; ky < h; ++ky)
          for (std::size_t kx = 0; kx < w; ++kx) {
            acc += wts[idx++] * v(c, ky, kx);
            ++macs;
          }
        out(c, py, px) = acc;
      }
    }
  mac_counter() += macs;
  return out;
}

Tensor enumerate_spatial(const Tensor& q, const Tensor& key_src, const Tensor& val_src, const Tensor& offsets,
                     const Tensor& modulations, const GridSpec& grid) {
  const std::size_t ch = q.dim(0), cv = val_src.dim(0), h = q.dim(1), w = q.dim(2), n_samples = grid.size();
  Tensor out({cv, h, w});
  for (std::size_t py = 0; py < h; ++py)
    for (std::size_t px = 0; px < w; ++px) {
      std::vector<double> logits(n_samples);
      std::vector<std::vector<double>> sampled_values(n_samples, std::vector<double>(cv));
      for (std::size_t n = 0; n < n_samples; ++n) {
        const double sy = static_cast<double>(py) + static_cast<double>(grid[n].dy) + offsets(2 * n, py, px);
        const double sx = static_cast<double>(px) + static_cast<double>(grid[n].dx) + offsets(2 * n + 1, py, px);
        const double m = modulations(n, py, px);
        double z = 0.0;
        for (std::size_t c = 0; c < ch; ++c) z += q(c, py, px) * (interpolate(key_src, c, sy, sx) * m);
        logits[n] = z;
        for (std::size_t c = 0; c < cv; ++c) sampled_values[n][c] = interpolate(val_src, c, sy, sx) * m;
      }
      const auto wts = softmax(logits);
      for (std::size_t c = 0; c < cv; ++c) {
        double acc = 0.0;
        for (std::size_t n = 0; n < n_samples; ++n) acc += wts[n] * sampled_values[n][c];
        out(c, py, px) = acc;
      }
    }
  return out;
}

Tensor enumerate_channel(const PooledInputs& pooled, const ChannelBranchParams& params, std::size_t out_h,
                     std::size_t out_w) {
  const Tensor la = oracle::conv1x1(pooled.x_l_p, params.alpha);
  const Tensor kb = oracle::conv1x1(pooled.x_cat_p, params.beta);
  const Tensor vg = oracle::conv1x1(pooled.x_h_d, params.gamma);
  const std::size_t c = la.dim(0), a = la.dim(1), d = vg.dim(1), n_samples = params.grid.size();
  const auto side = static_cast<std::size_t>(std::lround(std::sqrt(static_cast<double>(c))));
  if (side * side != c) throw ShapeError("enumerate_channel: channel count is not a perfect square");
  const std::size_t key_len = a * a, val_len = d * d;

  // Channel c0 as a vector over its spatial cells.
  auto key_vec = [&](std::size_t c0, std::size_t t) { return kb(c0, t / a, t % a); };
  // Bilinear interpolation across the channel lattice, zero outside.
  auto lattice_sample = [&](auto&& channel_value, double u, double v, std::size_t t) {
    double acc = 0.0;
    const double fu = std::floor(u), fv = std::floor(v);
    for (int du = 0; du <= 1; ++du)
      for (int dv = 0; dv <= 1; ++dv) {
        const long uu = static_cast<long>(fu) + du, vv = static_cast<long>(fv) + dv;
        if (uu < 0 || vv < 0 || uu >= static_cast<long>(side) || vv >= static_cast<long>(side)) continue;
        const double wt = (1.0 - std::abs(u - static_cast<double>(uu))) * (1.0 - std::abs(v - static_cast<double>(vv)));
        acc += wt * channel_value(static_cast<std::size_t>(uu) * side + static_cast<std::size_t>(vv), t);
      }
    return acc;
  };

  Tensor core({c, d, d});
  for (std::size_t c0 = 0; c0 < c; ++c0) {
    const std::size_t li = c0 / side, lj = c0 % side;
    std::vector<double> logits(n_samples);
    std::vector<std::vector<double>> values(n_samples, std::vector<double>(val_len));
    for (std::size_t n = 0; n < n_samples; ++n) {
      double off_y = params.sampler.offset.bias[2 * n], off_x = params.sampler.offset.bias[2 * n + 1];
      double mod_logit = params.sampler.modulation.bias[n];
      for (std::size_t t = 0; t < key_len; ++t) {
        off_y += params.sampler.offset.weight[(2 * n) * key_len + t] * key_vec(c0, t);
        off_x += params.sampler.offset.weight[(2 * n + 1) * key_len + t] * key_vec(c0, t);
        mod_logit += params.sampler.modulation.weight[n * key_len + t] * key_vec(c0, t);
      }
      const double m = sigmoid(mod_logit);
      const double u = static_cast<double>(li) + static_cast<double>(params.grid[n].dy) + off_y;
      const double v = static_cast<double>(lj) + static_cast<double>(params.grid[n].dx) + off_x;
      double z = 0.0;
      for (std::size_t t = 0; t < key_len; ++t)
        z += la(c0, t / a, t % a) * (m * lattice_sample(key_vec, u, v, t));
      logits[n] = z;
      for (std::size_t t = 0; t < val_len; ++t)
        values[n][t] = m * lattice_sample([&](std::size_t ch, std::size_t tt) { return vg(ch, tt / d, tt % d); },
                                          u, v, t);
    }
    const auto wts = softmax(logits);
    for (std::size_t t = 0; t < val_len; ++t) {
      double acc = 0.0;
      for (std::size_t n = 0; n < n_samples; ++n) acc += wts[n] * values[n][t];
      core(c0, t / d, t % d) = acc;
    }
  }
  return resize_align_corners(core, out_h, out_w);
}

Tensor ddsm_forward(const Tensor& x_l, const Tensor& x_h, const DdsmParams& params) {
  const SpatialBranchParams& sp = params.spatial;
  const Tensor low = oracle::conv1x1(x_l, sp.reduce_l);
  const Tensor high = oracle::conv1x1(x_h, sp.reduce_h);
  const std::size_t cr = low.dim(0), h = low.dim(1), w = low.dim(2);

  Tensor lq = low, hh = resize_align_corners(high, h, w);
  for (std::size_t i = 0; i < lq.size(); ++i) {
    lq[i] += sp.e_pl[i];
    hh[i] += sp.e_ph[i];
  }
  Tensor x_cat({2 * cr, h, w});
  for (std::size_t c = 0; c < cr; ++c)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        x_cat(c, y, x) = lq(c, y, x);
        x_cat(cr + c, y, x) = hh(c, y, x);
      }
  Tensor mods = oracle::conv1x1(x_cat, sp.sampler.modulation);
  for (auto& m : mods.data()) m = sigmoid(m);
  const Tensor s_out = enumerate_spatial(oracle::conv1x1(lq, sp.theta), oracle::conv1x1(x_cat, sp.phi), oracle::conv1x1(hh, sp.g),
                                     oracle::conv1x1(x_cat, sp.sampler.offset), mods, sp.grid);

  const std::size_t a = params.channel.a, d = params.channel.d;
  const Tensor lp = avg_pool(low, a), hp = avg_pool(high, a);
  Tensor cat_p({2 * cr, a, a});
  for (std::size_t c = 0; c < cr; ++c)
    for (std::size_t y = 0; y < a; ++y)
      for (std::size_t x = 0; x < a; ++x) {
        cat_p(c, y, x) = lp(c, y, x);
        cat_p(cr + c, y, x) = hp(c, y, x);
      }
  const Tensor c_out = enumerate_channel({lp, cat_p, resize_align_corners(high, d, d)}, params.channel, h, w);

  Tensor out(low.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = low[i] + s_out[i] + c_out[i];
  return out;
}

namespace {

Tensor relu_pool_half(Tensor t, bool pool) {
  for (auto& v : t.data()) v = std::max(v, 0.0);
  return pool ? avg_pool(t, t.dim(1) / 2) : t;
}

Tensor fuse(const Junction& j, const Tensor& low, const Tensor& high) {
  if (j.kind == Fusion::Ddsm) return oracle::ddsm_forward(low, high, j.ddsm);
  const Tensor l = oracle::conv1x1(low, j.add.reduce_l);
  const Tensor h = resize_align_corners(oracle::conv1x1(high, j.add.reduce_h), low.dim(1), low.dim(2));
  Tensor out(l.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = l[i] + h[i];
  return out;
}

}  // namespace

Tensor toy_forward(const ToyModel& model, const Tensor& image) {
  std::vector<Tensor> x;
  Tensor cur = image;
  for (const auto& conv : model.encoder) {
    cur = relu_pool_half(conv3x3_replicate(cur, conv), true);
    x.push_back(cur);
  }
  if (model.config.arch == Architecture::Pyramid) {
    cur = x[3];
    for (std::size_t j = 0; j < model.junctions.size(); ++j) cur = fuse(model.junctions[j], x[2 - j], cur);
  } else {
    Tensor c = x[3];
    for (const auto& conv : model.context) c = relu_pool_half(conv3x3_replicate(c, conv), false);
    cur = fuse(model.junctions[0], x[0], c);
  }
  return resize_align_corners(oracle::conv1x1(cur, model.head), image.dim(1), image.dim(2));
}

double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), kRelativeFloor});
  return std::abs(analytic - numeric) / denom;
}

Tensor finite_diff_grad(const ScalarFn& f, const Tensor& x, double h) {
  Tensor grad(x.shape());
  Tensor probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    probe[i] = x[i] + h;
    const double fp = f(probe);
    probe[i] = x[i] - h;
    const double fm = f(probe);
    probe[i] = x[i];
    if (!std::isfinite(fp) || !std::isfinite(fm)) {
      throw std::runtime_error("finite_diff_grad: non-finite evaluation at coordinate " + std::to_string(i));
    }
    grad[i] = (fp - fm) / (2.0 * h);
  }
  return grad;
}

namespace {

void record(GradCheckEntry& e, std::size_t index, double analytic, double numeric, double tol) {
  const double err = relative_error(analytic, numeric);
  if (e.checked == 0 || err > e.max_rel_err) {
    e.max_rel_err = err;
    e.worst_index = index;
    e.worst_analytic = analytic;
    e.worst_numeric = numeric;
  }
  if (err > tol) e.failing.push_back(index);
  ++e.checked;
}

}  // namespace

GradCheckEntry check_gradient(const std::string& group, const Tensor& analytic, const ScalarFn& f, const Tensor& x,
                              double tol, std::span<const std::size_t> coords, double h) {
  expect_shape(analytic, x.shape(), "check_gradient");
  GradCheckEntry e{group, 0.0, 0, 0.0, 0.0, h, 0, {}};
  std::vector<std::size_t> all;
  if (coords.empty()) {
    all.resize(x.size());
    std::iota(all.begin(), all.end(), std::size_t{0});
    coords = all;
  }
  Tensor probe = x;
  for (std::size_t i : coords) {
    probe[i] = x[i] + h;
    const double fp = f(probe);
    probe[i] = x[i] - h;
    const double fm = f(probe);
    probe[i] = x[i];
    if (!std::isfinite(fp) || !std::isfinite(fm)) {
      throw std::runtime_error(group + ": non-finite evaluation at coordinate " + std::to_string(i));
    }
    record(e, i, analytic[i], (fp - fm) / (2.0 * h), tol);
  }
  return e;
}

GradCheckReport check_param_gradients(const ParamList& params, const ParamList& grads,
                                      const std::function<double()>& loss, double tol, std::size_t max_coords,
                                      Rng& rng, double h) {
  if (params.size() != grads.size()) throw std::invalid_argument("check_param_gradients: list size mismatch");
  GradCheckReport report;
  for (std::size_t g = 0; g < params.size(); ++g) {
    Tensor& value = *params[g].tensor;
    const Tensor& analytic = *grads[g].tensor;
    expect_shape(analytic, value.shape(), "check_param_gradients");
    std::vector<std::size_t> coords(value.size());
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (coords.size() > max_coords) {
      for (std::size_t i = 0; i < max_coords; ++i) {
        std::swap(coords[i], coords[i + rng.below(coords.size() - i)]);
      }
      coords.resize(max_coords);
    }
    GradCheckEntry e{params[g].name, 0.0, 0, 0.0, 0.0, h, 0, {}};
    for (std::size_t i : coords) {
      const double saved = value[i];
      value[i] = saved + h;
      const double fp = loss();
      value[i] = saved - h;
      const double fm = loss();
      value[i] = saved;
      if (!std::isfinite(fp) || !std::isfinite(fm)) {
        throw std::runtime_error(params[g].name + ": non-finite evaluation at coordinate " + std::to_string(i));
      }
      record(e, i, analytic[i], (fp - fm) / (2.0 * h), tol);
    }
    report.entries.push_back(std::move(e));
  }
  return report;
}

bool GradCheckReport::passed(double tol) const {
  return std::all_of(entries.begin(), entries.end(), [&](const auto& e) { return e.max_rel_err <= tol; });
}

const GradCheckEntry* GradCheckReport::worst() const {
  const GradCheckEntry* w = nullptr;
  for (const auto& e : entries)
    if (!w || e.max_rel_err > w->max_rel_err) w = &e;
  return w;
}

std::string GradCheckReport::to_csv() const {
  std::ostringstream os;
  os << "group,max_rel_err,worst_index,step\n";
  for (const auto& e : entries)
    os << e.group << ',' << format_real(e.max_rel_err) << ',' << e.worst_index << ',' << format_real(e.step) << '\n';
  return os.str();
}

}  // namespace ddsm::oracle
