#include "ddsm/commands.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <sstream>

#include "ddsm/block.hpp"
#include "ddsm/boundary.hpp"
#include "ddsm/cost.hpp"
#include "ddsm/io.hpp"
#include "ddsm/mac_counter.hpp"

namespace ddsm {
namespace {

namespace fs = std::filesystem;
using oracle::GradCheckReport;

constexpr std::size_t kMaxCoords = 512;
constexpr double kPredictorBound = 0.5;
constexpr double kKernelFault = 1e-6;
constexpr double kLatticeMargin = 1e-3;
constexpr int kMaxRedraws = 1000;

Tensor normal_tensor(Rng& rng, Shape shape) {
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = rng.normal();
  return t;
}

Tensor uniform_tensor(Rng& rng, Shape shape, double lo, double hi) {
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

// <u, out - base> accumulated in extended precision. Same gradient as
// <u, out>, but the returned value stays small, so finite differences are not
// swamped by the rounding of a large loss.
double centred_dot(const Tensor& u, const Tensor& out, const Tensor& base) {
  long double acc = 0.0L;
  for (std::size_t i = 0; i < u.size(); ++i) {
    acc += static_cast<long double>(u[i]) * (static_cast<long double>(out[i]) - static_cast<long double>(base[i]));
  }
  return static_cast<double>(acc);
}

// Zero-initialized predictors sample exactly at lattice points, where the
// coordinate derivative is one-sided; checks use random predictors instead.
void randomize(const ParamList& list, Rng& rng, double bound) {
  for (const auto& nt : list) {
    for (auto& v : nt.tensor->data()) v = rng.uniform(-bound, bound);
  }
}

// True when a sample coordinate lies within `margin` of a lattice line, where
// bilinear interpolation has a kink and central differences straddle it.
bool near_lattice(const Tensor& offsets, const GridSpec& grid, double margin = kLatticeMargin) {
  const std::size_t h = offsets.dim(1), w = offsets.dim(2);
  auto close = [&](double c) { return std::abs(c - std::round(c)) < margin; };
  for (std::size_t n = 0; n < grid.size(); ++n)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        if (close(static_cast<double>(y) + static_cast<double>(grid[n].dy) + offsets(2 * n, y, x)) ||
            close(static_cast<double>(x) + static_cast<double>(grid[n].dx) + offsets(2 * n + 1, y, x))) {
          return true;
        }
      }
  return false;
}

// Redraws the listed sampler predictors until `kinked` reports no sample
// coordinate near the lattice.
template <class Kinked>
void randomize_smooth(const ParamList& predictors, Rng& rng, Kinked kinked) {
  for (int attempt = 0; attempt < kMaxRedraws; ++attempt) {
    randomize(predictors, rng, kPredictorBound);
    if (!kinked()) return;
  }
  throw std::runtime_error("gradcheck: no kink-free instance after " + std::to_string(kMaxRedraws) + " draws");
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << text;
}

// Negative control: corrupts the analytic gradient of one named group.
class FaultInjector {
 public:
  explicit FaultInjector(std::string target) : target_(std::move(target)) {}

  void apply(const std::string& group, Tensor& grad) {
    if (group != target_) return;
    for (auto& v : grad.data()) v = v * 1.01 + 1e-4;
    hit_ = true;
  }
  void apply(const ParamList& grads) {
    for (const auto& nt : grads) apply(nt.name, *nt.tensor);
  }
  bool active() const { return target_ != "none" && target_ != "kernel"; }
  bool hit() const { return hit_; }

 private:
  std::string target_;
  bool hit_ = false;
};

void append(GradCheckReport& dst, GradCheckReport src) {
  for (auto& e : src.entries) dst.entries.push_back(std::move(e));
}

double fd_step = oracle::kDefaultStep;

void check_input(GradCheckReport& report, FaultInjector& fault, const std::string& group, Tensor analytic,
                 const oracle::ScalarFn& f, const Tensor& x) {
  fault.apply(group, analytic);
  report.entries.push_back(oracle::check_gradient(group, analytic, f, x, kGradTolerance, {}, fd_step));
}

void sampler_checks(const RunConfig& cfg, Rng& rng, FaultInjector& fault, GradCheckReport& report) {
  const GridSpec grid(cfg.k);
  const std::size_t n = grid.size(), c = cfg.c_r, h = cfg.h, w = cfg.w;
  const Tensor input = normal_tensor(rng, {c, h, w});
  Tensor offsets = uniform_tensor(rng, {2 * n, h, w}, -1.5, 1.5);
  for (int attempt = 0; near_lattice(offsets, grid); ++attempt) {
    if (attempt == kMaxRedraws) throw std::runtime_error("gradcheck: no kink-free sampler offsets");
    offsets = uniform_tensor(rng, {2 * n, h, w}, -1.5, 1.5);
  }
  const Tensor mods = uniform_tensor(rng, {n, h, w}, 0.05, 0.95);
  const Tensor u = normal_tensor(rng, {c, h, w, n});

  SampleContext ctx;
  const Tensor base = sample_forward(input, offsets, mods, grid, &ctx);
  SampleGrads g = sample_backward(u, ctx);
  check_input(report, fault, "sampler.input", g.input,
              [&](const Tensor& x) { return centred_dot(u, sample_forward(x, offsets, mods, grid), base); }, input);
  check_input(report, fault, "sampler.offsets", g.offsets,
              [&](const Tensor& x) { return centred_dot(u, sample_forward(input, x, mods, grid), base); }, offsets);
  check_input(report, fault, "sampler.modulations", g.modulations,
              [&](const Tensor& x) { return centred_dot(u, sample_forward(input, offsets, x, grid), base); }, mods);

  // Predictors in front of the sampler.
  const Tensor features = normal_tensor(rng, {2 * c, h, w});
  SamplerParams params = init_sampler(2 * c, grid);
  randomize_smooth(param_list(params), rng,
                   [&] { return near_lattice(predict_offsets(features, params, grid).offsets, grid); });
  const SamplingFields fields = predict_offsets(features, params, grid);
  SampleContext pctx;
  const Tensor pbase = sample_forward(input, fields.offsets, fields.modulations, grid, &pctx);
  auto loss = [&](const Tensor& feat) {
    const SamplingFields f = predict_offsets(feat, params, grid);
    return centred_dot(u, sample_forward(input, f.offsets, f.modulations, grid), pbase);
  };
  SampleGrads pg = sample_backward(u, pctx);
  SamplerParams grads = zeros_like_params(params);
  Tensor g_feat = predict_offsets_backward({pg.offsets, pg.modulations}, features, fields, params, grads);
  check_input(report, fault, "sampler.features", g_feat, loss, features);
  const ParamList gl = param_list(grads, "sampler");
  fault.apply(gl);
  append(report, oracle::check_param_gradients(param_list(params, "sampler"), gl, [&] { return loss(features); },
                                               kGradTolerance, kMaxCoords, rng, fd_step));
}

void spatial_checks(const RunConfig& cfg, Rng& rng, FaultInjector& fault, GradCheckReport& report) {
  SpatialBranchParams p = init_spatial_branch(rng, {cfg.c_l, cfg.c_h, cfg.c_r, cfg.h, cfg.w, cfg.k});
  const Tensor x_l = normal_tensor(rng, {cfg.c_l, cfg.h, cfg.w});
  const Tensor x_h = normal_tensor(rng, {cfg.c_h, cfg.h2, cfg.w2});
  const Tensor u = normal_tensor(rng, {cfg.c_r, cfg.h, cfg.w});

  SpatialContext ctx;
  randomize_smooth(param_list(p.sampler), rng, [&] {
    spatial_branch_forward(x_l, x_h, p, &ctx);
    return near_lattice(ctx.fields.offsets, p.grid);
  });
  const Tensor base = spatial_branch_forward(x_l, x_h, p, &ctx);
  SpatialBranchGrads g = spatial_branch_backward(u, ctx, p);
  check_input(report, fault, "spatial.x_l", g.x_l,
              [&](const Tensor& x) { return centred_dot(u, spatial_branch_forward(x, x_h, p), base); }, x_l);
  check_input(report, fault, "spatial.x_h", g.x_h,
              [&](const Tensor& x) { return centred_dot(u, spatial_branch_forward(x_l, x, p), base); }, x_h);
  const ParamList gl = param_list(g.params, "spatial");
  fault.apply(gl);
  append(report, oracle::check_param_gradients(param_list(p, "spatial"), gl,
                                               [&] { return centred_dot(u, spatial_branch_forward(x_l, x_h, p), base); },
                                               kGradTolerance, kMaxCoords, rng, fd_step));
}

void channel_checks(const RunConfig& cfg, Rng& rng, FaultInjector& fault, GradCheckReport& report) {
  const std::size_t c = reduced_width(cfg.c_l, cfg.c_h);
  ChannelBranchParams p = init_channel_branch(rng, {c, cfg.a, cfg.d, cfg.k_c});
  const Tensor x_l = normal_tensor(rng, {c, cfg.h, cfg.w});
  const Tensor x_h = normal_tensor(rng, {c, cfg.h2, cfg.w2});
  const Tensor u = normal_tensor(rng, {c, cfg.h, cfg.w});

  ChannelContext ctx;
  randomize_smooth(param_list(p.sampler), rng, [&] {
    channel_branch_forward(x_l, x_h, p, &ctx);
    return near_lattice(ctx.fields.offsets, p.grid);
  });
  const Tensor base = channel_branch_forward(x_l, x_h, p, &ctx);
  ChannelBranchGrads g = channel_branch_backward(u, ctx, p);
  check_input(report, fault, "channel.x_l", g.x_l,
              [&](const Tensor& x) { return centred_dot(u, channel_branch_forward(x, x_h, p), base); }, x_l);
  check_input(report, fault, "channel.x_h", g.x_h,
              [&](const Tensor& x) { return centred_dot(u, channel_branch_forward(x_l, x, p), base); }, x_h);
  const ParamList gl = param_list(g.params, "channel");
  fault.apply(gl);
  append(report, oracle::check_param_gradients(param_list(p, "channel"), gl,
                                               [&] { return centred_dot(u, channel_branch_forward(x_l, x_h, p), base); },
                                               kGradTolerance, kMaxCoords, rng, fd_step));
}

DdsmConfig block_config(const RunConfig& cfg) {
  DdsmConfig dc;
  dc.low_channels = cfg.c_l;
  dc.high_channels = cfg.c_h;
  dc.height = cfg.h;
  dc.cols = cfg.w;
  dc.high_height = cfg.h2;
  dc.high_cols = cfg.w2;
  dc.k = cfg.k;
  dc.k_c = cfg.k_c;
  dc.a = cfg.a;
  dc.d = cfg.d;
  return dc;
}

DdsmParams random_block(const RunConfig& cfg, Rng& rng) {
  DdsmParams p = init_ddsm(rng, block_config(cfg));
  randomize(param_list(p.spatial.sampler), rng, kPredictorBound);
  randomize(param_list(p.channel.sampler), rng, kPredictorBound);
  return p;
}

void block_checks(const RunConfig& cfg, Rng& rng, FaultInjector& fault, GradCheckReport& report) {
  DdsmParams p = init_ddsm(rng, block_config(cfg));
  const Tensor x_l = normal_tensor(rng, {cfg.c_l, cfg.h, cfg.w});
  const Tensor x_h = normal_tensor(rng, {cfg.c_h, cfg.h2, cfg.w2});
  const Tensor u = normal_tensor(rng, {p.spatial.theta.out_channels(), cfg.h, cfg.w});

  DdsmContext ctx;
  ParamList predictors = param_list(p.spatial.sampler);
  list_params(p.channel.sampler, "", predictors);
  randomize_smooth(predictors, rng, [&] {
    ddsm_forward(x_l, x_h, p, &ctx);
    return near_lattice(ctx.spatial.fields.offsets, p.spatial.grid) ||
           near_lattice(ctx.channel.fields.offsets, p.channel.grid);
  });
  const Tensor base = ddsm_forward(x_l, x_h, p, &ctx);
  DdsmGrads g = ddsm_backward(u, ctx, p);
  check_input(report, fault, "ddsm.x_l", g.x_l, [&](const Tensor& x) { return centred_dot(u, ddsm_forward(x, x_h, p), base); },
              x_l);
  check_input(report, fault, "ddsm.x_h", g.x_h, [&](const Tensor& x) { return centred_dot(u, ddsm_forward(x_l, x, p), base); },
              x_h);
  const ParamList gl = param_list(g.params, "ddsm");
  fault.apply(gl);
  append(report, oracle::check_param_gradients(param_list(p, "ddsm"), gl,
                                               [&] { return centred_dot(u, ddsm_forward(x_l, x_h, p), base); }, kGradTolerance,
                                               kMaxCoords, rng, fd_step));
}

EquivEntry make_entry(std::string name, double err, double tol) { return {std::move(name), err, tol, err <= tol}; }

// Full coverage on an H x W map: sample n visits absolute position q_n from
// every query, via integer offsets q_n - p - p_n on a footprint of all
// displacements relative to the centre.
EquivEntry dense_equivalence(Rng& rng, bool faulty) {
  const std::size_t c = 2, h = 4, w = 4;
  const Tensor q = normal_tensor(rng, {c, h, w});
  const Tensor k = normal_tensor(rng, {c, h, w});
  const Tensor v = normal_tensor(rng, {c, h, w});
  const long cy = static_cast<long>(h / 2), cx = static_cast<long>(w / 2);
  std::vector<Displacement> pts;
  for (long y = 0; y < static_cast<long>(h); ++y)
    for (long x = 0; x < static_cast<long>(w); ++x) pts.push_back({y - cy, x - cx});
  const GridSpec grid = GridSpec::from_displacements(pts);
  const std::size_t n = grid.size();
  Tensor offsets({2 * n, h, w});
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        offsets(2 * s, y, x) = static_cast<double>(cy - static_cast<long>(y));
        offsets(2 * s + 1, y, x) = static_cast<double>(cx - static_cast<long>(x));
      }
  if (faulty) offsets[0] += kKernelFault;
  const Tensor mods({n, h, w}, 1.0);
  const Tensor sparse = spatial_attention(q, k, v, offsets, mods, grid);
  return make_entry("dense_equivalence", max_abs_diff(sparse, oracle::dense_nonlocal(q, k, v)), kEquivTolerance);
}

std::size_t pick(Rng& rng, std::size_t lo, std::size_t hi) { return lo + rng.below(hi - lo + 1); }

EquivEntry spatial_enumeration(Rng& rng, std::size_t trials, bool faulty) {
  double worst = 0.0;
  for (std::size_t t = 0; t < trials; ++t) {
    const std::size_t c = pick(rng, 1, 4), h = pick(rng, 1, 6), w = pick(rng, 1, 6);
    const GridSpec grid(rng.below(2) ? 3 : 1);
    const std::size_t n = grid.size();
    const Tensor q = normal_tensor(rng, {c, h, w});
    const Tensor k = normal_tensor(rng, {c, h, w});
    const Tensor v = normal_tensor(rng, {c, h, w});
    const Tensor offsets = uniform_tensor(rng, {2 * n, h, w}, -2.0, 2.0);
    const Tensor mods = uniform_tensor(rng, {n, h, w}, 0.0, 1.0);
    Tensor used = offsets;
    if (faulty) used[0] += kKernelFault;
    const Tensor kernel = spatial_attention(q, k, v, used, mods, grid);
    worst = std::max(worst, max_abs_diff(kernel, oracle::enumerate_spatial(q, k, v, offsets, mods, grid)));
  }
  return make_entry("spatial_enumeration", worst, kEquivTolerance);
}

EquivEntry channel_enumeration(Rng& rng, std::size_t trials, bool faulty) {
  double worst = 0.0;
  for (std::size_t t = 0; t < trials; ++t) {
    const std::size_t c = rng.below(2) ? 4 : 1;
    const std::size_t h = pick(rng, 1, 6), w = pick(rng, 1, 6), h2 = pick(rng, 1, 6), w2 = pick(rng, 1, 6);
    const std::size_t a = pick(rng, 1, std::min({h, w, h2, w2})), d = pick(rng, 1, std::min(h2, w2));
    ChannelBranchParams p = init_channel_branch(rng, {c, a, d, rng.below(2) ? std::size_t{3} : std::size_t{1}});
    randomize(param_list(p.sampler), rng, kPredictorBound);
    const PooledInputs pooled = pool_and_pack(normal_tensor(rng, {c, h, w}), normal_tensor(rng, {c, h2, w2}), a, d);
    ChannelBranchParams used = p;
    if (faulty) used.sampler.offset.bias[0] += kKernelFault;
    const Tensor kernel = channel_attention(pooled, used, h, w);
    worst = std::max(worst, max_abs_diff(kernel, oracle::enumerate_channel(pooled, p, h, w)));
  }
  return make_entry("channel_enumeration", worst, kEquivTolerance);
}

EquivEntry block_equivalence(const RunConfig& cfg, Rng& rng, bool faulty) {
  const DdsmParams p = random_block(cfg, rng);
  const Tensor x_l = normal_tensor(rng, {cfg.c_l, cfg.h, cfg.w});
  const Tensor x_h = normal_tensor(rng, {cfg.c_h, cfg.h2, cfg.w2});
  DdsmParams used = p;
  if (faulty) used.spatial.sampler.offset.bias[0] += kKernelFault;
  return make_entry("block_equivalence", max_abs_diff(ddsm_forward(x_l, x_h, used), oracle::ddsm_forward(x_l, x_h, p)),
                    kEquivTolerance);
}

CostConfig cost_config(const RunConfig& cfg) {
  CostConfig c;
  c.low_channels = cfg.c_l;
  c.high_channels = cfg.c_h;
  c.width = reduced_width(cfg.c_l, cfg.c_h);
  c.height = cfg.h;
  c.cols = cfg.w;
  c.high_height = cfg.h2;
  c.high_cols = cfg.w2;
  c.samples = cfg.k * cfg.k;
  c.channel_samples = cfg.k_c * cfg.k_c;
  c.a = std::min({cfg.a, cfg.h, cfg.w, cfg.h2, cfg.w2});
  c.d = std::min({cfg.d, cfg.h2, cfg.w2});
  return c;
}

void cost_equivalence(const RunConfig& cfg, Rng& rng, EquivReport& report) {
  const CostConfig cc = cost_config(cfg);
  DdsmParams p = random_block(cfg, rng);
  const Tensor x_l = normal_tensor(rng, {cfg.c_l, cfg.h, cfg.w});
  const Tensor x_h = normal_tensor(rng, {cfg.c_h, cfg.h2, cfg.w2});

  std::uint64_t ddsm_macs = 0, dense_macs = 0;
  {
    ScopedMacCount count;
    ddsm_forward(x_l, x_h, p);
    ddsm_macs = count.count();
  }
  {
    ScopedMacCount count;
    const Qkv qkv =
        prepare_qkv_reduced(conv1x1(x_l, p.spatial.reduce_l), conv1x1(x_h, p.spatial.reduce_h), p.spatial);
    oracle::dense_nonlocal(qkv.q, qkv.key_src, qkv.val_src);
    dense_macs = count.count();
  }
  auto gap = [](std::uint64_t a, std::uint64_t b) { return static_cast<double>(a > b ? a - b : b - a); };
  report.entries.push_back(make_entry("cost_ddsm_macs", gap(count_ddsm(cc).total_macs(), ddsm_macs), 0.0));
  report.entries.push_back(make_entry("cost_dense_macs", gap(count_dense_nonlocal(cc).total_macs(), dense_macs), 0.0));
  report.entries.push_back(
      make_entry("cost_ddsm_params", gap(count_ddsm(cc).total_params(), parameter_count(param_list(p))), 0.0));
}

std::vector<double> parse_thresholds(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  for (std::string tok; std::getline(ss, tok, ',');) {
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (ec != std::errc() || ptr != tok.data() + tok.size() || !(v >= 0.0)) {
      throw ConfigError("thresholds: bad value '" + tok + "'");
    }
    out.push_back(v);
  }
  if (out.empty()) throw ConfigError("thresholds: empty list");
  return out;
}

void draw_cross(std::vector<Rgb>& px, std::size_t h, std::size_t w, long cy, long cx, long arm, Rgb colour) {
  for (long t = -arm; t <= arm; ++t) {
    for (const auto& [y, x] : {std::pair{cy + t, cx}, std::pair{cy, cx + t}}) {
      if (y >= 0 && x >= 0 && y < static_cast<long>(h) && x < static_cast<long>(w)) {
        px[static_cast<std::size_t>(y) * w + static_cast<std::size_t>(x)] = colour;
      }
    }
  }
}

}  // namespace

GradCheckReport gradcheck_suite(const RunConfig& cfg) {
  Rng rng(cfg.seed);
  fd_step = cfg.fd_step;
  FaultInjector fault(cfg.fault);
  GradCheckReport report;
  sampler_checks(cfg, rng, fault, report);
  spatial_checks(cfg, rng, fault, report);
  channel_checks(cfg, rng, fault, report);
  block_checks(cfg, rng, fault, report);
  if (fault.active() && !fault.hit()) throw ConfigError("fault: no gradient group named '" + cfg.fault + "'");
  return report;
}

bool EquivReport::passed() const {
  return std::all_of(entries.begin(), entries.end(), [](const EquivEntry& e) { return e.passed; });
}

std::string EquivReport::to_csv() const {
  std::ostringstream os;
  os << "check,max_abs_err,tolerance,pass\n";
  for (const auto& e : entries) {
    os << e.name << ',' << format_real(e.max_abs_err) << ',' << format_real(e.tolerance) << ','
       << (e.passed ? 1 : 0) << '\n';
  }
  return os.str();
}

EquivReport equiv_suite(const RunConfig& cfg) {
  if (cfg.fault != "none" && cfg.fault != "kernel") throw ConfigError("fault: equiv accepts only 'kernel'");
  const bool faulty = cfg.fault == "kernel";
  Rng rng(cfg.seed);
  EquivReport report;
  report.entries.push_back(dense_equivalence(rng, faulty));
  if (cfg.trials > 0) {
    report.entries.push_back(spatial_enumeration(rng, cfg.trials, faulty));
    report.entries.push_back(channel_enumeration(rng, cfg.trials, faulty));
  }
  report.entries.push_back(block_equivalence(cfg, rng, faulty));
  cost_equivalence(cfg, rng, report);
  return report;
}

ToyConfig toy_config(const RunConfig& cfg) {
  ToyConfig tc = toy_preset(cfg.preset);
  if (cfg.arch == "pyramid") {
    tc.arch = Architecture::Pyramid;
  } else if (cfg.arch == "aspp") {
    tc.arch = Architecture::Aspp;
  } else {
    throw ConfigError("arch: expected pyramid or aspp, got '" + cfg.arch + "'");
  }
  tc.classes = cfg.classes;
  return tc;
}

TrainConfig train_config(const RunConfig& cfg) {
  TrainConfig t;
  t.lr = cfg.lr;
  t.momentum = cfg.momentum;
  t.weight_decay = cfg.weight_decay;
  t.steps = cfg.steps;
  return t;
}

ToySetup toy_setup(const RunConfig& cfg) {
  // Data first, so every preset sees the same samples under one seed.
  Rng rng(cfg.seed);
  ToySetup s;
  const ToyConfig tc = toy_config(cfg);
  s.data = make_polygon_dataset(rng, cfg.samples, cfg.image, tc.classes, tc.in_channels, cfg.noise);
  s.model = init_toy_model(rng, tc, cfg.image);
  return s;
}

std::vector<Marker> sample_markers(const Tensor& offsets, const Tensor& modulations, const GridSpec& grid,
                                   std::size_t qy, std::size_t qx) {
  std::vector<Marker> out;
  for (std::size_t n = 0; n < grid.size(); ++n) {
    Marker m;
    m.n = n;
    m.grid_dy = grid[n].dy;
    m.grid_dx = grid[n].dx;
    m.offset_y = offsets(2 * n, qy, qx);
    m.offset_x = offsets(2 * n + 1, qy, qx);
    m.y = static_cast<double>(qy) + static_cast<double>(m.grid_dy) + m.offset_y;
    m.x = static_cast<double>(qx) + static_cast<double>(m.grid_dx) + m.offset_x;
    m.modulation = modulations(n, qy, qx);
    out.push_back(m);
  }
  return out;
}

int cmd_gradcheck(const RunConfig& cfg, std::ostream& out) {
  const GradCheckReport report = gradcheck_suite(cfg);
  write_text(fs::path(cfg.out) / "gradcheck.csv", report.to_csv());
  out << report.to_csv();
  std::size_t failed = 0;
  for (const auto& e : report.entries) {
    if (e.max_rel_err > kGradTolerance) {
      out << "FAIL " << e.group << " max_rel_err " << format_real(e.max_rel_err) << " at " << e.worst_index
          << " (analytic " << format_real(e.worst_analytic) << ", numeric " << format_real(e.worst_numeric) << ")\n";
      ++failed;
    }
  }
  out << (failed ? "gradcheck failed: " : "gradcheck passed: ") << report.entries.size() - failed << '/'
      << report.entries.size() << " groups within " << format_real(kGradTolerance) << '\n';
  return failed ? 1 : 0;
}

int cmd_equiv(const RunConfig& cfg, std::ostream& out) {
  const EquivReport report = equiv_suite(cfg);
  write_text(fs::path(cfg.out) / "equiv.csv", report.to_csv());
  out << report.to_csv();
  for (const auto& e : report.entries) {
    if (!e.passed) out << "FAIL " << e.name << " max_abs_err " << format_real(e.max_abs_err) << '\n';
  }
  out << (report.passed() ? "equiv passed\n" : "equiv failed\n");
  return report.passed() ? 0 : 1;
}

int cmd_train(const RunConfig& cfg, std::ostream& out) {
  ToySetup setup = toy_setup(cfg);
  const TrainState st = train_toy(std::move(setup.model), setup.data, train_config(cfg), cfg.seed);
  const fs::path dir(cfg.out);
  write_text(dir / "loss.csv", curve_to_csv(st.curve));
  ToyModel params = st.params;
  save_checkpoint(dir / "checkpoint", param_list(params));
  const StepRecord& first = st.curve.front();
  const StepRecord& last = st.curve.back();
  out << "initial loss " << format_real(first.loss) << " accuracy " << format_real(first.accuracy) << '\n';
  out << "final loss " << format_real(last.loss) << " accuracy " << format_real(last.accuracy) << '\n';
  return 0;
}

int cmd_dump(const RunConfig& cfg, std::ostream& out) {
  ToySetup setup = toy_setup(cfg);
  ToyModel& model = setup.model;
  if (!cfg.checkpoint.empty()) load_checkpoint(cfg.checkpoint, param_list(model));
  const Tensor image = cfg.input.empty() ? setup.data.front().image : load_tensor(cfg.input);
  const std::size_t j = model.junctions.size() - 1;
  if (model.junctions[j].kind != Fusion::Ddsm) throw ConfigError("dump: the last junction is not a DDSM");

  ToyContext ctx;
  toy_forward(model, image, &ctx);
  const JunctionContext& jc = ctx.junctions[j];
  const DdsmContext& dc = jc.ddsm;
  const std::size_t h = jc.low.dim(1), w = jc.low.dim(2);
  const std::size_t qy = cfg.qy < 0 ? h / 2 : static_cast<std::size_t>(cfg.qy);
  const std::size_t qx = cfg.qx < 0 ? w / 2 : static_cast<std::size_t>(cfg.qx);
  if (qy >= h || qx >= w) throw ConfigError("dump: query pixel outside the " + shape_to_string({h, w}) + " map");

  const fs::path dir(cfg.out);
  write_pgm_image(dir / "x_l.pgm", channel_mean(jc.low));
  write_pgm_image(dir / "x_h.pgm", channel_mean(jc.high));
  write_pgm_image(dir / "x_sout.pgm", channel_mean(dc.s_out));
  write_pgm_image(dir / "x_sout_cout.pgm", channel_mean(dc.s_out + dc.c_out));

  const auto markers = sample_markers(dc.spatial.fields.offsets, dc.spatial.fields.modulations,
                                      model.junctions[j].ddsm.spatial.grid, qy, qx);
  std::ostringstream csv;
  csv << "n,grid_dy,grid_dx,offset_y,offset_x,y,x,modulation\n";
  for (const auto& m : markers) {
    csv << m.n << ',' << m.grid_dy << ',' << m.grid_dx << ',' << format_real(m.offset_y) << ','
        << format_real(m.offset_x) << ',' << format_real(m.y) << ',' << format_real(m.x) << ','
        << format_real(m.modulation) << '\n';
  }
  write_text(dir / "markers.csv", csv.str());

  const std::size_t s = std::max<std::size_t>(cfg.scale, 1), oh = h * s, ow = w * s;
  const auto gray = normalize_to_bytes(channel_mean(jc.low));
  std::vector<Rgb> px(oh * ow);
  for (std::size_t y = 0; y < oh; ++y)
    for (std::size_t x = 0; x < ow; ++x) {
      const std::uint8_t v = gray[(y / s) * w + x / s];
      px[y * ow + x] = {v, v, v};
    }
  const long arm = static_cast<long>(s / 2);
  auto centre = [&](double c) { return std::lround((c + 0.5) * static_cast<double>(s) - 0.5); };
  draw_cross(px, oh, ow, centre(static_cast<double>(qy)), centre(static_cast<double>(qx)), arm, {0, 255, 0});
  for (const auto& m : markers) draw_cross(px, oh, ow, centre(m.y), centre(m.x), arm, {255, 0, 0});
  write_ppm(dir / "samples.ppm", oh, ow, px);

  out << "query (" << qy << ',' << qx << ") on " << h << 'x' << w << ", " << markers.size() << " samples written to "
      << dir.string() << '\n';
  return 0;
}

int cmd_cost(const RunConfig& cfg, std::ostream& out) {
  const CostConfig cc = cost_config(cfg);
  const CostReport ddsm = count_ddsm(cc), dense = count_dense_nonlocal(cc);
  const Ratio r = affinity_ratio(cc);
  const std::uint64_t sparse_aff = ddsm.macs_of("spatial.affinity"), dense_aff = dense.macs_of("dense.affinity");
  std::ostringstream csv;
  csv << ddsm.to_csv(true) << dense.to_csv(false);
  std::ostringstream ratio;
  ratio << "ddsm_affinity_macs,dense_affinity_macs,ratio,value\n"
        << sparse_aff << ',' << dense_aff << ',' << r.num << '/' << r.den << ',' << format_real(r.value()) << '\n';
  write_text(fs::path(cfg.out) / "cost.csv", csv.str());
  write_text(fs::path(cfg.out) / "affinity_ratio.csv", ratio.str());
  out << csv.str() << "affinity_ratio " << r.num << '/' << r.den << " (" << format_real(r.value()) << ")\n";
  return 0;
}

int cmd_fscore(const RunConfig& cfg, std::ostream& out) {
  if (cfg.pred.empty() || cfg.gt.empty()) throw ConfigError("fscore: --pred and --gt are required");
  const BoundaryEvalResult res = evaluate_boundaries(read_pgm(cfg.pred), read_pgm(cfg.gt), parse_thresholds(cfg.thresholds));
  write_text(fs::path(cfg.out) / "fscore.csv", res.to_csv());
  out << res.to_csv();
  return 0;
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Dynamic dual sampling module: gradient checks, oracle equivalence, toy training and reports", "ddsm"};
  app.set_help_flag("--help", "print this help and exit");
  app.set_config("--config", "", "flat key = value configuration file");
  app.allow_config_extras(CLI::config_extras_mode::error);
  app.fallthrough();
  app.require_subcommand(1);

  RunConfig cfg;
  app.add_option("--seed", cfg.seed, "random seed (DDSM_SEED overrides the config file)")->capture_default_str();
  app.add_option("--out", cfg.out, "output directory")->capture_default_str();
  app.add_option("--fault", cfg.fault, "negative control: gradient group name, or kernel")->capture_default_str();
  app.add_option("--c_l", cfg.c_l, "low-level input channels")->capture_default_str();
  app.add_option("--c_h", cfg.c_h, "high-level input channels")->capture_default_str();
  app.add_option("--c_r", cfg.c_r, "width of the stand-alone sampler/spatial checks")->capture_default_str();
  app.add_option("--h", cfg.h, "x_l height")->capture_default_str();
  app.add_option("--w", cfg.w, "x_l width")->capture_default_str();
  app.add_option("--h2", cfg.h2, "x_h height")->capture_default_str();
  app.add_option("--w2", cfg.w2, "x_h width")->capture_default_str();
  app.add_option("--k", cfg.k, "spatial grid side (N = k^2)")->capture_default_str();
  app.add_option("--k_c", cfg.k_c, "channel grid side (N_c = k_c^2)")->capture_default_str();
  app.add_option("--a", cfg.a, "channel-branch pooling size")->capture_default_str();
  app.add_option("--d", cfg.d, "channel-branch value resolution")->capture_default_str();
  app.add_option("--fd_step", cfg.fd_step, "central-difference step")->capture_default_str();
  app.add_option("--trials", cfg.trials, "random configurations per enumeration check")->capture_default_str();
  app.add_option("--preset", cfg.preset, "best, ablation or baseline")->capture_default_str();
  app.add_option("--arch", cfg.arch, "pyramid or aspp")->capture_default_str();
  app.add_option("--image", cfg.image, "synthetic image side")->capture_default_str();
  app.add_option("--classes", cfg.classes, "number of classes")->capture_default_str();
  app.add_option("--samples", cfg.samples, "training images")->capture_default_str();
  app.add_option("--noise", cfg.noise, "pixel noise standard deviation")->capture_default_str();
  app.add_option("--lr", cfg.lr, "base learning rate")->capture_default_str();
  app.add_option("--momentum", cfg.momentum, "SGD momentum")->capture_default_str();
  app.add_option("--weight_decay", cfg.weight_decay, "weight decay")->capture_default_str();
  app.add_option("--steps", cfg.steps, "SGD steps")->capture_default_str();
  app.add_option("--checkpoint", cfg.checkpoint, "checkpoint directory for dump");
  app.add_option("--input", cfg.input, "input image tensor file for dump");
  app.add_option("--qy", cfg.qy, "query row on x_l (-1: centre)")->capture_default_str();
  app.add_option("--qx", cfg.qx, "query column on x_l (-1: centre)")->capture_default_str();
  app.add_option("--scale", cfg.scale, "overlay magnification")->capture_default_str();
  app.add_option("--pred", cfg.pred, "predicted label map (PGM)");
  app.add_option("--gt", cfg.gt, "ground-truth label map (PGM)");
  app.add_option("--thresholds", cfg.thresholds, "comma-separated pixel thresholds")->capture_default_str();

  using Command = int (*)(const RunConfig&, std::ostream&);
  const std::vector<std::tuple<std::string, std::string, Command>> commands = {
      {"gradcheck", "finite-difference checks of every gradient", cmd_gradcheck},
      {"equiv", "kernel versus reference equivalence and cost-counter equality", cmd_equiv},
      {"train", "train the toy segmentation model", cmd_train},
      {"dump", "write feature maps and sample-position overlays", cmd_dump},
      {"cost", "parameter and MAC report, sparse versus dense", cmd_cost},
      {"fscore", "boundary F-score of two label maps", cmd_fscore},
  };
  for (const auto& [name, help, fn] : commands) app.add_subcommand(name, help);

  std::vector<std::string> rev(args.rbegin(), args.rend());
  if (!rev.empty()) rev.pop_back();  // program name
  try {
    app.parse(rev);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  }

  // The environment seed beats the config file but not an explicit --seed.
  const bool seed_on_command_line = std::find(args.begin(), args.end(), "--seed") != args.end() ||
                                    std::any_of(args.begin(), args.end(),
                                                [](const std::string& a) { return a.rfind("--seed=", 0) == 0; });
  if (const char* env = std::getenv("DDSM_SEED"); env && !seed_on_command_line) {
    const std::string text(env);
    std::uint64_t seed = 0;
    const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), seed);
    if (ec != std::errc() || ptr != text.data() + text.size()) {
      err << "DDSM_SEED: not an unsigned integer: '" << text << "'\n";
      return 2;
    }
    cfg.seed = seed;
  }

  for (const auto& [name, help, fn] : commands) {
    if (!app.got_subcommand(name)) continue;
    try {
      fs::create_directories(cfg.out);
      write_text(fs::path(cfg.out) / (name + ".config"), app.config_to_str(true, false));
      return fn(cfg, out);
    } catch (const TrainingDiverged& e) {
      err << "error: " << e.what() << '\n';
      return 1;
    } catch (const std::exception& e) {
      err << "error: " << e.what() << '\n';
      return 2;
    }
  }
  return 2;
}

}  // namespace ddsm
