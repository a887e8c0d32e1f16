#include "ddsm/toy.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "ddsm/io.hpp"
#include "ddsm/spatial.hpp"

namespace ddsm {
namespace {

constexpr std::size_t kStages = 4;

std::size_t junction_count(const ToyConfig& cfg) { return cfg.arch == Architecture::Pyramid ? 3 : 1; }

Fusion junction_kind(const ToyConfig& cfg, std::size_t j) {
  return cfg.arch == Architecture::Pyramid ? cfg.junctions[j] : cfg.junctions[2];
}

// Pyramid junction j forms x~_{4-j}; the single ASPP junction forms x~_2.
std::string junction_name(const ToyConfig& cfg, std::size_t j) {
  return "fuse" + std::to_string(cfg.arch == Architecture::Pyramid ? 4 - j : 2);
}

void add_into(const ParamList& dst, const ParamList& src) {
  for (std::size_t i = 0; i < dst.size(); ++i) *dst[i].tensor += *src[i].tensor;
}

Tensor fuse_forward(const Junction& j, const Tensor& low, const Tensor& high, JunctionContext* ctx) {
  if (j.kind == Fusion::Ddsm) return ddsm_forward(low, high, j.ddsm, ctx ? &ctx->ddsm : nullptr);
  Tensor high_reduced = conv1x1(high, j.add.reduce_h);
  Tensor out = conv1x1(low, j.add.reduce_l) + bilinear_resize(high_reduced, low.dim(1), low.dim(2));
  if (ctx) ctx->high_reduced = std::move(high_reduced);
  return out;
}

// Returns (grad low, grad high) and accumulates parameter gradients into g.
std::pair<Tensor, Tensor> fuse_backward(const Tensor& up, const JunctionContext& ctx, const Junction& j,
                                        Junction& g) {
  if (j.kind == Fusion::Ddsm) {
    DdsmGrads dg = ddsm_backward(up, ctx.ddsm, j.ddsm);
    add_into(param_list(g.ddsm), param_list(dg.params));
    return {std::move(dg.x_l), std::move(dg.x_h)};
  }
  Tensor g_low = conv1x1_backward(up, ctx.low, j.add.reduce_l, g.add.reduce_l);
  Tensor g_high_red = bilinear_resize_backward(up, ctx.high_reduced.shape());
  Tensor g_high = conv1x1_backward(g_high_red, ctx.high, j.add.reduce_h, g.add.reduce_h);
  return {std::move(g_low), std::move(g_high)};
}

// conv3x3 -> relu, the stage context keeping both tensors.
Tensor conv_relu(const Conv3x3& conv, const Tensor& input, StageContext* ctx) {
  Tensor pre = conv3x3(input, conv);
  Tensor act = relu(pre);
  if (ctx) *ctx = {input, std::move(pre), act};
  return act;
}

Tensor conv_relu_backward(const Tensor& up, const StageContext& ctx, const Conv3x3& conv, Conv3x3& grad) {
  return conv3x3_backward(relu_backward(up, ctx.pre_activation), ctx.input, conv, grad);
}

Tensor random_palette_image(Rng& rng, const std::vector<int>& labels, std::size_t size, std::size_t channels,
                            const std::vector<std::vector<double>>& palette, double noise) {
  Tensor img({channels, size, size});
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t i = 0; i < size * size; ++i) {
      img[c * size * size + i] = palette[static_cast<std::size_t>(labels[i])][c] + noise * rng.normal();
    }
  }
  return img;
}

}  // namespace

ToyConfig toy_preset(const std::string& name) {
  ToyConfig cfg;
  if (name == "best") {
    cfg.k = 5;
    cfg.k_c = 3;
    cfg.junctions = {Fusion::Ddsm, Fusion::Ddsm, Fusion::Ddsm};
  } else if (name == "ablation") {
    cfg.k = 3;
    cfg.k_c = 3;
    cfg.junctions = {Fusion::BilinearAdd, Fusion::Ddsm, Fusion::Ddsm};
  } else if (name == "baseline") {
    cfg.junctions = {Fusion::BilinearAdd, Fusion::BilinearAdd, Fusion::BilinearAdd};
  } else {
    throw std::invalid_argument("unknown preset '" + name + "' (expected best, ablation or baseline)");
  }
  return cfg;
}

ToyModel init_toy_model(Rng& rng, const ToyConfig& cfg, std::size_t image_size) {
  if (image_size == 0 || image_size % 16 != 0) {
    throw std::invalid_argument("toy model: image size " + std::to_string(image_size) + " is not divisible by 16");
  }
  ToyModel m;
  m.config = cfg;
  m.image_size = image_size;
  std::size_t in = cfg.in_channels;
  for (std::size_t s = 0; s < kStages; ++s) {
    m.encoder.push_back(init_conv3x3(rng, in, cfg.widths[s]));
    in = cfg.widths[s];
  }
  if (cfg.arch == Architecture::Aspp) {
    m.context.push_back(init_conv3x3(rng, cfg.widths[3], cfg.widths[3], 1));
    m.context.push_back(init_conv3x3(rng, cfg.widths[3], cfg.widths[3], 2));
  }
  std::size_t high_ch = cfg.widths[3];
  for (std::size_t j = 0; j < junction_count(cfg); ++j) {
    const std::size_t stage = cfg.arch == Architecture::Pyramid ? 2 - j : 0;  // index into widths
    const std::size_t low_ch = cfg.widths[stage];
    const std::size_t low_side = image_size >> (stage + 1);
    const std::size_t high_side = cfg.arch == Architecture::Pyramid ? low_side / 2 : image_size / 16;
    Junction junction;
    junction.kind = junction_kind(cfg, j);
    const std::size_t cr = reduced_width(low_ch, high_ch);
    if (junction.kind == Fusion::Ddsm) {
      DdsmConfig dc;
      dc.low_channels = low_ch;
      dc.high_channels = high_ch;
      dc.width = cr;
      dc.height = dc.cols = low_side;
      dc.high_height = dc.high_cols = high_side;
      dc.k = cfg.k;
      dc.k_c = cfg.k_c;
      dc.a = cfg.a;
      dc.d = cfg.d;
      junction.ddsm = init_ddsm(rng, dc);
    } else {
      junction.add.reduce_l = init_linear(rng, low_ch, cr);
      junction.add.reduce_h = init_linear(rng, high_ch, cr);
    }
    m.junctions.push_back(std::move(junction));
    high_ch = cr;
  }
  m.head = init_linear(rng, high_ch, cfg.classes);
  return m;
}

void list_params(Junction& j, const std::string& prefix, ParamList& out) {
  if (j.kind == Fusion::Ddsm) {
    list_params(j.ddsm, prefix, out);
  } else {
    list_params(j.add.reduce_l, join_name(prefix, "reduce_l"), out);
    list_params(j.add.reduce_h, join_name(prefix, "reduce_h"), out);
  }
}

void list_params(ToyModel& m, const std::string& prefix, ParamList& out) {
  for (std::size_t s = 0; s < m.encoder.size(); ++s) {
    list_params(m.encoder[s], join_name(prefix, ("encoder" + std::to_string(s + 2)).c_str()), out);
  }
  for (std::size_t s = 0; s < m.context.size(); ++s) {
    list_params(m.context[s], join_name(prefix, ("context" + std::to_string(s)).c_str()), out);
  }
  for (std::size_t j = 0; j < m.junctions.size(); ++j) {
    list_params(m.junctions[j], join_name(prefix, junction_name(m.config, j).c_str()), out);
  }
  list_params(m.head, join_name(prefix, "head"), out);
}

Tensor toy_forward(const ToyModel& model, const Tensor& image, ToyContext* ctx) {
  const std::size_t size = model.image_size;
  expect_shape(image, {model.config.in_channels, size, size}, "toy_forward image");
  ToyContext local;
  local.stages.resize(kStages);
  local.context.resize(model.context.size());
  local.junctions.resize(model.junctions.size());

  std::vector<Tensor> x;  // x_2 .. x_5
  Tensor cur = image;
  for (std::size_t s = 0; s < kStages; ++s) {
    Tensor act = conv_relu(model.encoder[s], cur, &local.stages[s]);
    cur = avg_pool_to(act, act.dim(1) / 2);
    x.push_back(cur);
  }

  if (model.config.arch == Architecture::Pyramid) {
    cur = x[3];
    for (std::size_t j = 0; j < model.junctions.size(); ++j) {
      JunctionContext& jc = local.junctions[j];
      jc.low = x[2 - j];
      jc.high = cur;
      cur = fuse_forward(model.junctions[j], jc.low, jc.high, &jc);
    }
  } else {
    Tensor c = x[3];
    for (std::size_t i = 0; i < model.context.size(); ++i) c = conv_relu(model.context[i], c, &local.context[i]);
    JunctionContext& jc = local.junctions[0];
    jc.low = x[0];
    jc.high = c;
    cur = fuse_forward(model.junctions[0], jc.low, jc.high, &jc);
  }

  local.head_input = cur;
  local.logits_low = conv1x1(cur, model.head);
  Tensor scores = bilinear_resize(local.logits_low, size, size);
  if (ctx) {
    local.valid = true;
    *ctx = std::move(local);
  }
  return scores;
}

ToyModel toy_backward(const Tensor& grad_scores, const ToyContext& ctx, const ToyModel& model) {
  if (!ctx.valid) throw std::logic_error("toy_backward: missing forward context");
  ToyModel g = zeros_like_params(model);
  Tensor g_cur = bilinear_resize_backward(grad_scores, ctx.logits_low.shape());
  g_cur = conv1x1_backward(g_cur, ctx.head_input, model.head, g.head);

  std::vector<Tensor> g_x(kStages);  // gradients w.r.t. x_2 .. x_5
  if (model.config.arch == Architecture::Pyramid) {
    for (std::size_t j = model.junctions.size(); j-- > 0;) {
      auto [g_low, g_high] = fuse_backward(g_cur, ctx.junctions[j], model.junctions[j], g.junctions[j]);
      g_x[2 - j] = std::move(g_low);
      g_cur = std::move(g_high);
    }
    g_x[3] = std::move(g_cur);
  } else {
    auto [g_low, g_high] = fuse_backward(g_cur, ctx.junctions[0], model.junctions[0], g.junctions[0]);
    g_x[0] = std::move(g_low);
    for (std::size_t i = model.context.size(); i-- > 0;) {
      g_high = conv_relu_backward(g_high, ctx.context[i], model.context[i], g.context[i]);
    }
    g_x[3] = std::move(g_high);
  }

  Tensor g_out;  // gradient flowing into the output of stage s from stage s+1
  for (std::size_t s = kStages; s-- > 0;) {
    Tensor up = std::move(g_x[s]);
    if (up.empty()) up = Tensor::zeros_like(g_out);
    if (!g_out.empty()) up += g_out;
    const StageContext& sc = ctx.stages[s];
    Tensor g_act = avg_pool_to_backward(up, sc.activation.shape());
    g_out = conv_relu_backward(g_act, sc, model.encoder[s], g.encoder[s]);
  }
  return g;
}

std::vector<Sample> make_polygon_dataset(Rng& rng, std::size_t count, std::size_t size, std::size_t classes,
                                         std::size_t channels, double noise) {
  if (classes < 2) throw std::invalid_argument("polygon dataset: need at least 2 classes");
  std::vector<std::vector<double>> palette(classes, std::vector<double>(channels));
  for (auto& colour : palette) {
    for (auto& v : colour) v = rng.uniform(-1.0, 1.0);
  }
  std::vector<Sample> out;
  const double side = static_cast<double>(size);
  for (std::size_t i = 0; i < count; ++i) {
    std::vector<int> labels(size * size, 0);
    for (std::size_t cls = 1; cls < classes; ++cls) {
      // Vertices at sorted angles on a circle form a convex polygon.
      const std::size_t n_vertices = 3 + rng.below(4);
      const double cy = rng.uniform(0.2, 0.8) * side, cx = rng.uniform(0.2, 0.8) * side;
      const double radius = rng.uniform(0.15, 0.35) * side;
      std::vector<double> angles(n_vertices);
      for (auto& a : angles) a = rng.uniform(0.0, 2.0 * M_PI);
      std::sort(angles.begin(), angles.end());
      std::vector<std::pair<double, double>> poly;
      for (double a : angles) poly.emplace_back(cy + radius * std::sin(a), cx + radius * std::cos(a));
      for (std::size_t y = 0; y < size; ++y) {
        for (std::size_t x = 0; x < size; ++x) {
          const double py = static_cast<double>(y) + 0.5, px = static_cast<double>(x) + 0.5;
          bool inside = true;
          for (std::size_t v = 0; v < poly.size() && inside; ++v) {
            const auto [ay, ax] = poly[v];
            const auto [by, bx] = poly[(v + 1) % poly.size()];
            // Counter-clockwise in (x, y) means a nonnegative cross product inside.
            inside = (bx - ax) * (py - ay) - (by - ay) * (px - ax) >= 0.0;
          }
          if (inside) labels[y * size + x] = static_cast<int>(cls);
        }
      }
    }
    Tensor img = random_palette_image(rng, labels, size, channels, palette, noise);
    out.push_back({std::move(img), std::move(labels)});
  }
  return out;
}

LossResult cross_entropy(const Tensor& scores, const std::vector<int>& labels, Tensor* grad_scores) {
  expect_rank(scores, 3, "cross_entropy scores");
  const std::size_t k = scores.dim(0), hw = scores.dim(1) * scores.dim(2);
  if (labels.size() != hw) throw ShapeError("cross_entropy: label count differs from pixel count");
  if (grad_scores) *grad_scores = Tensor::zeros_like(scores);
  LossResult r;
  std::vector<double> z(k);
  std::size_t correct = 0;
  for (std::size_t p = 0; p < hw; ++p) {
    const int label = labels[p];
    if (label < 0 || static_cast<std::size_t>(label) >= k) {
      throw std::invalid_argument("cross_entropy: label " + std::to_string(label) + " out of range");
    }
    for (std::size_t c = 0; c < k; ++c) z[c] = scores[c * hw + p];
    const auto w = softmax(z);
    r.loss -= std::log(w[static_cast<std::size_t>(label)]);
    const auto best = static_cast<std::size_t>(std::max_element(z.begin(), z.end()) - z.begin());
    if (best == static_cast<std::size_t>(label)) ++correct;
    if (grad_scores) {
      for (std::size_t c = 0; c < k; ++c) {
        (*grad_scores)[c * hw + p] = (w[c] - (c == static_cast<std::size_t>(label) ? 1.0 : 0.0)) / double(hw);
      }
    }
  }
  r.loss /= static_cast<double>(hw);
  r.accuracy = static_cast<double>(correct) / static_cast<double>(hw);
  return r;
}

LossResult toy_loss(const ToyModel& model, const std::vector<Sample>& batch, ToyModel* grads) {
  if (batch.empty()) throw std::invalid_argument("toy_loss: empty batch");
  if (grads) *grads = zeros_like_params(model);
  const double scale = 1.0 / static_cast<double>(batch.size());
  LossResult total;
  for (const auto& sample : batch) {
    ToyContext ctx;
    Tensor scores = toy_forward(model, sample.image, grads ? &ctx : nullptr);
    Tensor g_scores;
    const LossResult r = cross_entropy(scores, sample.labels, grads ? &g_scores : nullptr);
    total.loss += r.loss * scale;
    total.accuracy += r.accuracy * scale;
    if (grads) {
      g_scores *= scale;
      ToyModel g = toy_backward(g_scores, ctx, model);
      add_into(param_list(*grads), param_list(g));
    }
  }
  return total;
}

TrainingDiverged::TrainingDiverged(std::size_t step, double loss)
    : std::runtime_error("training diverged at step " + std::to_string(step) + " (loss " + format_real(loss) + ")"),
      step_(step) {}

TrainState train_toy(ToyModel model, const std::vector<Sample>& data, const TrainConfig& cfg, std::uint64_t seed) {
  TrainState st;
  st.velocity = zeros_like_params(model);
  st.params = std::move(model);
  st.seed = seed;
  const ParamList w = param_list(st.params), v = param_list(st.velocity);
  ToyModel grads;
  for (st.step = 0; st.step < cfg.steps; ++st.step) {
    const LossResult r = toy_loss(st.params, data, &grads);
    if (!std::isfinite(r.loss)) throw TrainingDiverged(st.step, r.loss);
    st.curve.push_back({st.step, r.loss, r.accuracy});
    st.lr = cfg.lr * std::pow(1.0 - static_cast<double>(st.step) / static_cast<double>(cfg.steps), cfg.power);
    const ParamList g = param_list(grads);
    for (std::size_t i = 0; i < w.size(); ++i) {
      auto wd = w[i].tensor->data();
      auto vd = v[i].tensor->data();
      auto gd = g[i].tensor->data();
      for (std::size_t e = 0; e < wd.size(); ++e) {
        vd[e] = cfg.momentum * vd[e] + gd[e] + cfg.weight_decay * wd[e];
        wd[e] -= st.lr * vd[e];
      }
    }
  }
  const LossResult final_eval = toy_loss(st.params, data, nullptr);
  if (!std::isfinite(final_eval.loss)) throw TrainingDiverged(st.step, final_eval.loss);
  st.curve.push_back({st.step, final_eval.loss, final_eval.accuracy});
  return st;
}

std::string curve_to_csv(const std::vector<StepRecord>& curve) {
  std::ostringstream os;
  os << "step,loss,accuracy\n";
  for (const auto& r : curve) os << r.step << ',' << format_real(r.loss) << ',' << format_real(r.accuracy) << '\n';
  return os.str();
}

}  // namespace ddsm
