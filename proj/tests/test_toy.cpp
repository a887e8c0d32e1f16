#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include "ddsm/commands.hpp"
#include "ddsm/io.hpp"
#include "ddsm/toy.hpp"
#include "support.hpp"

using namespace ddsm;
using ddsm::test::random_tensor;

namespace {

const std::filesystem::path kGolden = DDSM_GOLDEN_DIR;

// Set DDSM_UPDATE_GOLDEN=1 to rewrite the golden files instead of comparing.
bool update_golden() {
  const char* v = std::getenv("DDSM_UPDATE_GOLDEN");
  return v && std::string(v) == "1";
}

ToyConfig config(const std::string& preset, Architecture arch) {
  ToyConfig c = toy_preset(preset);
  c.arch = arch;
  return c;
}

std::string read_file(const std::filesystem::path& p) {
  std::ifstream is(p);
  REQUIRE_MESSAGE(is.good(), "missing golden file " << p.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

std::vector<StepRecord> parse_curve(const std::string& csv) {
  std::vector<StepRecord> out;
  std::istringstream is(csv);
  std::string line;
  std::getline(is, line);
  while (std::getline(is, line)) {
    StepRecord r;
    char c1, c2;
    std::istringstream ls(line);
    ls >> r.step >> c1 >> r.loss >> c2 >> r.accuracy;
    out.push_back(r);
  }
  return out;
}

void randomize_predictors(ToyModel& m, Rng& rng) {
  for (auto& j : m.junctions) {
    if (j.kind != Fusion::Ddsm) continue;
    ddsm::test::randomize(param_list(j.ddsm.spatial.sampler), rng, 0.05);
    ddsm::test::randomize(param_list(j.ddsm.channel.sampler), rng, 0.05);
  }
}

}  // namespace

TEST_CASE("presets") {
  const ToyConfig best = toy_preset("best");
  CHECK(best.k == 5);
  CHECK(best.k_c == 3);
  CHECK(best.junctions == std::array<Fusion, 3>{Fusion::Ddsm, Fusion::Ddsm, Fusion::Ddsm});
  const ToyConfig abl = toy_preset("ablation");
  CHECK(abl.k == 3);
  CHECK(abl.k_c == 3);
  CHECK(abl.junctions == std::array<Fusion, 3>{Fusion::BilinearAdd, Fusion::Ddsm, Fusion::Ddsm});
  CHECK(toy_preset("baseline").junctions[1] == Fusion::BilinearAdd);
  CHECK_THROWS(toy_preset("large"));
  Rng rng(1);
  CHECK_THROWS(init_toy_model(rng, best, 24));
}

TEST_CASE("stage extents halve and scores come back at input resolution") {
  Rng rng(2);
  for (Architecture arch : {Architecture::Pyramid, Architecture::Aspp}) {
    const ToyModel m = init_toy_model(rng, config("best", arch), 32);
    ToyContext ctx;
    const Tensor s = toy_forward(m, random_tensor(rng, {3, 32, 32}), &ctx);
    CHECK(s.shape() == Shape{4, 32, 32});
    for (std::size_t i = 0; i < 4; ++i) CHECK(ctx.stages[i].activation.dim(1) == (32u >> i));
    CHECK_THROWS(toy_forward(m, random_tensor(rng, {3, 16, 16})));
  }
}

TEST_CASE("constant input gives constant scores") {
  Rng rng(3);
  const Tensor img({3, 32, 32}, 0.4);
  auto spread = [](const Tensor& s) {
    double worst = 0.0;
    const std::size_t plane = s.dim(1) * s.dim(2);
    for (std::size_t c = 0; c < s.dim(0); ++c)
      for (std::size_t i = 0; i < plane; ++i) worst = std::max(worst, std::abs(s[c * plane + i] - s[c * plane]));
    return worst;
  };
  SUBCASE("bilinear-add baseline") {
    for (Architecture arch : {Architecture::Pyramid, Architecture::Aspp}) {
      ToyConfig c = config("baseline", arch);
      c.classes = 3;
      CHECK(spread(toy_forward(init_toy_model(rng, c, 32), img)) < 1e-12);
    }
  }
  SUBCASE("DDSM with position-free embeddings and single-sample footprints") {
    // Per-position embeddings and zero padding at the border are the only
    // position-dependent parts of a junction.
    for (Architecture arch : {Architecture::Pyramid, Architecture::Aspp}) {
      ToyConfig c = config("best", arch);
      c.k = c.k_c = 1;
      ToyModel m = init_toy_model(rng, c, 32);
      for (auto& j : m.junctions) {
        j.ddsm.spatial.e_pl.fill(0.1);
        j.ddsm.spatial.e_ph.fill(-0.2);
      }
      CHECK(spread(toy_forward(m, img)) < 1e-12);
    }
  }
}

TEST_CASE("gated-off ASPP junction ignores the context head") {
  Rng rng(4);
  ToyModel m = init_toy_model(rng, config("best", Architecture::Aspp), 32);
  for (auto& j : m.junctions) {
    j.ddsm.spatial.sampler.modulation.bias.fill(-1000.0);
    j.ddsm.channel.sampler.modulation.bias.fill(-1000.0);
  }
  const Tensor img = random_tensor(rng, {3, 32, 32});
  const Tensor a = toy_forward(m, img);
  for (auto& c : m.context) c.weight = random_tensor(rng, c.weight.shape());
  CHECK(toy_forward(m, img) == a);
}

TEST_CASE("scores match the reference recomputation and the golden tensors") {
  for (auto [arch, name] : {std::pair{Architecture::Pyramid, "pyramid"}, {Architecture::Aspp, "aspp"}}) {
    Rng rng(11);
    ToyModel m = init_toy_model(rng, config("best", arch), 32);
    randomize_predictors(m, rng);
    const Tensor img = random_tensor(rng, {3, 32, 32});
    const Tensor ref = oracle::toy_forward(m, img);
    const Tensor got = toy_forward(m, img);
    INFO(name);
    CHECK(max_abs_diff(got, ref) < 1e-10);
    const auto path = kGolden / (std::string(name) + "_scores.txt");
    if (update_golden()) save_tensor(path, ref);
    CHECK(max_abs_diff(got, load_tensor(path)) < 1e-10);
  }
}

TEST_CASE("cross entropy") {
  const Tensor s({2, 1, 2}, std::vector<double>{0.0, 2.0, 0.0, -1.0});
  Tensor g;
  const LossResult r = cross_entropy(s, {1, 0}, &g);
  const double l0 = std::log(2.0);
  const double l1 = std::log(1.0 + std::exp(-3.0));
  CHECK(std::abs(r.loss - (l0 + l1) / 2.0) < 1e-15);
  CHECK(r.accuracy == 0.5);  // pixel 0 is a tie resolved to class 0
  const Tensor u({2, 1, 2}, 1.0);
  auto f = [](const Tensor& t) { return cross_entropy(t, {1, 0}).loss; };
  CHECK(oracle::check_gradient("ce", g, f, s, 1e-6).max_rel_err <= 1e-6);
  CHECK_THROWS(cross_entropy(s, {1}));
  CHECK_THROWS(cross_entropy(s, {1, 2}));
}

TEST_CASE("total loss gradient passes finite differences at initialization") {
  Rng rng(5);
  for (const char* preset : {"best", "baseline"}) {
    ToyModel m = init_toy_model(rng, config(preset, Architecture::Pyramid), 16);
    randomize_predictors(m, rng);
    const auto data = make_polygon_dataset(rng, 1, 16, 4);
    ToyModel grads;
    toy_loss(m, data, &grads);
    const ParamList gl = param_list(grads);
    for (const auto& nt : gl) {
      INFO(preset, " ", nt.name);
      CHECK(max_abs(*nt.tensor) > 0.0);
      for (double v : nt.tensor->data()) CHECK(std::isfinite(v));
    }
    // Deep encoder gradients sit near 1e-8, below what a double-precision
    // central difference of an O(1) loss resolves in relative terms, so the
    // bound adds the rounding floor eps * |loss| / h with a safety factor.
    const double h = oracle::kDefaultStep;
    const double base = toy_loss(m, data).loss;
    const double floor = 8.0 * std::numeric_limits<double>::epsilon() * std::abs(base) / h;
    const ParamList pl = param_list(m);
    for (std::size_t gi = 0; gi < pl.size(); ++gi) {
      Tensor& w = *pl[gi].tensor;
      for (int n = 0; n < 12; ++n) {
        const std::size_t i = rng.below(w.size());
        const double keep = w[i];
        w[i] = keep + h;
        const double up = toy_loss(m, data).loss;
        w[i] = keep - h;
        const double down = toy_loss(m, data).loss;
        w[i] = keep;
        const double numeric = (up - down) / (2.0 * h), analytic = (*gl[gi].tensor)[i];
        INFO(preset, " ", pl[gi].name, "[", i, "] analytic ", analytic, " numeric ", numeric);
        CHECK(std::abs(analytic - numeric) <= 1e-6 * std::max(std::abs(analytic), std::abs(numeric)) + floor);
      }
    }
  }
}

TEST_CASE("polygon dataset") {
  Rng a(6), b(6);
  const auto d1 = make_polygon_dataset(a, 2, 32, 4);
  const auto d2 = make_polygon_dataset(b, 2, 32, 4);
  REQUIRE(d1.size() == 2);
  CHECK(d1[0].image == d2[0].image);
  CHECK(d1[1].labels == d2[1].labels);
  CHECK(d1[0].image.shape() == Shape{3, 32, 32});
  std::set<int> seen(d1[0].labels.begin(), d1[0].labels.end());
  CHECK(seen.count(0) == 1);
  CHECK(seen.size() >= 2);
  for (int l : d1[0].labels) CHECK((l >= 0 && l < 4));
}

TEST_CASE("training") {
  Rng rng(7);
  const auto data = make_polygon_dataset(rng, 1, 16, 4);
  const ToyModel m = init_toy_model(rng, toy_preset("best"), 16);

  SUBCASE("zero learning rate keeps the loss constant") {
    TrainConfig tc;
    tc.lr = 0.0;
    tc.steps = 5;
    const TrainState st = train_toy(m, data, tc, 7);
    REQUIRE(st.curve.size() == 6);
    for (const auto& r : st.curve) CHECK(r.loss == st.curve[0].loss);
  }
  SUBCASE("equal seeds give bitwise-equal parameters") {
    TrainConfig tc;
    tc.steps = 4;
    TrainState a = train_toy(m, data, tc, 7);
    TrainState b = train_toy(m, data, tc, 7);
    const ParamList pa = param_list(a.params), pb = param_list(b.params);
    for (std::size_t i = 0; i < pa.size(); ++i) CHECK(*pa[i].tensor == *pb[i].tensor);
    CHECK(curve_to_csv(a.curve) == curve_to_csv(b.curve));
  }
  SUBCASE("divergence reports the step") {
    TrainConfig tc;
    tc.lr = 1e12;
    tc.steps = 50;
    try {
      train_toy(m, data, tc, 7);
      FAIL("expected divergence");
    } catch (const TrainingDiverged& e) {
      CHECK(e.step() > 0);
      CHECK(e.step() <= 50);
    }
  }
}

TEST_CASE("default training run matches the committed curve") {
  const RunConfig cfg;
  ToySetup setup = toy_setup(cfg);
  const TrainState st = train_toy(setup.model, setup.data, train_config(cfg), cfg.seed);
  const auto path = kGolden / "train_loss.csv";
  if (update_golden()) {
    std::ofstream(path) << curve_to_csv(st.curve);
  }
  const auto golden = parse_curve(read_file(path));
  REQUIRE(golden.size() == st.curve.size());
  double worst = 0.0;
  for (std::size_t i = 0; i < golden.size(); ++i) {
    CHECK(golden[i].step == st.curve[i].step);
    worst = std::max({worst, std::abs(golden[i].loss - st.curve[i].loss),
                      std::abs(golden[i].accuracy - st.curve[i].accuracy)});
  }
  CHECK(worst <= 1e-9);

  std::size_t decreasing = 0;
  for (std::size_t i = 1; i < st.curve.size(); ++i) decreasing += st.curve[i].loss < st.curve[i - 1].loss;
  CHECK(static_cast<double>(decreasing) >= 0.9 * static_cast<double>(st.curve.size() - 1));
  CHECK(st.curve.back().loss < 0.1 * st.curve.front().loss);
}
