#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "ddsm/block.hpp"
#include "ddsm/nn.hpp"
#include "ddsm/params.hpp"
#include "ddsm/rng.hpp"
#include "ddsm/tensor.hpp"

namespace ddsm {

enum class Architecture { Pyramid, Aspp };
enum class Fusion { Ddsm, BilinearAdd };

struct ToyConfig {
  Architecture arch = Architecture::Pyramid;
  std::size_t in_channels = 3;
  std::size_t classes = 4;
  std::array<std::size_t, 4> widths{16, 32, 64, 64};  // x_2 .. x_5
  std::size_t k = 5;    // spatial grid, N = k^2
  std::size_t k_c = 3;  // channel grid, N_c = k_c^2
  std::size_t a = 16;
  std::size_t d = 16;
  // Fusion at the junctions producing x~_4, x~_3, x~_2 (ASPP uses only the last).
  std::array<Fusion, 3> junctions{Fusion::Ddsm, Fusion::Ddsm, Fusion::Ddsm};
};

// "best": three DDSMs, N = 25, N_c = 9. "ablation": DDSMs forming x~_3 and
// x~_2 only, N = N_c = 9. "baseline": bilinear-add fusion everywhere.
ToyConfig toy_preset(const std::string& name);

// x~_{s-1} = reduce_l(x_{s-1}) + resize(reduce_h(x~_s)).
struct AddFusion {
  LinearMap reduce_l, reduce_h;
};

struct Junction {
  Fusion kind = Fusion::Ddsm;
  DdsmParams ddsm;
  AddFusion add;
};

struct ToyModel {
  ToyConfig config;
  std::size_t image_size = 32;
  std::vector<Conv3x3> encoder;  // 4 stages
  std::vector<Conv3x3> context;  // ASPP stand-in: dilations 1 and 2
  std::vector<Junction> junctions;
  LinearMap head;
};

// Square images only; the side must be divisible by 16 (four 2x downsamples).
ToyModel init_toy_model(Rng& rng, const ToyConfig& cfg, std::size_t image_size);
void list_params(Junction& j, const std::string& prefix, ParamList& out);
void list_params(ToyModel& m, const std::string& prefix, ParamList& out);

struct StageContext {
  Tensor input, pre_activation, activation;
};

struct JunctionContext {
  Tensor low, high;
  DdsmContext ddsm;
  Tensor high_reduced;  // bilinear-add path
};

struct ToyContext {
  std::vector<StageContext> stages;   // 4 encoder stages
  std::vector<StageContext> context;  // ASPP stand-in convs
  std::vector<JunctionContext> junctions;
  Tensor head_input;
  Tensor logits_low;  // head output before the final resize
  bool valid = false;
};

// Class scores (classes, S, S) at input resolution for a (in_channels, S, S)
// image.
Tensor toy_forward(const ToyModel& model, const Tensor& image, ToyContext* ctx = nullptr);
ToyModel toy_backward(const Tensor& grad_scores, const ToyContext& ctx, const ToyModel& model);

struct Sample {
  Tensor image;             // (in_channels, S, S)
  std::vector<int> labels;  // S*S, row-major
};

// Random convex polygons painted over a class-0 background; one polygon per
// foreground class. Pixel colours are a per-class palette plus Gaussian noise.
std::vector<Sample> make_polygon_dataset(Rng& rng, std::size_t count, std::size_t size, std::size_t classes,
                                         std::size_t channels = 3, double noise = 0.1);

struct LossResult {
  double loss = 0.0;      // mean per-pixel cross-entropy
  double accuracy = 0.0;  // fraction of pixels whose argmax matches
};

LossResult cross_entropy(const Tensor& scores, const std::vector<int>& labels, Tensor* grad_scores = nullptr);

// Loss/accuracy averaged over `batch`. When given, *grads is overwritten with
// the gradient of the mean loss.
LossResult toy_loss(const ToyModel& model, const std::vector<Sample>& batch, ToyModel* grads = nullptr);

struct TrainConfig {
  double lr = 0.01;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  double power = 0.9;  // lr_t = lr * (1 - t/steps)^power
  std::size_t steps = 500;
};

struct StepRecord {
  std::size_t step = 0;
  double loss = 0.0;
  double accuracy = 0.0;
};

struct TrainState {
  ToyModel params;
  ToyModel velocity;
  std::size_t step = 0;
  double lr = 0.0;  // learning rate of the most recent update
  std::uint64_t seed = 0;
  std::vector<StepRecord> curve;
};

class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(std::size_t step, double loss);
  std::size_t step() const { return step_; }

 private:
  std::size_t step_;
};

// Full-batch SGD with momentum and weight decay (v = mu v + g + wd w;
// w -= lr_t v). Records the loss before each update plus one final
// evaluation row at step == steps.
TrainState train_toy(ToyModel model, const std::vector<Sample>& data, const TrainConfig& cfg, std::uint64_t seed);

// step,loss,accuracy
std::string curve_to_csv(const std::vector<StepRecord>& curve);

}  // namespace ddsm
