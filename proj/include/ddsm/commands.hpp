#pragma once

#include <cstdint>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

#include "ddsm/oracle.hpp"
#include "ddsm/toy.hpp"

namespace ddsm {

// Flat run configuration; every key is also a --key command-line option and
// a `key = value` line in a --config file.
struct RunConfig {
  std::uint64_t seed = 7;
  std::string out = "ddsm_out";
  std::string fault = "none";  // negative controls: a gradient group name, or "kernel"

  // Block sizes (gradcheck, equiv, cost).
  std::size_t c_l = 8, c_h = 8;  // input channels; the block reduces them to reduced_width(c_l, c_h)
  std::size_t c_r = 2;           // width of the stand-alone sampler and spatial-branch checks
  std::size_t h = 5, w = 5;      // x_l extent
  std::size_t h2 = 3, w2 = 3;    // x_h extent
  std::size_t k = 3, k_c = 3;
  std::size_t a = 2, d = 2;
  std::size_t trials = 100;
  double fd_step = oracle::kDefaultStep;  // central-difference step

  // Toy training (train, dump). The preset fixes k, k_c and the junction kinds.
  std::string preset = "best";
  std::string arch = "pyramid";
  std::size_t image = 32;
  std::size_t classes = 4;
  std::size_t samples = 1;
  double noise = 0.1;
  double lr = 0.01;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  std::size_t steps = 500;

  // dump
  std::string checkpoint;  // empty: freshly initialized parameters
  std::string input;       // tensor file; empty: the first synthetic sample
  long qy = -1, qx = -1;   // query pixel on x_l of the last junction; -1: centre
  std::size_t scale = 8;   // overlay magnification

  // fscore
  std::string pred, gt;
  std::string thresholds = "3,5,9,12";
};

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline constexpr double kGradTolerance = 1e-6;
inline constexpr double kEquivTolerance = 1e-10;

// Finite-difference checks of the sampler, both branches and the full block
// at the configured sizes.
oracle::GradCheckReport gradcheck_suite(const RunConfig& cfg);

struct EquivEntry {
  std::string name;
  double max_abs_err = 0.0;
  double tolerance = 0.0;
  bool passed = false;
};

struct EquivReport {
  std::vector<EquivEntry> entries;
  bool passed() const;
  // check,max_abs_err,tolerance,pass
  std::string to_csv() const;
};

// Dense-attention equivalence, enumeration equivalence over `trials` random
// configurations, block-vs-reference equality and cost-counter equality.
EquivReport equiv_suite(const RunConfig& cfg);

ToyConfig toy_config(const RunConfig& cfg);
TrainConfig train_config(const RunConfig& cfg);

// Synthetic data and model exactly as `train` builds them.
struct ToySetup {
  std::vector<Sample> data;
  ToyModel model;
};
ToySetup toy_setup(const RunConfig& cfg);

struct Marker {
  std::size_t n = 0;
  long grid_dy = 0, grid_dx = 0;
  double offset_y = 0.0, offset_x = 0.0;
  double y = 0.0, x = 0.0;  // p + p_n + offset_n(p)
  double modulation = 0.0;
};

// Sample positions of query pixel (qy, qx) read from an offset field.
std::vector<Marker> sample_markers(const Tensor& offsets, const Tensor& modulations, const GridSpec& grid,
                                   std::size_t qy, std::size_t qx);

// Each command returns its exit status: 0 pass, 1 check failure.
int cmd_gradcheck(const RunConfig& cfg, std::ostream& out);
int cmd_equiv(const RunConfig& cfg, std::ostream& out);
int cmd_train(const RunConfig& cfg, std::ostream& out);
int cmd_dump(const RunConfig& cfg, std::ostream& out);
int cmd_cost(const RunConfig& cfg, std::ostream& out);
int cmd_fscore(const RunConfig& cfg, std::ostream& out);

// Full command line (args[0] is the program name). Usage or configuration
// errors return 2.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace ddsm
