#include "ddsm/cost.hpp"

#include <numeric>
#include <sstream>

namespace ddsm {
namespace {

CostRecord linear(const std::string& name, std::uint64_t in, std::uint64_t out, std::uint64_t positions) {
  return {name, in * out + out, in * out * positions};
}

void add_reducers(const CostConfig& c, std::vector<CostRecord>& r) {
  r.push_back(linear("reduce_l", c.low_channels, c.width, c.height * c.cols));
  r.push_back(linear("reduce_h", c.high_channels, c.width, c.high_height * c.high_cols));
}

void add_projections(const CostConfig& c, std::vector<CostRecord>& r) {
  const std::uint64_t hw = c.height * c.cols, cr = c.width;
  r.push_back({"spatial.upsample_high", 0, 4 * cr * hw});
  r.push_back({"spatial.embeddings", 2 * cr * hw, 0});
  r.push_back(linear("spatial.W_theta", cr, cr, hw));
  r.push_back(linear("spatial.W_phi", 2 * cr, cr, hw));
  r.push_back(linear("spatial.W_g", cr, cr, hw));
}

void add_spatial_core(const CostConfig& c, std::vector<CostRecord>& r) {
  const std::uint64_t hw = c.height * c.cols, cr = c.width, n = c.samples;
  add_projections(c, r);
  r.push_back(linear("spatial.predictors", 2 * cr, 3 * n, hw));
  r.push_back({"spatial.sample_key", 0, 4 * cr * n * hw});
  r.push_back({"spatial.sample_value", 0, 4 * cr * n * hw});
  r.push_back({"spatial.affinity", 0, 2 * cr * n * hw});
}

void add_channel_core(const CostConfig& c, std::vector<CostRecord>& r) {
  const std::uint64_t ch = c.width, a2 = c.a * c.a, d2 = c.d * c.d, n = c.channel_samples;
  r.push_back({"channel.pool", 0, 0});
  r.push_back({"channel.downsample_high", 0, 4 * ch * d2});
  r.push_back(linear("channel.W_alpha", ch, ch, a2));
  r.push_back(linear("channel.W_beta", 2 * ch, ch, a2));
  r.push_back(linear("channel.W_gamma", ch, ch, d2));
  r.push_back(linear("channel.predictors", a2, 3 * n, ch));
  r.push_back({"channel.sample_key", 0, 4 * a2 * n * ch});
  r.push_back({"channel.sample_value", 0, 4 * d2 * n * ch});
  r.push_back({"channel.affinity", 0, (a2 + d2) * n * ch});
  r.push_back({"channel.upsample_out", 0, 4 * ch * c.height * c.cols});
}

}  // namespace

std::uint64_t CostReport::total_params() const {
  std::uint64_t s = 0;
  for (const auto& r : records) s += r.params;
  return s;
}

std::uint64_t CostReport::total_macs() const {
  std::uint64_t s = 0;
  for (const auto& r : records) s += r.macs;
  return s;
}

std::uint64_t CostReport::macs_of(const std::string& name) const {
  for (const auto& r : records)
    if (r.name == name) return r.macs;
  return 0;
}

std::string CostReport::to_csv(bool header) const {
  std::ostringstream os;
  if (header) os << "model,sub_block,params,macs,flops\n";
  for (const auto& r : records) {
    os << model << ',' << r.name << ',' << r.params << ',' << r.macs << ',' << 2 * r.macs << '\n';
  }
  os << model << ",total," << total_params() << ',' << total_macs() << ',' << 2 * total_macs() << '\n';
  return os.str();
}

CostReport count_spatial_branch(const CostConfig& cfg) {
  CostReport rep{"spatial", cfg, {}};
  add_reducers(cfg, rep.records);
  add_spatial_core(cfg, rep.records);
  return rep;
}

CostReport count_channel_branch(const CostConfig& cfg) {
  CostReport rep{"channel", cfg, {}};
  add_channel_core(cfg, rep.records);
  return rep;
}

CostReport count_ddsm(const CostConfig& cfg) {
  CostReport rep{"ddsm", cfg, {}};
  add_reducers(cfg, rep.records);
  add_spatial_core(cfg, rep.records);
  add_channel_core(cfg, rep.records);
  return rep;
}

CostReport count_dense_nonlocal(const CostConfig& cfg) {
  CostReport rep{"dense_nonlocal", cfg, {}};
  add_reducers(cfg, rep.records);
  add_projections(cfg, rep.records);
  const std::uint64_t hw = cfg.height * cfg.cols;
  rep.records.push_back({"dense.affinity", 0, 2 * cfg.width * hw * hw});
  return rep;
}

Ratio affinity_ratio(const CostConfig& cfg) {
  const std::uint64_t num = cfg.samples, den = cfg.height * cfg.cols;
  const std::uint64_t g = std::gcd(num, den);
  return g == 0 ? Ratio{0, 1} : Ratio{num / g, den / g};
}

}  // namespace ddsm
