#include "ddsm/params.hpp"

namespace ddsm {

void list_params(LinearMap& p, const std::string& prefix, ParamList& out) {
  out.push_back({join_name(prefix, "weight"), &p.weight});
  out.push_back({join_name(prefix, "bias"), &p.bias});
}

void list_params(Conv3x3& p, const std::string& prefix, ParamList& out) {
  out.push_back({join_name(prefix, "weight"), &p.weight});
  out.push_back({join_name(prefix, "bias"), &p.bias});
}

void list_params(SamplerParams& p, const std::string& prefix, ParamList& out) {
  list_params(p.offset, join_name(prefix, "offset"), out);
  list_params(p.modulation, join_name(prefix, "modulation"), out);
}

std::size_t parameter_count(const ParamList& list) {
  std::size_t n = 0;
  for (const auto& nt : list) n += nt.tensor->size();
  return n;
}

}  // namespace ddsm
