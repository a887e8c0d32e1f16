#pragma once

#include <string>
#include <vector>

#include "ddsm/nn.hpp"
#include "ddsm/sampler.hpp"
#include "ddsm/tensor.hpp"

namespace ddsm {

struct NamedTensor {
  std::string name;
  Tensor* tensor;
};

using ParamList = std::vector<NamedTensor>;

// Each parameter struct lists its tensors under a dotted prefix. The order is
// fixed, so a gradient struct of the same type lists matching entries at
// matching indices.
void list_params(LinearMap& p, const std::string& prefix, ParamList& out);
void list_params(Conv3x3& p, const std::string& prefix, ParamList& out);
void list_params(SamplerParams& p, const std::string& prefix, ParamList& out);

template <class P>
ParamList param_list(P& params, const std::string& prefix = "") {
  ParamList out;
  list_params(params, prefix, out);
  return out;
}

// Copy of `params` with every listed tensor zeroed; the gradient accumulator.
template <class P>
P zeros_like_params(const P& params) {
  P copy = params;
  for (auto& nt : param_list(copy)) nt.tensor->fill(0.0);
  return copy;
}

std::size_t parameter_count(const ParamList& list);

inline std::string join_name(const std::string& prefix, const char* leaf) {
  return prefix.empty() ? std::string(leaf) : prefix + "." + leaf;
}

}  // namespace ddsm
