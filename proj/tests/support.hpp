#pragma once

#include <cmath>
#include <functional>
#include <string>

#include "ddsm/oracle.hpp"
#include "ddsm/params.hpp"
#include "ddsm/rng.hpp"
#include "ddsm/tensor.hpp"

namespace ddsm::test {

inline Tensor random_tensor(Rng& rng, Shape shape, double scale = 1.0) {
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = scale * rng.normal();
  return t;
}

inline void randomize(const ParamList& list, Rng& rng, double bound) {
  for (const auto& nt : list)
    for (auto& v : nt.tensor->data()) v = rng.uniform(-bound, bound);
}

// Sum of u * out, the scalar probe used for adjoint checks.
inline double probe(const Tensor& u, const Tensor& out) {
  long double s = 0.0L;
  for (std::size_t i = 0; i < u.size(); ++i) s += static_cast<long double>(u[i]) * out[i];
  return static_cast<double>(s);
}

// Finite-difference check of an input gradient; returns the worst relative error.
inline double input_grad_error(const Tensor& analytic, const std::function<Tensor(const Tensor&)>& forward,
                               const Tensor& u, const Tensor& x) {
  const Tensor base = forward(x);
  auto f = [&](const Tensor& xi) { return probe(u, forward(xi) - base); };
  return oracle::check_gradient("input", analytic, f, x, 1e-6).max_rel_err;
}

// Finite-difference check of every listed parameter group against `grads`;
// `forward` re-evaluates the model with the perturbed parameters.
inline oracle::GradCheckReport param_grad_report(const ParamList& params, const ParamList& grads,
                                                 const std::function<Tensor()>& forward, const Tensor& u,
                                                 Rng& rng) {
  const Tensor base = forward();
  return oracle::check_param_gradients(params, grads, [&] { return probe(u, forward() - base); }, 1e-6, 512, rng);
}

// True when no sample coordinate sits within `margin` of an integer, where
// bilinear interpolation is not differentiable.
inline bool off_lattice(const Tensor& offsets, double margin = 1e-3) {
  for (double v : offsets.data())
    if (std::abs(v - std::round(v)) < margin) return false;
  return true;
}

}  // namespace ddsm::test
