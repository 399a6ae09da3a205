#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "dynapyr/autodiff.hpp"

namespace dynapyr {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t probes = 0;
};

inline constexpr double kGradCheckFloor = 1e-8;

inline double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), kGradCheckFloor});
  return std::abs(analytic - numeric) / denom;
}

/// Central-difference check of a scalar function of one tensor. Checks every
/// coordinate unless `coords` names a subset.
inline GradCheckResult grad_check(const std::function<Var(const Var&)>& f, const Tensor& point, double eps = 1e-5,
                                  std::span<const std::size_t> coords = {}) {
  Var x = parameter(point);
  backward(f(x));
  const Tensor analytic = x.grad();

  std::vector<std::size_t> all;
  if (coords.empty()) {
    all.resize(point.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    coords = all;
  }

  GradCheckResult r;
  for (std::size_t i : coords) {
    Tensor plus = point, minus = point;
    plus[i] += eps;
    minus[i] -= eps;
    const double numeric = (f(constant(plus)).item() - f(constant(minus)).item()) / (2.0 * eps);
    const double err = relative_error(analytic[i], numeric);
    if (err >= r.max_rel_error) r = {err, i, analytic[i], numeric, r.probes};
    ++r.probes;
  }
  return r;
}

/// One probed coordinate of a parameter set.
struct ParamCoord {
  std::size_t param;
  std::size_t index;
};

/// Same check for a loss over several parameter tensors. `loss` must rebuild
/// the graph from the parameters' current values on every call.
inline GradCheckResult grad_check_params(const std::function<Var()>& loss, std::span<Var> params,
                                         std::span<const ParamCoord> coords, double eps = 1e-5) {
  for (auto& p : params) p.zero_grad();
  backward(loss());
  std::vector<Tensor> analytic;
  analytic.reserve(params.size());
  for (auto& p : params) analytic.push_back(p.grad());

  GradCheckResult r;
  for (std::size_t k = 0; k < coords.size(); ++k) {
    const auto [pi, i] = coords[k];
    double& slot = params[pi].mutable_value()[i];
    const double saved = slot;
    slot = saved + eps;
    const double up = loss().item();
    slot = saved - eps;
    const double down = loss().item();
    slot = saved;
    const double numeric = (up - down) / (2.0 * eps);
    const double err = relative_error(analytic[pi][i], numeric);
    if (err >= r.max_rel_error) r = {err, k, analytic[pi][i], numeric, r.probes};
    ++r.probes;
  }
  for (auto& p : params) p.zero_grad();
  return r;
}

}  // namespace dynapyr
