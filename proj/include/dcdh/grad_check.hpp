#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstddef>

#include "dcdh/error.hpp"
#include "dcdh/mlp.hpp"

namespace dcdh {

/// Anything with a flat, mutable parameter view.
template <typename P>
concept FlatParams = requires(P p, const P cp, std::size_t i) {
  { cp.param_count() } -> std::convertible_to<std::size_t>;
  { p.param(i) } -> std::same_as<double&>;
  { cp.param(i) } -> std::convertible_to<double>;
};

/// Adapts an Eigen matrix to the flat parameter view.
struct MatrixParams {
  Matrix m;
  std::size_t param_count() const { return static_cast<std::size_t>(m.size()); }
  double& param(std::size_t i) { return m.data()[i]; }
  double param(std::size_t i) const { return m.data()[i]; }
};

/// Max over parameters of |analytic - central difference| / max(1, |central difference|).
///
/// `f` maps a parameter value to a scalar; `analytic` holds the gradient
/// claimed for `params`. Throws NumericalError when f is non-finite.
template <FlatParams P, typename F>
double grad_check(F&& f, P params, const P& analytic, double eps = 1e-5) {
  detail::require(eps > 0.0, "grad_check: eps must be positive");
  detail::require(params.param_count() == analytic.param_count(),
                  "grad_check: analytic gradient has the wrong size");
  double worst = 0.0;
  for (std::size_t i = 0; i < params.param_count(); ++i) {
    const double saved = params.param(i);
    params.param(i) = saved + eps;
    const double plus = f(static_cast<const P&>(params));
    params.param(i) = saved - eps;
    const double minus = f(static_cast<const P&>(params));
    params.param(i) = saved;
    if (!std::isfinite(plus) || !std::isfinite(minus)) {
      throw NumericalError("grad_check: objective is non-finite");
    }
    const double numeric = (plus - minus) / (2.0 * eps);
    const double a = analytic.param(i);
    worst = std::max(worst, std::abs(a - numeric) / std::max(1.0, std::abs(numeric)));
  }
  return worst;
}

}  // namespace dcdh
