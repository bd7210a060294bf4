#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "tabgen/adam.hpp"
#include "tabgen/autograd.hpp"
#include "tabgen/rng.hpp"

namespace tabgen::testutil {

#ifdef TABGEN_REAL64
inline constexpr double kGradStep = 1e-5;
inline constexpr double kGradTol = 1e-4;
#else
inline constexpr double kGradStep = 1e-3;
inline constexpr double kGradTol = 2e-2;
#endif

/// Compare analytic directional derivatives of a scalar loss against
/// central finite differences along random probe directions over the
/// given parameters. Returns the maximum relative error.
inline double gradcheck_max_rel_err(const std::function<ag::Var()>& loss_fn,
                                    const std::vector<ag::Var>& params,
                                    int probes, std::uint64_t seed,
                                    double h = kGradStep) {
  auto loss = loss_fn();
  for (const auto& p : params) p->zero_grad();
  ag::backward(loss);
  std::vector<std::vector<real>> grads;
  for (const auto& p : params) grads.push_back(p->grad);

  Rng rng(seed);
  double max_rel = 0;
  for (int probe = 0; probe < probes; ++probe) {
    std::vector<std::vector<double>> dir;
    double norm = 0;
    for (const auto& p : params) {
      std::vector<double> v(p->value.size());
      for (auto& x : v) {
        x = rng.normal();
        norm += x * x;
      }
      dir.push_back(std::move(v));
    }
    norm = std::sqrt(norm);
    for (auto& v : dir)
      for (auto& x : v) x /= norm;

    double analytic = 0;
    for (std::size_t pi = 0; pi < params.size(); ++pi)
      for (std::size_t i = 0; i < dir[pi].size(); ++i)
        analytic += static_cast<double>(grads[pi][i]) * dir[pi][i];

    auto shift = [&](double step) {
      for (std::size_t pi = 0; pi < params.size(); ++pi)
        for (std::size_t i = 0; i < dir[pi].size(); ++i)
          params[pi]->value.data[i] =
              static_cast<real>(params[pi]->value.data[i] + step * dir[pi][i]);
    };
    shift(h);
    double lp = loss_fn()->value.data[0];
    shift(-2 * h);
    double lm = loss_fn()->value.data[0];
    shift(h);  // restore
    double numeric = (lp - lm) / (2 * h);
    double rel = std::abs(analytic - numeric) /
                 std::max({std::abs(analytic), std::abs(numeric), 1e-6});
    max_rel = std::max(max_rel, rel);
  }
  return max_rel;
}

}  // namespace tabgen::testutil
