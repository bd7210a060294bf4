#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "tabgen/autograd.hpp"
#include "tabgen/tensor.hpp"

namespace tabgen {

/// Named parameter collection. Ordered map so iteration (and therefore
/// optimizer traversal and checkpoints) is deterministic.
struct ParamStore {
  std::map<std::string, ag::Var> params;
  std::uint64_t init_seed = 0;

  ag::Var add(const std::string& name, Tensor init) {
    if (params.count(name))
      throw std::invalid_argument("duplicate parameter name: " + name);
    auto v = ag::param(std::move(init));
    params[name] = v;
    return v;
  }

  ag::Var get(const std::string& name) const {
    auto it = params.find(name);
    if (it == params.end())
      throw std::invalid_argument("unknown parameter: " + name);
    return it->second;
  }

  void zero_grad() {
    for (auto& [_, p] : params) p->zero_grad();
  }

  std::size_t total_size() const {
    std::size_t n = 0;
    for (const auto& [_, p] : params) n += p->value.size();
    return n;
  }
};

struct AdamConfig {
  real learning_rate = real(1e-3);
  real weight_decay = real(0);  // optional decoupled decay, lr * wd * w
  real beta1 = real(0.9);       // first-moment decay rate
  real beta2 = real(0.999);
  real eps = real(1e-8);
};

struct AdamState {
  AdamConfig config;
  std::map<std::string, std::pair<std::vector<real>, std::vector<real>>> moments;
  std::int64_t step_count = 0;

  explicit AdamState(AdamConfig cfg = {}) : config(cfg) {}
};

/// One Adam step with decoupled weight decay. Requires every parameter's
/// gradient to have been populated by a backward pass; zeroes gradients.
inline void adam_step(ParamStore& store, AdamState& state) {
  for (auto& [name, p] : store.params)
    if (!p->grad_set)
      throw std::runtime_error("adam_step: missing gradient for " + name);
  state.step_count += 1;
  const AdamConfig& c = state.config;
  const double t = static_cast<double>(state.step_count);
  const double bc1 = 1.0 - std::pow(static_cast<double>(c.beta1), t);
  const double bc2 = 1.0 - std::pow(static_cast<double>(c.beta2), t);
  for (auto& [name, p] : store.params) {
    auto& [m, v] = state.moments[name];
    if (m.size() != p->value.size()) {
      m.assign(p->value.size(), real(0));
      v.assign(p->value.size(), real(0));
    }
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      double g = p->grad[i];
      double mi = c.beta1 * m[i] + (1.0 - c.beta1) * g;
      double vi = c.beta2 * v[i] + (1.0 - c.beta2) * g * g;
      m[i] = static_cast<real>(mi);
      v[i] = static_cast<real>(vi);
      double mhat = mi / bc1;
      double vhat = vi / bc2;
      double w = p->value.data[i];
      w -= c.learning_rate * (mhat / (std::sqrt(vhat) + c.eps));
      w -= c.learning_rate * c.weight_decay * p->value.data[i];
      p->value.data[i] = static_cast<real>(w);
    }
  }
  store.zero_grad();
}

}  // namespace tabgen
