#include "difattack/params.hpp"

#include <cmath>

namespace difattack {

Parameter& ParameterSet::add(const std::string& name, Tensor value) {
  auto [it, inserted] = params_.try_emplace(name);
  if (!inserted) throw std::invalid_argument("duplicate parameter '" + name + "'");
  it->second.name = name;
  it->second.value = std::move(value);
  return it->second;
}

Parameter& ParameterSet::at(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw std::out_of_range("unknown parameter '" + name + "'");
  return it->second;
}

const Parameter& ParameterSet::at(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw std::out_of_range("unknown parameter '" + name + "'");
  return it->second;
}

std::size_t ParameterSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& [_, p] : params_) n += p.value.numel();
  return n;
}

void ParameterSet::merge(const ParameterSet& other, const std::string& prefix) {
  for (const auto& [name, p] : other) add(prefix + name, p.value);
}

bool ParameterSet::same_values(const ParameterSet& other) const {
  if (params_.size() != other.params_.size()) return false;
  auto a = params_.begin();
  auto b = other.params_.begin();
  for (; a != params_.end(); ++a, ++b) {
    if (a->first != b->first || !(a->second.value == b->second.value)) return false;
  }
  return true;
}

void optimizer_step(ParameterSet& params, const Gradients& grads, float lr, UpdateRule rule,
                    const AdamSettings& adam) {
  if (!(lr > 0.0f)) throw OptimizerError("learning rate must be positive");
  for (const auto& [name, g] : grads) {
    const Parameter& p = params.at(name);
    if (!g.same_shape(p.value)) {
      throw OptimizerError("gradient for '" + name + "' has shape " + shape_string(g.shape()) +
                           ", parameter has " + shape_string(p.value.shape()));
    }
    if (!g.all_finite()) throw OptimizerError("non-finite gradient for '" + name + "'; step refused");
  }

  for (const auto& [name, g] : grads) {
    Parameter& p = params.at(name);
    auto w = p.value.data();
    auto gd = g.data();
    if (rule == UpdateRule::Sgd) {
      for (std::size_t i = 0; i < w.size(); ++i) w[i] -= lr * gd[i];
      continue;
    }
    if (p.first_moment.numel() != w.size()) {
      p.first_moment = Tensor(p.value.shape());
      p.second_moment = Tensor(p.value.shape());
      p.step = 0;
    }
    ++p.step;
    const double bc1 = 1.0 - std::pow(static_cast<double>(adam.beta1), static_cast<double>(p.step));
    const double bc2 = 1.0 - std::pow(static_cast<double>(adam.beta2), static_cast<double>(p.step));
    const float step_size = static_cast<float>(lr / bc1);
    const float bc2_sqrt = static_cast<float>(std::sqrt(bc2));
    auto m = p.first_moment.data();
    auto v = p.second_moment.data();
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = adam.beta1 * m[i] + (1.0f - adam.beta1) * gd[i];
      v[i] = adam.beta2 * v[i] + (1.0f - adam.beta2) * gd[i] * gd[i];
      const float denom = std::sqrt(v[i]) / bc2_sqrt + adam.eps;
      w[i] -= step_size * m[i] / denom;
    }
  }
}

}  // namespace difattack
