#pragma once

#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "difattack/tensor.hpp"

namespace difattack {

struct Parameter {
  std::string name;
  Tensor value;
  // Adam state; empty until the first adam step.
  Tensor first_moment;
  Tensor second_moment;
  long step = 0;
};

/// Gradients keyed by parameter name.
using Gradients = std::map<std::string, Tensor>;

/// Named parameters with per-parameter optimizer state. Iteration order is the
/// lexicographic name order, which is also the checkpoint record order.
class ParameterSet {
 public:
  Parameter& add(const std::string& name, Tensor value);
  bool contains(const std::string& name) const { return params_.count(name) != 0; }
  Parameter& at(const std::string& name);
  const Parameter& at(const std::string& name) const;
  std::size_t size() const { return params_.size(); }
  std::size_t scalar_count() const;

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  /// Copies every parameter of `other` in under `prefix + name`.
  void merge(const ParameterSet& other, const std::string& prefix = "");

  /// Values only; optimizer state is not compared.
  bool same_values(const ParameterSet& other) const;

 private:
  std::map<std::string, Parameter> params_;
};

enum class UpdateRule { Sgd, Adam };

struct AdamSettings {
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float eps = 1e-8f;
};

class OptimizerError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Applies one update to every parameter that has an entry in `grads`.
/// Refuses (throws OptimizerError, parameters untouched) when any gradient is
/// non-finite or misaligned with its parameter.
void optimizer_step(ParameterSet& params, const Gradients& grads, float lr, UpdateRule rule,
                    const AdamSettings& adam = {});

}  // namespace difattack
