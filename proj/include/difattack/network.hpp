#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "difattack/autodiff.hpp"
#include "difattack/params.hpp"

namespace difattack {

enum class LayerKind { Conv2d, Upsample, Linear, Relu, Tanh, Sigmoid, Flatten };

struct LayerSpec {
  LayerKind kind = LayerKind::Relu;
  std::string name;
  int in_channels = 0;   // conv: input channels; linear: input features
  int out_channels = 0;  // conv: output channels; linear: output features
  int kernel = 1;
  int stride = 1;
  int padding = 0;
  int factor = 1;  // upsample

  static LayerSpec conv(std::string name, int in, int out, int kernel, int stride, int padding);
  static LayerSpec linear(std::string name, int in, int out);
  static LayerSpec upsample(std::string name, int factor);
  static LayerSpec relu(std::string name);
  static LayerSpec tanh(std::string name);
  static LayerSpec sigmoid(std::string name);
  static LayerSpec flatten(std::string name);

  bool has_parameters() const { return kind == LayerKind::Conv2d || kind == LayerKind::Linear; }
};

/// A sequential layer graph with a declared per-sample input shape (batch excluded).
struct Architecture {
  std::string id;
  Shape input_shape;
  std::vector<LayerSpec> layers;

  /// Per-sample output shape; throws with the offending layer's name on mismatch.
  Shape output_shape() const;
  /// Structural fingerprint used to tell architectures apart.
  std::string signature() const;
};

/// Kaiming-uniform (fan-in, ReLU gain) weights and zero biases, seeded.
/// Parameter names are `prefix + layer.name + ".weight" / ".bias"`.
void init_parameters(const Architecture& arch, ParameterSet& params, std::uint64_t seed,
                     const std::string& prefix = "");

struct ForwardOptions {
  std::string prefix;     // parameter-name prefix
  bool trainable = true;  // false: parameters are frozen constants on the tape
};

/// Runs `arch` on a batch `x` of shape [B, input_shape...]. Mismatches are
/// rejected with a message naming the offending layer.
Var forward(const Architecture& arch, const ParameterSet& params, Tape& tape, Var x,
            const ForwardOptions& options = {});

/// Gradient-free convenience wrapper.
Tensor forward(const Architecture& arch, const ParameterSet& params, const Tensor& x, const std::string& prefix = "");

}  // namespace difattack
