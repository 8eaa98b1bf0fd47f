#include "difattack/network.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

#include "difattack/rng.hpp"

namespace difattack {

LayerSpec LayerSpec::conv(std::string name, int in, int out, int kernel, int stride, int padding) {
  LayerSpec l;
  l.kind = LayerKind::Conv2d;
  l.name = std::move(name);
  l.in_channels = in;
  l.out_channels = out;
  l.kernel = kernel;
  l.stride = stride;
  l.padding = padding;
  return l;
}

LayerSpec LayerSpec::linear(std::string name, int in, int out) {
  LayerSpec l;
  l.kind = LayerKind::Linear;
  l.name = std::move(name);
  l.in_channels = in;
  l.out_channels = out;
  return l;
}

LayerSpec LayerSpec::upsample(std::string name, int factor) {
  LayerSpec l;
  l.kind = LayerKind::Upsample;
  l.name = std::move(name);
  l.factor = factor;
  return l;
}

namespace {

LayerSpec simple(LayerKind kind, std::string name) {
  LayerSpec l;
  l.kind = kind;
  l.name = std::move(name);
  return l;
}

const char* kind_name(LayerKind k) {
  switch (k) {
    case LayerKind::Conv2d: return "conv2d";
    case LayerKind::Upsample: return "upsample";
    case LayerKind::Linear: return "linear";
    case LayerKind::Relu: return "relu";
    case LayerKind::Tanh: return "tanh";
    case LayerKind::Sigmoid: return "sigmoid";
    case LayerKind::Flatten: return "flatten";
  }
  return "?";
}

[[noreturn]] void layer_error(const Architecture& arch, const LayerSpec& l, const std::string& what) {
  throw std::invalid_argument("architecture '" + arch.id + "', layer '" + l.name + "' (" + kind_name(l.kind) +
                              "): " + what);
}

// Per-sample shape propagation.
Shape propagate(const Architecture& arch, const LayerSpec& l, const Shape& in) {
  switch (l.kind) {
    case LayerKind::Conv2d: {
      if (in.size() != 3) layer_error(arch, l, "expects a CxHxW input, got " + shape_string(in));
      if (in[0] != l.in_channels) {
        layer_error(arch, l, "expects " + std::to_string(l.in_channels) + " input channels, got " +
                                 std::to_string(in[0]));
      }
      const int h = (in[1] + 2 * l.padding - l.kernel) / l.stride + 1;
      const int w = (in[2] + 2 * l.padding - l.kernel) / l.stride + 1;
      if (h <= 0 || w <= 0) layer_error(arch, l, "kernel larger than padded input " + shape_string(in));
      return {l.out_channels, h, w};
    }
    case LayerKind::Upsample:
      if (in.size() != 3) layer_error(arch, l, "expects a CxHxW input, got " + shape_string(in));
      return {in[0], in[1] * l.factor, in[2] * l.factor};
    case LayerKind::Linear:
      if (in.size() != 1 || in[0] != l.in_channels) {
        layer_error(arch, l, "expects " + std::to_string(l.in_channels) + " input features, got " + shape_string(in));
      }
      return {l.out_channels};
    case LayerKind::Flatten:
      return {static_cast<int>(shape_numel(in))};
    default:
      return in;
  }
}

}  // namespace

LayerSpec LayerSpec::relu(std::string name) { return simple(LayerKind::Relu, std::move(name)); }
LayerSpec LayerSpec::tanh(std::string name) { return simple(LayerKind::Tanh, std::move(name)); }
LayerSpec LayerSpec::sigmoid(std::string name) { return simple(LayerKind::Sigmoid, std::move(name)); }
LayerSpec LayerSpec::flatten(std::string name) { return simple(LayerKind::Flatten, std::move(name)); }

Shape Architecture::output_shape() const {
  Shape s = input_shape;
  for (const auto& l : layers) s = propagate(*this, l, s);
  return s;
}

std::string Architecture::signature() const {
  std::ostringstream os;
  os << shape_string(input_shape);
  for (const auto& l : layers) {
    os << '|' << kind_name(l.kind);
    if (l.kind == LayerKind::Conv2d) {
      os << ':' << l.in_channels << '>' << l.out_channels << 'k' << l.kernel << 's' << l.stride << 'p' << l.padding;
    } else if (l.kind == LayerKind::Linear) {
      os << ':' << l.in_channels << '>' << l.out_channels;
    } else if (l.kind == LayerKind::Upsample) {
      os << 'x' << l.factor;
    }
  }
  return os.str();
}

void init_parameters(const Architecture& arch, ParameterSet& params, std::uint64_t seed, const std::string& prefix) {
  (void)arch.output_shape();
  Rng rng(seed);
  for (const auto& l : arch.layers) {
    if (!l.has_parameters()) continue;
    Shape ws;
    int fan_in = 0;
    if (l.kind == LayerKind::Conv2d) {
      ws = {l.out_channels, l.in_channels, l.kernel, l.kernel};
      fan_in = l.in_channels * l.kernel * l.kernel;
    } else {
      ws = {l.out_channels, l.in_channels};
      fan_in = l.in_channels;
    }
    const float bound = std::sqrt(6.0f / static_cast<float>(fan_in));
    Tensor w(ws);
    fill_uniform(w, rng, -bound, bound);
    params.add(prefix + l.name + ".weight", std::move(w));
    params.add(prefix + l.name + ".bias", Tensor(Shape{l.out_channels}));
  }
}

Var forward(const Architecture& arch, const ParameterSet& params, Tape& tape, Var x, const ForwardOptions& options) {
  const Shape& xs = x.shape();
  if (xs.size() != arch.input_shape.size() + 1 ||
      !std::equal(arch.input_shape.begin(), arch.input_shape.end(), xs.begin() + 1)) {
    throw std::invalid_argument("architecture '" + arch.id + "': input shape " + shape_string(xs) +
                                " does not match declared [B]" + shape_string(arch.input_shape));
  }
  Shape per_sample = arch.input_shape;
  Var h = x;
  for (const auto& l : arch.layers) {
    per_sample = propagate(arch, l, per_sample);
    switch (l.kind) {
      case LayerKind::Conv2d:
      case LayerKind::Linear: {
        const Parameter& w = params.at(options.prefix + l.name + ".weight");
        const Parameter& b = params.at(options.prefix + l.name + ".bias");
        Var wv = tape.parameter(w, options.trainable);
        Var bv = tape.parameter(b, options.trainable);
        try {
          h = l.kind == LayerKind::Conv2d ? ops::conv2d(h, wv, bv, l.stride, l.padding) : ops::linear(h, wv, bv);
        } catch (const std::invalid_argument& e) {
          layer_error(arch, l, e.what());
        }
        break;
      }
      case LayerKind::Upsample: h = ops::upsample_nearest(h, l.factor); break;
      case LayerKind::Relu: h = ops::relu(h); break;
      case LayerKind::Tanh: h = ops::tanh(h); break;
      case LayerKind::Sigmoid: h = ops::sigmoid(h); break;
      case LayerKind::Flatten: h = ops::flatten(h); break;
    }
  }
  return h;
}

Tensor forward(const Architecture& arch, const ParameterSet& params, const Tensor& x, const std::string& prefix) {
  Tape tape(false);
  Var out = forward(arch, params, tape, tape.constant_ref(x), ForwardOptions{prefix, false});
  return out.value();
}

}  // namespace difattack
