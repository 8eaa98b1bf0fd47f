#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <unordered_map>
#include <vector>

#include "difattack/params.hpp"
#include "difattack/tensor.hpp"

namespace difattack {

template <typename T>
class BasicTape;

/// Handle to a value recorded on a tape. Cheap to copy; valid while the tape lives.
template <typename T>
class BasicVar {
 public:
  BasicVar() = default;
  BasicVar(BasicTape<T>* tape, std::size_t id) : tape_(tape), id_(id) {}

  bool valid() const { return tape_ != nullptr; }
  BasicTape<T>* tape() const { return tape_; }
  std::size_t id() const { return id_; }

  const BasicTensor<T>& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;

 private:
  BasicTape<T>* tape_ = nullptr;
  std::size_t id_ = 0;
};

class AutodiffError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Ordered record of primitive operations with their saved intermediates.
/// A tape is single-threaded; distinct tapes share nothing mutable, so
/// parameters can be read by several tapes on different threads.
template <typename T>
class BasicTape {
 public:
  using TensorT = BasicTensor<T>;
  using VarT = BasicVar<T>;
  /// Receives the gradient of the node's output and pushes contributions to
  /// its parents through grad_of.
  using BackwardFn = std::function<void(BasicTape&, const TensorT& grad_out)>;

  explicit BasicTape(bool record_gradients = true) : recording_(record_gradients) {}
  BasicTape(const BasicTape&) = delete;
  BasicTape& operator=(const BasicTape&) = delete;

  bool recording() const { return recording_; }

  VarT constant(TensorT value);
  /// Borrows `value`; the caller keeps it alive for the tape's lifetime.
  VarT constant_ref(const TensorT& value);
  /// A leaf whose gradient is wanted (for example an image under attack).
  VarT input(TensorT value);
  /// Leaf bound to a parameter. Reusing the same parameter returns the same node.
  /// Frozen parameters take part in the forward pass but get no gradient.
  VarT parameter(const Parameter& p, bool trainable = true)
    requires std::is_same_v<T, float>;

  /// Appends an op node. `fn` is kept only when recording and some parent needs a gradient.
  VarT record(const char* op, TensorT value, std::initializer_list<VarT> parents, BackwardFn fn);

  const TensorT& value(std::size_t id) const;
  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }

  /// Mutable gradient accumulator of `v`, zero-initialised on first use.
  std::span<T> grad_of(VarT v);

  /// Reverse sweep from a single-element loss. Returns d(loss)/d(param) for
  /// every trainable parameter on the tape, zero where the loss does not depend on it.
  std::map<std::string, TensorT> backward(VarT loss);

  /// Gradient of the last backward() with respect to `v`; zeros if unreached.
  TensorT grad(VarT v) const;

  std::size_t size() const { return nodes_.size(); }
  /// Number of op backward functions run by the last backward().
  std::size_t backward_visits() const { return backward_visits_; }

 private:
  struct Node {
    const char* op = "";
    TensorT owned;
    const TensorT* borrowed = nullptr;
    bool requires_grad = false;
    const Parameter* param = nullptr;
    BackwardFn backward;
    TensorT grad;

    const TensorT& value() const { return borrowed ? *borrowed : owned; }
  };

  VarT push(Node node);
  void check_owned(VarT v) const;

  bool recording_;
  std::vector<Node> nodes_;
  std::unordered_map<const Parameter*, std::size_t> param_nodes_;
  std::size_t backward_visits_ = 0;
};

using Var = BasicVar<float>;
using Tape = BasicTape<float>;
using VarD = BasicVar<double>;
using TapeD = BasicTape<double>;

template <typename T>
const BasicTensor<T>& BasicVar<T>::value() const {
  if (!tape_) throw AutodiffError("use of an unbound Var");
  return tape_->value(id_);
}

template <typename T>
bool BasicVar<T>::requires_grad() const {
  return tape_ && tape_->requires_grad(id_);
}

/// Differentiable primitives. Image tensors are NCHW. Defined for float and double.
namespace ops {

template <typename T> using V = BasicVar<T>;

template <typename T> V<T> conv2d(V<T> x, V<T> weight, V<T> bias, int stride, int padding);
template <typename T> V<T> upsample_nearest(V<T> x, int factor);
template <typename T> V<T> linear(V<T> x, V<T> weight, V<T> bias);
template <typename T> V<T> relu(V<T> x);
template <typename T> V<T> tanh(V<T> x);
template <typename T> V<T> sigmoid(V<T> x);
/// Row-wise softmax of [B, C] logits.
template <typename T> V<T> softmax(V<T> logits);
/// Mean softmax cross-entropy over the batch; scalar output.
template <typename T> V<T> softmax_cross_entropy(V<T> logits, std::span<const int> labels);
template <typename T> V<T> add(V<T> a, V<T> b);
template <typename T> V<T> sub(V<T> a, V<T> b);
template <typename T> V<T> mul(V<T> a, V<T> b);
template <typename T> V<T> scale(V<T> x, std::type_identity_t<T> factor);
template <typename T> V<T> concat_channels(V<T> a, V<T> b);
/// out[:, i] = x[:, channels[i]]
template <typename T> V<T> gather_channels(V<T> x, std::vector<int> channels);
template <typename T> V<T> reshape(V<T> x, Shape shape);
/// [B, ...] -> [B, prod(...)]
template <typename T> V<T> flatten(V<T> x);
/// Per-sample Euclidean norm: [B, ...] -> [B].
template <typename T> V<T> l2_norm_rows(V<T> x);
template <typename T> V<T> sum(V<T> x);
template <typename T> V<T> mean(V<T> x);

}  // namespace ops

}  // namespace difattack
