#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <new>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace difattack {

using Shape = std::vector<int>;

std::size_t shape_numel(const Shape& shape);
std::string shape_string(const Shape& shape);

// Every tensor buffer starts on a cache line. Eigen picks its vectorised code
// path from the runtime alignment of each buffer, so mixed alignments would
// make sums differ in the last bit from one run to the next.
template <typename T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};

  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, std::size_t) { ::operator delete(p, kAlign); }

  template <typename U>
  bool operator==(const AlignedAllocator<U>&) const {
    return true;
  }
};

template <typename T>
using AlignedVector = std::vector<T, AlignedAllocator<T>>;

/// Dense row-major array. Rank-0 tensors (shape {}) hold one value.
/// Everything outside gradient checking uses the float instantiation.
template <typename T>
class BasicTensor {
 public:
  using value_type = T;

  BasicTensor() : shape_{0} {}
  explicit BasicTensor(Shape shape, T fill = T(0)) : shape_(std::move(shape)) {
    data_.assign(shape_numel(shape_), fill);
  }
  BasicTensor(Shape shape, const std::vector<T>& data) : BasicTensor(std::move(shape), AlignedVector<T>(data.begin(), data.end())) {}
  template <typename V>
    requires std::same_as<V, AlignedVector<T>>
  BasicTensor(Shape shape, V data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (shape_numel(shape_) != data_.size()) {
      throw std::invalid_argument("tensor data length " + std::to_string(data_.size()) +
                                  " does not match shape " + shape_string(shape_));
    }
  }

  static BasicTensor scalar(T value) { return BasicTensor(Shape{}, value); }
  static BasicTensor from(std::initializer_list<T> values) {
    return BasicTensor(Shape{static_cast<int>(values.size())}, std::vector<T>(values));
  }

  const Shape& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int dim(int axis) const {
    if (axis < 0) axis += rank();
    if (axis < 0 || axis >= rank()) throw std::out_of_range("axis out of range for shape " + shape_string(shape_));
    return shape_[static_cast<std::size_t>(axis)];
  }
  std::size_t numel() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }
  T* ptr() { return data_.data(); }
  const T* ptr() const { return data_.data(); }
  AlignedVector<T>& storage() { return data_; }
  const AlignedVector<T>& storage() const { return data_; }
  std::vector<T> to_vector() const { return std::vector<T>(data_.begin(), data_.end()); }

  T& operator[](std::size_t i) { return data_[i]; }
  T operator[](std::size_t i) const { return data_[i]; }

  /// Value of a single-element tensor.
  T item() const {
    if (data_.size() != 1) throw std::logic_error("item() on tensor of shape " + shape_string(shape_));
    return data_[0];
  }

  BasicTensor reshaped(Shape shape) const {
    BasicTensor out = *this;
    out.reshape(std::move(shape));
    return out;
  }
  void reshape(Shape shape) {
    if (shape_numel(shape) != data_.size()) {
      throw std::invalid_argument("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
    }
    shape_ = std::move(shape);
  }

  /// Rows [begin, end) along the leading axis.
  BasicTensor slice_rows(int begin, int end) const {
    if (rank() == 0 || begin < 0 || end > shape_[0] || begin > end) {
      throw std::out_of_range("row slice [" + std::to_string(begin) + "," + std::to_string(end) + ") of shape " +
                              shape_string(shape_));
    }
    const std::size_t stride = shape_[0] == 0 ? 0 : data_.size() / static_cast<std::size_t>(shape_[0]);
    Shape s = shape_;
    s[0] = end - begin;
    return BasicTensor(s, AlignedVector<T>(data_.begin() + static_cast<std::ptrdiff_t>(begin * stride),
                                           data_.begin() + static_cast<std::ptrdiff_t>(end * stride)));
  }
  /// Leading-axis row `index` with the leading axis kept at size one.
  BasicTensor row(int index) const { return slice_rows(index, index + 1); }

  void fill(T value) { std::fill(data_.begin(), data_.end(), value); }
  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
  }
  bool same_shape(const BasicTensor& other) const { return shape_ == other.shape_; }

  template <typename U>
  BasicTensor<U> cast() const {
    return BasicTensor<U>(shape_, AlignedVector<U>(data_.begin(), data_.end()));
  }

  friend bool operator==(const BasicTensor& a, const BasicTensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Shape shape_;
  AlignedVector<T> data_;
};

using Tensor = BasicTensor<float>;
using TensorD = BasicTensor<double>;

/// Stack tensors along their leading axis.
Tensor concat_rows(std::span<const Tensor> parts);

float max_abs_diff(const Tensor& a, const Tensor& b);
float linf_distance(const Tensor& a, const Tensor& b);
float l2_distance(const Tensor& a, const Tensor& b);
float l2_norm(const Tensor& a);
float mean(const Tensor& a);
float stddev(const Tensor& a);

}  // namespace difattack
