#include "difattack/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace difattack {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (int d : shape) {
    if (d < 0) throw std::invalid_argument("negative dimension in shape " + shape_string(shape));
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor concat_rows(std::span<const Tensor> parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows of nothing");
  Shape s = parts[0].shape();
  if (s.empty()) throw std::invalid_argument("concat_rows needs a leading axis");
  int rows = 0;
  for (const auto& p : parts) {
    if (p.rank() != static_cast<int>(s.size()) || !std::equal(s.begin() + 1, s.end(), p.shape().begin() + 1)) {
      throw std::invalid_argument("concat_rows shape mismatch: " + shape_string(s) + " vs " +
                                  shape_string(p.shape()));
    }
    rows += p.dim(0);
  }
  s[0] = rows;
  std::vector<float> data;
  data.reserve(shape_numel(s));
  for (const auto& p : parts) data.insert(data.end(), p.data().begin(), p.data().end());
  return Tensor(s, std::move(data));
}

float max_abs_diff(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) throw std::invalid_argument("max_abs_diff shape mismatch");
  float m = 0.0f;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
  return m;
}

float linf_distance(const Tensor& a, const Tensor& b) { return max_abs_diff(a, b); }

float l2_distance(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) throw std::invalid_argument("l2_distance shape mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    const double d = static_cast<double>(a[i]) - b[i];
    s += d * d;
  }
  return static_cast<float>(std::sqrt(s));
}

float l2_norm(const Tensor& a) {
  double s = 0.0;
  for (float v : a.data()) s += static_cast<double>(v) * v;
  return static_cast<float>(std::sqrt(s));
}

float mean(const Tensor& a) {
  if (a.empty()) return 0.0f;
  double s = 0.0;
  for (float v : a.data()) s += v;
  return static_cast<float>(s / static_cast<double>(a.numel()));
}

float stddev(const Tensor& a) {
  if (a.empty()) return 0.0f;
  const double m = mean(a);
  double s = 0.0;
  for (float v : a.data()) s += (v - m) * (v - m);
  return static_cast<float>(std::sqrt(s / static_cast<double>(a.numel())));
}

}  // namespace difattack
