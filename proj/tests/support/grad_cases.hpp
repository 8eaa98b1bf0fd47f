#pragma once

// Random instances of every differentiable primitive, for finite-difference checks.

#include <numeric>
#include <vector>

#include "difattack/autodiff.hpp"
#include "difattack/rng.hpp"
#include "difattack/whitebox.hpp"
#include "support/gradcheck.hpp"

namespace difattack::testing {

inline Tensor uniform(const Shape& s, Rng& rng, float lo = -0.5f, float hi = 0.5f) {
  Tensor t(s);
  fill_uniform(t, rng, lo, hi);
  return t;
}

inline TensorD uniform_d(const Shape& s, Rng& rng, double lo = -0.5, double hi = 0.5) {
  TensorD t(s);
  std::uniform_real_distribution<double> u(lo, hi);
  for (double& v : t.data()) v = u(rng);
  return t;
}

// Values bounded away from 0 so ReLU kinks are never straddled by the FD step.
inline TensorD away_from_zero(const Shape& s, Rng& rng) {
  TensorD t = uniform_d(s, rng, 0.05, 0.5);
  std::bernoulli_distribution sign(0.5);
  for (double& v : t.data())
    if (sign(rng)) v = -v;
  return t;
}

inline std::vector<GradCase> make_grad_cases(std::uint64_t seed) {
  Rng rng(seed);
  std::uniform_int_distribution<int> pick(1, 3);
  std::vector<GradCase> cases;

  {
    const int b = pick(rng), c = pick(rng), o = pick(rng) + 1, hw = 4 + pick(rng), k = 2 * pick(rng) - 1;
    const int stride = pick(rng) == 1 ? 2 : 1, pad = k / 2;
    cases.push_back({"conv2d",
                     {uniform_d({b, c, hw, hw}, rng), uniform_d({o, c, k, k}, rng), uniform_d({o}, rng)},
                     [=](TapeD&, const std::vector<VarD>& v) { return ops::conv2d(v[0], v[1], v[2], stride, pad); }});
  }
  {
    const int c = 2 + pick(rng);
    cases.push_back({"conv1x1",
                     {uniform_d({2, c, 3, 3}, rng), uniform_d({c + 1, c, 1, 1}, rng), uniform_d({c + 1}, rng)},
                     [](TapeD&, const std::vector<VarD>& v) { return ops::conv2d(v[0], v[1], v[2], 1, 0); }});
  }
  cases.push_back({"upsample_nearest", {uniform_d({2, pick(rng), 3, 2}, rng)},
                   [](TapeD&, const std::vector<VarD>& v) { return ops::upsample_nearest(v[0], 2); }});
  {
    const int in = 3 + pick(rng), out = 1 + pick(rng);
    cases.push_back({"linear", {uniform_d({pick(rng), in}, rng), uniform_d({out, in}, rng), uniform_d({out}, rng)},
                     [](TapeD&, const std::vector<VarD>& v) { return ops::linear(v[0], v[1], v[2]); }});
  }
  cases.push_back({"relu", {away_from_zero({2, 7}, rng)},
                   [](TapeD&, const std::vector<VarD>& v) { return ops::relu(v[0]); }});
  cases.push_back({"tanh", {uniform_d({2, 7}, rng, -2.0, 2.0)},
                   [](TapeD&, const std::vector<VarD>& v) { return ops::tanh(v[0]); }});
  cases.push_back({"sigmoid", {uniform_d({2, 7}, rng, -3.0, 3.0)},
                   [](TapeD&, const std::vector<VarD>& v) { return ops::sigmoid(v[0]); }});
  cases.push_back({"softmax", {uniform_d({3, 5}, rng, -2.0, 2.0)},
                   [](TapeD&, const std::vector<VarD>& v) { return ops::softmax(v[0]); }});
  {
    std::uniform_int_distribution<int> label(0, 4);
    std::vector<int> labels{label(rng), label(rng), label(rng)};
    cases.push_back({"softmax_cross_entropy", {uniform_d({3, 5}, rng, -2.0, 2.0)},
                     [labels](TapeD&, const std::vector<VarD>& v) { return ops::softmax_cross_entropy(v[0], labels); }});
  }
  cases.push_back({"add", {uniform_d({2, 6}, rng), uniform_d({2, 6}, rng)},
                   [](TapeD&, const std::vector<VarD>& v) { return ops::add(v[0], v[1]); }});
  cases.push_back({"sub", {uniform_d({2, 6}, rng), uniform_d({2, 6}, rng)},
                   [](TapeD&, const std::vector<VarD>& v) { return ops::sub(v[0], v[1]); }});
  cases.push_back({"mul", {uniform_d({2, 6}, rng), uniform_d({2, 6}, rng)},
                   [](TapeD&, const std::vector<VarD>& v) { return ops::mul(v[0], v[1]); }});
  cases.push_back({"scale", {uniform_d({2, 6}, rng)},
                   [](TapeD&, const std::vector<VarD>& v) { return ops::scale(v[0], -1.75); }});
  cases.push_back({"concat_channels", {uniform_d({2, 2, 3, 3}, rng), uniform_d({2, 3, 3, 3}, rng)},
                   [](TapeD&, const std::vector<VarD>& v) { return ops::concat_channels(v[0], v[1]); }});
  {
    std::vector<int> idx(4);
    std::iota(idx.begin(), idx.end(), 0);
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.push_back(idx[0]);  // repeated channel: gradients must accumulate
    cases.push_back({"gather_channels", {uniform_d({2, 4, 2, 2}, rng)},
                     [idx](TapeD&, const std::vector<VarD>& v) { return ops::gather_channels(v[0], idx); }});
  }
  cases.push_back({"reshape", {uniform_d({2, 3, 4}, rng)},
                   [](TapeD&, const std::vector<VarD>& v) { return ops::reshape(v[0], {4, 6}); }});
  cases.push_back({"l2_norm_rows", {uniform_d({3, 2, 4}, rng)},
                   [](TapeD&, const std::vector<VarD>& v) { return ops::l2_norm_rows(v[0]); }});
  cases.push_back({"sum", {uniform_d({2, 5}, rng)}, [](TapeD&, const std::vector<VarD>& v) { return ops::sum(v[0]); }});
  cases.push_back({"mean", {uniform_d({2, 5}, rng)}, [](TapeD&, const std::vector<VarD>& v) { return ops::mean(v[0]); }});
  {
    // Scores with a unique runner-up and margins kept well away from the -k clamp.
    const int classes = 4;
    TensorD scores({3, classes});
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < classes; ++c) scores[r * classes + c] = c * 0.7 + uniform_d({1}, rng, -0.2, 0.2)[0];
    std::vector<int> labels{0, 3, 1};
    const int v = std::uniform_int_distribution<int>(0, 1)(rng);
    cases.push_back({"adv_margin_loss", {scores}, [labels, v](TapeD&, const std::vector<VarD>& in) {
                       return adv_margin_loss(in[0], labels, MarginLossParams{0, v, 50.0});
                     }});
  }
  return cases;
}

}  // namespace difattack::testing
