#include "difattack/whitebox.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "difattack/rng.hpp"

namespace difattack {

namespace {

// Index of the largest score other than `label`; lowest index wins ties.
template <typename T>
int runner_up(const T* s, int classes, int label) {
  int best = -1;
  for (int d = 0; d < classes; ++d) {
    if (d == label) continue;
    if (best < 0 || s[d] > s[best]) best = d;
  }
  return best;
}

float indicator(int v) { return v == 0 ? 1.0f : -1.0f; }

void validate_margin(const MarginLossParams& p) {
  if (p.v != 0 && p.v != 1) throw std::invalid_argument("margin loss selector v must be 0 or 1");
  if (!(p.k >= 0.0f)) throw std::invalid_argument("margin k must be non-negative");
}

float sign(float v) { return v > 0.0f ? 1.0f : (v < 0.0f ? -1.0f : 0.0f); }

void project_linf(Tensor& cand, const Tensor& x, float eps) {
  auto c = cand.data();
  const auto o = x.data();
  for (std::size_t i = 0; i < c.size(); ++i) {
    c[i] = std::clamp(c[i], o[i] - eps, o[i] + eps);
    c[i] = std::clamp(c[i], 0.0f, 1.0f);
  }
}

// Gradient of sum_b L_adv(c(x_b), y_b) with respect to the batch.
Tensor margin_gradient(const ClassifierSpec& c, const Tensor& x, std::span<const int> labels,
                       const MarginLossParams& p) {
  Tape tape;
  Var xv = tape.input(x);
  Var loss = ops::sum(adv_margin_loss(classify(c, tape, xv), labels, p));
  tape.backward(loss);
  return tape.grad(xv);
}

std::vector<int> repeat_label(const Tensor& x, int label) {
  return std::vector<int>(static_cast<std::size_t>(x.dim(0)), label);
}

}  // namespace

float signed_margin(std::span<const float> scores, int label, int v) {
  const int classes = static_cast<int>(scores.size());
  if (classes < 2) throw std::invalid_argument("margin loss needs at least two classes");
  if (label < 0 || label >= classes) {
    throw std::out_of_range("label " + std::to_string(label) + " out of range for " + std::to_string(classes) +
                            " classes");
  }
  const int d = runner_up(scores.data(), classes, label);
  return indicator(v) * (scores[label] - scores[d]);
}

float adv_margin_loss(std::span<const float> scores, const MarginLossParams& p) {
  validate_margin(p);
  return std::max(signed_margin(scores, p.label, p.v), -p.k);
}

template <typename T>
BasicVar<T> adv_margin_loss(BasicVar<T> scores, std::span<const int> labels, const MarginLossParams& p) {
  validate_margin(p);
  const Shape& s = scores.shape();
  if (s.size() != 2) throw std::invalid_argument("adv_margin_loss: scores must be [B, C], got " + shape_string(s));
  const int rows = s[0], classes = s[1];
  if (static_cast<int>(labels.size()) != rows) throw std::invalid_argument("adv_margin_loss: label count mismatch");
  if (classes < 2) throw std::invalid_argument("margin loss needs at least two classes");
  BasicTensor<T> out(Shape{rows});
  std::vector<int> ys(labels.begin(), labels.end());
  std::vector<int> rivals(static_cast<std::size_t>(rows));
  std::vector<char> active(static_cast<std::size_t>(rows));
  const T ind = static_cast<T>(indicator(p.v));
  const T k = static_cast<T>(p.k);
  const T* sv = scores.value().ptr();
  for (int r = 0; r < rows; ++r) {
    if (ys[r] < 0 || ys[r] >= classes) throw std::out_of_range("adv_margin_loss: label out of range");
    const T* row = sv + static_cast<std::size_t>(r) * classes;
    rivals[r] = runner_up(row, classes, ys[r]);
    const T m = ind * (row[ys[r]] - row[rivals[r]]);
    // First argument of the max wins ties.
    active[r] = m >= -k;
    out[r] = active[r] ? m : -k;
  }
  return scores.tape()->record("adv_margin_loss", std::move(out), {scores},
                               [=](BasicTape<T>& t, const BasicTensor<T>& go) {
                                 auto d = t.grad_of(scores);
                                 for (int r = 0; r < rows; ++r) {
                                   if (!active[r]) continue;
                                   const std::size_t off = static_cast<std::size_t>(r) * classes;
                                   d[off + ys[r]] += ind * go[r];
                                   d[off + rivals[r]] -= ind * go[r];
                                 }
                               });
}

template Var adv_margin_loss(Var, std::span<const int>, const MarginLossParams&);
template VarD adv_margin_loss(VarD, std::span<const int>, const MarginLossParams&);

const char* to_string(WhiteBoxMethod m) {
  switch (m) {
    case WhiteBoxMethod::Pgd: return "pgd";
    case WhiteBoxMethod::Mifgsm: return "mifgsm";
    case WhiteBoxMethod::Mixed: return "mixed";
  }
  return "?";
}

WhiteBoxMethod whitebox_method_from_string(const std::string& s) {
  if (s == "pgd") return WhiteBoxMethod::Pgd;
  if (s == "mifgsm") return WhiteBoxMethod::Mifgsm;
  if (s == "mixed") return WhiteBoxMethod::Mixed;
  throw std::invalid_argument("unknown white-box method '" + s + "' (pgd|mifgsm|mixed)");
}

void WhiteBoxConfig::validate() const {
  if (!(epsilon >= 0.0f)) throw std::invalid_argument("white-box epsilon must be non-negative");
  if (steps < 1) throw std::invalid_argument("white-box steps must be >= 1");
  if (!(step_size > 0.0f)) throw std::invalid_argument("white-box step size must be positive");
  if (!(margin >= 0.0f)) throw std::invalid_argument("white-box margin must be non-negative");
}

Tensor pgd_attack(const ClassifierSpec& c, const Tensor& x, std::span<const int> labels, const MarginLossParams& p,
                  const WhiteBoxConfig& cfg) {
  cfg.validate();
  Tensor adv = x;
  for (int step = 0; step < cfg.steps; ++step) {
    const Tensor g = margin_gradient(c, adv, labels, p);
    auto a = adv.data();
    const auto gd = g.data();
    for (std::size_t i = 0; i < a.size(); ++i) a[i] -= cfg.step_size * sign(gd[i]);
    project_linf(adv, x, cfg.epsilon);
  }
  return adv;
}

Tensor pgd_attack(const ClassifierSpec& c, const Tensor& x, const MarginLossParams& p, const WhiteBoxConfig& cfg) {
  return pgd_attack(c, x, repeat_label(x, p.label), p, cfg);
}

Tensor mifgsm_attack(const ClassifierSpec& c, const Tensor& x, std::span<const int> labels,
                     const MarginLossParams& p, const WhiteBoxConfig& cfg) {
  cfg.validate();
  Tensor adv = x;
  Tensor momentum(x.shape());
  const int batch = x.dim(0);
  const std::size_t per = batch ? x.numel() / static_cast<std::size_t>(batch) : 0;
  for (int step = 0; step < cfg.steps; ++step) {
    const Tensor g = margin_gradient(c, adv, labels, p);
    for (int b = 0; b < batch; ++b) {
      double l1 = 0.0;
      for (std::size_t i = 0; i < per; ++i) l1 += std::fabs(g[b * per + i]);
      const float inv = l1 > 0.0 ? static_cast<float>(1.0 / l1) : 0.0f;
      for (std::size_t i = 0; i < per; ++i) {
        float& m = momentum[b * per + i];
        m = cfg.decay * m + g[b * per + i] * inv;
      }
    }
    auto a = adv.data();
    const auto md = momentum.data();
    for (std::size_t i = 0; i < a.size(); ++i) a[i] -= cfg.step_size * sign(md[i]);
    project_linf(adv, x, cfg.epsilon);
  }
  return adv;
}

Tensor mifgsm_attack(const ClassifierSpec& c, const Tensor& x, const MarginLossParams& p, const WhiteBoxConfig& cfg) {
  return mifgsm_attack(c, x, repeat_label(x, p.label), p, cfg);
}

PairPlan plan_pair_batch(std::uint64_t seed, std::uint64_t batch_index, int zoo_size, WhiteBoxMethod method) {
  if (zoo_size < 1) throw std::invalid_argument("surrogate zoo is empty");
  Rng rng(derive_seed(seed, batch_index));
  PairPlan plan;
  plan.surrogate = std::uniform_int_distribution<int>(0, zoo_size - 1)(rng);
  plan.method = method;
  if (method == WhiteBoxMethod::Mixed) {
    plan.method = std::bernoulli_distribution(0.5)(rng) ? WhiteBoxMethod::Mifgsm : WhiteBoxMethod::Pgd;
  }
  return plan;
}

TrainingPairBatch make_training_pairs(const Dataset& data, std::span<const int> indices,
                                      const std::vector<ClassifierSpec>& zoo, const WhiteBoxConfig& cfg,
                                      std::uint64_t seed, std::uint64_t batch_index) {
  TrainingPairBatch batch;
  batch.plan = plan_pair_batch(seed, batch_index, static_cast<int>(zoo.size()), cfg.method);
  batch.clean = data.gather(indices);
  batch.labels = data.gather_labels(indices);
  const ClassifierSpec& surrogate = zoo[static_cast<std::size_t>(batch.plan.surrogate)];
  const MarginLossParams p{0, 0, cfg.margin};
  batch.adversarial = batch.plan.method == WhiteBoxMethod::Pgd
                          ? pgd_attack(surrogate, batch.clean, batch.labels, p, cfg)
                          : mifgsm_attack(surrogate, batch.clean, batch.labels, p, cfg);
  return batch;
}

std::vector<TrainingPairBatch> generate_training_pairs(const Dataset& data, const std::vector<ClassifierSpec>& zoo,
                                                       const WhiteBoxConfig& cfg, std::uint64_t seed,
                                                       int batch_size) {
  if (zoo.empty()) throw std::invalid_argument("surrogate zoo is empty");
  std::vector<TrainingPairBatch> out;
  std::vector<int> idx;
  std::uint64_t batch_index = 0;
  for (int start = 0; start < data.size(); start += batch_size) {
    idx.clear();
    for (int i = start; i < std::min(data.size(), start + batch_size); ++i) idx.push_back(i);
    out.push_back(make_training_pairs(data, idx, zoo, cfg, seed, batch_index++));
  }
  return out;
}

}  // namespace difattack
