#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "difattack/autodiff.hpp"
#include "difattack/classifier.hpp"
#include "difattack/dataset.hpp"

namespace difattack {

/// Margin-loss selector. v = 0: untargeted with ground truth `label`;
/// v = 1: targeted with target `label`. k >= 0 caps how negative the loss gets.
struct MarginLossParams {
  int label = 0;
  int v = 0;
  float k = 0.0f;
};

/// I(v) * (s[y] - max_{d != y} s[d]) with I(0) = 1, I(1) = -1. Ties in the
/// runner-up resolve to the lowest class index.
float signed_margin(std::span<const float> scores, int label, int v);

/// max{ I(v) * (s[y] - max_{d != y} s[d]), -k }.
float adv_margin_loss(std::span<const float> scores, const MarginLossParams& p);

/// Row-wise margin loss on [B, C] scores, one label per row; output [B].
/// p.label is ignored. Subgradient 0 where the clamp is active.
template <typename T>
BasicVar<T> adv_margin_loss(BasicVar<T> scores, std::span<const int> labels, const MarginLossParams& p);

enum class WhiteBoxMethod { Pgd, Mifgsm, Mixed };

const char* to_string(WhiteBoxMethod m);
WhiteBoxMethod whitebox_method_from_string(const std::string& s);

struct WhiteBoxConfig {
  WhiteBoxMethod method = WhiteBoxMethod::Pgd;
  float epsilon = 8.0f / 255.0f;
  int steps = 10;
  float step_size = 2.0f / 255.0f;  // epsilon / 4
  float decay = 1.0f;               // MI-FGSM momentum
  float margin = 5.0f;              // k of the margin loss driving the attack

  void validate() const;
};

/// x <- clip_[0,1](clip_eps(x - step * sign(grad L))), zero random start.
/// `x` is a batch [B, C, H, W]; labels and p.v, p.k select the loss.
Tensor pgd_attack(const ClassifierSpec& c, const Tensor& x, std::span<const int> labels, const MarginLossParams& p,
                  const WhiteBoxConfig& cfg);
/// Single image: label taken from p.label.
Tensor pgd_attack(const ClassifierSpec& c, const Tensor& x, const MarginLossParams& p, const WhiteBoxConfig& cfg);

/// Momentum iterative FGSM: g <- decay * g + grad / ||grad||_1 per sample.
Tensor mifgsm_attack(const ClassifierSpec& c, const Tensor& x, std::span<const int> labels,
                     const MarginLossParams& p, const WhiteBoxConfig& cfg);
Tensor mifgsm_attack(const ClassifierSpec& c, const Tensor& x, const MarginLossParams& p, const WhiteBoxConfig& cfg);

/// Surrogate and method chosen for one batch of pair generation.
struct PairPlan {
  int surrogate = 0;
  WhiteBoxMethod method = WhiteBoxMethod::Pgd;  // never Mixed
};

/// Uniform surrogate choice (and a fair PGD/MI-FGSM coin when `method` is
/// Mixed) from a stream seeded by (seed, batch_index).
PairPlan plan_pair_batch(std::uint64_t seed, std::uint64_t batch_index, int zoo_size, WhiteBoxMethod method);

struct TrainingPairBatch {
  Tensor clean;
  Tensor adversarial;
  std::vector<int> labels;
  PairPlan plan;
};

/// Untargeted (v = 0) adversarial counterpart of one clean batch.
TrainingPairBatch make_training_pairs(const Dataset& data, std::span<const int> indices,
                                      const std::vector<ClassifierSpec>& zoo, const WhiteBoxConfig& cfg,
                                      std::uint64_t seed, std::uint64_t batch_index);

/// One pass over `data` in index order, `batch_size` images per batch.
std::vector<TrainingPairBatch> generate_training_pairs(const Dataset& data, const std::vector<ClassifierSpec>& zoo,
                                                       const WhiteBoxConfig& cfg, std::uint64_t seed,
                                                       int batch_size = 32);

}  // namespace difattack
