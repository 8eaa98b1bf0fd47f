#include "difattack/oracle.hpp"

#include <algorithm>
#include <cmath>

namespace difattack {

BudgetExceeded::BudgetExceeded(long queries, long requested, long budget)
    : std::runtime_error("query of " + std::to_string(requested) + " images refused: " + std::to_string(queries) +
                         " of " + std::to_string(budget) + " queries already used"),
      queries_(queries),
      requested_(requested),
      budget_(budget) {}

void ScoreOracle::arm_budget(long budget) {
  if (budget < 0) throw std::invalid_argument("query budget must be non-negative");
  budget_ = budget;
}

Tensor ScoreOracle::query(const Tensor& images) {
  if (images.rank() != 4) throw std::invalid_argument("oracle query expects [B, C, H, W], got " + shape_string(images.shape()));
  const long batch = images.dim(0);
  if (batch == 0) return Tensor(Shape{0, num_classes()});
  const long q = queries_.load();
  if (budget_ && q + batch > *budget_) throw BudgetExceeded(q, batch, *budget_);
  Tensor scores = score(images);
  if (scores.rank() != 2 || scores.dim(0) != batch || scores.dim(1) != num_classes()) {
    throw TransportError("backend returned scores of shape " + shape_string(scores.shape()));
  }
  queries_ += batch;
  return scores;
}

InProcessOracle::InProcessOracle(ClassifierSpec victim, ScoreMode mode) : victim_(std::move(victim)), mode_(mode) {}

Tensor InProcessOracle::score(const Tensor& images) { return classify(victim_, images, mode_); }

ConstraintCheckingOracle::ConstraintCheckingOracle(ScoreOracle& inner, Tensor clean, float epsilon, float slack)
    : inner_(inner), clean_(std::move(clean)), epsilon_(epsilon), slack_(slack) {}

Tensor ConstraintCheckingOracle::score(const Tensor& images) {
  const std::size_t per = clean_.numel();
  if (images.numel() != per * static_cast<std::size_t>(images.dim(0))) {
    throw ConstraintViolation("queried image shape " + shape_string(images.shape()) + " does not match the clean image");
  }
  for (int b = 0; b < images.dim(0); ++b) {
    const float* p = images.ptr() + static_cast<std::size_t>(b) * per;
    for (std::size_t i = 0; i < per; ++i) {
      if (!(p[i] >= 0.0f && p[i] <= 1.0f)) {
        throw ConstraintViolation("queried pixel " + std::to_string(i) + " = " + std::to_string(p[i]) +
                                  " outside [0,1]");
      }
      const float d = std::fabs(p[i] - clean_[i]);
      worst_linf_ = std::max(worst_linf_, d);
      if (d > epsilon_ + slack_) {
        throw ConstraintViolation("queried pixel " + std::to_string(i) + " is " + std::to_string(d) +
                                  " from the clean image, budget " + std::to_string(epsilon_));
      }
    }
    ++checked_;
  }
  // The inner oracle does its own metering.
  return inner_.query(images);
}

}  // namespace difattack
