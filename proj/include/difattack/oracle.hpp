#pragma once

#include <atomic>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>

#include "difattack/classifier.hpp"
#include "difattack/tensor.hpp"

namespace difattack {

/// Refusal of a query that would push the counter past the armed budget.
class BudgetExceeded : public std::runtime_error {
 public:
  BudgetExceeded(long queries, long requested, long budget);
  long queries() const { return queries_; }
  long requested() const { return requested_; }
  long budget() const { return budget_; }

 private:
  long queries_, requested_, budget_;
};

/// The backend could not deliver scores; nothing was counted. Retriable.
class TransportError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Metered score-based access to a victim. q grows by exactly the number of
/// images of each delivered query.
class ScoreOracle {
 public:
  virtual ~ScoreOracle() = default;

  /// Scores [B, num_classes] for images [B, C, H, W].
  Tensor query(const Tensor& images);

  long queries() const { return queries_.load(); }
  void arm_budget(long budget);
  void disarm_budget() { budget_.reset(); }
  std::optional<long> budget() const { return budget_; }

  virtual int num_classes() const = 0;
  virtual ScoreMode mode() const = 0;

 protected:
  virtual Tensor score(const Tensor& images) = 0;
  /// For clients that carry q over from an earlier connection.
  void set_queries(long q) { queries_.store(q); }

 private:
  std::atomic<long> queries_{0};
  std::optional<long> budget_;
};

class InProcessOracle : public ScoreOracle {
 public:
  explicit InProcessOracle(ClassifierSpec victim, ScoreMode mode = ScoreMode::Logits);
  int num_classes() const override { return victim_.num_classes; }
  ScoreMode mode() const override { return mode_; }
  const ClassifierSpec& victim() const { return victim_; }

 protected:
  Tensor score(const Tensor& images) override;

 private:
  ClassifierSpec victim_;
  ScoreMode mode_;
};

class ConstraintViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Forwards to `inner` after asserting that every image lies in [0,1] and
/// within `epsilon` (plus `slack`) of the clean image in l-infinity.
class ConstraintCheckingOracle : public ScoreOracle {
 public:
  ConstraintCheckingOracle(ScoreOracle& inner, Tensor clean, float epsilon, float slack = 1e-6f);
  int num_classes() const override { return inner_.num_classes(); }
  ScoreMode mode() const override { return inner_.mode(); }
  long checked_images() const { return checked_; }
  float worst_linf() const { return worst_linf_; }

 protected:
  Tensor score(const Tensor& images) override;

 private:
  ScoreOracle& inner_;
  Tensor clean_;
  float epsilon_, slack_;
  long checked_ = 0;
  float worst_linf_ = 0.0f;
};

}  // namespace difattack
