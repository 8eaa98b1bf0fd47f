#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "difattack/autoencoder.hpp"
#include "difattack/oracle.hpp"
#include "difattack/tensor.hpp"

namespace difattack {

enum class NormKind { Linf, L2 };

struct AttackConfig {
  long Q = 10000;
  float epsilon = 8.0f / 255.0f;
  float eta = 0.01f;
  float sigma = 0.1f;
  int tau = 8;
  float k = 0.0f;
  int v = 0;        // 0 untargeted, 1 targeted
  int target = -1;  // required iff v = 1
  std::uint64_t seed = 0;
  NormKind norm = NormKind::Linf;
  bool normalize_losses = true;  // false: raw losses in the update

  /// tau 8, k 0.
  static AttackConfig untargeted();
  /// tau 12, k 5, aiming at `target`.
  static AttackConfig targeted(int target);
  void validate() const;
};

/// Clamp into the epsilon ball around `x` (radial scaling for L2), then into [0,1].
/// `x` may hold one image that is broadcast over the rows of `candidate`.
Tensor project(const Tensor& candidate, const Tensor& x, float epsilon, NormKind norm = NormKind::Linf);

/// mu <- mu - eta / (tau sigma) * sum_i lhat_i gamma_i, where lhat are the
/// losses standardised by their mean and population std (or raw losses when
/// `normalize` is false). A zero-std batch leaves mu unchanged.
/// `gammas` holds tau rows of mu.size() values.
void nes_update(std::span<double> mu, std::span<const double> losses, std::span<const double> gammas, double eta,
                double sigma, bool normalize = true);

/// Maps a batch of perturbations delta [tau, C, H, W] to candidate images.
class CandidateTransform {
 public:
  virtual ~CandidateTransform() = default;
  virtual Tensor operator()(const Tensor& delta) const = 0;
};

/// Pi_eps,x(clamp01(x + delta)): the pixel-space baseline.
class IdentityTransform : public CandidateTransform {
 public:
  IdentityTransform(Tensor x, float epsilon, NormKind norm = NormKind::Linf);
  Tensor operator()(const Tensor& delta) const override;

 private:
  Tensor x_;
  float epsilon_;
  NormKind norm_;
};

/// Pi_eps,x(D(M(A(E(clamp01(x + delta))) || V(E(x))))). V(E(x)) is computed once.
class AutoencoderTransform : public CandidateTransform {
 public:
  AutoencoderTransform(const AutoencoderG& g, Tensor x, float epsilon, NormKind norm = NormKind::Linf);
  Tensor operator()(const Tensor& delta) const override;

 private:
  const AutoencoderG& g_;
  Tensor x_;
  Tensor visual_;
  float epsilon_;
  NormKind norm_;
};

/// Single-call form of AutoencoderTransform.
Tensor transform_T(const AutoencoderG& g, const Tensor& x, const Tensor& delta, float epsilon,
                   NormKind norm = NormKind::Linf);

struct TracePoint {
  long q = 0;
  double best_loss = 0.0;
};

struct AttackResult {
  bool success = false;
  Tensor adversarial;  // x' (the clean image when unsuccessful)
  long queries = 0;
  std::vector<TracePoint> trace;
};

/// Raised when the oracle fails mid-attack; carries what was done so far.
class AttackAborted : public std::runtime_error {
 public:
  AttackAborted(const std::string& what, AttackResult partial)
      : std::runtime_error(what), partial_(std::move(partial)) {}
  const AttackResult& partial() const { return partial_; }

 private:
  AttackResult partial_;
};

/// The shared query loop. `label` is the ground truth (v = 0) and is ignored
/// when targeted, where cfg.target is used. Queries are counted relative to the
/// oracle's count on entry.
AttackResult run_nes_loop(const Tensor& x, int label, const AttackConfig& cfg, ScoreOracle& victim,
                          const CandidateTransform& transform);

AttackResult run_difattack(const Tensor& x, int label, const AttackConfig& cfg, ScoreOracle& victim,
                           const AutoencoderG& g);
AttackResult run_pixel_nes_baseline(const Tensor& x, int label, const AttackConfig& cfg, ScoreOracle& victim);

/// {image_id, success, queries, linf, iterations: [{q, best_loss}]}
std::string trace_json(const AttackResult& r, const Tensor& clean, long image_id);

}  // namespace difattack
