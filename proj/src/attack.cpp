#include "difattack/attack.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <json.hpp>

#include "difattack/rng.hpp"
#include "difattack/whitebox.hpp"

namespace difattack {

AttackConfig AttackConfig::untargeted() { return AttackConfig{}; }

AttackConfig AttackConfig::targeted(int target) {
  AttackConfig c;
  c.v = 1;
  c.target = target;
  c.tau = 12;
  c.k = 5.0f;
  return c;
}

void AttackConfig::validate() const {
  if (Q < 0) throw std::invalid_argument("query budget Q must be non-negative");
  if (tau < 1) throw std::invalid_argument("tau must be at least 1");
  if (!(sigma > 0.0f)) throw std::invalid_argument("sigma must be positive");
  if (!(eta > 0.0f)) throw std::invalid_argument("eta must be positive");
  if (!(epsilon > 0.0f)) throw std::invalid_argument("epsilon must be positive");
  if (!(k >= 0.0f)) throw std::invalid_argument("k must be non-negative");
  if (v != 0 && v != 1) throw std::invalid_argument("v must be 0 (untargeted) or 1 (targeted)");
  if (v == 1 && target < 0) throw std::invalid_argument("targeted attack needs a target class");
}

Tensor project(const Tensor& candidate, const Tensor& x, float epsilon, NormKind norm) {
  const std::size_t per = x.numel();
  if (per == 0 || candidate.numel() % per != 0) {
    throw std::invalid_argument("project: candidate " + shape_string(candidate.shape()) + " does not match image " +
                                shape_string(x.shape()));
  }
  Tensor out = candidate;
  const std::size_t rows = candidate.numel() / per;
  for (std::size_t r = 0; r < rows; ++r) {
    float* c = out.ptr() + r * per;
    if (norm == NormKind::Linf) {
      for (std::size_t i = 0; i < per; ++i) c[i] = std::clamp(c[i], x[i] - epsilon, x[i] + epsilon);
    } else {
      double n = 0.0;
      for (std::size_t i = 0; i < per; ++i) n += static_cast<double>(c[i] - x[i]) * (c[i] - x[i]);
      n = std::sqrt(n);
      if (n > epsilon) {
        const float s = static_cast<float>(epsilon / n);
        for (std::size_t i = 0; i < per; ++i) c[i] = x[i] + (c[i] - x[i]) * s;
      }
    }
    for (std::size_t i = 0; i < per; ++i) c[i] = std::clamp(c[i], 0.0f, 1.0f);
  }
  return out;
}

void nes_update(std::span<double> mu, std::span<const double> losses, std::span<const double> gammas, double eta,
                double sigma, bool normalize) {
  const std::size_t tau = losses.size();
  if (tau == 0) throw std::invalid_argument("nes_update needs at least one loss");
  if (gammas.size() != tau * mu.size()) throw std::invalid_argument("nes_update: noise count does not match tau");
  std::vector<double> w(losses.begin(), losses.end());
  if (normalize) {
    double mean = 0.0;
    for (double l : w) mean += l;
    mean /= static_cast<double>(tau);
    double var = 0.0;
    for (double l : w) var += (l - mean) * (l - mean);
    const double sd = std::sqrt(var / static_cast<double>(tau));
    // A flat batch carries no direction.
    if (sd == 0.0) return;
    for (double& l : w) l = (l - mean) / sd;
  }
  const double step = eta / (static_cast<double>(tau) * sigma);
  for (std::size_t j = 0; j < mu.size(); ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < tau; ++i) s += w[i] * gammas[i * mu.size() + j];
    mu[j] -= step * s;
  }
}

namespace {

Tensor clamp01_sum(const Tensor& x, const Tensor& delta) {
  const std::size_t per = x.numel();
  Tensor out = delta;
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = std::clamp(x[i % per] + delta[i], 0.0f, 1.0f);
  return out;
}

Tensor repeat_rows(const Tensor& t, int times) {
  Shape s = t.shape();
  s[0] *= times;
  Tensor out(s);
  for (int i = 0; i < times; ++i) std::copy(t.data().begin(), t.data().end(), out.ptr() + i * t.numel());
  return out;
}

}  // namespace

IdentityTransform::IdentityTransform(Tensor x, float epsilon, NormKind norm)
    : x_(std::move(x)), epsilon_(epsilon), norm_(norm) {}

Tensor IdentityTransform::operator()(const Tensor& delta) const {
  return project(clamp01_sum(x_, delta), x_, epsilon_, norm_);
}

AutoencoderTransform::AutoencoderTransform(const AutoencoderG& g, Tensor x, float epsilon, NormKind norm)
    : g_(g), x_(std::move(x)), epsilon_(epsilon), norm_(norm) {
  Tape tape(false);
  visual_ = visual_feature(g_, tape, encode(g_, tape, tape.constant_ref(x_))).value();
}

Tensor AutoencoderTransform::operator()(const Tensor& delta) const {
  const Tensor shifted = clamp01_sum(x_, delta);
  const Tensor visual = repeat_rows(visual_, delta.dim(0));
  Tape tape(false);
  Var za = adversarial_feature(g_, tape, encode(g_, tape, tape.constant_ref(shifted)));
  Var decoded = decode(g_, tape, fuse_features(g_, tape, za, tape.constant_ref(visual)));
  return project(decoded.value(), x_, epsilon_, norm_);
}

Tensor transform_T(const AutoencoderG& g, const Tensor& x, const Tensor& delta, float epsilon, NormKind norm) {
  return AutoencoderTransform(g, x, epsilon, norm)(delta);
}

AttackResult run_nes_loop(const Tensor& x, int label, const AttackConfig& cfg, ScoreOracle& victim,
                          const CandidateTransform& transform) {
  cfg.validate();
  if (x.rank() != 4 || x.dim(0) != 1) throw std::invalid_argument("attack expects one image [1, C, H, W]");
  const int goal = cfg.v == 1 ? cfg.target : label;
  if (goal < 0 || goal >= victim.num_classes()) throw std::out_of_range("attack label out of range");

  AttackResult result;
  result.adversarial = x;
  const long q0 = victim.queries();
  const std::size_t dim = x.numel();
  Rng rng(cfg.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> mu(dim);
  for (double& m : mu) m = normal(rng);

  const std::size_t tau = static_cast<std::size_t>(cfg.tau);
  std::vector<double> gammas(tau * dim), losses(tau);
  Shape batch_shape = x.shape();
  batch_shape[0] = cfg.tau;
  Tensor delta(batch_shape);

  while (result.queries + cfg.tau <= cfg.Q) {
    for (double& g : gammas) g = normal(rng);
    for (std::size_t i = 0; i < tau; ++i)
      for (std::size_t j = 0; j < dim; ++j)
        delta[i * dim + j] = static_cast<float>(mu[j] + cfg.sigma * gammas[i * dim + j]);
    const Tensor candidates = transform(delta);

    Tensor scores;
    try {
      scores = victim.query(candidates);
    } catch (const TransportError& e) {
      result.queries = victim.queries() - q0;
      throw AttackAborted(std::string("victim query failed: ") + e.what(), std::move(result));
    }
    result.queries = victim.queries() - q0;

    const int classes = scores.dim(1);
    int winner = -1;
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < tau; ++i) {
      std::span<const float> row(scores.ptr() + i * classes, static_cast<std::size_t>(classes));
      const double m = signed_margin(row, goal, cfg.v);
      losses[i] = std::max(m, -static_cast<double>(cfg.k));
      best = std::min(best, losses[i]);
      // With k = 0 a tie on the top score is not a success.
      const bool hit = m <= -static_cast<double>(cfg.k) + 1e-9 && (cfg.k > 0.0f || m < 0.0);
      if (hit && winner < 0) winner = static_cast<int>(i);
    }
    result.trace.push_back({result.queries, best});
    if (winner >= 0) {
      result.success = true;
      result.adversarial = candidates.row(winner);
      return result;
    }
    nes_update(mu, losses, gammas, cfg.eta, cfg.sigma, cfg.normalize_losses);
  }
  return result;
}

AttackResult run_difattack(const Tensor& x, int label, const AttackConfig& cfg, ScoreOracle& victim,
                           const AutoencoderG& g) {
  return run_nes_loop(x, label, cfg, victim, AutoencoderTransform(g, x, cfg.epsilon, cfg.norm));
}

AttackResult run_pixel_nes_baseline(const Tensor& x, int label, const AttackConfig& cfg, ScoreOracle& victim) {
  return run_nes_loop(x, label, cfg, victim, IdentityTransform(x, cfg.epsilon, cfg.norm));
}

std::string trace_json(const AttackResult& r, const Tensor& clean, long image_id) {
  nlohmann::json j;
  j["image_id"] = image_id;
  j["success"] = r.success;
  j["queries"] = r.queries;
  j["linf"] = r.adversarial.same_shape(clean) ? linf_distance(r.adversarial, clean) : 0.0f;
  auto& it = j["iterations"] = nlohmann::json::array();
  for (const auto& p : r.trace) it.push_back({{"q", p.q}, {"best_loss", p.best_loss}});
  return j.dump();
}

}  // namespace difattack
