#include <doctest.h>

#include <cmath>
#include <json.hpp>

#include "difattack/attack.hpp"
#include "difattack/rng.hpp"
#include "support/fake_oracles.hpp"
#include "support/grad_cases.hpp"

using namespace difattack;
using difattack::testing::constant_oracle;

namespace {
Tensor grey_image(float v = 0.5f) { return Tensor(Shape{1, 3, 4, 4}, v); }
}  // namespace

TEST_CASE("nes_update hand trace with tau = 2") {
  // Losses (3, 1) standardise to (1, -1): the step is eta/(tau sigma) * (g1 - g2) = 0.05 * (1, -1).
  std::vector<double> mu{0.2, -0.4};
  const std::vector<double> losses{3.0, 1.0};
  const std::vector<double> gammas{1.0, 0.0, 0.0, 1.0};
  nes_update(mu, losses, gammas, 0.01, 0.1);
  CHECK(std::fabs(mu[0] - (0.2 - 0.05)) < 1e-9);
  CHECK(std::fabs(mu[1] - (-0.4 + 0.05)) < 1e-9);

  SUBCASE("raw losses use the values as they are") {
    std::vector<double> m{0.0, 0.0};
    const std::vector<double> g{0.5, 0.0, -0.5, -1.0};  // 3*g1 + g2 = (1, -1)
    nes_update(m, losses, g, 0.01, 0.1, false);
    CHECK(std::fabs(m[0] + 0.05) < 1e-12);
    CHECK(std::fabs(m[1] - 0.05) < 1e-12);
  }
}

TEST_CASE("nes_update leaves mu alone when every loss is equal") {
  std::vector<double> mu{1.0, 2.0, 3.0};
  const std::vector<double> losses{-5.0, -5.0};
  const std::vector<double> gammas{1, 2, 3, 4, 5, 6};
  nes_update(mu, losses, gammas, 0.01, 0.1);
  CHECK(mu == std::vector<double>{1.0, 2.0, 3.0});
  CHECK_THROWS_AS(nes_update(mu, losses, std::vector<double>{1, 2}, 0.01, 0.1), std::invalid_argument);
}

TEST_CASE("project examples") {
  const Tensor x = Tensor::from({0.5f, 0.98f, 0.02f, 0.3f}).reshaped({1, 4});
  const Tensor cand = Tensor::from({0.6f, 1.2f, -0.3f, 0.31f}).reshaped({1, 4});
  const Tensor p = project(cand, x, 0.05f);
  CHECK(p[0] == doctest::Approx(0.55f));
  CHECK(p[1] == 1.0f);  // inside the ball but above 1
  CHECK(p[2] == 0.0f);  // ball says -0.03, range says 0
  CHECK(p[3] == doctest::Approx(0.31f));

  SUBCASE("broadcast over rows") {
    const Tensor two = concat_rows(std::vector<Tensor>{cand, cand});
    const Tensor q = project(two, x, 0.05f);
    CHECK(q.row(0) == p);
    CHECK(q.row(1) == p);
  }
  SUBCASE("l2 scales radially") {
    const Tensor xz = Tensor(Shape{1, 2}, 0.5f);
    const Tensor c = Tensor::from({0.8f, 0.9f}).reshaped({1, 2});  // offset (0.3, 0.4), norm 0.5
    const Tensor q = project(c, xz, 0.1f, NormKind::L2);
    CHECK(q[0] == doctest::Approx(0.56f));
    CHECK(q[1] == doctest::Approx(0.58f));
  }
}

TEST_CASE("loop bound: Q = 100 and tau = 8 spend exactly 96 queries") {
  auto victim = constant_oracle(4, 1, 3.0f);  // label 1 always wins: never a success
  AttackConfig cfg;
  cfg.Q = 100;
  cfg.tau = 8;
  cfg.seed = 3;
  const AttackResult r = run_pixel_nes_baseline(grey_image(), 1, cfg, victim);
  CHECK_FALSE(r.success);
  CHECK(r.queries == 96);
  CHECK(victim.queries() == 96);
  REQUIRE(r.trace.size() == 12);
  for (std::size_t i = 0; i < r.trace.size(); ++i) CHECK(r.trace[i].q == 8 * static_cast<long>(i + 1));
  CHECK(r.adversarial == grey_image());
}

TEST_CASE("budget smaller than tau means no query at all") {
  auto victim = constant_oracle(4, 1);
  AttackConfig cfg;
  cfg.Q = 7;
  const AttackResult r = run_pixel_nes_baseline(grey_image(), 1, cfg, victim);
  CHECK(r.queries == 0);
  CHECK(r.trace.empty());
  cfg.Q = 0;
  CHECK(run_pixel_nes_baseline(grey_image(), 1, cfg, victim).queries == 0);
}

TEST_CASE("an oracle that always misclassifies succeeds in the first iteration") {
  auto victim = constant_oracle(4, 2);
  AttackConfig cfg;
  cfg.tau = 8;
  const AttackResult r = run_pixel_nes_baseline(grey_image(), 1, cfg, victim);
  CHECK(r.success);
  CHECK(r.queries == 8);
  CHECK(linf_distance(r.adversarial, grey_image()) <= cfg.epsilon + 1e-6f);
}

TEST_CASE("targeted success needs the target ahead by k") {
  AttackConfig cfg = AttackConfig::targeted(3);
  CHECK(cfg.tau == 12);
  CHECK(cfg.k == 5.0f);
  cfg.Q = 120;
  auto close = constant_oracle(4, 3, 4.0f);  // target leads by 4 < k
  CHECK_FALSE(run_pixel_nes_baseline(grey_image(), 0, cfg, close).success);
  auto far = constant_oracle(4, 3, 5.0f);
  const AttackResult r = run_pixel_nes_baseline(grey_image(), 0, cfg, far);
  CHECK(r.success);
  CHECK(r.queries == 12);
}

TEST_CASE("a tie on the top score is not an untargeted success") {
  testing::ScriptedOracle tie(3, [](const Tensor&) { return std::vector<float>{1.0f, 1.0f, 0.0f}; });
  AttackConfig cfg;
  cfg.Q = 16;
  CHECK_FALSE(run_pixel_nes_baseline(grey_image(), 0, cfg, tie).success);
}

TEST_CASE("the same seed replays the same trace bit for bit") {
  // Margin depends on the pixels, so the trace carries the search path.
  auto fn = [](const Tensor& img) {
    double s = 0;
    for (float v : img.data()) s += v;
    return std::vector<float>{static_cast<float>(s), 30.0f, 0.0f};
  };
  AttackConfig cfg;
  cfg.Q = 400;
  cfg.seed = 77;
  testing::ScriptedOracle a(3, fn), b(3, fn);
  const AttackResult r1 = run_pixel_nes_baseline(grey_image(0.7f), 0, cfg, a);
  const AttackResult r2 = run_pixel_nes_baseline(grey_image(0.7f), 0, cfg, b);
  REQUIRE(r1.trace.size() == r2.trace.size());
  for (std::size_t i = 0; i < r1.trace.size(); ++i) {
    CHECK(r1.trace[i].q == r2.trace[i].q);
    CHECK(r1.trace[i].best_loss == r2.trace[i].best_loss);
  }
  CHECK(r1.adversarial == r2.adversarial);
  CHECK(r1.queries % cfg.tau == 0);
}

TEST_CASE("the search lowers the loss on a smooth victim") {
  // Class 0 score is the mean brightness; class 1 sits just above it.
  auto fn = [](const Tensor& img) {
    double s = 0;
    for (float v : img.data()) s += v;
    return std::vector<float>{static_cast<float>(s / img.numel()), 0.505f};
  };
  testing::ScriptedOracle victim(2, fn);
  AttackConfig cfg;
  cfg.Q = 2000;
  cfg.seed = 1;
  cfg.epsilon = 0.05f;
  const AttackResult r = run_pixel_nes_baseline(grey_image(0.52f), 0, cfg, victim);
  CHECK(r.success);
  CHECK(r.trace.back().best_loss < r.trace.front().best_loss + 1e-12);
}

TEST_CASE("config validation") {
  AttackConfig cfg;
  cfg.tau = 1;
  CHECK_NOTHROW(cfg.validate());
  cfg.tau = 0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = AttackConfig{};
  cfg.v = 1;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);  // targeted without a target
  cfg = AttackConfig{};
  cfg.sigma = 0.0f;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}

TEST_CASE("a transport failure aborts with the partial result") {
  int calls = 0;
  testing::ScriptedOracle flaky(3, [&](const Tensor&) -> std::vector<float> {
    if (++calls > 16) throw TransportError("link down");
    return {5.0f, 0.0f, 0.0f};
  });
  AttackConfig cfg;
  cfg.Q = 100;
  try {
    run_pixel_nes_baseline(grey_image(), 0, cfg, flaky);
    FAIL("expected AttackAborted");
  } catch (const AttackAborted& e) {
    CHECK(e.partial().queries == 16);
    CHECK(e.partial().trace.size() == 2);
  }
}

TEST_CASE("trace_json carries the iterations") {
  AttackResult r;
  r.success = true;
  r.queries = 16;
  r.trace = {{8, 0.5}, {16, -0.1}};
  r.adversarial = grey_image(0.52f);
  const auto j = nlohmann::json::parse(trace_json(r, grey_image(0.5f), 4));
  CHECK(j["image_id"] == 4);
  CHECK(j["queries"] == 16);
  CHECK(j["iterations"].size() == 2);
  CHECK(j["iterations"][1]["q"] == 16);
  CHECK(j["linf"].get<double>() == doctest::Approx(0.02).epsilon(1e-4));
}
