#include <doctest.h>

#include <set>

#include "difattack/rng.hpp"
#include "difattack/whitebox.hpp"
#include "support/grad_cases.hpp"

using namespace difattack;

TEST_CASE("signed margin examples") {
  const std::vector<float> s{1.0f, 3.0f, 2.0f};
  CHECK(signed_margin(s, 1, 0) == 1.0f);   // 3 - 2
  CHECK(signed_margin(s, 0, 0) == -2.0f);  // 1 - 3
  CHECK(signed_margin(s, 0, 1) == 2.0f);   // -(1 - 3)
  CHECK(adv_margin_loss(s, {1, 0, 0.5f}) == 1.0f);
  CHECK(adv_margin_loss(s, {0, 0, 0.5f}) == -0.5f);  // clamped at -k
  CHECK(adv_margin_loss(s, {0, 0, 5.0f}) == -2.0f);
  CHECK_THROWS_AS(signed_margin(s, 3, 0), std::out_of_range);
}

TEST_CASE("tape margin loss agrees with the scalar one, clamp has zero gradient") {
  const Tensor scores = Tensor::from({1.0f, 3.0f, 2.0f, 0.0f, 0.5f, 4.0f}).reshaped({2, 3});
  const std::vector<int> labels{1, 0};
  Tape tape;
  Var s = tape.input(scores);
  const MarginLossParams p{0, 0, 1.0f};
  Var l = adv_margin_loss(s, labels, p);
  CHECK(l.value()[0] == adv_margin_loss(std::span<const float>(scores.ptr(), 3), {1, 0, 1.0f}));
  CHECK(l.value()[1] == -1.0f);  // 0 - 4 clamps at -1
  tape.backward(ops::sum(l));
  const Tensor g = tape.grad(s);
  CHECK(g[0] == 0.0f);
  CHECK(g[1] == 1.0f);
  CHECK(g[2] == -1.0f);
  for (int i = 3; i < 6; ++i) CHECK(g[static_cast<std::size_t>(i)] == 0.0f);
}

TEST_CASE("white-box attacks stay in the ball and lower the margin") {
  const ClassifierSpec c = make_classifier("conv2", {3, 16, 16}, 4, 11);
  Rng rng(1);
  const Tensor x = testing::uniform({8, 3, 16, 16}, rng, 0.0f, 1.0f);
  const std::vector<int> labels = predict(c, x);
  const MarginLossParams p{0, 0, 100.0f};
  WhiteBoxConfig cfg;
  auto total_margin = [&](const Tensor& imgs) {
    const Tensor s = classify(c, imgs);
    double t = 0;
    for (int i = 0; i < 8; ++i)
      t += signed_margin(std::span<const float>(s.ptr() + i * 4, 4), labels[static_cast<std::size_t>(i)], 0);
    return t;
  };
  const Tensor a = pgd_attack(c, x, labels, p, cfg);
  const Tensor b = mifgsm_attack(c, x, labels, p, cfg);
  for (const Tensor* adv : {&a, &b}) {
    CHECK(linf_distance(*adv, x) <= cfg.epsilon + 1e-6f);
    for (float v : adv->data()) REQUIRE((v >= 0.0f && v <= 1.0f));
    CHECK(total_margin(*adv) < total_margin(x));
  }
  CHECK(pgd_attack(c, x, labels, p, cfg) == a);  // deterministic: zero start
}

TEST_CASE("pair planning is seeded and never hands out Mixed") {
  std::set<int> surrogates;
  int pgd = 0, mi = 0;
  for (std::uint64_t b = 0; b < 200; ++b) {
    const PairPlan plan = plan_pair_batch(3, b, 3, WhiteBoxMethod::Mixed);
    CHECK(plan.method != WhiteBoxMethod::Mixed);
    (plan.method == WhiteBoxMethod::Pgd ? pgd : mi)++;
    surrogates.insert(plan.surrogate);
    const PairPlan again = plan_pair_batch(3, b, 3, WhiteBoxMethod::Mixed);
    CHECK(again.surrogate == plan.surrogate);
    CHECK(again.method == plan.method);
  }
  CHECK(surrogates.size() == 3);
  CHECK(pgd > 60);
  CHECK(mi > 60);
  CHECK(plan_pair_batch(3, 0, 3, WhiteBoxMethod::Mifgsm).method == WhiteBoxMethod::Mifgsm);
}

TEST_CASE("training pairs are untargeted and within budget") {
  SynthSpec s{2, 4, 12, Universe::A, 16, 16};
  const Dataset data = synth_dataset(s);
  const std::vector<ClassifierSpec> zoo{make_classifier("conv2", {3, 16, 16}, 4, 1),
                                        make_classifier("conv3", {3, 16, 16}, 4, 2)};
  WhiteBoxConfig cfg;
  const auto batches = generate_training_pairs(data, zoo, cfg, 5, 5);
  REQUIRE(batches.size() == 3);
  CHECK(batches.back().clean.dim(0) == 2);
  for (const auto& b : batches) {
    CHECK(linf_distance(b.adversarial, b.clean) <= cfg.epsilon + 1e-6f);
    CHECK(b.labels.size() == static_cast<std::size_t>(b.clean.dim(0)));
  }
}

TEST_CASE("white-box config validation") {
  WhiteBoxConfig c;
  CHECK_NOTHROW(c.validate());
  c.steps = 0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = WhiteBoxConfig{};
  c.epsilon = -1.0f;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  CHECK(whitebox_method_from_string("mixed") == WhiteBoxMethod::Mixed);
  CHECK_THROWS_AS(whitebox_method_from_string("cw"), std::invalid_argument);
}
