#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <set>

#include "difattack/autoencoder.hpp"
#include "difattack/classifier.hpp"
#include "difattack/dataset.hpp"
#include "difattack/rng.hpp"
#include "support/grad_cases.hpp"

using namespace difattack;

namespace {
std::string temp_file(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("difattack-" + name)).string();
}

AutoencoderConfig small_ae() {
  AutoencoderConfig c;
  c.image_shape = {3, 16, 16};
  c.encoder_channels = {8, 16};
  c.df_hidden = 16;
  c.fuse_hidden = 16;
  return c;
}
}  // namespace

TEST_CASE("every zoo member maps images to class scores") {
  Rng rng(1);
  const Tensor x = testing::uniform({3, 3, 32, 32}, rng, 0.0f, 1.0f);
  for (const auto& c : build_zoo(7, {3, 32, 32}, 6)) {
    INFO(c.id);
    const Tensor logits = classify(c, x);
    CHECK(logits.shape() == Shape{3, 6});
    CHECK(logits.all_finite());
    const Tensor p = classify(c, x, ScoreMode::Probabilities);
    for (int i = 0; i < 3; ++i) {
      double s = 0;
      for (int j = 0; j < 6; ++j) s += p[static_cast<std::size_t>(i * 6 + j)];
      CHECK(s == doctest::Approx(1.0).epsilon(1e-5));
      CHECK(argmax_row(p, i) == argmax_row(logits, i));
    }
  }
  CHECK_THROWS_AS(make_classifier("resnet", {3, 32, 32}, 6, 0), std::invalid_argument);
}

TEST_CASE("zoo members differ in architecture") {
  const auto zoo = build_zoo(7, {3, 32, 32}, 6);
  REQUIRE(zoo.size() == classifier_ids().size());
  std::set<std::size_t> sizes;
  for (const auto& c : zoo) sizes.insert(c.params.scalar_count());
  CHECK(sizes.size() == zoo.size());
  CHECK(std::find(classifier_ids().begin(), classifier_ids().end(), "conv3") != classifier_ids().end());
}

TEST_CASE("classifier checkpoints round-trip") {
  const ClassifierSpec c = make_classifier("conv2", {3, 16, 16}, 4, 3);
  const std::string path = temp_file("clf.difw");
  save_classifier(path, c);
  const ClassifierSpec back = load_classifier(path);
  CHECK(back.id == c.id);
  CHECK(back.num_classes == 4);
  CHECK(back.params.same_values(c.params));
  Rng rng(2);
  const Tensor x = testing::uniform({2, 3, 16, 16}, rng, 0.0f, 1.0f);
  CHECK(classify(back, x) == classify(c, x));
  std::filesystem::remove(path);
}

TEST_CASE("a short training run learns the synthetic classes") {
  SynthSpec s{4, 3, 300, Universe::A, 16, 16};
  const Dataset train = synth_dataset(s);
  ClassifierSpec c = make_classifier("conv2", {3, 16, 16}, 3, 5);
  const float before = accuracy(c, train);
  const auto curve = train_classifier(c, train, {6, 32, 3e-3f, 1});
  CHECK(curve.size() == 6);
  CHECK(curve.back() < curve.front());
  const float after = accuracy(c, train);
  INFO("before ", before, " after ", after);
  CHECK(after > std::max(before, 0.8f));
}

TEST_CASE("autoencoder shapes") {
  const AutoencoderG g = make_autoencoder(small_ae(), 4);
  CHECK(g.latent_shape() == Shape{16, 4, 4});
  Rng rng(3);
  const Tensor x = testing::uniform({2, 3, 16, 16}, rng, 0.0f, 1.0f);
  Tape tape(false);
  Var z = encode(g, tape, tape.constant(x));
  CHECK(z.shape() == Shape{2, 16, 4, 4});
  Var za = adversarial_feature(g, tape, z);
  Var zv = visual_feature(g, tape, z);
  CHECK(za.shape() == Shape{2, 8, 4, 4});
  CHECK(zv.shape() == Shape{2, 8, 4, 4});
  CHECK(fuse_features(g, tape, za, zv).shape() == Shape{2, 16, 4, 4});
  const Tensor r = reconstruct(g, x);
  CHECK(r.shape() == x.shape());
  for (float v : r.data()) REQUIRE((v > 0.0f && v < 1.0f));
  CHECK_THROWS_AS(decode(g, Tensor(Shape{1, 15, 4, 4})), std::invalid_argument);
}

TEST_CASE("without DF the split and fusion are exact inverses") {
  const AutoencoderG g = make_autoencoder(small_ae(), 4, DfMode::RandomSplit);
  Rng rng(5);
  const Tensor z = testing::uniform({2, 16, 4, 4}, rng);
  CHECK(df_fuse(g, z, z) == z);
  std::vector<int> sorted = g.df.permutation;
  std::sort(sorted.begin(), sorted.end());
  for (int i = 0; i < 16; ++i) CHECK(sorted[static_cast<std::size_t>(i)] == i);
  // No trainable DF parameters in this mode.
  for (const auto& [name, p] : g.params) CHECK(name.rfind("df.", 0) != 0);
}

TEST_CASE("autoencoder checkpoints keep mode, layout and weights") {
  for (DfMode mode : {DfMode::Learned, DfMode::RandomSplit}) {
    const AutoencoderG g = make_autoencoder(small_ae(), 9, mode);
    const std::string path = temp_file("ae.difw");
    save_autoencoder(path, g);
    const AutoencoderG back = load_autoencoder(path);
    CHECK(back.df.mode == mode);
    CHECK(back.config.encoder_channels == g.config.encoder_channels);
    CHECK(back.df.permutation == g.df.permutation);
    Rng rng(6);
    const Tensor x = testing::uniform({1, 3, 16, 16}, rng, 0.0f, 1.0f);
    CHECK(reconstruct(back, x) == reconstruct(g, x));
    std::filesystem::remove(path);
  }
  CHECK_THROWS(load_autoencoder("/nonexistent/ae.difw"));
}
