#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "difattack/autodiff.hpp"
#include "difattack/dataset.hpp"
#include "difattack/network.hpp"

namespace difattack {

enum class ScoreMode { Logits, Probabilities };

/// A tiny CNN from the zoo: surrogate or victim.
struct ClassifierSpec {
  std::string id;
  int num_classes = 0;
  Architecture arch;
  ParameterSet params;
};

/// Architecture ids, pairwise structurally distinct:
/// "conv2", "conv3", "conv4" (conv depth) and "fc-heavy".
const std::vector<std::string>& classifier_ids();

Architecture classifier_architecture(const std::string& id, const Shape& image_shape, int num_classes);
ClassifierSpec make_classifier(const std::string& id, const Shape& image_shape, int num_classes, std::uint64_t seed);

/// One freshly initialised classifier per id, seeded per member.
std::vector<ClassifierSpec> build_zoo(std::uint64_t seed, const Shape& image_shape, int num_classes,
                                      const std::vector<std::string>& ids = classifier_ids());

/// Logits on the tape; parameters are frozen unless `trainable`.
Var classify(const ClassifierSpec& c, Tape& tape, Var x, bool trainable = false);
/// Scores [B, num_classes] for images in [0,1].
Tensor classify(const ClassifierSpec& c, const Tensor& x, ScoreMode mode = ScoreMode::Logits);

int argmax_row(const Tensor& scores, int row);
std::vector<int> predict(const ClassifierSpec& c, const Tensor& x);
float accuracy(const ClassifierSpec& c, const Dataset& ds, int batch_size = 128);

struct ClassifierTrainConfig {
  int epochs = 6;
  int batch_size = 32;
  float lr = 1e-3f;
  std::uint64_t seed = 0;
};

/// Adam on softmax cross-entropy. Returns the mean loss of each epoch.
std::vector<float> train_classifier(ClassifierSpec& c, const Dataset& train, const ClassifierTrainConfig& cfg);

void save_classifier(const std::string& path, const ClassifierSpec& c);
ClassifierSpec load_classifier(const std::string& path);

}  // namespace difattack
