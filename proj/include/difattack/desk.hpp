#pragma once

// The small end-to-end setup shared by the CLI and the acceptance run:
// two class universes, a classifier zoo per universe, one held-out victim.

#include <cstdint>
#include <string>
#include <vector>

#include "difattack/experiments.hpp"

namespace difattack {

struct DeskConfig {
  std::uint64_t seed = 0;
  int num_classes = 6;
  int train_images = 2000;
  int eval_images = 500;
  std::string victim = "conv3";  // held out of the surrogate zoo
  ClassifierTrainConfig classifier{5, 32, 1e-3f, 0};
  int ae_epochs = 8;
  std::string cache_dir;  // trained models are stored and reused here
  std::string cifar_train;  // optional CIFAR binary files replacing universe A
  std::string cifar_eval;
};

Dataset desk_dataset(const DeskConfig& d, Universe u, bool train);
/// All classifier ids trained on `train`, cached per universe.
std::vector<ClassifierSpec> desk_zoo(const DeskConfig& d, Universe u, const Dataset& train);
const ClassifierSpec& find_classifier(const std::vector<ClassifierSpec>& zoo, const std::string& id);
/// Every zoo member except `victim`.
std::vector<ClassifierSpec> surrogates(const std::vector<ClassifierSpec>& zoo, const std::string& victim);

/// Train/eval sets, surrogates and victim for universe A, ready for the ablations.
/// The datasets must outlive the returned setup.
AblationSetup desk_setup(const DeskConfig& d, const Dataset& train, const Dataset& eval,
                         const std::vector<ClassifierSpec>& zoo, const EvalConfig& eval_cfg);

/// The main autoencoder (learned DF, PGD pairs), trained or loaded from the cache.
AutoencoderG desk_autoencoder(const AblationSetup& s);

}  // namespace difattack
