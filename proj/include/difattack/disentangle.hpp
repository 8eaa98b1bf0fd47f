#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "difattack/autoencoder.hpp"
#include "difattack/classifier.hpp"
#include "difattack/dataset.hpp"
#include "difattack/whitebox.hpp"

namespace difattack {

struct TrainConfig {
  float lambda = 1.0f;   // weight of the reconstruction term
  float k_train = 5.0f;  // margin inside the disentanglement loss
  int epochs = 4;
  int batch_size = 32;
  float lr = 1e-3f;
  std::uint64_t seed = 0;
  WhiteBoxConfig whitebox;
  std::string curve_csv;   // optional: "epoch,L_rec,L_dis,L_all" rows
  std::string checkpoint;  // optional: written after the last epoch

  void validate() const;
};

/// Loss terms of one batch, all from a single forward pass. Each is the batch
/// mean of the per-sample loss.
struct AutoencoderLosses {
  Var reconstruction;
  Var disentanglement;
  Var total;
};

/// x_f = D(DF(E(x), E(x*))) must look like x* yet fool nothing; x_f* =
/// D(DF(E(x*), E(x))) must look like x yet fool the zoo.
AutoencoderLosses autoencoder_losses(const AutoencoderG& g, const std::vector<ClassifierSpec>& zoo, Tape& tape,
                                     Var x, Var x_adv, std::span<const int> labels, float k, float lambda,
                                     bool trainable = false);

float disentanglement_loss(const AutoencoderG& g, const std::vector<ClassifierSpec>& zoo, const Tensor& x,
                           const Tensor& x_adv, std::span<const int> labels, float k);
float reconstruction_loss(const AutoencoderG& g, const Tensor& x, const Tensor& x_adv);
float total_loss(const AutoencoderG& g, const std::vector<ClassifierSpec>& zoo, const Tensor& x, const Tensor& x_adv,
                 std::span<const int> labels, float k, float lambda);

struct CurvePoint {
  int epoch = 0;
  double reconstruction = 0.0;
  double disentanglement = 0.0;
  double total = 0.0;
};

class TrainingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Adam on G's parameters only; the zoo stays frozen. Trains `g` in place.
std::vector<CurvePoint> train_autoencoder(AutoencoderG& g, const Dataset& data, const std::vector<ClassifierSpec>& zoo,
                                          const TrainConfig& cfg);

enum class FeatureKind { Adversarial, Visual };

struct SensitivityConfig {
  std::vector<float> xi{0.0f, 0.5f, 1.0f, 2.0f};
  int samples = 1;  // noise draws per image and xi
  FeatureKind feature = FeatureKind::Adversarial;
  std::uint64_t seed = 0;
  int batch_size = 100;
};

struct SensitivityRow {
  float xi = 0.0f;
  float asr = 0.0f;  // misclassification rate of the decoded images, in [0, 1]
};

/// Gaussian noise of std xi on one disentangled feature, the other kept clean,
/// then M, D and the victim.
std::vector<SensitivityRow> sensitivity_probe(const AutoencoderG& g, const ClassifierSpec& victim, const Dataset& data,
                                              const SensitivityConfig& cfg);

/// Population std of the concatenated [A(z) || V(z)] over `data`.
float feature_std(const AutoencoderG& g, const Dataset& data, int batch_size = 100);

}  // namespace difattack
