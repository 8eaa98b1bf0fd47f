#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "difattack/autodiff.hpp"
#include "difattack/network.hpp"

namespace difattack {

struct AutoencoderConfig {
  Shape image_shape{3, 32, 32};
  std::vector<int> encoder_channels{32, 64};  // one stride-2 block each
  int df_hidden = 64;                              // hidden width of A and V
  int fuse_hidden = 64;                            // hidden width of M
  // Adversarial/visual split; 0 means half the latent channels each.
  int adversarial_channels = 0;
  int visual_channels = 0;

  int latent_channels() const { return encoder_channels.back(); }
  int adv_channels() const { return adversarial_channels > 0 ? adversarial_channels : latent_channels() / 2; }
  int vis_channels() const { return visual_channels > 0 ? visual_channels : latent_channels() - adv_channels(); }
};

enum class DfMode {
  Learned,      // A, V, M are stacked 1x1 convolutions
  RandomSplit,  // control without DF: fixed random channel halves, identity fusion
};

/// Decouple-fusion block. A and V read a latent, M fuses their concatenation
/// (adversarial channels first) back to the latent width.
struct DFModule {
  DfMode mode = DfMode::Learned;
  Architecture adversarial;
  Architecture visual;
  Architecture fusion;
  // RandomSplit: permutation[0, C_a) feed A, the rest feed V.
  std::vector<int> permutation;
};

struct AutoencoderG {
  AutoencoderConfig config;
  Architecture encoder;
  Architecture decoder;
  DFModule df;
  ParameterSet params;  // prefixes "enc.", "dec.", "df.adv.", "df.vis.", "df.fuse."

  Shape latent_shape() const;  // per sample
};

AutoencoderG make_autoencoder(const AutoencoderConfig& config, std::uint64_t seed, DfMode mode = DfMode::Learned);

// Tape-level building blocks. `trainable` marks G's parameters for gradients.
Var encode(const AutoencoderG& g, Tape& tape, Var x, bool trainable = false);
Var adversarial_feature(const AutoencoderG& g, Tape& tape, Var z, bool trainable = false);
Var visual_feature(const AutoencoderG& g, Tape& tape, Var z, bool trainable = false);
/// M(z_a || z_v).
Var fuse_features(const AutoencoderG& g, Tape& tape, Var z_adv, Var z_vis, bool trainable = false);
/// M(A(z_adv_source) || V(z_vis_source)).
Var df_fuse(const AutoencoderG& g, Tape& tape, Var z_adv_source, Var z_vis_source, bool trainable = false);
Var decode(const AutoencoderG& g, Tape& tape, Var z, bool trainable = false);

// Gradient-free batch helpers.
Tensor encode(const AutoencoderG& g, const Tensor& x);
Tensor df_fuse(const AutoencoderG& g, const Tensor& z_adv_source, const Tensor& z_vis_source);
Tensor decode(const AutoencoderG& g, const Tensor& z);
/// D(DF(E(x), E(x))).
Tensor reconstruct(const AutoencoderG& g, const Tensor& x);

void save_autoencoder(const std::string& path, const AutoencoderG& g);
AutoencoderG load_autoencoder(const std::string& path);

}  // namespace difattack
