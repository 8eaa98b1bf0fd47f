#include "difattack/autoencoder.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

#include "difattack/checkpoint.hpp"
#include "difattack/rng.hpp"

namespace difattack {

namespace {

Architecture build_encoder(const AutoencoderConfig& cfg) {
  Architecture a{"encoder", cfg.image_shape, {}};
  int in = cfg.image_shape[0];
  for (std::size_t i = 0; i < cfg.encoder_channels.size(); ++i) {
    const std::string n = std::to_string(i + 1);
    a.layers.push_back(LayerSpec::conv("c" + n, in, cfg.encoder_channels[i], 3, 2, 1));
    if (i + 1 < cfg.encoder_channels.size()) a.layers.push_back(LayerSpec::relu("r" + n));
    in = cfg.encoder_channels[i];
  }
  return a;
}

Architecture build_decoder(const AutoencoderConfig& cfg, const Shape& latent) {
  Architecture a{"decoder", latent, {}};
  const std::size_t blocks = cfg.encoder_channels.size();
  int in = cfg.latent_channels();
  for (std::size_t i = 0; i < blocks; ++i) {
    const std::string n = std::to_string(i + 1);
    const bool last = i + 1 == blocks;
    const int out = last ? cfg.image_shape[0] : cfg.encoder_channels[blocks - 2 - i];
    a.layers.push_back(LayerSpec::upsample("up" + n, 2));
    a.layers.push_back(LayerSpec::conv("c" + n, in, out, 3, 1, 1));
    a.layers.push_back(last ? LayerSpec::sigmoid("out") : LayerSpec::relu("r" + n));
    in = out;
  }
  return a;
}

// Two stacked 1x1 convolutions with a ReLU between; linear output.
Architecture pointwise_stack(const std::string& id, const Shape& in_shape, int hidden, int out) {
  return Architecture{id,
                      in_shape,
                      {LayerSpec::conv("c1", in_shape[0], hidden, 1, 1, 0), LayerSpec::relu("r1"),
                       LayerSpec::conv("c2", hidden, out, 1, 1, 0)}};
}

std::vector<int> inverse_permutation(const std::vector<int>& perm) {
  std::vector<int> inv(perm.size());
  for (std::size_t i = 0; i < perm.size(); ++i) inv[static_cast<std::size_t>(perm[i])] = static_cast<int>(i);
  return inv;
}

void check_latent(const AutoencoderG& g, Var z, const char* what) {
  const Shape& s = z.shape();
  const Shape latent = g.latent_shape();
  if (s.size() != 4 || !std::equal(latent.begin(), latent.end(), s.begin() + 1)) {
    throw std::invalid_argument(std::string(what) + ": latent shape " + shape_string(s) + " does not match [B]" +
                                shape_string(latent));
  }
}

}  // namespace

Shape AutoencoderG::latent_shape() const { return encoder.output_shape(); }

AutoencoderG make_autoencoder(const AutoencoderConfig& config, std::uint64_t seed, DfMode mode) {
  if (config.image_shape.size() != 3) throw std::invalid_argument("autoencoder image shape must be CxHxW");
  const int downsample = 1 << config.encoder_channels.size();
  if (config.image_shape[1] % downsample != 0 || config.image_shape[2] % downsample != 0) {
    throw std::invalid_argument("image size " + shape_string(config.image_shape) + " not divisible by " +
                                std::to_string(downsample));
  }
  AutoencoderG g;
  g.config = config;
  g.encoder = build_encoder(config);
  const Shape latent = g.encoder.output_shape();
  g.decoder = build_decoder(config, latent);

  const int ca = config.adv_channels(), cv = config.vis_channels(), c = config.latent_channels();
  g.df.mode = mode;
  if (mode == DfMode::Learned) {
    g.df.adversarial = pointwise_stack("df.adversarial", latent, config.df_hidden, ca);
    g.df.visual = pointwise_stack("df.visual", latent, config.df_hidden, cv);
    g.df.fusion = pointwise_stack("df.fusion", {ca + cv, latent[1], latent[2]}, config.fuse_hidden, c);
  } else {
    if (ca + cv != c) throw std::invalid_argument("random split needs C_a + C_v equal to the latent width");
    g.df.permutation.resize(static_cast<std::size_t>(c));
    std::iota(g.df.permutation.begin(), g.df.permutation.end(), 0);
    Rng rng(derive_seed(seed, 99));
    std::shuffle(g.df.permutation.begin(), g.df.permutation.end(), rng);
  }

  init_parameters(g.encoder, g.params, derive_seed(seed, 0), "enc.");
  init_parameters(g.decoder, g.params, derive_seed(seed, 1), "dec.");
  if (mode == DfMode::Learned) {
    init_parameters(g.df.adversarial, g.params, derive_seed(seed, 2), "df.adv.");
    init_parameters(g.df.visual, g.params, derive_seed(seed, 3), "df.vis.");
    init_parameters(g.df.fusion, g.params, derive_seed(seed, 4), "df.fuse.");
  }
  return g;
}

Var encode(const AutoencoderG& g, Tape& tape, Var x, bool trainable) {
  return forward(g.encoder, g.params, tape, x, {"enc.", trainable});
}

Var adversarial_feature(const AutoencoderG& g, Tape& tape, Var z, bool trainable) {
  check_latent(g, z, "adversarial_feature");
  if (g.df.mode == DfMode::RandomSplit) {
    const auto& p = g.df.permutation;
    return ops::gather_channels(z, std::vector<int>(p.begin(), p.begin() + g.config.adv_channels()));
  }
  return forward(g.df.adversarial, g.params, tape, z, {"df.adv.", trainable});
}

Var visual_feature(const AutoencoderG& g, Tape& tape, Var z, bool trainable) {
  check_latent(g, z, "visual_feature");
  if (g.df.mode == DfMode::RandomSplit) {
    const auto& p = g.df.permutation;
    return ops::gather_channels(z, std::vector<int>(p.begin() + g.config.adv_channels(), p.end()));
  }
  return forward(g.df.visual, g.params, tape, z, {"df.vis.", trainable});
}

Var fuse_features(const AutoencoderG& g, Tape& tape, Var z_adv, Var z_vis, bool trainable) {
  Var joined = ops::concat_channels(z_adv, z_vis);
  if (g.df.mode == DfMode::RandomSplit) return ops::gather_channels(joined, inverse_permutation(g.df.permutation));
  return forward(g.df.fusion, g.params, tape, joined, {"df.fuse.", trainable});
}

Var df_fuse(const AutoencoderG& g, Tape& tape, Var z_adv_source, Var z_vis_source, bool trainable) {
  check_latent(g, z_adv_source, "df_fuse");
  check_latent(g, z_vis_source, "df_fuse");
  if (z_adv_source.shape() != z_vis_source.shape()) {
    throw std::invalid_argument("df_fuse: latent batch shapes differ: " + shape_string(z_adv_source.shape()) +
                                " vs " + shape_string(z_vis_source.shape()));
  }
  return fuse_features(g, tape, adversarial_feature(g, tape, z_adv_source, trainable),
                       visual_feature(g, tape, z_vis_source, trainable), trainable);
}

Var decode(const AutoencoderG& g, Tape& tape, Var z, bool trainable) {
  return forward(g.decoder, g.params, tape, z, {"dec.", trainable});
}

Tensor encode(const AutoencoderG& g, const Tensor& x) {
  Tape tape(false);
  return encode(g, tape, tape.constant_ref(x)).value();
}

Tensor df_fuse(const AutoencoderG& g, const Tensor& z_adv_source, const Tensor& z_vis_source) {
  Tape tape(false);
  return df_fuse(g, tape, tape.constant_ref(z_adv_source), tape.constant_ref(z_vis_source)).value();
}

Tensor decode(const AutoencoderG& g, const Tensor& z) {
  Tape tape(false);
  return decode(g, tape, tape.constant_ref(z)).value();
}

Tensor reconstruct(const AutoencoderG& g, const Tensor& x) {
  Tape tape(false);
  Var z = encode(g, tape, tape.constant_ref(x));
  return decode(g, tape, df_fuse(g, tape, z, z)).value();
}

namespace {
constexpr const char* kAutoencoderMeta = "meta.autoencoder";
constexpr const char* kPermutationMeta = "meta.df_permutation";
}  // namespace

void save_autoencoder(const std::string& path, const AutoencoderG& g) {
  ParameterSet out = g.params;
  const auto& c = g.config;
  std::vector<float> meta{static_cast<float>(g.df.mode == DfMode::Learned ? 0 : 1),
                          static_cast<float>(c.image_shape[0]), static_cast<float>(c.image_shape[1]),
                          static_cast<float>(c.image_shape[2]), static_cast<float>(c.encoder_channels.size())};
  for (int ch : c.encoder_channels) meta.push_back(static_cast<float>(ch));
  for (int v : {c.df_hidden, c.fuse_hidden, c.adv_channels(), c.vis_channels()}) meta.push_back(static_cast<float>(v));
  out.add(kAutoencoderMeta, Tensor(Shape{static_cast<int>(meta.size())}, meta));
  if (g.df.mode == DfMode::RandomSplit) {
    std::vector<float> perm(g.df.permutation.begin(), g.df.permutation.end());
    out.add(kPermutationMeta, Tensor(Shape{static_cast<int>(perm.size())}, perm));
  }
  save_checkpoint(path, out);
}

AutoencoderG load_autoencoder(const std::string& path) {
  ParameterSet loaded = load_checkpoint(path);
  if (!loaded.contains(kAutoencoderMeta)) throw std::runtime_error("'" + path + "' is not an autoencoder checkpoint");
  const Tensor meta = loaded.at(kAutoencoderMeta).value;
  auto at = [&](std::size_t i) {
    if (i >= meta.numel()) throw std::runtime_error("'" + path + "': truncated autoencoder metadata");
    return static_cast<int>(meta[i]);
  };
  AutoencoderConfig cfg;
  const DfMode mode = at(0) == 0 ? DfMode::Learned : DfMode::RandomSplit;
  cfg.image_shape = {at(1), at(2), at(3)};
  const int blocks = at(4);
  cfg.encoder_channels.clear();
  for (int i = 0; i < blocks; ++i) cfg.encoder_channels.push_back(at(5 + static_cast<std::size_t>(i)));
  std::size_t k = 5 + static_cast<std::size_t>(blocks);
  cfg.df_hidden = at(k);
  cfg.fuse_hidden = at(k + 1);
  cfg.adversarial_channels = at(k + 2);
  cfg.visual_channels = at(k + 3);

  AutoencoderG g = make_autoencoder(cfg, 0, mode);
  for (auto& [name, p] : g.params) {
    if (!loaded.contains(name) || !loaded.at(name).value.same_shape(p.value)) {
      throw std::runtime_error("'" + path + "': missing or misshapen parameter '" + name + "'");
    }
    p.value = loaded.at(name).value;
  }
  if (mode == DfMode::RandomSplit) {
    const Tensor perm = loaded.at(kPermutationMeta).value;
    g.df.permutation.assign(perm.numel(), 0);
    for (std::size_t i = 0; i < perm.numel(); ++i) g.df.permutation[i] = static_cast<int>(perm[i]);
  }
  return g;
}

}  // namespace difattack
