#include "difattack/disentangle.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "difattack/rng.hpp"

namespace difattack {

void TrainConfig::validate() const {
  if (!(lambda >= 0.0f)) throw std::invalid_argument("lambda must be non-negative");
  if (!(k_train >= 0.0f)) throw std::invalid_argument("k_train must be non-negative");
  if (epochs < 0) throw std::invalid_argument("epochs must be non-negative");
  if (batch_size < 1) throw std::invalid_argument("batch size must be positive");
  if (!(lr > 0.0f)) throw std::invalid_argument("learning rate must be positive");
  whitebox.validate();
}

namespace {

// Mean over the zoo of the per-sample margin loss; [B].
Var zoo_margin(const std::vector<ClassifierSpec>& zoo, Tape& tape, Var images, std::span<const int> labels, int v,
               float k) {
  Var acc;
  for (const auto& c : zoo) {
    Var l = adv_margin_loss(classify(c, tape, images), labels, MarginLossParams{0, v, k});
    acc = acc.valid() ? ops::add(acc, l) : l;
  }
  return ops::scale(acc, 1.0f / static_cast<float>(zoo.size()));
}

}  // namespace

AutoencoderLosses autoencoder_losses(const AutoencoderG& g, const std::vector<ClassifierSpec>& zoo, Tape& tape,
                                     Var x, Var x_adv, std::span<const int> labels, float k, float lambda,
                                     bool trainable) {
  if (zoo.empty()) throw std::invalid_argument("disentanglement loss needs at least one surrogate");
  if (x.shape() != x_adv.shape()) {
    throw std::invalid_argument("clean/adversarial batch shapes differ: " + shape_string(x.shape()) + " vs " +
                                shape_string(x_adv.shape()));
  }
  Var z = encode(g, tape, x, trainable);
  Var zs = encode(g, tape, x_adv, trainable);
  Var za = adversarial_feature(g, tape, z, trainable), zv = visual_feature(g, tape, z, trainable);
  Var zsa = adversarial_feature(g, tape, zs, trainable), zsv = visual_feature(g, tape, zs, trainable);

  // Interchanged pairs: adversarial feature of one image, visual feature of the other.
  Var x_f = decode(g, tape, fuse_features(g, tape, za, zsv, trainable), trainable);
  Var x_fs = decode(g, tape, fuse_features(g, tape, zsa, zv, trainable), trainable);
  Var dis = ops::add(ops::add(ops::l2_norm_rows(ops::sub(x_adv, x_f)), zoo_margin(zoo, tape, x_f, labels, 1, k)),
                     ops::add(ops::l2_norm_rows(ops::sub(x, x_fs)), zoo_margin(zoo, tape, x_fs, labels, 0, k)));

  Var x_r = decode(g, tape, fuse_features(g, tape, za, zv, trainable), trainable);
  Var x_rs = decode(g, tape, fuse_features(g, tape, zsa, zsv, trainable), trainable);
  Var rec = ops::add(ops::l2_norm_rows(ops::sub(x, x_r)), ops::l2_norm_rows(ops::sub(x_adv, x_rs)));

  AutoencoderLosses out;
  out.reconstruction = ops::mean(rec);
  out.disentanglement = ops::mean(dis);
  out.total = ops::add(ops::scale(out.reconstruction, lambda), out.disentanglement);
  return out;
}

float disentanglement_loss(const AutoencoderG& g, const std::vector<ClassifierSpec>& zoo, const Tensor& x,
                           const Tensor& x_adv, std::span<const int> labels, float k) {
  Tape tape(false);
  return autoencoder_losses(g, zoo, tape, tape.constant_ref(x), tape.constant_ref(x_adv), labels, k, 1.0f)
      .disentanglement.value()
      .item();
}

float reconstruction_loss(const AutoencoderG& g, const Tensor& x, const Tensor& x_adv) {
  Tape tape(false);
  Var z = encode(g, tape, tape.constant_ref(x));
  Var zs = encode(g, tape, tape.constant_ref(x_adv));
  Var rec = ops::add(ops::l2_norm_rows(ops::sub(tape.constant_ref(x), decode(g, tape, df_fuse(g, tape, z, z)))),
                     ops::l2_norm_rows(ops::sub(tape.constant_ref(x_adv), decode(g, tape, df_fuse(g, tape, zs, zs)))));
  return ops::mean(rec).value().item();
}

float total_loss(const AutoencoderG& g, const std::vector<ClassifierSpec>& zoo, const Tensor& x, const Tensor& x_adv,
                 std::span<const int> labels, float k, float lambda) {
  Tape tape(false);
  return autoencoder_losses(g, zoo, tape, tape.constant_ref(x), tape.constant_ref(x_adv), labels, k, lambda)
      .total.value()
      .item();
}

std::vector<CurvePoint> train_autoencoder(AutoencoderG& g, const Dataset& data, const std::vector<ClassifierSpec>& zoo,
                                          const TrainConfig& cfg) {
  cfg.validate();
  if (zoo.empty()) throw std::invalid_argument("autoencoder training needs a surrogate zoo");
  std::vector<int> order(static_cast<std::size_t>(data.size()));
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed(cfg.seed, 0));
  const std::uint64_t pair_seed = derive_seed(cfg.seed, 1);
  std::uint64_t batch_index = 0;

  std::vector<CurvePoint> curve;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    CurvePoint point{epoch + 1, 0.0, 0.0, 0.0};
    int batches = 0;
    for (int start = 0; start < data.size(); start += cfg.batch_size) {
      const int end = std::min(data.size(), start + cfg.batch_size);
      std::span<const int> idx(order.data() + start, static_cast<std::size_t>(end - start));
      const TrainingPairBatch pairs = make_training_pairs(data, idx, zoo, cfg.whitebox, pair_seed, batch_index++);
      if (linf_distance(pairs.adversarial, pairs.clean) > cfg.whitebox.epsilon + 1e-6f) {
        throw std::logic_error("training pair outside the white-box budget");
      }

      Tape tape;
      const auto losses = autoencoder_losses(g, zoo, tape, tape.constant_ref(pairs.clean),
                                             tape.constant_ref(pairs.adversarial), pairs.labels, cfg.k_train,
                                             cfg.lambda, true);
      const float total = losses.total.value().item();
      if (!std::isfinite(total)) {
        throw TrainingDiverged("autoencoder loss became non-finite at epoch " + std::to_string(epoch + 1) +
                               ", batch " + std::to_string(batches + 1));
      }
      optimizer_step(g.params, tape.backward(losses.total), cfg.lr, UpdateRule::Adam);
      point.reconstruction += losses.reconstruction.value().item();
      point.disentanglement += losses.disentanglement.value().item();
      point.total += total;
      ++batches;
    }
    if (batches) {
      point.reconstruction /= batches;
      point.disentanglement /= batches;
      point.total /= batches;
    }
    curve.push_back(point);
  }

  if (!cfg.curve_csv.empty()) {
    std::ofstream out(cfg.curve_csv);
    if (!out) throw std::runtime_error("cannot write training curve to '" + cfg.curve_csv + "'");
    out << "epoch,L_rec,L_dis,L_all\n";
    for (const auto& p : curve) out << p.epoch << ',' << p.reconstruction << ',' << p.disentanglement << ',' << p.total << '\n';
  }
  if (!cfg.checkpoint.empty()) save_autoencoder(cfg.checkpoint, g);
  return curve;
}

namespace {

struct SplitFeatures {
  Tensor adversarial;
  Tensor visual;
};

SplitFeatures split_features(const AutoencoderG& g, const Tensor& x) {
  Tape tape(false);
  Var z = encode(g, tape, tape.constant_ref(x));
  return {adversarial_feature(g, tape, z).value(), visual_feature(g, tape, z).value()};
}

Tensor fuse_and_decode(const AutoencoderG& g, const Tensor& za, const Tensor& zv) {
  Tape tape(false);
  return decode(g, tape, fuse_features(g, tape, tape.constant_ref(za), tape.constant_ref(zv))).value();
}

}  // namespace

std::vector<SensitivityRow> sensitivity_probe(const AutoencoderG& g, const ClassifierSpec& victim, const Dataset& data,
                                              const SensitivityConfig& cfg) {
  if (cfg.samples < 1) throw std::invalid_argument("sensitivity probe needs at least one sample per image");
  for (float xi : cfg.xi)
    if (!(xi >= 0.0f)) throw std::invalid_argument("noise scale xi must be non-negative");

  std::vector<SplitFeatures> features;
  for (int start = 0; start < data.size(); start += cfg.batch_size) {
    features.push_back(split_features(g, data.images.slice_rows(start, std::min(data.size(), start + cfg.batch_size))));
  }

  std::vector<SensitivityRow> rows;
  for (std::size_t gi = 0; gi < cfg.xi.size(); ++gi) {
    const float xi = cfg.xi[gi];
    // Same noise stream for either feature choice, so paired runs are comparable.
    Rng rng(derive_seed(cfg.seed, gi));
    long wrong = 0, total = 0;
    for (int s = 0; s < cfg.samples; ++s) {
      for (std::size_t b = 0; b < features.size(); ++b) {
        Tensor za = features[b].adversarial, zv = features[b].visual;
        Tensor& noisy = cfg.feature == FeatureKind::Adversarial ? za : zv;
        if (xi > 0.0f) {
          std::normal_distribution<float> n(0.0f, xi);
          for (float& v : noisy.data()) v += n(rng);
        }
        const auto pred = predict(victim, fuse_and_decode(g, za, zv));
        const int offset = static_cast<int>(b) * cfg.batch_size;
        for (std::size_t i = 0; i < pred.size(); ++i) wrong += pred[i] != data.labels[offset + i];
        total += static_cast<long>(pred.size());
      }
    }
    rows.push_back({xi, total ? static_cast<float>(wrong) / static_cast<float>(total) : 0.0f});
  }
  return rows;
}

float feature_std(const AutoencoderG& g, const Dataset& data, int batch_size) {
  double sum = 0.0, sq = 0.0;
  std::size_t n = 0;
  for (int start = 0; start < data.size(); start += batch_size) {
    const auto f = split_features(g, data.images.slice_rows(start, std::min(data.size(), start + batch_size)));
    for (const Tensor* t : {&f.adversarial, &f.visual})
      for (float v : t->data()) {
        sum += v;
        sq += static_cast<double>(v) * v;
      }
    n += f.adversarial.numel() + f.visual.numel();
  }
  if (n == 0) return 0.0f;
  const double m = sum / static_cast<double>(n);
  return static_cast<float>(std::sqrt(std::max(0.0, sq / static_cast<double>(n) - m * m)));
}

}  // namespace difattack
