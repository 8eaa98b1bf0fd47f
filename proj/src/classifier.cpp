#include "difattack/classifier.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "difattack/checkpoint.hpp"
#include "difattack/rng.hpp"

namespace difattack {

const std::vector<std::string>& classifier_ids() {
  static const std::vector<std::string> ids{"conv2", "conv3", "conv4", "fc-heavy"};
  return ids;
}

Architecture classifier_architecture(const std::string& id, const Shape& image_shape, int num_classes) {
  if (image_shape.size() != 3 || image_shape[1] % 8 != 0 || image_shape[2] % 8 != 0) {
    throw std::invalid_argument("classifier input must be CxHxW with H, W multiples of 8, got " +
                                shape_string(image_shape));
  }
  if (num_classes < 2) throw std::invalid_argument("classifier needs at least two classes");
  const int c = image_shape[0], h = image_shape[1], w = image_shape[2];
  Architecture a{id, image_shape, {}};
  auto& L = a.layers;
  if (id == "conv2") {
    L = {LayerSpec::conv("c1", c, 16, 3, 2, 1), LayerSpec::relu("r1"),
         LayerSpec::conv("c2", 16, 32, 3, 2, 1), LayerSpec::relu("r2"),
         LayerSpec::flatten("flat"), LayerSpec::linear("fc", 32 * (h / 4) * (w / 4), num_classes)};
  } else if (id == "conv3") {
    L = {LayerSpec::conv("c1", c, 16, 3, 1, 1), LayerSpec::relu("r1"),
         LayerSpec::conv("c2", 16, 32, 3, 2, 1), LayerSpec::relu("r2"),
         LayerSpec::conv("c3", 32, 32, 3, 2, 1), LayerSpec::relu("r3"),
         LayerSpec::flatten("flat"), LayerSpec::linear("fc", 32 * (h / 4) * (w / 4), num_classes)};
  } else if (id == "conv4") {
    L = {LayerSpec::conv("c1", c, 16, 3, 2, 1), LayerSpec::relu("r1"),
         LayerSpec::conv("c2", 16, 16, 3, 1, 1), LayerSpec::relu("r2"),
         LayerSpec::conv("c3", 16, 32, 3, 2, 1), LayerSpec::relu("r3"),
         LayerSpec::conv("c4", 32, 32, 3, 2, 1), LayerSpec::relu("r4"),
         LayerSpec::flatten("flat"), LayerSpec::linear("fc1", 32 * (h / 8) * (w / 8), 64), LayerSpec::relu("r5"),
         LayerSpec::linear("fc2", 64, num_classes)};
  } else if (id == "fc-heavy") {
    L = {LayerSpec::conv("c1", c, 8, 3, 2, 1), LayerSpec::relu("r1"),
         LayerSpec::flatten("flat"), LayerSpec::linear("fc1", 8 * (h / 2) * (w / 2), 128), LayerSpec::relu("r2"),
         LayerSpec::linear("fc2", 128, 64), LayerSpec::relu("r3"),
         LayerSpec::linear("fc3", 64, num_classes)};
  } else {
    throw std::invalid_argument("unknown classifier architecture '" + id + "'");
  }
  return a;
}

ClassifierSpec make_classifier(const std::string& id, const Shape& image_shape, int num_classes, std::uint64_t seed) {
  ClassifierSpec c{id, num_classes, classifier_architecture(id, image_shape, num_classes), {}};
  init_parameters(c.arch, c.params, seed);
  return c;
}

std::vector<ClassifierSpec> build_zoo(std::uint64_t seed, const Shape& image_shape, int num_classes,
                                      const std::vector<std::string>& ids) {
  std::vector<ClassifierSpec> zoo;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    zoo.push_back(make_classifier(ids[i], image_shape, num_classes, derive_seed(seed, i)));
  }
  return zoo;
}

Var classify(const ClassifierSpec& c, Tape& tape, Var x, bool trainable) {
  return forward(c.arch, c.params, tape, x, ForwardOptions{"", trainable});
}

Tensor classify(const ClassifierSpec& c, const Tensor& x, ScoreMode mode) {
  Tape tape(false);
  Var logits = classify(c, tape, tape.constant_ref(x));
  if (mode == ScoreMode::Probabilities) return ops::softmax(logits).value();
  return logits.value();
}

int argmax_row(const Tensor& scores, int row) {
  const int cols = scores.dim(1);
  const float* r = scores.ptr() + static_cast<std::size_t>(row) * cols;
  return static_cast<int>(std::max_element(r, r + cols) - r);
}

std::vector<int> predict(const ClassifierSpec& c, const Tensor& x) {
  const Tensor s = classify(c, x);
  std::vector<int> out(static_cast<std::size_t>(s.dim(0)));
  for (int i = 0; i < s.dim(0); ++i) out[i] = argmax_row(s, i);
  return out;
}

float accuracy(const ClassifierSpec& c, const Dataset& ds, int batch_size) {
  if (ds.size() == 0) return 0.0f;
  int correct = 0;
  for (int start = 0; start < ds.size(); start += batch_size) {
    const int end = std::min(ds.size(), start + batch_size);
    const auto pred = predict(c, ds.images.slice_rows(start, end));
    for (int i = start; i < end; ++i) correct += pred[i - start] == ds.labels[i];
  }
  return static_cast<float>(correct) / static_cast<float>(ds.size());
}

std::vector<float> train_classifier(ClassifierSpec& c, const Dataset& train, const ClassifierTrainConfig& cfg) {
  std::vector<int> order(static_cast<std::size_t>(train.size()));
  std::iota(order.begin(), order.end(), 0);
  Rng rng(cfg.seed);
  std::vector<float> curve;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0.0;
    int batches = 0;
    for (int start = 0; start < train.size(); start += cfg.batch_size) {
      const int end = std::min(train.size(), start + cfg.batch_size);
      std::span<const int> idx(order.data() + start, static_cast<std::size_t>(end - start));
      const Tensor x = train.gather(idx);
      const auto y = train.gather_labels(idx);
      Tape tape;
      Var loss = ops::softmax_cross_entropy(classify(c, tape, tape.constant_ref(x), true), y);
      if (!std::isfinite(loss.value().item())) throw std::runtime_error("classifier training diverged");
      optimizer_step(c.params, tape.backward(loss), cfg.lr, UpdateRule::Adam);
      total += loss.value().item();
      ++batches;
    }
    curve.push_back(batches ? static_cast<float>(total / batches) : 0.0f);
  }
  return curve;
}

namespace {
constexpr const char* kClassifierMeta = "meta.classifier";
}

void save_classifier(const std::string& path, const ClassifierSpec& c) {
  ParameterSet out = c.params;
  const auto& ids = classifier_ids();
  const auto it = std::find(ids.begin(), ids.end(), c.id);
  if (it == ids.end()) throw std::invalid_argument("cannot save classifier with unknown id '" + c.id + "'");
  const auto& s = c.arch.input_shape;
  out.add(kClassifierMeta, Tensor::from({static_cast<float>(it - ids.begin()), static_cast<float>(c.num_classes),
                                         static_cast<float>(s[0]), static_cast<float>(s[1]),
                                         static_cast<float>(s[2])}));
  save_checkpoint(path, out);
}

ClassifierSpec load_classifier(const std::string& path) {
  ParameterSet loaded = load_checkpoint(path);
  if (!loaded.contains(kClassifierMeta)) throw std::runtime_error("'" + path + "' is not a classifier checkpoint");
  const Tensor meta = loaded.at(kClassifierMeta).value;
  const auto& ids = classifier_ids();
  const int arch = static_cast<int>(meta[0]);
  if (meta.numel() != 5 || arch < 0 || arch >= static_cast<int>(ids.size())) {
    throw std::runtime_error("'" + path + "': bad classifier metadata");
  }
  ClassifierSpec c{ids[arch], static_cast<int>(meta[1]),
                   classifier_architecture(ids[arch],
                                           {static_cast<int>(meta[2]), static_cast<int>(meta[3]), static_cast<int>(meta[4])},
                                           static_cast<int>(meta[1])),
                   {}};
  for (auto& [name, p] : loaded) {
    if (name == kClassifierMeta) continue;
    c.params.add(name, std::move(p.value));
  }
  // Every layer parameter must be present with the declared shape.
  ParameterSet expected;
  init_parameters(c.arch, expected, 0);
  for (const auto& [name, p] : expected) {
    if (!c.params.contains(name) || !c.params.at(name).value.same_shape(p.value)) {
      throw std::runtime_error("'" + path + "': missing or misshapen parameter '" + name + "'");
    }
  }
  return c;
}

}  // namespace difattack
