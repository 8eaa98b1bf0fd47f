#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "difattack/tensor.hpp"

namespace difattack {

/// A synthetic class is one (shape, palette) combination.
struct ClassKey {
  int shape = 0;
  int palette = 0;
  friend bool operator==(const ClassKey&, const ClassKey&) = default;
};

/// Images in [0,1], NCHW, with labels in [0, num_classes).
struct Dataset {
  std::string name;
  Tensor images = Tensor(Shape{0, 3, 32, 32});
  std::vector<int> labels;
  int num_classes = 0;
  std::vector<ClassKey> classes;  // synthetic datasets only

  int size() const { return static_cast<int>(labels.size()); }
  Shape image_shape() const { return {images.dim(1), images.dim(2), images.dim(3)}; }
  Tensor image(int index) const { return images.row(index); }
  Tensor gather(std::span<const int> indices) const;
  std::vector<int> gather_labels(std::span<const int> indices) const;
  /// Subset with the given indices, in that order.
  Dataset subset(std::span<const int> indices) const;
};

enum class Universe { A, B };

struct SynthSpec {
  std::uint64_t seed = 0;
  int num_classes = 6;
  int count = 0;
  Universe universe = Universe::A;
  int height = 32;
  int width = 32;
};

/// Class keys of a universe. Universes A and B never share a combination.
std::vector<ClassKey> universe_classes(Universe u, int num_classes);

/// Parametric coloured shapes on textured backgrounds. Deterministic in the spec.
Dataset synth_dataset(const SynthSpec& spec);

/// CIFAR binary batch: 3,073-byte records (label, 1,024 R, 1,024 G, 1,024 B).
Dataset parse_cifar_binary(std::span<const std::uint8_t> bytes, int num_classes = 10);
std::vector<std::uint8_t> encode_cifar_binary(const Dataset& ds);
Dataset load_cifar_binary(const std::string& path, int num_classes = 10);

struct DatasetSpec {
  std::string cifar_path;  // empty: synthetic
  SynthSpec synth;
  int cifar_classes = 10;
  std::vector<int> exclude_classes;  // dropped from the loaded split
};

/// Throws when exclusions leave nothing to evaluate.
Dataset load_dataset(const DatasetSpec& spec);

/// Hash of one image's pixel bytes (leak checks between splits).
std::uint64_t image_hash(const Dataset& ds, int index);

}  // namespace difattack
