#include "difattack/dataset.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "difattack/bytes.hpp"
#include "difattack/rng.hpp"

namespace difattack {

Tensor Dataset::gather(std::span<const int> indices) const {
  Shape s = images.shape();
  s[0] = static_cast<int>(indices.size());
  const std::size_t per = shape_numel(image_shape());
  Tensor out(s);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] < 0 || indices[i] >= size()) throw std::out_of_range("dataset index out of range");
    std::copy_n(images.ptr() + static_cast<std::size_t>(indices[i]) * per, per, out.ptr() + i * per);
  }
  return out;
}

std::vector<int> Dataset::gather_labels(std::span<const int> indices) const {
  std::vector<int> out;
  out.reserve(indices.size());
  for (int i : indices) out.push_back(labels.at(static_cast<std::size_t>(i)));
  return out;
}

Dataset Dataset::subset(std::span<const int> indices) const {
  Dataset d;
  d.name = name;
  d.images = gather(indices);
  d.labels = gather_labels(indices);
  d.num_classes = num_classes;
  d.classes = classes;
  return d;
}

namespace {

constexpr int kShapes = 6;
constexpr int kPalettes = 6;

// Hues 60 degrees apart around a mid-grey. Low saturation keeps the classes
// learnable but not robust at an 8/255 budget.
std::array<float, 3> palette_color(int palette) {
  const float h = static_cast<float>(palette) * 2.0f * std::numbers::pi_v<float> / kPalettes;
  const float s = 0.15f;
  return {0.5f + s * std::cos(h), 0.5f + s * std::cos(h - 2.0943951f), 0.5f + s * std::cos(h + 2.0943951f)};
}

// Shape membership for offsets (dx, dy) in units of the radius.
bool inside(int shape, float dx, float dy) {
  const float d = std::sqrt(dx * dx + dy * dy);
  switch (shape) {
    case 0: return d <= 1.0f;                                             // disk
    case 1: return std::max(std::fabs(dx), std::fabs(dy)) <= 0.8f;        // square
    case 2: return dy <= 0.75f && dy >= -1.0f && std::fabs(dx) <= 0.55f * (dy + 1.0f);  // triangle
    case 3: return (std::fabs(dx) <= 0.3f && std::fabs(dy) <= 1.0f) || (std::fabs(dy) <= 0.3f && std::fabs(dx) <= 1.0f);
    case 4: return d <= 1.0f && d >= 0.55f;                               // ring
    case 5: return std::fabs(dx) + std::fabs(dy) <= 1.0f;                 // diamond
  }
  return false;
}

void render(const ClassKey& key, Rng& rng, int h, int w, float* out) {
  std::uniform_real_distribution<float> U(0.0f, 1.0f);
  const int plane = h * w;
  std::array<float, 3> base;
  const float grey = 0.35f + 0.3f * U(rng);
  for (auto& b : base) b = grey + 0.1f * (U(rng) - 0.5f);
  const float grad_amp = 0.15f * U(rng);
  const float theta = 2.0f * std::numbers::pi_v<float> * U(rng);
  std::normal_distribution<float> noise(0.0f, 0.03f);

  const float radius = (0.2f + 0.12f * U(rng)) * static_cast<float>(std::min(h, w));
  const float cx = radius + (static_cast<float>(w) - 2.0f * radius) * U(rng);
  const float cy = radius + (static_cast<float>(h) - 2.0f * radius) * U(rng);
  auto fg = palette_color(key.palette);
  const float bright = 0.85f + 0.3f * U(rng);
  for (auto& f : fg) f = std::clamp(f * bright, 0.0f, 1.0f);

  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      // 2x2 supersampled coverage.
      int hits = 0;
      for (int sy = 0; sy < 2; ++sy)
        for (int sx = 0; sx < 2; ++sx) {
          const float px = static_cast<float>(x) + 0.25f + 0.5f * sx;
          const float py = static_cast<float>(y) + 0.25f + 0.5f * sy;
          hits += inside(key.shape, (px - cx) / radius, (py - cy) / radius);
        }
      const float m = static_cast<float>(hits) / 4.0f;
      const float u = (static_cast<float>(x) / w - 0.5f) * std::cos(theta) + (static_cast<float>(y) / h - 0.5f) * std::sin(theta);
      for (int c = 0; c < 3; ++c) {
        const float bg = base[c] + grad_amp * u + noise(rng);
        out[c * plane + y * w + x] = std::clamp((1.0f - m) * bg + m * fg[c], 0.0f, 1.0f);
      }
    }
  }
}

}  // namespace

std::vector<ClassKey> universe_classes(Universe u, int num_classes) {
  if (num_classes < 2 || num_classes > kShapes) {
    throw std::invalid_argument("synthetic universes hold 2.." + std::to_string(kShapes) + " classes");
  }
  // A pairs shape i with palette i; B with palette i + 1. Disjoint by construction.
  const int offset = u == Universe::A ? 0 : 1;
  std::vector<ClassKey> keys;
  for (int i = 0; i < num_classes; ++i) keys.push_back({i, (i + offset) % kPalettes});
  return keys;
}

Dataset synth_dataset(const SynthSpec& spec) {
  if (spec.num_classes < 2) throw std::invalid_argument("synthetic dataset needs at least two classes");
  if (spec.count < 0) throw std::invalid_argument("negative dataset size");
  Dataset ds;
  ds.name = std::string("synth-") + (spec.universe == Universe::A ? "A" : "B");
  ds.num_classes = spec.num_classes;
  ds.classes = universe_classes(spec.universe, spec.num_classes);
  ds.images = Tensor(Shape{spec.count, 3, spec.height, spec.width});
  ds.labels.resize(static_cast<std::size_t>(spec.count));
  const std::size_t per = static_cast<std::size_t>(3) * spec.height * spec.width;
  for (int i = 0; i < spec.count; ++i) {
    Rng rng(derive_seed(spec.seed, static_cast<std::uint64_t>(i)));
    // Balanced labels, cycling through classes.
    const int label = i % spec.num_classes;
    ds.labels[static_cast<std::size_t>(i)] = label;
    render(ds.classes[static_cast<std::size_t>(label)], rng, spec.height, spec.width, ds.images.ptr() + i * per);
  }
  return ds;
}

namespace {
constexpr std::size_t kCifarPixels = 3 * 32 * 32;
constexpr std::size_t kCifarRecord = 1 + kCifarPixels;
}  // namespace

Dataset parse_cifar_binary(std::span<const std::uint8_t> bytes, int num_classes) {
  const std::size_t full = bytes.size() / kCifarRecord;
  if (bytes.size() % kCifarRecord != 0) {
    const std::size_t at = full * kCifarRecord;
    throw FormatError("truncated CIFAR record: " + std::to_string(bytes.size() - at) + " of " +
                          std::to_string(kCifarRecord) + " bytes",
                      at);
  }
  Dataset ds;
  ds.name = "cifar";
  ds.num_classes = num_classes;
  ds.images = Tensor(Shape{static_cast<int>(full), 3, 32, 32});
  ds.labels.resize(full);
  for (std::size_t r = 0; r < full; ++r) {
    const std::size_t at = r * kCifarRecord;
    const int label = bytes[at];
    if (label >= num_classes) {
      throw FormatError("CIFAR label " + std::to_string(label) + " out of range for " + std::to_string(num_classes) +
                            " classes",
                        at);
    }
    ds.labels[r] = label;
    float* dst = ds.images.ptr() + r * kCifarPixels;
    for (std::size_t i = 0; i < kCifarPixels; ++i) dst[i] = static_cast<float>(bytes[at + 1 + i]) / 255.0f;
  }
  return ds;
}

std::vector<std::uint8_t> encode_cifar_binary(const Dataset& ds) {
  if (ds.image_shape() != Shape{3, 32, 32}) throw std::invalid_argument("CIFAR records hold 3x32x32 images");
  std::vector<std::uint8_t> out;
  out.reserve(static_cast<std::size_t>(ds.size()) * kCifarRecord);
  for (int r = 0; r < ds.size(); ++r) {
    if (ds.labels[r] < 0 || ds.labels[r] > 255) throw std::invalid_argument("CIFAR label does not fit in a byte");
    out.push_back(static_cast<std::uint8_t>(ds.labels[r]));
    const float* src = ds.images.ptr() + static_cast<std::size_t>(r) * kCifarPixels;
    for (std::size_t i = 0; i < kCifarPixels; ++i) {
      out.push_back(static_cast<std::uint8_t>(std::lround(std::clamp(src[i], 0.0f, 1.0f) * 255.0f)));
    }
  }
  return out;
}

Dataset load_cifar_binary(const std::string& path, int num_classes) {
  return parse_cifar_binary(read_file_bytes(path), num_classes);
}

Dataset load_dataset(const DatasetSpec& spec) {
  Dataset ds = spec.cifar_path.empty() ? synth_dataset(spec.synth) : load_cifar_binary(spec.cifar_path, spec.cifar_classes);
  if (spec.exclude_classes.empty()) return ds;
  std::vector<int> keep;
  for (int i = 0; i < ds.size(); ++i) {
    if (std::find(spec.exclude_classes.begin(), spec.exclude_classes.end(), ds.labels[i]) == spec.exclude_classes.end()) {
      keep.push_back(i);
    }
  }
  if (keep.empty()) throw std::invalid_argument("class exclusions leave an empty evaluation split");
  return ds.subset(keep);
}

std::uint64_t image_hash(const Dataset& ds, int index) {
  const std::size_t per = shape_numel(ds.image_shape());
  const auto* bytes = reinterpret_cast<const std::uint8_t*>(ds.images.ptr() + static_cast<std::size_t>(index) * per);
  std::uint64_t h = 1469598103934665603ULL;
  for (std::size_t i = 0; i < per * sizeof(float); ++i) {
    h ^= bytes[i];
    h *= 1099511628211ULL;
  }
  return h;
}

}  // namespace difattack
