#pragma once

// Arbitrary wire messages for round-trip properties.

#include <random>
#include <string>

#include "difattack/wire.hpp"

namespace difattack::testing {

inline WireMessage random_message(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> kind(0, 2), dim(0, 4), len(0, 40);
  std::normal_distribution<float> val(0.0f, 10.0f);
  auto text = [&] {
    std::string s(static_cast<std::size_t>(len(rng)), ' ');
    for (char& c : s) c = static_cast<char>(std::uniform_int_distribution<int>(0, 255)(rng));
    return s;
  };
  switch (kind(rng)) {
    case 0: {
      ScoreRequest q;
      q.id = rng();
      std::size_t n = 1;
      for (auto& d : q.shape) {
        d = static_cast<std::uint32_t>(dim(rng));
        n *= d;
      }
      q.pixels.resize(n);
      for (float& p : q.pixels) p = val(rng);
      return q;
    }
    case 1: {
      ScoreResponse s;
      s.id = rng();
      s.batch = static_cast<std::uint32_t>(dim(rng));
      s.num_classes = static_cast<std::uint32_t>(dim(rng) + 1);
      s.scores.resize(static_cast<std::size_t>(s.batch) * s.num_classes);
      for (float& p : s.scores) p = val(rng);
      s.model_tag = text();
      return s;
    }
    default:
      return ErrorReply{rng(), text()};
  }
}

}  // namespace difattack::testing
