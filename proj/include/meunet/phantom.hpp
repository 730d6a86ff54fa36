#pragma once

#include <array>
#include <cstdint>
#include <utility>

#include "meunet/volio.hpp"

namespace meunet {

// Noisy background with one thick curved tube (class 1) and one thin curved
// tube (class 2) that crosses it; class 2 wins where they overlap.
struct PhantomSpec {
  std::uint64_t seed = 42;
  Dims dims{64, 64, 64};
  std::array<double, 2> large_radius{6.0, 9.0};
  std::array<double, 2> thin_radius{2.0, 3.0};
  double noise = 0.25;
  std::array<float, 3> contrast{0.0f, 1.0f, 2.0f};
  std::array<double, 3> spacing_um{2.95, 2.95, 2.95};
};

struct Phantom {
  Volume image;
  LabelVolume labels;
};

Phantom phantom_generate(const PhantomSpec& spec);

}  // namespace meunet
