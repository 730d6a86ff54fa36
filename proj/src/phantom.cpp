#include "meunet/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "meunet/rng.hpp"

namespace meunet {

namespace {

struct Tube {
  std::size_t axis;  // the tube runs along this axis end to end
  std::array<double, 3> centre;
  std::array<double, 2> amplitude, frequency, phase;
  std::array<double, 2> radius;
  double radius_phase;
};

Tube random_tube(std::size_t axis, const std::array<double, 2>& radius, const Dims& dims, double margin, Rng& rng) {
  Tube t;
  t.axis = axis;
  t.radius = radius;
  for (std::size_t a = 0; a < 3; ++a) {
    const double lo = margin, hi = static_cast<double>(dims[a]) - margin;
    t.centre[a] = lo + (hi - lo) * (0.35 + 0.3 * rng.uniform());
  }
  for (int k = 0; k < 2; ++k) {
    t.amplitude[k] = 0.5 * margin * rng.uniform();
    t.frequency[k] = 0.5 + rng.uniform();
    t.phase[k] = 2 * std::numbers::pi * rng.uniform();
  }
  t.radius_phase = 2 * std::numbers::pi * rng.uniform();
  return t;
}

// Marks voxels within the local radius of the centreline, sampled densely.
void paint(const Tube& t, const Dims& dims, std::uint8_t cls, LabelVolume& labels) {
  const std::size_t len = dims[t.axis];
  const std::size_t u = (t.axis + 1) % 3, v = (t.axis + 2) % 3;
  const std::size_t samples = 4 * len;
  for (std::size_t s = 0; s <= samples; ++s) {
    const double tt = static_cast<double>(s) / samples;
    std::array<double, 3> c{};
    c[t.axis] = tt * (static_cast<double>(len) - 1);
    c[u] = t.centre[u] + t.amplitude[0] * std::sin(2 * std::numbers::pi * t.frequency[0] * tt + t.phase[0]);
    c[v] = t.centre[v] + t.amplitude[1] * std::sin(2 * std::numbers::pi * t.frequency[1] * tt + t.phase[1]);
    const double r = t.radius[0] + (t.radius[1] - t.radius[0]) *
                                       (0.5 + 0.5 * std::sin(2 * std::numbers::pi * tt + t.radius_phase));
    std::array<std::size_t, 3> lo, hi;
    for (std::size_t a = 0; a < 3; ++a) {
      lo[a] = static_cast<std::size_t>(std::max(0.0, std::floor(c[a] - r)));
      hi[a] = static_cast<std::size_t>(std::min(static_cast<double>(dims[a]) - 1, std::ceil(c[a] + r)));
    }
    for (std::size_t z = lo[0]; z <= hi[0]; ++z)
      for (std::size_t y = lo[1]; y <= hi[1]; ++y)
        for (std::size_t x = lo[2]; x <= hi[2]; ++x) {
          const double dz = z - c[0], dy = y - c[1], dx = x - c[2];
          if (dz * dz + dy * dy + dx * dx > r * r) continue;
          auto& l = labels.at(z, y, x);
          l = std::max(l, cls);
        }
  }
}

}  // namespace

Phantom phantom_generate(const PhantomSpec& spec) {
  const auto& r1 = spec.large_radius;
  const auto& r2 = spec.thin_radius;
  if (!(r1[0] > 0 && r1[0] <= r1[1] && r2[0] > 0 && r2[0] <= r2[1])) {
    throw ConfigError("phantom: radius ranges must satisfy 0 < lo <= hi");
  }
  if (r2[1] >= r1[0]) throw ConfigError("phantom: thin-tube radius must stay below the large-tube radius");
  if (!(spec.noise >= 0)) throw ConfigError("phantom: noise amplitude must be >= 0");
  const double margin = r1[1] + 2;
  for (std::size_t a = 0; a < 3; ++a) {
    if (static_cast<double>(spec.dims[a]) < 2 * margin + 4) {
      throw ConfigError("phantom: extent " + std::to_string(spec.dims[a]) + " too small for large-tube radius " +
                        std::to_string(r1[1]) + " (need >= " + std::to_string(static_cast<int>(2 * margin + 4)) +
                        ")");
    }
  }
  Rng rng(spec.seed);
  Phantom p;
  p.labels = LabelVolume(spec.dims);
  p.labels.spacing_um = spec.spacing_um;
  const Tube large = random_tube(0, r1, spec.dims, margin, rng);
  const Tube thin = random_tube(1 + rng.below(2), r2, spec.dims, margin, rng);
  paint(large, spec.dims, 1, p.labels);
  paint(thin, spec.dims, 2, p.labels);

  p.image = Volume(spec.dims);
  p.image.spacing_um = spec.spacing_um;
  for (std::size_t i = 0; i < p.image.values.size(); ++i) {
    const double n = spec.noise > 0 ? spec.noise * rng.normal() : 0.0;
    p.image.values[i] = static_cast<float>(spec.contrast[p.labels.values[i]] + n);
  }
  return p;
}

}  // namespace meunet
