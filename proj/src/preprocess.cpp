#include "meunet/preprocess.hpp"

#include <algorithm>
#include <cmath>

namespace meunet {

namespace {

Dims halved(const Dims& d) { return {(d[0] + 1) / 2, (d[1] + 1) / 2, (d[2] + 1) / 2}; }

}  // namespace

Volume downsample2_trilinear(const Volume& v) {
  const Dims od = halved(v.dims);
  Volume out(od, v.channels);
  for (std::size_t a = 0; a < 3; ++a) out.spacing_um[a] = v.spacing_um[a] * 2;
  // Along each axis the sample at 2i + 0.5 blends voxels 2i and 2i+1 equally.
  auto taps = [](std::size_t i, std::size_t n) {
    const std::size_t a = std::min(2 * i, n - 1), b = std::min(2 * i + 1, n - 1);
    return std::pair{a, b};
  };
  for (std::size_t c = 0; c < v.channels; ++c)
    for (std::size_t z = 0; z < od[0]; ++z) {
      const auto [z0, z1] = taps(z, v.dims[0]);
      for (std::size_t y = 0; y < od[1]; ++y) {
        const auto [y0, y1] = taps(y, v.dims[1]);
        for (std::size_t x = 0; x < od[2]; ++x) {
          const auto [x0, x1] = taps(x, v.dims[2]);
          double s = 0;
          for (auto zz : {z0, z1})
            for (auto yy : {y0, y1})
              for (auto xx : {x0, x1}) s += v.values[v.index(c, zz, yy, xx)];
          out.values[out.index(c, z, y, x)] = static_cast<float>(s / 8);
        }
      }
    }
  return out;
}

LabelVolume downsample2_nearest(const LabelVolume& v) {
  const Dims od = halved(v.dims);
  LabelVolume out(od, v.channels);
  for (std::size_t a = 0; a < 3; ++a) out.spacing_um[a] = v.spacing_um[a] * 2;
  for (std::size_t c = 0; c < v.channels; ++c)
    for (std::size_t z = 0; z < od[0]; ++z)
      for (std::size_t y = 0; y < od[1]; ++y)
        for (std::size_t x = 0; x < od[2]; ++x)
          out.values[out.index(c, z, y, x)] = v.values[v.index(c, 2 * z, 2 * y, 2 * x)];
  return out;
}

}  // namespace meunet
