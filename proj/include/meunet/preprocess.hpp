#pragma once

#include <algorithm>
#include <string>

#include "meunet/volio.hpp"

namespace meunet {

template <class T>
Grid<T> crop(const Grid<T>& v, const Dims& origin, const Dims& extents) {
  for (std::size_t a = 0; a < 3; ++a) {
    if (extents[a] == 0 || origin[a] + extents[a] > v.dims[a]) {
      throw ConfigError("crop: region [" + std::to_string(origin[a]) + ", " + std::to_string(origin[a] + extents[a]) +
                        ") exceeds extent " + std::to_string(v.dims[a]) + " on axis " + std::to_string(a));
    }
  }
  Grid<T> out(extents, v.channels);
  out.spacing_um = v.spacing_um;
  for (std::size_t c = 0; c < v.channels; ++c)
    for (std::size_t z = 0; z < extents[0]; ++z)
      for (std::size_t y = 0; y < extents[1]; ++y)
        for (std::size_t x = 0; x < extents[2]; ++x)
          out.values[out.index(c, z, y, x)] = v.values[v.index(c, origin[0] + z, origin[1] + y, origin[2] + x)];
  return out;
}

// Factor-2 trilinear with centre-aligned samples: output voxel i sits at input
// coordinate 2i + 0.5 (clamped to the last voxel for odd extents).
Volume downsample2_trilinear(const Volume& v);

// Keeps input voxel 2i on every axis.
LabelVolume downsample2_nearest(const LabelVolume& v);

// Nearest upsampling by 2 cropped to `target` extents.
template <class T>
Grid<T> upsample2_nearest(const Grid<T>& v, const Dims& target) {
  Grid<T> out(target, v.channels);
  for (std::size_t a = 0; a < 3; ++a) out.spacing_um[a] = v.spacing_um[a] / 2;
  for (std::size_t c = 0; c < v.channels; ++c)
    for (std::size_t z = 0; z < target[0]; ++z)
      for (std::size_t y = 0; y < target[1]; ++y)
        for (std::size_t x = 0; x < target[2]; ++x)
          out.values[out.index(c, z, y, x)] =
              v.values[v.index(c, std::min(z / 2, v.dims[0] - 1), std::min(y / 2, v.dims[1] - 1),
                               std::min(x / 2, v.dims[2] - 1))];
  return out;
}

}  // namespace meunet
