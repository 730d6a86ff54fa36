#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "meunet/errors.hpp"

namespace meunet {

using Dims = std::array<std::size_t, 3>;  // D, H, W

/// Channel-first z-y-x row-major grid: values[((c*D + z)*H + y)*W + x].
template <class T>
struct Grid {
  std::size_t channels = 1;
  Dims dims{0, 0, 0};
  std::array<double, 3> spacing_um{1.0, 1.0, 1.0};
  std::vector<T> values;

  Grid() = default;
  Grid(Dims d, std::size_t c = 1, T fill = T{}) : channels(c), dims(d), values(c * d[0] * d[1] * d[2], fill) {}

  std::size_t voxels() const { return dims[0] * dims[1] * dims[2]; }
  std::size_t index(std::size_t c, std::size_t z, std::size_t y, std::size_t x) const {
    return ((c * dims[0] + z) * dims[1] + y) * dims[2] + x;
  }
  T& at(std::size_t z, std::size_t y, std::size_t x) { return values[index(0, z, y, x)]; }
  const T& at(std::size_t z, std::size_t y, std::size_t x) const { return values[index(0, z, y, x)]; }
};

using Volume = Grid<float>;
using LabelVolume = Grid<std::uint8_t>;

template <class A, class B>
bool same_geometry(const Grid<A>& a, const Grid<B>& b) {
  return a.dims == b.dims;
}

// Blob at `path`, header at `path` + ".json".
std::filesystem::path header_path(const std::filesystem::path& blob);

void write_volume(const std::filesystem::path& path, const Volume& v);
void write_volume(const std::filesystem::path& path, const LabelVolume& v);
Volume read_volume(const std::filesystem::path& path);
LabelVolume read_labels(const std::filesystem::path& path);

// Header dtype without reading the blob ("f32" or "u8").
std::string volume_dtype(const std::filesystem::path& path);

}  // namespace meunet
