#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "meunet/nn.hpp"
#include "meunet/rng.hpp"
#include "meunet/volio.hpp"

namespace meunet {

struct PatchPlan {
  std::size_t P = 32;
  double k = 1.0;
  std::size_t E = 32;
  std::size_t stride = 16;
  double fg_threshold = 0.01;
  double bg_accept_prob = 0.3;
  std::uint64_t seed = 0;
  bool augment = false;

  static PatchPlan desk(std::size_t levels = 4, double k = 1.0);
  static PatchPlan paper(std::size_t levels = 5, double k = 1.0);

  void validate(std::size_t levels) const;
};

// round(k*P) rounded up to a multiple of 2^(levels-1).
std::size_t expanded_edge(std::size_t P, double k, std::size_t levels);

std::vector<std::size_t> tile_positions(std::size_t extent, std::size_t P, std::size_t stride);
// Cartesian product of per-axis tile positions, z outermost.
std::vector<Dims> tile_origins(const Dims& dims, std::size_t P, std::size_t stride);

double foreground_fraction(const LabelVolume& labels);

// The roulette itself: `draw` is a uniform [0,1) sample, consulted only when
// the fraction is below the threshold.
bool accept_fraction(double fraction, const PatchPlan& plan, double draw);
// Draws from `rng` only for patches below the threshold.
bool accept_patch(const LabelVolume& label_patch, const PatchPlan& plan, Rng& rng);

/// Cube of edge `edge` starting at a possibly negative origin; voxels outside
/// the volume take `fill`.
template <class T>
Grid<T> crop_padded(const Grid<T>& v, const std::array<std::int64_t, 3>& origin, std::size_t edge, T fill = T{}) {
  Grid<T> out({edge, edge, edge}, v.channels, fill);
  out.spacing_um = v.spacing_um;
  for (std::size_t c = 0; c < v.channels; ++c)
    for (std::size_t z = 0; z < edge; ++z) {
      const std::int64_t iz = origin[0] + static_cast<std::int64_t>(z);
      if (iz < 0 || iz >= static_cast<std::int64_t>(v.dims[0])) continue;
      for (std::size_t y = 0; y < edge; ++y) {
        const std::int64_t iy = origin[1] + static_cast<std::int64_t>(y);
        if (iy < 0 || iy >= static_cast<std::int64_t>(v.dims[1])) continue;
        for (std::size_t x = 0; x < edge; ++x) {
          const std::int64_t ix = origin[2] + static_cast<std::int64_t>(x);
          if (ix < 0 || ix >= static_cast<std::int64_t>(v.dims[2])) continue;
          out.values[out.index(c, z, y, x)] = v.values[v.index(c, iz, iy, ix)];
        }
      }
    }
  return out;
}

struct PatchRecord {
  std::string volume_id;
  Dims origin{0, 0, 0};
  Volume image;
  LabelVolume labels;
  std::optional<Volume> expanded_image;
  std::optional<LabelVolume> expanded_labels;
};

struct ExpandedPatch {
  Volume image;
  LabelVolume labels;
};

/// Region [origin - (E-P)/2, origin + P + (E-P)/2) per axis.
ExpandedPatch expand_patch(const Volume& image, const LabelVolume& labels, const Dims& origin, std::size_t P,
                           std::size_t E);

PatchRecord extract_patch(const std::string& id, const Volume& image, const LabelVolume& labels, const Dims& origin,
                          const PatchPlan& plan, bool expanded);

struct SupervisionTargets {
  Tensor standard_one_hot;  // [1,K,P,P,P]
  Tensor expanded_one_hot;  // [1,K,E/2,E/2,E/2], undefined without an expanded patch
  LabelTensor standard_labels;
  LabelTensor expanded_labels;
};

SupervisionTargets supervision_targets(const PatchRecord& record, std::size_t levels, std::size_t classes);

// [1,C,D,H,W] network input from a volume patch.
Tensor to_input(const Volume& v);
LabelTensor to_label_tensor(const LabelVolume& v);

/// Accepted patches of one volume in tile order. One roulette draw per
/// below-threshold tile, from `rng`.
std::vector<PatchRecord> sample_patches(const std::string& id, const Volume& image, const LabelVolume& labels,
                                        const PatchPlan& plan, bool expanded, Rng& rng);

/// Quarter turns about z (in the y-x plane) followed by isotropic scaling
/// about the centre; trilinear for the image (zero outside), nearest for the
/// labels (background outside). Output keeps the input shape.
void augment_with(Volume& image, LabelVolume& labels, int quarter_turns, double scale);
void augment(Volume& image, LabelVolume& labels, Rng& rng);

}  // namespace meunet
