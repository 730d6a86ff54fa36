#pragma once

#include <functional>

#include "meunet/nn.hpp"
#include "meunet/unet.hpp"
#include "meunet/volio.hpp"

namespace meunet {

using ProbVolume = Grid<double>;

// Weight 2 inside the centred cube of edge P/2, 1 elsewhere.
struct FusionMask {
  std::size_t P = 0;
  std::vector<double> weights;  // [P,P,P]

  explicit FusionMask(std::size_t P);
  double at(std::size_t z, std::size_t y, std::size_t x) const { return weights[(z * P + y) * P + x]; }
};

// Logits [1,K,P,P,P] for the zero-padded input patch [1,C,P,P,P] at `origin`.
using PatchPredictor = std::function<Tensor(const Tensor& patch, const Dims& origin)>;

struct FusedPrediction {
  ProbVolume probs;    // K channels
  LabelVolume labels;  // argmax, lowest class on ties
};

/// Tiles the volume with stride `stride`, softmaxes each patch's logits and
/// averages them voxelwise with fusion-mask weights. Tiles are visited and
/// accumulated in tile_origins order.
FusedPrediction fuse_predict(const PatchPredictor& predictor, const Volume& image, std::size_t P, std::size_t stride);

// forward_standard in eval mode without gradients.
PatchPredictor standard_predictor(UNet& net);

LabelVolume argmax_volume(const ProbVolume& probs);
Volume to_f32(const ProbVolume& probs);
ProbVolume to_f64(const Volume& probs);

// 2|A and B| / (|A| + |B|) for class c; 1 when both are empty.
double dice_metric(const LabelVolume& pred, const LabelVolume& truth, std::uint8_t c);

}  // namespace meunet
