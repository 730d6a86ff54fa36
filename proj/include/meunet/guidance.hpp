#pragma once

#include "meunet/unet.hpp"
#include "meunet/volio.hpp"

namespace meunet {

/// One-hot of `argmax` cropped at [origin, origin + P) (background outside
/// the volume), then nearest-downsampled by 2^(l-1) for decoder level l.
GuidancePyramid guidance_for_patch(const LabelVolume& argmax, const Dims& origin, std::size_t P, std::size_t levels,
                                   std::size_t classes);

// Level-1 one-hot [1,K,P,P,P] only, for input concatenation.
Tensor guidance_input(const LabelVolume& argmax, const Dims& origin, std::size_t P, std::size_t classes);

}  // namespace meunet
