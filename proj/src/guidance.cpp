#include "meunet/guidance.hpp"

#include "meunet/nn.hpp"
#include "meunet/sampler.hpp"

namespace meunet {

namespace {

LabelTensor crop_labels(const LabelVolume& argmax, const Dims& origin, std::size_t P) {
  const auto c = crop_padded(argmax,
                             {static_cast<std::int64_t>(origin[0]), static_cast<std::int64_t>(origin[1]),
                              static_cast<std::int64_t>(origin[2])},
                             P, std::uint8_t{0});
  return to_label_tensor(c);
}

}  // namespace

GuidancePyramid guidance_for_patch(const LabelVolume& argmax, const Dims& origin, std::size_t P, std::size_t levels,
                                   std::size_t classes) {
  const LabelTensor level1 = crop_labels(argmax, origin, P);
  GuidancePyramid g;
  for (std::size_t l = 1; l < levels; ++l)
    g.levels.push_back(one_hot(downsample_labels_nearest(level1, std::size_t{1} << (l - 1)), classes));
  return g;
}

Tensor guidance_input(const LabelVolume& argmax, const Dims& origin, std::size_t P, std::size_t classes) {
  return one_hot(crop_labels(argmax, origin, P), classes);
}

}  // namespace meunet
