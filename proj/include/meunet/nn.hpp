#pragma once

#include <cstdint>
#include <vector>

#include "meunet/tensor.hpp"

namespace meunet {

/// Integer class ids with an explicit shape ([N,D,H,W] inside the network,
/// [D,H,W] for whole volumes, any rank for the generic helpers).
struct LabelTensor {
  Shape shape;
  std::vector<std::uint8_t> values;

  LabelTensor() = default;
  LabelTensor(Shape s, std::vector<std::uint8_t> v);
  std::size_t numel() const { return values.size(); }
};

// 3x3x3 kernel, zero padding 1, stride 1.
struct Conv3dParams {
  Tensor weight;  // [out, in, 3, 3, 3]
  Tensor bias;    // [out]
};

enum class Mode { train, eval };

struct BatchNormState {
  Tensor scale;  // [C]
  Tensor shift;  // [C]
  std::vector<double> running_mean;
  std::vector<double> running_var;
  double momentum = 0.1;
  double epsilon = 1e-5;
  bool initialized = false;  // set by the first training update or explicitly

  static BatchNormState make(std::size_t channels);
};

Tensor conv3d(const Tensor& input, const Conv3dParams& params);
Tensor maxpool3d(const Tensor& input);
Tensor upsample_nearest3d(const Tensor& input);
Tensor batchnorm3d(const Tensor& input, BatchNormState& state, Mode mode);
Tensor relu(const Tensor& input);

// Softmax over axis 1 with max subtraction.
Tensor softmax_channels(const Tensor& logits);

// Inserts a class axis of extent `classes` at position 1 (appended for rank-1
// input). Never tracks gradients.
Tensor one_hot(const LabelTensor& labels, std::size_t classes);

// Keeps the element at index factor*i along each of the trailing
// `spatial_axes` axes.
LabelTensor downsample_labels_nearest(const LabelTensor& labels, std::size_t factor,
                                      std::size_t spatial_axes = 3);

// Channel argmax of [N,K,...] probabilities; ties go to the lowest class.
LabelTensor argmax_channels(const Tensor& probs);

}  // namespace meunet
