#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "meunet/nn.hpp"
#include "meunet/tensor.hpp"

namespace meunet {

inline constexpr double kDiceEpsilon = 1e-5;
inline constexpr double kProbabilityFloor = 1e-12;

struct ClassWeights {
  std::vector<double> values;
  std::size_t size() const { return values.size(); }
};

/// weight_i = softmax_i(total / count_i), from voxel counts of the whole
/// training label corpus. Every count must be positive.
ClassWeights class_weights(std::span<const std::uint64_t> counts);

/// Per-class soft Dice 1 - 2*sum(L*P) / (sum(L) + sum(P) + eps), sums over the
/// batch and all voxels, averaged over the K classes.
Tensor soft_dice_loss(const Tensor& probs, const Tensor& target_one_hot, double epsilon = kDiceEpsilon);

/// Mean over voxels of weights[y] * -log(max(p_y, 1e-12)).
Tensor weighted_cross_entropy(const Tensor& probs, const LabelTensor& labels, const ClassWeights& weights);

/// softmax -> soft Dice + weighted cross-entropy, summed 1:1.
Tensor combined_loss(const Tensor& logits, const LabelTensor& labels, const ClassWeights& weights,
                     double epsilon = kDiceEpsilon);

}  // namespace meunet
