#include "meunet/loss.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "meunet/ops.hpp"

namespace meunet {

ClassWeights class_weights(std::span<const std::uint64_t> counts) {
  if (counts.empty()) throw std::invalid_argument("class_weights: no classes");
  double total = 0.0;
  for (std::size_t i = 0; i < counts.size(); ++i) {
    if (counts[i] == 0) {
      throw std::invalid_argument("class_weights: class " + std::to_string(i) +
                                  " has zero voxels in the counting corpus");
    }
    total += static_cast<double>(counts[i]);
  }
  std::vector<double> ratio(counts.size());
  for (std::size_t i = 0; i < counts.size(); ++i) ratio[i] = total / static_cast<double>(counts[i]);
  const double mx = *std::max_element(ratio.begin(), ratio.end());
  double z = 0.0;
  for (auto& r : ratio) {
    r = std::exp(r - mx);
    z += r;
  }
  for (auto& r : ratio) r /= z;
  return ClassWeights{std::move(ratio)};
}

Tensor soft_dice_loss(const Tensor& probs, const Tensor& target_one_hot, double epsilon) {
  if (probs.shape() != target_one_hot.shape()) {
    throw ShapeError("soft_dice_loss: shape mismatch " + shape_str(probs.shape()) + " vs " +
                     shape_str(target_one_hot.shape()));
  }
  if (!(epsilon > 0.0)) throw std::invalid_argument("soft_dice_loss: epsilon must be positive");
  const Tensor intersection = sum_channels(mul(probs, target_one_hot));
  const Tensor denom = add_scalar(add(sum_channels(target_one_hot), sum_channels(probs)), epsilon);
  const Tensor per_class = add_scalar(mul_scalar(div(intersection, denom), -2.0), 1.0);
  return mean(per_class);
}

Tensor weighted_cross_entropy(const Tensor& probs, const LabelTensor& labels, const ClassWeights& weights) {
  if (probs.dim() < 2) throw ShapeError("weighted_cross_entropy: probs need rank >= 2");
  const std::size_t n = probs.size(0), k = probs.size(1);
  Shape expected = probs.shape();
  expected.erase(expected.begin() + 1);
  if (labels.shape != expected) {
    throw ShapeError("weighted_cross_entropy: labels " + shape_str(labels.shape) + " do not match probs " +
                     shape_str(probs.shape()));
  }
  if (weights.size() != k) {
    throw ShapeError("weighted_cross_entropy: " + std::to_string(weights.size()) + " weights for " +
                     std::to_string(k) + " classes");
  }
  const std::size_t inner = probs.numel() / (n * k);
  const double voxels = static_cast<double>(n * inner);
  const auto pv = probs.values();
  double total = 0.0;
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t v = 0; v < inner; ++v) {
      const auto y = labels.values[b * inner + v];
      if (y >= k) {
        throw std::out_of_range("weighted_cross_entropy: label " + std::to_string(y) + " outside [0, " +
                                std::to_string(k) + ")");
      }
      const double p = std::max(pv[(b * k + y) * inner + v], kProbabilityFloor);
      total += weights.values[y] * -std::log(p);
    }
  return make_op_result("weighted_cross_entropy", Shape{}, {total / voxels}, {probs},
                        [probs, labels, w = weights.values, n, k, inner, voxels](std::span<const double> go,
                                                                                  std::span<double* const> gi) {
                          if (!gi[0]) return;
                          const auto pv = probs.values();
                          for (std::size_t b = 0; b < n; ++b)
                            for (std::size_t v = 0; v < inner; ++v) {
                              const auto y = labels.values[b * inner + v];
                              const std::size_t i = (b * k + y) * inner + v;
                              if (pv[i] < kProbabilityFloor) continue;
                              gi[0][i] -= go[0] * w[y] / (voxels * pv[i]);
                            }
                        });
}

Tensor combined_loss(const Tensor& logits, const LabelTensor& labels, const ClassWeights& weights, double epsilon) {
  if (logits.dim() < 2) throw ShapeError("combined_loss: logits need rank >= 2");
  const Tensor probs = softmax_channels(logits);
  const Tensor target = one_hot(labels, logits.size(1));
  if (target.shape() != probs.shape()) {
    throw ShapeError("combined_loss: labels " + shape_str(labels.shape) + " do not match logits " +
                     shape_str(logits.shape()));
  }
  return add(soft_dice_loss(probs, target, epsilon), weighted_cross_entropy(probs, labels, weights));
}

}  // namespace meunet
