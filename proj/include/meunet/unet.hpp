#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "meunet/errors.hpp"
#include "meunet/nn.hpp"
#include "meunet/tensor.hpp"

namespace meunet {

struct UNetConfig {
  std::size_t levels = 4;
  std::vector<std::size_t> encoder_channels{8, 16, 32, 64};
  std::vector<std::size_t> decoder_channels{8, 8, 16};
  std::size_t in_channels = 1;
  std::size_t num_classes = 3;
  std::set<std::size_t> aux_head_levels;  // decoder levels >= 2 carrying a head
  bool postconcat = false;                // guidance at the start of every decoder level
  bool preconcat = false;                 // guidance as extra input channels

  static UNetConfig desk();
  static UNetConfig paper();
  static UNetConfig desk_meunet();
  static UNetConfig paper_meunet();

  void validate() const;
  // Every spatial extent must be divisible by 2^(levels-1).
  void check_extents(const Shape& spatial) const;
  std::size_t encoder_input_channels(std::size_t level) const;
  std::size_t decoder_input_channels(std::size_t level) const;
  std::size_t upsampled_channels(std::size_t level) const;
  std::size_t min_divisor() const { return std::size_t{1} << (levels - 1); }

  bool operator==(const UNetConfig&) const = default;
};

struct ConvBlock {
  Conv3dParams conv;
  BatchNormState norm;
};

struct Parameter {
  std::string name;
  std::size_t level = 0;  // resolution level the parameter operates at
  Tensor value;
};

struct NamedBuffer {
  std::string name;
  std::vector<double>* values;
};

/// One-hot guidance per decoder level: levels[l-1] is [N,K,D/2^(l-1),...].
struct GuidancePyramid {
  std::vector<Tensor> levels;
};

struct DualLogits {
  Tensor standard;  // [N,K,P,P,P] from the level-1 head
  Tensor expanded;  // [N,K,E/2,E/2,E/2] from the level-2 head
};

using ActivationObserver = std::function<void(std::string_view, const Tensor&)>;

class UNet {
 public:
  static UNet build(const UNetConfig& config, std::uint64_t seed);
  // Deep copy: parameters and running statistics get their own storage.
  UNet clone() const;

  const UNetConfig& config() const { return config_; }
  Mode mode() const { return mode_; }
  void set_mode(Mode mode) { mode_ = mode; }

  std::vector<Parameter> parameters() const;
  std::vector<NamedBuffer> buffers();
  std::size_t parameter_count() const;
  void zero_grads();

  // Called with "enc.l<k>" for each encoder level output (skip tensor).
  void set_observer(ActivationObserver observer) { observer_ = std::move(observer); }

  Tensor forward_standard(const Tensor& patch);

  /// Standard patch through the whole network with gradients; expanded patch
  /// with its level-1 encoder under no-grad and decoding stopped at level 2.
  DualLogits forward_meunet_dual(const Tensor& standard_patch, const Tensor& expanded_patch);

  // The expanded half of forward_meunet_dual on its own.
  Tensor forward_expanded(const Tensor& expanded_patch);

  Tensor forward_postconcat(const Tensor& patch, const GuidancePyramid& guidance);
  Tensor forward_preconcat(const Tensor& patch, const Tensor& guidance);

  // Level-l head logits; level 1 always exists, others per aux_head_levels.
  bool has_head(std::size_t level) const { return heads_.count(level) != 0; }
  Conv3dParams& head(std::size_t level);
  ConvBlock& encoder_block(std::size_t level, std::size_t index) { return encoder_.at(level - 1).at(index); }
  ConvBlock& decoder_block(std::size_t level, std::size_t index) { return decoder_.at(level - 1).at(index); }

 private:
  Tensor run_block(ConvBlock& block, const Tensor& x);
  Tensor run_level(std::array<ConvBlock, 2>& blocks, const Tensor& x);
  std::vector<Tensor> encode(const Tensor& x, bool gate_first_level);
  Tensor decode(const std::vector<Tensor>& skips, std::size_t lowest_level, const GuidancePyramid* guidance);
  Tensor apply_head(std::size_t level, const Tensor& features);
  void check_input(const Tensor& x, std::size_t channels, const char* what) const;

  UNetConfig config_;
  Mode mode_ = Mode::train;
  std::vector<std::array<ConvBlock, 2>> encoder_;
  std::vector<std::array<ConvBlock, 2>> decoder_;
  std::map<std::size_t, Conv3dParams> heads_;
  ActivationObserver observer_;
};

}  // namespace meunet
