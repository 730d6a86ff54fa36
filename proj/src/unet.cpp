#include "meunet/unet.hpp"

#include <cmath>
#include <optional>

#include "meunet/ops.hpp"
#include "meunet/rng.hpp"

namespace meunet {

namespace {

Tensor he_uniform(Shape shape, std::size_t fan_in, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = rng.uniform(-bound, bound);
  return Tensor(std::move(shape), std::move(v), true);
}

Conv3dParams make_conv(std::size_t cin, std::size_t cout, Rng& rng) {
  return {he_uniform({cout, cin, 3, 3, 3}, cin * 27, rng), Tensor::zeros({cout}, true)};
}

ConvBlock make_block(std::size_t cin, std::size_t cout, Rng& rng) {
  return {make_conv(cin, cout, rng), BatchNormState::make(cout)};
}

Tensor deep_copy(const Tensor& t) { return Tensor(t.shape(), {t.values().begin(), t.values().end()}, t.requires_grad()); }

ConvBlock copy_block(const ConvBlock& b) {
  ConvBlock c;
  c.conv = {deep_copy(b.conv.weight), deep_copy(b.conv.bias)};
  c.norm = b.norm;
  c.norm.scale = deep_copy(b.norm.scale);
  c.norm.shift = deep_copy(b.norm.shift);
  return c;
}

std::string level_tag(const char* kind, std::size_t level) { return kind + std::to_string(level); }

}  // namespace

UNetConfig UNetConfig::desk() { return UNetConfig{}; }

UNetConfig UNetConfig::paper() {
  UNetConfig c;
  c.levels = 5;
  c.encoder_channels = {16, 32, 64, 128, 128};
  c.decoder_channels = {16, 16, 32, 64};
  return c;
}

UNetConfig UNetConfig::desk_meunet() {
  auto c = desk();
  c.aux_head_levels = {2};
  return c;
}

UNetConfig UNetConfig::paper_meunet() {
  auto c = paper();
  c.aux_head_levels = {2};
  return c;
}

void UNetConfig::validate() const {
  if (levels < 2) throw ConfigError("unet: need at least 2 levels, got " + std::to_string(levels));
  if (encoder_channels.size() != levels) {
    throw ConfigError("unet: " + std::to_string(encoder_channels.size()) + " encoder widths for " +
                      std::to_string(levels) + " levels");
  }
  if (decoder_channels.size() != levels - 1) {
    throw ConfigError("unet: " + std::to_string(decoder_channels.size()) + " decoder widths, expected " +
                      std::to_string(levels - 1));
  }
  for (auto c : encoder_channels)
    if (c == 0) throw ConfigError("unet: zero encoder width");
  for (auto c : decoder_channels)
    if (c == 0) throw ConfigError("unet: zero decoder width");
  if (in_channels == 0) throw ConfigError("unet: zero input channels");
  if (num_classes < 2) throw ConfigError("unet: need at least 2 classes");
  if (num_classes > 255) throw ConfigError("unet: at most 255 classes");
  for (auto l : aux_head_levels) {
    if (l < 2 || l > levels - 1) {
      throw ConfigError("unet: auxiliary head level " + std::to_string(l) + " outside [2, " +
                        std::to_string(levels - 1) + "]");
    }
  }
  if (postconcat && preconcat) throw ConfigError("unet: postconcat and preconcat are exclusive");
}

void UNetConfig::check_extents(const Shape& spatial) const {
  const std::size_t div = min_divisor();
  static const char* axes[] = {"D", "H", "W"};
  for (std::size_t i = 0; i < spatial.size(); ++i) {
    if (spatial[i] % div != 0) {
      // Name the first level whose pooling input would have an odd extent.
      std::size_t level = 1, e = spatial[i];
      while (e % 2 == 0 && level < levels) {
        e /= 2;
        ++level;
      }
      throw ConfigError("unet: extent " + std::string(axes[i % 3]) + "=" + std::to_string(spatial[i]) +
                        " not divisible by " + std::to_string(div) + " (level " + std::to_string(level) +
                        " cannot be pooled)");
    }
  }
}

std::size_t UNetConfig::encoder_input_channels(std::size_t level) const {
  if (level == 1) return in_channels + (preconcat ? num_classes : 0);
  return encoder_channels[level - 2];
}

std::size_t UNetConfig::upsampled_channels(std::size_t level) const {
  return level == levels - 1 ? encoder_channels[levels - 1] : decoder_channels[level];
}

std::size_t UNetConfig::decoder_input_channels(std::size_t level) const {
  return upsampled_channels(level) + encoder_channels[level - 1] + (postconcat ? num_classes : 0);
}

UNet UNet::build(const UNetConfig& config, std::uint64_t seed) {
  config.validate();
  UNet net;
  net.config_ = config;
  Rng rng(seed);
  for (std::size_t l = 1; l <= config.levels; ++l) {
    const std::size_t c = config.encoder_channels[l - 1];
    net.encoder_.push_back({make_block(config.encoder_input_channels(l), c, rng), make_block(c, c, rng)});
  }
  for (std::size_t l = 1; l < config.levels; ++l) {
    const std::size_t c = config.decoder_channels[l - 1];
    net.decoder_.push_back({make_block(config.decoder_input_channels(l), c, rng), make_block(c, c, rng)});
  }
  net.heads_.emplace(1, make_conv(config.decoder_channels[0], config.num_classes, rng));
  for (auto l : config.aux_head_levels) {
    net.heads_.emplace(l, make_conv(config.decoder_channels[l - 1], config.num_classes, rng));
  }
  return net;
}

UNet UNet::clone() const {
  UNet net;
  net.config_ = config_;
  net.mode_ = mode_;
  for (const auto& lvl : encoder_) net.encoder_.push_back({copy_block(lvl[0]), copy_block(lvl[1])});
  for (const auto& lvl : decoder_) net.decoder_.push_back({copy_block(lvl[0]), copy_block(lvl[1])});
  for (const auto& [l, h] : heads_) net.heads_.emplace(l, Conv3dParams{deep_copy(h.weight), deep_copy(h.bias)});
  return net;
}

std::vector<Parameter> UNet::parameters() const {
  std::vector<Parameter> out;
  auto add_block = [&out](const std::string& prefix, std::size_t level, const ConvBlock& b, int i) {
    const std::string conv = prefix + ".conv" + std::to_string(i);
    const std::string bn = prefix + ".bn" + std::to_string(i);
    out.push_back({conv + ".weight", level, b.conv.weight});
    out.push_back({conv + ".bias", level, b.conv.bias});
    out.push_back({bn + ".scale", level, b.norm.scale});
    out.push_back({bn + ".shift", level, b.norm.shift});
  };
  for (std::size_t l = 1; l <= encoder_.size(); ++l)
    for (int i = 0; i < 2; ++i) add_block("enc.l" + std::to_string(l), l, encoder_[l - 1][i], i);
  for (std::size_t l = decoder_.size(); l >= 1; --l)
    for (int i = 0; i < 2; ++i) add_block("dec.l" + std::to_string(l), l, decoder_[l - 1][i], i);
  for (const auto& [l, h] : heads_) {
    out.push_back({"head.l" + std::to_string(l) + ".weight", l, h.weight});
    out.push_back({"head.l" + std::to_string(l) + ".bias", l, h.bias});
  }
  return out;
}

std::vector<NamedBuffer> UNet::buffers() {
  std::vector<NamedBuffer> out;
  auto add_block = [&out](const std::string& prefix, ConvBlock& b, int i) {
    const std::string bn = prefix + ".bn" + std::to_string(i);
    out.push_back({bn + ".running_mean", &b.norm.running_mean});
    out.push_back({bn + ".running_var", &b.norm.running_var});
  };
  for (std::size_t l = 1; l <= encoder_.size(); ++l)
    for (int i = 0; i < 2; ++i) add_block("enc.l" + std::to_string(l), encoder_[l - 1][i], i);
  for (std::size_t l = decoder_.size(); l >= 1; --l)
    for (int i = 0; i < 2; ++i) add_block("dec.l" + std::to_string(l), decoder_[l - 1][i], i);
  return out;
}

std::size_t UNet::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : parameters()) n += p.value.numel();
  return n;
}

void UNet::zero_grads() {
  for (auto& p : parameters()) {
    p.value.mutable_grad();
    p.value.zero_grad();
  }
}

Conv3dParams& UNet::head(std::size_t level) {
  auto it = heads_.find(level);
  if (it == heads_.end()) throw ConfigError("unet: no segmentation head at level " + std::to_string(level));
  return it->second;
}

void UNet::check_input(const Tensor& x, std::size_t channels, const char* what) const {
  if (x.dim() != 5) throw ShapeError(std::string(what) + ": expected [N,C,D,H,W], got " + shape_str(x.shape()));
  if (x.size(1) != channels) {
    throw ShapeError(std::string(what) + ": expected " + std::to_string(channels) + " channels, got " +
                     shape_str(x.shape()));
  }
  config_.check_extents({x.size(2), x.size(3), x.size(4)});
}

Tensor UNet::run_block(ConvBlock& block, const Tensor& x) {
  return relu(batchnorm3d(conv3d(x, block.conv), block.norm, mode_));
}

Tensor UNet::run_level(std::array<ConvBlock, 2>& blocks, const Tensor& x) {
  return run_block(blocks[1], run_block(blocks[0], x));
}

std::vector<Tensor> UNet::encode(const Tensor& x, bool gate_first_level) {
  std::vector<Tensor> skips;
  Tensor h = x;
  for (std::size_t l = 1; l <= config_.levels; ++l) {
    std::optional<NoGradGuard> gate;
    if (gate_first_level && l == 1) gate.emplace();
    {
      CensusTag tag(level_tag("enc", l));
      h = run_level(encoder_[l - 1], h);
    }
    if (observer_) observer_("enc.l" + std::to_string(l), h);
    skips.push_back(h);
    if (l < config_.levels) {
      CensusTag tag(level_tag("pool", l));
      h = maxpool3d(h);
    }
  }
  return skips;
}

Tensor UNet::decode(const std::vector<Tensor>& skips, std::size_t lowest_level, const GuidancePyramid* guidance) {
  Tensor h = skips.back();
  for (std::size_t l = config_.levels - 1; l >= lowest_level; --l) {
    CensusTag tag(level_tag("dec", l));
    std::vector<Tensor> parts{upsample_nearest3d(h), skips[l - 1]};
    if (guidance) parts.push_back(guidance->levels[l - 1]);
    h = run_level(decoder_[l - 1], concat(parts, 1));
  }
  return h;
}

Tensor UNet::apply_head(std::size_t level, const Tensor& features) {
  CensusTag tag(level_tag("head", level));
  return conv3d(features, head(level));
}

Tensor UNet::forward_standard(const Tensor& patch) {
  if (config_.postconcat || config_.preconcat) {
    throw ConfigError("unet: forward_standard on a network built for guidance input");
  }
  check_input(patch, config_.in_channels, "forward_standard");
  return apply_head(1, decode(encode(patch, false), 1, nullptr));
}

Tensor UNet::forward_expanded(const Tensor& expanded_patch) {
  check_input(expanded_patch, config_.in_channels, "forward_expanded");
  if (!has_head(2)) throw ConfigError("unet: meU-net forward needs an auxiliary head at level 2");
  auto skips = encode(expanded_patch, true);
  return apply_head(2, decode(skips, 2, nullptr));
}

DualLogits UNet::forward_meunet_dual(const Tensor& standard_patch, const Tensor& expanded_patch) {
  check_input(standard_patch, config_.in_channels, "forward_meunet_dual");
  check_input(expanded_patch, config_.in_channels, "forward_meunet_dual");
  for (std::size_t a = 2; a < 5; ++a) {
    if (expanded_patch.size(a) < standard_patch.size(a)) {
      throw ConfigError("forward_meunet_dual: expanded patch " + shape_str(expanded_patch.shape()) +
                        " smaller than standard patch " + shape_str(standard_patch.shape()));
    }
  }
  DualLogits out;
  {
    CensusTag tag("std");
    out.standard = forward_standard(standard_patch);
  }
  {
    CensusTag tag("exp");
    out.expanded = forward_expanded(expanded_patch);
  }
  return out;
}

Tensor UNet::forward_postconcat(const Tensor& patch, const GuidancePyramid& guidance) {
  if (!config_.postconcat) throw ConfigError("unet: forward_postconcat needs postconcat = true");
  check_input(patch, config_.in_channels, "forward_postconcat");
  if (guidance.levels.size() != config_.levels - 1) {
    throw ShapeError("forward_postconcat: guidance has " + std::to_string(guidance.levels.size()) +
                     " levels, decoder has " + std::to_string(config_.levels - 1));
  }
  for (std::size_t l = 1; l < config_.levels; ++l) {
    const std::size_t f = std::size_t{1} << (l - 1);
    const Shape expected{patch.size(0), config_.num_classes, patch.size(2) / f, patch.size(3) / f, patch.size(4) / f};
    if (guidance.levels[l - 1].shape() != expected) {
      throw ShapeError("forward_postconcat: guidance level " + std::to_string(l) + " is " +
                       shape_str(guidance.levels[l - 1].shape()) + ", decoder expects " + shape_str(expected));
    }
  }
  return apply_head(1, decode(encode(patch, false), 1, &guidance));
}

Tensor UNet::forward_preconcat(const Tensor& patch, const Tensor& guidance) {
  if (!config_.preconcat) throw ConfigError("unet: forward_preconcat needs preconcat = true");
  const Tensor input = concat({patch, guidance}, 1);
  check_input(input, config_.encoder_input_channels(1), "forward_preconcat");
  return apply_head(1, decode(encode(input, false), 1, nullptr));
}

}  // namespace meunet
