#include "meunet/inference.hpp"

#include "meunet/sampler.hpp"

namespace meunet {

FusionMask::FusionMask(std::size_t p) : P(p), weights(p * p * p, 1.0) {
  if (p == 0 || p % 4 != 0) throw ConfigError("fusion mask: P=" + std::to_string(p) + " must be a positive multiple of 4");
  const std::size_t lo = p / 4, hi = p / 4 + p / 2;
  for (std::size_t z = lo; z < hi; ++z)
    for (std::size_t y = lo; y < hi; ++y)
      for (std::size_t x = lo; x < hi; ++x) weights[(z * p + y) * p + x] = 2.0;
}

FusedPrediction fuse_predict(const PatchPredictor& predictor, const Volume& image, std::size_t P, std::size_t stride) {
  const Dims d = image.dims;
  if (d[0] == 0 || d[1] == 0 || d[2] == 0) throw DataError("fuse_predict: empty volume");
  if (stride == 0 || stride > P) throw ConfigError("fuse_predict: stride must be in [1, P]");
  const FusionMask mask(P);
  std::size_t K = 0;
  std::vector<double> acc, wsum(image.voxels(), 0.0);
  for (const auto& origin : tile_origins(d, P, stride)) {
    const auto patch = crop_padded(image,
                                   {static_cast<std::int64_t>(origin[0]), static_cast<std::int64_t>(origin[1]),
                                    static_cast<std::int64_t>(origin[2])},
                                   P, 0.0f);
    Tensor logits = predictor(to_input(patch), origin);
    if (logits.dim() != 5 || logits.size(0) != 1 || logits.size(2) != P || logits.size(3) != P || logits.size(4) != P) {
      throw ShapeError("fuse_predict: predictor returned " + shape_str(logits.shape()));
    }
    const Tensor probs = no_grad([&] { return softmax_channels(logits); });
    if (K == 0) {
      K = probs.size(1);
      acc.assign(K * image.voxels(), 0.0);
    } else if (probs.size(1) != K) {
      throw ShapeError("fuse_predict: class count changed between patches");
    }
    const auto pv = probs.values();
    const std::size_t ez = std::min(P, d[0] - origin[0]), ey = std::min(P, d[1] - origin[1]),
                      ex = std::min(P, d[2] - origin[2]);
    for (std::size_t z = 0; z < ez; ++z)
      for (std::size_t y = 0; y < ey; ++y)
        for (std::size_t x = 0; x < ex; ++x) {
          const double w = mask.at(z, y, x);
          const std::size_t v = ((origin[0] + z) * d[1] + origin[1] + y) * d[2] + origin[2] + x;
          wsum[v] += w;
          for (std::size_t c = 0; c < K; ++c) acc[c * image.voxels() + v] += w * pv[((c * P + z) * P + y) * P + x];
        }
  }
  FusedPrediction out;
  out.probs = ProbVolume(d, K);
  out.probs.spacing_um = image.spacing_um;
  for (std::size_t c = 0; c < K; ++c)
    for (std::size_t v = 0; v < image.voxels(); ++v)
      out.probs.values[c * image.voxels() + v] = acc[c * image.voxels() + v] / wsum[v];
  out.labels = argmax_volume(out.probs);
  return out;
}

PatchPredictor standard_predictor(UNet& net) {
  return [&net](const Tensor& patch, const Dims&) {
    net.set_mode(Mode::eval);
    NoGradGuard off;
    return net.forward_standard(patch);
  };
}

LabelVolume argmax_volume(const ProbVolume& probs) {
  LabelVolume out(probs.dims);
  out.spacing_um = probs.spacing_um;
  const std::size_t n = probs.voxels();
  for (std::size_t v = 0; v < n; ++v) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < probs.channels; ++c)
      if (probs.values[c * n + v] > probs.values[best * n + v]) best = c;
    out.values[v] = static_cast<std::uint8_t>(best);
  }
  return out;
}

Volume to_f32(const ProbVolume& probs) {
  Volume v(probs.dims, probs.channels);
  v.spacing_um = probs.spacing_um;
  for (std::size_t i = 0; i < v.values.size(); ++i) v.values[i] = static_cast<float>(probs.values[i]);
  return v;
}

ProbVolume to_f64(const Volume& probs) {
  ProbVolume v(probs.dims, probs.channels);
  v.spacing_um = probs.spacing_um;
  for (std::size_t i = 0; i < v.values.size(); ++i) v.values[i] = probs.values[i];
  return v;
}

double dice_metric(const LabelVolume& pred, const LabelVolume& truth, std::uint8_t c) {
  if (pred.values.size() != truth.values.size()) throw ShapeError("dice_metric: volumes differ in size");
  std::size_t a = 0, b = 0, both = 0;
  for (std::size_t i = 0; i < pred.values.size(); ++i) {
    const bool in_a = pred.values[i] == c, in_b = truth.values[i] == c;
    a += in_a;
    b += in_b;
    both += in_a && in_b;
  }
  if (a + b == 0) return 1.0;
  return 2.0 * static_cast<double>(both) / static_cast<double>(a + b);
}

}  // namespace meunet
