#include "meunet/cascade.hpp"

#include "meunet/checkpoint.hpp"

namespace meunet {

namespace fs = std::filesystem;

ProbVolume ensemble(const ProbVolume& a, const ProbVolume& b) {
  if (a.dims != b.dims || a.channels != b.channels) {
    throw ShapeError("ensemble: " + std::to_string(a.channels) + " vs " + std::to_string(b.channels) +
                     " channels or differing extents");
  }
  ProbVolume out = a;
  for (std::size_t i = 0; i < out.values.size(); ++i) out.values[i] = 0.5 * (a.values[i] + b.values[i]);
  return out;
}

std::string stage1_key(const std::vector<fs::path>& branches) {
  std::string joined;
  for (const auto& b : branches) {
    if (!fs::exists(b / "manifest.json")) throw DataError("stage 1: missing checkpoint " + b.string());
    joined += checkpoint_digest(b);
  }
  return sha256_hex(joined.data(), joined.size());
}

namespace {

fs::path cache_dir(const fs::path& root, const std::string& id, const std::string& key) { return root / id / key; }

}  // namespace

StageOnePrediction stage1_load_cached(const fs::path& cache_root, const std::string& volume_id,
                                      const std::string& key) {
  const auto dir = cache_dir(cache_root, volume_id, key);
  if (!fs::exists(dir / "probs.vol") || !fs::exists(dir / "argmax.vol"))
    throw DataError("stage 1: no cached prediction for " + volume_id + " under " + dir.string());
  StageOnePrediction out;
  out.volume_id = volume_id;
  out.probs = to_f64(read_volume(dir / "probs.vol"));
  out.labels = read_labels(dir / "argmax.vol");
  out.provenance = {{"key", key}, {"cached", true}};
  return out;
}

StageOnePrediction stage1_predict_full(const std::vector<fs::path>& branches, const std::string& volume_id,
                                       const Volume& image, std::size_t P, std::size_t stride,
                                       const fs::path& cache_root) {
  if (branches.empty()) throw ConfigError("stage 1: no branch checkpoints");
  const std::string key = stage1_key(branches);
  if (!cache_root.empty()) {
    const auto dir = cache_dir(cache_root, volume_id, key);
    if (fs::exists(dir / "probs.vol") && fs::exists(dir / "argmax.vol"))
      return stage1_load_cached(cache_root, volume_id, key);
  }

  ProbVolume mean;
  nlohmann::json sources = nlohmann::json::array();
  for (std::size_t i = 0; i < branches.size(); ++i) {
    UNet net = load_checkpoint(branches[i]);
    auto probs = fuse_predict(standard_predictor(net), image, P, stride).probs;
    if (i == 0) {
      mean = std::move(probs);
    } else {
      if (probs.dims != mean.dims || probs.channels != mean.channels)
        throw ShapeError("stage 1: branch " + branches[i].string() + " disagrees on output shape");
      for (std::size_t v = 0; v < mean.values.size(); ++v) mean.values[v] += probs.values[v];
    }
    sources.push_back(branches[i].string());
  }
  // sum / n; for two branches this is bit-identical to ensemble()
  const double n = static_cast<double>(branches.size());
  for (auto& v : mean.values) v /= n;

  const Volume stored = to_f32(mean);
  StageOnePrediction out;
  out.volume_id = volume_id;
  out.probs = to_f64(stored);
  out.labels = argmax_volume(out.probs);
  out.labels.spacing_um = image.spacing_um;
  out.provenance = {{"key", key}, {"branches", sources}, {"P", P}, {"stride", stride}, {"cached", false}};
  if (!cache_root.empty()) {
    const auto dir = cache_dir(cache_root, volume_id, key);
    fs::create_directories(dir);
    write_volume(dir / "probs.vol", stored);
    write_volume(dir / "argmax.vol", out.labels);
  }
  return out;
}

TrainResult train_stage2(RunConfig config, const std::vector<Case>& train, const std::vector<Case>& val) {
  for (const auto* set : {&train, &val})
    for (const auto& c : *set)
      if (!c.guidance) throw DataError("stage 2: case " + c.id + " has no cached stage-1 prediction");
  config.kind = NetKind::postconcat;
  config.net.postconcat = true;
  config.net.preconcat = false;
  config.net.aux_head_levels.clear();
  config.plan.E = config.plan.P;
  return train_network(config, train, val);
}

}  // namespace meunet
