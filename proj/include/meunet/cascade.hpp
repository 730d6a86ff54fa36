#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "meunet/inference.hpp"
#include "meunet/sampler.hpp"
#include "meunet/trainer.hpp"

namespace meunet {

struct StageOnePrediction {
  std::string volume_id;
  ProbVolume probs;    // ensembled, K channels
  LabelVolume labels;  // argmax of probs
  nlohmann::json provenance;
};

// Voxelwise mean of two probability volumes.
ProbVolume ensemble(const ProbVolume& a, const ProbVolume& b);

/// Cache key for a set of branch checkpoints: SHA-256 of their digests in
/// the given order.
std::string stage1_key(const std::vector<std::filesystem::path>& branches);

/// Fused full-volume prediction per branch checkpoint, then ensembled.
/// Probabilities go through f32 so that a fresh result and a cached one are
/// the same bits. With a non-empty `cache_root` results are read from and
/// written to <cache_root>/<volume_id>/<key>/{probs,argmax}.vol.
StageOnePrediction stage1_predict_full(const std::vector<std::filesystem::path>& branches, const std::string& volume_id,
                                       const Volume& image, std::size_t P, std::size_t stride,
                                       const std::filesystem::path& cache_root = {});

// Reads a cached prediction; DataError when absent.
StageOnePrediction stage1_load_cached(const std::filesystem::path& cache_root, const std::string& volume_id,
                                      const std::string& key);

/// Post-concatenation network trained on level-1 loss only. Every case must
/// carry stage-1 guidance. The config's net is switched to postconcat with
/// no auxiliary heads.
TrainResult train_stage2(RunConfig config, const std::vector<Case>& train, const std::vector<Case>& val);

}  // namespace meunet
