#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "meunet/cascade.hpp"
#include "meunet/trainer.hpp"

namespace meunet {

// Phantoms "case000", "case001", ... generated with seeds seed, seed+1, ...
std::vector<Case> phantom_cases(std::size_t count, const Dims& dims, std::uint64_t seed);

// <dir>/<id>/image.vol and labels.vol for every case, plus <dir>/cases.json.
void write_cases(const std::filesystem::path& dir, const std::vector<Case>& cases);
std::vector<Case> read_cases(const std::filesystem::path& dir);

// Cases from config.data_dir, or generated phantoms when it is empty.
std::vector<Case> load_cases(const RunConfig& config);

struct DataSplit {
  std::vector<Case> train, val, test;
};
DataSplit split_dataset(const std::vector<Case>& cases, std::uint64_t seed);

// Dual-patch meU-net run with expanding factor k.
RunConfig branch_config(RunConfig base, double k);
// Single-stage plain U-net run on the same plan.
RunConfig baseline_config(RunConfig base);

struct CascadeSummary {
  std::string metrics_csv;                       // model,case,dice_0..dice_{K-1}
  std::map<std::string, std::vector<double>> mean_dice;  // model -> mean test Dice per class
  std::map<std::string, std::string> artifacts;  // relative path -> sha256
};

/// Stage-1 branches (k = 1.5 and 1.75), cached ensembled stage-1
/// predictions, the post-concatenation stage 2 and a plain U-net baseline,
/// all trained on one split; test-set predictions and metrics written
/// under `out`.
CascadeSummary run_cascade(const RunConfig& config, const std::vector<Case>& cases, const std::filesystem::path& out);

// Per-class Dice of `pred` against `truth`, as "class,dice" CSV lines.
std::string dice_csv(const LabelVolume& pred, const LabelVolume& truth, std::size_t classes);

}  // namespace meunet
