#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "meunet/inference.hpp"
#include "meunet/loss.hpp"
#include "meunet/sampler.hpp"
#include "meunet/unet.hpp"
#include "meunet/volio.hpp"

namespace meunet {

struct AdamState {
  double lr = 9e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t step = 0;
  std::vector<std::vector<double>> m, v;
};

// theta -= lr * mhat / (sqrt(vhat) + eps). Throws if a parameter has no
// gradient buffer. Does not zero gradients.
void adam_step(std::span<const Parameter> params, AdamState& state);
void adam_step(const std::vector<Parameter>& params, AdamState& state);

class StopMonitor {
 public:
  explicit StopMonitor(std::size_t patience = 30) : patience_(patience) {}
  // Returns true when `metric` beats the best so far (higher is better).
  bool update(double metric);
  bool should_stop() const { return since_ > patience_; }
  double best() const { return best_; }
  std::size_t epochs_since_improvement() const { return since_; }

 private:
  std::size_t patience_;
  double best_ = -1.0;
  std::size_t since_ = 0;
  bool seen_ = false;
};

struct StepLosses {
  double standard = 0;
  double expanded = 0;
};

/// One dual-patch step: loss_std at level 1 plus exp_scale * loss_exp at
/// level 2, one backward, one Adam update, gradients zeroed afterwards.
StepLosses meunet_train_step(UNet& net, const PatchRecord& record, const ClassWeights& weights, AdamState& adam,
                             double exp_scale = 1.0, double epsilon = kDiceEpsilon);

// Level-1 combined loss only; guidance is used iff the net is post- or
// pre-concatenating.
double standard_train_step(UNet& net, const PatchRecord& record, const ClassWeights& weights, AdamState& adam,
                           const GuidancePyramid* guidance = nullptr, double epsilon = kDiceEpsilon);

enum class NetKind { unet, meunet, postconcat, preconcat };
std::string to_string(NetKind k);
NetKind net_kind_from_string(const std::string& s);

struct Case {
  std::string id;
  Volume image;
  LabelVolume labels;
  std::optional<LabelVolume> guidance;  // stage-1 argmax, for guided nets
};

struct Split {
  std::vector<std::size_t> train, val, test;
};

// 70/10/20 by seeded shuffle; every part gets at least one case when n >= 3.
Split split_cases(std::size_t n, std::uint64_t seed);

struct RunConfig {
  std::uint64_t seed = 0;
  NetKind kind = NetKind::meunet;
  UNetConfig net = UNetConfig::desk_meunet();
  PatchPlan plan = PatchPlan::desk();
  double lr = 9e-4;
  std::size_t patience = 30;
  std::size_t max_epochs = 100;
  std::size_t patches_per_epoch = 0;  // 0 = every accepted patch
  std::size_t volumes = 6;   // phantoms generated when data_dir is empty
  std::size_t dims = 64;
  std::string data_dir;      // cases written by `meunet phantom`

  nlohmann::json to_json() const;
  static RunConfig from_json(const nlohmann::json& j);
  void validate() const;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0;
  std::vector<double> val_dice;  // per class, background included
};

struct TrainResult {
  UNet best;
  double best_metric = -1;
  std::vector<EpochRecord> history;
};

// Class voxel counts over the training label corpus.
std::vector<std::uint64_t> class_counts(const std::vector<const LabelVolume*>& labels, std::size_t classes);

/// Patch pool from the training cases, sampled once with the run seed; each
/// epoch walks a seeded reshuffle. Validation: fused prediction on each val
/// case, mean foreground Dice drives the stop monitor.
TrainResult train_network(const RunConfig& config, const std::vector<Case>& train, const std::vector<Case>& val);

std::string history_csv(const std::vector<EpochRecord>& history);

// Fused prediction of the right flavour for `kind`.
FusedPrediction predict_case(UNet& net, NetKind kind, const Case& c, std::size_t P, std::size_t stride);

}  // namespace meunet
