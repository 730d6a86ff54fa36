#include "meunet/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <numeric>

#include "meunet/checkpoint.hpp"
#include "meunet/guidance.hpp"
#include "meunet/ops.hpp"

namespace meunet {

using nlohmann::json;

void adam_step(std::span<const Parameter> params, AdamState& s) {
  if (s.m.empty()) {
    for (const auto& p : params) {
      s.m.emplace_back(p.value.numel(), 0.0);
      s.v.emplace_back(p.value.numel(), 0.0);
    }
  }
  if (s.m.size() != params.size()) throw std::logic_error("adam_step: parameter set changed between steps");
  for (const auto& p : params)
    if (!p.value.has_grad()) throw std::logic_error("adam_step: parameter " + p.name + " has no gradient");
  ++s.step;
  const double c1 = 1.0 - std::pow(s.beta1, static_cast<double>(s.step));
  const double c2 = 1.0 - std::pow(s.beta2, static_cast<double>(s.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor t = params[i].value;
    const auto g = t.grad();
    auto w = t.mutable_values();
    auto& m = s.m[i];
    auto& v = s.v[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      m[j] = s.beta1 * m[j] + (1 - s.beta1) * g[j];
      v[j] = s.beta2 * v[j] + (1 - s.beta2) * g[j] * g[j];
      w[j] -= s.lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + s.epsilon);
    }
  }
}

void adam_step(const std::vector<Parameter>& params, AdamState& state) {
  adam_step(std::span<const Parameter>(params), state);
}

bool StopMonitor::update(double metric) {
  if (!seen_ || metric > best_) {
    seen_ = true;
    best_ = metric;
    since_ = 0;
    return true;
  }
  ++since_;
  return false;
}

StepLosses meunet_train_step(UNet& net, const PatchRecord& record, const ClassWeights& weights, AdamState& adam,
                             double exp_scale, double epsilon) {
  if (!record.expanded_image || !record.expanded_labels) {
    throw std::invalid_argument("meunet_train_step: record carries no expanded patch");
  }
  net.set_mode(Mode::train);
  net.zero_grads();
  const auto t = supervision_targets(record, net.config().levels, net.config().num_classes);
  const auto d = net.forward_meunet_dual(to_input(record.image), to_input(*record.expanded_image));
  const Tensor ls = combined_loss(d.standard, t.standard_labels, weights, epsilon);
  const Tensor le = combined_loss(d.expanded, t.expanded_labels, weights, epsilon);
  add(ls, mul_scalar(le, exp_scale)).backward();
  const auto params = net.parameters();
  adam_step(params, adam);
  net.zero_grads();
  return {ls.item(), le.item()};
}

double standard_train_step(UNet& net, const PatchRecord& record, const ClassWeights& weights, AdamState& adam,
                           const GuidancePyramid* guidance, double epsilon) {
  net.set_mode(Mode::train);
  net.zero_grads();
  const Tensor x = to_input(record.image);
  Tensor logits;
  if (net.config().postconcat) {
    if (!guidance) throw std::invalid_argument("standard_train_step: post-concatenation needs guidance");
    logits = net.forward_postconcat(x, *guidance);
  } else if (net.config().preconcat) {
    if (!guidance) throw std::invalid_argument("standard_train_step: pre-concatenation needs guidance");
    logits = net.forward_preconcat(x, guidance->levels.at(0));
  } else {
    logits = net.forward_standard(x);
  }
  const Tensor loss = combined_loss(logits, to_label_tensor(record.labels), weights, epsilon);
  loss.backward();
  adam_step(net.parameters(), adam);
  net.zero_grads();
  return loss.item();
}

std::string to_string(NetKind k) {
  switch (k) {
    case NetKind::unet: return "unet";
    case NetKind::meunet: return "meunet";
    case NetKind::postconcat: return "postconcat";
    case NetKind::preconcat: return "preconcat";
  }
  return "?";
}

NetKind net_kind_from_string(const std::string& s) {
  if (s == "unet") return NetKind::unet;
  if (s == "meunet") return NetKind::meunet;
  if (s == "postconcat") return NetKind::postconcat;
  if (s == "preconcat") return NetKind::preconcat;
  throw ConfigError("unknown network kind '" + s + "' (unet, meunet, postconcat, preconcat)");
}

Split split_cases(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(seed);
  rng.shuffle(idx.begin(), idx.end());
  std::size_t n_train = n * 7 / 10;
  std::size_t n_val = static_cast<std::size_t>(std::llround(n * 0.1));
  if (n >= 3) {
    n_val = std::max<std::size_t>(n_val, 1);
    n_train = std::max<std::size_t>(n_train, 1);
    if (n_train + n_val >= n) n_train = n - n_val - 1;
  }
  Split s;
  s.train.assign(idx.begin(), idx.begin() + n_train);
  s.val.assign(idx.begin() + n_train, idx.begin() + n_train + n_val);
  s.test.assign(idx.begin() + n_train + n_val, idx.end());
  return s;
}

json RunConfig::to_json() const {
  return json{{"seed", seed},
              {"kind", to_string(kind)},
              {"network", config_to_json(net)},
              {"plan",
               {{"P", plan.P},
                {"k", plan.k},
                {"E", plan.E},
                {"stride", plan.stride},
                {"fg_threshold", plan.fg_threshold},
                {"bg_accept_prob", plan.bg_accept_prob},
                {"augment", plan.augment}}},
              {"lr", lr},
              {"patience", patience},
              {"max_epochs", max_epochs},
              {"patches_per_epoch", patches_per_epoch},
              {"volumes", volumes},
              {"dims", dims},
              {"data_dir", data_dir}};
}

RunConfig RunConfig::from_json(const json& j) {
  RunConfig c;
  try {
    c.seed = j.value("seed", c.seed);
    c.kind = net_kind_from_string(j.value("kind", to_string(c.kind)));
    if (j.contains("network"))
      c.net = config_from_json(j.at("network"));
    else
      c.net = c.kind == NetKind::meunet ? UNetConfig::desk_meunet() : UNetConfig::desk();
    if (c.kind == NetKind::postconcat) c.net.postconcat = true;
    if (c.kind == NetKind::preconcat) c.net.preconcat = true;
    if (c.kind == NetKind::meunet && c.net.aux_head_levels.count(2) == 0) c.net.aux_head_levels.insert(2);
    const json p = j.value("plan", json::object());
    c.plan.P = p.value("P", c.plan.P);
    c.plan.k = p.value("k", c.plan.k);
    c.plan.stride = p.value("stride", c.plan.stride);
    c.plan.E = p.value("E", expanded_edge(c.plan.P, c.plan.k, c.net.levels));
    c.plan.fg_threshold = p.value("fg_threshold", c.plan.fg_threshold);
    c.plan.bg_accept_prob = p.value("bg_accept_prob", c.plan.bg_accept_prob);
    c.plan.augment = p.value("augment", c.plan.augment);
    c.plan.seed = c.seed;
    c.lr = j.value("lr", c.lr);
    c.patience = j.value("patience", c.patience);
    c.max_epochs = j.value("max_epochs", c.max_epochs);
    c.patches_per_epoch = j.value("patches_per_epoch", c.patches_per_epoch);
    c.volumes = j.value("volumes", c.volumes);
    c.dims = j.value("dims", c.dims);
    c.data_dir = j.value("data_dir", c.data_dir);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("run config: ") + e.what());
  }
  c.validate();
  return c;
}

void RunConfig::validate() const {
  net.validate();
  plan.validate(net.levels);
  if (!(lr > 0)) throw ConfigError("run config: lr must be positive");
  if (max_epochs == 0) throw ConfigError("run config: max_epochs must be >= 1");
  if (kind == NetKind::meunet && !net.aux_head_levels.count(2)) {
    throw ConfigError("run config: meunet needs an auxiliary head at level 2");
  }
  if ((kind == NetKind::postconcat) != net.postconcat || (kind == NetKind::preconcat) != net.preconcat) {
    throw ConfigError("run config: network concatenation flags disagree with kind " + to_string(kind));
  }
}

std::vector<std::uint64_t> class_counts(const std::vector<const LabelVolume*>& labels, std::size_t classes) {
  std::vector<std::uint64_t> counts(classes, 0);
  for (const auto* l : labels)
    for (auto v : l->values) {
      if (v >= classes) throw DataError("label " + std::to_string(v) + " outside [0, " + std::to_string(classes) + ")");
      ++counts[v];
    }
  return counts;
}

FusedPrediction predict_case(UNet& net, NetKind kind, const Case& c, std::size_t P, std::size_t stride) {
  net.set_mode(Mode::eval);
  const auto& cfg = net.config();
  if (kind == NetKind::postconcat || kind == NetKind::preconcat) {
    if (!c.guidance) throw DataError("case " + c.id + " has no stage-1 guidance");
    const LabelVolume& g = *c.guidance;
    return fuse_predict(
        [&](const Tensor& patch, const Dims& origin) {
          NoGradGuard off;
          if (kind == NetKind::postconcat)
            return net.forward_postconcat(patch, guidance_for_patch(g, origin, P, cfg.levels, cfg.num_classes));
          return net.forward_preconcat(patch, guidance_input(g, origin, P, cfg.num_classes));
        },
        c.image, P, stride);
  }
  return fuse_predict(standard_predictor(net), c.image, P, stride);
}

TrainResult train_network(const RunConfig& config, const std::vector<Case>& train, const std::vector<Case>& val) {
  config.validate();
  if (train.empty()) throw DataError("train_network: no training cases");
  const auto& cfg = config.net;
  const bool guided = config.kind == NetKind::postconcat || config.kind == NetKind::preconcat;
  const bool dual = config.kind == NetKind::meunet;

  std::vector<const LabelVolume*> corpus;
  for (const auto& c : train) corpus.push_back(&c.labels);
  const ClassWeights weights = class_weights(class_counts(corpus, cfg.num_classes));

  Rng sampler(config.seed);
  std::vector<PatchRecord> pool;
  std::vector<const Case*> owner;
  for (const auto& c : train) {
    if (guided && !c.guidance) throw DataError("train_network: case " + c.id + " has no stage-1 guidance");
    for (auto& r : sample_patches(c.id, c.image, c.labels, config.plan, dual, sampler)) {
      pool.push_back(std::move(r));
      owner.push_back(&c);
    }
  }
  if (pool.empty()) throw DataError("train_network: no patch passed the sampling check");

  UNet net = UNet::build(cfg, config.seed);
  AdamState adam;
  adam.lr = config.lr;
  StopMonitor monitor(config.patience);
  Rng shuffler(config.seed ^ 0x9e3779b97f4a7c15ULL);
  Rng augmenter(config.seed ^ 0xa5a5a5a5a5a5a5a5ULL);
  TrainResult result{net.clone(), -1.0, {}};

  std::vector<std::size_t> order(pool.size());
  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    shuffler.shuffle(order.begin(), order.end());
    if (config.patches_per_epoch && order.size() > config.patches_per_epoch) order.resize(config.patches_per_epoch);
    double loss_sum = 0;
    for (auto i : order) {
      PatchRecord rec = pool[i];
      if (config.plan.augment) {
        augment(rec.image, rec.labels, augmenter);
        if (rec.expanded_image) augment(*rec.expanded_image, *rec.expanded_labels, augmenter);
      }
      if (dual) {
        const auto l = meunet_train_step(net, rec, weights, adam);
        loss_sum += l.standard + l.expanded;
      } else if (guided) {
        const auto g = guidance_for_patch(*owner[i]->guidance, rec.origin, config.plan.P, cfg.levels, cfg.num_classes);
        loss_sum += standard_train_step(net, rec, weights, adam, &g);
      } else {
        loss_sum += standard_train_step(net, rec, weights, adam);
      }
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(order.size());
    rec.val_dice.assign(cfg.num_classes, 0.0);
    const auto& judged = val.empty() ? train : val;
    for (const auto& c : judged) {
      const auto pred = predict_case(net, config.kind, c, config.plan.P, config.plan.stride);
      for (std::size_t k = 0; k < cfg.num_classes; ++k)
        rec.val_dice[k] += dice_metric(pred.labels, c.labels, static_cast<std::uint8_t>(k)) / judged.size();
    }
    double fg = 0;
    for (std::size_t k = 1; k < cfg.num_classes; ++k) fg += rec.val_dice[k];
    fg /= static_cast<double>(cfg.num_classes - 1);
    result.history.push_back(rec);
    if (monitor.update(fg)) {
      result.best = net.clone();
      result.best_metric = fg;
    }
    if (monitor.should_stop()) break;
  }
  result.best.set_mode(Mode::eval);
  return result;
}

std::string history_csv(const std::vector<EpochRecord>& history) {
  std::string out = "epoch,train_loss";
  if (!history.empty())
    for (std::size_t k = 0; k < history.front().val_dice.size(); ++k) out += ",val_dice_" + std::to_string(k);
  out += '\n';
  char buf[64];
  for (const auto& r : history) {
    out += std::to_string(r.epoch);
    std::snprintf(buf, sizeof buf, ",%.10f", r.train_loss);
    out += buf;
    for (double d : r.val_dice) {
      std::snprintf(buf, sizeof buf, ",%.10f", d);
      out += buf;
    }
    out += '\n';
  }
  return out;
}

}  // namespace meunet
