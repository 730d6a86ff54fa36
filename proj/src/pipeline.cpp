#include "meunet/pipeline.hpp"

#include <cstdio>
#include <fstream>

#include "meunet/checkpoint.hpp"
#include "meunet/phantom.hpp"

namespace meunet {

namespace fs = std::filesystem;

std::vector<Case> phantom_cases(std::size_t count, const Dims& dims, std::uint64_t seed) {
  std::vector<Case> out;
  for (std::size_t i = 0; i < count; ++i) {
    PhantomSpec spec;
    spec.seed = seed + i;
    spec.dims = dims;
    auto p = phantom_generate(spec);
    char id[32];
    std::snprintf(id, sizeof id, "case%03zu", i);
    out.push_back({id, std::move(p.image), std::move(p.labels), {}});
  }
  return out;
}

void write_cases(const fs::path& dir, const std::vector<Case>& cases) {
  nlohmann::json ids = nlohmann::json::array();
  for (const auto& c : cases) {
    fs::create_directories(dir / c.id);
    write_volume(dir / c.id / "image.vol", c.image);
    write_volume(dir / c.id / "labels.vol", c.labels);
    ids.push_back(c.id);
  }
  std::ofstream(dir / "cases.json") << nlohmann::json{{"cases", ids}}.dump(2) << "\n";
}

std::vector<Case> read_cases(const fs::path& dir) {
  const auto index = dir / "cases.json";
  std::ifstream in(index);
  if (!in) throw DataError("no case index at " + index.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(index.string() + ": " + e.what());
  }
  std::vector<Case> out;
  for (const auto& id : j.at("cases")) {
    const auto name = id.get<std::string>();
    Case c{name, read_volume(dir / name / "image.vol"), read_labels(dir / name / "labels.vol"), {}};
    if (!same_geometry(c.image, c.labels)) throw DataError("case " + name + ": image and labels differ in extent");
    out.push_back(std::move(c));
  }
  return out;
}

std::vector<Case> load_cases(const RunConfig& config) {
  if (!config.data_dir.empty()) return read_cases(config.data_dir);
  return phantom_cases(config.volumes, {config.dims, config.dims, config.dims}, config.seed);
}

DataSplit split_dataset(const std::vector<Case>& cases, std::uint64_t seed) {
  const Split s = split_cases(cases.size(), seed);
  DataSplit d;
  for (auto i : s.train) d.train.push_back(cases[i]);
  for (auto i : s.val) d.val.push_back(cases[i]);
  for (auto i : s.test) d.test.push_back(cases[i]);
  return d;
}

RunConfig branch_config(RunConfig base, double k) {
  base.kind = NetKind::meunet;
  base.net.postconcat = base.net.preconcat = false;
  base.net.aux_head_levels.insert(2);
  base.plan.k = k;
  base.plan.E = expanded_edge(base.plan.P, k, base.net.levels);
  base.validate();
  return base;
}

RunConfig baseline_config(RunConfig base) {
  base.kind = NetKind::unet;
  base.net.postconcat = base.net.preconcat = false;
  base.net.aux_head_levels.clear();
  base.plan.k = 1.0;
  base.plan.E = base.plan.P;
  base.validate();
  return base;
}

std::string dice_csv(const LabelVolume& pred, const LabelVolume& truth, std::size_t classes) {
  if (!same_geometry(pred, truth)) throw DataError("eval: prediction and truth differ in extent");
  std::string s = "class,dice\n";
  char buf[64];
  for (std::size_t k = 0; k < classes; ++k) {
    std::snprintf(buf, sizeof buf, "%zu,%.6f\n", k, dice_metric(pred, truth, static_cast<std::uint8_t>(k)));
    s += buf;
  }
  return s;
}

namespace {

void write_text(const fs::path& p, const std::string& s) {
  fs::create_directories(p.parent_path());
  std::ofstream(p, std::ios::binary) << s;
}

TrainResult train_and_save(const RunConfig& cfg, const std::vector<Case>& train, const std::vector<Case>& val,
                           const fs::path& dir, bool stage2 = false) {
  TrainResult r = stage2 ? train_stage2(cfg, train, val) : train_network(cfg, train, val);
  save_checkpoint(dir, r.best, {{"run", cfg.to_json()}, {"best_metric", r.best_metric}});
  write_text(dir / "history.csv", history_csv(r.history));
  return r;
}

}  // namespace

CascadeSummary run_cascade(const RunConfig& config, const std::vector<Case>& cases, const fs::path& out) {
  config.validate();
  DataSplit split = split_dataset(cases, config.seed);
  const std::size_t K = config.net.num_classes;
  const std::size_t P = config.plan.P, stride = config.plan.stride;
  fs::create_directories(out);

  const std::vector<std::pair<std::string, double>> branches{{"meunet_k1.5", 1.5}, {"meunet_k1.75", 1.75}};
  std::vector<fs::path> branch_dirs;
  std::map<std::string, UNet> singles;
  for (const auto& [name, k] : branches) {
    const auto dir = out / ("stage1_" + name);
    singles.emplace(name, train_and_save(branch_config(config, k), split.train, split.val, dir).best);
    branch_dirs.push_back(dir);
  }

  for (auto* set : {&split.train, &split.val, &split.test})
    for (auto& c : *set) c.guidance = stage1_predict_full(branch_dirs, c.id, c.image, P, stride, out / "cache").labels;

  RunConfig s2 = config;
  s2.kind = NetKind::postconcat;
  s2.net.postconcat = true;
  s2.net.aux_head_levels.clear();
  UNet stage2 = train_and_save(s2, split.train, split.val, out / "stage2", true).best;

  const RunConfig base = baseline_config(config);
  singles.emplace("unet", train_and_save(base, split.train, split.val, out / "baseline").best);

  CascadeSummary summary;
  std::string csv = "model,case";
  for (std::size_t k = 0; k < K; ++k) csv += ",dice_" + std::to_string(k);
  csv += "\n";
  std::map<std::string, std::vector<double>> sums;
  auto record = [&](const std::string& model, const Case& c, const LabelVolume& pred) {
    const auto rel = fs::path("pred") / model / (c.id + ".vol");
    write_volume(out / rel, pred);
    summary.artifacts[rel.string()] = sha256_file(out / rel);
    csv += model + "," + c.id;
    auto& s = sums[model];
    s.resize(K, 0.0);
    char buf[32];
    for (std::size_t k = 0; k < K; ++k) {
      const double d = dice_metric(pred, c.labels, static_cast<std::uint8_t>(k));
      s[k] += d;
      std::snprintf(buf, sizeof buf, ",%.6f", d);
      csv += buf;
    }
    csv += "\n";
  };
  for (const auto& c : split.test) {
    fs::create_directories(out / "pred");
    for (auto& [name, net] : singles) {
      const NetKind kind = name == "unet" ? NetKind::unet : NetKind::meunet;
      record(name, c, predict_case(net, kind, c, P, stride).labels);
    }
    record("stage1_ensemble", c, *c.guidance);
    record("stage2_postconcat", c, predict_case(stage2, NetKind::postconcat, c, P, stride).labels);
  }
  for (auto& [model, s] : sums) {
    for (auto& v : s) v /= static_cast<double>(split.test.size());
    summary.mean_dice[model] = s;
  }
  summary.metrics_csv = csv;
  write_text(out / "metrics.csv", csv);
  for (const auto& sub : {"stage1_meunet_k1.5", "stage1_meunet_k1.75", "stage2", "baseline"}) {
    summary.artifacts[std::string(sub) + "/checkpoint"] = checkpoint_digest(out / sub);
    summary.artifacts[std::string(sub) + "/history.csv"] = sha256_file(out / sub / "history.csv");
  }
  return summary;
}

}  // namespace meunet
