#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>

#include "meunet/checkpoint.hpp"
#include "meunet/guidance.hpp"
#include "meunet/ledger.hpp"
#include "meunet/pipeline.hpp"

using namespace meunet;
namespace fs = std::filesystem;

namespace {

nlohmann::json read_json(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw ConfigError("cannot open config " + p.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(p.string() + ": " + e.what());
  }
}

void write_text(const fs::path& p, const std::string& s) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream(p, std::ios::binary) << s;
}

void save_run(const fs::path& out, const RunConfig& cfg, TrainResult r) {
  save_checkpoint(out, r.best, {{"run", cfg.to_json()}, {"best_metric", r.best_metric}});
  write_text(out / "history.csv", history_csv(r.history));
  std::printf("best val foreground dice %.6f after %zu epochs -> %s\n", r.best_metric, r.history.size(),
              out.string().c_str());
}

// Patch edge and stride a checkpoint was trained with.
std::pair<std::size_t, std::size_t> trained_tiling(const fs::path& model) {
  const auto meta = checkpoint_meta(model);
  if (!meta.contains("run")) return {32, 16};
  const auto plan = meta["run"].value("plan", nlohmann::json::object());
  return {plan.value("P", std::size_t{32}), plan.value("stride", std::size_t{16})};
}

int cmd_phantom(std::uint64_t seed, const std::vector<std::size_t>& dims, const fs::path& out, std::size_t count) {
  const Dims d = dims.size() == 1 ? Dims{dims[0], dims[0], dims[0]} : Dims{dims[0], dims[1], dims[2]};
  const auto cases = phantom_cases(count, d, seed);
  write_cases(out, cases);
  for (const auto& c : cases) {
    std::uint64_t n[3] = {0, 0, 0};
    for (auto v : c.labels.values) ++n[v];
    std::printf("%s %llu %llu %llu\n", c.id.c_str(), static_cast<unsigned long long>(n[0]),
                static_cast<unsigned long long>(n[1]), static_cast<unsigned long long>(n[2]));
  }
  return 0;
}

int cmd_train_stage1(const fs::path& config, double k, const fs::path& out) {
  const RunConfig base = RunConfig::from_json(read_json(config));
  const auto split = split_dataset(load_cases(base), base.seed);
  const RunConfig cfg = branch_config(base, k);
  save_run(out, cfg, train_network(cfg, split.train, split.val));
  return 0;
}

int cmd_train_stage2(const fs::path& config, const fs::path& a, const fs::path& b, const fs::path& out) {
  RunConfig cfg = RunConfig::from_json(read_json(config));
  auto split = split_dataset(load_cases(cfg), cfg.seed);
  for (auto* set : {&split.train, &split.val})
    for (auto& c : *set)
      c.guidance = stage1_predict_full({a, b}, c.id, c.image, cfg.plan.P, cfg.plan.stride, out / "cache").labels;
  cfg.kind = NetKind::postconcat;
  cfg.net.postconcat = true;
  cfg.net.preconcat = false;
  cfg.net.aux_head_levels.clear();
  cfg.plan.E = cfg.plan.P;
  save_run(out, cfg, train_stage2(cfg, split.train, split.val));
  return 0;
}

int cmd_predict(const fs::path& model, const fs::path& a, const fs::path& b, const fs::path& in, const fs::path& out,
                const fs::path& probs) {
  UNet net = load_checkpoint(model);
  const auto [P, stride] = trained_tiling(model);
  const auto& cfg = net.config();
  Case c{in.stem().string(), read_volume(in), {}, {}};
  NetKind kind = cfg.aux_head_levels.contains(2) ? NetKind::meunet : NetKind::unet;
  if (cfg.postconcat || cfg.preconcat) {
    if (a.empty() || b.empty()) throw ConfigError("predict: guided model needs --stage1-a and --stage1-b");
    kind = cfg.postconcat ? NetKind::postconcat : NetKind::preconcat;
    c.guidance = stage1_predict_full({a, b}, c.id, c.image, P, stride).labels;
  }
  auto pred = predict_case(net, kind, c, P, stride);
  pred.labels.spacing_um = c.image.spacing_um;
  write_volume(out, pred.labels);
  if (!probs.empty()) write_volume(probs, to_f32(pred.probs));
  std::printf("%s %s\n", out.string().c_str(), sha256_file(out).c_str());
  return 0;
}

int cmd_eval(const fs::path& pred, const fs::path& truth, std::size_t classes) {
  std::printf("%s", dice_csv(read_labels(pred), read_labels(truth), classes).c_str());
  return 0;
}

int cmd_memreport(const fs::path& config, const fs::path& other, bool as_json) {
  const auto a = estimate(LedgerConfig::from_json(read_json(config)));
  if (other.empty()) {
    std::printf("%s", as_json ? (a.to_json().dump(2) + "\n").c_str() : a.table().c_str());
    return 0;
  }
  const auto b = estimate(LedgerConfig::from_json(read_json(other)));
  const auto cmp = compare(a, b);
  if (as_json) {
    std::printf("%s\n", nlohmann::json{{"a", a.to_json()}, {"b", b.to_json()}, {"compare", cmp.to_json()}}
                            .dump(2)
                            .c_str());
  } else {
    std::printf("%s\n%s\n%s", a.table().c_str(), b.table().c_str(), cmp.table().c_str());
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"meU-net cascade toolkit"};
  app.require_subcommand(1);

  std::uint64_t seed = 42;
  std::vector<std::size_t> dims{64};
  std::size_t count = 6, classes = 3;
  fs::path config, out, stage1_a, stage1_b, model, in, probs, pred, truth, other;
  double k = 1.5;
  bool as_json = false;

  auto* phantom = app.add_subcommand("phantom", "write synthetic phantom cases");
  phantom->add_option("--seed", seed);
  phantom->add_option("--dims", dims, "D or D H W")->expected(1, 3)->check(CLI::PositiveNumber);
  phantom->add_option("--out-dir", out)->required();
  phantom->add_option("--count", count)->check(CLI::PositiveNumber);

  auto* s1 = app.add_subcommand("train-stage1", "train one dual-patch meU-net branch");
  s1->add_option("--config", config)->required()->check(CLI::ExistingFile);
  s1->add_option("--branch-k", k)->required()->check(CLI::IsMember({1.5, 1.75}));
  s1->add_option("--out", out)->required();

  auto* s2 = app.add_subcommand("train-stage2", "train the post-concatenation stage");
  s2->add_option("--config", config)->required()->check(CLI::ExistingFile);
  s2->add_option("--stage1-a", stage1_a)->required();
  s2->add_option("--stage1-b", stage1_b)->required();
  s2->add_option("--out", out)->required();

  auto* predict = app.add_subcommand("predict", "fused whole-volume prediction");
  predict->add_option("--model", model)->required();
  predict->add_option("--stage1-a", stage1_a);
  predict->add_option("--stage1-b", stage1_b);
  predict->add_option("--in", in)->required();
  predict->add_option("--out", out)->required();
  predict->add_option("--probs", probs, "also write class probabilities");

  auto* eval = app.add_subcommand("eval", "per-class Dice as CSV");
  eval->add_option("--pred", pred)->required();
  eval->add_option("--truth", truth)->required();
  eval->add_option("--classes", classes)->check(CLI::Range(1, 255));

  auto* mem = app.add_subcommand("memreport", "modeled training memory");
  mem->add_option("--config", config)->required()->check(CLI::ExistingFile);
  mem->add_option("--compare", other)->check(CLI::ExistingFile);
  mem->add_flag("--json", as_json);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    // bad flags are configuration errors; --help exits 0
    return app.exit(e) == 0 ? 0 : 2;
  }

  try {
    if (app.got_subcommand(phantom)) {
      if (dims.size() == 2) throw ConfigError("phantom: --dims takes one or three extents");
      return cmd_phantom(seed, dims, out, count);
    }
    if (app.got_subcommand(s1)) return cmd_train_stage1(config, k, out);
    if (app.got_subcommand(s2)) return cmd_train_stage2(config, stage1_a, stage1_b, out);
    if (app.got_subcommand(predict)) return cmd_predict(model, stage1_a, stage1_b, in, out, probs);
    if (app.got_subcommand(eval)) return cmd_eval(pred, truth, classes);
    if (app.got_subcommand(mem)) return cmd_memreport(config, other, as_json);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const DataError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return 3;
  } catch (const ShapeError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return 3;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
