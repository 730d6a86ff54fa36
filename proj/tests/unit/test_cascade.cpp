#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>

#include "meunet/cascade.hpp"
#include "meunet/checkpoint.hpp"
#include "meunet/guidance.hpp"
#include "meunet/phantom.hpp"
#include "meunet/preprocess.hpp"

using namespace meunet;
namespace fs = std::filesystem;

namespace {

ProbVolume two_class(std::vector<double> p0) {
  ProbVolume v({1, 1, static_cast<std::size_t>(p0.size())}, 2);
  for (std::size_t i = 0; i < p0.size(); ++i) {
    v.values[i] = p0[i];
    v.values[p0.size() + i] = 1.0 - p0[i];
  }
  return v;
}

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("meunet_cascade_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

bool same_bits(const std::vector<double>& a, const std::vector<double>& b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

}  // namespace

TEST_CASE("ensemble") {
  auto a = two_class({0.6}), b = two_class({0.2});
  auto m = ensemble(a, b);
  CHECK(m.values[0] == doctest::Approx(0.4).epsilon(1e-15));
  CHECK(m.values[1] == doctest::Approx(0.6).epsilon(1e-15));
  CHECK(same_bits(ensemble(a, a).values, a.values));

  Rng rng(3);
  for (int i = 0; i < 50; ++i) {
    std::vector<double> pa, pb;
    for (int j = 0; j < 7; ++j) {
      pa.push_back(rng.uniform());
      pb.push_back(rng.uniform());
    }
    auto x = two_class(pa), y = two_class(pb);
    auto xy = ensemble(x, y), yx = ensemble(y, x);
    CHECK(same_bits(xy.values, yx.values));
    for (int j = 0; j < 7; ++j) CHECK(std::abs(xy.values[j] + xy.values[7 + j] - 1.0) <= 1e-12);
  }
  CHECK_THROWS_AS(ensemble(two_class({0.5}), two_class({0.5, 0.5})), ShapeError);
}

TEST_CASE("ensemble disagreement ties go to the lowest class") {
  auto m = ensemble(two_class({0.6, 0.9}), two_class({0.4, 0.9}));
  auto lab = argmax_volume(m);
  CHECK(m.values[0] == m.values[2]);
  CHECK(lab.values[0] == 0);
  CHECK(lab.values[1] == 0);
  auto flipped = argmax_volume(ensemble(two_class({0.3}), two_class({0.4})));
  CHECK(flipped.values[0] == 1);
}

TEST_CASE("guidance pyramid") {
  LabelVolume bg({16, 16, 16});
  auto g = guidance_for_patch(bg, {0, 0, 0}, 16, 4, 3);
  REQUIRE(g.levels.size() == 3);
  for (std::size_t l = 0; l < 3; ++l) {
    const std::size_t e = 16 >> l;
    CHECK(g.levels[l].shape() == Shape{1, 3, e, e, e});
    const auto v = g.levels[l].values();
    const std::size_t n = e * e * e;
    for (std::size_t i = 0; i < n; ++i) {
      CHECK(v[i] == 1.0);
      CHECK(v[n + i] + v[2 * n + i] == 0.0);
    }
  }

  LabelVolume one({16, 16, 16});
  one.at(4, 6, 8) = 2;
  one.at(5, 6, 8) = 1;
  auto p = guidance_for_patch(one, {0, 0, 0}, 16, 3, 3);
  // even index survives at (2,3,4), the odd neighbour is dropped
  CHECK(p.levels[1].values()[2 * 512 + (2 * 8 + 3) * 8 + 4] == 1.0);
  double ones = 0;
  for (std::size_t i = 512; i < 1024; ++i) ones += p.levels[1].values()[i];
  CHECK(ones == 0.0);

  // level l equals nearest downsampling of level 1 by 2^(l-1), and out-of-volume voxels are background
  PhantomSpec spec;
  spec.dims = {32, 32, 32};
  auto ph = phantom_generate(spec);
  auto pyr = guidance_for_patch(ph.labels, {24, 8, 8}, 16, 4, 3);
  auto base = argmax_channels(pyr.levels[0]);
  for (std::size_t l = 1; l < 3; ++l) {
    auto expect = one_hot(downsample_labels_nearest(base, std::size_t{1} << l), 3);
    CHECK(same_bits(std::vector<double>(expect.values().begin(), expect.values().end()),
                    std::vector<double>(pyr.levels[l].values().begin(), pyr.levels[l].values().end())));
  }
  for (std::size_t z = 8; z < 16; ++z) CHECK(base.values[(z * 16 + 3) * 16 + 3] == 0);
}

TEST_CASE("stage 1 prediction cache") {
  const auto dir = scratch("s1");
  auto a = UNet::build(UNetConfig::desk_meunet(), 11);
  auto b = UNet::build(UNetConfig::desk_meunet(), 12);
  save_checkpoint(dir / "a", a);
  save_checkpoint(dir / "b", b);
  PhantomSpec spec;
  spec.dims = {32, 32, 32};
  auto ph = phantom_generate(spec);
  const std::vector<fs::path> branches{dir / "a", dir / "b"};

  auto fresh = stage1_predict_full(branches, "v0", ph.image, 16, 16, dir / "cache");
  CHECK_FALSE(fresh.provenance["cached"].get<bool>());
  auto hit = stage1_predict_full(branches, "v0", ph.image, 16, 16, dir / "cache");
  CHECK(hit.provenance["cached"].get<bool>());
  CHECK(same_bits(fresh.probs.values, hit.probs.values));
  CHECK(fresh.labels.values == hit.labels.values);
  auto nocache = stage1_predict_full(branches, "v0", ph.image, 16, 16);
  CHECK(same_bits(fresh.probs.values, nocache.probs.values));

  // the ensemble of the branches' own fused predictions
  auto la = load_checkpoint(dir / "a"), lb = load_checkpoint(dir / "b");
  auto pa = fuse_predict(standard_predictor(la), ph.image, 16, 16).probs;
  auto pb = fuse_predict(standard_predictor(lb), ph.image, 16, 16).probs;
  auto m = to_f64(to_f32(ensemble(pa, pb)));
  CHECK(same_bits(m.values, fresh.probs.values));
  CHECK(argmax_volume(fresh.probs).values == fresh.labels.values);

  // a different checkpoint pair gets a different key
  CHECK(stage1_key({dir / "a", dir / "b"}) != stage1_key({dir / "b", dir / "a"}));
  CHECK_THROWS_AS(stage1_predict_full({dir / "a", dir / "missing"}, "v0", ph.image, 16, 16), DataError);
  CHECK_THROWS_AS(stage1_load_cached(dir / "cache", "v1", stage1_key(branches)), DataError);
  fs::remove_all(dir);
}

TEST_CASE("stage 1 all-background branches") {
  const auto dir = scratch("bg");
  auto net = UNet::build(UNetConfig::desk_meunet(), 4);
  // a large background bias in the final head drowns everything else
  for (auto& p : net.parameters())
    if (p.name == "head.l1.bias") p.value.mutable_values()[0] = 100.0;
  save_checkpoint(dir / "a", net);
  save_checkpoint(dir / "b", net);
  PhantomSpec spec;
  spec.dims = {16, 16, 16};
  spec.large_radius = {2, 3};
  spec.thin_radius = {1, 1};
  auto ph = phantom_generate(spec);
  auto pred = stage1_predict_full({dir / "a", dir / "b"}, "bg", ph.image, 16, 16);
  for (auto v : pred.labels.values) CHECK(v == 0);
  fs::remove_all(dir);
}

namespace {

double overfit_stage2(bool oracle, std::size_t max_steps) {
  PhantomSpec spec;
  spec.dims = {32, 32, 32};
  auto ph = phantom_generate(spec);
  PatchPlan plan;
  plan.P = 16;
  plan.E = 16;
  const Dims origin{8, 8, 8};
  auto rec = extract_patch("p", ph.image, ph.labels, origin, plan, false);
  LabelVolume guide = oracle ? ph.labels : LabelVolume(ph.labels.dims);
  auto cfg = UNetConfig::desk();
  cfg.postconcat = true;
  auto net = UNet::build(cfg, 21);
  auto pyr = guidance_for_patch(guide, origin, 16, cfg.levels, 3);
  const auto w = class_weights(class_counts({&ph.labels}, 3));
  AdamState adam;
  double loss = 1e9;
  for (std::size_t s = 0; s < max_steps && loss >= 0.1; ++s) loss = standard_train_step(net, rec, w, adam, &pyr);
  return loss;
}

}  // namespace

TEST_CASE("stage 2 overfits one patch with oracle guidance") { CHECK(overfit_stage2(true, 200) < 0.1); }

TEST_CASE("stage 2 converges without informative guidance") { CHECK(overfit_stage2(false, 400) < 0.1); }

TEST_CASE("train_stage2 requires stage-1 predictions") {
  PhantomSpec spec;
  spec.dims = {32, 32, 32};
  auto ph = phantom_generate(spec);
  Case c{"c", ph.image, ph.labels, {}};
  CHECK_THROWS_AS(train_stage2(RunConfig{}, {c}, {c}), DataError);
}
