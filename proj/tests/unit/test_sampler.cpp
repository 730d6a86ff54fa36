#include <doctest.h>

#include <map>

#include "meunet/sampler.hpp"

using namespace meunet;

namespace {

Volume numbered(Dims d) {
  Volume v(d);
  for (std::size_t i = 0; i < v.values.size(); ++i) v.values[i] = static_cast<float>(i + 1);
  return v;
}

}  // namespace

TEST_CASE("tile positions") {
  CHECK(tile_positions(5, 4, 2) == std::vector<std::size_t>{0, 2});
  CHECK(tile_positions(4, 4, 2) == std::vector<std::size_t>{0});
  CHECK(tile_positions(3, 4, 1) == std::vector<std::size_t>{0});
  CHECK(tile_positions(8, 4, 4) == std::vector<std::size_t>{0, 4});
  CHECK(tile_positions(64, 32, 16) == std::vector<std::size_t>{0, 16, 32});
  CHECK_THROWS_AS(tile_positions(8, 4, 5), ConfigError);
}

TEST_CASE("expanded edge rounding") {
  CHECK(expanded_edge(160, 1.75, 5) == 288);
  CHECK(expanded_edge(160, 1.5, 5) == 240);
  CHECK(expanded_edge(160, 1.25, 5) == 208);
  CHECK(expanded_edge(32, 1.5, 4) == 48);
  CHECK(expanded_edge(32, 1.75, 4) == 56);
  CHECK(PatchPlan::paper().P == 160);
  CHECK(PatchPlan::paper().stride == 80);
  auto bad = PatchPlan::desk();
  bad.E = 30;
  CHECK_THROWS_AS(bad.validate(4), ConfigError);
}

TEST_CASE("roulette") {
  PatchPlan plan;
  plan.fg_threshold = 0.01;
  plan.bg_accept_prob = 0.3;
  CHECK(accept_fraction(0.2, plan, 0.99));
  CHECK(accept_fraction(0.0, plan, 0.25));
  CHECK_FALSE(accept_fraction(0.0, plan, 0.35));
  plan.bg_accept_prob = 0.0;
  CHECK_FALSE(accept_fraction(0.0, plan, 0.0));

  plan.bg_accept_prob = 0.3;
  LabelVolume empty({4, 4, 4});
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng a(seed), b(seed);
    CHECK(accept_patch(empty, plan, a) == (b.uniform() < 0.3));
  }
  // Foreground patches leave the generator untouched.
  LabelVolume full({4, 4, 4}, 1, 1);
  Rng a(5), b(5);
  CHECK(accept_patch(full, plan, a));
  CHECK(a.next() == b.next());
}

TEST_CASE("expand_patch geometry") {
  auto img = numbered({8, 8, 8});
  LabelVolume lab({8, 8, 8}, 1, 2);
  auto e = expand_patch(img, lab, {0, 0, 0}, 4, 6);
  CHECK(e.image.dims == Dims{6, 6, 6});
  for (std::size_t z = 0; z < 6; ++z)
    for (std::size_t y = 0; y < 6; ++y)
      for (std::size_t x = 0; x < 6; ++x) {
        const bool pad = z == 0 || y == 0 || x == 0;
        CHECK(e.image.at(z, y, x) == (pad ? 0.0f : img.at(z - 1, y - 1, x - 1)));
        CHECK(e.labels.at(z, y, x) == (pad ? 0 : 2));
      }
  auto same = expand_patch(img, lab, {2, 3, 1}, 4, 4);
  PatchPlan plan;
  plan.P = 4;
  auto r = extract_patch("v", img, lab, {2, 3, 1}, plan, false);
  CHECK(same.image.values == r.image.values);
  auto interior = expand_patch(img, lab, {2, 2, 2}, 4, 6);
  for (std::size_t z = 0; z < 6; ++z)
    for (std::size_t y = 0; y < 6; ++y)
      for (std::size_t x = 0; x < 6; ++x) CHECK(interior.image.at(z, y, x) == img.at(z + 1, y + 1, x + 1));
}

TEST_CASE("supervision targets") {
  PatchPlan plan;
  plan.P = 16;
  plan.E = 24;
  Volume img({24, 24, 24});
  LabelVolume lab({24, 24, 24}, 1, 1);
  auto r = extract_patch("c", img, lab, {4, 4, 4}, plan, true);
  auto t = supervision_targets(r, 4, 3);
  CHECK(t.expanded_one_hot.shape() == Shape{1, 3, 12, 12, 12});
  CHECK(t.standard_one_hot.shape() == Shape{1, 3, 16, 16, 16});
  for (std::size_t i = 0; i < 12 * 12 * 12; ++i) {
    CHECK(t.expanded_one_hot.values()[i] == 0.0);
    CHECK(t.expanded_one_hot.values()[12 * 12 * 12 + i] == 1.0);
  }

  LabelVolume checker({24, 24, 24});
  for (std::size_t z = 0; z < 24; ++z)
    for (std::size_t y = 0; y < 24; ++y)
      for (std::size_t x = 0; x < 24; ++x) checker.at(z, y, x) = static_cast<std::uint8_t>((z + y + x) % 2);
  auto rc = extract_patch("c", img, checker, {4, 4, 4}, plan, true);
  auto tc = supervision_targets(rc, 4, 3);
  // Index-2i sampling lands on even coordinate sums of the expanded patch.
  for (auto v : tc.expanded_labels.values) CHECK(v == 0);
}

TEST_CASE("sampling is deterministic") {
  Volume img({40, 40, 40});
  LabelVolume lab({40, 40, 40});
  for (std::size_t z = 10; z < 14; ++z)
    for (std::size_t y = 0; y < 40; ++y) lab.at(z, y, 5) = 1;
  auto plan = PatchPlan::desk();
  plan.P = 16;
  plan.stride = 8;
  Rng a(3), b(3);
  auto s1 = sample_patches("x", img, lab, plan, false, a);
  auto s2 = sample_patches("x", img, lab, plan, false, b);
  REQUIRE(s1.size() == s2.size());
  for (std::size_t i = 0; i < s1.size(); ++i) CHECK(s1[i].origin == s2[i].origin);
  CHECK(s1.size() < tile_origins(lab.dims, 16, 8).size());
}

TEST_CASE("augmentation") {
  Rng rng(4);
  Volume img({6, 6, 6});
  LabelVolume lab({6, 6, 6});
  for (auto& v : img.values) v = static_cast<float>(rng.normal());
  for (auto& v : lab.values) v = static_cast<std::uint8_t>(rng.below(3));
  auto i0 = img;
  auto l0 = lab;
  augment_with(img, lab, 0, 1.0);
  CHECK(img.values == i0.values);
  CHECK(lab.values == l0.values);

  augment_with(img, lab, 2, 1.0);
  augment_with(img, lab, 2, 1.0);
  CHECK(img.values == i0.values);
  CHECK(lab.values == l0.values);

  auto count = [](const LabelVolume& l) {
    std::map<int, int> c;
    for (auto v : l.values) ++c[v];
    return c;
  };
  augment_with(img, lab, 1, 1.0);
  CHECK(count(lab) == count(l0));
  CHECK(lab.at(0, 5, 0) == l0.at(0, 0, 0));
  CHECK(lab.at(0, 0, 5) == l0.at(0, 5, 5));

  for (int i = 0; i < 5; ++i) {
    augment(img, lab, rng);
    for (auto v : lab.values) CHECK(v < 3);
  }
}
