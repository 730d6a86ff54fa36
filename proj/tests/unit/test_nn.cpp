#include <doctest.h>

#include <algorithm>
#include <numeric>

#include "gradcheck.hpp"
#include "meunet/nn.hpp"
#include "meunet/ops.hpp"
#include "oracles.hpp"

using namespace meunet;
using meunet::testing::gradcheck;
using meunet::testing::random_tensor;

namespace {

Conv3dParams random_conv(std::size_t cin, std::size_t cout, Rng& rng, bool grad = true) {
  return {random_tensor({cout, cin, 3, 3, 3}, rng, grad, -0.5, 0.5), random_tensor({cout}, rng, grad)};
}

Tensor weighted_sum(const Tensor& y, std::uint64_t seed) {
  Rng wr(seed);
  return sum(mul(y, random_tensor(y.shape(), wr, false)));
}

}  // namespace

TEST_CASE("conv3d hand cases") {
  Conv3dParams ones{Tensor::full({1, 1, 3, 3, 3}, 1.0), Tensor::zeros({1})};
  auto y = conv3d(Tensor::full({1, 1, 2, 2, 2}, 1.0), ones);
  for (double v : y.values()) CHECK(v == 8.0);

  Conv3dParams bias_only{Tensor::zeros({2, 1, 3, 3, 3}), Tensor({2}, {0.25, -3.0})};
  Rng rng(3);
  auto x = random_tensor({1, 1, 3, 4, 5}, rng, false);
  auto yb = conv3d(x, bias_only);
  for (std::size_t i = 0; i < 60; ++i) CHECK(yb.values()[i] == 0.25);
  for (std::size_t i = 60; i < 120; ++i) CHECK(yb.values()[i] == -3.0);

  std::vector<double> centre(27, 0.0);
  centre[13] = 1.0;
  Conv3dParams id{Tensor({1, 1, 3, 3, 3}, centre), Tensor::zeros({1})};
  auto yi = conv3d(x, id);
  for (std::size_t i = 0; i < x.numel(); ++i) CHECK(yi.values()[i] == x.values()[i]);

  CHECK_THROWS_AS(conv3d(Tensor::zeros({1, 2, 2, 2, 2}), ones), ShapeError);
}

TEST_CASE("conv3d matches direct-sum oracle to 1e-10") {
  Rng rng(11);
  for (int inst = 0; inst < 10; ++inst) {
    const int n = 1 + static_cast<int>(rng.below(2)), cin = 1 + static_cast<int>(rng.below(4)),
              cout = 1 + static_cast<int>(rng.below(4));
    const int d = 1 + static_cast<int>(rng.below(6)), h = 1 + static_cast<int>(rng.below(6)),
              w = 1 + static_cast<int>(rng.below(6));
    auto x = random_tensor({std::size_t(n), std::size_t(cin), std::size_t(d), std::size_t(h), std::size_t(w)}, rng);
    auto p = random_conv(cin, cout, rng);
    auto y = conv3d(x, p);
    auto ref = oracle::conv3d({x.values().begin(), x.values().end()}, {p.weight.values().begin(), p.weight.values().end()},
                              {p.bias.values().begin(), p.bias.values().end()}, n, cin, cout, d, h, w);
    double err = 0;
    for (std::size_t i = 0; i < ref.size(); ++i) err = std::max(err, std::abs(ref[i] - y.values()[i]));
    CHECK(err <= 1e-10);
  }
}

TEST_CASE("conv3d padding consistency") {
  Rng rng(12);
  auto p = random_conv(2, 3, rng, false);
  auto crop = random_tensor({1, 2, 3, 4, 3}, rng, false);
  auto big = pad_zeros(crop, {0, 0, 2, 1, 3}, {0, 0, 1, 2, 2});
  auto y_big = conv3d(big, p);
  auto y_crop = conv3d(crop, p);
  // Inside the crop, the zero surround acts exactly like the implicit padding
  // only where the kernel footprint stays within one voxel of the crop.
  auto inner = slice(y_big, {0, 0, 2, 1, 3}, {1, 3, 3, 4, 3});
  for (std::size_t i = 0; i < inner.numel(); ++i) CHECK(inner.values()[i] == doctest::Approx(y_crop.values()[i]).epsilon(1e-12));
}

TEST_CASE("maxpool3d") {
  auto c = maxpool3d(Tensor::full({1, 1, 4, 4, 4}, 2.5));
  CHECK(c.shape() == Shape{1, 1, 2, 2, 2});
  for (double v : c.values()) CHECK(v == 2.5);

  std::vector<double> block(8);
  std::iota(block.begin(), block.end(), 0.0);
  std::swap(block[3], block[6]);
  auto x = Tensor({1, 1, 2, 2, 2}, block, true);
  auto y = maxpool3d(x);
  CHECK(y.item() == 7.0);
  sum(y).backward();
  for (std::size_t i = 0; i < 8; ++i) CHECK(x.grad()[i] == (block[i] == 7.0 ? 1.0 : 0.0));

  auto tie = Tensor::full({1, 1, 2, 2, 2}, 1.0, true);
  sum(maxpool3d(tie)).backward();
  CHECK(tie.grad()[0] == 1.0);
  for (std::size_t i = 1; i < 8; ++i) CHECK(tie.grad()[i] == 0.0);

  CHECK_THROWS_AS(maxpool3d(Tensor::zeros({1, 1, 3, 2, 2})), ShapeError);
}

TEST_CASE("upsample_nearest3d") {
  auto a = Tensor({1, 1, 1, 1, 1}, {4.5}, true);
  auto u = upsample_nearest3d(a);
  CHECK(u.shape() == Shape{1, 1, 2, 2, 2});
  for (double v : u.values()) CHECK(v == 4.5);
  sum(u).backward();
  CHECK(a.grad()[0] == 8.0);

  auto c = Tensor::full({1, 2, 2, 2, 2}, -1.5);
  auto back = maxpool3d(upsample_nearest3d(c));
  for (std::size_t i = 0; i < c.numel(); ++i) CHECK(back.values()[i] == c.values()[i]);
}

TEST_CASE("batchnorm3d") {
  Rng rng(5);
  auto st = BatchNormState::make(2);
  auto x = random_tensor({2, 2, 3, 3, 3}, rng, false, -3.0, 5.0);
  auto y = batchnorm3d(x, st, Mode::train);
  for (std::size_t c = 0; c < 2; ++c) {
    double m = 0, v = 0;
    std::size_t cnt = 0;
    for (std::size_t b = 0; b < 2; ++b)
      for (std::size_t i = 0; i < 27; ++i) m += y.values()[(b * 2 + c) * 27 + i], ++cnt;
    m /= cnt;
    for (std::size_t b = 0; b < 2; ++b)
      for (std::size_t i = 0; i < 27; ++i) v += std::pow(y.values()[(b * 2 + c) * 27 + i] - m, 2);
    v /= cnt;
    CHECK(std::abs(m) < 1e-12);
    CHECK(v == doctest::Approx(1.0).epsilon(1e-3));
  }

  auto st2 = BatchNormState::make(1);
  st2.shift.mutable_values()[0] = 0.75;
  auto yc = batchnorm3d(Tensor::full({1, 1, 2, 2, 2}, 3.0), st2, Mode::train);
  for (double v : yc.values()) CHECK(v == 0.75);

  auto st3 = BatchNormState::make(1);
  CHECK_THROWS(batchnorm3d(Tensor::zeros({1, 1, 2, 2, 2}), st3, Mode::eval));
  st3.running_mean = {2.0};
  st3.running_var = {4.0};
  st3.initialized = true;
  st3.scale.mutable_values()[0] = 3.0;
  st3.shift.mutable_values()[0] = -1.0;
  auto ye = batchnorm3d(Tensor({1, 1, 1, 1, 2}, {2.0, 6.0}), st3, Mode::eval);
  CHECK(ye.values()[0] == doctest::Approx(-1.0));
  CHECK(ye.values()[1] == doctest::Approx(4.0 / std::sqrt(4.0 + 1e-5) * 3.0 - 1.0));
  CHECK(st3.running_mean[0] == 2.0);

  // Running statistics: momentum 0.1, unbiased variance.
  auto st4 = BatchNormState::make(1);
  batchnorm3d(Tensor({1, 1, 1, 1, 2}, {1.0, 3.0}), st4, Mode::train);
  CHECK(st4.running_mean[0] == doctest::Approx(0.9 * 0.0 + 0.1 * 2.0));
  CHECK(st4.running_var[0] == doctest::Approx(0.9 * 1.0 + 0.1 * 2.0));
}

TEST_CASE("softmax, one_hot, label downsampling") {
  auto s = softmax_channels(Tensor({1, 2}, {0.0, 0.0}));
  CHECK(s.values()[0] == 0.5);
  CHECK(s.values()[1] == 0.5);

  auto oh = one_hot(LabelTensor({2}, {0, 2}), 3);
  CHECK(oh.shape() == Shape{2, 3});
  const std::vector<double> want{1, 0, 0, 0, 0, 1};
  for (std::size_t i = 0; i < 6; ++i) CHECK(oh.values()[i] == want[i]);
  CHECK_THROWS_AS(one_hot(LabelTensor({2}, {0, 3}), 3), std::out_of_range);

  auto ds = downsample_labels_nearest(LabelTensor({4}, {0, 1, 2, 3}), 2, 1);
  CHECK(ds.values == std::vector<std::uint8_t>{0, 2});

  Rng rng(8);
  auto logits = random_tensor({2, 4, 3, 2, 2}, rng, false, -10, 10);
  auto p = softmax_channels(logits);
  auto shifted = softmax_channels(add_scalar(logits, 123.0));
  const std::size_t inner = 12;
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t v = 0; v < inner; ++v) {
      double z = 0;
      for (std::size_t c = 0; c < 4; ++c) {
        const double pv = p.values()[(b * 4 + c) * inner + v];
        CHECK(pv > 0.0);
        CHECK(pv < 1.0);
        CHECK(shifted.values()[(b * 4 + c) * inner + v] == doctest::Approx(pv).epsilon(1e-12));
        z += pv;
      }
      CHECK(std::abs(z - 1.0) <= 1e-12);
    }
}

TEST_CASE("downsample commutes with one_hot") {
  Rng rng(21);
  for (int inst = 0; inst < 20; ++inst) {
    const std::size_t f = 1 + rng.below(3);
    Shape sh{1 + rng.below(2), 1 + rng.below(7), 1 + rng.below(7), 1 + rng.below(7)};
    std::vector<std::uint8_t> v(shape_numel(sh));
    for (auto& x : v) x = static_cast<std::uint8_t>(rng.below(3));
    LabelTensor labels(sh, v);
    auto a = one_hot(downsample_labels_nearest(labels, f), 3);
    auto oh = one_hot(labels, 3);
    // Downsample each one-hot channel as a label map, then compare.
    const auto ds = downsample_labels_nearest(labels, f);
    const std::size_t inner = ds.numel() / sh[0];
    for (std::size_t b = 0; b < sh[0]; ++b)
      for (std::size_t c = 0; c < 3; ++c) {
        std::vector<std::uint8_t> chan;
        const std::size_t full_inner = labels.numel() / sh[0];
        for (std::size_t i = 0; i < full_inner; ++i)
          chan.push_back(static_cast<std::uint8_t>(oh.values()[(b * 3 + c) * full_inner + i]));
        auto dc = downsample_labels_nearest(LabelTensor({sh[1], sh[2], sh[3]}, chan), f);
        for (std::size_t i = 0; i < inner; ++i) CHECK(a.values()[(b * 3 + c) * inner + i] == dc.values[i]);
      }
  }
}

TEST_CASE("argmax_channels ties go to lowest class") {
  auto lab = argmax_channels(Tensor({1, 3, 2}, {0.4, 0.1, 0.4, 0.8, 0.2, 0.1}));
  CHECK(lab.shape == Shape{1, 2});
  CHECK(lab.values == std::vector<std::uint8_t>{0, 1});
}

TEST_CASE("finite differences: network ops, 20 instances") {
  Rng rng(777);
  auto check = [&](const char* name, auto&& body) {
    double worst = 0;
    for (int inst = 0; inst < 20; ++inst) worst = std::max(worst, body(inst));
    INFO(name << " worst " << worst);
    CHECK(worst <= 1e-4);
  };
  check("conv3d", [&](int inst) {
    auto x = random_tensor({1 + std::size_t(inst % 2), 2, 3, 2, 4}, rng);
    auto p = random_conv(2, 3, rng);
    return gradcheck([&] { return weighted_sum(conv3d(x, p), inst); }, {x, p.weight, p.bias}, rng).max_rel_error;
  });
  check("maxpool3d", [&](int inst) {
    auto x = random_tensor({1, 2, 4, 2, 2}, rng);
    return gradcheck([&] { return weighted_sum(maxpool3d(x), inst); }, {x}, rng).max_rel_error;
  });
  check("upsample_nearest3d", [&](int inst) {
    auto x = random_tensor({1, 2, 2, 1, 2}, rng);
    return gradcheck([&] { return weighted_sum(upsample_nearest3d(x), inst); }, {x}, rng).max_rel_error;
  });
  check("batchnorm3d train", [&](int inst) {
    auto x = random_tensor({2, 2, 2, 3, 2}, rng);
    auto st = BatchNormState::make(2);
    st.scale = random_tensor({2}, rng, true, 0.5, 1.5);
    st.shift = random_tensor({2}, rng);
    return gradcheck([&] { return weighted_sum(batchnorm3d(x, st, Mode::train), inst); }, {x, st.scale, st.shift},
                     rng)
        .max_rel_error;
  });
  check("batchnorm3d eval", [&](int inst) {
    auto x = random_tensor({1, 2, 2, 2, 2}, rng);
    auto st = BatchNormState::make(2);
    st.running_mean = {0.3, -0.2};
    st.running_var = {1.5, 0.7};
    st.initialized = true;
    return gradcheck([&] { return weighted_sum(batchnorm3d(x, st, Mode::eval), inst); }, {x, st.scale, st.shift}, rng)
        .max_rel_error;
  });
  check("relu", [&](int inst) {
    auto x = random_tensor({1, 2, 2, 2, 3}, rng);
    return gradcheck([&] { return weighted_sum(relu(x), inst); }, {x}, rng).max_rel_error;
  });
  check("softmax_channels", [&](int inst) {
    auto x = random_tensor({2, 3, 2, 2, 1}, rng, true, -3, 3);
    return gradcheck([&] { return weighted_sum(softmax_channels(x), inst); }, {x}, rng).max_rel_error;
  });
}
