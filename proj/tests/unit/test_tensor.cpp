#include <doctest.h>

#include "gradcheck.hpp"
#include "meunet/ops.hpp"

using namespace meunet;
using meunet::testing::gradcheck;
using meunet::testing::random_tensor;

TEST_CASE("elementwise examples") {
  auto a = Tensor({2}, {1, 2});
  auto b = Tensor({2}, {3, 4});
  auto c = add(a, b);
  CHECK(c.values()[0] == 4.0);
  CHECK(c.values()[1] == 6.0);
  CHECK(sum(Tensor::full({2, 2}, 1.0)).item() == 4.0);
  CHECK_THROWS_AS(add(Tensor({2}, {1, 2}), Tensor({3}, {1, 2, 3})), ShapeError);
}

TEST_CASE("shape mismatch message names op and shapes") {
  try {
    mul(Tensor::zeros({2, 3}), Tensor::zeros({3, 2}));
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("mul") != std::string::npos);
    CHECK(msg.find("[2,3]") != std::string::npos);
    CHECK(msg.find("[3,2]") != std::string::npos);
  }
}

TEST_CASE("d sum(x*x) / dx") {
  auto x = Tensor({3}, {1, 2, 3}, true);
  sum(mul(x, x)).backward();
  CHECK(x.grad()[0] == doctest::Approx(2.0));
  CHECK(x.grad()[1] == doctest::Approx(4.0));
  CHECK(x.grad()[2] == doctest::Approx(6.0));
  Rng rng(1);
  auto r = gradcheck([&] { return sum(mul(x, x)); }, {x}, rng);
  CHECK(r.max_rel_error <= 1e-4);
}

TEST_CASE("linear loss and detached path") {
  auto w = Tensor({2}, {0.3, -0.7}, true);
  auto x = Tensor({2}, {1, 2});
  sum(mul(w, x)).backward();
  CHECK(w.grad()[0] == 1.0);
  CHECK(w.grad()[1] == 2.0);

  auto w2 = Tensor({2}, {0.3, -0.7}, true);
  auto y = exp(w2).detach();
  auto loss = sum(mul(y, Tensor({2}, {1, 1})));
  CHECK_FALSE(loss.requires_grad());
  CHECK_FALSE(w2.has_grad());
}

TEST_CASE("backward errors") {
  auto w = Tensor({2}, {1, 2}, true);
  CHECK_THROWS_AS(mul_scalar(w, 2.0).backward(), GraphError);
  auto loss = sum(mul(w, w));
  loss.backward();
  CHECK_THROWS_AS(loss.backward(), GraphError);
}

TEST_CASE("gradients accumulate across paths and calls") {
  auto w = Tensor({1}, {3.0}, true);
  sum(add(mul(w, w), w)).backward();
  CHECK(w.grad()[0] == 7.0);
  sum(w).backward();
  CHECK(w.grad()[0] == 8.0);
  w.zero_grad();
  CHECK(w.grad()[0] == 0.0);
}

TEST_CASE("no-grad scope") {
  auto w = Tensor({3}, {0.5, -1.0, 2.0}, true);
  auto y = no_grad([&] { return mul_scalar(w, 2.0); });
  CHECK_FALSE(y.requires_grad());
  CHECK(y.node() == nullptr);
  sum(mul(y, w)).backward();
  for (std::size_t i = 0; i < 3; ++i) CHECK(w.grad()[i] == 2.0 * w.values()[i]);

  Tensor z;
  {
    NoGradGuard a;
    {
      NoGradGuard b;
    }
    z = add_scalar(w, 0.0);
  }
  CHECK_FALSE(z.requires_grad());
  CHECK(grad_enabled());
  for (std::size_t i = 0; i < 3; ++i) CHECK(z.values()[i] == w.values()[i]);
}

TEST_CASE("census examples") {
  auto w = Tensor::full({2, 2}, 1.0, true);
  {
    Census c;
    {
      CensusScope s(c);
      auto t = mul_scalar(w, 1.0);
    }
    REQUIRE(c.entries().size() == 1);
    CHECK(c.activation_bytes() == 32);
    CHECK(c.gradient_bytes() == 32);
  }
  {
    Census c;
    {
      CensusScope s(c);
      NoGradGuard off;
      auto t = mul_scalar(w, 1.0);
    }
    REQUIRE(c.entries().size() == 1);
    CHECK(c.activation_bytes() == 32);
    CHECK(c.gradient_bytes() == 0);
  }
  auto y = mul_scalar(w, 3.0);
  auto g = byte_census(sum(y));
  CHECK(g.activation_bytes() == 32 + 32 + 8);
  CHECK(g.gradient_bytes() == 32 + 32 + 8);
}

namespace {

using Unary = Tensor (*)(const Tensor&);

Tensor relu_like_max(const Tensor& a) { return maximum(a, Tensor::zeros(a.shape())); }

}  // namespace

TEST_CASE("finite differences: every differentiable op, 20 instances") {
  Rng rng(20240611);
  auto run = [&](const char* name, auto&& make_loss, auto&& make_leaves) {
    double worst = 0.0;
    for (int inst = 0; inst < 20; ++inst) {
      std::vector<Tensor> leaves = make_leaves();
      auto r = gradcheck([&] { return make_loss(leaves); }, leaves, rng);
      worst = std::max(worst, r.max_rel_error);
    }
    INFO(name << " worst " << worst);
    CHECK(worst <= 1e-4);
  };
  auto two = [&] {
    return std::vector<Tensor>{random_tensor({2, 3, 2}, rng), random_tensor({2, 3, 2}, rng)};
  };
  auto one_pos = [&] { return std::vector<Tensor>{random_tensor({2, 3, 2}, rng, true, 0.5, 2.0)}; };
  auto one = [&] { return std::vector<Tensor>{random_tensor({2, 3, 2}, rng)}; };
  auto mix = [&](const std::vector<Tensor>& l, const Tensor& y) {
    // A fixed random weighting keeps every output coordinate in play.
    Rng wr(7);
    auto w = random_tensor(y.shape(), wr, false);
    (void)l;
    return sum(mul(y, w));
  };

  run("add", [&](auto& l) { return mix(l, add(l[0], l[1])); }, two);
  run("sub", [&](auto& l) { return mix(l, sub(l[0], l[1])); }, two);
  run("mul", [&](auto& l) { return mix(l, mul(l[0], l[1])); }, two);
  run("div", [&](auto& l) { return mix(l, div(l[0], add_scalar(mul(l[1], l[1]), 0.5))); }, two);
  run("add_scalar", [&](auto& l) { return mix(l, add_scalar(l[0], 1.5)); }, one);
  run("mul_scalar", [&](auto& l) { return mix(l, mul_scalar(l[0], -2.5)); }, one);
  run("neg", [&](auto& l) { return mix(l, neg(l[0])); }, one);
  run("log", [&](auto& l) { return mix(l, log(l[0])); }, one_pos);
  run("exp", [&](auto& l) { return mix(l, exp(l[0])); }, one);
  run("clamp_min", [&](auto& l) { return mix(l, clamp_min(l[0], 0.1)); }, one);
  run("maximum", [&](auto& l) { return mix(l, maximum(l[0], l[1])); }, two);
  run("maximum vs zero", [&](auto& l) { return mix(l, relu_like_max(l[0])); }, one);
  run("sum", [&](auto& l) { return mul(sum(l[0]), sum(l[0])); }, one);
  run("mean", [&](auto& l) { return mul(mean(l[0]), mean(l[0])); }, one);
  run("sum_channels", [&](auto& l) { return mix(l, sum_channels(l[0])); }, one);
  run("reshape", [&](auto& l) { return mix(l, reshape(l[0], {3, 4})); }, one);
  run("slice", [&](auto& l) { return mix(l, slice(l[0], {1, 1, 0}, {1, 2, 2})); }, one);
  run("pad_zeros", [&](auto& l) { return mix(l, pad_zeros(l[0], {0, 1, 2}, {1, 0, 1})); }, one);
  run("concat", [&](auto& l) { return mix(l, concat({l[0], l[1], l[0]}, 1)); }, two);
  run("composite", [&](auto& l) { return sum(log(add_scalar(exp(mul(l[0], l[1])), 1.0))); }, two);
}

TEST_CASE("random 3-layer composite matches finite differences") {
  Rng rng(99);
  for (int inst = 0; inst < 20; ++inst) {
    auto w1 = random_tensor({4}, rng), w2 = random_tensor({4}, rng), w3 = random_tensor({4}, rng);
    auto x = random_tensor({4}, rng, false);
    auto f = [&] {
      auto h1 = maximum(mul(w1, x), mul_scalar(mul(w1, x), 0.1));
      auto h2 = exp(mul_scalar(mul(w2, h1), 0.5));
      return sum(mul(w3, log(add_scalar(h2, 1.0))));
    };
    auto r = gradcheck(f, {w1, w2, w3}, rng);
    CHECK(r.max_rel_error <= 1e-4);
  }
}

TEST_CASE("concat rejects mismatched axes") {
  CHECK_THROWS_AS(concat({Tensor::zeros({1, 2, 3}), Tensor::zeros({1, 2, 4})}, 1), ShapeError);
  auto c = concat({Tensor({1, 1}, {1}), Tensor({1, 2}, {2, 3})}, 1);
  CHECK(c.shape() == Shape{1, 3});
  CHECK(c.values()[2] == 3.0);
}

TEST_CASE("slice and pad_zeros") {
  auto x = Tensor({4}, {1, 2, 3, 4});
  auto s = slice(x, {1}, {2});
  CHECK(s.values()[0] == 2.0);
  CHECK(s.values()[1] == 3.0);
  auto p = pad_zeros(x, {1}, {2});
  CHECK(p.shape() == Shape{7});
  CHECK(p.values()[0] == 0.0);
  CHECK(p.values()[1] == 1.0);
  CHECK(p.values()[6] == 0.0);
  CHECK_THROWS_AS(slice(x, {3}, {2}), ShapeError);
}
