#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "ccbench/nn.hpp"
#include "oracles.hpp"

using namespace ccbench;
using nn::Activation;

TEST_CASE("linear layer forward matches the affine map") {
  nn::Linear lin("t", 2, 3);
  lin.w.value << 1, 2, 3, 4, 5, 6;
  lin.b.value << 0.5, -0.5, 1.0;
  Mat x(1, 2);
  x << 2, -1;
  const Mat y = lin.forward(x);
  CHECK(y(0, 0) == doctest::Approx(2 * 1 - 1 * 4 + 0.5));
  CHECK(y(0, 1) == doctest::Approx(2 * 2 - 1 * 5 - 0.5));
  CHECK(y(0, 2) == doctest::Approx(2 * 3 - 1 * 6 + 1.0));
}

TEST_CASE("mlp gradients match finite differences") {
  Rng rng(101);
  nn::Mlp mlp("t", 4, {5, 3, 2}, Activation::tanh);
  mlp.init_xavier(rng);
  Mat x(3, 4);
  for (Index i = 0; i < x.size(); ++i) x(i / 4, i % 4) = rng.normal();
  Mat w(3, 2);
  for (Index i = 0; i < w.size(); ++i) w(i / 2, i % 2) = rng.normal();

  const auto loss = [&]() { return (mlp.forward(x).array() * w.array()).sum(); };
  for (nn::Param* p : mlp.params()) p->zero_grad();
  nn::Mlp::Cache cache;
  mlp.forward(x, &cache);
  mlp.backward(cache, w);
  CHECK(oracles::gradcheck_max_rel_error(loss, mlp.params()) < 1e-6);
}

TEST_CASE("layer norm output has zero mean, unit variance before affine") {
  Rng rng(7);
  nn::LayerNorm ln("t", 6);
  Mat x(4, 6);
  for (Index i = 0; i < x.size(); ++i) x(i / 6, i % 6) = rng.normal() * 3 + 1;
  const Mat y = ln.forward(x);
  for (Index i = 0; i < 4; ++i) {
    CHECK(y.row(i).mean() == doctest::Approx(0.0).epsilon(1e-10));
    CHECK((y.row(i).array() - y.row(i).mean()).square().mean() ==
          doctest::Approx(1.0).epsilon(1e-3));
  }
}

TEST_CASE("layer norm gradients match finite differences") {
  Rng rng(13);
  nn::LayerNorm ln("t", 5);
  for (Index i = 0; i < 5; ++i) {
    ln.gamma.value(0, i) = rng.uniform_real(0.5, 1.5);
    ln.beta.value(0, i) = rng.normal();
  }
  Mat x(3, 5);
  for (Index i = 0; i < x.size(); ++i) x(i / 5, i % 5) = rng.normal();
  Mat w(3, 5);
  for (Index i = 0; i < w.size(); ++i) w(i / 5, i % 5) = rng.normal();

  // parameter gradients
  const auto loss = [&]() { return (ln.forward(x).array() * w.array()).sum(); };
  for (nn::Param* p : ln.params()) p->zero_grad();
  nn::LayerNorm::Cache cache;
  ln.forward(x, &cache);
  const Mat dx = ln.backward(cache, w);
  CHECK(oracles::gradcheck_max_rel_error(loss, ln.params()) < 1e-6);

  // input gradients via a wrapper parameter
  nn::Param px("x", 3, 5);
  px.value = x;
  px.grad = dx;
  const auto loss_x = [&]() { return (ln.forward(px.value).array() * w.array()).sum(); };
  CHECK(oracles::gradcheck_max_rel_error(loss_x, {&px}) < 1e-6);
}

TEST_CASE("adam converges on a quadratic") {
  nn::Param p("p", 1, 1);
  p.value(0, 0) = 0.0;
  nn::Adam adam({&p}, 0.1);
  for (int step = 0; step < 1000; ++step) {
    p.grad(0, 0) = 2.0 * (p.value(0, 0) - 3.0);
    adam.step();
  }
  CHECK(p.value(0, 0) == doctest::Approx(3.0).epsilon(1e-4));
}

TEST_CASE("activations and their derivatives") {
  Mat x(1, 3);
  x << -2.0, 0.0, 1.5;
  const Mat r = nn::activate(x, Activation::relu);
  CHECK(r(0, 0) == 0.0);
  CHECK(r(0, 2) == 1.5);
  const Mat g = nn::activate_grad(x, Activation::tanh);
  CHECK(g(0, 1) == doctest::Approx(1.0));
  CHECK(nn::activate(x, Activation::identity) == x);
}
