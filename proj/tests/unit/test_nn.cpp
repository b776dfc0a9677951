#include <cmath>
#include <cstring>
#include <random>

#include <doctest.h>

#include "geco/nn/adam.hpp"
#include "geco/nn/ops.hpp"
#include "geco/nn/parameters.hpp"
#include "geco/nn/serialize.hpp"
#include "gradcheck.hpp"
#include "helpers.hpp"

using namespace geco;
using nn::Var;
using VarD = Var<double>;

namespace {

nn::ParameterSet<double> params_with(std::initializer_list<std::pair<const char*, nn::Shape>> specs,
                                     std::uint64_t seed) {
  nn::ParameterSet<double> ps;
  std::mt19937_64 rng(seed);
  for (const auto& [name, shape] : specs) {
    auto& v = ps.add(name, shape);
    nn::init_uniform(v, 1.0, rng);
  }
  return ps;
}

void expect_grads(nn::ParameterSet<double>& ps, const std::function<VarD()>& f, double tol = 1e-6) {
  const auto r = testutil::grad_check(ps, f, 1e-5, 0, 1);
  INFO("worst " << r.worst << " analytic " << r.worst_analytic << " numeric " << r.worst_numeric);
  CHECK(r.max_rel_err < tol);
}

double naive_conv_at(const VarD& x, const VarD& w, std::int64_t o, std::int64_t oy, std::int64_t ox,
                     nn::Conv2dGeometry g) {
  const auto c = x.dim(1), h = x.dim(2), wd = x.dim(3), k = g.kernel;
  double acc = 0;
  for (std::int64_t ci = 0; ci < c; ++ci)
    for (std::int64_t ky = 0; ky < k; ++ky)
      for (std::int64_t kx = 0; kx < k; ++kx) {
        const auto iy = oy * g.stride - g.padding + ky, ix = ox * g.stride - g.padding + kx;
        if (iy < 0 || ix < 0 || iy >= h || ix >= wd) continue;
        acc += x.data()[(ci * h + iy) * wd + ix] * w.data()[((o * c + ci) * k + ky) * k + kx];
      }
  return acc;
}

}  // namespace

TEST_SUITE("nn") {

TEST_CASE("conv2d forward matches direct summation") {
  auto x = testutil::random_tensor<double>({1, 2, 7, 7}, 1);
  auto w = testutil::random_tensor<double>({3, 2, 3, 3}, 2);
  const nn::Conv2dGeometry g{3, 2, 1};
  auto y = nn::conv2d(x, w, VarD{}, g);
  REQUIRE(y.shape() == nn::Shape{1, 3, 4, 4});
  for (std::int64_t o = 0; o < 3; ++o)
    for (std::int64_t i = 0; i < 4; ++i)
      for (std::int64_t j = 0; j < 4; ++j)
        CHECK(y.data()[(o * 4 + i) * 4 + j] == doctest::Approx(naive_conv_at(x, w, o, i, j, g)).epsilon(1e-12));
}

TEST_CASE("transposed convolution is the adjoint of convolution") {
  const nn::Conv2dGeometry g{4, 2, 1};
  auto x = testutil::random_tensor<double>({2, 3, 8, 8}, 3);
  auto w = testutil::random_tensor<double>({5, 3, 4, 4}, 4);
  auto y = testutil::random_tensor<double>({2, 5, 4, 4}, 5);
  auto cx = nn::conv2d(x, w, VarD{}, g);
  auto ty = nn::conv_transpose2d(y, w, VarD{}, g);
  REQUIRE(ty.shape() == x.shape());
  double lhs = 0, rhs = 0;
  for (std::int64_t i = 0; i < cx.size(); ++i) lhs += cx.data()[i] * y.data()[i];
  for (std::int64_t i = 0; i < x.size(); ++i) rhs += x.data()[i] * ty.data()[i];
  CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
}

TEST_CASE("op gradients match central differences") {
  SUBCASE("conv2d") {
    auto ps = params_with({{"x", {2, 2, 6, 6}}, {"w", {3, 2, 4, 4}}, {"b", {3}}}, 11);
    expect_grads(ps, [&] { return nn::sum(nn::tanh(nn::conv2d(ps.get("x"), ps.get("w"), ps.get("b"), {4, 2, 1}))); });
  }
  SUBCASE("conv2d stride 1") {
    auto ps = params_with({{"x", {1, 2, 5, 5}}, {"w", {2, 2, 3, 3}}, {"b", {2}}}, 12);
    expect_grads(ps, [&] { return nn::sum(nn::tanh(nn::conv2d(ps.get("x"), ps.get("w"), ps.get("b"), {3, 1, 1}))); });
  }
  SUBCASE("conv_transpose2d") {
    auto ps = params_with({{"x", {2, 3, 3, 3}}, {"w", {3, 2, 4, 4}}, {"b", {2}}}, 13);
    expect_grads(ps, [&] {
      return nn::sum(nn::tanh(nn::conv_transpose2d(ps.get("x"), ps.get("w"), ps.get("b"), {4, 2, 1})));
    });
  }
  SUBCASE("instance_norm") {
    auto ps = params_with({{"x", {2, 3, 4, 4}}, {"m", {2, 3, 4, 4}}}, 14);
    expect_grads(ps, [&] { return nn::sum(nn::tanh(nn::add(nn::instance_norm(ps.get("x")), ps.get("m")))); });
  }
  SUBCASE("batch_norm training") {
    auto ps = params_with({{"x", {3, 2, 3, 3}}, {"g", {2}}, {"b", {2}}, {"m", {3, 2, 3, 3}}}, 15);
    nn::BatchNormState st;
    expect_grads(ps, [&] {
      auto y = nn::batch_norm(ps.get("x"), ps.get("g"), ps.get("b"), st, true);
      return nn::sum(nn::tanh(nn::add(y, ps.get("m"))));
    });
  }
  SUBCASE("pointwise nonlinearities") {
    auto ps = params_with({{"x", {4, 5}}}, 16);
    expect_grads(ps, [&] {
      const auto& x = ps.get("x");
      return nn::sum(nn::add(nn::add(nn::sigmoid(x), nn::softplus(nn::scale(x, 3.0))),
                             nn::tanh(nn::leaky_relu(nn::scale(x, 2.0), 0.2))));
    });
  }
  SUBCASE("pooling and reshaping") {
    auto ps = params_with({{"x", {2, 3, 4, 4}}, {"y", {2, 3, 2, 2}}}, 17);
    expect_grads(ps, [&] {
      auto p = nn::max_pool2d(ps.get("x"), {3, 2, 1});
      auto c = nn::concat1(p, ps.get("y"));
      auto s = nn::slice0(c, 1, 1);
      auto g = nn::global_avg_pool(c);
      return nn::add(nn::sum(nn::tanh(nn::reshape(s, {6, 4}))), nn::l2_norm<double>(std::vector<VarD>{g}));
    });
  }
  SUBCASE("linear algebra") {
    auto ps = params_with({{"a", {3, 4}}, {"b", {5, 4}}, {"w", {4, 4}}, {"c", {4}}, {"z", {3, 2}}}, 18);
    expect_grads(ps, [&] {
      auto h = nn::linear(ps.get("a"), ps.get("w"), ps.get("c"));
      auto m = nn::matmul_nt(h, ps.get("b"));
      auto r = nn::rowdot(h, ps.get("a"));
      auto bz = nn::broadcast_spatial(ps.get("z"), 2, 2);
      return nn::add(nn::add(nn::mean(nn::tanh(m)), nn::sum(nn::sigmoid(r))), nn::l1_mean(bz, nn::scale(bz, 0.5)));
    });
  }
  SUBCASE("softmax cross-entropy rows") {
    auto ps = params_with({{"s", {4, 6}}}, 19);
    const std::vector<std::int64_t> pos{0, 3, 5, 2};
    expect_grads(ps, [&] { return nn::sum(nn::softmax_xent_rows(ps.get("s"), pos, 0.3, 1.0 / 0.3)); });
  }
  SUBCASE("mask multiply and subtraction") {
    auto ps = params_with({{"x", {2, 3}}, {"y", {2, 3}}}, 20);
    const std::vector<double> mask{1, 0, 1, 0.5, 1, 0};
    expect_grads(ps, [&] { return nn::sum(nn::tanh(nn::mask_mul<double>(nn::sub(ps.get("x"), ps.get("y")), mask))); });
  }
}

TEST_CASE("softmax cross-entropy equals the log-sum-exp closed form") {
  auto s = VarD::constant({1, 3}, {1.0, 0.0, -2.0});
  const std::vector<std::int64_t> pos{0};
  const double tau = 0.5;
  const double expect = std::log(std::exp(2.0) + std::exp(0.0) + std::exp(-4.0)) - 2.0;
  CHECK(nn::softmax_xent_rows(s, pos, tau, 1.0).item() == doctest::Approx(expect).epsilon(1e-14));
  CHECK(nn::softmax_xent_rows(s, pos, tau, 2.0).item() == doctest::Approx(2 * expect).epsilon(1e-14));
  CHECK_THROWS(nn::softmax_xent_rows(s, pos, 0.0, 1.0));
}

TEST_CASE("tensor storage is 64-byte aligned") {
  for (int n : {1, 3, 17, 1000}) {
    auto v = nn::Var<float>::zeros({n});
    CHECK(reinterpret_cast<std::uintptr_t>(v.data().data()) % 64 == 0);
    auto d = nn::Var<double>::leaf({n}, std::vector<double>(n, 1.0));
    CHECK(reinterpret_cast<std::uintptr_t>(d.mutable_grad().data()) % 64 == 0);
  }
}

TEST_CASE("no-grad mode records no graph") {
  auto ps = params_with({{"x", {2, 2}}}, 21);
  nn::NoGradGuard guard;
  CHECK_FALSE(nn::grad_enabled());
  auto y = nn::sum(nn::tanh(ps.get("x")));
  CHECK_FALSE(y.requires_grad());
}

TEST_CASE("adam first step moves each weight by lr against the gradient sign") {
  nn::ParameterSet<float> ps;
  auto& w = ps.add("w", {3});
  auto d = w.mutable_data();
  d[0] = 1.0f;
  d[1] = -2.0f;
  d[2] = 0.5f;
  auto g = w.mutable_grad();
  g[0] = 0.3f;
  g[1] = -4.0f;
  g[2] = 0.0f;
  nn::Adam opt({0.01, 0.9, 0.999, 1e-8});
  opt.step(ps);
  CHECK(w.data()[0] == doctest::Approx(0.99).epsilon(1e-5));
  CHECK(w.data()[1] == doctest::Approx(-1.99).epsilon(1e-5));
  CHECK(w.data()[2] == 0.5f);
  CHECK(opt.step_count() == 1);
}

TEST_CASE("adam minimises a quadratic") {
  nn::ParameterSet<float> ps;
  auto& w = ps.add("w", {2});
  w.mutable_data()[0] = 3.0f;
  w.mutable_data()[1] = -1.0f;
  nn::Adam opt({0.05});
  for (int i = 0; i < 800; ++i) {
    ps.zero_grad();
    auto v = ps.get("w");
    auto shifted = nn::reshape(nn::sub(v, Var<float>::constant({2}, {1.0f, 2.0f})), {1, 2});
    nn::backward(nn::sum(nn::rowdot(shifted, shifted)));
    opt.step(ps);
  }
  CHECK(w.data()[0] == doctest::Approx(1.0).epsilon(0.02));
  CHECK(w.data()[1] == doctest::Approx(2.0).epsilon(0.02));
}

TEST_CASE("parameters and optimiser state survive an archive round-trip") {
  testutil::TempDir dir("nn_ser");
  nn::ParameterSet<float> ps;
  std::mt19937_64 rng(5);
  nn::init_normal(ps.add("a", {4, 3}), 1.0, rng);
  nn::init_normal(ps.add("b", {2}), 1.0, rng);
  for (auto& [_, v] : ps.items()) {
    auto vv = v;
    for (auto& g : vv.mutable_grad()) g = 0.25f;
  }
  nn::Adam opt({1e-3});
  opt.step(ps);

  util::Archive ar;
  ar.kind = "test";
  nn::save_params(ar, "p", ps);
  nn::save_adam(ar, "opt", opt);
  ar.save(dir / "p.ckpt");
  const auto back = util::Archive::load(dir / "p.ckpt");

  nn::ParameterSet<float> ps2;
  ps2.add("a", {4, 3});
  ps2.add("b", {2});
  nn::load_params(back, "p", ps2);
  nn::Adam opt2;
  nn::load_adam(back, "opt", opt2);
  for (const auto& [name, v] : ps.items())
    CHECK(std::memcmp(v.data().data(), ps2.get(name).data().data(), v.data().size_bytes()) == 0);
  CHECK(opt2.step_count() == 1);
  CHECK(opt2.lr() == opt.lr());
  CHECK(opt2.state().at("a").v == opt.state().at("a").v);

  nn::ParameterSet<float> wrong;
  wrong.add("a", {3, 4});
  wrong.add("b", {2});
  CHECK_THROWS(nn::load_params(back, "p", wrong));
}

}
