#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "protoshape/ops.hpp"
#include "testutil.hpp"

using namespace ps;
using pstest::max_grad_rel_err;
using pstest::random_tensor;

TEST_CASE("linear basics") {
  Tensor x = Tensor::zeros({2, 3});
  Tensor w = Tensor::from({3, 2}, {1, 2, 3, 4, 5, 6}, true);
  Tensor b = Tensor::zeros({2});
  Tensor y = linear(x, w, b);
  for (size_t i = 0; i < y.data().size(); ++i) CHECK(y.at(i) == 0.0);

  Tensor id = Tensor::from({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  Tensor x2 = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6});
  Tensor y2 = linear(x2, id, Tensor::zeros({3}));
  for (size_t i = 0; i < 6; ++i) CHECK(y2.at(i) == doctest::Approx(x2.at(i)).epsilon(1e-15));

  CHECK_THROWS_AS(linear(Tensor::zeros({2, 4}), id, Tensor::zeros({3})), DimensionError);
}

TEST_CASE("linear gradient vs finite differences") {
  for (uint64_t seed : {1u, 2u, 3u}) {
    Rng rng(seed);
    Params p;
    p["x"] = random_tensor({2, 3}, rng);
    p["w"] = random_tensor({3, 4}, rng);
    p["b"] = random_tensor({4}, rng);
    double err = max_grad_rel_err(
        p, [&] { return sum_all(linear(p.at("x"), p.at("w"), p.at("b"))); });
    CHECK(err < 1e-5);
  }
}

TEST_CASE("conv3d identity kernel and zero input") {
  Rng rng(7);
  Tensor x = random_tensor({1, 4, 4, 4}, rng, false);
  Tensor k = Tensor::zeros({1, 1, 3, 3, 3});
  k.data()[13] = 1.0;  // spatial center of the 3x3x3 kernel
  Tensor y = conv3d(x, k, 1);
  REQUIRE(y.shape() == Shape{1, 4, 4, 4});
  for (size_t i = 0; i < x.data().size(); ++i) CHECK(y.at(i) == doctest::Approx(x.at(i)));

  Tensor z = conv3d(Tensor::zeros({1, 4, 4, 4}), k, 1);
  for (size_t i = 0; i < z.data().size(); ++i) CHECK(z.at(i) == 0.0);
}

TEST_CASE("conv3d stride-2 shape and gradients") {
  for (uint64_t seed : {11u, 12u, 13u}) {
    Rng rng(seed);
    Params p;
    p["x"] = random_tensor({1, 4, 4, 4}, rng);
    p["k"] = random_tensor({2, 1, 3, 3, 3}, rng);
    Tensor y = conv3d(p.at("x"), p.at("k"), 2);
    REQUIRE(y.shape() == Shape{2, 2, 2, 2});
    double err1 = max_grad_rel_err(p, [&] { return sum_all(conv3d(p.at("x"), p.at("k"), 1)); });
    double err2 = max_grad_rel_err(p, [&] { return sum_all(conv3d(p.at("x"), p.at("k"), 2)); });
    CHECK(err1 < 1e-4);
    CHECK(err2 < 1e-4);
  }
}

TEST_CASE("conv3d_transposed adjoint and shape") {
  Tensor z = conv3d_transposed(Tensor::zeros({2, 2, 2, 2}), Tensor::zeros({2, 1, 3, 3, 3}));
  REQUIRE(z.shape() == Shape{1, 4, 4, 4});
  for (double v : z.data()) CHECK(v == 0.0);

  for (uint64_t seed : {21u, 22u, 23u}) {
    Rng rng(seed);
    Tensor x = random_tensor({2, 4, 4, 4}, rng, false);
    Tensor k = random_tensor({3, 2, 3, 3, 3}, rng, false);
    Tensor y = random_tensor({3, 2, 2, 2}, rng, false);
    Tensor fx = conv3d(x, k, 2);        // [3,2,2,2]
    Tensor ty = conv3d_transposed(y, k);  // [2,4,4,4]
    double lhs = 0, rhs = 0;
    for (size_t i = 0; i < fx.data().size(); ++i) lhs += fx.at(i) * y.at(i);
    for (size_t i = 0; i < x.data().size(); ++i) rhs += x.at(i) * ty.at(i);
    CHECK(std::abs(lhs - rhs) / std::max(1.0, std::abs(lhs)) < 1e-10);
  }
}

TEST_CASE("conv3d_transposed gradients") {
  Rng rng(31);
  Params p;
  p["y"] = random_tensor({2, 2, 2, 2}, rng);
  p["k"] = random_tensor({2, 1, 3, 3, 3}, rng);
  double err =
      max_grad_rel_err(p, [&] { return sum_all(conv3d_transposed(p.at("y"), p.at("k"))); });
  CHECK(err < 1e-4);
}

TEST_CASE("pointwise ops") {
  Tensor x = Tensor::from({4}, {-1, 2, 0, 0.5}, true);
  Tensor r = relu(x);
  CHECK(r.at(0) == 0.0);
  CHECK(r.at(1) == 2.0);
  CHECK(tanh_op(Tensor::scalar(0.0)).item() == 0.0);
  CHECK(sigmoid(Tensor::scalar(0.0)).item() == doctest::Approx(0.5));

  Params p;
  p["x"] = Tensor::from({3}, {0.0, 0.7, -0.3}, true);
  double err = max_grad_rel_err(p, [&] { return sum_all(tanh_op(p.at("x"))); }, 1e-6);
  CHECK(err < 1e-4);
  p.at("x").zero_grad();
  Tensor l = sum_all(tanh_op(p.at("x")));
  backward(l);
  CHECK(p.at("x").grad()[0] == doctest::Approx(1.0));  // d tanh/dx at 0

  Params q;
  q["x"] = Tensor::from({3}, {0.5, 1.5, 2.5}, true);
  CHECK(max_grad_rel_err(q, [&] { return sum_all(log_op(q.at("x"))); }, 1e-6) < 1e-4);
  CHECK(max_grad_rel_err(q, [&] { return sum_all(sigmoid(q.at("x"))); }, 1e-6) < 1e-4);
}

TEST_CASE("elementwise arithmetic gradients") {
  Rng rng(41);
  Params p;
  p["a"] = random_tensor({2, 3}, rng);
  p["b"] = random_tensor({2, 3}, rng);
  p["s"] = random_tensor({1}, rng);
  auto f = [&] {
    Tensor t = add(mul(p.at("a"), p.at("b")), sub(p.at("a"), p.at("b")));
    t = scale(t, p.at("s"));
    t = add_scalar(mul_scalar(t, 1.7), 0.3);
    return mean_all(t);
  };
  CHECK(max_grad_rel_err(p, f, 1e-6) < 1e-4);
}

TEST_CASE("concat ops") {
  Rng rng(43);
  Params p;
  p["a"] = random_tensor({2, 2, 2, 2}, rng);
  p["b"] = random_tensor({1, 2, 2, 2}, rng);
  Tensor c = concat_channels(p.at("a"), p.at("b"));
  REQUIRE(c.shape() == Shape{3, 2, 2, 2});
  CHECK(max_grad_rel_err(p, [&] {
          return sum_all(mul(concat_channels(p.at("a"), p.at("b")),
                             concat_channels(p.at("a"), p.at("b"))));
        }) < 1e-4);

  Params q;
  q["a"] = random_tensor({3, 2}, rng);
  q["b"] = random_tensor({3, 4}, rng);
  Tensor cc = concat_cols(q.at("a"), q.at("b"));
  REQUIRE(cc.shape() == Shape{3, 6});
  CHECK(cc.at(2) == q.at("b").at(0));
  CHECK(max_grad_rel_err(q, [&] {
          Tensor t = concat_cols(q.at("a"), q.at("b"));
          return sum_all(mul(t, t));
        }) < 1e-4);
}

TEST_CASE("add_channel_bias") {
  Rng rng(47);
  Params p;
  p["x"] = random_tensor({2, 2, 2, 2}, rng);
  p["b"] = random_tensor({2}, rng);
  Tensor y = add_channel_bias(p.at("x"), p.at("b"));
  CHECK(y.at(0) == doctest::Approx(p.at("x").at(0) + p.at("b").at(0)));
  CHECK(y.at(8) == doctest::Approx(p.at("x").at(8) + p.at("b").at(1)));
  CHECK(max_grad_rel_err(p, [&] {
          Tensor t = add_channel_bias(p.at("x"), p.at("b"));
          return sum_all(mul(t, t));
        }) < 1e-4);
}

TEST_CASE("max_over_points") {
  Tensor one = Tensor::from({1, 3}, {3, -1, 2});
  Tensor m = max_over_points(one);
  REQUIRE(m.shape() == Shape{3});
  CHECK(m.at(0) == 3.0);
  CHECK(m.at(1) == -1.0);

  Rng rng(53);
  Tensor x = pstest::random_tensor({5, 3}, rng, false);
  Tensor perm = Tensor::zeros({5, 3});
  int order[5] = {4, 2, 0, 1, 3};
  for (int i = 0; i < 5; ++i)
    for (int d = 0; d < 3; ++d) perm.data()[i * 3 + d] = x.at(order[i] * 3 + d);
  Tensor ma = max_over_points(x), mb = max_over_points(perm);
  for (int d = 0; d < 3; ++d) CHECK(ma.at(d) == mb.at(d));

  Params p;
  p["x"] = random_tensor({5, 3}, rng);
  CHECK(max_grad_rel_err(p, [&] { return sum_all(max_over_points(p.at("x"))); }, 1e-6) < 1e-6);

  CHECK_THROWS_AS(max_over_points(Tensor::zeros({0, 3})), ContractError);
}

TEST_CASE("softmax cross entropy") {
  Tensor logits = Tensor::from({3}, {1.0, 2.0, 0.5}, true);
  Tensor l = softmax_cross_entropy(logits, 1);
  double lse = std::log(std::exp(1.0) + std::exp(2.0) + std::exp(0.5));
  CHECK(l.item() == doctest::Approx(lse - 2.0).epsilon(1e-12));

  Params p;
  p["lg"] = Tensor::from({4}, {0.3, -1.2, 0.8, 0.1}, true);
  CHECK(max_grad_rel_err(p, [&] { return softmax_cross_entropy(p.at("lg"), 2); }, 1e-6) < 1e-4);
}

TEST_CASE("backward contract") {
  Tensor w = Tensor::from({3}, {1, 2, 3}, true);
  Tensor l = sum_all(w);
  backward(l);
  for (double g : w.grad()) CHECK(g == 1.0);

  w.zero_grad();
  Tensor z = mul_scalar(sum_all(w), 0.0);
  backward(z);
  for (double g : w.grad()) CHECK(g == 0.0);

  CHECK_THROWS_AS(backward(Tensor::from({2}, {1, 2})), ContractError);
}

TEST_CASE("composite graph matches finite differences") {
  for (uint64_t seed : {61u, 62u, 63u}) {
    Rng rng(seed);
    Params p;
    p["x"] = random_tensor({1, 4, 4, 4}, rng, true, 0.5);
    p["k"] = random_tensor({2, 1, 3, 3, 3}, rng, true, 0.5);
    p["w"] = random_tensor({16, 3}, rng, true, 0.5);
    p["b"] = random_tensor({3}, rng, true, 0.5);
    auto f = [&] {
      Tensor h = relu(conv3d(p.at("x"), p.at("k"), 2));  // [2,2,2,2]
      Tensor flat = Tensor::from({1, 16}, h.data());
      flat.node()->parents = {h.node()};
      flat.node()->backward = [](TensorNode& n) {
        TensorNode& par = *n.parents[0];
        par.ensure_grad();
        for (size_t i = 0; i < n.grad.size(); ++i) par.grad[i] += n.grad[i];
      };
      return sum_all(linear(flat, p.at("w"), p.at("b")));
    };
    CHECK(max_grad_rel_err(p, f, 1e-5) < 1e-3);
  }
}

TEST_CASE("no gradient flows into constant leaves") {
  Tensor a = Tensor::from({2}, {1, 2}, true);
  Tensor c = Tensor::from({2}, {3, 4}, false);
  Tensor l = sum_all(mul(a, c));
  backward(l);
  CHECK(a.grad()[0] == 3.0);
  CHECK(a.grad()[1] == 4.0);
  CHECK(c.grad().empty());
}

TEST_CASE("determinism of seeded tensors") {
  Rng r1(99), r2(99);
  Tensor a = pstest::random_tensor({4, 4}, r1);
  Tensor b = pstest::random_tensor({4, 4}, r2);
  for (size_t i = 0; i < a.data().size(); ++i) CHECK(a.at(i) == b.at(i));
}
