#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "semimoe/autodiff.hpp"
#include "support/gradcheck.hpp"

using namespace semimoe;
using semimoe::testing::gradcheck;
using semimoe::testing::random_tensor;

namespace {
Rng make_rng(uint64_t salt) { return Rng(0xabcdef, SeedTag::kTestMisc, salt); }
}  // namespace

TEST_CASE("elementwise ops forward values") {
  auto a = make_param(Tensor({3}, {1.0, -2.0, 0.5}));
  auto b = make_param(Tensor({3}, {4.0, 3.0, -1.0}));
  CHECK(add(a, b).value()[1] == doctest::Approx(1.0));
  CHECK(sub(a, b).value()[0] == doctest::Approx(-3.0));
  CHECK(mul(a, b).value()[2] == doctest::Approx(-0.5));
  CHECK(div(a, b).value()[0] == doctest::Approx(0.25));
  CHECK(relu(a).value()[1] == 0.0);
  CHECK(tanh_v(a).value()[0] == doctest::Approx(std::tanh(1.0)));
  CHECK(exp_v(a).value()[1] == doctest::Approx(std::exp(-2.0)));
  CHECK(rsub_scalar(1.0, a).value()[0] == doctest::Approx(0.0));
}

TEST_CASE("gradcheck: elementwise and reductions") {
  auto rng = make_rng(1);
  auto a = make_param(random_tensor({2, 5}, rng));
  auto b = make_param(random_tensor({2, 5}, rng, 0.5, 2.0));
  auto f = [&] {
    auto x = mul(add(a, b), tanh_v(a));
    auto y = div(x, b);
    return mean_all(add(exp_v(mul_scalar(a, 0.3)), y));
  };
  auto res = gradcheck(f, {a, b});
  CHECK(res.max_rel_err < 1e-6);
}

TEST_CASE("gradcheck: sum_per_sample and select_channel") {
  auto rng = make_rng(2);
  auto x = make_param(random_tensor({2, 3, 4, 4}, rng));
  auto f = [&] {
    auto p = select_channel(softmax_dim1(x), 1);
    return mean_all(sum_per_sample(mul(p, p)));
  };
  auto res = gradcheck(f, {x});
  CHECK(res.max_rel_err < 1e-6);
}

TEST_CASE("gradcheck: conv2d 3x3 and 1x1") {
  auto rng = make_rng(3);
  auto x = make_param(random_tensor({2, 3, 6, 6}, rng));
  auto w = make_param(random_tensor({4, 3, 3, 3}, rng, -0.5, 0.5));
  auto b = make_param(random_tensor({4}, rng, -0.2, 0.2));
  auto w1 = make_param(random_tensor({2, 4, 1, 1}, rng, -0.5, 0.5));
  auto b1 = make_param(random_tensor({2}, rng, -0.2, 0.2));
  auto f = [&] {
    auto y = conv2d(x, w, b, 1);
    auto z = conv2d(relu(y), w1, b1, 0);
    return mean_all(mul(z, z));
  };
  auto res = gradcheck(f, {x, w, b, w1, b1});
  CHECK(res.max_rel_err < 1e-5);
}

TEST_CASE("conv2d shape contract") {
  auto rng = make_rng(4);
  auto x = make_param(random_tensor({1, 3, 8, 8}, rng));
  auto w = make_param(random_tensor({5, 3, 3, 3}, rng));
  auto b = make_param(Tensor({5}));
  auto y = conv2d(x, w, b, 1);
  CHECK(y.shape() == std::vector<int64_t>{1, 5, 8, 8});
  auto wbad = make_param(random_tensor({5, 2, 3, 3}, rng));
  CHECK_THROWS(conv2d(x, wbad, b, 1));
}

TEST_CASE("gradcheck: linear") {
  auto rng = make_rng(5);
  auto x = make_param(random_tensor({3, 7}, rng));
  auto w = make_param(random_tensor({4, 7}, rng));
  auto b = make_param(random_tensor({4}, rng));
  auto f = [&] { return mean_all(tanh_v(linear(x, w, b))); };
  auto res = gradcheck(f, {x, w, b});
  CHECK(res.max_rel_err < 1e-6);
}

TEST_CASE("gradcheck: group_norm") {
  auto rng = make_rng(6);
  auto x = make_param(random_tensor({2, 4, 3, 3}, rng));
  auto gamma = make_param(random_tensor({4}, rng, 0.5, 1.5));
  auto beta = make_param(random_tensor({4}, rng, -0.3, 0.3));
  auto f = [&] { return mean_all(mul(group_norm(x, gamma, beta, 2), x)); };
  auto res = gradcheck(f, {x, gamma, beta});
  CHECK(res.max_rel_err < 1e-5);
}

TEST_CASE("gradcheck: maxpool2 and upsample2") {
  auto rng = make_rng(7);
  auto x = make_param(random_tensor({2, 3, 4, 4}, rng));
  auto f = [&] {
    auto y = upsample2(maxpool2(x));
    return mean_all(mul(y, y));
  };
  auto res = gradcheck(f, {x});
  CHECK(res.max_rel_err < 1e-6);
}

TEST_CASE("gradcheck: concat and stack") {
  auto rng = make_rng(8);
  auto a = make_param(random_tensor({2, 2, 4, 4}, rng));
  auto b = make_param(random_tensor({2, 3, 4, 4}, rng));
  auto c = make_param(random_tensor({2, 2, 4, 4}, rng));
  auto f = [&] {
    auto cat = concat_ch(a, b);
    auto st = stack_group({a, c});
    return add(mean_all(mul(cat, cat)), mean_all(mul(st, st)));
  };
  auto res = gradcheck(f, {a, b, c});
  CHECK(res.max_rel_err < 1e-6);
}

TEST_CASE("gradcheck: gating ops") {
  auto rng = make_rng(9);
  auto xg = make_param(random_tensor({2, 3, 4, 4, 4}, rng));
  auto wl = make_param(random_tensor({2, 3}, rng));
  auto f = [&] {
    auto w = softmax_lastdim(wl);
    auto fused = weighted_expert_sum(xg, w);
    auto pooled = gap_flatten(xg);
    return add(mean_all(mul(fused, fused)), mean_all(mul(pooled, pooled)));
  };
  auto res = gradcheck(f, {xg, wl});
  CHECK(res.max_rel_err < 1e-6);
}

TEST_CASE("softmax rows sum to one") {
  auto rng = make_rng(10);
  auto x = make_param(random_tensor({5, 3}, rng, -4.0, 4.0));
  auto p = softmax_lastdim(x);
  for (int64_t b = 0; b < 5; ++b) {
    double s = 0.0;
    for (int64_t m = 0; m < 3; ++m) {
      CHECK(p.value().at2(b, m) >= 0.0);
      s += p.value().at2(b, m);
    }
    CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("detach blocks gradient flow") {
  auto rng = make_rng(11);
  auto a = make_param(random_tensor({4}, rng));
  auto d = detach(mul(a, a));
  auto loss = mean_all(mul(d, a));
  a.zero_grad();
  backward(loss);
  // d(loss)/da through the detached branch must be absent: expect d/da of
  // mean(d*a) with d treated as a constant.
  for (int64_t i = 0; i < 4; ++i)
    CHECK(a.grad()[i] == doctest::Approx(d.value()[i] / 4.0).epsilon(1e-12));
}

TEST_CASE("no-grad mode records nothing") {
  auto a = make_param(Tensor({2}, {1.0, 2.0}));
  Variable y;
  {
    NoGradGuard guard;
    y = mul(a, a);
  }
  CHECK_FALSE(y.requires_grad());
}

TEST_CASE("gradient accumulation across repeated use") {
  auto a = make_param(Tensor({1}, {3.0}));
  auto y = add(mul(a, a), mul_scalar(a, 2.0));  // a^2 + 2a
  a.zero_grad();
  backward(sum_all(y));
  CHECK(a.grad()[0] == doctest::Approx(8.0));  // 2a + 2
}

TEST_CASE("dropout identity in inference, masked in training") {
  auto rng = make_rng(12);
  auto x = make_param(random_tensor({1, 100}, rng, 1.0, 2.0));
  auto y = dropout(x, 0.5, nullptr);
  CHECK(y.value().vec() == x.value().vec());

  Rng drng(123, SeedTag::kDropout);
  auto yt = dropout(x, 0.5, &drng);
  int64_t zeros = 0;
  for (int64_t i = 0; i < 100; ++i) {
    if (yt.value()[i] == 0.0)
      ++zeros;
    else
      CHECK(yt.value()[i] == doctest::Approx(2.0 * x.value()[i]));
  }
  CHECK(zeros > 20);
  CHECK(zeros < 80);
}

TEST_CASE("argmax_channel picks the larger logit") {
  Tensor x({1, 2, 2, 2}, {0.1, 0.9, 0.4, 0.2, /*ch1*/ 0.3, 0.5, 0.6, 0.1});
  Tensor am = argmax_channel(x);
  CHECK(am[0] == 1.0);  // 0.3 > 0.1
  CHECK(am[1] == 0.0);  // 0.9 > 0.5
  CHECK(am[2] == 1.0);
  CHECK(am[3] == 0.0);
}

TEST_CASE("ops are deterministic: same input, bit-identical output") {
  auto rng = make_rng(13);
  auto x = make_param(random_tensor({2, 4, 8, 8}, rng));
  auto w = make_param(random_tensor({4, 4, 3, 3}, rng));
  auto b = make_param(random_tensor({4}, rng));
  auto gamma = make_param(Tensor({4}, 1.0));
  auto beta = make_param(Tensor({4}));
  auto run = [&] {
    auto y = group_norm(conv2d(x, w, b, 1), gamma, beta, 2);
    auto loss = mean_all(mul(y, y));
    x.zero_grad();
    w.zero_grad();
    backward(loss);
    return std::make_pair(loss.value()[0], w.grad().vec());
  };
  auto r1 = run();
  auto r2 = run();
  CHECK(r1.first == r2.first);
  CHECK(r1.second == r2.second);
}
