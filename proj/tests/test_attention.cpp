#include <cmath>
#include <stdexcept>
#include <vector>

#include "doctest.h"

#include "pggcn/attention.hpp"
#include "pggcn/gradcheck.hpp"
#include "pggcn/ops.hpp"
#include "pggcn/rng.hpp"

#include "oracles.hpp"

using namespace pggcn;

namespace {

double weighted_sum(const Tensor& t, const Tensor& w) {
  REQUIRE(t.shape() == w.shape());
  double s = 0.0;
  for (std::int64_t i = 0; i < t.size(); ++i) s += t[i] * w[i];
  return s;
}

}  // namespace

TEST_CASE("joint-major flattening is a lossless relabeling") {
  Rng rng(31);
  Tensor fmap = uniform_tensor({4, 5, 3}, -1.0, 1.0, rng);
  Tensor flat = flatten_joint_major(fmap);
  REQUIRE(flat.shape() == std::vector<int>{5, 12});
  for (int t = 0; t < 4; ++t) {
    for (int n = 0; n < 5; ++n) {
      for (int c = 0; c < 3; ++c) {
        CHECK(flat.at({n, t * 3 + c}) == fmap.at({t, n, c}));
      }
    }
  }
  CHECK(oracle::bitwise_equal(unflatten_joint_major(flat, 4, 3), fmap));
  CHECK_THROWS_AS((void)flatten_joint_major(Tensor::zeros({4, 5})), std::invalid_argument);
  CHECK_THROWS_AS((void)unflatten_joint_major(flat, 3, 3), std::invalid_argument);
}

TEST_CASE("affinity of a zero guide is uniform per row") {
  Rng rng(32);
  Tensor f_s = uniform_tensor({2, 4, 3}, -2.0, 2.0, rng);
  Tensor a = vanilla_affinity(f_s, Tensor::zeros({2, 4, 3}));
  REQUIRE(a.shape() == std::vector<int>{4, 4});
  for (std::int64_t i = 0; i < a.size(); ++i) CHECK(a[i] == 0.25);
}

TEST_CASE("affinity of orthonormal unit features: closed form") {
  // Logits are the 2x2 identity, so each row is softmax([1, 0]) up to order.
  Tensor f_s({1, 2, 2}, {1.0, 0.0, 0.0, 1.0});
  Tensor a = vanilla_affinity(f_s, f_s);
  const double e = std::exp(1.0);
  const double hi = e / (e + 1.0), lo = 1.0 / (e + 1.0);
  CHECK(std::abs(a.at({0, 0}) - hi) <= 1e-12);
  CHECK(std::abs(a.at({0, 1}) - lo) <= 1e-12);
  CHECK(std::abs(a.at({1, 0}) - lo) <= 1e-12);
  CHECK(std::abs(a.at({1, 1}) - hi) <= 1e-12);
  // matching features put the row maximum on the diagonal
  CHECK(a.at({0, 0}) > a.at({0, 1}));
  CHECK(a.at({1, 1}) > a.at({1, 0}));
}

TEST_CASE("affinity rows stay stochastic even for huge logit magnitudes") {
  Rng rng(33);
  for (int trial = 0; trial < 50; ++trial) {
    const double boost = (trial % 2 == 0) ? 1.0 : 1e3;  // products reach +-1e3
    Tensor f_s = uniform_tensor({3, 4, 2}, -1.0, 1.0, rng);
    Tensor f_p = uniform_tensor({3, 4, 2}, -boost, boost, rng);
    Tensor a = vanilla_affinity(f_s, f_p);
    REQUIRE(a.all_finite());
    for (int i = 0; i < 4; ++i) {
      double sum = 0.0;
      for (int j = 0; j < 4; ++j) {
        CHECK(a.at({i, j}) >= 0.0);
        sum += a.at({i, j});
      }
      CHECK(std::abs(sum - 1.0) <= 1e-6);
    }
  }
  CHECK_THROWS_AS((void)vanilla_affinity(Tensor::zeros({2, 4, 3}), Tensor::zeros({2, 5, 3})),
                  std::invalid_argument);
}

TEST_CASE("learned modulation at fresh initialization is invisible") {
  Rng rng(34);
  PgamState state(4, AttentionMode::dynamic);
  // construction contract: all-ones M, all-zeros M'
  for (std::int64_t i = 0; i < state.m.value.size(); ++i) {
    CHECK(state.m.value[i] == 1.0);
    CHECK(state.m_prime.value[i] == 0.0);
  }
  for (int trial = 0; trial < 10; ++trial) {
    Tensor a = softmax_rows(uniform_tensor({4, 4}, -2.0, 2.0, rng));
    CHECK(oracle::bitwise_equal(dynamic_affinity(a, state), a));
  }

  // M + M' == ones also leaves the affinity untouched
  PgamState shifted(4, AttentionMode::dynamic);
  shifted.m.value = Tensor::full({4, 4}, 2.0);
  shifted.m_prime.value = Tensor::full({4, 4}, -1.0);
  Tensor a = softmax_rows(uniform_tensor({4, 4}, -2.0, 2.0, rng));
  CHECK(oracle::bitwise_equal(dynamic_affinity(a, shifted), a));
}

TEST_CASE("fusion: zero guide, identity mixing and uniform mixing") {
  Rng rng(35);
  Tensor f_s = uniform_tensor({3, 4, 2}, -1.0, 1.0, rng);
  Tensor f_p = uniform_tensor({3, 4, 2}, -1.0, 1.0, rng);

  // zero guide contributes nothing
  Tensor a = softmax_rows(uniform_tensor({4, 4}, -1.0, 1.0, rng));
  CHECK(oracle::bitwise_equal(fuse(a, Tensor::zeros({3, 4, 2}), f_s), f_s));

  // identity affinity adds the guide verbatim
  Tensor eye = Tensor::zeros({4, 4});
  for (int i = 0; i < 4; ++i) eye.at({i, i}) = 1.0;
  CHECK(oracle::max_abs_diff(fuse(eye, f_p, f_s), add(f_p, f_s)) == 0.0);

  // uniform affinity adds the joint-mean of the guide to every joint
  Tensor uniform = Tensor::full({4, 4}, 0.25);
  Tensor fused = fuse(uniform, f_p, f_s);
  for (int t = 0; t < 3; ++t) {
    for (int c = 0; c < 2; ++c) {
      double mean = 0.0;
      for (int j = 0; j < 4; ++j) mean += f_p.at({t, j, c});
      mean /= 4.0;
      for (int j = 0; j < 4; ++j) {
        CHECK(std::abs(fused.at({t, j, c}) - (f_s.at({t, j, c}) + mean)) <= 1e-12);
      }
    }
  }
}

TEST_CASE("fusion scales linearly with jointly scaled inputs") {
  Rng rng(36);
  Tensor f_s = uniform_tensor({3, 5, 4}, -1.0, 1.0, rng);
  Tensor f_p = uniform_tensor({3, 5, 4}, -1.0, 1.0, rng);
  Tensor a = softmax_rows(uniform_tensor({5, 5}, -1.0, 1.0, rng));
  const double alpha = -2.75;
  Tensor lhs = fuse(a, scale(f_p, alpha), scale(f_s, alpha));
  Tensor rhs = scale(fuse(a, f_p, f_s), alpha);
  CHECK(oracle::max_abs_diff(lhs, rhs) <= 1e-10);
}

TEST_CASE("attention module: pass-through mode and parameter registration") {
  Rng rng(37);
  Tensor f_s = uniform_tensor({2, 4, 5, 3}, -1.0, 1.0, rng);
  Tensor f_p = uniform_tensor({2, 4, 5, 3}, -1.0, 1.0, rng);

  PgamModule off(5, AttentionMode::none);
  CHECK(off.passthrough());
  CHECK(oracle::bitwise_equal(off.forward(f_s, f_p), f_s));

  ParamRegistry reg_off, reg_vanilla, reg_dynamic;
  off.register_params(reg_off, "att");
  CHECK(reg_off.params.empty());

  PgamModule plain(5, AttentionMode::vanilla);
  plain.register_params(reg_vanilla, "att");
  CHECK(reg_vanilla.params.empty());  // nothing learned in vanilla mode
  CHECK_FALSE(plain.state.m.trainable);

  PgamModule learned(5, AttentionMode::dynamic);
  learned.register_params(reg_dynamic, "att");
  REQUIRE(reg_dynamic.params.size() == 2);
  CHECK(reg_dynamic.params[0].name == "att.m");
  CHECK(reg_dynamic.params[1].name == "att.m_prime");
  CHECK(reg_dynamic.params[0].param->trainable);
  CHECK_FALSE(reg_dynamic.params[0].param->decay);
  CHECK_FALSE(reg_dynamic.params[1].param->decay);
}

TEST_CASE("dynamic mode at fresh initialization reproduces vanilla mode") {
  Rng rng(38);
  PgamModule learned(5, AttentionMode::dynamic);
  PgamModule plain(5, AttentionMode::vanilla);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor f_s = uniform_tensor({2, 4, 5, 3}, -2.0, 2.0, rng);
    Tensor f_p = uniform_tensor({2, 4, 5, 3}, -2.0, 2.0, rng);
    CHECK(oracle::bitwise_equal(learned.forward(f_s, f_p), plain.forward(f_s, f_p)));
  }
}

TEST_CASE("batched attention treats every instance independently") {
  Rng rng(39);
  PgamModule mod(4, AttentionMode::dynamic);
  mod.state.m.value = uniform_tensor({4, 4}, 0.5, 1.5, rng);
  mod.state.m_prime.value = uniform_tensor({4, 4}, -0.5, 0.5, rng);

  Tensor f_s = uniform_tensor({3, 2, 4, 3}, -1.0, 1.0, rng);
  Tensor f_p = uniform_tensor({3, 2, 4, 3}, -1.0, 1.0, rng);
  Tensor batched = mod.forward(f_s, f_p);
  REQUIRE(batched.shape() == f_s.shape());

  const std::int64_t stride = 2 * 4 * 3;
  for (int b = 0; b < 3; ++b) {
    Tensor fs1({2, 4, 3});
    Tensor fp1({2, 4, 3});
    for (std::int64_t i = 0; i < stride; ++i) {
      fs1[i] = f_s[b * stride + i];
      fp1[i] = f_p[b * stride + i];
    }
    Tensor single = mod.forward(fs1, fp1);
    for (std::int64_t i = 0; i < stride; ++i) CHECK(single[i] == batched[b * stride + i]);
  }
}

TEST_CASE("attention module gradients pass the finite-difference probe") {
  Rng rng(40);
  PgamModule mod(5, AttentionMode::dynamic);
  // move the learned matrices off their initialization so their effect is live
  mod.state.m.value = uniform_tensor({5, 5}, 0.5, 1.5, rng);
  mod.state.m_prime.value = uniform_tensor({5, 5}, -0.5, 0.5, rng);

  Param f_s(uniform_tensor({4, 5, 3}, -1.0, 1.0, rng));
  Param f_p(uniform_tensor({4, 5, 3}, -1.0, 1.0, rng));
  Tensor w = uniform_tensor({4, 5, 3}, -1.0, 1.0, rng);

  auto loss = [&]() { return weighted_sum(mod.forward(f_s.value, f_p.value), w); };

  (void)mod.forward(f_s.value, f_p.value);
  mod.state.m.zero_grad();
  mod.state.m_prime.zero_grad();
  PgamGrads grads = mod.backward(w);
  f_s.grad = grads.d_fs;
  f_p.grad = grads.d_fp;

  for (Param* p : {&f_s, &f_p, &mod.state.m, &mod.state.m_prime}) {
    GradCheckReport report = finite_difference_check(loss, *p, 1e-5, 1e-4);
    INFO(report.message);
    CHECK(report.pass);
  }
}

TEST_CASE("attention backward demands a training-mode forward") {
  Rng rng(41);
  PgamModule mod(4, AttentionMode::dynamic);
  mod.set_training(false);
  Tensor f_s = uniform_tensor({2, 4, 3}, -1.0, 1.0, rng);
  (void)mod.forward(f_s, f_s);
  CHECK_THROWS_AS((void)mod.backward(f_s), std::logic_error);
}
