#include <doctest.h>

#include <cmath>
#include <vector>

#include "objvid/errors.hpp"
#include "objvid/gradcheck.hpp"
#include "objvid/object_time.hpp"
#include "objvid/rng.hpp"
#include "objvid/tensor.hpp"

using namespace objvid;

namespace {

Tensor random_tokens(std::size_t t, std::size_t n, std::size_t d, uint64_t seed) {
  Rng rng(seed);
  std::vector<double> v(t * n * d);
  for (double& x : v) x = rng.normal();
  return Tensor::from_data({t, n, d}, std::move(v));
}

// Interaction params with every branch awake, for gradient probing.
InteractionParams randomized_interaction(std::size_t d, std::size_t k, std::size_t heads,
                                         uint64_t seed) {
  InteractionParams p = make_interaction_params(d, k, heads, seed);
  Rng rng(seed + 1);
  for (Tensor t : {p.wo, p.ffn_w2, p.head_w}) {
    for (double& v : t.data()) v = rng.normal(0.0, 0.2);
  }
  return p;
}

}  // namespace

TEST_SUITE("object_time") {

TEST_CASE("identical tokens collapse to the single-token update") {
  const std::size_t d = 8;
  InteractionParams p = randomized_interaction(d, 3, 2, 5);
  Rng rng(7);
  std::vector<double> tok(d);
  for (double& v : tok) v = rng.normal();
  std::vector<double> three;
  for (int i = 0; i < 3; ++i) three.insert(three.end(), tok.begin(), tok.end());
  Tensor single = object_interact(Tensor::from_data({1, 1, d}, tok), p);
  Tensor triple = object_interact(Tensor::from_data({1, 3, d}, three), p);
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      CHECK(triple.data()[i * d + j] == doctest::Approx(single.data()[j]).epsilon(1e-12));
    }
  }
}

TEST_CASE("token permutation within a frame permutes outputs") {
  const std::size_t n = 4, d = 8;
  InteractionParams p = randomized_interaction(d, 3, 4, 11);
  Tensor tokens = random_tokens(1, n, d, 3);
  Tensor base = object_interact(tokens, p);
  const std::size_t perm[n] = {2, 0, 3, 1};
  std::vector<double> permuted(n * d);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      permuted[i * d + j] = tokens.data()[perm[i] * d + j];
    }
  }
  Tensor out = object_interact(Tensor::from_data({1, n, d}, permuted), p);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      CHECK(out.data()[i * d + j] ==
            doctest::Approx(base.data()[perm[i] * d + j]).epsilon(1e-12));
    }
  }
}

TEST_CASE("frames never mix in object_interact") {
  const std::size_t t = 3, n = 2, d = 8;
  InteractionParams p = randomized_interaction(d, 3, 2, 13);
  Tensor tokens = random_tokens(t, n, d, 17);
  Tensor full = object_interact(tokens, p);
  std::vector<double> lone(t * n * d, 0.0);
  for (std::size_t i = 0; i < n * d; ++i) lone[n * d + i] = tokens.data()[n * d + i];
  Tensor out = object_interact(Tensor::from_data({t, n, d}, lone), p);
  for (std::size_t i = 0; i < n * d; ++i) {
    CHECK(out.data()[n * d + i] == full.data()[n * d + i]);  // frame 1 bitwise
  }
}

TEST_CASE("static clips give time-constant state changes") {
  const std::size_t n = 2, d = 6;
  InteractionParams p = randomized_interaction(d, 3, 2, 19);
  Tensor frame = random_tokens(1, n, d, 23);
  Tensor tokens = concat({frame, frame, frame, frame}, 0);
  StateChangeMatrix sc = state_changes(tokens, 1, p);
  CHECK(sc.s.shape() == Shape{3, n, d});
  for (std::size_t t = 1; t < 3; ++t) {
    for (std::size_t i = 0; i < n * d; ++i) {
      CHECK(sc.s.data()[t * n * d + i] == sc.s.data()[i]);
    }
  }
}

TEST_CASE("state change shape and interval bounds") {
  InteractionParams p = make_interaction_params(8, 3, 2, 1);
  Tensor tokens = random_tokens(8, 3, 8, 29);
  CHECK(state_changes(tokens, 2, p).s.shape() == Shape{6, 3, 8});
  CHECK_THROWS_AS(state_changes(tokens, 8, p), ConfigError);
  CHECK_THROWS_AS(state_changes(tokens, 0, p), ConfigError);
  CHECK_THROWS_AS(state_changes(tokens, 9, p), ConfigError);
}

TEST_CASE("state changes depend only on the paired frames") {
  const std::size_t t = 6, n = 2, d = 6, delta = 2;
  InteractionParams p = randomized_interaction(d, 3, 2, 31);
  Tensor tokens = random_tokens(t, n, d, 37);
  StateChangeMatrix base = state_changes(tokens, delta, p);
  const std::size_t star = 3;
  std::vector<double> bumped(tokens.data());
  for (std::size_t i = 0; i < n * d; ++i) bumped[star * n * d + i] += 0.25;
  StateChangeMatrix out = state_changes(Tensor::from_data({t, n, d}, bumped), delta, p);
  for (std::size_t r = 0; r < t - delta; ++r) {
    const bool touched = (r == star) || (r + delta == star);
    bool differs = false;
    for (std::size_t i = 0; i < n * d; ++i) {
      if (out.s.data()[r * n * d + i] != base.s.data()[r * n * d + i]) differs = true;
    }
    CHECK(differs == touched);
  }
}

TEST_CASE("pair order carries the direction of time") {
  const std::size_t n = 1, d = 6;
  InteractionParams p = randomized_interaction(d, 3, 2, 41);
  Tensor a = random_tokens(1, n, d, 43);
  Tensor b = random_tokens(1, n, d, 47);
  Tensor ab = concat({a, b}, 0);
  Tensor ba = concat({b, a}, 0);
  Tensor s_ab = state_changes(ab, 1, p).s;
  Tensor s_ba = state_changes(ba, 1, p).s;
  bool differs = false;
  for (std::size_t i = 0; i < s_ab.size(); ++i) {
    if (s_ab.data()[i] != s_ba.data()[i]) differs = true;
  }
  CHECK(differs);
}

TEST_CASE("stacked intervals cover every delta once") {
  const std::size_t t = 4, n = 2, d = 6;
  InteractionParams p = randomized_interaction(d, 3, 2, 53);
  Tensor tokens = random_tokens(t, n, d, 59);
  StateChangeMatrix all = state_changes_all(tokens, p);
  CHECK(all.s.shape() == Shape{6, n, d});  // 4*3/2 stacked rows
  std::size_t row = 0;
  for (std::size_t delta = 1; delta < t; ++delta) {
    StateChangeMatrix one = state_changes(tokens, delta, p);
    for (std::size_t r = 0; r < t - delta; ++r, ++row) {
      for (std::size_t i = 0; i < n * d; ++i) {
        CHECK(all.s.data()[row * n * d + i] == one.s.data()[r * n * d + i]);
      }
    }
  }
}

TEST_CASE("pooling means and their order") {
  const std::size_t d = 5;
  StateChangeMatrix constant;
  constant.s = Tensor::full({3, 2, d}, 0.75);
  constant.delta = 1;
  Tensor v = pool_video(constant);
  CHECK(v.shape() == Shape{d});
  for (double x : v.data()) CHECK(x == doctest::Approx(0.75).epsilon(1e-15));

  // Two objects with constant-in-time vectors a and b.
  Rng rng(61);
  std::vector<double> a(d), b(d);
  for (double& x : a) x = rng.normal();
  for (double& x : b) x = rng.normal();
  std::vector<double> data;
  for (int t = 0; t < 3; ++t) {
    data.insert(data.end(), a.begin(), a.end());
    data.insert(data.end(), b.begin(), b.end());
  }
  StateChangeMatrix two;
  two.s = Tensor::from_data({3, 2, d}, data);
  two.delta = 1;
  Tensor v2 = pool_video(two);
  for (std::size_t j = 0; j < d; ++j) {
    CHECK(v2.data()[j] == doctest::Approx(0.5 * (a[j] + b[j])).epsilon(1e-12));
  }

  // Means over full axes commute.
  StateChangeMatrix r1;
  r1.s = random_tokens(4, 3, d, 67);
  r1.delta = 1;
  Tensor vt = pool_video(r1);
  Tensor by_objects_first = mean(mean(r1.s, 1), 0);
  for (std::size_t j = 0; j < d; ++j) {
    CHECK(std::fabs(vt.data()[j] - by_objects_first.data()[j]) < 1e-12);
  }
}

TEST_CASE("classification head basics and gradient") {
  const std::size_t d = 6, k = 4;
  InteractionParams p = make_interaction_params(d, k, 2, 71);
  Rng rng(73);
  for (double& v : p.head_b.data()) v = rng.normal();
  Tensor v0 = Tensor::zeros({d});
  Tensor logits = classify(v0, p);
  CHECK(logits.shape() == Shape{k});
  for (std::size_t i = 0; i < k; ++i) CHECK(logits.data()[i] == p.head_b.data()[i]);

  for (double& w : p.head_w.data()) w = rng.normal();
  std::vector<double> vv(d);
  for (double& x : vv) x = rng.normal();
  Tensor v1 = Tensor::from_data({d}, vv, true);
  auto res = grad_check([&] { return cross_entropy_with_logits(classify(v1, p), 1); },
                        {p.head_w, p.head_b, v1});
  CHECK(res.max_rel_err < 1e-6);
}

TEST_CASE("interaction parameters pass the finite-difference sweep") {
  const std::size_t t = 3, n = 2, d = 8;
  InteractionParams p = randomized_interaction(d, 3, 2, 79);
  Tensor tokens = random_tokens(t, n, d, 83);
  Tensor w = random_tokens(t - 1, n, d, 89);
  auto loss = [&] {
    Tensor mixed = object_interact(tokens, p);
    StateChangeMatrix sc = state_changes(mixed, 1, p);
    Tensor v = pool_video(sc);
    return add(mean_all(mul(sc.s, w)), cross_entropy_with_logits(classify(v, p), 2));
  };
  auto res = grad_check(loss, interaction_param_list(p), 1e-3);
  CHECK(res.max_rel_err < 1e-4);
}

}  // TEST_SUITE
