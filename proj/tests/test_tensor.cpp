#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <vector>

#include "objvid/errors.hpp"
#include "objvid/gradcheck.hpp"
#include "objvid/rng.hpp"
#include "objvid/stf.hpp"
#include "objvid/tensor.hpp"

using namespace objvid;

namespace {

Tensor random_tensor(const Shape& shape, Rng& rng, bool requires_grad = true) {
  std::vector<double> data(shape_size(shape));
  for (double& v : data) v = rng.normal();
  return Tensor::from_data(shape, std::move(data), requires_grad);
}

// Random values bounded away from zero, for kink-free relu probing.
Tensor random_tensor_offzero(const Shape& shape, Rng& rng) {
  std::vector<double> data(shape_size(shape));
  for (double& v : data) {
    double x = rng.normal();
    if (std::fabs(x) < 0.2) x = x < 0.0 ? x - 0.2 : x + 0.2;
    v = x;
  }
  return Tensor::from_data(shape, std::move(data), true);
}

}  // namespace

TEST_SUITE("tensor") {

TEST_CASE("matmul identity and hand arithmetic") {
  Tensor eye = Tensor::from_data({2, 2}, {1, 0, 0, 1});
  Tensor m = Tensor::from_data({2, 2}, {1, 2, 3, 4});
  Tensor y = matmul(eye, m);
  CHECK(y.data() == std::vector<double>{1, 2, 3, 4});

  Tensor a = Tensor::from_data({2, 2}, {1, 0, 0, 0});
  Tensor b = Tensor::from_data({2, 2}, {0, 1, 1, 0});
  CHECK(matmul(a, b).data() == std::vector<double>{0, 1, 0, 0});
}

TEST_CASE("matmul shape mismatch names both shapes") {
  Tensor a = Tensor::zeros({2, 3});
  Tensor b = Tensor::zeros({4, 2});
  try {
    matmul(a, b);
    FAIL("expected DimensionError");
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2,3]") != std::string::npos);
    CHECK(msg.find("[4,2]") != std::string::npos);
  }
}

TEST_CASE("matmul gradient matches finite differences at 3x3") {
  Rng rng(11);
  Tensor a = random_tensor({3, 3}, rng);
  Tensor b = random_tensor({3, 3}, rng);
  auto res = grad_check([&] { return sum_all(matmul(a, b)); }, {a, b});
  CHECK(res.max_rel_err < 1e-6);
  CHECK(res.checked == 18);
}

TEST_CASE("softmax uniform and analytic logits") {
  Tensor x = Tensor::from_data({3}, {0, 0, 0});
  Tensor u = softmax(x, 0);
  for (double v : u.data()) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-12));

  Tensor y = softmax(Tensor::from_data({2}, {std::log(2.0), 0.0}), 0);
  CHECK(y.data()[0] == doctest::Approx(0.6666666666666666).epsilon(1e-12));
  CHECK(y.data()[1] == doctest::Approx(0.3333333333333333).epsilon(1e-12));
}

TEST_CASE("softmax columns normalize and land in [0,1]") {
  Rng rng(5);
  Tensor x = random_tensor({4, 5}, rng, false);
  Tensor y = softmax(x, 0);
  for (std::size_t j = 0; j < 5; ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < 4; ++i) {
      const double v = y.data()[i * 5 + j];
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
      s += v;
    }
    CHECK(std::fabs(s - 1.0) < 1e-12);
  }
}

TEST_CASE("softmax is bit-exactly invariant under axis permutation") {
  Rng rng(17);
  const std::size_t n = 9;
  std::vector<double> base(n);
  for (double& v : base) v = rng.normal() * 3.0;
  Tensor y0 = softmax(Tensor::from_data({n}, base), 0);
  std::vector<std::size_t> perm(n);
  for (std::size_t i = 0; i < n; ++i) perm[i] = i;
  for (int trial = 0; trial < 20; ++trial) {
    rng.shuffle(perm);
    std::vector<double> shuffled(n);
    for (std::size_t i = 0; i < n; ++i) shuffled[i] = base[perm[i]];
    Tensor yp = softmax(Tensor::from_data({n}, shuffled), 0);
    for (std::size_t i = 0; i < n; ++i) {
      CHECK(yp.data()[i] == y0.data()[perm[i]]);  // bitwise
    }
  }
}

TEST_CASE("layer_norm constant and two-point rows") {
  Tensor gain = Tensor::full({4}, 1.0);
  Tensor bias = Tensor::zeros({4});
  Tensor y = layer_norm(Tensor::from_data({4}, {5, 5, 5, 5}), gain, bias);
  for (double v : y.data()) CHECK(v == 0.0);

  Tensor g2 = Tensor::full({2}, 1.0);
  Tensor b2 = Tensor::zeros({2});
  Tensor y2 = layer_norm(Tensor::from_data({2}, {1, -1}), g2, b2);
  CHECK(y2.data()[0] == doctest::Approx(0.9999950000374997).epsilon(1e-12));
  CHECK(y2.data()[1] == doctest::Approx(-0.9999950000374997).epsilon(1e-12));
}

TEST_CASE("layer_norm gradient matches finite differences on 2x8") {
  Rng rng(23);
  Tensor x = random_tensor({2, 8}, rng);
  Tensor gain = random_tensor({8}, rng);
  Tensor bias = random_tensor({8}, rng);
  auto res = grad_check([&] { return sum_all(mul(layer_norm(x, gain, bias),
                                                 layer_norm(x, gain, bias))); },
                        {x, gain, bias});
  CHECK(res.max_rel_err < 1e-5);
}

TEST_CASE("layer_norm rejects empty feature dim") {
  Tensor x = Tensor::zeros({3, 0});
  Tensor g = Tensor::zeros({0});
  CHECK_THROWS_AS(layer_norm(x, g, g), DimensionError);
}

TEST_CASE("gru_cell zero parameters halve the state") {
  const std::size_t n = 3, d = 4;
  GruParams p;
  p.wz = Tensor::zeros({d, d});
  p.uz = Tensor::zeros({d, d});
  p.bz = Tensor::zeros({d});
  p.wr = Tensor::zeros({d, d});
  p.ur = Tensor::zeros({d, d});
  p.br = Tensor::zeros({d});
  p.wn = Tensor::zeros({d, d});
  p.un = Tensor::zeros({d, d});
  p.bn = Tensor::zeros({d});
  Rng rng(3);
  Tensor x = random_tensor({n, d}, rng, false);
  Tensor h = random_tensor({n, d}, rng, false);
  Tensor out = gru_cell(x, h, p);
  for (std::size_t i = 0; i < out.size(); ++i) {
    CHECK(out.data()[i] == doctest::Approx(0.5 * h.data()[i]).epsilon(1e-15));
  }

  Tensor zero = Tensor::zeros({n, d});
  Tensor zout = gru_cell(zero, zero, p);
  for (double v : zout.data()) CHECK(v == 0.0);
}

TEST_CASE("gru_cell gradients match finite differences") {
  const std::size_t n = 2, d = 3;
  Rng rng(7);
  GruParams p;
  p.wz = random_tensor({d, d}, rng);
  p.uz = random_tensor({d, d}, rng);
  p.bz = random_tensor({d}, rng);
  p.wr = random_tensor({d, d}, rng);
  p.ur = random_tensor({d, d}, rng);
  p.br = random_tensor({d}, rng);
  p.wn = random_tensor({d, d}, rng);
  p.un = random_tensor({d, d}, rng);
  p.bn = random_tensor({d}, rng);
  Tensor x = random_tensor({n, d}, rng);
  Tensor h = random_tensor({n, d}, rng);
  auto res = grad_check([&] { return sum_all(gru_cell(x, h, p)); },
                        {x, h, p.wz, p.uz, p.bz, p.wr, p.ur, p.br, p.wn, p.un, p.bn});
  CHECK(res.max_rel_err < 1e-5);
}

TEST_CASE("gru_cell rejects bad parameter shapes") {
  GruParams p;
  const std::size_t d = 3;
  p.wz = Tensor::zeros({d, d});
  p.uz = Tensor::zeros({d, d + 1});  // wrong
  p.bz = Tensor::zeros({d});
  p.wr = Tensor::zeros({d, d});
  p.ur = Tensor::zeros({d, d});
  p.br = Tensor::zeros({d});
  p.wn = Tensor::zeros({d, d});
  p.un = Tensor::zeros({d, d});
  p.bn = Tensor::zeros({d});
  Tensor x = Tensor::zeros({2, d});
  CHECK_THROWS_AS(gru_cell(x, x, p), DimensionError);
}

TEST_CASE("grad_check quadratic and linear cases") {
  Tensor x = Tensor::from_data({3}, {1, 2, 3}, true);
  auto res = grad_check([&] { return sum_all(mul(x, x)); }, {x});
  CHECK(res.max_rel_err < 1e-8);
  Tensor y = sum_all(mul(x, x));
  y.backward();
  CHECK(x.grad()[0] == doctest::Approx(2.0).epsilon(1e-9));
  CHECK(x.grad()[1] == doctest::Approx(4.0).epsilon(1e-9));
  CHECK(x.grad()[2] == doctest::Approx(6.0).epsilon(1e-9));

  Tensor z = sum_all(x);
  z.backward();
  for (double g : x.grad()) CHECK(g == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("grad_check rejects non-scalar objectives") {
  Tensor x = Tensor::from_data({2}, {1, 2}, true);
  CHECK_THROWS_AS(grad_check([&] { return mul(x, x); }, {x}), ContractError);
  CHECK_THROWS_AS(mul(x, x).backward(), ContractError);
}

TEST_CASE("fan-out accumulates both branch gradients") {
  Tensor x = Tensor::from_data({3}, {0.3, -0.7, 1.2}, true);
  Tensor loss = sum_all(add(scale(x, 2.0), tanh(x)));
  loss.backward();
  for (std::size_t i = 0; i < 3; ++i) {
    const double th = std::tanh(x.data()[i]);
    CHECK(x.grad()[i] == doctest::Approx(2.0 + (1.0 - th * th)).epsilon(1e-12));
  }
}

TEST_CASE("every primitive passes the finite-difference sweep") {
  Rng rng(101);
  struct Probe {
    const char* name;
    std::function<GradCheck()> run;
  };
  std::vector<Probe> probes;

  probes.push_back({"add_sub_mul", [&rng] {
    Rng r(201);
    Tensor a = random_tensor({3, 4}, r);
    Tensor b = random_tensor({3, 4}, r);
    Tensor c = random_tensor({3, 4}, r);
    return grad_check([&] { return sum_all(mul(add(a, b), sub(a, c))); }, {a, b, c});
  }});
  probes.push_back({"affine_neg", [&rng] {
    Rng r(202);
    Tensor a = random_tensor({5}, r);
    return grad_check([&] { return sum_all(neg(affine(a, 1.7, -0.3))); }, {a});
  }});
  probes.push_back({"transpose", [&rng] {
    Rng r(203);
    Tensor a = random_tensor({3, 5}, r);
    Tensor b = random_tensor({3, 5}, r);
    return grad_check([&] { return sum_all(mul(transpose(a), transpose(b))); }, {a, b});
  }});
  probes.push_back({"softmax_axis0", [&rng] {
    Rng r(204);
    Tensor a = random_tensor({4, 3}, r);
    Tensor w = random_tensor({4, 3}, r, false);
    return grad_check([&] { return sum_all(mul(softmax(a, 0), w)); }, {a});
  }});
  probes.push_back({"softmax_axis1", [&rng] {
    Rng r(205);
    Tensor a = random_tensor({4, 3}, r);
    Tensor w = random_tensor({4, 3}, r, false);
    return grad_check([&] { return sum_all(mul(softmax(a, 1), w)); }, {a});
  }});
  probes.push_back({"sigmoid_tanh", [&rng] {
    Rng r(206);
    Tensor a = random_tensor({6}, r);
    return grad_check([&] { return sum_all(mul(sigmoid(a), objvid::tanh(a))); }, {a});
  }});
  probes.push_back({"relu", [&rng] {
    Rng r(207);
    Tensor a = random_tensor_offzero({8}, r);
    Tensor w = random_tensor({8}, r, false);
    return grad_check([&] { return sum_all(mul(relu(a), w)); }, {a});
  }});
  probes.push_back({"gelu", [&rng] {
    Rng r(208);
    Tensor a = random_tensor({8}, r);
    Tensor w = random_tensor({8}, r, false);
    return grad_check([&] { return sum_all(mul(gelu(a), w)); }, {a});
  }});
  probes.push_back({"concat_slice", [&rng] {
    Rng r(209);
    Tensor a = random_tensor({2, 3}, r);
    Tensor b = random_tensor({2, 2}, r);
    Tensor w = random_tensor({2, 2}, r, false);
    return grad_check(
        [&] { return sum_all(mul(slice(concat({a, b}, 1), 1, 2, 2), w)); }, {a, b});
  }});
  probes.push_back({"reshape", [&rng] {
    Rng r(210);
    Tensor a = random_tensor({2, 6}, r);
    Tensor w = random_tensor({3, 4}, r, false);
    return grad_check([&] { return sum_all(mul(reshape(a, {3, 4}), w)); }, {a});
  }});
  probes.push_back({"mean_sum_axis", [&rng] {
    Rng r(211);
    Tensor a = random_tensor({3, 4}, r);
    Tensor w = random_tensor({4}, r, false);
    return grad_check([&] { return sum_all(mul(add(mean(a, 0), sum(a, 0)), w)); }, {a});
  }});
  probes.push_back({"mean_all", [&rng] {
    Rng r(212);
    Tensor a = random_tensor({3, 3}, r);
    return grad_check([&] { return mean_all(mul(a, a)); }, {a});
  }});
  probes.push_back({"sum_mean_list", [&rng] {
    Rng r(213);
    Tensor a = random_tensor({4}, r);
    Tensor b = random_tensor({4}, r);
    Tensor c = random_tensor({4}, r);
    return grad_check(
        [&] { return sum_all(mul(sum_list({a, b, c}), mean_list({a, b}))); }, {a, b, c});
  }});
  probes.push_back({"l2_norm", [&rng] {
    Rng r(214);
    Tensor a = random_tensor({3, 4}, r);
    Tensor w = random_tensor({3}, r, false);
    return grad_check([&] { return sum_all(mul(l2_norm(a, 1), w)); }, {a});
  }});
  probes.push_back({"cosine", [&rng] {
    Rng r(215);
    Tensor a = random_tensor({3, 4}, r);
    Tensor b = random_tensor({3, 4}, r);
    Tensor w = random_tensor({3}, r, false);
    return grad_check([&] { return sum_all(mul(cosine(a, b, 1), w)); }, {a, b});
  }});
  probes.push_back({"cosine_rows", [&rng] {
    Rng r(216);
    Tensor m = random_tensor({5, 4}, r);
    Tensor v = random_tensor({4}, r);
    Tensor w = random_tensor({5}, r, false);
    return grad_check([&] { return sum_all(mul(cosine_rows(m, v), w)); }, {m, v});
  }});
  probes.push_back({"cross_entropy", [&rng] {
    Rng r(217);
    Tensor z = random_tensor({6}, r);
    return grad_check([&] { return cross_entropy_with_logits(z, 2); }, {z});
  }});
  probes.push_back({"add_bias", [&rng] {
    Rng r(218);
    Tensor x = random_tensor({3, 4}, r);
    Tensor b = random_tensor({4}, r);
    return grad_check([&] { return sum_all(mul(add_bias(x, b), add_bias(x, b))); }, {x, b});
  }});
  probes.push_back({"row_normalize", [&rng] {
    Rng r(219);
    Tensor x = random_tensor({3, 4}, r);
    for (double& v : x.data()) v = std::fabs(v) + 0.5;  // attention-like positive rows
    Tensor w = random_tensor({3, 4}, r, false);
    return grad_check([&] { return sum_all(mul(row_normalize(x, 1e-8), w)); }, {x});
  }});
  probes.push_back({"logsumexp", [&rng] {
    Rng r(220);
    Tensor x = random_tensor({7}, r);
    return grad_check([&] { return logsumexp(x); }, {x});
  }});
  probes.push_back({"temporal_dwconv3", [&rng] {
    Rng r(221);
    Tensor x = random_tensor({4, 3, 2}, r);
    Tensor k = random_tensor({3, 2}, r);
    Tensor w = random_tensor({4, 3, 2}, r, false);
    return grad_check([&] { return sum_all(mul(temporal_dwconv3(x, k), w)); }, {x, k});
  }});

  for (const Probe& probe : probes) {
    auto res = probe.run();
    INFO(probe.name);
    CHECK(res.max_rel_err < 1e-5);
    CHECK(res.checked > 0);
  }
}

TEST_CASE("ops are bit-deterministic across repeated evaluation") {
  Rng rng(55);
  Tensor a = random_tensor({4, 4}, rng, false);
  Tensor b = random_tensor({4, 4}, rng, false);
  Tensor y1 = matmul(softmax(a, 1), gelu(b));
  Tensor y2 = matmul(softmax(a, 1), gelu(b));
  CHECK(y1.data() == y2.data());
}

TEST_CASE("cosine raises on zero-norm input") {
  Tensor a = Tensor::zeros({3});
  Tensor b = Tensor::from_data({3}, {1, 2, 3});
  CHECK_THROWS_AS(cosine(a, b, 0), NumericError);
  CHECK_THROWS_AS(cosine_rows(Tensor::zeros({2, 3}), b), NumericError);
}

TEST_CASE("no-grad guard suppresses graph recording") {
  Tensor x = Tensor::from_data({2}, {1, 2}, true);
  Tensor y;
  {
    NoGradGuard guard;
    CHECK_FALSE(grad_enabled());
    y = sum_all(mul(x, x));
  }
  CHECK(grad_enabled());
  CHECK_FALSE(y.requires_grad());
  CHECK_THROWS_AS(y.backward(), ContractError);
}

TEST_CASE("stf round-trips and rejects malformed files") {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "objvid_stf_test";
  fs::create_directories(dir);
  const std::string path = (dir / "t.stf").string();

  Rng rng(99);
  Tensor t = random_tensor({3, 2, 5}, rng, false);
  stf_write(path, t);
  Tensor back = stf_read(path);
  CHECK(back.shape() == t.shape());
  CHECK(back.data() == t.data());

  // bad magic
  {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    f.write("NOPE", 4);
  }
  CHECK_THROWS_AS(stf_read(path), FormatError);

  // truncated payload
  stf_write(path, t);
  {
    std::error_code ec;
    fs::resize_file(path, fs::file_size(path) - 8, ec);
    CHECK_FALSE(ec);
  }
  CHECK_THROWS_AS(stf_read(path), FormatError);

  // trailing bytes
  stf_write(path, t);
  {
    std::ofstream f(path, std::ios::binary | std::ios::app);
    f.write("xx", 2);
  }
  CHECK_THROWS_AS(stf_read(path), FormatError);

  fs::remove_all(dir);
}

}  // TEST_SUITE
