// Copyright Contributors to the genassets project
// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>

#include "genassets/adam.hpp"
#include "genassets/gradcheck.hpp"
#include "genassets/nn.hpp"
#include "genassets/ops.hpp"
#include "genassets/tensor_io.hpp"

using namespace ga;

TEST_CASE("sum backward is ones") {
  Tape<float> tape;
  auto x = tape.watch(Tensorf::from({3}, {1, 2, 3}));
  tape.backward(sum(x));
  auto g = tape.grad(x);
  for (int i = 0; i < 3; ++i) CHECK(g.data()[i] == 1.f);
}

TEST_CASE("quadratic backward") {
  Tape<float> tape;
  auto x = tape.watch(Tensorf::from({3}, {1, 2, 3}));
  tape.backward(sum(mul(x, x)));
  auto g = tape.grad(x);
  CHECK(g.data()[0] == 2.f);
  CHECK(g.data()[1] == 4.f);
  CHECK(g.data()[2] == 6.f);
}

TEST_CASE("two-layer perceptron gradients match finite differences") {
  Rng rng(41);
  auto w1 = Tensord::randn({5, 8}, rng, 0.5);
  auto b1 = Tensord::randn({8}, rng, 0.1);
  auto w2 = Tensord::randn({8, 1}, rng, 0.5);
  auto x = Tensord::randn({4, 5}, rng);
  // Check gradients w.r.t. each parameter tensor in turn.
  auto run = [&](const Tensord& p, int which) {
    return grad_check<double>(
        [&, which](const Tensord& v) {
          const Tensord& w1v = which == 0 ? v : w1;
          const Tensord& b1v = which == 1 ? v : b1;
          const Tensord& w2v = which == 2 ? v : w2;
          return sum(matmul(ga::tanh(linear(x, w1v, b1v)), w2v));
        },
        p, 1e-3);
  };
  CHECK(run(w1, 0) <= 1e-3);
  CHECK(run(b1, 1) <= 1e-3);
  CHECK(run(w2, 2) <= 1e-3);
}

TEST_CASE("grad_check closed cases") {
  Rng rng(7);
  CHECK(grad_check<double>([](const Tensord& t) { return sum(mul(t, t)); },
                           Tensord::randn({6}, rng), 1e-5) <= 1e-4);
  // Constant function: zero analytic and zero fd.
  CHECK(grad_check<double>([](const Tensord& t) { return mul(sum(mul(t, 0.0)), 1.0); },
                           Tensord::randn({4}, rng), 1e-4) == 0.0);
  // Bilinear interpolation of a plane, composed with sum.
  auto grid = Tensord::randn({5, 5, 2}, rng);
  auto uv = Tensord::uniform({7, 2}, rng, -0.85, 0.85);
  CHECK(grad_check<double>(
            [&](const Tensord& g) { return sum(bilinear_sample(g, uv)); }, grid, 1e-5) <= 1e-3);
  CHECK(grad_check<double>(
            [&](const Tensord& u) { return sum(bilinear_sample(grid, u)); }, uv, 1e-5) <= 1e-3);
}

TEST_CASE("elementwise and structural ops match finite differences") {
  Rng rng(99);
  using Fn = std::function<Tensord(const Tensord&)>;
  struct Case {
    const char* name;
    Fn fn;
    double lo, hi;
  };
  Tensord other = Tensord::randn({12}, rng);
  std::vector<Case> cases = {
      {"add", [&](const Tensord& x) { return sum(add(x, other)); }, -2, 2},
      {"sub", [&](const Tensord& x) { return sum(sub(other, x)); }, -2, 2},
      {"mul", [&](const Tensord& x) { return sum(mul(x, other)); }, -2, 2},
      {"div", [&](const Tensord& x) { return sum(div(other, x)); }, 0.5, 2},
      {"neg", [](const Tensord& x) { return sum(neg(x)); }, -2, 2},
      {"exp", [](const Tensord& x) { return sum(ga::exp(x)); }, -1, 1},
      {"log", [](const Tensord& x) { return sum(ga::log(x)); }, 0.5, 3},
      {"sqrt", [](const Tensord& x) { return sum(ga::sqrt(x)); }, 0.5, 3},
      {"square", [](const Tensord& x) { return sum(square(x)); }, -2, 2},
      {"abs", [](const Tensord& x) { return sum(ga::abs(x)); }, 0.3, 2},
      {"sigmoid", [](const Tensord& x) { return sum(sigmoid(x)); }, -2, 2},
      {"softplus", [](const Tensord& x) { return sum(softplus(x)); }, -2, 2},
      {"silu", [](const Tensord& x) { return sum(silu(x)); }, -2, 2},
      {"relu", [](const Tensord& x) { return sum(relu(x)); }, 0.2, 2},
      {"tanh", [](const Tensord& x) { return sum(ga::tanh(x)); }, -2, 2},
      {"clamp", [](const Tensord& x) { return sum(clamp(x, -0.5, 0.5)); }, -0.4, 0.4},
      {"cwise_max", [](const Tensord& x) { return sum(cwise_max(x, 0.1)); }, 0.3, 2},
      {"mean", [](const Tensord& x) { return mean(square(x)); }, -2, 2},
  };
  for (const auto& c : cases) {
    CAPTURE(c.name);
    const double err =
        grad_check<double>(c.fn, Tensord::uniform({12}, rng, c.lo, c.hi), 1e-5);
    CHECK(err <= 1e-3);
  }
}

TEST_CASE("matmul linear concat gather ops match finite differences") {
  Rng rng(123);
  auto a = Tensord::randn({3, 4}, rng);
  auto b = Tensord::randn({4, 5}, rng);
  CHECK(grad_check<double>([&](const Tensord& x) { return sum(matmul(x, b)); }, a, 1e-5) <= 1e-4);
  CHECK(grad_check<double>([&](const Tensord& x) { return sum(matmul(a, x)); }, b, 1e-5) <= 1e-4);
  auto bias = Tensord::randn({4}, rng);
  CHECK(grad_check<double>([&](const Tensord& x) { return sum(square(add_rows(x, bias))); }, a,
                           1e-5) <= 1e-4);
  CHECK(grad_check<double>(
            [&](const Tensord& x) { return sum(square(concat<double>({x, a}, 0))); }, a, 1e-5) <=
        1e-4);
  std::vector<std::int64_t> idx = {2, 0, 2, 1};
  CHECK(grad_check<double>([&](const Tensord& x) { return sum(square(index_select(x, idx))); }, a,
                           1e-5) <= 1e-4);
  CHECK(grad_check<double>([&](const Tensord& x) { return sum(square(row_range(x, 1, 3))); }, a,
                           1e-5) <= 1e-4);
  CHECK(grad_check<double>(
            [&](const Tensord& x) { return sum(square(permute(x, {1, 0}))); }, a, 1e-5) <= 1e-4);
  auto scale = Tensord::uniform({3}, rng, 0.5, 1.5);
  CHECK(grad_check<double>([&](const Tensord& x) { return sum(square(mul_rows(x, scale))); }, a,
                           1e-5) <= 1e-4);
  CHECK(grad_check<double>([&](const Tensord& s) { return sum(square(mul_rows(a, s))); }, scale,
                           1e-5) <= 1e-4);
}

TEST_CASE("segment ops match finite differences") {
  Rng rng(55);
  std::vector<std::int64_t> offsets = {0, 3, 3, 7, 8};
  auto x = Tensord::uniform({8}, rng, 0.1, 0.9);
  CHECK(grad_check<double>(
            [&](const Tensord& v) { return sum(square(segment_sum(v, offsets))); }, x, 1e-5) <=
        1e-4);
  CHECK(grad_check<double>(
            [&](const Tensord& v) { return sum(square(alpha_composite(v, offsets))); }, x,
            1e-5) <= 1e-3);
  // Include an opaque sample (alpha = 1): backward must stay exact.
  auto x2 = Tensord::from({4}, {0.3, 1.0, 0.5, 0.2});
  std::vector<std::int64_t> one_seg = {0, 4};
  Tape<double> tape;
  auto v = tape.watch(x2);
  tape.backward(sum(mul(alpha_composite(v, one_seg), Tensord::from({4}, {1, 2, 3, 4}))));
  auto g = tape.grad(v);
  // w = (0.3, 0.7, 0, 0); hand chain rule through the transmittance product.
  CHECK(g.data()[0] == doctest::Approx(-1.0).epsilon(1e-9));
  CHECK(g.data()[1] == doctest::Approx(0.07).epsilon(1e-6));
}

TEST_CASE("conv and norm ops match finite differences") {
  Rng rng(77);
  Conv2d<double> conv(2, 3, 3, rng);
  auto x = Tensord::randn({2, 5, 5}, rng);
  CHECK(grad_check<double>(
            [&](const Tensord& v) { return sum(square(conv2d(v, conv.w, conv.b, 3, 3))); }, x,
            1e-5) <= 1e-4);
  CHECK(grad_check<double>(
            [&](const Tensord& w) { return sum(square(conv2d(x, w, conv.b, 3, 3))); }, conv.w,
            1e-5) <= 1e-4);
  CHECK(grad_check<double>(
            [&](const Tensord& b) { return sum(square(conv2d(x, conv.w, b, 3, 3))); }, conv.b,
            1e-5) <= 1e-4);
  // Strided convolution.
  Conv2d<double> sconv(2, 2, 3, rng, 2);
  CHECK(grad_check<double>(
            [&](const Tensord& v) { return sum(square(conv2d(v, sconv.w, sconv.b, 3, 3, 2))); },
            x, 1e-5) <= 1e-4);
  CHECK(grad_check<double>([&](const Tensord& v) { return sum(square(upsample2x(v))); }, x,
                           1e-5) <= 1e-4);
  auto gamma = Tensord::uniform({4}, rng, 0.5, 1.5);
  auto beta = Tensord::randn({4}, rng, 0.2);
  auto xc = Tensord::randn({4, 3, 3}, rng);
  CHECK(grad_check<double>(
            [&](const Tensord& v) { return sum(square(group_norm(v, gamma, beta, 2))); }, xc,
            1e-4) <= 1e-3);
  CHECK(grad_check<double>(
            [&](const Tensord& g) { return sum(square(group_norm(xc, g, beta, 2))); }, gamma,
            1e-5) <= 1e-4);
  CHECK(grad_check<double>(
            [&](const Tensord& b) { return sum(square(group_norm(xc, gamma, b, 2))); }, beta,
            1e-5) <= 1e-4);
  auto cb = Tensord::randn({4}, rng);
  CHECK(grad_check<double>(
            [&](const Tensord& v) { return sum(square(add_channels(v, cb))); }, xc, 1e-5) <= 1e-4);
  CHECK(grad_check<double>(
            [&](const Tensord& b) { return sum(square(add_channels(xc, b))); }, cb, 1e-5) <= 1e-4);
}

TEST_CASE("gradient accumulation at fan-out is exact doubling") {
  Rng rng(3);
  auto x0 = Tensorf::randn({16}, rng);
  Tape<float> t1;
  auto a = t1.watch(x0);
  t1.backward(add(sum(mul(a, a)), sum(mul(a, a))));
  auto g2 = t1.grad(a);
  Tape<float> t2;
  auto b = t2.watch(x0);
  t2.backward(sum(mul(b, b)));
  auto g1 = t2.grad(b);
  for (std::int64_t i = 0; i < x0.numel(); ++i)
    CHECK(g2.data()[i] == 2.f * g1.data()[i]);
}

TEST_CASE("backward rejects non-scalar loss and non-finite values") {
  Tape<float> tape;
  auto x = tape.watch(Tensorf::from({2}, {1, 2}));
  auto y = mul(x, x);
  CHECK_THROWS_AS(tape.backward(y), ShapeError);
  CHECK_THROWS_AS(ga::log(Tensorf::from({2}, {1, 0})), NumericError);
  CHECK_THROWS_AS(div(Tensorf::from({1}, {1}), Tensorf::from({1}, {0})), NumericError);
}

TEST_CASE("adam: zero gradient leaves parameters unchanged") {
  auto p = Tensorf::from({3}, {1, 2, 3});
  AdamState<float> st(3);
  AdamConfig cfg;
  auto p2 = st.step(p, Tensorf::zeros({3}), cfg);
  for (int i = 0; i < 3; ++i) CHECK(p2.data()[i] == p.data()[i]);
}

TEST_CASE("adam: converges on 1-D quadratic") {
  // loss(p) = (p - 3)^2, minimizer 3.
  auto p = Tensorf::from({1}, {0.f});
  AdamState<float> st(1);
  AdamConfig cfg;
  cfg.lr = 0.1;
  for (int i = 0; i < 200; ++i) {
    Tape<float> tape;
    auto v = tape.watch(p);
    tape.backward(sum(square(sub(v, 3.f))));
    p = st.step(p, tape.grad(v), cfg);
  }
  CHECK(std::abs(p.item() - 3.f) <= 1e-3f);
}

TEST_CASE("adam: two runs with same inputs are bit-identical") {
  Rng rng(10);
  auto init = Tensorf::randn({8}, rng);
  auto run = [&]() {
    auto p = init;
    AdamState<float> st(8);
    AdamConfig cfg;
    for (int i = 0; i < 50; ++i) {
      Tape<float> tape;
      auto v = tape.watch(p);
      tape.backward(sum(square(v)));
      p = st.step(p, tape.grad(v), cfg);
    }
    return p;
  };
  auto p1 = run(), p2 = run();
  for (int i = 0; i < 8; ++i) CHECK(p1.data()[i] == p2.data()[i]);
}

TEST_CASE("tensor container round-trip, inspect and corruption") {
  namespace fs = std::filesystem;
  const auto dir = fs::temp_directory_path() / "ga_tensor_io_test";
  fs::create_directories(dir);
  const auto path = (dir / "t.gaft").string();

  Rng rng(5);
  std::map<std::string, Tensorf> tensors;
  tensors["a/x"] = Tensorf::randn({3, 4}, rng);
  tensors["b"] = Tensorf::randn({7}, rng);
  write_container(path, tensors);

  auto back = read_container(path);
  REQUIRE(back.size() == 2);
  CHECK(back["a/x"].shape() == Shape{3, 4});
  for (std::int64_t i = 0; i < 12; ++i)
    CHECK(back["a/x"].data()[i] == tensors["a/x"].data()[i]);

  auto manifest = inspect_container(path);
  REQUIRE(manifest.size() == 2);
  CHECK(manifest[0].name == "a/x");
  CHECK(manifest[1].shape == Shape{7});

  // Deterministic bytes for identical content.
  const auto path2 = (dir / "t2.gaft").string();
  write_container(path2, tensors);
  std::ifstream f1(path, std::ios::binary), f2(path2, std::ios::binary);
  std::string s1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
  std::string s2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
  CHECK(s1 == s2);

  // Corrupted magic: versioned error, no partial load.
  std::fstream corrupt(path, std::ios::binary | std::ios::in | std::ios::out);
  corrupt.write("XXXX", 4);
  corrupt.close();
  CHECK_THROWS_AS(read_container(path), IoError);
  CHECK_THROWS_AS(inspect_container(path), IoError);

  // Truncated payload.
  write_container(path, tensors);
  fs::resize_file(path, fs::file_size(path) - 5);
  CHECK_THROWS_AS(read_container(path), IoError);
  CHECK_THROWS_AS(inspect_container(path), IoError);
  fs::remove_all(dir);
}

TEST_CASE("reshape preserves payload and routes gradients") {
  Rng rng(21);
  auto x = Tensord::randn({2, 6}, rng);
  CHECK(grad_check<double>(
            [](const Tensord& v) { return sum(square(reshape(v, {3, 4}))); }, x, 1e-5) <= 1e-4);
  auto y = reshape(x, {4, 3});
  CHECK(y.payload() == x.payload());  // no copy without a tape
}

TEST_CASE("strict finite checks catch overflow when enabled") {
  strict_finite_checks() = true;
  CHECK_THROWS_AS(ga::exp(Tensorf::from({1}, {200.f})), NumericError);
  strict_finite_checks() = false;
}
