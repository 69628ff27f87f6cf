#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>

#include "oracles.hpp"
#include "tryon/adamw.hpp"
#include "tryon/io.hpp"
#include "tryon/ops.hpp"

using namespace tryon;

TEST_CASE("matmul identity and hand arithmetic") {
  Tensor I2 = Tensor::from({2, 2}, {1, 0, 0, 1}, DType::f64);
  Tensor b = Tensor::from({2, 2}, {3, 1, 2, 4}, DType::f64);
  Tensor c = matmul(I2, b);
  CHECK(c.to_vector() == std::vector<double>{3, 1, 2, 4});

  Tensor a = Tensor::from({1, 2}, {1, 2}, DType::f64);
  Tensor v = Tensor::from({2, 1}, {3, 4}, DType::f64);
  CHECK(matmul(a, v).item() == doctest::Approx(11.0).epsilon(1e-15));
}

TEST_CASE("matmul matches triple-loop oracle") {
  Rng rng(7);
  Tensor a = Tensor::randn({4, 5}, rng, DType::f64);
  Tensor b = Tensor::randn({5, 6}, rng, DType::f64);
  Tensor c = matmul(a, b);
  auto ref = oracles::matmul_loops(a.to_vector(), b.to_vector(), 4, 5, 6);
  auto got = c.to_vector();
  for (size_t i = 0; i < ref.size(); ++i)
    CHECK(oracles::rel_err(got[i], ref[i]) <= 1e-12);
}

TEST_CASE("matmul shape errors and flop accounting") {
  Tensor a = Tensor::zeros({2, 3});
  Tensor b = Tensor::zeros({4, 2});
  CHECK_THROWS_AS(matmul(a, b), ShapeError);

  auto& c = Counters::global();
  c.reset();
  Rng rng(3);
  Tensor x = Tensor::randn({3, 4, 5}, rng);
  Tensor w = Tensor::randn({5, 6}, rng);
  matmul(x, w);
  CHECK(c.flops == 2ull * 4 * 5 * 6 * 3);
}

TEST_CASE("matmul broadcasts a size-1 batch without copying") {
  Rng rng(11);
  Tensor a = Tensor::randn({4, 3, 5}, rng, DType::f64);
  Tensor b = Tensor::randn({1, 5, 2}, rng, DType::f64);
  Tensor c = matmul(a, b);
  CHECK(c.shape() == Shape{4, 3, 2});
  const auto av = a.to_vector();
  const auto bv = b.to_vector();
  const auto cv = c.to_vector();
  for (int64_t i = 0; i < 4; ++i) {
    // each batch row against the single shared matrix
    std::vector<double> ai(av.begin() + i * 15, av.begin() + (i + 1) * 15);
    auto ref = oracles::matmul_loops(ai, bv, 3, 5, 2);
    for (int64_t j = 0; j < 6; ++j)
      CHECK(oracles::rel_err(cv[static_cast<size_t>(i * 6 + j)], ref[static_cast<size_t>(j)]) <= 1e-12);
  }
}

TEST_CASE("softmax symmetry, masking, and oracle") {
  Tensor x = Tensor::from({2}, {0, 0}, DType::f64);
  auto y = softmax_lastdim(x).to_vector();
  CHECK(y[0] == doctest::Approx(0.5));
  CHECK(y[1] == doctest::Approx(0.5));

  Tensor x3 = Tensor::from({3}, {1, 1, 1}, DType::f64);
  Tensor mask = Tensor::from({3}, {0, 0, kMaskBlocked}, DType::f64);
  auto ym = softmax_lastdim(x3, &mask).to_vector();
  CHECK(ym[0] == doctest::Approx(0.5));
  CHECK(ym[1] == doctest::Approx(0.5));
  CHECK(ym[2] == 0.0);

  Tensor xr = Tensor::from({3}, {2, -1, 0.5}, DType::f64);
  auto yr = softmax_lastdim(xr).to_vector();
  auto ref = oracles::softmax_direct({2, -1, 0.5});
  for (int i = 0; i < 3; ++i) CHECK(oracles::rel_err(yr[static_cast<size_t>(i)], ref[static_cast<size_t>(i)]) <= 1e-12);
}

TEST_CASE("softmax rows sum to one over the unmasked positions") {
  Rng rng(23);
  for (int trial = 0; trial < 25; ++trial) {
    const int rows = 3, n = 7;
    Tensor x = Tensor::randn({rows, n}, rng, DType::f64);
    Tensor mask = Tensor::zeros({rows, n}, DType::f64);
    for (int64_t i = 0; i < mask.numel(); ++i)
      if (rng.uniform() < 0.4) mask.impl().set(i, kMaskBlocked);
    Tensor y = softmax_lastdim(x, &mask);
    for (int r = 0; r < rows; ++r) {
      double sum = 0.0;
      bool any = false;
      for (int j = 0; j < n; ++j) {
        const double v = y.at({r, j});
        CHECK(v >= 0.0);
        if (mask.at({r, j}) <= kMaskBlockThreshold)
          CHECK(v == 0.0);
        else
          any = true;
        sum += v;
      }
      CHECK(sum == doctest::Approx(any ? 1.0 : 0.0).epsilon(1e-12));
    }
  }
}

TEST_CASE("softmax fully masked rows are exactly zero") {
  Tensor x = Tensor::from({2, 3}, {5, 1, 2, 0.5, 0.25, 0}, DType::f64);
  Tensor mask = Tensor::from({2, 1, 3},
                             {kMaskBlocked, kMaskBlocked, kMaskBlocked, 0, 0, 0}, DType::f64);
  Tensor xm = reshape(x, {2, 1, 3});
  auto y = softmax_lastdim(xm, &mask).to_vector();
  CHECK(y[0] == 0.0);
  CHECK(y[1] == 0.0);
  CHECK(y[2] == 0.0);
  CHECK(y[3] + y[4] + y[5] == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("layer_norm trivial rows and oracle") {
  Tensor gain = Tensor::full({3}, 1.0, DType::f64);
  Tensor bias = Tensor::zeros({3}, DType::f64);
  Tensor x = Tensor::from({3}, {1, 1, 1}, DType::f64);
  for (double v : layer_norm(x, gain, bias, 1e-6).to_vector()) CHECK(std::abs(v) < 1e-3);

  Tensor g2 = Tensor::full({2}, 1.0, DType::f64);
  Tensor b2 = Tensor::zeros({2}, DType::f64);
  Tensor x2 = Tensor::from({2}, {-1, 1}, DType::f64);
  auto y2 = layer_norm(x2, g2, b2, 1e-10).to_vector();
  CHECK(y2[0] == doctest::Approx(-1.0).epsilon(1e-4));
  CHECK(y2[1] == doctest::Approx(1.0).epsilon(1e-4));

  Rng rng(5);
  Tensor xr = Tensor::randn({7}, rng, DType::f64);
  Tensor gr = Tensor::randn({7}, rng, DType::f64);
  Tensor br = Tensor::randn({7}, rng, DType::f64);
  auto got = layer_norm(xr, gr, br, 1e-5).to_vector();
  auto ref = oracles::layer_norm_direct(xr.to_vector(), gr.to_vector(), br.to_vector(), 1e-5);
  for (size_t i = 0; i < ref.size(); ++i) CHECK(oracles::rel_err(got[i], ref[i]) <= 1e-10);
}

TEST_CASE("backward on linear and quadratic forms") {
  Tensor w = Tensor::from({3}, {1, 2, 3}, DType::f64).set_requires_grad(true);
  Tensor x = Tensor::from({3}, {4, 5, 6}, DType::f64);
  Tensor loss = sum_all(mul(w, x));
  backward(loss);
  CHECK(w.grad().to_vector() == std::vector<double>{4, 5, 6});

  Tensor w2 = Tensor::from({2}, {1, -2}, DType::f64).set_requires_grad(true);
  Tensor loss2 = sum_all(mul(w2, w2));
  backward(loss2);
  CHECK(w2.grad().to_vector() == std::vector<double>{2, -4});
}

TEST_CASE("backward accumulates across calls") {
  Tensor w = Tensor::from({2}, {1, 1}, DType::f64).set_requires_grad(true);
  backward(sum_all(w));
  backward(sum_all(w));
  CHECK(w.grad().to_vector() == std::vector<double>{2, 2});
}

TEST_CASE("backward rejects non-scalar loss") {
  Tensor w = Tensor::zeros({2}, DType::f64, true);
  CHECK_THROWS_AS(backward(add(w, w)), ContractError);
}

TEST_CASE("finite differences agree for composites of all primitives") {
  double worst = 0.0;
  for (uint64_t seed = 0; seed < 100; ++seed) {
    Rng rng(seed * 31 + 1);
    Tensor a = Tensor::randn({2, 3, 4}, rng, DType::f64).set_requires_grad(true);
    Tensor w = Tensor::randn({4, 4}, rng, DType::f64).set_requires_grad(true);
    Tensor b = Tensor::randn({4}, rng, DType::f64).set_requires_grad(true);
    Tensor g = Tensor::randn({4}, rng, DType::f64, 0.3).set_requires_grad(true);
    Tensor mask = Tensor::from({4}, {0, 0, kMaskBlocked, 0}, DType::f64);
    auto loss_fn = [&]() {
      Tensor h = linear(a, w, b);
      h = gelu(h);
      h = layer_norm(h, add_scalar(g, 1.0), b, 1e-5);
      Tensor att = softmax_lastdim(h, &mask);
      Tensor mixed = matmul(att, transpose_last2(h));
      Tensor r = reshape(permute(mixed, {1, 0, 2}), {3, 2, 3});
      Tensor s = slice_lastdim(r, 1, 2);
      return mean_all(mul(s, s));
    };
    Rng pick(seed);
    worst = std::max(worst, oracles::grad_check({a, w, b, g}, loss_fn, pick, 4));
  }
  CHECK(worst <= 1e-4);
}

TEST_CASE("gather/scatter gradients pass finite differences") {
  Rng rng(42);
  Tensor x = Tensor::randn({5, 3}, rng, DType::f64).set_requires_grad(true);
  Tensor c = Tensor::randn({4, 3}, rng, DType::f64).set_requires_grad(true);
  std::vector<int64_t> idx{2, 0, -1, 2};
  auto loss_fn = [&]() {
    Tensor gathered = gather_rows(x, idx);
    Tensor out = scatter_add_rows(x, mul(gathered, c), idx);
    return mean_all(mul(out, out));
  };
  Rng pick(1);
  CHECK(oracles::grad_check({x, c}, loss_fn, pick, 15) <= 1e-4);
}

TEST_CASE("adamw zero grad leaves params unchanged") {
  AdamW opt({.lr = 0.1, .weight_decay = 0.0});
  Tensor p = Tensor::from({3}, {1, 2, 3}, DType::f64);
  std::vector<NamedParam> params{{"p", p}};
  opt.step(params);
  CHECK(p.to_vector() == std::vector<double>{1, 2, 3});
}

TEST_CASE("adamw single step matches closed form") {
  const double lr = 0.05, eps = 1e-8;
  AdamW opt({.lr = lr, .beta1 = 0.9, .beta2 = 0.999, .eps = eps, .weight_decay = 0.0});
  Tensor p = Tensor::from({3}, {0.5, -0.25, 2.0}, DType::f64).set_requires_grad(true);
  Tensor loss = sum_all(mul(p, Tensor::from({3}, {0.3, -1.2, 0.07}, DType::f64)));
  backward(loss);
  std::vector<double> g{0.3, -1.2, 0.07};
  std::vector<double> before = p.to_vector();
  std::vector<NamedParam> params{{"p", p}};
  opt.step(params);
  auto after = p.to_vector();
  for (int i = 0; i < 3; ++i) {
    const double expect = before[static_cast<size_t>(i)] -
                          lr * g[static_cast<size_t>(i)] / (std::abs(g[static_cast<size_t>(i)]) + eps);
    CHECK(after[static_cast<size_t>(i)] == doctest::Approx(expect).epsilon(1e-12));
  }
}

TEST_CASE("adamw pure decay scales params by 1 - lr*wd") {
  const double lr = 0.01, wd = 0.5;
  AdamW opt({.lr = lr, .weight_decay = wd});
  Tensor p = Tensor::from({2}, {4.0, -8.0}, DType::f64);
  std::vector<NamedParam> params{{"p", p}};
  opt.step(params);
  CHECK(p.to_vector()[0] == doctest::Approx(4.0 * (1 - lr * wd)).epsilon(1e-12));
  CHECK(p.to_vector()[1] == doctest::Approx(-8.0 * (1 - lr * wd)).epsilon(1e-12));
}

TEST_CASE("gelu fixed points and asymptote") {
  Tensor z = Tensor::from({1}, {0.0}, DType::f64);
  CHECK(gelu(z).item() == 0.0);
  Tensor big = Tensor::from({1}, {9.0}, DType::f64);
  CHECK(std::abs(gelu(big).item() - 9.0) < 1e-6);
  Tensor x = Tensor::from({2, 2}, {1, 2, 3, 4}, DType::f64);
  Tensor I = Tensor::from({2, 2}, {1, 0, 0, 1}, DType::f64);
  Tensor b = Tensor::zeros({2}, DType::f64);
  CHECK(linear(x, I, b).to_vector() == std::vector<double>{1, 2, 3, 4});
}

TEST_CASE("primitives are deterministic across repeated evaluation") {
  Rng r1(99), r2(99);
  Tensor a1 = Tensor::randn({3, 8}, r1);
  Tensor a2 = Tensor::randn({3, 8}, r2);
  Tensor w1 = Tensor::randn({8, 8}, r1);
  Tensor w2 = Tensor::randn({8, 8}, r2);
  Tensor y1 = softmax_lastdim(gelu(matmul(a1, w1)));
  Tensor y2 = softmax_lastdim(gelu(matmul(a2, w2)));
  CHECK(std::memcmp(y1.impl().buf.data(), y2.impl().buf.data(), y1.impl().buf.size()) == 0);
}

TEST_CASE("non-finite outputs trip a numeric error") {
  Tensor a = Tensor::full({2, 2}, 1e308, DType::f64);
  CHECK_THROWS_AS(matmul(a, a), NumericError);
}

TEST_CASE("live byte counters track allocation and peak") {
  auto& c = Counters::global();
  c.reset();
  const uint64_t base = c.current_live_bytes;
  {
    Tensor t = Tensor::zeros({1024}, DType::f64);
    CHECK(c.current_live_bytes == base + 8192);
    CHECK(c.peak_live_bytes >= base + 8192);
  }
  CHECK(c.current_live_bytes == base);
  CHECK(c.peak_live_bytes >= base + 8192);  // peak never below the largest tensor
}

TEST_CASE("dten round trip preserves bits and shape") {
  Rng rng(17);
  auto dir = std::filesystem::temp_directory_path() / "tryon_dten_test";
  for (DType dt : {DType::f32, DType::f64}) {
    Tensor t = Tensor::randn({3, 4, 2}, rng, dt);
    auto path = dir / (std::string("t_") + dtype_name(dt) + ".dten");
    save_dten(path, t);
    Tensor back = load_dten(path);
    CHECK(back.shape() == t.shape());
    CHECK(back.dtype() == t.dtype());
    CHECK(std::memcmp(back.impl().buf.data(), t.impl().buf.data(), t.impl().buf.size()) == 0);
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("dten header layout is exactly as documented") {
  Tensor t = Tensor::from({2}, {1.0, 2.0}, DType::f32);
  auto dir = std::filesystem::temp_directory_path() / "tryon_dten_hdr";
  auto path = dir / "t.dten";
  save_dten(path, t);
  std::string s = read_text_file(path);
  REQUIRE(s.size() == 4 + 4 + 1 + 4 + 8 + 8);
  CHECK(s.substr(0, 4) == "DTEN");
  CHECK(static_cast<unsigned char>(s[4]) == 1);  // version u32 LE
  CHECK(static_cast<unsigned char>(s[8]) == 0);  // dtype f32
  CHECK(static_cast<unsigned char>(s[9]) == 1);  // rank u32 LE
  CHECK(static_cast<unsigned char>(s[13]) == 2); // dim u64 LE
  std::filesystem::remove_all(dir);
}
