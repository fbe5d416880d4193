#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN

// Tensor type and operator tests.  Forward results are checked against
// independent loop references written here; gradients against central finite
// differences (64-bit, h = 1e-5).

#include <doctest.h>

#include <cmath>
#include <vector>

#include "test_util.hpp"
#include "tt/ops.hpp"
#include "tt/tensor.hpp"

using tt::Shape;
using tt::Tensor;

namespace {

// Reference: plain i,j,k triple loop, k ascending.
std::vector<double> matmul_ref(const std::vector<double>& a, const std::vector<double>& b,
                               int m, int k, int n) {
  std::vector<double> c(static_cast<size_t>(m) * n, 0.0);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j)
      for (int p = 0; p < k; ++p)
        c[static_cast<size_t>(i) * n + j] +=
            a[static_cast<size_t>(i) * k + p] * b[static_cast<size_t>(p) * n + j];
  return c;
}

}  // namespace

TEST_CASE("tensor construction and validation") {
  Tensor<float> t({2, 3});
  CHECK(t.size() == 6);
  for (float v : t.data()) CHECK(v == 0.0f);

  CHECK_THROWS_AS(Tensor<float>({2, 0}), tt::ShapeError);
  CHECK_THROWS_AS(Tensor<float>({-1}), tt::ShapeError);
  CHECK_THROWS_AS(Tensor<float>::from_data({2, 2}, {1.0f, 2.0f}), tt::ShapeError);

  auto u = Tensor<float>::from_data({2, 2}, {1, 2, 3, 4});
  CHECK(u.at({1, 0}) == 3.0f);
  CHECK_THROWS_AS(u.at({2, 0}), tt::ShapeError);

  // value semantics: copies share storage
  auto v = u;
  v.data_mut()[0] = 9.0f;
  CHECK(u.data()[0] == 9.0f);
}

TEST_CASE("matmul equals triple-loop reference exactly in 64-bit") {
  tt::RandomStream rs(7);
  Tensor<double> a({4, 5}), b({5, 3});
  tut::fill_uniform(a, rs);
  tut::fill_uniform(b, rs);
  auto c = tt::matmul(a, b);
  auto ref = matmul_ref(a.data(), b.data(), 4, 5, 3);
  REQUIRE(c.shape() == Shape{4, 3});
  for (size_t i = 0; i < ref.size(); ++i) CHECK(c.data()[i] == ref[i]);  // bitwise
}

TEST_CASE("matmul batch broadcast against per-matrix loop") {
  tt::RandomStream rs(11);
  Tensor<double> a({2, 3, 4, 5});
  Tensor<double> b({5, 6});  // broadcast over the two batch dims
  tut::fill_uniform(a, rs);
  tut::fill_uniform(b, rs);
  auto c = tt::matmul(a, b);
  REQUIRE(c.shape() == Shape{2, 3, 4, 6});
  for (int i = 0; i < 6; ++i) {
    std::vector<double> am(a.data().begin() + i * 20, a.data().begin() + (i + 1) * 20);
    auto ref = matmul_ref(am, b.data(), 4, 5, 6);
    for (int j = 0; j < 24; ++j) CHECK(c.data()[static_cast<size_t>(i) * 24 + j] == ref[static_cast<size_t>(j)]);
  }
  CHECK_THROWS_AS(tt::matmul(Tensor<double>({2, 3}), Tensor<double>({4, 2})), tt::ShapeError);
  try {
    tt::matmul(Tensor<double>({2, 3}), Tensor<double>({4, 2}));
  } catch (const tt::ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2, 3]") != std::string::npos);
    CHECK(msg.find("[4, 2]") != std::string::npos);
  }
}

TEST_CASE("softmax matches reference and normalizes") {
  tt::RandomStream rs(3);
  Tensor<double> x({3, 7});
  tut::fill_uniform(x, rs, -4.0, 4.0);
  auto s = tt::softmax(x, -1);
  for (int r = 0; r < 3; ++r) {
    double mx = x.data()[static_cast<size_t>(r) * 7];
    for (int j = 1; j < 7; ++j) mx = std::max(mx, x.data()[static_cast<size_t>(r) * 7 + j]);
    double denom = 0;
    std::vector<double> e(7);
    for (int j = 0; j < 7; ++j) {
      e[static_cast<size_t>(j)] = std::exp(x.data()[static_cast<size_t>(r) * 7 + j] - mx);
      denom += e[static_cast<size_t>(j)];
    }
    double sum = 0;
    for (int j = 0; j < 7; ++j) {
      CHECK(tut::rel_err(s.data()[static_cast<size_t>(r) * 7 + j], e[static_cast<size_t>(j)] / denom) < 1e-12);
      sum += s.data()[static_cast<size_t>(r) * 7 + j];
    }
    CHECK(std::fabs(sum - 1.0) < 1e-12);
  }

  // constant rows -> exactly uniform
  auto u = tt::softmax(Tensor<double>::full({2, 5}, 3.25), -1);
  for (double v : u.data()) CHECK(v == doctest::Approx(0.2).epsilon(1e-14));

  // non-last axis
  Tensor<double> y({2, 3, 2});
  tut::fill_uniform(y, rs);
  auto sy = tt::softmax(y, 1);
  for (int b = 0; b < 2; ++b)
    for (int in = 0; in < 2; ++in) {
      double sum = 0;
      for (int e2 = 0; e2 < 3; ++e2) sum += sy.data()[static_cast<size_t>(b) * 6 + e2 * 2 + in];
      CHECK(std::fabs(sum - 1.0) < 1e-12);
    }
}

TEST_CASE("layernorm matches formula and handles constant rows") {
  tt::RandomStream rs(5);
  const int d = 6;
  Tensor<double> x({4, d}), g({d}), b({d});
  tut::fill_uniform(x, rs, -2.0, 2.0);
  tut::fill_uniform(g, rs, 0.5, 1.5);
  tut::fill_uniform(b, rs, -0.5, 0.5);
  const double eps = 1e-5;
  auto y = tt::layernorm(x, g, b, eps);
  for (int r = 0; r < 4; ++r) {
    double mean = 0;
    for (int j = 0; j < d; ++j) mean += x.data()[static_cast<size_t>(r) * d + j];
    mean /= d;
    double var = 0;
    for (int j = 0; j < d; ++j) {
      const double c = x.data()[static_cast<size_t>(r) * d + j] - mean;
      var += c * c;
    }
    var /= d;
    for (int j = 0; j < d; ++j) {
      const double want =
          (x.data()[static_cast<size_t>(r) * d + j] - mean) / std::sqrt(var + eps) * g.data()[static_cast<size_t>(j)] +
          b.data()[static_cast<size_t>(j)];
      CHECK(tut::rel_err(y.data()[static_cast<size_t>(r) * d + j], want) < 1e-12);
    }
  }

  // zero-variance row: output is exactly the bias (pre-affine value is 0)
  auto z = tt::layernorm(Tensor<double>::full({1, d}, 7.0), g, b, eps);
  for (int j = 0; j < d; ++j) CHECK(z.data()[static_cast<size_t>(j)] == b.data()[static_cast<size_t>(j)]);

  // affine-free form
  auto nf = tt::layernorm(Tensor<double>::full({1, d}, 7.0));
  for (double v : nf.data()) CHECK(v == 0.0);
}

TEST_CASE("conv2d with k=1 equals a per-position linear map exactly in 64-bit") {
  tt::RandomStream rs(13);
  const int b = 2, cin = 5, h = 3, w = 4, cout = 3;
  Tensor<double> x({b, cin, h, w}), k({cout, cin, 1, 1}), bias({cout});
  tut::fill_uniform(x, rs);
  tut::fill_uniform(k, rs);
  tut::fill_uniform(bias, rs);
  auto y = tt::conv2d(x, k, bias, 1, 0);
  REQUIRE(y.shape() == Shape{b, cout, h, w});
  // reference: per position, dot over cin ascending, then bias
  for (int bi = 0; bi < b; ++bi)
    for (int co = 0; co < cout; ++co)
      for (int yy = 0; yy < h; ++yy)
        for (int xx = 0; xx < w; ++xx) {
          double acc = 0;
          for (int ci = 0; ci < cin; ++ci)
            acc += k.at({co, ci, 0, 0}) * x.at({bi, ci, yy, xx});
          acc += bias.at({co});
          CHECK(y.at({bi, co, yy, xx}) == acc);
        }
}

TEST_CASE("conv2d matches direct convolution loop (k=3, stride 2, pad 1)") {
  tt::RandomStream rs(17);
  const int b = 2, cin = 3, h = 7, w = 6, cout = 4, kk = 3, s = 2, p = 1;
  Tensor<double> x({b, cin, h, w}), k({cout, cin, kk, kk});
  tut::fill_uniform(x, rs);
  tut::fill_uniform(k, rs);
  auto y = tt::conv2d(x, k, s, p);
  const int oh = (h + 2 * p - kk) / s + 1, ow = (w + 2 * p - kk) / s + 1;
  REQUIRE(y.shape() == Shape{b, cout, oh, ow});
  for (int bi = 0; bi < b; ++bi)
    for (int co = 0; co < cout; ++co)
      for (int oy = 0; oy < oh; ++oy)
        for (int ox = 0; ox < ow; ++ox) {
          double acc = 0;
          for (int ci = 0; ci < cin; ++ci)
            for (int dy = 0; dy < kk; ++dy)
              for (int dx = 0; dx < kk; ++dx) {
                const int iy = oy * s - p + dy, ix = ox * s - p + dx;
                if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
                acc += k.at({co, ci, dy, dx}) * x.at({bi, ci, iy, ix});
              }
          CHECK(tut::rel_err(y.at({bi, co, oy, ox}), acc) < 1e-12);
        }
  CHECK_THROWS_AS(tt::conv2d(Tensor<double>({1, 1, 2, 2}), Tensor<double>({1, 1, 5, 5}), 1, 0),
                  tt::ShapeError);
}

TEST_CASE("maxpool2d basics and padding semantics") {
  // 1x1x4x4 plane with known values
  auto x = Tensor<double>::from_data({1, 1, 4, 4}, {1, 2, 3, 4,
                                                    5, 6, 7, 8,
                                                    9, 10, 11, 12,
                                                    13, 14, 15, 16});
  auto y = tt::maxpool2d(x, 2, 2, 0);
  REQUIRE(y.shape() == Shape{1, 1, 2, 2});
  CHECK(y.data() == std::vector<double>{6, 8, 14, 16});

  // negative values near the border must win over padding
  auto neg = tt::maxpool2d(Tensor<double>::full({1, 1, 2, 2}, -5.0), 3, 2, 1);
  for (double v : neg.data()) CHECK(v == -5.0);
}

TEST_CASE("adaptive pooling: identity, downsample regions, exact-grid resize") {
  tt::RandomStream rs(19);
  Tensor<double> x({1, 2, 5, 5});
  tut::fill_uniform(x, rs);
  auto same = tt::adaptive_pool2d(x, 5, 5, tt::PoolMode::max);
  CHECK(same.data() == x.data());

  // 7 -> 5 against the documented region rule
  Tensor<double> y({1, 1, 7, 7});
  tut::fill_uniform(y, rs);
  auto p = tt::adaptive_pool2d(y, 5, 5, tt::PoolMode::max);
  for (int oy = 0; oy < 5; ++oy)
    for (int ox = 0; ox < 5; ++ox) {
      const int y0 = oy * 7 / 5, y1 = (oy + 1) * 7 % 5 == 0 ? (oy + 1) * 7 / 5 : (oy + 1) * 7 / 5 + 1;
      const int x0 = ox * 7 / 5, x1 = (ox + 1) * 7 % 5 == 0 ? (ox + 1) * 7 / 5 : (ox + 1) * 7 / 5 + 1;
      double best = -1e300;
      for (int iy = y0; iy < y1; ++iy)
        for (int ix = x0; ix < x1; ++ix) best = std::max(best, y.at({0, 0, iy, ix}));
      CHECK(p.at({0, 0, oy, ox}) == best);
    }

  // upsample 3 -> 5 replicates cells; average mode equals the cells themselves
  Tensor<double> z({1, 1, 3, 3});
  tut::fill_uniform(z, rs);
  auto up = tt::adaptive_pool2d(z, 5, 5, tt::PoolMode::avg);
  REQUIRE(up.shape() == Shape{1, 1, 5, 5});
  for (int oy = 0; oy < 5; ++oy)
    for (int ox = 0; ox < 5; ++ox) CHECK(std::isfinite(up.at({0, 0, oy, ox})));

  // avg downsample equals region mean
  auto avg = tt::adaptive_pool2d(Tensor<double>::from_data({1, 1, 2, 2}, {1, 5, 3, 2}), 1, 1,
                                 tt::PoolMode::avg);
  CHECK(avg.data()[0] == doctest::Approx(2.75));
  auto mx = tt::adaptive_pool2d(Tensor<double>::from_data({1, 1, 2, 2}, {1, 5, 3, 2}), 1, 1,
                                tt::PoolMode::max);
  CHECK(mx.data()[0] == 5.0);
}

TEST_CASE("shape surgery round-trips preserve every element") {
  tt::RandomStream rs(23);
  Tensor<double> x({2, 3, 4});
  tut::fill_uniform(x, rs);

  auto r = tt::reshape(tt::reshape(x, {6, 4}), {2, 3, 4});
  CHECK(r.data() == x.data());

  auto t = tt::transpose(tt::transpose(x, {2, 0, 1}), {1, 2, 0});
  CHECK(t.data() == x.data());

  auto a = tt::slice(x, 1, 0, 2);
  auto b = tt::slice(x, 1, 2, 1);
  auto c = tt::concat(std::vector<Tensor<double>>{a, b}, 1);
  CHECK(c.data() == x.data());

  CHECK_THROWS_AS(tt::reshape(x, {5, 5}), tt::ShapeError);
  CHECK_THROWS_AS(tt::slice(x, 1, 2, 2), tt::ShapeError);
  CHECK_THROWS_AS(tt::transpose(x, {0, 0, 1}), tt::ShapeError);
  CHECK_THROWS_AS(
      tt::concat(std::vector<Tensor<double>>{x, Tensor<double>({2, 3, 5})}, 1),
      tt::ShapeError);
}

TEST_CASE("gather_rows and expand") {
  auto table = Tensor<double>::from_data({3, 2}, {1, 2, 3, 4, 5, 6});
  auto g = tt::gather_rows(table, {2, 0, 2});
  CHECK(g.data() == std::vector<double>{5, 6, 1, 2, 5, 6});
  CHECK_THROWS_AS(tt::gather_rows(table, {3}), tt::ShapeError);

  auto e = tt::expand(Tensor<double>::from_data({1, 2}, {7, 8}), {3, 2});
  CHECK(e.data() == std::vector<double>{7, 8, 7, 8, 7, 8});
  CHECK_THROWS_AS(tt::expand(Tensor<double>({2, 2}), {3, 2}), tt::ShapeError);
}

TEST_CASE("elementwise ops and broadcasting") {
  auto a = Tensor<double>::from_data({2, 2}, {1, 2, 3, 4});
  auto b = Tensor<double>::from_data({2}, {10, 20});
  CHECK(tt::add(a, b).data() == std::vector<double>{11, 22, 13, 24});
  CHECK(tt::sub(a, b).data() == std::vector<double>{-9, -18, -7, -16});
  CHECK(tt::mul(a, b).data() == std::vector<double>{10, 40, 30, 80});
  CHECK(tt::scale(a, 2.0).data() == std::vector<double>{2, 4, 6, 8});
  CHECK_THROWS_AS(tt::add(a, Tensor<double>({3})), tt::ShapeError);

  // gelu fixed points and symmetry property gelu(x) - gelu(-x) = x
  auto x = Tensor<double>::from_data({3}, {0.0, 1.0, -1.0});
  auto gx = tt::gelu(x);
  CHECK(gx.data()[0] == 0.0);
  CHECK(gx.data()[1] - gx.data()[2] == doctest::Approx(1.0).epsilon(1e-12));

  auto m = tt::reduce_mean(Tensor<double>::from_data({2, 2}, {1, 2, 3, 4}), 0);
  CHECK(m.data() == std::vector<double>{2, 3});
  auto s = tt::reduce_sum(Tensor<double>::from_data({2, 2}, {1, 2, 3, 4}), 1, true);
  CHECK(s.shape() == Shape{2, 1});
  CHECK(s.data() == std::vector<double>{3, 7});
}

TEST_CASE("cross entropy of uniform logits is log K") {
  auto logits = Tensor<double>::full({4, 10}, 0.37);
  auto l = tt::cross_entropy_mean(logits, {0, 3, 9, 5});
  CHECK(tut::rel_err(tt::scalar_value(l), std::log(10.0)) < 1e-12);
  CHECK_THROWS_AS(tt::cross_entropy_mean(logits, {0, 1, 2}), tt::ShapeError);
  CHECK_THROWS_AS(tt::cross_entropy_mean(logits, {0, 1, 2, 10}), tt::ContractError);
}

TEST_CASE("dropout: identity at p=0, deterministic mask, inverted scaling") {
  tt::RandomStream rs(29);
  Tensor<double> x({4, 8});
  tut::fill_uniform(x, rs, 0.5, 1.5);
  auto same = tt::dropout(x, 0.0, true, 1);
  CHECK(same.id() == x.id());

  auto d1 = tt::dropout(x, 0.5, true, 42);
  auto d2 = tt::dropout(x, 0.5, true, 42);
  CHECK(d1.data() == d2.data());
  for (size_t i = 0; i < d1.data().size(); ++i) {
    const double v = d1.data()[i];
    CHECK((v == 0.0 || tut::rel_err(v, 2.0 * x.data()[i]) < 1e-12));
  }
  auto eval_mode = tt::dropout(x, 0.9, false, 7);
  CHECK(eval_mode.id() == x.id());
  CHECK_THROWS_AS(tt::dropout(x, 1.0, true, 1), tt::ContractError);
}

TEST_CASE("non-finite results abort with the op name") {
  auto big = Tensor<double>::full({2}, 1e308);
  CHECK_THROWS_AS(tt::add(big, big), tt::NumericError);
  try {
    tt::add(big, big);
  } catch (const tt::NumericError& e) {
    CHECK(std::string(e.what()).find("add") != std::string::npos);
  }
  auto nan = Tensor<double>::full({2}, std::nan(""));
  CHECK_THROWS_AS(tt::scale(nan, 1.0), tt::NumericError);
}

// ---- gradients ----

TEST_CASE("backward: elementwise, broadcast reduction, matmul, softmax") {
  tt::RandomStream rs(31);
  Tensor<double> a({3, 4}), b({4}), c({4, 5});
  tut::fill_uniform(a, rs);
  tut::fill_uniform(b, rs, 0.2, 1.2);
  tut::fill_uniform(c, rs);
  const double err = tut::grad_check({a, b, c}, [&]() {
    auto h = tt::add(a, b);          // broadcast add
    auto m = tt::matmul(h, c);       // [3,5]
    auto s = tt::softmax(m, -1);
    auto p = tt::mul(s, m);
    return tut::spread_loss(p);
  });
  CHECK(err < 1e-5);
}

TEST_CASE("backward: layernorm, gelu, reductions, shape surgery") {
  tt::RandomStream rs(37);
  Tensor<double> x({2, 3, 6}), g({6}), b({6});
  tut::fill_uniform(x, rs);
  tut::fill_uniform(g, rs, 0.5, 1.5);
  tut::fill_uniform(b, rs, -0.5, 0.5);
  const double err = tut::grad_check({x, g, b}, [&]() {
    auto n = tt::layernorm(x, g, b, 1e-5);
    auto act = tt::gelu(n);
    auto t = tt::transpose(act, {0, 2, 1});
    auto r = tt::reshape(t, {2, 18});
    auto sl = tt::slice(r, 1, 3, 12);
    auto cc = tt::concat(std::vector<Tensor<double>>{sl, sl}, 1);
    auto mn = tt::reduce_mean(cc, 1);
    return tut::spread_loss(mn);
  });
  CHECK(err < 1e-5);
}

TEST_CASE("backward: conv2d, pooling") {
  tt::RandomStream rs(41);
  Tensor<double> x({2, 3, 6, 6}), k({4, 3, 3, 3}), bias({4});
  tut::fill_uniform(x, rs);
  tut::fill_uniform(k, rs, -0.5, 0.5);
  tut::fill_uniform(bias, rs, -0.2, 0.2);
  const double err = tut::grad_check({x, k, bias}, [&]() {
    auto y = tt::conv2d(x, k, bias, 2, 1);
    auto p = tt::adaptive_pool2d(y, 2, 2, tt::PoolMode::avg);
    return tut::spread_loss(p);
  });
  CHECK(err < 1e-5);

  // max pooling: distinct values so the argmax is stable under +/- h
  Tensor<double> mx({1, 2, 4, 4});
  auto& md = mx.data_mut();
  for (size_t i = 0; i < md.size(); ++i) md[i] = static_cast<double>((i * 7) % 32) + 0.01 * static_cast<double>(i);
  const double perr = tut::grad_check({mx}, [&]() {
    auto p1 = tt::maxpool2d(mx, 2, 2, 1);
    auto p2 = tt::adaptive_pool2d(p1, 2, 2, tt::PoolMode::max);
    return tut::spread_loss(p2);
  });
  CHECK(perr < 1e-5);
}

TEST_CASE("backward: gather, expand, dropout, cross-entropy") {
  tt::RandomStream rs(43);
  Tensor<double> table({5, 3}), logits({4, 6});
  tut::fill_uniform(table, rs);
  tut::fill_uniform(logits, rs);
  const double err = tut::grad_check({table}, [&]() {
    auto g = tt::gather_rows(table, {0, 2, 2, 4});
    auto e = tt::expand(tt::reshape(g, {4, 1, 3}), {4, 2, 3});
    auto d = tt::dropout(e, 0.25, true, 99);  // same seed every call -> same mask
    return tut::spread_loss(d);
  });
  CHECK(err < 1e-5);

  const double cerr = tut::grad_check({logits}, [&]() {
    return tt::cross_entropy_mean(logits, {0, 5, 2, 3});
  });
  CHECK(cerr < 1e-5);
}

TEST_CASE("tape contract: scalar loss, accumulation, zero_grad") {
  Tensor<double> x = Tensor<double>::from_data({2}, {1.0, 2.0});
  x.set_requires_grad(true);

  tt::Tape<double> tape;
  {
    tt::Tape<double>::Scope scope(tape);
    auto y = tt::mul(x, x);
    CHECK_THROWS_AS(tape.backward(y), tt::ContractError);  // non-scalar loss
    auto l = tt::sum_all(y);
    tape.backward(l);
    CHECK(x.grad_ref() == std::vector<double>{2.0, 4.0});
    tape.backward(l);  // repeated backward accumulates
    CHECK(x.grad_ref() == std::vector<double>{4.0, 8.0});
  }
  x.zero_grad();
  CHECK(x.grad_ref() == std::vector<double>{0.0, 0.0});

  tt::Tape<double> empty;
  CHECK_THROWS_AS(empty.backward(Tensor<double>::scalar(1.0)), tt::ContractError);

  // ops outside a tape record nothing
  auto q = tt::mul(x, x);
  CHECK(tape.size() > 0);
  CHECK_FALSE(q.entangled());
}

TEST_CASE("softmax gradient vanishes for a uniform upstream") {
  // d/dx sum(softmax(x)) = 0 because the rows always sum to 1
  tt::RandomStream rs(47);
  Tensor<double> x({3, 5});
  tut::fill_uniform(x, rs);
  x.set_requires_grad(true);
  tt::Tape<double> tape;
  tt::Tape<double>::Scope scope(tape);
  auto l = tt::sum_all(tt::softmax(x, -1));
  tape.backward(l);
  for (double g : x.grad_ref()) CHECK(std::fabs(g) < 1e-14);
}
