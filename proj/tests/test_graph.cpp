#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "amr/gradcheck.hpp"
#include "amr/graph.hpp"
#include "amr/rng.hpp"

using namespace amr;

namespace {

using TD = TensorData<double>;

TD random_tensor(std::vector<int> shape, Rng& rng, double lo = -1, double hi = 1) {
  TD t(std::move(shape));
  for (auto& v : t.v) v = rng.uniform(lo, hi);
  return t;
}

// independent scalar oracles -------------------------------------------------

TD matmul_ref(const TD& a, const TD& b) {
  const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  TD out({m, n});
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) {
      double s = 0;
      for (int p = 0; p < k; ++p) s += a.at(i, p) * b.at(p, j);
      out.at(i, j) = s;
    }
  return out;
}

TD conv2d_ref(const TD& x, const TD& w, int stride, int pad) {
  const int c = x.dim(0), h = x.dim(1), wd = x.dim(2);
  const int co = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  const int oh = (h + 2 * pad - kh) / stride + 1;
  const int ow = (wd + 2 * pad - kw) / stride + 1;
  TD out({co, oh, ow});
  for (int oc = 0; oc < co; ++oc)
    for (int y = 0; y < oh; ++y)
      for (int xo = 0; xo < ow; ++xo) {
        double s = 0;
        for (int ic = 0; ic < c; ++ic)
          for (int ky = 0; ky < kh; ++ky)
            for (int kx = 0; kx < kw; ++kx) {
              const int sy = y * stride + ky - pad;
              const int sx = xo * stride + kx - pad;
              if (sy >= 0 && sy < h && sx >= 0 && sx < wd)
                s += x.v[(size_t)(ic * h + sy) * wd + sx] *
                     w.v[(size_t)((oc * c + ic) * kh + ky) * kw + kx];
            }
        out.v[(size_t)(oc * oh + y) * ow + xo] = s;
      }
  return out;
}

double max_abs_diff(const TD& a, const TD& b) {
  REQUIRE(a.shape == b.shape);
  double m = 0;
  for (int64_t i = 0; i < a.size(); ++i)
    m = std::max(m, std::fabs(a.v[i] - b.v[i]));
  return m;
}

}  // namespace

TEST_CASE("matmul identity and hand cases") {
  Graph<double> g;
  TD I({3, 3});
  for (int i = 0; i < 3; ++i) I.at(i, i) = 1;
  Rng rng(11);
  TD m = random_tensor({3, 3}, rng);
  Var out = g.matmul(g.input(I), g.input(m));
  CHECK(max_abs_diff(g.val(out), m) == 0.0);

  TD a({2, 2}, {1, 2, 3, 4});
  TD b({2, 1}, {0, 1});
  Var out2 = g.matmul(g.input(a), g.input(b));
  CHECK(g.val(out2).v == std::vector<double>{2, 4});

  CHECK_THROWS_AS(g.matmul(g.input(a), g.input(TD({3, 1}))), DimensionError);
}

TEST_CASE("matmul matches triple-loop oracle") {
  Rng rng(7);
  TD a = random_tensor({4, 5}, rng);
  TD b = random_tensor({5, 3}, rng);
  Graph<double> g;
  Var out = g.matmul(g.input(a), g.input(b));
  CHECK(max_abs_diff(g.val(out), matmul_ref(a, b)) < 1e-10);
}

TEST_CASE("conv2d delta kernel is identity") {
  Rng rng(3);
  TD x = random_tensor({1, 5, 5}, rng);
  TD w({1, 1, 3, 3});
  w.v[4] = 1.0;  // center tap
  Graph<double> g;
  Var out = g.conv2d(g.input(x), g.input(w), 1, 1);
  CHECK(max_abs_diff(g.val(out), x) < 1e-15);
}

TEST_CASE("conv2d sum pooling case") {
  TD x({1, 2, 2}, {1, 1, 1, 1});
  TD w({1, 1, 2, 2}, {1, 1, 1, 1});
  Graph<double> g;
  Var out = g.conv2d(g.input(x), g.input(w), 2, 0);
  CHECK(g.val(out).shape == std::vector<int>{1, 1, 1});
  CHECK(g.val(out).v[0] == 4.0);
}

TEST_CASE("conv2d matches six-loop oracle") {
  Rng rng(19);
  for (int trial = 0; trial < 3; ++trial) {
    TD x = random_tensor({3, 7, 6}, rng);
    TD w = random_tensor({4, 3, 3, 3}, rng);
    Graph<double> g;
    Var out = g.conv2d(g.input(x), g.input(w), 1, 1);
    CHECK(max_abs_diff(g.val(out), conv2d_ref(x, w, 1, 1)) < 1e-10);
  }
  // batched form agrees with per-image oracle
  TD xb = random_tensor({2, 3, 6, 6}, rng);
  TD w = random_tensor({2, 3, 3, 3}, rng);
  Graph<double> g;
  Var out = g.conv2d(g.input(xb), g.input(w), 1, 1);
  for (int b = 0; b < 2; ++b) {
    TD xi({3, 6, 6});
    std::copy_n(xb.v.begin() + b * 3 * 36, 3 * 36, xi.v.begin());
    TD ref = conv2d_ref(xi, w, 1, 1);
    for (int64_t i = 0; i < ref.size(); ++i)
      CHECK(std::fabs(g.val(out).v[b * ref.size() + i] - ref.v[i]) < 1e-10);
  }
}

TEST_CASE("conv2d rejects non-integral output extent") {
  Graph<double> g;
  Var x = g.input(TD({1, 5, 5}));
  Var w = g.input(TD({1, 1, 2, 2}));
  CHECK_THROWS_AS(g.conv2d(x, w, 2, 0), ConfigError);
}

TEST_CASE("global_avg_pool") {
  Graph<double> g;
  TD c({2, 3, 3}, std::vector<double>(18, 0.7));
  Var out = g.global_avg_pool(g.input(c));
  CHECK(g.val(out).v[0] == doctest::Approx(0.7).epsilon(1e-14));

  TD x({1, 2, 2}, {1, 3, 5, 7});
  CHECK(g.val(g.global_avg_pool(g.input(x))).v[0] == 4.0);

  Rng rng(5);
  TD r = random_tensor({4, 6, 5}, rng);
  Var out2 = g.global_avg_pool(g.input(r));
  for (int ci = 0; ci < 4; ++ci) {
    double s = 0;
    for (int i = 0; i < 30; ++i) s += r.v[(size_t)ci * 30 + i];
    CHECK(std::fabs(g.val(out2).v[(size_t)ci] - s / 30.0) < 1e-12);
  }
}

TEST_CASE("layer_norm basics and moments") {
  Graph<double> g;
  TD gamma({4}, {1, 1, 1, 1});
  TD beta({4});
  TD c({1, 4}, {3, 3, 3, 3});
  Var out = g.layer_norm(g.input(c), g.input(gamma), g.input(beta), 1e-5);
  for (double v : g.val(out).v) CHECK(v == 0.0);

  TD two({1, 2}, {1, -1});
  TD g2({2}, {1, 1});
  TD b2({2});
  Var out2 = g.layer_norm(g.input(two), g.input(g2), g.input(b2), 1e-12);
  CHECK(g.val(out2).v[0] == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(g.val(out2).v[1] == doctest::Approx(-1.0).epsilon(1e-9));

  // output (pre-affine) mean ~0, variance ~1 for non-constant rows
  Rng rng(23);
  TD x = random_tensor({5, 8}, rng);
  Var out3 = g.layer_norm(g.input(x), g.input(TD({8}, std::vector<double>(8, 1))),
                          g.input(TD({8})), 1e-8);
  for (int r = 0; r < 5; ++r) {
    double mean = 0, var = 0;
    for (int i = 0; i < 8; ++i) mean += g.val(out3).at(r, i);
    mean /= 8;
    for (int i = 0; i < 8; ++i) {
      double d = g.val(out3).at(r, i) - mean;
      var += d * d;
    }
    var /= 8;
    CHECK(std::fabs(mean) < 1e-6);
    CHECK(std::fabs(var - 1.0) < 1e-4);
  }
}

TEST_CASE("softmax_rows symmetry, stability, oracle") {
  Graph<double> g;
  Var out = g.softmax_rows(g.input(TD({1, 3}, {0, 0, 0})));
  for (double v : g.val(out).v) CHECK(v == doctest::Approx(1.0 / 3).epsilon(1e-12));

  Var out2 = g.softmax_rows(g.input(TD({1, 2}, {3.0, 1003.0})));
  CHECK(std::isfinite(g.val(out2).v[0]));
  CHECK(g.val(out2).v[1] == doctest::Approx(1.0).epsilon(1e-9));

  Rng rng(31);
  TD x = random_tensor({4, 6}, rng, -5, 5);
  Var out3 = g.softmax_rows(g.input(x));
  for (int r = 0; r < 4; ++r) {
    double m = x.at(r, 0);
    for (int i = 1; i < 6; ++i) m = std::max(m, x.at(r, i));
    double s = 0;
    for (int i = 0; i < 6; ++i) s += std::exp(x.at(r, i) - m);
    double rowsum = 0;
    for (int i = 0; i < 6; ++i) {
      double ref = std::exp(x.at(r, i) - m) / s;
      CHECK(std::fabs(g.val(out3).at(r, i) - ref) < 1e-12);
      CHECK(g.val(out3).at(r, i) > 0.0);
      CHECK(g.val(out3).at(r, i) < 1.0);
      rowsum += g.val(out3).at(r, i);
    }
    CHECK(std::fabs(rowsum - 1.0) < 1e-9);
  }
}

TEST_CASE("pointwise ops and mse") {
  Graph<double> g;
  CHECK(g.val(g.gelu(g.input(TD({1}, {0.0})))).v[0] == 0.0);
  CHECK(g.val(g.relu(g.input(TD({1}, {-5.0})))).v[0] == 0.0);

  TD v({3}, {0.3, -1.2, 4.0});
  CHECK(g.val(g.mse(g.input(v), g.input(v))).v[0] == 0.0);
  CHECK(g.val(g.mse(g.input(TD({2}, {0, 2})), g.input(TD({2}, {1, 1})))).v[0] == 1.0);
}

TEST_CASE("backward: sum gives ones") {
  Parameter<double> x("x", TD({2, 3}, {1, 2, 3, 4, 5, 6}));
  Graph<double> g;
  Var loss = g.sum(g.leaf(x));
  g.backward(loss);
  for (double v : x.grad.v) CHECK(v == 1.0);
}

TEST_CASE("backward: linear least squares matches closed form") {
  Rng rng(41);
  const int n = 12, d = 4;
  TD X = random_tensor({n, d}, rng);
  TD y = random_tensor({n, 1}, rng);
  Parameter<double> w("w", random_tensor({d, 1}, rng));
  Graph<double> g;
  Var loss = g.mse(g.matmul(g.input(X), g.leaf(w)), g.input(y));
  g.backward(loss);
  // 2/n * X^T (Xw - y)
  TD resid = matmul_ref(X, w.value);
  for (int i = 0; i < n; ++i) resid.v[(size_t)i] -= y.v[(size_t)i];
  for (int j = 0; j < d; ++j) {
    double s = 0;
    for (int i = 0; i < n; ++i) s += X.at(i, j) * resid.v[(size_t)i];
    CHECK(w.grad.v[(size_t)j] == doctest::Approx(2.0 / n * s).epsilon(1e-12));
  }
}

TEST_CASE("backward: non-scalar loss rejected, accumulation documented") {
  Parameter<double> x("x", TD({2}, {1, 2}));
  Graph<double> g;
  Var v = g.leaf(x);
  CHECK_THROWS_AS(g.backward(v), UsageError);
  Var loss = g.sum(v);
  g.backward(loss);
  g.backward(loss);  // accumulates without zeroing
  for (double gv : x.grad.v) CHECK(gv == 2.0);
}

TEST_CASE("backward is deterministic bitwise") {
  Rng rng(53);
  TD xv = random_tensor({3, 5}, rng);
  Rng wrng(99);
  TD W = random_tensor({5, 4}, wrng);
  TD b({4}, {0.1, -0.2, 0.3, 0.4});
  std::vector<double> g1, g2;
  for (auto* out : {&g1, &g2}) {
    Parameter<double> x("x", xv);
    Graph<double> g;
    Var loss = g.sum(g.softmax_rows(g.gelu(g.linear(g.leaf(x), g.input(W), g.input(b)))));
    g.backward(loss);
    *out = x.grad.v;
  }
  CHECK(g1 == g2);
}

TEST_CASE("gradcheck: identity exact, composite passes, corruption fails") {
  TD x0({2, 3}, {0.3, -0.7, 1.1, 0.2, -0.1, 0.9});
  auto identity = [](Graph<double>& g, Var x) { return g.sum(x); };
  // zero up to finite-difference rounding noise
  CHECK(gradcheck(identity, x0).max_rel_err < 1e-9);

  Rng rng(3);
  TD W = random_tensor({3, 3}, rng);
  TD b = random_tensor({3}, rng);
  auto softlin = [&](Graph<double>& g, Var x) {
    Var y = g.softmax_rows(g.linear(x, g.input(W), g.input(b)));
    return g.mse(y, g.input(TD({2, 3}, {1, 0, 0, 0, 1, 0})));
  };
  CHECK(gradcheck(softlin, x0).passed(1e-4));

  debug::corrupt_backward() = "softmax";
  CHECK_FALSE(gradcheck(softlin, x0).passed(1e-4));
  debug::corrupt_backward().clear();
}

TEST_CASE("gradcheck: every differentiable op on seeded shapes") {
  Rng rng(77);
  for (uint64_t seed : {1ull, 2ull, 3ull}) {
    Rng r = rng.child(seed);
    TD x = random_tensor({3, 4}, r);
    TD W = random_tensor({4, 5}, r);
    TD bb = random_tensor({5}, r);
    TD img = random_tensor({2, 6, 6}, r);
    TD ker = random_tensor({3, 2, 3, 3}, r);
    TD gam = random_tensor({4}, r, 0.5, 1.5);
    TD bet = random_tensor({4}, r);
    TD tgt = random_tensor({3, 5}, r);

    auto check = [&](const char* name,
                     std::function<Var(Graph<double>&, Var)> f,
                     const TD& x0) {
      auto res = gradcheck(f, x0);
      INFO(name << " seed " << seed << " err " << res.max_rel_err);
      CHECK(res.max_rel_err < 1e-4);
    };

    check("matmul", [&](Graph<double>& g, Var v) {
      return g.mse(g.matmul(v, g.input(W)), g.input(tgt));
    }, x);
    check("linear", [&](Graph<double>& g, Var v) {
      return g.mse(g.linear(v, g.input(W), g.input(bb)), g.input(tgt));
    }, x);
    check("relu", [&](Graph<double>& g, Var v) { return g.sum(g.relu(v)); }, x);
    check("gelu", [&](Graph<double>& g, Var v) { return g.sum(g.gelu(v)); }, x);
    check("softmax", [&](Graph<double>& g, Var v) {
      return g.mse(g.softmax_rows(v), g.input(TD({3, 4}, std::vector<double>(12, 0.25))));
    }, x);
    check("layer_norm", [&](Graph<double>& g, Var v) {
      return g.sum(g.mul(g.layer_norm(v, g.input(gam), g.input(bet), 1e-5), v));
    }, x);
    check("conv2d", [&](Graph<double>& g, Var v) {
      return g.sum(g.gelu(g.conv2d(v, g.input(ker), 1, 1)));
    }, img);
    check("conv_weights", [&](Graph<double>& g, Var v) {
      return g.sum(g.gelu(g.conv2d(g.input(img), v, 1, 1)));
    }, ker);
    check("maxpool+gap+bias", [&](Graph<double>& g, Var v) {
      Var c = g.channel_bias(g.maxpool2(v), g.input(TD({2}, {0.1, -0.3})));
      return g.sum(g.global_avg_pool(c));
    }, img);
    check("block+concat+gather", [&](Graph<double>& g, Var v) {
      Var top = g.block(v, 0, 2, 0, 4);
      Var bot = g.block(v, 1, 2, 0, 4);
      Var cat = g.concat({top, bot}, 0);
      Var gat = g.gather_rows(cat, {3, 0, 2});
      return g.mse(g.mean_rows(gat), g.input(TD({1, 4}, {0.1, 0.2, 0.3, 0.4})));
    }, x);
    check("reshape+mul", [&](Graph<double>& g, Var v) {
      return g.sum(g.mul(g.reshape(v, {4, 3}), g.reshape(v, {4, 3})));
    }, x);
  }
}

TEST_CASE("debug checks flag non-finite values") {
  Graph<double> g;
  g.set_debug_checks(true);
  TD bad({2}, {1.0, std::nan("")});
  CHECK_THROWS_AS(g.input(bad), NumericalError);
}
