#include <doctest.h>

#include <cmath>
#include <numbers>

#include "hvae/gradcheck.hpp"
#include "hvae/ops.hpp"
#include "hvae/optim.hpp"
#include "hvae/params.hpp"
#include "test_util.hpp"

using namespace hvae;
using namespace hvae::nn;
using hvae::testing::random_tensor;

namespace {

// Direct 4-loop cross-correlation.
Tensor<double> conv_oracle(const Tensor<double>& x, const Tensor<double>& k, int stride, int pad) {
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int co = k.dim(0), kh = k.dim(2), kw = k.dim(3);
  const int oh = (h + 2 * pad - kh) / stride + 1, ow = (w + 2 * pad - kw) / stride + 1;
  Tensor<double> y({n, co, oh, ow});
  for (int s = 0; s < n; ++s)
    for (int o = 0; o < co; ++o)
      for (int oy = 0; oy < oh; ++oy)
        for (int ox = 0; ox < ow; ++ox) {
          double acc = 0;
          for (int ci = 0; ci < c; ++ci)
            for (int i = 0; i < kh; ++i)
              for (int j = 0; j < kw; ++j) {
                const int iy = oy * stride - pad + i, ix = ox * stride - pad + j;
                if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
                acc += x[((s * c + ci) * h + iy) * w + ix] * k[((o * c + ci) * kh + i) * kw + j];
              }
          y[((s * co + o) * oh + oy) * ow + ox] = acc;
        }
  return y;
}

// Transposed convolution by scattering every input pixel.
Tensor<double> tconv_oracle(const Tensor<double>& x, const Tensor<double>& k, int stride, int pad) {
  const int n = x.dim(0), ci = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int co = k.dim(1), kh = k.dim(2), kw = k.dim(3);
  const int oh = (h - 1) * stride - 2 * pad + kh, ow = (w - 1) * stride - 2 * pad + kw;
  Tensor<double> y({n, co, oh, ow});
  for (int s = 0; s < n; ++s)
    for (int c = 0; c < ci; ++c)
      for (int iy = 0; iy < h; ++iy)
        for (int ix = 0; ix < w; ++ix)
          for (int o = 0; o < co; ++o)
            for (int i = 0; i < kh; ++i)
              for (int j = 0; j < kw; ++j) {
                const int oy = iy * stride - pad + i, ox = ix * stride - pad + j;
                if (oy < 0 || oy >= oh || ox < 0 || ox >= ow) continue;
                y[((s * co + o) * oh + oy) * ow + ox] +=
                    x[((s * ci + c) * h + iy) * w + ix] * k[((c * co + o) * kh + i) * kw + j];
              }
  return y;
}

double max_abs_diff(const Tensor<double>& a, const Tensor<double>& b) {
  REQUIRE(a.shape() == b.shape());
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

// Weighted sum with fixed random weights turns any output into a scalar.
Var weighted_sum(Graph<double>& g, Var y, std::uint64_t seed) {
  Rng rng(seed);
  const Var w = g.constant(random_tensor<double>(rng, g.shape(y)));
  return sum(g, mul(g, y, w));
}

void check_grad(const ScalarFn& f, const std::vector<Tensor<double>>& params, double tol = 1e-3) {
  const auto report = grad_check(f, params, tol);
  INFO("worst " << report.worst << " rel " << report.max_rel_error);
  CHECK(report.passed);
  CHECK(report.checked > 0);
}

}  // namespace

TEST_CASE("tensor basics") {
  Tensor<float> t({2, 3}, 1.5f);
  CHECK(t.size() == 6);
  CHECK(t.dim(-1) == 3);
  CHECK_THROWS_AS(Tensor<float>({2, 2}, std::vector<float>(3)), ShapeError);
  CHECK_THROWS_AS(t.reshaped({4}), ShapeError);
  CHECK(t.reshaped({3, 2}).shape() == Shape{3, 2});
  CHECK(t.cast<double>()[5] == 1.5);
}

TEST_CASE("dense") {
  Graph<double> g;
  Rng rng(1);
  const auto xt = random_tensor<double>(rng, {3, 4});
  Tensor<double> eye({4, 4});
  for (int i = 0; i < 4; ++i) eye[i * 4 + i] = 1;
  const Var x = g.constant(xt);
  CHECK(g.value(dense(g, x, g.constant(eye), g.constant(Tensor<double>({4})))) == xt);

  const auto bt = random_tensor<double>(rng, {5});
  const auto wt = random_tensor<double>(rng, {4, 5});
  const Var y0 = dense(g, g.constant(Tensor<double>({3, 4})), g.constant(wt), g.constant(bt));
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 5; ++c) CHECK(g.value(y0)[r * 5 + c] == bt[c]);

  const Var y = dense(g, x, g.constant(wt), g.constant(bt));
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 5; ++c) {
      double acc = bt[c];
      for (int k = 0; k < 4; ++k) acc += xt[r * 4 + k] * wt[k * 5 + c];
      CHECK(std::abs(g.value(y)[r * 5 + c] - acc) <= 1e-6);
    }
  CHECK_THROWS_AS(dense(g, x, g.constant(Tensor<double>({3, 5})), g.constant(bt)), ShapeError);

  check_grad([](Graph<double>& gr, const std::vector<Var>& p) { return weighted_sum(gr, dense(gr, p[0], p[1], p[2]), 7); },
             {xt, wt, bt});
}

TEST_CASE("conv2d") {
  Rng rng(2);
  Graph<double> g;
  const auto xt = random_tensor<double>(rng, {1, 1, 6, 6});
  Tensor<double> ident({1, 1, 1, 1}, 1.0);
  CHECK(g.value(conv2d(g, g.constant(xt), g.constant(ident), 1, 0)) == xt);
  const Var zero = conv2d(g, g.constant(xt), g.constant(Tensor<double>({2, 1, 3, 3})), 1, 1);
  for (const double v : g.value(zero).values()) CHECK(v == 0.0);

  const auto kt = random_tensor<double>(rng, {1, 1, 3, 3});
  const Var y = conv2d(g, g.constant(xt), g.constant(kt), 2, 1);
  CHECK(g.shape(y) == Shape{1, 1, 3, 3});
  CHECK(max_abs_diff(g.value(y), conv_oracle(xt, kt, 2, 1)) <= 1e-6);

  const auto x2 = random_tensor<double>(rng, {2, 3, 7, 5});
  const auto k2 = random_tensor<double>(rng, {4, 3, 5, 5});
  CHECK(max_abs_diff(g.value(conv2d(g, g.constant(x2), g.constant(k2), 2, 2)), conv_oracle(x2, k2, 2, 2)) <= 1e-9);
  CHECK_THROWS_AS(conv2d(g, g.constant(x2), g.constant(kt), 1, 0), ShapeError);

  check_grad([](Graph<double>& gr, const std::vector<Var>& p) { return weighted_sum(gr, conv2d(gr, p[0], p[1], 2, 2), 3); },
             {random_tensor<double>(rng, {2, 2, 6, 6}), random_tensor<double>(rng, {3, 2, 5, 5})});
}

TEST_CASE("tconv2d") {
  Rng rng(3);
  Graph<double> g;
  const auto xt = random_tensor<double>(rng, {1, 1, 4, 4});
  Tensor<double> ident({1, 1, 1, 1}, 1.0);
  CHECK(g.value(tconv2d(g, g.constant(xt), g.constant(ident), 1, 0)) == xt);
  for (const double v : g.value(tconv2d(g, g.constant(xt), g.constant(Tensor<double>({1, 2, 4, 4})), 2, 1)).values())
    CHECK(v == 0.0);

  const auto x2 = random_tensor<double>(rng, {2, 3, 4, 4});
  const auto k2 = random_tensor<double>(rng, {3, 2, 4, 4});
  const Var y = tconv2d(g, g.constant(x2), g.constant(k2), 2, 1);
  CHECK(g.shape(y) == Shape{2, 2, 8, 8});
  CHECK(max_abs_diff(g.value(y), tconv_oracle(x2, k2, 2, 1)) <= 1e-9);

  check_grad([](Graph<double>& gr, const std::vector<Var>& p) { return weighted_sum(gr, tconv2d(gr, p[0], p[1], 2, 1), 4); },
             {random_tensor<double>(rng, {2, 2, 3, 3}), random_tensor<double>(rng, {2, 3, 4, 4})});
}

TEST_CASE("temporal_conv") {
  Rng rng(4);
  Graph<double> g;
  const auto xt = random_tensor<double>(rng, {2, 8, 3});
  Tensor<double> delta({4, 3});
  for (int f = 0; f < 3; ++f) delta[f] = 1.0;
  CHECK(g.value(temporal_conv(g, g.constant(xt), g.constant(delta))) == xt);

  const Tensor<double> constant({1, 6, 2}, 0.7);
  const Tensor<double> average({4, 2}, 0.25);
  for (const double v : g.value(temporal_conv(g, g.constant(constant), g.constant(average))).values())
    CHECK(v == doctest::Approx(0.7));

  const auto kt = random_tensor<double>(rng, {4, 3});
  const Var y = temporal_conv(g, g.constant(xt), g.constant(kt));
  for (int s = 0; s < 2; ++s)
    for (int t = 0; t < 8; ++t)
      for (int f = 0; f < 3; ++f) {
        double acc = 0;
        for (int j = 0; j < 4; ++j) {
          const int src = t - j < 0 ? 0 : t - j;
          acc += kt[j * 3 + f] * xt[(s * 8 + src) * 3 + f];
        }
        CHECK(std::abs(g.value(y)[(s * 8 + t) * 3 + f] - acc) <= 1e-6);
      }
  // Causality: perturbing the future leaves the past untouched.
  auto later = xt;
  later[(0 * 8 + 6) * 3 + 1] += 5.0;
  const Var y2 = temporal_conv(g, g.constant(later), g.constant(kt));
  for (int t = 0; t < 6; ++t) CHECK(g.value(y2)[t * 3 + 1] == g.value(y)[t * 3 + 1]);

  CHECK_THROWS_AS(temporal_conv(g, g.constant(Tensor<double>({1, 0, 3})), g.constant(kt)), ShapeError);
  check_grad([](Graph<double>& gr, const std::vector<Var>& p) { return weighted_sum(gr, temporal_conv(gr, p[0], p[1]), 5); },
             {xt, kt});
}

TEST_CASE("activations") {
  Graph<double> g;
  const Var x = g.constant(Tensor<double>({3}, std::vector<double>{0.0, -1.0, 2.0}));
  const Var y = leaky_relu(g, x, 0.2);
  CHECK(g.value(y)[0] == 0.0);
  CHECK(g.value(y)[1] == doctest::Approx(-0.2));
  CHECK(g.value(y)[2] == 2.0);
  CHECK(g.value(tanh_act(g, x))[0] == 0.0);
  CHECK(g.value(sigmoid(g, x))[0] == 0.5);

  Rng rng(5);
  // Keep inputs away from the leaky-relu kink.
  auto xt = random_tensor<double>(rng, {4, 5});
  for (auto& v : xt.values()) v += v > 0 ? 0.1 : -0.1;
  check_grad([](Graph<double>& gr, const std::vector<Var>& p) { return weighted_sum(gr, leaky_relu(gr, p[0], 0.2), 1); }, {xt});
  check_grad([](Graph<double>& gr, const std::vector<Var>& p) { return weighted_sum(gr, tanh_act(gr, p[0]), 2); }, {xt});
  check_grad([](Graph<double>& gr, const std::vector<Var>& p) { return weighted_sum(gr, sigmoid(gr, p[0]), 3); }, {xt});
}

TEST_CASE("structural ops") {
  Rng rng(6);
  const auto a = random_tensor<double>(rng, {4, 3});
  const auto b = random_tensor<double>(rng, {4, 2});
  check_grad([](Graph<double>& gr, const std::vector<Var>& p) {
    const Var c = concat_cols(gr, {p[0], p[1]});
    const Var s = slice_cols(gr, c, 1, 4);
    const Var r = gather_rows(gr, s, {3, 0, 0, 2});
    const Var m = mean_groups(gr, r, 2);
    return weighted_sum(gr, reshape(gr, m, {6}), 9);
  }, {a, b});
  check_grad([](Graph<double>& gr, const std::vector<Var>& p) {
    return weighted_sum(gr, mul(gr, add(gr, p[0], p[1]), sub(gr, p[0], scale(gr, p[1], 0.5))), 10);
  }, {a, random_tensor<double>(rng, {4, 3})});

  Graph<double> g;
  const Var pa = g.constant(a);
  const Var placed = place_blocks(g, 6, 5, {Placement{pa, {5, 1, 2, 0}, 2}});
  for (int r = 0; r < 6; ++r)
    for (int c = 0; c < 5; ++c) {
      const double v = g.value(placed)[r * 5 + c];
      if (c < 2 || r == 3 || r == 4) CHECK(std::signbit(v) == false);
      if (c < 2 || r == 3 || r == 4) CHECK(v == 0.0);
    }
  CHECK(g.value(placed)[5 * 5 + 2] == a[0]);
  CHECK_THROWS_AS(place_blocks(g, 6, 5, {Placement{pa, {0, 1, 2, 3}, 0}, Placement{pa, {0, 1, 2, 3}, 1}}), ShapeError);
  check_grad([](Graph<double>& gr, const std::vector<Var>& p) {
    return weighted_sum(gr, place_blocks(gr, 7, 6, {Placement{p[0], {6, 1, 2, 0}, 3}, Placement{p[1], {3, 4, 5, 1}, 0}}), 11);
  }, {a, b});

  const auto x4 = random_tensor<double>(rng, {2, 3, 2, 2});
  check_grad([](Graph<double>& gr, const std::vector<Var>& p) {
    return weighted_sum(gr, channel_affine(gr, bias_channels(gr, p[0], p[1]), p[2], p[3]), 12);
  }, {x4, random_tensor<double>(rng, {3}), random_tensor<double>(rng, {3}), random_tensor<double>(rng, {3})});
}

TEST_CASE("reparameterisation") {
  Rng rng(7);
  const auto mu = random_tensor<double>(rng, {2, 3});
  const auto ls = random_tensor<double>(rng, {2, 3}, 0.3);
  const auto eps = random_tensor<double>(rng, {2, 3});
  Graph<double> g;
  const Var m = g.constant(mu);
  CHECK(g.value(reparam_sample(g, {m, g.constant(ls)}, Tensor<double>({2, 3}))) == mu);
  const Var tiny = reparam_sample(g, {m, g.constant(Tensor<double>({2, 3}, -60.0))}, eps);
  for (std::size_t i = 0; i < mu.size(); ++i) CHECK(g.value(tiny)[i] == doctest::Approx(mu[i]));
  CHECK_THROWS_AS(reparam_sample(g, {m, g.constant(ls)}, Tensor<double>({3, 2})), ShapeError);

  check_grad([eps](Graph<double>& gr, const std::vector<Var>& p) {
    return weighted_sum(gr, reparam_sample(gr, {p[0], p[1]}, eps), 13);
  }, {mu, ls}, 1e-4);
}

TEST_CASE("KL against the standard normal") {
  Graph<double> g;
  const Var z = g.constant(Tensor<double>({4}));
  CHECK(g.value(kl_std_normal(g, {z, z}))[0] == 0.0);
  const Var one = g.constant(Tensor<double>({4}, 1.0));
  CHECK(g.value(kl_std_normal(g, {one, z}))[0] == doctest::Approx(2.0));

  // Monte Carlo oracle: KL = E_q[log q(x) - log p(x)], 1e6 samples, 3 sigma.
  Rng rng(8);
  const std::vector<double> mus{0.4, -1.1};
  const std::vector<double> lss{-0.3, 0.25};
  const Var kl = kl_std_normal(g, {g.constant(Tensor<double>({2}, mus)), g.constant(Tensor<double>({2}, lss))});
  const int samples = 1000000;
  double mean = 0, sq = 0;
  for (int i = 0; i < samples; ++i) {
    double term = 0;
    for (int d = 0; d < 2; ++d) {
      const double sigma = std::exp(lss[d]);
      const double e = rng.normal();
      const double x = mus[d] + sigma * e;
      term += (-0.5 * e * e - lss[d]) - (-0.5 * x * x);
    }
    mean += term;
    sq += term * term;
  }
  mean /= samples;
  const double stderr_ = std::sqrt((sq / samples - mean * mean) / samples);
  CHECK(std::abs(g.value(kl)[0] - mean) <= 3 * stderr_);

  Rng r2(9);
  for (int trial = 0; trial < 100; ++trial) {
    Graph<double> gg;
    const Var v = kl_std_normal(gg, {gg.constant(random_tensor<double>(r2, {5})), gg.constant(random_tensor<double>(r2, {5}))});
    CHECK(gg.value(v)[0] >= 0.0);
  }
  const auto mu = random_tensor<double>(r2, {3});
  const auto ls = random_tensor<double>(r2, {3}, 0.5);
  check_grad([](Graph<double>& gr, const std::vector<Var>& p) { return kl_std_normal(gr, {p[0], p[1]}); }, {mu, ls});
}

TEST_CASE("softmax cross entropy") {
  Rng rng(10);
  const auto logits = random_tensor<double>(rng, {4, 3});
  check_grad([](Graph<double>& gr, const std::vector<Var>& p) { return softmax_cross_entropy(gr, p[0], {0, 2, 1, 1}); }, {logits});
  const auto probs = softmax_rows(logits);
  for (int r = 0; r < 4; ++r) CHECK(probs[r * 3] + probs[r * 3 + 1] + probs[r * 3 + 2] == doctest::Approx(1.0));
}

TEST_CASE("composite conv + dense + KL passes the gradient check") {
  Rng rng(11);
  const std::vector<Tensor<double>> params{
      random_tensor<double>(rng, {2, 1, 4, 4}), random_tensor<double>(rng, {2, 1, 3, 3}, 0.5),
      random_tensor<double>(rng, {8, 4}, 0.3), random_tensor<double>(rng, {4}, 0.1)};
  check_grad([](Graph<double>& gr, const std::vector<Var>& p) {
    const Var h = tanh_act(gr, conv2d(gr, p[0], p[1], 2, 1));
    const Var flat = reshape(gr, h, {2, 8});
    const Var out = dense(gr, flat, p[2], p[3]);
    const Var mu = slice_cols(gr, out, 0, 2);
    const Var ls = slice_cols(gr, out, 2, 4);
    return kl_std_normal(gr, {mu, ls});
  }, params);
}

TEST_CASE("gradient check degenerate functions") {
  Rng rng(12);
  const auto x = random_tensor<double>(rng, {3, 2});
  const auto lin = grad_check([](Graph<double>& gr, const std::vector<Var>& p) { return weighted_sum(gr, p[0], 2); }, {x}, 1e-8);
  CHECK(lin.max_rel_error <= 1e-8);

  const ScalarFn constant_fn = [](Graph<double>& gr, const std::vector<Var>&) {
    return gr.constant(Tensor<double>({1}, 3.0));
  };
  Graph<double> g;
  const Var p = g.parameter(x);
  const Var out = constant_fn(g, {p});
  g.backward(out);
  const auto gp = g.grad(p);
  for (const double v : gp.values()) CHECK(v == 0.0);
  CHECK(grad_check(constant_fn, {x}, 1e-8).max_abs_error == 0.0);
}

TEST_CASE("backward is bitwise deterministic") {
  Rng rng(13);
  const auto x = random_tensor<float>(rng, {4, 2, 8, 8});
  const auto k = random_tensor<float>(rng, {3, 2, 5, 5});
  const auto w = random_tensor<float>(rng, {48, 6});
  auto run = [&] {
    Graph<float> g;
    const Var kv = g.parameter(k);
    const Var wv = g.parameter(w);
    const Var h = leaky_relu(g, conv2d(g, g.constant(x), kv, 2, 2));
    const Var out = dense(g, reshape(g, h, {4, 48}), wv, g.constant(Tensor<float>({6})));
    g.backward(sum(g, tanh_act(g, out)));
    return std::make_pair(g.grad(kv), g.grad(wv));
  };
  const auto a = run();
  const auto b = run();
  CHECK(a.first == b.first);
  CHECK(a.second == b.second);
}

TEST_CASE("Adam") {
  const AdamConfig cfg{0.01, 0.9, 0.999, 1e-8};
  std::vector<Tensor<double>> params{Tensor<double>({3}, std::vector<double>{1.0, -2.0, 0.5})};
  AdamState<double> state;
  const auto before = params;
  adam_step(params, {Tensor<double>({3})}, state, cfg);
  CHECK(params == before);

  std::vector<Tensor<double>> p2 = before;
  AdamState<double> s2;
  adam_step(p2, {Tensor<double>({3}, std::vector<double>{3.0, -0.1, 2e-3})}, s2, cfg);
  CHECK(p2[0][0] == doctest::Approx(before[0][0] - 0.01).epsilon(1e-6));
  CHECK(p2[0][1] == doctest::Approx(before[0][1] + 0.01).epsilon(1e-6));
  CHECK(p2[0][2] == doctest::Approx(before[0][2] - 0.01).epsilon(1e-4));

  // f(w) = ||w||^2 from w = 1.
  std::vector<Tensor<double>> w{Tensor<double>({1}, 1.0)};
  AdamState<double> s3;
  for (int i = 0; i < 100; ++i) adam_step(w, {Tensor<double>({1}, 2.0 * w[0][0])}, s3, cfg);
  CHECK(std::abs(w[0][0]) < 0.5);

  CHECK_THROWS_AS(adam_step(w, {Tensor<double>({2})}, s3, cfg), ShapeError);
}

TEST_CASE("parameter store") {
  ParameterStore<float> store;
  store.add("a", Tensor<float>({2}, 1.0f));
  store.add("b", Tensor<float>({3}, 2.0f));
  CHECK_THROWS_AS(store.add("a", Tensor<float>({1})), ContractError);
  CHECK(store.scalar_count() == 5);
  CHECK(store.cast<double>().get("b")[2] == 2.0);
  CHECK_THROWS_AS(store.get("zzz"), IndexError);
}

TEST_CASE("prng") {
  Rng a(42), b(42), c(43);
  bool differs = false;
  for (int i = 0; i < 10; ++i) {
    const auto va = a.next_u64();
    CHECK(va == b.next_u64());
    differs = differs || va != c.next_u64();
  }
  CHECK(differs);
  // Known first output for seed 0 pins the algorithm.
  Rng zero(0);
  CHECK(zero.next_u64() == 0x99ec5f36cb75f2b4ULL);

  Rng g(7);
  double mean = 0, sq = 0;
  const int n = 1000000;
  for (int i = 0; i < n; ++i) {
    const double v = g.normal();
    mean += v;
    sq += v * v;
  }
  mean /= n;
  const double var = sq / n - mean * mean;
  CHECK(std::abs(mean) < 0.01);
  CHECK(std::abs(var - 1.0) < 0.01);

  CHECK(Rng(5).split(1).next_u64() == Rng(5).split(1).next_u64());
  CHECK(Rng(5).split(1).next_u64() != Rng(5).split(2).next_u64());
  Rng u(3);
  for (int i = 0; i < 1000; ++i) CHECK(u.uniform_int(7) < 7);
}
