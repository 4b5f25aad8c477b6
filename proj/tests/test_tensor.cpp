#include <cmath>
#include <random>

#include "cgseg/error.hpp"
#include "cgseg/tensor.hpp"
#include "doctest.h"

using namespace cgseg;
using T = Tensor<double>;

namespace {

T random_tensor(int n, int c, int h, int w, std::mt19937_64& rng, double scale = 1.0) {
  T t(n, c, h, w);
  std::normal_distribution<double> g(0.0, scale);
  for (Eigen::Index i = 0; i < t.size(); ++i) t.v[i] = g(rng);
  return t;
}

void randomize(Conv<double>& conv, std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 0.5);
  for (Eigen::Index i = 0; i < conv.weight.size(); ++i) conv.weight.value[i] = g(rng);
  for (Eigen::Index i = 0; i < conv.bias.size(); ++i) conv.bias.value[i] = g(rng);
}

// Direct-sum cross-correlation with zero padding.
T naive_conv(const T& x, const Conv<double>& conv) {
  const int k = conv.k(), r = k / 2;
  T y(x.n, conv.out(), x.h, x.w);
  for (int i = 0; i < x.n; ++i)
    for (int o = 0; o < conv.out(); ++o)
      for (int yy = 0; yy < x.h; ++yy)
        for (int xx = 0; xx < x.w; ++xx) {
          double s = conv.bias.value[o];
          for (int c = 0; c < x.c; ++c)
            for (int ky = 0; ky < k; ++ky)
              for (int kx = 0; kx < k; ++kx) {
                const int sy = yy + ky - r, sx = xx + kx - r;
                if (sy < 0 || sx < 0 || sy >= x.h || sx >= x.w) continue;
                s += conv.weight.value[((o * x.c + c) * k + ky) * k + kx] * x.at(i, c, sy, sx);
              }
          y.at(i, o, yy, xx) = s;
        }
  return y;
}

// Weighted-sum objective L = sum(r * f(x)); its output gradient is r.
struct Probe {
  T r;
  double operator()(const T& y) const { return (r.v * y.v).sum(); }
};

Probe probe_for(const T& y, std::mt19937_64& rng) { return {random_tensor(y.n, y.c, y.h, y.w, rng)}; }

std::vector<GradCheckCoord> sample_coords(ArrayX<double>& values, const ArrayX<double>& grad, int count,
                                          std::mt19937_64& rng, const std::string& tag) {
  std::vector<GradCheckCoord> out;
  for (int k = 0; k < count; ++k) {
    const auto i = static_cast<Eigen::Index>(rng() % static_cast<std::uint64_t>(values.size()));
    out.push_back({&values[i], grad[i], tag + "[" + std::to_string(i) + "]"});
  }
  return out;
}

}  // namespace

TEST_CASE("conv2d: identity and hand-computed sums") {
  Conv<double> id("id", 1, 1, 1);
  id.weight.value[0] = 1.0;
  std::mt19937_64 rng(1);
  const T x = random_tensor(2, 1, 4, 5, rng);
  CHECK((conv2d(x, id).v == x.v).all());

  Conv<double> ones("ones", 1, 1, 3);
  ones.weight.value.setOnes();
  const T y = conv2d(T(1, 1, 5, 5, 1.0), ones);
  CHECK(y.at(0, 0, 2, 2) == 9.0);
  CHECK(y.at(0, 0, 0, 0) == 4.0);
  CHECK(y.at(0, 0, 0, 2) == 6.0);
}

TEST_CASE("conv2d matches direct summation") {
  std::mt19937_64 rng(2);
  for (int k : {1, 3}) {
    Conv<double> conv("c", 3, 4, k);
    randomize(conv, rng);
    const T x = random_tensor(2, 3, 6, 7, rng);
    const T a = conv2d(x, conv), b = naive_conv(x, conv);
    CHECK((a.v - b.v).abs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("conv2d rejects a channel mismatch") {
  Conv<double> conv("c", 3, 4, 3);
  CHECK_THROWS_AS(conv2d(T(1, 2, 4, 4), conv), ShapeError);
}

TEST_CASE("conv2d gradients match central differences") {
  std::mt19937_64 rng(3);
  for (int k : {1, 3}) {
    Conv<double> conv("c", 3, 2, k);
    randomize(conv, rng);
    T x = random_tensor(2, 3, 5, 5, rng);
    const Probe pr = probe_for(conv2d(x, conv), rng);
    conv.weight.grad.setZero();
    conv.bias.grad.setZero();
    const T dx = conv2d_backward(x, conv, pr.r);
    auto coords = sample_coords(x.v, dx.v, 60, rng, "x");
    auto cw = sample_coords(conv.weight.value, conv.weight.grad, 40, rng, "w");
    auto cb = sample_coords(conv.bias.value, conv.bias.grad, 4, rng, "b");
    coords.insert(coords.end(), cw.begin(), cw.end());
    coords.insert(coords.end(), cb.begin(), cb.end());
    const auto rep = grad_check([&] { return pr(conv2d(x, conv)); }, coords);
    CHECK(rep.checked == 104);
    // The map is linear, so only rounding remains.
    CHECK(rep.max_rel_error < 1e-8);
  }
}

TEST_CASE("maxpool: values, tie rule, odd sizes") {
  T x(1, 1, 2, 2);
  x.v << 1, 2, 3, 4;
  std::vector<std::int32_t> arg;
  CHECK(maxpool2x2(x, arg).v[0] == 4.0);

  const T c(1, 2, 4, 4, 7.0);
  const T yc = maxpool2x2(c, arg);
  const T g = maxpool2x2_backward(T(1, 2, 2, 2, 1.0), arg, c.shape());
  for (int ch = 0; ch < 2; ++ch)
    for (int yy = 0; yy < 4; ++yy)
      for (int xx = 0; xx < 4; ++xx) CHECK(g.at(0, ch, yy, xx) == ((yy % 2 == 0 && xx % 2 == 0) ? 1.0 : 0.0));

  T odd(1, 1, 3, 3);
  odd.v << 1, 2, 3, 4, 5, 6, -7, -8, -9;
  const T yo = maxpool2x2(odd, arg);
  REQUIRE(yo.h == 2);
  REQUIRE(yo.w == 2);
  CHECK(yo.v[0] == 5.0);
  CHECK(yo.v[1] == 6.0);
  CHECK(yo.v[2] == -7.0);
  CHECK(yo.v[3] == -9.0);
}

TEST_CASE("maxpool gradient check away from ties") {
  std::mt19937_64 rng(4);
  T x = random_tensor(2, 3, 6, 6, rng);
  std::vector<std::int32_t> arg;
  const Probe pr = probe_for(maxpool2x2(x, arg), rng);
  const T dx = maxpool2x2_backward(pr.r, arg, x.shape());
  std::vector<std::int32_t> scratch;
  const auto sig = [&] {
    maxpool2x2(x, scratch);
    std::uint64_t h = 1469598103934665603ull;
    for (auto a : scratch) h = (h ^ static_cast<std::uint64_t>(a)) * 1099511628211ull;
    return h;
  };
  const auto rep = grad_check([&] { return pr(maxpool2x2(x, scratch)); }, sample_coords(x.v, dx.v, 80, rng, "x"),
                              1e-4, sig);
  CHECK(rep.checked > 50);
  CHECK(rep.max_rel_error < 1e-4);
}

TEST_CASE("upsample: constant extension, linear ramp, gradient") {
  T one(1, 1, 1, 1, 3.5);
  const T u = upsample_bilinear(one, 2, 2);
  CHECK((u.v == 3.5).all());

  T ramp(1, 1, 4, 4);
  for (int yy = 0; yy < 4; ++yy)
    for (int xx = 0; xx < 4; ++xx) ramp.at(0, 0, yy, xx) = 2.0 * xx + 0.5 * yy;
  const T up = upsample_bilinear(ramp, 8, 8);
  // Output pixel o samples the input at (o + 0.5) / 2 - 0.5.
  for (int yy = 1; yy < 7; ++yy)
    for (int xx = 1; xx < 7; ++xx) {
      const double sx = (xx + 0.5) / 2 - 0.5, sy = (yy + 0.5) / 2 - 0.5;
      CHECK(up.at(0, 0, yy, xx) == doctest::Approx(2.0 * sx + 0.5 * sy));
    }

  std::mt19937_64 rng(5);
  T x = random_tensor(2, 2, 3, 5, rng);
  const Probe pr = probe_for(upsample_bilinear(x, 12, 16), rng);
  const T dx = upsample_bilinear_backward(pr.r, 3, 5);
  const auto rep = grad_check([&] { return pr(upsample_bilinear(x, 12, 16)); }, sample_coords(x.v, dx.v, 60, rng, "x"));
  CHECK(rep.max_rel_error < 1e-4);
  CHECK_THROWS_AS(upsample_bilinear(x, 2, 5), ShapeError);
}

TEST_CASE("activations") {
  T x(1, 1, 1, 3);
  x.v << -1, 0, 2;
  const T r = relu(x);
  CHECK(r.v[0] == 0.0);
  CHECK(r.v[1] == 0.0);
  CHECK(r.v[2] == 2.0);
  const T dr = relu_backward(r, T(1, 1, 1, 3, 1.0));
  CHECK(dr.v[1] == 0.0);  // relu'(0) = 0
  CHECK(dr.v[2] == 1.0);

  CHECK(sigmoid(0.0) == 0.5);
  CHECK(sigmoid(-1000.0) == 0.0);
  CHECK(sigmoid(1000.0) == 1.0);
  CHECK(std::isfinite(sigmoid(-500.0f)));
  CHECK(sigmoid(-500.0) > 0.0);
  CHECK(sigmoid(-500.0) == doctest::Approx(std::exp(-500.0)).epsilon(1e-12));

  std::mt19937_64 rng(6);
  T z = random_tensor(1, 2, 4, 4, rng);
  const Probe pr = probe_for(z, rng);
  const T s = sigmoid(z);
  T ds = pr.r;
  ds.v = pr.r.v * s.v * (1.0 - s.v);
  const auto rep = grad_check([&] { return pr(sigmoid(z)); }, sample_coords(z.v, ds.v, 30, rng, "z"));
  CHECK(rep.max_rel_error < 1e-4);

  // ReLU away from the kink.
  T a = random_tensor(1, 2, 4, 4, rng);
  for (Eigen::Index i = 0; i < a.size(); ++i)
    if (std::abs(a.v[i]) < 1e-2) a.v[i] = 0.5;
  const T da = relu_backward(relu(a), pr.r);
  const auto rr = grad_check([&] { return pr(relu(a)); }, sample_coords(a.v, da.v, 30, rng, "a"));
  CHECK(rr.max_rel_error < 1e-4);
}

TEST_CASE("bce: closed forms and gradient") {
  T p(1, 1, 1, 1, 0.5), y(1, 1, 1, 1, 1.0);
  CHECK(bce_loss(p, y) == doctest::Approx(std::log(2.0)));
  p.v[0] = 1.0;
  CHECK(bce_loss(p, y) == doctest::Approx(1e-7).epsilon(1e-3));
  CHECK_THROWS_AS(bce_loss(p, T(1, 1, 2, 1)), ShapeError);

  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(0.05, 0.95);
  T q(2, 1, 3, 3), t(2, 1, 3, 3);
  for (Eigen::Index i = 0; i < q.size(); ++i) {
    q.v[i] = u(rng);
    t.v[i] = static_cast<double>(rng() % 2);
  }
  const T g = bce_grad(q, t);
  const auto rep = grad_check([&] { return bce_loss(q, t); }, sample_coords(q.v, g.v, 18, rng, "p"));
  CHECK(rep.max_rel_error < 1e-4);
}

TEST_CASE("glorot: bound, mean, determinism") {
  CHECK(glorot_limit({1, 1, 3, 3}) == doctest::Approx(std::sqrt(6.0 / 18.0)));
  Param<double> p("w", {1, 1, 3, 3});
  glorot_uniform(p, 11);
  CHECK(p.value.abs().maxCoeff() <= glorot_limit(p.shape));

  Param<double> big("w", {1000, 1000, 1, 1});
  glorot_uniform(big, 12);
  const double a = glorot_limit(big.shape);
  const double sigma = a / std::sqrt(3.0);
  CHECK(std::abs(big.value.mean()) <= 3 * sigma / std::sqrt(1e6));
  CHECK(big.value.abs().maxCoeff() <= a);

  Param<float> f1("w", {8, 4, 3, 3}), f2("w", {8, 4, 3, 3});
  glorot_uniform(f1, 99);
  glorot_uniform(f2, 99);
  CHECK((f1.value == f2.value).all());
}

TEST_CASE("nadam: hand-traced steps") {
  Param<double> p("theta", {1, 1, 1, 1});
  Nadam<double> opt;
  p.grad[0] = 0.0;
  opt.step({&p}, 0.1);
  CHECK(p.value[0] == 0.0);

  Param<double> q("theta", {1, 1, 1, 1});
  Nadam<double> o2;
  q.grad[0] = 1.0;
  o2.step({&q}, 0.1);
  // m = 0.1, v = 0.001; m_bar = 0.9*0.1/(1-0.81) + 0.1/(1-0.9); v_hat = 1.
  const double m_bar = 0.9 * 0.1 / (1 - 0.81) + 0.1 / 0.1;
  const double d1 = -0.1 * m_bar / (1.0 + 1e-8);
  CHECK(q.value[0] == doctest::Approx(d1).epsilon(1e-12));
  CHECK(d1 == doctest::Approx(-0.147368).epsilon(1e-5));
  const double before = q.value[0];
  o2.step({&q}, 0.1);
  CHECK(std::abs(q.value[0] - before) < std::abs(d1));
  CHECK(o2.t() == 2);

  q.grad[0] = std::nan("");
  try {
    o2.step({&q}, 0.1);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("theta") != std::string::npos);
  }
}
