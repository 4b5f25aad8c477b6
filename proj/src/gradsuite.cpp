#include "cgseg/gradsuite.hpp"

#include <random>

#include "cgseg/cgnet.hpp"

namespace cgseg {

namespace {

using T = Tensor<double>;

T random_tensor(int n, int c, int h, int w, std::mt19937_64& rng, bool binary = false) {
  T t(n, c, h, w);
  std::uniform_real_distribution<double> u(-1, 1);
  for (Eigen::Index i = 0; i < t.size(); ++i) t.v[i] = binary ? (u(rng) > 0.2) : u(rng);
  return t;
}

// Linear read-out sum(w * y) so every output element contributes.
struct Projection {
  T w;
  double operator()(const T& y) const { return (w.v * y.v).sum(); }
};

std::vector<GradCheckCoord> coords_for(ArrayX<double>& v, const ArrayX<double>& g, int count, std::mt19937_64& rng,
                                       const std::string& label) {
  std::vector<GradCheckCoord> out;
  for (int k = 0; k < count; ++k) {
    const auto i = static_cast<Eigen::Index>(rng() % static_cast<std::uint64_t>(v.size()));
    out.push_back({&v[i], g[i], label + "[" + std::to_string(i) + "]"});
  }
  return out;
}

std::uint64_t sign_hash(const T& t) {
  std::uint64_t h = 1469598103934665603ull;
  for (Eigen::Index i = 0; i < t.size(); ++i) h = (h ^ static_cast<std::uint64_t>(t.v[i] > 0)) * 1099511628211ull;
  return h;
}

GradCheckReport check_conv(std::mt19937_64& rng) {
  T x = random_tensor(2, 3, 7, 6, rng);
  Conv<double> conv("c", 3, 4, 3);
  glorot_uniform(conv.weight, rng());
  conv.bias.value = random_tensor(4, 1, 1, 1, rng).v;
  const Projection pr{random_tensor(2, 4, 7, 6, rng)};
  const T dx = conv2d_backward(x, conv, pr.w, true);
  auto coords = coords_for(x.v, dx.v, 20, rng, "x");
  const auto cw = coords_for(conv.weight.value, conv.weight.grad, 20, rng, "weight");
  const auto cb = coords_for(conv.bias.value, conv.bias.grad, 4, rng, "bias");
  coords.insert(coords.end(), cw.begin(), cw.end());
  coords.insert(coords.end(), cb.begin(), cb.end());
  return grad_check([&] { return pr(conv2d(x, conv)); }, coords);
}

GradCheckReport check_maxpool(std::mt19937_64& rng) {
  T x = random_tensor(1, 2, 7, 8, rng);
  std::vector<std::int32_t> arg, scratch;
  const T y = maxpool2x2(x, arg);
  scratch = arg;
  const Projection pr{random_tensor(y.n, y.c, y.h, y.w, rng)};
  const T dx = maxpool2x2_backward(pr.w, arg, x.shape());
  return grad_check([&] { return pr(maxpool2x2(x, scratch)); }, coords_for(x.v, dx.v, 40, rng, "x"), 1e-4, [&] {
    std::uint64_t h = 0;
    for (auto a : scratch) h = (h ^ static_cast<std::uint64_t>(a)) * 1099511628211ull;
    return h;
  });
}

GradCheckReport check_upsample(std::mt19937_64& rng) {
  T x = random_tensor(1, 2, 4, 5, rng);
  const Projection pr{random_tensor(1, 2, 9, 13, rng)};
  const T dx = upsample_bilinear_backward(pr.w, 4, 5);
  return grad_check([&] { return pr(upsample_bilinear(x, 9, 13)); }, coords_for(x.v, dx.v, 30, rng, "x"));
}

GradCheckReport check_relu(std::mt19937_64& rng) {
  T a = random_tensor(1, 2, 5, 5, rng);
  const Projection pr{random_tensor(1, 2, 5, 5, rng)};
  const T da = relu_backward(relu(a), pr.w);
  return grad_check([&] { return pr(relu(a)); }, coords_for(a.v, da.v, 30, rng, "a"), 1e-4,
                    [&] { return sign_hash(a); });
}

GradCheckReport check_sigmoid_bce(std::mt19937_64& rng) {
  T z = random_tensor(1, 1, 6, 6, rng);
  const T y = random_tensor(1, 1, 6, 6, rng, true);
  // Fused gradient of bce(sigmoid(z), y) with respect to z.
  const T p = sigmoid(z);
  T dz = p;
  dz.v = (p.v - y.v) / static_cast<double>(p.size());
  return grad_check([&] { return bce_loss(sigmoid(z), y); }, coords_for(z.v, dz.v, 30, rng, "z"));
}

NetConfig tiny_net() {
  NetConfig c;
  c.block_channels = {3, 4, 5};
  c.convs_per_block = {1, 2, 1};
  c.taps = {1, 2, 3};
  c.reduced_channels = 3;
  c.latent_channels = 2;
  return c;
}

GradCheckReport check_model(Model<double>& m, std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 0.1);
  for (auto* p : m.params())
    if (p->name.ends_with(".bias"))
      for (Eigen::Index i = 0; i < p->size(); ++i) p->value[i] = g(rng);
  T sar = random_tensor(2, 1, 10, 10, rng);
  T gis = random_tensor(2, 1, 10, 10, rng, true);
  const T y = random_tensor(2, 1, 10, 10, rng, true);
  m.zero_grad();
  const T p = m.forward(sar, gis);
  T dl = p;
  dl.v = (p.v - y.v) / static_cast<double>(p.size());
  const auto in = m.backward(dl);
  std::vector<GradCheckCoord> coords;
  for (auto* prm : m.params()) {
    const auto c = coords_for(prm->value, prm->grad, 3, rng, prm->name);
    coords.insert(coords.end(), c.begin(), c.end());
  }
  const auto cs = coords_for(sar.v, in.sar.v, 10, rng, "sar");
  const auto cg = coords_for(gis.v, in.gis.v, 10, rng, "gis");
  coords.insert(coords.end(), cs.begin(), cs.end());
  coords.insert(coords.end(), cg.begin(), cg.end());
  return grad_check([&] { return bce_loss(m.forward(sar, gis), y); }, coords, 1e-4,
                    [&] { return m.activation_signature(); });
}

}  // namespace

std::vector<GradSuiteEntry> run_grad_suite(std::uint64_t seed, double tolerance) {
  std::mt19937_64 rng(seed);
  std::vector<GradSuiteEntry> out;
  const auto add = [&](const std::string& name, const GradCheckReport& r) {
    out.push_back({name, r, r.checked > 0 && r.max_rel_error < tolerance});
  };
  add("conv2d", check_conv(rng));
  add("maxpool2x2", check_maxpool(rng));
  add("upsample_bilinear", check_upsample(rng));
  add("relu", check_relu(rng));
  add("sigmoid+bce", check_sigmoid_bce(rng));
  NetConfig one = tiny_net();
  one.taps = {3};
  Model<double> head = build_cgnet<double>(one, rng());
  add("cg_head", check_model(head, rng));
  Model<double> cg = build_cgnet<double>(tiny_net(), rng());
  add("cgnet", check_model(cg, rng));
  Model<double> base = build_baseline<double>(tiny_net(), rng());
  add("baseline", check_model(base, rng));
  return out;
}

}  // namespace cgseg
