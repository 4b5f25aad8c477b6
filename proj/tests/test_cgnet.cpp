#include <filesystem>
#include <fstream>
#include <cstring>
#include <random>

#include "cgseg/cgnet.hpp"
#include "cgseg/error.hpp"
#include "doctest.h"

using namespace cgseg;
namespace fs = std::filesystem;

namespace {

long conv_count(long in, long out, long k) { return in * out * k * k + out; }

long cg_module_count(const NetConfig& c) {
  return conv_count(1, c.latent_channels, 3) + 2 * conv_count(c.latent_channels, c.reduced_channels, 3);
}

// Closed-form parameter count from the architecture description.
long expected_count(const NetConfig& c) {
  long n = 0;
  long in = c.input_channels;
  for (std::size_t b = 0; b < c.block_channels.size(); ++b) {
    for (int j = 0; j < c.convs_per_block[b]; ++j) {
      n += conv_count(in, c.block_channels[b], 3);
      in = c.block_channels[b];
    }
  }
  for (int t : c.taps) {
    n += conv_count(c.block_channels[static_cast<std::size_t>(t - 1)], c.reduced_channels, 1);
    n += conv_count(c.reduced_channels, 1, 1);
    if (c.conditional) n += cg_module_count(c);
  }
  return n;
}

NetConfig tiny() {
  NetConfig c;
  c.block_channels = {3, 4, 5};
  c.convs_per_block = {1, 2, 1};
  c.taps = {1, 2, 3};
  c.reduced_channels = 3;
  c.latent_channels = 2;
  return c;
}

template <typename S>
Tensor<S> random_tensor(int n, int h, int w, std::mt19937_64& rng, bool binary) {
  Tensor<S> t(n, 1, h, w);
  std::uniform_real_distribution<double> u(0, 1);
  for (Eigen::Index i = 0; i < t.size(); ++i) t.v[i] = static_cast<S>(binary ? (u(rng) < 0.4) : u(rng));
  return t;
}

void randomize_biases(Model<double>& m, std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 0.1);
  for (auto* p : m.params())
    if (p->name.ends_with(".bias"))
      for (Eigen::Index i = 0; i < p->size(); ++i) p->value[i] = g(rng);
}

// Loss with the fused sigmoid + BCE gradient (p - y) / N.
struct FusedLoss {
  Tensor<double> y;
  double eval(Model<double>& m, const Tensor<double>& sar, const Tensor<double>& gis) {
    return bce_loss(m.forward(sar, gis), y);
  }
  Tensor<double> dlogit(const Tensor<double>& p) const {
    Tensor<double> g = p;
    g.v = (p.v - y.v) / static_cast<double>(p.size());
    return g;
  }
};

GradCheckReport check_model(Model<double>& m, int h, int w, std::uint64_t seed, int coords_per_param = 4) {
  std::mt19937_64 rng(seed);
  randomize_biases(m, rng);
  Tensor<double> sar = random_tensor<double>(2, h, w, rng, false);
  Tensor<double> gis = random_tensor<double>(2, h, w, rng, true);
  FusedLoss loss{random_tensor<double>(2, h, w, rng, true)};
  m.zero_grad();
  const Tensor<double> p = m.forward(sar, gis);
  const auto in_grad = m.backward(loss.dlogit(p));
  std::vector<GradCheckCoord> coords;
  for (auto* prm : m.params()) {
    for (int k = 0; k < coords_per_param; ++k) {
      const auto i = static_cast<Eigen::Index>(rng() % static_cast<std::uint64_t>(prm->size()));
      coords.push_back({&prm->value[i], prm->grad[i], prm->name});
    }
  }
  for (int k = 0; k < 10; ++k) {
    const auto i = static_cast<Eigen::Index>(rng() % static_cast<std::uint64_t>(sar.size()));
    coords.push_back({&sar.v[i], in_grad.sar.v[i], "sar"});
    coords.push_back({&gis.v[i], in_grad.gis.v[i], "gis"});
  }
  return grad_check([&] { return loss.eval(m, sar, gis); }, coords, 1e-4, [&] { return m.activation_signature(); });
}

}  // namespace

TEST_CASE("parameter counts follow the closed form") {
  NetConfig def;
  const Model<float> cg = build_cgnet<float>(def, 1);
  CHECK(cg.parameter_count() == expected_count(def));
  NetConfig base_cfg = def;
  base_cfg.conditional = false;
  base_cfg.input_channels = 2;
  const Model<float> base = build_baseline<float>(def, 1);
  CHECK(base.parameter_count() == expected_count(base_cfg));
  // The second input channel adds one 3x3 slice per first-block filter.
  const long first_block_extra = 9L * def.block_channels[0];
  CHECK(cg.parameter_count() - base.parameter_count() == 3 * cg_module_count(def) - first_block_extra);
  CHECK(cg_module_count(def) == (9 * 32 + 32) + 2 * (9 * 32 * 32 + 32));
}

TEST_CASE("config validation") {
  NetConfig c;
  c.taps = {6};
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = NetConfig{};
  c.convs_per_block = {1, 1};
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = NetConfig{};
  c.block_channels[2] = 0;
  CHECK_THROWS_AS(Model<float>{c}, ConfigError);
}

TEST_CASE("forward: shape and range at full patch size") {
  std::mt19937_64 rng(2);
  Model<float> m = build_cgnet<float>(NetConfig{}, 3);
  const auto sar = random_tensor<float>(1, 256, 256, rng, false);
  const auto gis = random_tensor<float>(1, 256, 256, rng, true);
  const Tensor<float> p = m.forward(sar, gis);
  CHECK(p.shape() == std::array<int, 4>{1, 1, 256, 256});
  CHECK(p.v.minCoeff() >= 0.0f);
  CHECK(p.v.maxCoeff() <= 1.0f);
  Model<float> b = build_baseline<float>(NetConfig{}, 3);
  CHECK(b.forward(sar, gis).shape() == p.shape());
}

TEST_CASE("same seed, same parameters") {
  Model<float> a = build_cgnet<float>(tiny(), 42), b = build_cgnet<float>(tiny(), 42), c = build_cgnet<float>(tiny(), 43);
  bool all_equal = true, any_diff = false;
  for (std::size_t k = 0; k < a.params().size(); ++k) {
    all_equal &= (a.params()[k]->value == b.params()[k]->value).all();
    any_diff |= !(a.params()[k]->value == c.params()[k]->value).all();
  }
  CHECK(all_equal);
  CHECK(any_diff);
}

TEST_CASE("identity normalization reproduces the unconditioned network") {
  NetConfig cfg = tiny();
  Model<double> cg = build_cgnet<double>(cfg, 5);
  NetConfig plain_cfg = cfg;
  plain_cfg.conditional = false;
  plain_cfg.input_channels = 1;
  Model<double> plain(plain_cfg);
  plain.init(6);
  // Share backbone and head weights; force gamma = 1, beta = 0.
  for (std::size_t b = 0; b < cg.blocks().size(); ++b)
    for (std::size_t j = 0; j < cg.blocks()[b].size(); ++j) plain.blocks()[b][j] = cg.blocks()[b][j];
  for (std::size_t h = 0; h < cg.heads().size(); ++h) {
    auto& head = cg.heads()[h];
    plain.heads()[h].reduce = head.reduce;
    plain.heads()[h].out = head.out;
    head.cg->gamma.weight.value.setZero();
    head.cg->gamma.bias.value.setOnes();
    head.cg->beta.weight.value.setZero();
    head.cg->beta.bias.value.setZero();
  }
  std::mt19937_64 rng(7);
  const auto sar = random_tensor<double>(2, 12, 12, rng, false);
  const auto gis = random_tensor<double>(2, 12, 12, rng, true);
  const auto a = cg.forward(sar, gis), b = plain.forward(sar, gis);
  CHECK((a.v - b.v).abs().maxCoeff() < 1e-14);
}

TEST_CASE("all-zero GIS with zero biases gives zero normalized features") {
  Model<double> m = build_cgnet<double>(tiny(), 8);  // biases start at zero
  std::mt19937_64 rng(9);
  const auto sar = random_tensor<double>(1, 8, 8, rng, false);
  const Tensor<double> zeros(1, 1, 8, 8);
  const auto p = m.forward(sar, zeros);
  // Every head contributes only its output bias (zero): logits vanish.
  CHECK(m.logits().v.abs().maxCoeff() == 0.0);
  CHECK((p.v == 0.5).all());
}

TEST_CASE("gradient check: CG-Net and baseline in double precision") {
  for (std::uint64_t seed : {11u, 12u}) {
    Model<double> cg = build_cgnet<double>(tiny(), seed);
    const auto r1 = check_model(cg, 10, 10, seed);
    CHECK(r1.checked >= 50);
    CHECK_MESSAGE(r1.max_rel_error < 1e-4, r1.worst);
    Model<double> base = build_baseline<double>(tiny(), seed);
    const auto r2 = check_model(base, 10, 10, seed + 100);
    CHECK(r2.checked >= 50);
    CHECK_MESSAGE(r2.max_rel_error < 1e-4, r2.worst);
  }
}

TEST_CASE("gradient check: a single CG head") {
  NetConfig c = tiny();
  c.taps = {3};
  Model<double> m = build_cgnet<double>(c, 21);
  const auto r = check_model(m, 9, 7, 21, 8);
  CHECK(r.checked >= 50);
  CHECK_MESSAGE(r.max_rel_error < 1e-4, r.worst);
}

TEST_CASE("output depends on the GIS mask after a training step") {
  Model<double> m = build_cgnet<double>(tiny(), 31);
  std::mt19937_64 rng(32);
  const auto sar = random_tensor<double>(2, 8, 8, rng, false);
  const auto gis = random_tensor<double>(2, 8, 8, rng, true);
  FusedLoss loss{gis};
  Nadam<double> opt;
  m.zero_grad();
  m.backward(loss.dlogit(m.forward(sar, gis)));
  opt.step(m.params(), 2e-3);
  m.zero_grad();
  const auto g = m.backward(loss.dlogit(m.forward(sar, gis)));
  CHECK(g.gis.v.abs().maxCoeff() > 0.0);
}

TEST_CASE("checkpoint round trip is bit exact") {
  const fs::path p = fs::temp_directory_path() / "cgseg_ckpt_test.bin";
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    NetConfig c = tiny();
    c.block_channels[0] = 2 + static_cast<int>(seed);
    Model<float> m = seed % 2 ? build_cgnet<float>(c, seed) : build_baseline<float>(c, seed);
    std::mt19937_64 rng(seed);
    std::normal_distribution<float> g;
    for (auto* prm : m.params())
      for (Eigen::Index i = 0; i < prm->size(); ++i) prm->value[i] = g(rng);
    save_checkpoint(m, {{"seed", seed}, {"step", 17}}, p);
    const Checkpoint ck = load_checkpoint(p);
    CHECK(ck.model.config() == m.config());
    CHECK(ck.meta.at("step").get<int>() == 17);
    for (std::size_t k = 0; k < m.params().size(); ++k) {
      CHECK(std::memcmp(ck.model.params()[k]->value.data(), m.params()[k]->value.data(),
                        sizeof(float) * static_cast<std::size_t>(m.params()[k]->size())) == 0);
    }
    const fs::path p2 = p.string() + ".2";
    save_checkpoint(ck.model, ck.meta, p2);
    std::ifstream a(p, std::ios::binary), b(p2, std::ios::binary);
    const std::string sa((std::istreambuf_iterator<char>(a)), {}), sb((std::istreambuf_iterator<char>(b)), {});
    CHECK(sa == sb);
    fs::remove(p2);
  }
  std::ofstream(p, std::ios::binary) << "XXXX0000";
  CHECK_THROWS_AS(load_checkpoint(p), ParseError);
  fs::remove(p);
}
