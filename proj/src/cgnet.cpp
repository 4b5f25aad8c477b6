#include "cgseg/cgnet.hpp"

#include <bit>
#include <cstring>

#include "cgseg/error.hpp"
#include "cgseg/io_util.hpp"

namespace cgseg {

void NetConfig::validate() const {
  if (block_channels.empty()) throw ConfigError("network needs at least one block");
  if (convs_per_block.size() != block_channels.size()) {
    throw ConfigError("convs_per_block must list one count per block");
  }
  for (int c : block_channels)
    if (c < 1) throw ConfigError("block channel counts must be positive");
  for (int c : convs_per_block)
    if (c < 1) throw ConfigError("every block needs at least one convolution");
  if (taps.empty()) throw ConfigError("at least one tap block is required");
  for (int t : taps)
    if (t < 1 || t > n_blocks()) throw ConfigError("tap block " + std::to_string(t) + " does not exist");
  if (reduced_channels < 1 || latent_channels < 1) throw ConfigError("reduced and latent channels must be positive");
  if (input_channels < 1 || input_channels > 2) throw ConfigError("input_channels must be 1 or 2");
}

void to_json(nlohmann::json& j, const NetConfig& c) {
  j = {{"block_channels", c.block_channels}, {"convs_per_block", c.convs_per_block},
       {"taps", c.taps},
       {"reduced_channels", c.reduced_channels},
       {"latent_channels", c.latent_channels},
       {"input_channels", c.input_channels},
       {"conditional", c.conditional}};
}

void from_json(const nlohmann::json& j, NetConfig& c) {
  c.block_channels = j.at("block_channels").get<std::vector<int>>();
  c.convs_per_block = j.at("convs_per_block").get<std::vector<int>>();
  c.taps = j.at("taps").get<std::vector<int>>();
  c.reduced_channels = j.at("reduced_channels").get<int>();
  c.latent_channels = j.at("latent_channels").get<int>();
  c.input_channels = j.at("input_channels").get<int>();
  c.conditional = j.at("conditional").get<bool>();
  c.validate();
}

template <typename S>
Model<S>::Model(NetConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  int in = cfg_.input_channels;
  for (int b = 0; b < cfg_.n_blocks(); ++b) {
    std::vector<Conv<S>> convs;
    for (int j = 0; j < cfg_.convs_per_block[static_cast<std::size_t>(b)]; ++j) {
      const int out = cfg_.block_channels[static_cast<std::size_t>(b)];
      convs.emplace_back("block" + std::to_string(b + 1) + ".conv" + std::to_string(j + 1), in, out, 3);
      in = out;
    }
    blocks_.push_back(std::move(convs));
  }
  const int cr = cfg_.reduced_channels, ce = cfg_.latent_channels;
  for (std::size_t h = 0; h < cfg_.taps.size(); ++h) {
    Head<S> head;
    head.tap = cfg_.taps[h] - 1;
    const std::string p = "head" + std::to_string(h + 1);
    head.reduce = Conv<S>(p + ".reduce", cfg_.block_channels[static_cast<std::size_t>(head.tap)], cr, 1);
    if (cfg_.conditional) {
      head.cg = CgModule<S>{Conv<S>(p + ".cg.encoder", 1, ce, 3), Conv<S>(p + ".cg.gamma", ce, cr, 3),
                            Conv<S>(p + ".cg.beta", ce, cr, 3)};
    }
    head.out = Conv<S>(p + ".out", cr, 1, 1);
    heads_.push_back(std::move(head));
  }
}

template <typename S>
std::vector<Param<S>*> Model<S>::params() {
  std::vector<Param<S>*> out;
  auto add = [&](Conv<S>& c) {
    out.push_back(&c.weight);
    out.push_back(&c.bias);
  };
  for (auto& blk : blocks_)
    for (auto& c : blk) add(c);
  for (auto& h : heads_) {
    add(h.reduce);
    if (h.cg) {
      add(h.cg->encoder);
      add(h.cg->gamma);
      add(h.cg->beta);
    }
    add(h.out);
  }
  return out;
}

template <typename S>
std::vector<const Param<S>*> Model<S>::params() const {
  auto ps = const_cast<Model*>(this)->params();
  return {ps.begin(), ps.end()};
}

template <typename S>
long Model<S>::parameter_count() const {
  long n = 0;
  for (const auto* p : params()) n += static_cast<long>(p->size());
  return n;
}

namespace {

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

}  // namespace

template <typename S>
void Model<S>::init(std::uint64_t seed) {
  std::uint64_t k = 0;
  for (auto* p : params()) {
    if (p->name.ends_with(".bias")) {
      p->value.setZero();
    } else {
      glorot_uniform(*p, splitmix(seed * 0x100000001b3ull + k));
    }
    ++k;
  }
  zero_grad();
}

template <typename S>
void Model<S>::zero_grad() {
  for (auto* p : params()) p->grad.setZero();
}

template <typename S>
Tensor<S> Model<S>::forward(const Tensor<S>& sar, const Tensor<S>& gis) {
  if (sar.c != 1 || gis.c != 1) throw ShapeError("sar and gis inputs must be single-channel");
  if (!sar.same_shape(gis)) throw ShapeError("sar and gis inputs differ in shape");
  gis_ = gis;
  const int nb = cfg_.n_blocks();
  conv_in_.assign(static_cast<std::size_t>(nb), {});
  conv_out_.assign(static_cast<std::size_t>(nb), {});
  pool_arg_.assign(static_cast<std::size_t>(nb), {});
  pool_in_shape_.assign(static_cast<std::size_t>(nb), {});

  Tensor<S> x = cfg_.input_channels == 2 ? concat_channels(sar, gis) : sar;
  for (int b = 0; b < nb; ++b) {
    const auto bi = static_cast<std::size_t>(b);
    if (b > 0) {
      pool_in_shape_[bi] = x.shape();
      x = maxpool2x2(x, pool_arg_[bi]);
    }
    for (auto& conv : blocks_[bi]) {
      conv_in_[bi].push_back(x);
      x = relu(conv2d(x, conv));
      conv_out_[bi].push_back(x);
    }
  }

  head_r_.assign(heads_.size(), {});
  head_u_.assign(heads_.size(), {});
  head_x_.assign(heads_.size(), {});
  head_cg_.assign(heads_.size(), {});
  logit_ = Tensor<S>(sar.n, 1, sar.h, sar.w);
  for (std::size_t h = 0; h < heads_.size(); ++h) {
    Head<S>& head = heads_[h];
    const Tensor<S>& feat = conv_out_[static_cast<std::size_t>(head.tap)].back();
    head_r_[h] = conv2d(feat, head.reduce);
    head_u_[h] = upsample_bilinear(head_r_[h], sar.h, sar.w);
    if (head.cg) {
      CgForward<S>& c = head_cg_[h];
      c.e = relu(conv2d(gis, head.cg->encoder));
      c.gamma = conv2d(c.e, head.cg->gamma);
      c.beta = conv2d(c.e, head.cg->beta);
      head_x_[h] = c.gamma;
      head_x_[h].v = c.gamma.v * head_u_[h].v + c.beta.v;
    } else {
      head_x_[h] = head_u_[h];
    }
    logit_.v += conv2d(head_x_[h], head.out).v;
  }
  return sigmoid(logit_);
}

template <typename S>
typename Model<S>::InputGrads Model<S>::backward(const Tensor<S>& dlogit) {
  if (!dlogit.same_shape(logit_)) throw ShapeError("backward: gradient shape does not match the last forward");
  const int nb = cfg_.n_blocks();
  InputGrads in;
  in.gis = Tensor<S>(gis_.n, 1, gis_.h, gis_.w);
  std::vector<Tensor<S>> dblock(static_cast<std::size_t>(nb));
  for (std::size_t h = 0; h < heads_.size(); ++h) {
    Head<S>& head = heads_[h];
    const Tensor<S> dx = conv2d_backward(head_x_[h], head.out, dlogit);
    Tensor<S> du = dx;
    if (head.cg) {
      const CgForward<S>& c = head_cg_[h];
      Tensor<S> dgamma = dx;
      dgamma.v = dx.v * head_u_[h].v;
      du.v = dx.v * c.gamma.v;
      Tensor<S> de = conv2d_backward(c.e, head.cg->gamma, dgamma);
      de.v += conv2d_backward(c.e, head.cg->beta, dx).v;
      in.gis.v += conv2d_backward(gis_, head.cg->encoder, relu_backward(c.e, de)).v;
    }
    const Tensor<S> dr = upsample_bilinear_backward(du, head_r_[h].h, head_r_[h].w);
    const auto tap = static_cast<std::size_t>(head.tap);
    const Tensor<S> dfeat = conv2d_backward(conv_out_[tap].back(), head.reduce, dr);
    if (dblock[tap].size() == 0) {
      dblock[tap] = dfeat;
    } else {
      dblock[tap].v += dfeat.v;
    }
  }
  Tensor<S> g;  // gradient w.r.t. the current block's output
  for (int b = nb - 1; b >= 0; --b) {
    const auto bi = static_cast<std::size_t>(b);
    if (g.size() == 0) {
      g = dblock[bi];
    } else if (dblock[bi].size() != 0) {
      g.v += dblock[bi].v;
    }
    if (g.size() == 0) continue;  // no tap at or after this block yet
    for (int j = static_cast<int>(blocks_[bi].size()) - 1; j >= 0; --j) {
      const auto ji = static_cast<std::size_t>(j);
      const Tensor<S> dz = relu_backward(conv_out_[bi][ji], g);
      g = conv2d_backward(conv_in_[bi][ji], blocks_[bi][ji], dz, true);
    }
    if (b > 0) g = maxpool2x2_backward(g, pool_arg_[bi], pool_in_shape_[bi]);
  }
  // g is now d(loss)/d(network input).
  if (cfg_.input_channels == 2) {
    in.sar = Tensor<S>(g.n, 1, g.h, g.w);
    Tensor<S> dg2(g.n, 1, g.h, g.w);
    for (int i = 0; i < g.n; ++i) {
      in.sar.sample(i) = g.sample(i).topRows(1);
      dg2.sample(i) = g.sample(i).bottomRows(1);
    }
    in.gis.v += dg2.v;
  } else {
    in.sar = g;
  }
  return in;
}

template <typename S>
std::uint64_t Model<S>::activation_signature() const {
  std::uint64_t h = 1469598103934665603ull;
  auto mix = [&](std::uint64_t v) { h = (h ^ v) * 1099511628211ull; };
  for (const auto& blk : conv_out_)
    for (const auto& t : blk)
      for (Eigen::Index i = 0; i < t.size(); ++i) mix(t.v[i] > S(0));
  for (const auto& arg : pool_arg_)
    for (auto a : arg) mix(static_cast<std::uint64_t>(a));
  for (const auto& c : head_cg_)
    for (Eigen::Index i = 0; i < c.e.size(); ++i) mix(c.e.v[i] > S(0));
  return h;
}

template <typename S>
Model<S> build_cgnet(NetConfig cfg, std::uint64_t seed) {
  cfg.conditional = true;
  cfg.input_channels = 1;
  Model<S> m(std::move(cfg));
  m.init(seed);
  return m;
}

template <typename S>
Model<S> build_baseline(NetConfig cfg, std::uint64_t seed) {
  cfg.conditional = false;
  cfg.input_channels = 2;
  Model<S> m(std::move(cfg));
  m.init(seed);
  return m;
}

template <typename To, typename From>
Model<To> convert_model(const Model<From>& m) {
  Model<To> out(m.config());
  const auto src = m.params();
  auto dst = out.params();
  for (std::size_t k = 0; k < src.size(); ++k) dst[k]->value = src[k]->value.template cast<To>();
  return out;
}

template class Model<float>;
template class Model<double>;
template Model<float> build_cgnet(NetConfig, std::uint64_t);
template Model<double> build_cgnet(NetConfig, std::uint64_t);
template Model<float> build_baseline(NetConfig, std::uint64_t);
template Model<double> build_baseline(NetConfig, std::uint64_t);
template Model<double> convert_model(const Model<float>&);
template Model<float> convert_model(const Model<double>&);

namespace {

constexpr char kMagic[4] = {'C', 'G', 'N', '1'};

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint32_t get_u32(const std::string& s, std::size_t pos) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(s[pos + i])) << (8 * i);
  return v;
}

}  // namespace

void save_checkpoint(const Model<float>& model, const nlohmann::json& meta, const std::filesystem::path& path) {
  nlohmann::json header = meta;
  header["config"] = model.config();
  nlohmann::json plist = nlohmann::json::array();
  for (const auto* p : model.params()) plist.push_back({{"name", p->name}, {"shape", p->shape}});
  header["params"] = plist;
  const std::string text = header.dump();
  std::string out(kMagic, 4);
  put_u32(out, static_cast<std::uint32_t>(text.size()));
  out += text;
  for (const auto* p : model.params()) {
    for (Eigen::Index i = 0; i < p->size(); ++i) put_u32(out, std::bit_cast<std::uint32_t>(p->value[i]));
  }
  write_binary(path, out);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const std::string bytes = read_binary(path);
  auto fail = [&](const std::string& what) { throw ParseError(path.string() + ": " + what); };
  if (bytes.size() < 8 || std::memcmp(bytes.data(), kMagic, 4) != 0) fail("not a CGN1 checkpoint");
  const std::uint32_t len = get_u32(bytes, 4);
  if (8 + static_cast<std::size_t>(len) > bytes.size()) fail("truncated header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.substr(8, len));
  } catch (const nlohmann::json::exception& e) {
    fail(std::string("bad header: ") + e.what());
  }
  Checkpoint ck{Model<float>(header.at("config").get<NetConfig>()), header};
  auto ps = ck.model.params();
  const auto& plist = header.at("params");
  if (plist.size() != ps.size()) fail("parameter list does not match the architecture");
  std::size_t pos = 8 + len;
  for (std::size_t k = 0; k < ps.size(); ++k) {
    if (plist[k].at("name").get<std::string>() != ps[k]->name ||
        plist[k].at("shape").get<std::array<int, 4>>() != ps[k]->shape) {
      fail("parameter " + ps[k]->name + " does not match the header");
    }
    const auto n = static_cast<std::size_t>(ps[k]->size());
    if (pos + 4 * n > bytes.size()) fail("truncated parameter data");
    for (std::size_t i = 0; i < n; ++i, pos += 4) {
      ps[k]->value[static_cast<Eigen::Index>(i)] = std::bit_cast<float>(get_u32(bytes, pos));
    }
  }
  if (pos != bytes.size()) fail("trailing bytes after parameter data");
  ck.meta.erase("config");
  ck.meta.erase("params");
  return ck;
}

}  // namespace cgseg
