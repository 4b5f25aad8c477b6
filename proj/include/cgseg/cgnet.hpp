#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include <nlohmann/json.hpp>

#include "cgseg/tensor.hpp"

namespace cgseg {

struct NetConfig {
  std::vector<int> block_channels{8, 16, 32, 64, 64};
  std::vector<int> convs_per_block{2, 2, 3, 3, 3};
  std::vector<int> taps{3, 4, 5};  // 1-based block indices
  int reduced_channels = 32;       // C_r
  int latent_channels = 32;        // C_e
  int input_channels = 1;
  bool conditional = true;  // false: heads without GIS normalization

  void validate() const;
  int n_blocks() const { return static_cast<int>(block_channels.size()); }
  bool operator==(const NetConfig&) const = default;
};

void to_json(nlohmann::json& j, const NetConfig& c);
void from_json(const nlohmann::json& j, NetConfig& c);

/// GIS-conditioned scale and shift: e = relu(conv3(m)), gamma = conv3(e),
/// beta = conv3(e), out = gamma * x + beta.
template <typename S>
struct CgModule {
  Conv<S> encoder, gamma, beta;
};

template <typename S>
struct Head {
  int tap = 0;  // 0-based block index
  Conv<S> reduce;
  std::optional<CgModule<S>> cg;
  Conv<S> out;
};

template <typename S>
struct CgForward {
  Tensor<S> e, gamma, beta;
};

/// Single-sigmoid segmentation network: a VGG-pattern backbone with three
/// tap heads summed into one logit map. Forward caches what backward needs;
/// one model serves one caller at a time.
template <typename S>
class Model {
 public:
  explicit Model(NetConfig cfg);

  const NetConfig& config() const { return cfg_; }
  std::vector<Param<S>*> params();
  std::vector<const Param<S>*> params() const;
  long parameter_count() const;

  /// Glorot-uniform kernels, zero biases.
  void init(std::uint64_t seed);
  void zero_grad();

  /// Probability map (n, 1, H, W). `gis` is the single-channel footprint
  /// mask; non-conditional models with two input channels take it through
  /// channel concatenation instead.
  Tensor<S> forward(const Tensor<S>& sar, const Tensor<S>& gis);
  const Tensor<S>& logits() const { return logit_; }

  struct InputGrads {
    Tensor<S> sar, gis;
  };
  /// Accumulates parameter gradients from d(loss)/d(logit).
  InputGrads backward(const Tensor<S>& dlogit);

  /// Hash of the ReLU sign pattern and pooling choices of the last forward.
  std::uint64_t activation_signature() const;

  std::vector<std::vector<Conv<S>>>& blocks() { return blocks_; }
  std::vector<Head<S>>& heads() { return heads_; }

 private:
  NetConfig cfg_;
  std::vector<std::vector<Conv<S>>> blocks_;
  std::vector<Head<S>> heads_;

  // Forward caches.
  Tensor<S> gis_;
  std::vector<std::vector<Tensor<S>>> conv_in_, conv_out_;
  std::vector<std::vector<std::int32_t>> pool_arg_;
  std::vector<std::array<int, 4>> pool_in_shape_;
  std::vector<Tensor<S>> head_r_, head_u_, head_x_;
  std::vector<CgForward<S>> head_cg_;
  Tensor<S> logit_;
};

template <typename S>
Model<S> build_cgnet(NetConfig cfg, std::uint64_t seed);
/// Same backbone and heads without GIS normalization; GIS enters as a second
/// input channel.
template <typename S>
Model<S> build_baseline(NetConfig cfg, std::uint64_t seed);

/// Converts parameter values between precisions (same architecture).
template <typename To, typename From>
Model<To> convert_model(const Model<From>& m);

/// Binary checkpoint: "CGN1", u32 LE header length, JSON header, then each
/// parameter as little-endian float32 in declaration order.
void save_checkpoint(const Model<float>& model, const nlohmann::json& meta, const std::filesystem::path& path);

struct Checkpoint {
  Model<float> model;
  nlohmann::json meta;
};
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace cgseg
