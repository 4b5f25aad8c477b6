#pragma once

#include <Eigen/Core>
#include <array>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace cgseg {

template <typename S>
using ArrayX = Eigen::Array<S, Eigen::Dynamic, 1>;
template <typename S>
using MatrixR = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Dense NCHW tensor.
template <typename S>
struct Tensor {
  int n = 0, c = 0, h = 0, w = 0;
  ArrayX<S> v;

  Tensor() = default;
  Tensor(int n_, int c_, int h_, int w_, S fill = S(0)) : n(n_), c(c_), h(h_), w(w_) {
    v = ArrayX<S>::Constant(static_cast<Eigen::Index>(n_) * c_ * h_ * w_, fill);
  }

  Eigen::Index size() const { return v.size(); }
  Eigen::Index plane() const { return static_cast<Eigen::Index>(h) * w; }
  std::array<int, 4> shape() const { return {n, c, h, w}; }
  bool same_shape(const Tensor& o) const { return shape() == o.shape(); }

  S& at(int i, int ch, int y, int x) { return v[((static_cast<Eigen::Index>(i) * c + ch) * h + y) * w + x]; }
  S at(int i, int ch, int y, int x) const { return v[((static_cast<Eigen::Index>(i) * c + ch) * h + y) * w + x]; }

  /// Sample `i` as a (channels x pixels) matrix.
  Eigen::Map<MatrixR<S>> sample(int i) { return {v.data() + i * c * plane(), c, plane()}; }
  Eigen::Map<const MatrixR<S>> sample(int i) const { return {v.data() + i * c * plane(), c, plane()}; }

  template <typename T>
  Tensor<T> cast() const {
    Tensor<T> out;
    out.n = n;
    out.c = c;
    out.h = h;
    out.w = w;
    out.v = v.template cast<T>();
    return out;
  }
};

/// Trainable array with its gradient buffer. Convolution kernels have shape
/// (out, in, k, k); biases (out, 1, 1, 1).
template <typename S>
struct Param {
  std::string name;
  std::array<int, 4> shape{};
  ArrayX<S> value;
  ArrayX<S> grad;

  Param() = default;
  Param(std::string name_, std::array<int, 4> shape_) : name(std::move(name_)), shape(shape_) {
    const Eigen::Index n = static_cast<Eigen::Index>(shape[0]) * shape[1] * shape[2] * shape[3];
    value = ArrayX<S>::Zero(n);
    grad = ArrayX<S>::Zero(n);
  }
  Eigen::Index size() const { return value.size(); }
};

/// A convolution layer: kernel plus bias.
template <typename S>
struct Conv {
  Param<S> weight;
  Param<S> bias;

  Conv() = default;
  Conv(const std::string& name, int in, int out, int k)
      : weight(name + ".weight", {out, in, k, k}), bias(name + ".bias", {out, 1, 1, 1}) {}
  int in() const { return weight.shape[1]; }
  int out() const { return weight.shape[0]; }
  int k() const { return weight.shape[2]; }
};

// Layer contracts. Backward functions accumulate parameter gradients and
// return the input gradient.

/// Stride-1 cross-correlation with zero "same" padding, k in {1, 3}.
template <typename S>
Tensor<S> conv2d(const Tensor<S>& x, const Conv<S>& conv);
template <typename S>
Tensor<S> conv2d_backward(const Tensor<S>& x, Conv<S>& conv, const Tensor<S>& dy, bool need_dx = true);

/// 2x2 max pooling with stride 2. Odd sizes are padded right/bottom with -inf.
/// `argmax` receives the flat input index each output was taken from.
template <typename S>
Tensor<S> maxpool2x2(const Tensor<S>& x, std::vector<std::int32_t>& argmax);
template <typename S>
Tensor<S> maxpool2x2_backward(const Tensor<S>& dy, const std::vector<std::int32_t>& argmax,
                              const std::array<int, 4>& in_shape);

/// Bilinear resize with half-pixel centres (align corners off).
template <typename S>
Tensor<S> upsample_bilinear(const Tensor<S>& x, int out_h, int out_w);
template <typename S>
Tensor<S> upsample_bilinear_backward(const Tensor<S>& dy, int in_h, int in_w);

template <typename S>
Tensor<S> relu(const Tensor<S>& x);
/// Gradient through ReLU given its output `y`; relu'(0) = 0.
template <typename S>
Tensor<S> relu_backward(const Tensor<S>& y, const Tensor<S>& dy);

template <typename S>
S sigmoid(S x);
template <typename S>
Tensor<S> sigmoid(const Tensor<S>& x);

inline constexpr double kBceClamp = 1e-7;

/// Mean binary cross-entropy over all elements, probabilities clamped.
template <typename S>
S bce_loss(const Tensor<S>& p, const Tensor<S>& y);
/// d(bce)/dp; zero where the clamp is active.
template <typename S>
Tensor<S> bce_grad(const Tensor<S>& p, const Tensor<S>& y);

/// Channel concatenation of two tensors with equal n, h, w.
template <typename S>
Tensor<S> concat_channels(const Tensor<S>& a, const Tensor<S>& b);

/// Uniform on [-a, a], a = sqrt(6 / (fan_in + fan_out)), fan = channels * kh * kw.
double glorot_limit(const std::array<int, 4>& shape);
template <typename S>
void glorot_uniform(Param<S>& p, std::uint64_t seed);

/// Nesterov-accelerated Adam.
template <typename S>
class Nadam {
 public:
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

  /// Throws Error naming the parameter if a gradient is not finite.
  void step(const std::vector<Param<S>*>& params, double lr);
  long t() const { return t_; }

 private:
  long t_ = 0;
  std::vector<ArrayX<double>> m_, v_;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  int checked = 0;
  int skipped = 0;   // coordinates whose perturbation crossed a kink
  std::string worst;
};

struct GradCheckCoord {
  double* value;      // coordinate to perturb
  double analytic;    // analytic derivative at the current point
  std::string label;
};

/// Central differences with step `h`. `loss` re-evaluates the objective;
/// `signature`, when given, identifies the piecewise-linear region, and a
/// coordinate is skipped when its +h and -h evaluations land in a different
/// region than the base point.
GradCheckReport grad_check(const std::function<double()>& loss, const std::vector<GradCheckCoord>& coords,
                           double h = 1e-4, const std::function<std::uint64_t()>& signature = {});

}  // namespace cgseg
