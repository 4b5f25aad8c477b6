#include "cgseg/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "cgseg/error.hpp"

namespace cgseg {

namespace {

std::string shape_str(const std::array<int, 4>& s) {
  return "(" + std::to_string(s[0]) + "," + std::to_string(s[1]) + "," + std::to_string(s[2]) + "," +
         std::to_string(s[3]) + ")";
}

// Rows of `col` are (channel, ky, kx); columns are output pixels.
template <typename S>
void im2col3(const S* x, int c, int h, int w, MatrixR<S>& col) {
  col.resize(static_cast<Eigen::Index>(c) * 9, static_cast<Eigen::Index>(h) * w);
  for (int ch = 0; ch < c; ++ch) {
    const S* plane = x + static_cast<Eigen::Index>(ch) * h * w;
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        S* dst = col.data() + ((ch * 3 + ky) * 3 + kx) * col.cols();
        for (int y = 0; y < h; ++y) {
          const int sy = y + ky - 1;
          S* row = dst + static_cast<Eigen::Index>(y) * w;
          if (sy < 0 || sy >= h) {
            std::fill(row, row + w, S(0));
            continue;
          }
          const S* src = plane + static_cast<Eigen::Index>(sy) * w;
          const int x0 = std::max(0, 1 - kx), x1 = std::min(w, w + 1 - kx);
          for (int xx = 0; xx < x0; ++xx) row[xx] = S(0);
          for (int xx = x0; xx < x1; ++xx) row[xx] = src[xx + kx - 1];
          for (int xx = x1; xx < w; ++xx) row[xx] = S(0);
        }
      }
    }
  }
}

template <typename S>
void col2im3(const MatrixR<S>& col, int c, int h, int w, S* dx) {
  for (int ch = 0; ch < c; ++ch) {
    S* plane = dx + static_cast<Eigen::Index>(ch) * h * w;
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        const S* src = col.data() + ((ch * 3 + ky) * 3 + kx) * col.cols();
        for (int y = 0; y < h; ++y) {
          const int sy = y + ky - 1;
          if (sy < 0 || sy >= h) continue;
          const S* row = src + static_cast<Eigen::Index>(y) * w;
          S* dst = plane + static_cast<Eigen::Index>(sy) * w;
          const int x0 = std::max(0, 1 - kx), x1 = std::min(w, w + 1 - kx);
          for (int xx = x0; xx < x1; ++xx) dst[xx + kx - 1] += row[xx];
        }
      }
    }
  }
}

template <typename S>
void check_conv_input(const Tensor<S>& x, const Conv<S>& conv) {
  if (x.c != conv.in()) {
    throw ShapeError(conv.weight.name + ": expected " + std::to_string(conv.in()) + " input channels, got " +
                     std::to_string(x.c));
  }
  if (conv.k() != 1 && conv.k() != 3) throw ShapeError(conv.weight.name + ": kernel size must be 1 or 3");
}

}  // namespace

template <typename S>
Tensor<S> conv2d(const Tensor<S>& x, const Conv<S>& conv) {
  check_conv_input(x, conv);
  const int k = conv.k();
  Tensor<S> y(x.n, conv.out(), x.h, x.w);
  const Eigen::Map<const MatrixR<S>> wm(conv.weight.value.data(), conv.out(), conv.in() * k * k);
  const auto bias = conv.bias.value.matrix();
  MatrixR<S> col;
  for (int i = 0; i < x.n; ++i) {
    auto out = y.sample(i);
    if (k == 1) {
      out.noalias() = wm * x.sample(i);
    } else {
      im2col3(x.v.data() + i * x.c * x.plane(), x.c, x.h, x.w, col);
      out.noalias() = wm * col;
    }
    out.colwise() += bias;
  }
  return y;
}

template <typename S>
Tensor<S> conv2d_backward(const Tensor<S>& x, Conv<S>& conv, const Tensor<S>& dy, bool need_dx) {
  check_conv_input(x, conv);
  const int k = conv.k();
  const Eigen::Map<const MatrixR<S>> wm(conv.weight.value.data(), conv.out(), conv.in() * k * k);
  Eigen::Map<MatrixR<S>> dw(conv.weight.grad.data(), conv.out(), conv.in() * k * k);
  Tensor<S> dx;
  if (need_dx) dx = Tensor<S>(x.n, x.c, x.h, x.w);
  MatrixR<S> col, dcol;
  for (int i = 0; i < x.n; ++i) {
    const auto g = dy.sample(i);
    conv.bias.grad.matrix() += g.rowwise().sum();
    if (k == 1) {
      dw.noalias() += g * x.sample(i).transpose();
      if (need_dx) dx.sample(i).noalias() = wm.transpose() * g;
    } else {
      im2col3(x.v.data() + i * x.c * x.plane(), x.c, x.h, x.w, col);
      dw.noalias() += g * col.transpose();
      if (need_dx) {
        dcol.noalias() = wm.transpose() * g;
        col2im3(dcol, x.c, x.h, x.w, dx.v.data() + i * x.c * x.plane());
      }
    }
  }
  return dx;
}

template <typename S>
Tensor<S> maxpool2x2(const Tensor<S>& x, std::vector<std::int32_t>& argmax) {
  const int oh = (x.h + 1) / 2, ow = (x.w + 1) / 2;
  Tensor<S> y(x.n, x.c, oh, ow);
  argmax.assign(static_cast<std::size_t>(y.size()), 0);
  Eigen::Index o = 0;
  for (int i = 0; i < x.n; ++i) {
    for (int ch = 0; ch < x.c; ++ch) {
      const Eigen::Index base = (static_cast<Eigen::Index>(i) * x.c + ch) * x.plane();
      for (int py = 0; py < oh; ++py) {
        for (int px = 0; px < ow; ++px, ++o) {
          S best = -std::numeric_limits<S>::infinity();
          Eigen::Index arg = -1;
          // Row-major window order; strict > keeps the first maximum.
          for (int dy = 0; dy < 2; ++dy) {
            for (int dx = 0; dx < 2; ++dx) {
              const int yy = 2 * py + dy, xx = 2 * px + dx;
              if (yy >= x.h || xx >= x.w) continue;
              const Eigen::Index idx = base + static_cast<Eigen::Index>(yy) * x.w + xx;
              if (arg < 0 || x.v[idx] > best) {
                best = x.v[idx];
                arg = idx;
              }
            }
          }
          y.v[o] = best;
          argmax[static_cast<std::size_t>(o)] = static_cast<std::int32_t>(arg);
        }
      }
    }
  }
  return y;
}

template <typename S>
Tensor<S> maxpool2x2_backward(const Tensor<S>& dy, const std::vector<std::int32_t>& argmax,
                              const std::array<int, 4>& in_shape) {
  Tensor<S> dx(in_shape[0], in_shape[1], in_shape[2], in_shape[3]);
  for (Eigen::Index o = 0; o < dy.size(); ++o) dx.v[argmax[static_cast<std::size_t>(o)]] += dy.v[o];
  return dx;
}

namespace {

struct Interp {
  std::vector<int> i0, i1;
  std::vector<double> t;  // weight of i1
};

Interp interp_axis(int in, int out) {
  Interp a;
  a.i0.resize(static_cast<std::size_t>(out));
  a.i1.resize(static_cast<std::size_t>(out));
  a.t.resize(static_cast<std::size_t>(out));
  const double scale = static_cast<double>(in) / out;
  for (int o = 0; o < out; ++o) {
    const double src = std::clamp((o + 0.5) * scale - 0.5, 0.0, static_cast<double>(in - 1));
    const int f = std::min(static_cast<int>(std::floor(src)), in - 1);
    a.i0[static_cast<std::size_t>(o)] = f;
    a.i1[static_cast<std::size_t>(o)] = std::min(f + 1, in - 1);
    a.t[static_cast<std::size_t>(o)] = src - f;
  }
  return a;
}

}  // namespace

template <typename S>
Tensor<S> upsample_bilinear(const Tensor<S>& x, int out_h, int out_w) {
  if (out_h < x.h || out_w < x.w) throw ShapeError("upsample target smaller than its input");
  const Interp ay = interp_axis(x.h, out_h), ax = interp_axis(x.w, out_w);
  Tensor<S> y(x.n, x.c, out_h, out_w);
  for (int i = 0; i < x.n; ++i) {
    for (int ch = 0; ch < x.c; ++ch) {
      const S* src = x.v.data() + (static_cast<Eigen::Index>(i) * x.c + ch) * x.plane();
      S* dst = y.v.data() + (static_cast<Eigen::Index>(i) * y.c + ch) * y.plane();
      for (int oy = 0; oy < out_h; ++oy) {
        const S ty = static_cast<S>(ay.t[static_cast<std::size_t>(oy)]);
        const S* r0 = src + static_cast<Eigen::Index>(ay.i0[static_cast<std::size_t>(oy)]) * x.w;
        const S* r1 = src + static_cast<Eigen::Index>(ay.i1[static_cast<std::size_t>(oy)]) * x.w;
        for (int ox = 0; ox < out_w; ++ox) {
          const auto j0 = ax.i0[static_cast<std::size_t>(ox)], j1 = ax.i1[static_cast<std::size_t>(ox)];
          const S tx = static_cast<S>(ax.t[static_cast<std::size_t>(ox)]);
          const S top = r0[j0] + tx * (r0[j1] - r0[j0]);
          const S bot = r1[j0] + tx * (r1[j1] - r1[j0]);
          dst[static_cast<Eigen::Index>(oy) * out_w + ox] = top + ty * (bot - top);
        }
      }
    }
  }
  return y;
}

template <typename S>
Tensor<S> upsample_bilinear_backward(const Tensor<S>& dy, int in_h, int in_w) {
  const Interp ay = interp_axis(in_h, dy.h), ax = interp_axis(in_w, dy.w);
  Tensor<S> dx(dy.n, dy.c, in_h, in_w);
  for (int i = 0; i < dy.n; ++i) {
    for (int ch = 0; ch < dy.c; ++ch) {
      const S* g = dy.v.data() + (static_cast<Eigen::Index>(i) * dy.c + ch) * dy.plane();
      S* d = dx.v.data() + (static_cast<Eigen::Index>(i) * dx.c + ch) * dx.plane();
      for (int oy = 0; oy < dy.h; ++oy) {
        const S ty = static_cast<S>(ay.t[static_cast<std::size_t>(oy)]);
        S* r0 = d + static_cast<Eigen::Index>(ay.i0[static_cast<std::size_t>(oy)]) * in_w;
        S* r1 = d + static_cast<Eigen::Index>(ay.i1[static_cast<std::size_t>(oy)]) * in_w;
        for (int ox = 0; ox < dy.w; ++ox) {
          const auto j0 = ax.i0[static_cast<std::size_t>(ox)], j1 = ax.i1[static_cast<std::size_t>(ox)];
          const S tx = static_cast<S>(ax.t[static_cast<std::size_t>(ox)]);
          const S v = g[static_cast<Eigen::Index>(oy) * dy.w + ox];
          const S top = v * (S(1) - ty), bot = v * ty;
          r0[j0] += top * (S(1) - tx);
          r0[j1] += top * tx;
          r1[j0] += bot * (S(1) - tx);
          r1[j1] += bot * tx;
        }
      }
    }
  }
  return dx;
}

template <typename S>
Tensor<S> relu(const Tensor<S>& x) {
  Tensor<S> y = x;
  y.v = x.v.max(S(0));
  return y;
}

template <typename S>
Tensor<S> relu_backward(const Tensor<S>& y, const Tensor<S>& dy) {
  Tensor<S> dx = dy;
  dx.v = (y.v > S(0)).select(dy.v, S(0));
  return dx;
}

template <typename S>
S sigmoid(S x) {
  if (x >= S(0)) return S(1) / (S(1) + std::exp(-x));
  const S e = std::exp(x);
  return e / (S(1) + e);
}

template <typename S>
Tensor<S> sigmoid(const Tensor<S>& x) {
  Tensor<S> y = x;
  y.v = x.v.unaryExpr([](S t) { return sigmoid<S>(t); });
  return y;
}

template <typename S>
S bce_loss(const Tensor<S>& p, const Tensor<S>& y) {
  if (!p.same_shape(y)) throw ShapeError("bce: shape mismatch " + shape_str(p.shape()) + " vs " + shape_str(y.shape()));
  const S lo = static_cast<S>(kBceClamp), hi = S(1) - static_cast<S>(kBceClamp);
  double sum = 0.0;
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    const double q = std::clamp(p.v[i], lo, hi);
    sum -= y.v[i] * std::log(q) + (1.0 - y.v[i]) * std::log(1.0 - q);
  }
  return static_cast<S>(sum / static_cast<double>(p.size()));
}

template <typename S>
Tensor<S> bce_grad(const Tensor<S>& p, const Tensor<S>& y) {
  if (!p.same_shape(y)) throw ShapeError("bce: shape mismatch " + shape_str(p.shape()) + " vs " + shape_str(y.shape()));
  const S lo = static_cast<S>(kBceClamp), hi = S(1) - static_cast<S>(kBceClamp);
  const S inv_n = S(1) / static_cast<S>(p.size());
  Tensor<S> g = p;
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    const S q = p.v[i];
    g.v[i] = (q < lo || q > hi) ? S(0) : inv_n * (q - y.v[i]) / (q * (S(1) - q));
  }
  return g;
}

template <typename S>
Tensor<S> concat_channels(const Tensor<S>& a, const Tensor<S>& b) {
  if (a.n != b.n || a.h != b.h || a.w != b.w) throw ShapeError("concat: spatial or batch mismatch");
  Tensor<S> out(a.n, a.c + b.c, a.h, a.w);
  for (int i = 0; i < a.n; ++i) {
    out.sample(i).topRows(a.c) = a.sample(i);
    out.sample(i).bottomRows(b.c) = b.sample(i);
  }
  return out;
}

double glorot_limit(const std::array<int, 4>& shape) {
  const double rf = static_cast<double>(shape[2]) * shape[3];
  return std::sqrt(6.0 / (shape[1] * rf + shape[0] * rf));
}

template <typename S>
void glorot_uniform(Param<S>& p, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const double a = glorot_limit(p.shape);
  std::uniform_real_distribution<double> u(-a, a);
  for (Eigen::Index i = 0; i < p.size(); ++i) p.value[i] = static_cast<S>(u(rng));
}

template <typename S>
void Nadam<S>::step(const std::vector<Param<S>*>& params, double lr) {
  if (m_.empty()) {
    for (const auto* p : params) {
      m_.push_back(ArrayX<double>::Zero(p->size()));
      v_.push_back(ArrayX<double>::Zero(p->size()));
    }
  }
  if (m_.size() != params.size()) throw Error("optimizer state does not match the parameter list");
  for (const auto* p : params) {
    if (!p->grad.allFinite()) throw Error("non-finite gradient in parameter " + p->name);
  }
  ++t_;
  const double t = static_cast<double>(t_);
  const double c1 = 1.0 - std::pow(beta1, t + 1.0), c1_prev = 1.0 - std::pow(beta1, t);
  const double c2 = 1.0 - std::pow(beta2, t);
  for (std::size_t k = 0; k < params.size(); ++k) {
    Param<S>& p = *params[k];
    const ArrayX<double> g = p.grad.template cast<double>();
    m_[k] = beta1 * m_[k] + (1.0 - beta1) * g;
    v_[k] = beta2 * v_[k] + (1.0 - beta2) * g.square();
    const ArrayX<double> m_bar = beta1 * m_[k] / c1 + (1.0 - beta1) * g / c1_prev;
    const ArrayX<double> v_hat = v_[k] / c2;
    p.value -= (lr * m_bar / (v_hat.sqrt() + eps)).template cast<S>();
  }
}

GradCheckReport grad_check(const std::function<double()>& loss, const std::vector<GradCheckCoord>& coords, double h,
                           const std::function<std::uint64_t()>& signature) {
  GradCheckReport rep;
  const std::uint64_t base_sig = signature ? signature() : 0;
  for (const auto& c : coords) {
    const double x0 = *c.value;
    *c.value = x0 + h;
    const double fp = loss();
    const bool kink_p = signature && signature() != base_sig;
    *c.value = x0 - h;
    const double fm = loss();
    const bool kink_m = signature && signature() != base_sig;
    *c.value = x0;
    if (kink_p || kink_m) {
      ++rep.skipped;
      continue;
    }
    const double numeric = (fp - fm) / (2.0 * h);
    const double err = std::abs(c.analytic - numeric) / std::max({std::abs(c.analytic), std::abs(numeric), 1e-8});
    ++rep.checked;
    if (rep.checked == 1 || err > rep.max_rel_error) {
      rep.max_rel_error = err;
      rep.worst = c.label;
    }
  }
  return rep;
}

#define CGSEG_INSTANTIATE(S)                                                                                       \
  template Tensor<S> conv2d(const Tensor<S>&, const Conv<S>&);                                                     \
  template Tensor<S> conv2d_backward(const Tensor<S>&, Conv<S>&, const Tensor<S>&, bool);                          \
  template Tensor<S> maxpool2x2(const Tensor<S>&, std::vector<std::int32_t>&);                                     \
  template Tensor<S> maxpool2x2_backward(const Tensor<S>&, const std::vector<std::int32_t>&,                       \
                                         const std::array<int, 4>&);                                               \
  template Tensor<S> upsample_bilinear(const Tensor<S>&, int, int);                                                \
  template Tensor<S> upsample_bilinear_backward(const Tensor<S>&, int, int);                                       \
  template Tensor<S> relu(const Tensor<S>&);                                                                       \
  template Tensor<S> relu_backward(const Tensor<S>&, const Tensor<S>&);                                            \
  template S sigmoid(S);                                                                                           \
  template Tensor<S> sigmoid(const Tensor<S>&);                                                                    \
  template S bce_loss(const Tensor<S>&, const Tensor<S>&);                                                         \
  template Tensor<S> bce_grad(const Tensor<S>&, const Tensor<S>&);                                                 \
  template Tensor<S> concat_channels(const Tensor<S>&, const Tensor<S>&);                                          \
  template void glorot_uniform(Param<S>&, std::uint64_t);                                                          \
  template class Nadam<S>;

CGSEG_INSTANTIATE(float)
CGSEG_INSTANTIATE(double)

#undef CGSEG_INSTANTIATE

}  // namespace cgseg
