#pragma once

// Differentiable primitives. Every op records its output on the tape of its
// first input together with a closure that maps the output gradient back to
// the inputs.

#include <Eigen/Core>
#include <cmath>
#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "relconv/autograd.hpp"
#include "relconv/error.hpp"
#include "relconv/parallel.hpp"
#include "relconv/sparse.hpp"
#include "relconv/tensor.hpp"

namespace relconv::ops {

namespace detail {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

inline void require_rank(const Shape& s, std::size_t rank, const char* op) {
  if (s.size() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " + shape_string(s));
  }
}

inline void require(bool ok, const char* op, const Shape& a, const Shape& b) {
  if (!ok) throw ShapeError(std::string(op) + ": incompatible shapes " + shape_string(a) + " and " + shape_string(b));
}

}  // namespace detail

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  detail::require(a.shape() == b.shape(), "add", a.shape(), b.shape());
  Tensor<T> out = a.value();
  out += b.value();
  const bool rg = a.requires_grad() || b.requires_grad();
  return a.tape().record(std::move(out), rg, [a, b](Tape<T>& tape, const Tensor<T>& g) {
    tape.accumulate(a, g);
    tape.accumulate(b, g);
  });
}

template <typename T>
Var<T> scale(Var<T> a, T factor) {
  Tensor<T> out = a.value();
  for (T& v : out.data()) v *= factor;
  return a.tape().record(std::move(out), a.requires_grad(), [a, factor](Tape<T>& tape, const Tensor<T>& g) {
    Tensor<T> ga = g;
    for (T& v : ga.data()) v *= factor;
    tape.accumulate(a, ga);
  });
}

/// (m, k) x (k, n) -> (m, n)
template <typename T>
Var<T> matmul(Var<T> a, Var<T> b) {
  detail::require_rank(a.shape(), 2, "matmul");
  detail::require_rank(b.shape(), 2, "matmul");
  detail::require(a.shape()[1] == b.shape()[0], "matmul", a.shape(), b.shape());
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  Tensor<T> out({m, n});
  detail::MatMap<T>(out.ptr(), m, n).noalias() =
      detail::ConstMatMap<T>(a.value().ptr(), m, k) * detail::ConstMatMap<T>(b.value().ptr(), k, n);
  const bool rg = a.requires_grad() || b.requires_grad();
  return a.tape().record(std::move(out), rg, [a, b, m, k, n](Tape<T>& tape, const Tensor<T>& g) {
    detail::ConstMatMap<T> gm(g.ptr(), m, n);
    if (a.requires_grad()) {
      Tensor<T> ga({m, k});
      detail::MatMap<T>(ga.ptr(), m, k).noalias() = gm * detail::ConstMatMap<T>(b.value().ptr(), k, n).transpose();
      tape.accumulate(a, ga);
    }
    if (b.requires_grad()) {
      Tensor<T> gb({k, n});
      detail::MatMap<T>(gb.ptr(), k, n).noalias() = detail::ConstMatMap<T>(a.value().ptr(), m, k).transpose() * gm;
      tape.accumulate(b, gb);
    }
  });
}

/// x (N, in), weight (out, in), optional bias (out) -> x * weight^T + bias
template <typename T>
Var<T> linear(Var<T> x, Var<T> weight, const Var<T>* bias = nullptr) {
  detail::require_rank(x.shape(), 2, "linear");
  detail::require_rank(weight.shape(), 2, "linear");
  detail::require(x.shape()[1] == weight.shape()[1], "linear", x.shape(), weight.shape());
  const std::size_t n = x.shape()[0], in = x.shape()[1], out_dim = weight.shape()[0];
  if (bias) detail::require(bias->shape() == Shape{out_dim}, "linear bias", bias->shape(), weight.shape());
  Tensor<T> out({n, out_dim});
  detail::MatMap<T> om(out.ptr(), n, out_dim);
  om.noalias() = detail::ConstMatMap<T>(x.value().ptr(), n, in) *
                 detail::ConstMatMap<T>(weight.value().ptr(), out_dim, in).transpose();
  if (bias) {
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t o = 0; o < out_dim; ++o) om(i, o) += bias->value()[o];
  }
  const bool has_bias = bias != nullptr;
  const Var<T> b = has_bias ? *bias : Var<T>{};
  const bool rg = x.requires_grad() || weight.requires_grad() || (has_bias && b.requires_grad());
  return x.tape().record(std::move(out), rg,
                         [x, weight, b, has_bias, n, in, out_dim](Tape<T>& tape, const Tensor<T>& g) {
    detail::ConstMatMap<T> gm(g.ptr(), n, out_dim);
    if (x.requires_grad()) {
      Tensor<T> gx({n, in});
      detail::MatMap<T>(gx.ptr(), n, in).noalias() =
          gm * detail::ConstMatMap<T>(weight.value().ptr(), out_dim, in);
      tape.accumulate(x, gx);
    }
    if (weight.requires_grad()) {
      Tensor<T> gw({out_dim, in});
      detail::MatMap<T>(gw.ptr(), out_dim, in).noalias() =
          gm.transpose() * detail::ConstMatMap<T>(x.value().ptr(), n, in);
      tape.accumulate(weight, gw);
    }
    if (has_bias && b.requires_grad()) {
      Tensor<T> gb({out_dim});
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t o = 0; o < out_dim; ++o) gb[o] += gm(i, o);
      tape.accumulate(b, gb);
    }
  });
}

template <typename T>
Var<T> linear(Var<T> x, Var<T> weight, Var<T> bias) {
  return linear(x, weight, &bias);
}

/// x (N, C) plus bias (C) broadcast over rows.
template <typename T>
Var<T> add_bias(Var<T> x, Var<T> bias) {
  detail::require_rank(x.shape(), 2, "add_bias");
  detail::require(bias.shape() == Shape{x.shape()[1]}, "add_bias", x.shape(), bias.shape());
  const std::size_t n = x.shape()[0], c = x.shape()[1];
  Tensor<T> out = x.value();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] += bias.value()[j];
  const bool rg = x.requires_grad() || bias.requires_grad();
  return x.tape().record(std::move(out), rg, [x, bias, n, c](Tape<T>& tape, const Tensor<T>& g) {
    tape.accumulate(x, g);
    if (!bias.requires_grad()) return;
    Tensor<T> gb({c});
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < c; ++j) gb[j] += g[i * c + j];
    tape.accumulate(bias, gb);
  });
}

template <typename T>
Var<T> relu(Var<T> x) {
  Tensor<T> out = x.value();
  for (T& v : out.data()) v = v > T{0} ? v : T{0};
  return x.tape().record(std::move(out), x.requires_grad(), [x](Tape<T>& tape, const Tensor<T>& g) {
    Tensor<T> gx = g;
    const auto& xv = x.value();
    for (std::size_t i = 0; i < gx.size(); ++i)
      if (!(xv[i] > T{0})) gx[i] = T{0};
    tape.accumulate(x, gx);
  });
}

template <typename T>
T sigmoid_scalar(T v) {
  if (v >= T{0}) return T{1} / (T{1} + std::exp(-v));
  const T e = std::exp(v);
  return e / (T{1} + e);
}

template <typename T>
Var<T> sigmoid(Var<T> x) {
  Tensor<T> out = x.value();
  for (T& v : out.data()) v = sigmoid_scalar(v);
  Tensor<T> saved = out;
  return x.tape().record(std::move(out), x.requires_grad(),
                         [x, s = std::move(saved)](Tape<T>& tape, const Tensor<T>& g) {
    Tensor<T> gx = g;
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] *= s[i] * (T{1} - s[i]);
    tape.accumulate(x, gx);
  });
}

/// Mean over all elements; returns a rank-0 tensor.
template <typename T>
Var<T> mean(Var<T> x) {
  const auto& xv = x.value();
  if (xv.size() == 0) throw ShapeError("mean of empty tensor");
  T acc{0};
  for (T v : xv.data()) acc += v;
  const T n = static_cast<T>(xv.size());
  return x.tape().record(Tensor<T>::scalar(acc / n), x.requires_grad(), [x, n](Tape<T>& tape, const Tensor<T>& g) {
    tape.accumulate(x, Tensor<T>(x.shape(), g.item() / n));
  });
}

/// Sum of x * weights over all elements; weights is a constant of the same shape.
template <typename T>
Var<T> inner(Var<T> x, const Tensor<T>& weights) {
  detail::require(x.shape() == weights.shape(), "inner", x.shape(), weights.shape());
  T acc{0};
  for (std::size_t i = 0; i < weights.size(); ++i) acc += x.value()[i] * weights[i];
  return x.tape().record(Tensor<T>::scalar(acc), x.requires_grad(), [x, weights](Tape<T>& tape, const Tensor<T>& g) {
    Tensor<T> gx = weights;
    for (T& v : gx.data()) v *= g.item();
    tape.accumulate(x, gx);
  });
}

struct Conv2dAttrs {
  std::size_t stride = 1;
  std::size_t padding = 0;
};

namespace detail {

struct ConvGeometry {
  std::size_t n, c, h, w, o, kh, kw, stride, pad, ho, wo;
  std::size_t k() const { return c * kh * kw; }
  std::size_t p() const { return ho * wo; }
};

template <typename T>
void im2col(const T* img, const ConvGeometry& g, T* cols) {
  const std::size_t p = g.p();
  for (std::size_t ch = 0; ch < g.c; ++ch) {
    for (std::size_t ki = 0; ki < g.kh; ++ki) {
      for (std::size_t kj = 0; kj < g.kw; ++kj) {
        T* row = cols + ((ch * g.kh + ki) * g.kw + kj) * p;
        for (std::size_t oy = 0; oy < g.ho; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + ki) - static_cast<long>(g.pad);
          for (std::size_t ox = 0; ox < g.wo; ++ox) {
            const long ix = static_cast<long>(ox * g.stride + kj) - static_cast<long>(g.pad);
            const bool inside = iy >= 0 && ix >= 0 && iy < static_cast<long>(g.h) && ix < static_cast<long>(g.w);
            row[oy * g.wo + ox] = inside ? img[(ch * g.h + iy) * g.w + ix] : T{0};
          }
        }
      }
    }
  }
}

template <typename T>
void col2im(const T* cols, const ConvGeometry& g, T* img) {
  const std::size_t p = g.p();
  for (std::size_t ch = 0; ch < g.c; ++ch) {
    for (std::size_t ki = 0; ki < g.kh; ++ki) {
      for (std::size_t kj = 0; kj < g.kw; ++kj) {
        const T* row = cols + ((ch * g.kh + ki) * g.kw + kj) * p;
        for (std::size_t oy = 0; oy < g.ho; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + ki) - static_cast<long>(g.pad);
          if (iy < 0 || iy >= static_cast<long>(g.h)) continue;
          for (std::size_t ox = 0; ox < g.wo; ++ox) {
            const long ix = static_cast<long>(ox * g.stride + kj) - static_cast<long>(g.pad);
            if (ix < 0 || ix >= static_cast<long>(g.w)) continue;
            img[(ch * g.h + iy) * g.w + ix] += row[oy * g.wo + ox];
          }
        }
      }
    }
  }
}

}  // namespace detail

/// Cross-correlation with zero padding. x (N, C, H, W), weight (O, C, kh, kw),
/// optional bias (O) -> (N, O, Ho, Wo).
template <typename T>
Var<T> conv2d(Var<T> x, Var<T> weight, const Var<T>* bias, Conv2dAttrs attrs) {
  detail::require_rank(x.shape(), 4, "conv2d");
  detail::require_rank(weight.shape(), 4, "conv2d");
  const Shape& xs = x.shape();
  const Shape& ws = weight.shape();
  detail::require(xs[1] == ws[1], "conv2d", xs, ws);
  if (attrs.stride == 0) throw ShapeError("conv2d: stride must be positive");
  if (xs[2] + 2 * attrs.padding < ws[2] || xs[3] + 2 * attrs.padding < ws[3]) {
    detail::require(false, "conv2d (kernel larger than padded input)", xs, ws);
  }
  detail::ConvGeometry geo{xs[0], xs[1], xs[2], xs[3], ws[0], ws[2], ws[3], attrs.stride, attrs.padding, 0, 0};
  geo.ho = (geo.h + 2 * geo.pad - geo.kh) / geo.stride + 1;
  geo.wo = (geo.w + 2 * geo.pad - geo.kw) / geo.stride + 1;
  if (bias) detail::require(bias->shape() == Shape{geo.o}, "conv2d bias", bias->shape(), ws);

  const std::size_t k = geo.k(), p = geo.p();
  auto cols = std::make_shared<std::vector<T>>(geo.n * k * p);
  Tensor<T> out({geo.n, geo.o, geo.ho, geo.wo});
  const T* xin = x.value().ptr();
  const T* wptr = weight.value().ptr();
  const T* bptr = bias ? bias->value().ptr() : nullptr;
  T* optr = out.ptr();
  parallel_for(geo.n, [&](std::size_t i) {
    T* c = cols->data() + i * k * p;
    detail::im2col(xin + i * geo.c * geo.h * geo.w, geo, c);
    detail::MatMap<T> om(optr + i * geo.o * p, geo.o, p);
    om.noalias() = detail::ConstMatMap<T>(wptr, geo.o, k) * detail::ConstMatMap<T>(c, k, p);
    if (bptr)
      for (std::size_t o = 0; o < geo.o; ++o) om.row(o).array() += bptr[o];
  });

  const bool has_bias = bias != nullptr;
  const Var<T> b = has_bias ? *bias : Var<T>{};
  const bool rg = x.requires_grad() || weight.requires_grad() || (has_bias && b.requires_grad());
  return x.tape().record(std::move(out), rg, [x, weight, b, has_bias, geo, cols](Tape<T>& tape, const Tensor<T>& g) {
    const std::size_t k = geo.k(), p = geo.p();
    const T* wptr = weight.value().ptr();
    const bool need_x = x.requires_grad();
    const bool need_w = weight.requires_grad();
    Tensor<T> gx;
    if (need_x) gx = Tensor<T>(x.shape());
    std::vector<T> gw_parts(need_w ? geo.n * geo.o * k : 0);
    parallel_for(geo.n, [&](std::size_t i) {
      detail::ConstMatMap<T> gm(g.ptr() + i * geo.o * p, geo.o, p);
      if (need_w) {
        detail::MatMap<T>(gw_parts.data() + i * geo.o * k, geo.o, k).noalias() =
            gm * detail::ConstMatMap<T>(cols->data() + i * k * p, k, p).transpose();
      }
      if (need_x) {
        std::vector<T> dcols(k * p);
        detail::MatMap<T>(dcols.data(), k, p).noalias() =
            detail::ConstMatMap<T>(wptr, geo.o, k).transpose() * gm;
        detail::col2im(dcols.data(), geo, gx.ptr() + i * geo.c * geo.h * geo.w);
      }
    });
    if (need_x) tape.accumulate(x, gx);
    if (need_w) {
      Tensor<T> gw(weight.shape());
      for (std::size_t i = 0; i < geo.n; ++i) {
        const T* part = gw_parts.data() + i * geo.o * k;
        for (std::size_t j = 0; j < geo.o * k; ++j) gw[j] += part[j];
      }
      tape.accumulate(weight, gw);
    }
    if (has_bias && b.requires_grad()) {
      Tensor<T> gb({geo.o});
      for (std::size_t i = 0; i < geo.n; ++i)
        for (std::size_t o = 0; o < geo.o; ++o) {
          const T* row = g.ptr() + (i * geo.o + o) * p;
          T acc{0};
          for (std::size_t j = 0; j < p; ++j) acc += row[j];
          gb[o] += acc;
        }
      tape.accumulate(b, gb);
    }
  });
}

template <typename T>
Var<T> conv2d(Var<T> x, Var<T> weight, Var<T> bias, Conv2dAttrs attrs) {
  return conv2d(x, weight, &bias, attrs);
}

template <typename T>
Var<T> conv2d(Var<T> x, Var<T> weight, Conv2dAttrs attrs) {
  return conv2d(x, weight, static_cast<const Var<T>*>(nullptr), attrs);
}

/// Running statistics owned by a batch-norm layer.
template <typename T>
struct BatchNormBuffers {
  Tensor<T> running_mean;
  Tensor<T> running_var;

  explicit BatchNormBuffers(std::size_t channels = 0)
      : running_mean({channels}, T{0}), running_var({channels}, T{1}) {}
};

struct BatchNormAttrs {
  bool train = true;
  double momentum = 0.1;
  double eps = 1e-5;
};

/// Per-channel batch normalization over (N, H, W) of an (N, C, H, W) tensor.
/// Train mode normalizes with biased batch statistics and folds the unbiased
/// variance into the running buffers; eval mode uses the running buffers.
template <typename T>
Var<T> batchnorm2d(Var<T> x, Var<T> gamma, Var<T> beta, BatchNormBuffers<T>& buffers, BatchNormAttrs attrs) {
  detail::require_rank(x.shape(), 4, "batchnorm2d");
  const std::size_t n = x.shape()[0], c = x.shape()[1], hw = x.shape()[2] * x.shape()[3];
  detail::require(gamma.shape() == Shape{c} && beta.shape() == Shape{c}, "batchnorm2d", x.shape(), gamma.shape());
  detail::require(buffers.running_mean.shape() == Shape{c}, "batchnorm2d buffers", x.shape(),
                  buffers.running_mean.shape());
  const std::size_t m = n * hw;
  if (m == 0) throw ShapeError("batchnorm2d on empty batch");
  const T* xv = x.value().ptr();

  Tensor<T> xhat(x.shape());
  std::vector<T> inv_std(c);
  for (std::size_t ch = 0; ch < c; ++ch) {
    T mu, var;
    if (attrs.train) {
      T acc{0};
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < hw; ++j) acc += xv[(i * c + ch) * hw + j];
      mu = acc / static_cast<T>(m);
      T sq{0};
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < hw; ++j) {
          const T d = xv[(i * c + ch) * hw + j] - mu;
          sq += d * d;
        }
      var = sq / static_cast<T>(m);
      const T unbiased = m > 1 ? sq / static_cast<T>(m - 1) : var;
      const T mom = static_cast<T>(attrs.momentum);
      buffers.running_mean[ch] = (T{1} - mom) * buffers.running_mean[ch] + mom * mu;
      buffers.running_var[ch] = (T{1} - mom) * buffers.running_var[ch] + mom * unbiased;
    } else {
      mu = buffers.running_mean[ch];
      var = buffers.running_var[ch];
    }
    inv_std[ch] = T{1} / std::sqrt(var + static_cast<T>(attrs.eps));
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < hw; ++j) {
        const std::size_t idx = (i * c + ch) * hw + j;
        xhat[idx] = (xv[idx] - mu) * inv_std[ch];
      }
  }
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t j = 0; j < hw; ++j) {
        const std::size_t idx = (i * c + ch) * hw + j;
        out[idx] = gamma.value()[ch] * xhat[idx] + beta.value()[ch];
      }

  const bool rg = x.requires_grad() || gamma.requires_grad() || beta.requires_grad();
  const bool train = attrs.train;
  return x.tape().record(std::move(out), rg,
                         [x, gamma, beta, xhat = std::move(xhat), inv_std = std::move(inv_std), n, c, hw, m,
                          train](Tape<T>& tape, const Tensor<T>& g) {
    Tensor<T> ggamma({c}), gbeta({c});
    Tensor<T> gx;
    if (x.requires_grad()) gx = Tensor<T>(x.shape());
    for (std::size_t ch = 0; ch < c; ++ch) {
      T sum_g{0}, sum_gx{0};
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < hw; ++j) {
          const std::size_t idx = (i * c + ch) * hw + j;
          sum_g += g[idx];
          sum_gx += g[idx] * xhat[idx];
        }
      ggamma[ch] = sum_gx;
      gbeta[ch] = sum_g;
      if (!x.requires_grad()) continue;
      const T gam = gamma.value()[ch];
      const T mt = static_cast<T>(m);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < hw; ++j) {
          const std::size_t idx = (i * c + ch) * hw + j;
          if (train) {
            gx[idx] = gam * inv_std[ch] / mt * (mt * g[idx] - sum_g - xhat[idx] * sum_gx);
          } else {
            gx[idx] = gam * inv_std[ch] * g[idx];
          }
        }
    }
    if (x.requires_grad()) tape.accumulate(x, gx);
    tape.accumulate(gamma, ggamma);
    tape.accumulate(beta, gbeta);
  });
}

/// (N, C, H, W) -> (N, C) by averaging each feature map.
template <typename T>
Var<T> global_avg_pool(Var<T> x) {
  detail::require_rank(x.shape(), 4, "global_avg_pool");
  const std::size_t n = x.shape()[0], c = x.shape()[1], hw = x.shape()[2] * x.shape()[3];
  Tensor<T> out({n, c});
  for (std::size_t i = 0; i < n * c; ++i) {
    T acc{0};
    for (std::size_t j = 0; j < hw; ++j) acc += x.value()[i * hw + j];
    out[i] = acc / static_cast<T>(hw);
  }
  return x.tape().record(std::move(out), x.requires_grad(), [x, n, c, hw](Tape<T>& tape, const Tensor<T>& g) {
    Tensor<T> gx(x.shape());
    for (std::size_t i = 0; i < n * c; ++i) {
      const T v = g[i] / static_cast<T>(hw);
      for (std::size_t j = 0; j < hw; ++j) gx[i * hw + j] = v;
    }
    tape.accumulate(x, gx);
  });
}

/// Sparse-dense product: a (R, N) constant times x (N, ...) -> (R, ...).
template <typename T>
Var<T> spmm(const SparseMatrix& a, Var<T> x) {
  if (x.shape().empty() || x.shape()[0] != a.cols()) {
    throw ShapeError("spmm: matrix " + std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                     " incompatible with " + shape_string(x.shape()));
  }
  const std::size_t width = x.value().size() / a.cols();
  Shape out_shape = x.shape();
  out_shape[0] = a.rows();
  Tensor<T> out(out_shape);
  for (const Triplet& t : a.triplets()) {
    const T w = static_cast<T>(t.value);
    const T* src = x.value().ptr() + t.col * width;
    T* dst = out.ptr() + t.row * width;
    for (std::size_t d = 0; d < width; ++d) dst[d] += w * src[d];
  }
  return x.tape().record(std::move(out), x.requires_grad(), [a, x, width](Tape<T>& tape, const Tensor<T>& g) {
    Tensor<T> gx(x.shape());
    for (const Triplet& t : a.triplets()) {
      const T w = static_cast<T>(t.value);
      const T* src = g.ptr() + t.row * width;
      T* dst = gx.ptr() + t.col * width;
      for (std::size_t d = 0; d < width; ++d) dst[d] += w * src[d];
    }
    tape.accumulate(x, gx);
  });
}

/// Selects rows of x (N, ...) in the given order.
template <typename T>
Var<T> gather_rows(Var<T> x, std::span<const std::size_t> rows) {
  if (x.shape().empty()) throw ShapeError("gather_rows on rank-0 tensor");
  const std::size_t n = x.shape()[0];
  const std::size_t width = n ? x.value().size() / n : 0;
  Shape out_shape = x.shape();
  out_shape[0] = rows.size();
  Tensor<T> out(out_shape);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= n) throw ShapeError("gather_rows: row " + std::to_string(rows[i]) + " out of range");
    std::copy_n(x.value().ptr() + rows[i] * width, width, out.ptr() + i * width);
  }
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  return x.tape().record(std::move(out), x.requires_grad(),
                         [x, idx = std::move(idx), width](Tape<T>& tape, const Tensor<T>& g) {
    Tensor<T> gx(x.shape());
    for (std::size_t i = 0; i < idx.size(); ++i)
      for (std::size_t d = 0; d < width; ++d) gx[idx[i] * width + d] += g[i * width + d];
    tape.accumulate(x, gx);
  });
}

}  // namespace relconv::ops
