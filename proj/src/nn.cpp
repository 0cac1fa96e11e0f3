#include "arbsr/nn.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>

namespace arbsr::nn {

namespace {

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using Vec = Eigen::Matrix<T, Eigen::Dynamic, 1>;

// Rows are (c, ky, kx) triples in weight order, columns are output pixels.
template <typename T>
void im2col(ConstView<T> x, int k, T *col)
{
  int const H = x.height, W = x.width, pad = k / 2;
  std::size_t const HW = x.plane();
  for (int c = 0; c < x.channels; c++) {
    T const *src = x.channel(c);
    for (int ky = 0; ky < k; ky++) {
      for (int kx = 0; kx < k; kx++) {
        T *dst = col + (std::size_t(c * k + ky) * k + kx) * HW;
        int const oy = ky - pad, ox = kx - pad;
        int const x_lo = std::max(0, -ox), x_hi = std::min(W, W - ox);
        for (int y = 0; y < H; y++) {
          T *row = dst + std::size_t(y) * W;
          int const sy = y + oy;
          if (sy < 0 || sy >= H) {
            std::fill(row, row + W, T(0));
            continue;
          }
          if (x_hi <= x_lo) {
            std::fill(row, row + W, T(0));
            continue;
          }
          T const *line = src + std::size_t(sy) * W;
          std::fill(row, row + x_lo, T(0));
          std::copy(line + x_lo + ox, line + x_hi + ox, row + x_lo);
          std::fill(row + x_hi, row + W, T(0));
        }
      }
    }
  }
}

template <typename T>
void col2im_add(T const *col, int k, TensorView<T> dx)
{
  int const H = dx.height, W = dx.width, pad = k / 2;
  std::size_t const HW = dx.plane();
  for (int c = 0; c < dx.channels; c++) {
    T *dst = dx.channel(c);
    for (int ky = 0; ky < k; ky++) {
      for (int kx = 0; kx < k; kx++) {
        T const *src = col + (std::size_t(c * k + ky) * k + kx) * HW;
        int const oy = ky - pad, ox = kx - pad;
        int const x_lo = std::max(0, -ox), x_hi = std::min(W, W - ox);
        for (int y = 0; y < H; y++) {
          int const sy = y + oy;
          if (sy < 0 || sy >= H) {
            continue;
          }
          T const *row = src + std::size_t(y) * W;
          T *out = dst + std::size_t(sy) * W + ox;
          for (int xx = x_lo; xx < x_hi; xx++) {
            out[xx] += row[xx];
          }
        }
      }
    }
  }
}

} // namespace

template <typename T>
void conv_forward(ConvSpec const &spec, T const *params, ConstView<T> x, TensorView<T> y)
{
  auto const HW = Eigen::Index(x.plane());
  auto const K = Eigen::Index(spec.cin) * spec.k * spec.k;
  Eigen::Map<Mat<T> const> w(params + spec.weight, spec.cout, K);
  Eigen::Map<Vec<T> const> b(params + spec.bias, spec.cout);
  Eigen::Map<Mat<T>> out(y.data, spec.cout, HW);
  if (spec.k == 1) {
    Eigen::Map<Mat<T> const> in(x.data, K, HW);
    out.noalias() = w * in;
  } else {
    Buffer<T> col(std::size_t(K) * HW);
    im2col(x, spec.k, col.data());
    Eigen::Map<Mat<T> const> in(col.data(), K, HW);
    out.noalias() = w * in;
  }
  out.colwise() += b;
}

template <typename T>
void conv_backward(
  ConvSpec const &spec, T const *params, ConstView<T> x, ConstView<T> dy, T *grads,
  TensorView<T> dx)
{
  auto const HW = Eigen::Index(x.plane());
  auto const K = Eigen::Index(spec.cin) * spec.k * spec.k;
  Eigen::Map<Mat<T> const> w(params + spec.weight, spec.cout, K);
  Eigen::Map<Mat<T> const> g(dy.data, spec.cout, HW);
  Eigen::Map<Mat<T>> gw(grads + spec.weight, spec.cout, K);
  Eigen::Map<Vec<T>> gb(grads + spec.bias, spec.cout);
  gb += g.rowwise().sum();
  if (spec.k == 1) {
    Eigen::Map<Mat<T> const> in(x.data, K, HW);
    gw.noalias() += g * in.transpose();
    if (dx.data) {
      Eigen::Map<Mat<T>> d(dx.data, K, HW);
      d.noalias() += w.transpose() * g;
    }
    return;
  }
  Buffer<T> col(std::size_t(K) * HW);
  im2col(x, spec.k, col.data());
  {
    Eigen::Map<Mat<T> const> in(col.data(), K, HW);
    gw.noalias() += g * in.transpose();
  }
  if (dx.data) {
    Eigen::Map<Mat<T>> dcol(col.data(), K, HW);
    dcol.noalias() = w.transpose() * g;
    col2im_add(col.data(), spec.k, dx);
  }
}

template <typename T>
void relu_inplace(TensorView<T> x)
{
  T *p = x.data;
  for (std::size_t i = 0, n = x.size(); i < n; i++) {
    p[i] = p[i] > T(0) ? p[i] : T(0);
  }
}

template <typename T>
void relu_backward_inplace(ConstView<T> y, TensorView<T> dy)
{
  for (std::size_t i = 0, n = y.size(); i < n; i++) {
    if (!(y.data[i] > T(0))) {
      dy.data[i] = T(0);
    }
  }
}

template <typename T>
T sigmoid(T z)
{
  return T(1) / (T(1) + std::exp(-z));
}

template <typename T>
void channel_attention_forward(
  ChannelAttentionSpec const &spec, T const *params, ConstView<T> x, TensorView<T> out,
  ChannelAttentionCache<T> &cache)
{
  int const C = spec.channels, Hd = spec.hidden;
  std::size_t const HW = x.plane();
  cache.avg.assign(C, T(0));
  cache.mx.assign(C, T(0));
  cache.argmax.assign(C, 0);
  for (int c = 0; c < C; c++) {
    T const *p = x.channel(c);
    double sum = 0.0;
    std::size_t best = 0;
    for (std::size_t i = 0; i < HW; i++) {
      sum += p[i];
      if (p[i] > p[best]) {
        best = i;
      }
    }
    cache.avg[c] = T(sum / double(HW));
    cache.mx[c] = p[best];
    cache.argmax[c] = best;
  }
  T const *w1 = params + spec.w1;
  T const *b1 = params + spec.b1;
  T const *w2 = params + spec.w2;
  T const *b2 = params + spec.b2;
  auto hidden = [&](Buffer<T> const &in, Buffer<T> &h) {
    h.assign(Hd, T(0));
    for (int j = 0; j < Hd; j++) {
      T acc = b1[j];
      for (int c = 0; c < C; c++) {
        acc += w1[j * C + c] * in[c];
      }
      h[j] = acc > T(0) ? acc : T(0);
    }
  };
  hidden(cache.avg, cache.h_avg);
  hidden(cache.mx, cache.h_max);
  cache.gate.assign(C, T(0));
  for (int c = 0; c < C; c++) {
    T z = T(2) * b2[c];
    for (int j = 0; j < Hd; j++) {
      z += w2[c * Hd + j] * (cache.h_avg[j] + cache.h_max[j]);
    }
    cache.gate[c] = sigmoid(z);
  }
  for (int c = 0; c < C; c++) {
    T const *p = x.channel(c);
    T *o = out.channel(c);
    T const gc = cache.gate[c];
    for (std::size_t i = 0; i < HW; i++) {
      o[i] = p[i] * gc;
    }
  }
}

template <typename T>
void channel_attention_backward(
  ChannelAttentionSpec const &spec, T const *params, ConstView<T> x, ConstView<T> dout,
  ChannelAttentionCache<T> const &cache, T *grads, TensorView<T> dx)
{
  int const C = spec.channels, Hd = spec.hidden;
  std::size_t const HW = x.plane();
  T const *w1 = params + spec.w1;
  T const *w2 = params + spec.w2;
  Buffer<T> dz(C);
  for (int c = 0; c < C; c++) {
    T const *p = x.channel(c);
    T const *g = dout.channel(c);
    T *d = dx.channel(c);
    T const gc = cache.gate[c];
    double dgate = 0.0;
    for (std::size_t i = 0; i < HW; i++) {
      dgate += double(g[i]) * double(p[i]);
      d[i] += g[i] * gc;
    }
    dz[c] = T(dgate) * gc * (T(1) - gc);
  }
  T *gw1 = grads + spec.w1;
  T *gb1 = grads + spec.b1;
  T *gw2 = grads + spec.w2;
  T *gb2 = grads + spec.b2;
  for (int c = 0; c < C; c++) {
    gb2[c] += T(2) * dz[c];
    for (int j = 0; j < Hd; j++) {
      gw2[c * Hd + j] += dz[c] * (cache.h_avg[j] + cache.h_max[j]);
    }
  }
  auto branch = [&](Buffer<T> const &in, Buffer<T> const &h, Buffer<T> &din) {
    din.assign(C, T(0));
    for (int j = 0; j < Hd; j++) {
      if (!(h[j] > T(0))) {
        continue;
      }
      T dh = T(0);
      for (int c = 0; c < C; c++) {
        dh += w2[c * Hd + j] * dz[c];
      }
      gb1[j] += dh;
      for (int c = 0; c < C; c++) {
        gw1[j * C + c] += dh * in[c];
        din[c] += w1[j * C + c] * dh;
      }
    }
  };
  Buffer<T> davg, dmax;
  branch(cache.avg, cache.h_avg, davg);
  branch(cache.mx, cache.h_max, dmax);
  for (int c = 0; c < C; c++) {
    T *d = dx.channel(c);
    T const share = davg[c] / T(HW);
    for (std::size_t i = 0; i < HW; i++) {
      d[i] += share;
    }
    d[cache.argmax[c]] += dmax[c];
  }
}

template <typename T>
void spatial_attention_forward(
  ConvSpec const &conv, T const *params, ConstView<T> x, TensorView<T> out,
  SpatialAttentionCache<T> &cache)
{
  int const C = x.channels;
  std::size_t const HW = x.plane();
  cache.pooled = Tensor<T>(2, x.height, x.width);
  cache.argmax.assign(HW, 0);
  T *mean = cache.pooled.channel(0);
  T *mx = cache.pooled.channel(1);
  for (std::size_t i = 0; i < HW; i++) {
    mx[i] = x.data[i];
  }
  for (int c = 0; c < C; c++) {
    T const *p = x.channel(c);
    for (std::size_t i = 0; i < HW; i++) {
      mean[i] += p[i];
      if (p[i] > mx[i]) {
        mx[i] = p[i];
        cache.argmax[i] = c;
      }
    }
  }
  for (std::size_t i = 0; i < HW; i++) {
    mean[i] /= T(C);
  }
  Tensor<T> z(1, x.height, x.width);
  conv_forward<T>(conv, params, cache.pooled, z);
  cache.gate.resize(HW);
  for (std::size_t i = 0; i < HW; i++) {
    cache.gate[i] = sigmoid(z.data[i]);
  }
  for (int c = 0; c < C; c++) {
    T const *p = x.channel(c);
    T *o = out.channel(c);
    for (std::size_t i = 0; i < HW; i++) {
      o[i] = p[i] * cache.gate[i];
    }
  }
}

template <typename T>
void spatial_attention_backward(
  ConvSpec const &conv, T const *params, ConstView<T> x, ConstView<T> dout,
  SpatialAttentionCache<T> const &cache, T *grads, TensorView<T> dx)
{
  int const C = x.channels;
  std::size_t const HW = x.plane();
  Tensor<T> dz(1, x.height, x.width);
  for (int c = 0; c < C; c++) {
    T const *p = x.channel(c);
    T const *g = dout.channel(c);
    T *d = dx.channel(c);
    for (std::size_t i = 0; i < HW; i++) {
      dz.data[i] += g[i] * p[i];
      d[i] += g[i] * cache.gate[i];
    }
  }
  for (std::size_t i = 0; i < HW; i++) {
    T const s = cache.gate[i];
    dz.data[i] *= s * (T(1) - s);
  }
  Tensor<T> dpooled(2, x.height, x.width);
  conv_backward<T>(conv, params, cache.pooled, dz, grads, dpooled);
  T const *dmean = dpooled.channel(0);
  T const *dmax = dpooled.channel(1);
  for (int c = 0; c < C; c++) {
    T *d = dx.channel(c);
    for (std::size_t i = 0; i < HW; i++) {
      d[i] += dmean[i] / T(C);
    }
  }
  for (std::size_t i = 0; i < HW; i++) {
    dx.channel(cache.argmax[i])[i] += dmax[i];
  }
}

#define ARBSR_NN_INSTANTIATE(T)                                                                      \
  template void conv_forward<T>(ConvSpec const &, T const *, ConstView<T>, TensorView<T>);         \
  template void conv_backward<T>(                                                                    \
    ConvSpec const &, T const *, ConstView<T>, ConstView<T>, T *, TensorView<T>);                   \
  template void relu_inplace<T>(TensorView<T>);                                                      \
  template void relu_backward_inplace<T>(ConstView<T>, TensorView<T>);                               \
  template T sigmoid<T>(T);                                                                          \
  template void channel_attention_forward<T>(                                                        \
    ChannelAttentionSpec const &, T const *, ConstView<T>, TensorView<T>, ChannelAttentionCache<T> &); \
  template void channel_attention_backward<T>(                                                       \
    ChannelAttentionSpec const &, T const *, ConstView<T>, ConstView<T>,                            \
    ChannelAttentionCache<T> const &, T *, TensorView<T>);                                           \
  template void spatial_attention_forward<T>(                                                        \
    ConvSpec const &, T const *, ConstView<T>, TensorView<T>, SpatialAttentionCache<T> &);          \
  template void spatial_attention_backward<T>(                                                       \
    ConvSpec const &, T const *, ConstView<T>, ConstView<T>, SpatialAttentionCache<T> const &, T *, \
    TensorView<T>);

ARBSR_NN_INSTANTIATE(float)
ARBSR_NN_INSTANTIATE(double)

} // namespace arbsr::nn
