#pragma once

// Layer primitives with hand-written backward passes. Parameters live in one
// flat array; each spec records offsets into it, and backward passes
// accumulate into a gradient array with the same layout.

#include "tensor.hpp"

#include <cstddef>
#include <vector>

namespace arbsr::nn {

// Square-kernel convolution, stride 1, zero padding k/2. Weight layout is
// [cout][cin][k][k].
struct ConvSpec
{
  int cin = 0;
  int cout = 0;
  int k = 1;
  std::size_t weight = 0;
  std::size_t bias = 0;

  std::size_t weight_count() const { return std::size_t(cout) * cin * k * k; }
};

// y = conv(x); y must be preallocated with cout channels.
template <typename T>
void conv_forward(ConvSpec const &spec, T const *params, ConstView<T> x, TensorView<T> y);

// Accumulates weight/bias gradients into `grads` and, when dx.data is set,
// the input gradient into dx.
template <typename T>
void conv_backward(
  ConvSpec const &spec, T const *params, ConstView<T> x, ConstView<T> dy, T *grads,
  TensorView<T> dx);

template <typename T>
void relu_inplace(TensorView<T> x);

// dy *= (y > 0), with y the ReLU output.
template <typename T>
void relu_backward_inplace(ConstView<T> y, TensorView<T> dy);

// Squeeze-excitation style channel gate over average- and max-pooled
// descriptors sharing one two-layer MLP.
struct ChannelAttentionSpec
{
  int channels = 0;
  int hidden = 0;
  std::size_t w1 = 0, b1 = 0; // [hidden][channels], [hidden]
  std::size_t w2 = 0, b2 = 0; // [channels][hidden], [channels]
};

template <typename T>
struct ChannelAttentionCache
{
  Buffer<T> avg, mx;
  std::vector<std::size_t> argmax;
  Buffer<T> h_avg, h_max; // post-ReLU hidden activations
  Buffer<T> gate;
};

template <typename T>
void channel_attention_forward(
  ChannelAttentionSpec const &spec, T const *params, ConstView<T> x, TensorView<T> out,
  ChannelAttentionCache<T> &cache);

template <typename T>
void channel_attention_backward(
  ChannelAttentionSpec const &spec, T const *params, ConstView<T> x, ConstView<T> dout,
  ChannelAttentionCache<T> const &cache, T *grads, TensorView<T> dx);

// Per-pixel gate from a k x k convolution over channel-mean and channel-max maps.
template <typename T>
struct SpatialAttentionCache
{
  Tensor<T> pooled; // 2 x H x W
  std::vector<int> argmax;
  Buffer<T> gate;
};

template <typename T>
void spatial_attention_forward(
  ConvSpec const &conv, T const *params, ConstView<T> x, TensorView<T> out,
  SpatialAttentionCache<T> &cache);

template <typename T>
void spatial_attention_backward(
  ConvSpec const &conv, T const *params, ConstView<T> x, ConstView<T> dout,
  SpatialAttentionCache<T> const &cache, T *grads, TensorView<T> dx);

template <typename T>
T sigmoid(T z);

} // namespace arbsr::nn
