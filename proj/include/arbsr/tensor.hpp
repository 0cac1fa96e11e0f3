#pragma once

#include <algorithm>
#include <cstddef>
#include <new>
#include <span>
#include <type_traits>
#include <vector>

namespace arbsr {

// Vectorized reductions peel a start offset that depends on the address, so
// the summation order (and rounding) would otherwise vary with heap layout.
template <typename T>
struct AlignedAllocator
{
  using value_type = T;
  static constexpr std::align_val_t alignment{64};

  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(AlignedAllocator<U> const &) noexcept
  {
  }

  T *allocate(std::size_t n) { return static_cast<T *>(::operator new(n * sizeof(T), alignment)); }
  void deallocate(T *p, std::size_t) noexcept { ::operator delete(p, alignment); }

  template <typename U>
  bool operator==(AlignedAllocator<U> const &) const noexcept
  {
    return true;
  }
};

template <typename T>
using Buffer = std::vector<T, AlignedAllocator<T>>;

struct Dims
{
  int h = 0;
  int w = 0;

  long count() const { return long(h) * w; }
  bool operator==(Dims const &) const = default;
};

// Row-major 2D array.
template <typename T>
struct Grid
{
  int height = 0;
  int width = 0;
  Buffer<T> data;

  Grid() = default;
  Grid(int h, int w, T fill = T{})
    : height{h}
    , width{w}
    , data(std::size_t(h) * std::size_t(w), fill)
  {
  }

  Dims dims() const { return {height, width}; }
  std::size_t size() const { return data.size(); }
  T &operator()(int y, int x) { return data[std::size_t(y) * width + x]; }
  T const &operator()(int y, int x) const { return data[std::size_t(y) * width + x]; }

  template <typename U>
  Grid<U> cast() const
  {
    Grid<U> out(height, width);
    std::transform(data.begin(), data.end(), out.data.begin(), [](T v) { return U(v); });
    return out;
  }

  bool operator==(Grid const &) const = default;
};

// Channel-major C x H x W array. Each channel plane is contiguous.
template <typename T>
struct Tensor
{
  int channels = 0;
  int height = 0;
  int width = 0;
  Buffer<T> data;

  Tensor() = default;
  Tensor(int c, int h, int w, T fill = T{})
    : channels{c}
    , height{h}
    , width{w}
    , data(std::size_t(c) * std::size_t(h) * std::size_t(w), fill)
  {
  }

  Dims dims() const { return {height, width}; }
  std::size_t plane() const { return std::size_t(height) * width; }
  std::size_t size() const { return data.size(); }
  T *channel(int c) { return data.data() + c * plane(); }
  T const *channel(int c) const { return data.data() + c * plane(); }
  T &operator()(int c, int y, int x) { return data[(std::size_t(c) * height + y) * width + x]; }
  T const &operator()(int c, int y, int x) const
  {
    return data[(std::size_t(c) * height + y) * width + x];
  }

  template <typename U>
  Tensor<U> cast() const
  {
    Tensor<U> out(channels, height, width);
    std::transform(data.begin(), data.end(), out.data.begin(), [](T v) { return U(v); });
    return out;
  }

  bool operator==(Tensor const &) const = default;
};

// Non-owning view of a contiguous C x H x W block (e.g. a channel prefix of a
// larger tensor).
template <typename T>
struct TensorView
{
  T *data = nullptr;
  int channels = 0;
  int height = 0;
  int width = 0;

  TensorView() = default;
  TensorView(T *d, int c, int h, int w)
    : data{d}
    , channels{c}
    , height{h}
    , width{w}
  {
  }
  template <typename U>
  TensorView(Tensor<U> &t)
    : data{t.data.data()}
    , channels{t.channels}
    , height{t.height}
    , width{t.width}
  {
  }
  template <typename U>
  TensorView(Tensor<U> const &t)
    : data{t.data.data()}
    , channels{t.channels}
    , height{t.height}
    , width{t.width}
  {
  }

  template <typename U>
    requires(!std::is_same_v<U, T> && std::is_convertible_v<U *, T *>)
  TensorView(TensorView<U> const &v)
    : data{v.data}
    , channels{v.channels}
    , height{v.height}
    , width{v.width}
  {
  }

  std::size_t plane() const { return std::size_t(height) * width; }
  std::size_t size() const { return plane() * channels; }
  T *channel(int c) const { return data + c * plane(); }
  TensorView prefix(int c) const { return {data, c, height, width}; }
  TensorView slice(int c0, int c) const { return {data + c0 * plane(), c, height, width}; }
};

template <typename T>
using ConstView = TensorView<T const>;

} // namespace arbsr
