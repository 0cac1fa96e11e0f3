#include "arbsr/geometry.hpp"

#include "arbsr/error.hpp"

#include <algorithm>
#include <cmath>
#include <fmt/format.h>

namespace arbsr {

std::string to_string(RefMode m)
{
  switch (m) {
  case RefMode::LR: return "lr";
  case RefMode::HR: return "hr";
  case RefMode::Custom: return "custom";
  }
  return "?";
}

RefMode parse_ref_mode(std::string const &s)
{
  if (s == "lr" || s == "LR") {
    return RefMode::LR;
  }
  if (s == "hr" || s == "HR") {
    return RefMode::HR;
  }
  if (s == "custom") {
    return RefMode::Custom;
  }
  fail(ErrorKind::InvalidArgument, fmt::format("unknown reference mode '{}'", s));
}

ScaleTask make_task(Dims hr, Dims tar, Dims ref, RefMode mode)
{
  for (auto d : {hr, tar, ref}) {
    if (d.h <= 0 || d.w <= 0) {
      fail(ErrorKind::InvalidArgument, "scale task dims must be positive");
    }
  }
  auto check = [&](Dims in, char const *branch) {
    double const sy = double(hr.h) / in.h;
    double const sx = double(hr.w) / in.w;
    if (std::abs(sy - sx) > 1e-9) {
      fail(
        ErrorKind::InvalidArgument,
        fmt::format("{} branch is anisotropic: {}x{} -> {}x{}", branch, in.h, in.w, hr.h, hr.w));
    }
    if (!(sy > 0.0 && sy <= 16.0)) {
      fail(ErrorKind::OutOfRange, fmt::format("{} scale {} outside (0, 16]", branch, sy));
    }
  };
  check(tar, "target");
  check(ref, "reference");
  return {hr, tar, ref, mode};
}

int nearest_source(int i, int m, int n)
{
  // floor((2i + 1) n / 2m) in exact integer arithmetic.
  long const num = (2L * i + 1) * n;
  return std::min(n - 1, int(num / (2L * m)));
}

template <typename T>
Tensor<T> nearest_upsample(Tensor<T> const &f, Dims out)
{
  if (out.h <= 0 || out.w <= 0 || f.height <= 0 || f.width <= 0) {
    fail(ErrorKind::InvalidArgument, "nearest_upsample: dims must be positive");
  }
  std::vector<int> cols(out.w);
  for (int j = 0; j < out.w; j++) {
    cols[j] = nearest_source(j, out.w, f.width);
  }
  Tensor<T> res(f.channels, out.h, out.w);
  for (int c = 0; c < f.channels; c++) {
    for (int i = 0; i < out.h; i++) {
      int const si = nearest_source(i, out.h, f.height);
      T const *src = f.channel(c) + std::size_t(si) * f.width;
      T *dst = res.channel(c) + std::size_t(i) * out.w;
      for (int j = 0; j < out.w; j++) {
        dst[j] = src[cols[j]];
      }
    }
  }
  return res;
}

template <typename T>
Tensor<T> nearest_upsample_backward(Tensor<T> const &g, Dims in)
{
  std::vector<int> cols(g.width);
  for (int j = 0; j < g.width; j++) {
    cols[j] = nearest_source(j, g.width, in.w);
  }
  Tensor<T> res(g.channels, in.h, in.w);
  for (int c = 0; c < g.channels; c++) {
    for (int i = 0; i < g.height; i++) {
      int const si = nearest_source(i, g.height, in.h);
      T const *src = g.channel(c) + std::size_t(i) * g.width;
      T *dst = res.channel(c) + std::size_t(si) * in.w;
      for (int j = 0; j < g.width; j++) {
        dst[cols[j]] += src[j];
      }
    }
  }
  return res;
}

template <typename T>
Tensor<T> unfold3x3(Tensor<T> const &f)
{
  int const C = f.channels, H = f.height, W = f.width;
  Tensor<T> res(9 * C, H, W);
  for (int b = 0; b < 9; b++) {
    int const dy = b / 3 - 1;
    int const dx = b % 3 - 1;
    for (int c = 0; c < C; c++) {
      T const *src = f.channel(c);
      T *dst = res.channel(b * C + c);
      for (int y = 0; y < H; y++) {
        int const sy = std::clamp(y + dy, 0, H - 1);
        for (int x = 0; x < W; x++) {
          dst[y * W + x] = src[sy * W + std::clamp(x + dx, 0, W - 1)];
        }
      }
    }
  }
  return res;
}

template <typename T>
Tensor<T> unfold3x3_backward(Tensor<T> const &g, int channels)
{
  int const H = g.height, W = g.width;
  Tensor<T> res(channels, H, W);
  for (int b = 0; b < 9; b++) {
    int const dy = b / 3 - 1;
    int const dx = b % 3 - 1;
    for (int c = 0; c < channels; c++) {
      T const *src = g.channel(b * channels + c);
      T *dst = res.channel(c);
      for (int y = 0; y < H; y++) {
        int const sy = std::clamp(y + dy, 0, H - 1);
        for (int x = 0; x < W; x++) {
          dst[sy * W + std::clamp(x + dx, 0, W - 1)] += src[y * W + x];
        }
      }
    }
  }
  return res;
}

namespace {

std::vector<double> axis_offsets(int full, int cells)
{
  std::vector<double> p(full);
  for (int i = 0; i < full; i++) {
    double const c = (i + 0.5) / full;
    int const j = nearest_source(i, full, cells);
    double const center = (j + 0.5) / cells;
    p[i] = std::clamp((c - center) * cells * 2.0, -1.0, 1.0);
  }
  return p;
}

} // namespace

CoordMap relative_coords(Dims hr, Dims grid)
{
  if (hr.h <= 0 || hr.w <= 0 || grid.h <= 0 || grid.w <= 0) {
    fail(ErrorKind::InvalidArgument, "relative_coords: dims must be positive");
  }
  auto const py = axis_offsets(hr.h, grid.h);
  auto const px = axis_offsets(hr.w, grid.w);
  CoordMap m(2, hr.h, hr.w);
  for (int i = 0; i < hr.h; i++) {
    for (int j = 0; j < hr.w; j++) {
      m(0, i, j) = py[i];
      m(1, i, j) = px[j];
    }
  }
  return m;
}

EffectiveScale effective_scale(int lr_size, double s_nominal)
{
  if (lr_size < 1 || !(s_nominal >= 1.0)) {
    fail(ErrorKind::InvalidArgument, "effective_scale: need lr_size >= 1 and scale >= 1");
  }
  int const hr = int(std::lround(lr_size * s_nominal));
  return {hr, double(hr) / lr_size};
}

template Tensor<float> nearest_upsample(Tensor<float> const &, Dims);
template Tensor<double> nearest_upsample(Tensor<double> const &, Dims);
template Tensor<float> nearest_upsample_backward(Tensor<float> const &, Dims);
template Tensor<double> nearest_upsample_backward(Tensor<double> const &, Dims);
template Tensor<float> unfold3x3(Tensor<float> const &);
template Tensor<double> unfold3x3(Tensor<double> const &);
template Tensor<float> unfold3x3_backward(Tensor<float> const &, int);
template Tensor<double> unfold3x3_backward(Tensor<double> const &, int);

} // namespace arbsr
