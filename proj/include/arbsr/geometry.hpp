#pragma once

#include "tensor.hpp"

#include <string>

namespace arbsr {

enum class RefMode { LR, HR, Custom };

std::string to_string(RefMode m);
RefMode parse_ref_mode(std::string const &s);

// Exact per-branch scale bookkeeping: s_tar = H_HR / H_tar, s_ref = H_HR / H_ref.
struct ScaleTask
{
  Dims hr;
  Dims tar;
  Dims ref;
  RefMode ref_mode = RefMode::HR;

  double s_tar() const { return double(hr.h) / tar.h; }
  double s_ref() const { return double(hr.h) / ref.h; }
};

// Validates isotropy (per-axis ratios equal within 1e-9) and the (0, 16] range.
ScaleTask make_task(Dims hr, Dims tar, Dims ref, RefMode mode);

// Source index of output position i when mapping a length-n axis onto length
// m: min(n - 1, floor((i + 0.5) * n / m)).
int nearest_source(int i, int m, int n);

template <typename T>
Tensor<T> nearest_upsample(Tensor<T> const &f, Dims out);

// Adjoint of nearest_upsample: scatter-adds the gradient back to the source grid.
template <typename T>
Tensor<T> nearest_upsample_backward(Tensor<T> const &grad_out, Dims in);

// 3x3 neighbourhood unfolding with replicate padding. Output block b = (dy + 1)
// * 3 + (dx + 1) occupies channels [b * C, (b + 1) * C).
template <typename T>
Tensor<T> unfold3x3(Tensor<T> const &f);

template <typename T>
Tensor<T> unfold3x3_backward(Tensor<T> const &grad_out, int channels);

// Offsets (p_y, p_x) of each HR pixel center from the nearest cell center of
// `grid`, in units of half a grid cell; every entry lies in [-1, 1].
using CoordMap = Tensor<double>;
CoordMap relative_coords(Dims hr, Dims grid);

struct EffectiveScale
{
  int hr_size = 0;
  double s_exact = 0.0;
};
EffectiveScale effective_scale(int lr_size, double s_nominal);

} // namespace arbsr
