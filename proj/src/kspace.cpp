#include "arbsr/kspace.hpp"

#include "arbsr/error.hpp"

#include <cmath>
#include <fftw3.h>
#include <fmt/format.h>
#include <map>
#include <memory>
#include <mutex>
#include <tuple>

namespace arbsr {

namespace {

// FFTW planning is not thread-safe while execution is. Plans are created once
// per (shape, direction) under a lock and executed on private buffers.
class PlanCache
{
public:
  static PlanCache &instance()
  {
    static PlanCache cache;
    return cache;
  }

  fftw_plan get(int h, int w, int sign)
  {
    std::lock_guard lock(mutex_);
    auto const key = std::make_tuple(h, w, sign);
    auto it = plans_.find(key);
    if (it != plans_.end()) {
      return it->second;
    }
    auto *buf = fftw_alloc_complex(std::size_t(h) * w);
    auto plan = fftw_plan_dft_2d(h, w, buf, buf, sign, FFTW_ESTIMATE | FFTW_UNALIGNED);
    fftw_free(buf);
    plans_.emplace(key, plan);
    return plan;
  }

  ~PlanCache()
  {
    for (auto &[key, plan] : plans_) {
      fftw_destroy_plan(plan);
    }
  }

private:
  std::mutex mutex_;
  std::map<std::tuple<int, int, int>, fftw_plan> plans_;
};

struct FftwBuffer
{
  explicit FftwBuffer(std::size_t n)
    : ptr{fftw_alloc_complex(n)}
  {
  }
  ~FftwBuffer() { fftw_free(ptr); }
  FftwBuffer(FftwBuffer const &) = delete;
  FftwBuffer &operator=(FftwBuffer const &) = delete;
  Cx *data() { return reinterpret_cast<Cx *>(ptr); }
  fftw_complex *ptr;
};

// Unnormalized in-place 2D DFT.
void dft2(Cx *data, int h, int w, int sign)
{
  auto plan = PlanCache::instance().get(h, w, sign);
  auto *p = reinterpret_cast<fftw_complex *>(data);
  fftw_execute_dft(plan, p, p);
}

int wrap(int i, int n) { return ((i % n) + n) % n; }

void check_dims(Dims d, char const *what)
{
  if (d.h <= 0 || d.w <= 0) {
    fail(ErrorKind::InvalidArgument, fmt::format("{}: dims {}x{} must be positive", what, d.h, d.w));
  }
}

} // namespace

int crop_start(int full, int keep) { return full / 2 - keep / 2; }

KSpaceGrid fft2c(Grid<double> const &img)
{
  check_dims(img.dims(), "fft2c");
  int const H = img.height;
  int const W = img.width;
  FftwBuffer buf(img.size());
  for (std::size_t i = 0; i < img.size(); i++) {
    if (!std::isfinite(img.data[i])) {
      fail(ErrorKind::NonFinite, "fft2c: input contains non-finite values");
    }
    buf.data()[i] = Cx(img.data[i], 0.0);
  }
  dft2(buf.data(), H, W, FFTW_FORWARD);
  double const scale = 1.0 / std::sqrt(double(H) * W);
  KSpaceGrid k{Grid<Cx>(H, W)};
  for (int u = 0; u < H; u++) {
    int const su = wrap(u - H / 2, H);
    for (int v = 0; v < W; v++) {
      int const sv = wrap(v - W / 2, W);
      k.coeffs(u, v) = buf.data()[std::size_t(su) * W + sv] * scale;
    }
  }
  return k;
}

KSpaceGrid fft2c(SliceImage const &img) { return fft2c(img.pixels.cast<double>()); }

Grid<Cx> ifft2c(KSpaceGrid const &k)
{
  check_dims(k.dims(), "ifft2c");
  int const H = k.coeffs.height;
  int const W = k.coeffs.width;
  FftwBuffer buf(k.coeffs.size());
  for (int u = 0; u < H; u++) {
    int const su = wrap(u - H / 2, H);
    for (int v = 0; v < W; v++) {
      int const sv = wrap(v - W / 2, W);
      auto const c = k.coeffs(u, v);
      if (!std::isfinite(c.real()) || !std::isfinite(c.imag())) {
        fail(ErrorKind::NonFinite, "ifft2c: input contains non-finite values");
      }
      buf.data()[std::size_t(su) * W + sv] = c;
    }
  }
  dft2(buf.data(), H, W, FFTW_BACKWARD);
  double const scale = 1.0 / std::sqrt(double(H) * W);
  Grid<Cx> out(H, W);
  for (std::size_t i = 0; i < out.size(); i++) {
    out.data[i] = buf.data()[i] * scale;
  }
  return out;
}

KSpaceGrid central_crop(KSpaceGrid const &k, Dims out)
{
  check_dims(out, "central_crop");
  if (out.h > k.coeffs.height || out.w > k.coeffs.width) {
    fail(
      ErrorKind::InvalidArgument,
      fmt::format(
        "central_crop: {}x{} exceeds input {}x{}", out.h, out.w, k.coeffs.height, k.coeffs.width));
  }
  int const r0 = crop_start(k.coeffs.height, out.h);
  int const c0 = crop_start(k.coeffs.width, out.w);
  KSpaceGrid res{Grid<Cx>(out.h, out.w)};
  for (int i = 0; i < out.h; i++) {
    for (int j = 0; j < out.w; j++) {
      res.coeffs(i, j) = k.coeffs(r0 + i, c0 + j);
    }
  }
  return res;
}

KSpaceGrid zero_pad(KSpaceGrid const &k, Dims out)
{
  check_dims(out, "zero_pad");
  if (out.h < k.coeffs.height || out.w < k.coeffs.width) {
    fail(ErrorKind::InvalidArgument, "zero_pad: output smaller than input");
  }
  int const r0 = crop_start(out.h, k.coeffs.height);
  int const c0 = crop_start(out.w, k.coeffs.width);
  KSpaceGrid res{Grid<Cx>(out.h, out.w, Cx{})};
  for (int i = 0; i < k.coeffs.height; i++) {
    for (int j = 0; j < k.coeffs.width; j++) {
      res.coeffs(r0 + i, c0 + j) = k.coeffs(i, j);
    }
  }
  return res;
}

Dims lr_dims_for(Dims hr, double k)
{
  if (!(k >= 1.0) || !std::isfinite(k)) {
    fail(ErrorKind::InvalidArgument, fmt::format("degradation factor {} must be >= 1", k));
  }
  Dims lr{int(std::lround(hr.h / k)), int(std::lround(hr.w / k))};
  if (lr.h < 1 || lr.w < 1) {
    fail(ErrorKind::InvalidArgument, fmt::format("factor {} leaves no pixels of {}x{}", k, hr.h, hr.w));
  }
  return lr;
}

Grid<double> degrade(Grid<double> const &hr, double k)
{
  auto const lr = lr_dims_for(hr.dims(), k);
  auto const img = ifft2c(central_crop(fft2c(hr), lr));
  double const comp = std::sqrt(double(lr.count()) / double(hr.dims().count()));
  Grid<double> out(lr.h, lr.w);
  for (std::size_t i = 0; i < out.size(); i++) {
    out.data[i] = std::abs(img.data[i]) * comp;
  }
  return out;
}

SliceImage degrade(SliceImage const &hr, double k)
{
  SliceImage lr = hr;
  lr.pixels = degrade(hr.pixels.cast<double>(), k).cast<float>();
  return lr;
}

FrequencyMask lowpass_mask(Dims hr, Dims lr)
{
  check_dims(hr, "lowpass_mask");
  check_dims(lr, "lowpass_mask");
  if (lr.h > hr.h || lr.w > hr.w) {
    fail(
      ErrorKind::InvalidArgument,
      fmt::format("lowpass_mask: passband {}x{} exceeds grid {}x{}", lr.h, lr.w, hr.h, hr.w));
  }
  FrequencyMask m{Grid<std::uint8_t>(hr.h, hr.w, 0), lr};
  int const r0 = crop_start(hr.h, lr.h);
  int const c0 = crop_start(hr.w, lr.w);
  for (int i = r0; i < r0 + lr.h; i++) {
    for (int j = c0; j < c0 + lr.w; j++) {
      m.values(i, j) = 1;
    }
  }
  return m;
}

double spectral_energy(KSpaceGrid const &k)
{
  double e = 0.0;
  for (auto const &c : k.coeffs.data) {
    e += std::norm(c);
  }
  return e;
}

} // namespace arbsr
