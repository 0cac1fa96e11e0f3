#include "arbsr/losses.hpp"

#include "arbsr/error.hpp"

#include <cmath>
#include <fmt/format.h>
#include <limits>

namespace arbsr {

namespace {

void check_dims(Dims a, Dims b, char const *what)
{
  if (a != b) {
    fail(
      ErrorKind::DimensionMismatch,
      fmt::format("{}: dims {}x{} vs {}x{}", what, a.h, a.w, b.h, b.w));
  }
}

// Masked spectral difference M * (F sr - F hr).
KSpaceGrid masked_diff(Grid<double> const &sr, Grid<double> const &hr, FrequencyMask const &mask)
{
  check_dims(sr.dims(), hr.dims(), "k_loss");
  check_dims(sr.dims(), mask.dims(), "k_loss mask");
  Grid<double> d(sr.height, sr.width);
  for (std::size_t i = 0; i < d.size(); i++) {
    d.data[i] = sr.data[i] - hr.data[i];
  }
  auto k = fft2c(d);
  for (std::size_t i = 0; i < k.coeffs.size(); i++) {
    if (!mask.values.data[i]) {
      k.coeffs.data[i] = 0.0;
    }
  }
  return k;
}

} // namespace

void to_json(nlohmann::json &j, LossReport const &r)
{
  j = nlohmann::json{{"l_rec", r.l_rec}, {"l_k", r.l_k}, {"l_full", r.l_full}, {"lambda_k", r.lambda_k}};
}

double rec_loss(Grid<double> const &sr, Grid<double> const &hr)
{
  check_dims(sr.dims(), hr.dims(), "rec_loss");
  double s = 0.0;
  for (std::size_t i = 0; i < sr.size(); i++) {
    s += std::abs(sr.data[i] - hr.data[i]);
  }
  return s / double(sr.size());
}

Grid<double> rec_loss_grad(Grid<double> const &sr, Grid<double> const &hr)
{
  check_dims(sr.dims(), hr.dims(), "rec_loss");
  Grid<double> g(sr.height, sr.width);
  double const inv = 1.0 / double(sr.size());
  for (std::size_t i = 0; i < sr.size(); i++) {
    double const d = sr.data[i] - hr.data[i];
    g.data[i] = d > 0 ? inv : (d < 0 ? -inv : 0.0);
  }
  return g;
}

double k_loss(Grid<double> const &sr, Grid<double> const &hr, FrequencyMask const &mask, KLossForm form)
{
  double const e = spectral_energy(masked_diff(sr, hr, mask));
  return form == KLossForm::Squared ? e : std::sqrt(e);
}

Grid<double> k_loss_grad(
  Grid<double> const &sr, Grid<double> const &hr, FrequencyMask const &mask, KLossForm form)
{
  auto const k = masked_diff(sr, hr, mask);
  double const e = spectral_energy(k);
  Grid<double> g(sr.height, sr.width);
  double scale = 2.0;
  if (form == KLossForm::Norm) {
    if (e <= 0.0) {
      return g; // subgradient 0 at the kink
    }
    scale = 1.0 / std::sqrt(e);
  }
  // The transform is unitary, so its adjoint is the inverse transform.
  auto const back = ifft2c(k);
  for (std::size_t i = 0; i < g.size(); i++) {
    g.data[i] = scale * back.data[i].real();
  }
  return g;
}

LossReport full_loss(
  Grid<double> const &sr, Grid<double> const &hr, FrequencyMask const &mask, LossOptions const &opts)
{
  if (!(opts.lambda_k >= 0.0)) {
    fail(ErrorKind::InvalidArgument, fmt::format("lambda_k must be non-negative, got {}", opts.lambda_k));
  }
  LossReport r;
  r.lambda_k = opts.lambda_k;
  r.l_rec = rec_loss(sr, hr);
  r.l_k = k_loss(sr, hr, mask, opts.form);
  r.l_full = opts.k_loss_on ? r.l_rec + opts.lambda_k * r.l_k : r.l_rec;
  return r;
}

LossReport full_loss_grad(
  Grid<double> const &sr, Grid<double> const &hr, FrequencyMask const &mask, LossOptions const &opts,
  Grid<double> &grad)
{
  auto const r = full_loss(sr, hr, mask, opts);
  grad = rec_loss_grad(sr, hr);
  if (opts.k_loss_on && opts.lambda_k > 0.0) {
    auto const gk = k_loss_grad(sr, hr, mask, opts.form);
    for (std::size_t i = 0; i < grad.size(); i++) {
      grad.data[i] += opts.lambda_k * gk.data[i];
    }
  }
  return r;
}

double psnr(Grid<double> const &a, Grid<double> const &b, double data_range)
{
  check_dims(a.dims(), b.dims(), "psnr");
  if (!(data_range > 0.0)) {
    fail(ErrorKind::InvalidArgument, "psnr: data_range must be positive");
  }
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); i++) {
    double const d = a.data[i] - b.data[i];
    s += d * d;
  }
  double const mse = s / double(a.size());
  if (mse < 1e-12) {
    return std::numeric_limits<double>::infinity();
  }
  return 10.0 * std::log10(data_range * data_range / mse);
}

namespace {

// Valid-mode separable filtering with a normalized 1D kernel.
Grid<double> filter_valid(Grid<double> const &img, std::vector<double> const &k)
{
  int const n = int(k.size());
  int const oh = img.height - n + 1, ow = img.width - n + 1;
  Grid<double> rows(img.height, ow);
  for (int y = 0; y < img.height; y++) {
    for (int x = 0; x < ow; x++) {
      double s = 0.0;
      for (int t = 0; t < n; t++) {
        s += k[t] * img(y, x + t);
      }
      rows(y, x) = s;
    }
  }
  Grid<double> out(oh, ow);
  for (int y = 0; y < oh; y++) {
    for (int x = 0; x < ow; x++) {
      double s = 0.0;
      for (int t = 0; t < n; t++) {
        s += k[t] * rows(y + t, x);
      }
      out(y, x) = s;
    }
  }
  return out;
}

} // namespace

double ssim(Grid<double> const &a, Grid<double> const &b, double data_range)
{
  check_dims(a.dims(), b.dims(), "ssim");
  if (!(data_range > 0.0)) {
    fail(ErrorKind::InvalidArgument, "ssim: data_range must be positive");
  }
  int win = std::min({11, a.height, a.width});
  if (win % 2 == 0) {
    win--;
  }
  if (win < 1) {
    fail(ErrorKind::InvalidArgument, "ssim: empty image");
  }
  std::vector<double> k(win);
  double sum = 0.0;
  for (int t = 0; t < win; t++) {
    double const d = t - win / 2;
    k[t] = std::exp(-d * d / (2.0 * 1.5 * 1.5));
    sum += k[t];
  }
  for (auto &v : k) {
    v /= sum;
  }
  Grid<double> aa(a.height, a.width), bb(a.height, a.width), ab(a.height, a.width);
  for (std::size_t i = 0; i < a.size(); i++) {
    aa.data[i] = a.data[i] * a.data[i];
    bb.data[i] = b.data[i] * b.data[i];
    ab.data[i] = a.data[i] * b.data[i];
  }
  auto const mu_a = filter_valid(a, k), mu_b = filter_valid(b, k);
  auto const e_aa = filter_valid(aa, k), e_bb = filter_valid(bb, k), e_ab = filter_valid(ab, k);
  double const c1 = (0.01 * data_range) * (0.01 * data_range);
  double const c2 = (0.03 * data_range) * (0.03 * data_range);
  double total = 0.0;
  for (std::size_t i = 0; i < mu_a.size(); i++) {
    double const ma = mu_a.data[i], mb = mu_b.data[i];
    double const va = e_aa.data[i] - ma * ma;
    double const vb = e_bb.data[i] - mb * mb;
    double const cov = e_ab.data[i] - ma * mb;
    total += ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
  }
  return total / double(mu_a.size());
}

} // namespace arbsr
