#pragma once

#include "kspace.hpp"
#include "tensor.hpp"

#include <json.hpp>

namespace arbsr {

struct LossReport
{
  double l_rec = 0.0;
  double l_k = 0.0;
  double l_full = 0.0;
  double lambda_k = 0.0;
};

void to_json(nlohmann::json &j, LossReport const &r);

enum class KLossForm { Norm, Squared };

struct LossOptions
{
  double lambda_k = 0.05;
  bool k_loss_on = true;
  KLossForm form = KLossForm::Norm;

  bool operator==(LossOptions const &) const = default;
};

// Mean absolute error.
double rec_loss(Grid<double> const &sr, Grid<double> const &hr);
// sign(sr - hr) / N, with sign(0) = 0.
Grid<double> rec_loss_grad(Grid<double> const &sr, Grid<double> const &hr);

// ||M * (fft2c(sr) - fft2c(hr))||_2, or its square for KLossForm::Squared.
double k_loss(
  Grid<double> const &sr, Grid<double> const &hr, FrequencyMask const &mask,
  KLossForm form = KLossForm::Norm);
Grid<double> k_loss_grad(
  Grid<double> const &sr, Grid<double> const &hr, FrequencyMask const &mask,
  KLossForm form = KLossForm::Norm);

LossReport full_loss(
  Grid<double> const &sr, Grid<double> const &hr, FrequencyMask const &mask,
  LossOptions const &opts = {});
// Same report, plus d l_full / d sr written to `grad`.
LossReport full_loss_grad(
  Grid<double> const &sr, Grid<double> const &hr, FrequencyMask const &mask,
  LossOptions const &opts, Grid<double> &grad);

// 10 log10(range^2 / MSE); +infinity when MSE < 1e-12.
double psnr(Grid<double> const &a, Grid<double> const &b, double data_range = 1.0);
// Gaussian-window SSIM (11x11, sigma 1.5, K1 0.01, K2 0.03), mean over valid
// window positions. Images smaller than 11 px use the largest odd window that fits.
double ssim(Grid<double> const &a, Grid<double> const &b, double data_range = 1.0);

} // namespace arbsr
