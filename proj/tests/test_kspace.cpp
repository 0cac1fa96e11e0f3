#include "arbsr/error.hpp"
#include "arbsr/kspace.hpp"
#include "oracles.hpp"

#include <doctest.h>

#include <limits>

using namespace arbsr;

namespace {

double max_abs(Grid<double> const &a, Grid<double> const &b)
{
  REQUIRE(a.dims() == b.dims());
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); i++) {
    m = std::max(m, std::abs(a.data[i] - b.data[i]));
  }
  return m;
}

Grid<double> transpose(Grid<double> const &g)
{
  Grid<double> t(g.width, g.height);
  for (int y = 0; y < g.height; y++) {
    for (int x = 0; x < g.width; x++) {
      t(x, y) = g(y, x);
    }
  }
  return t;
}

} // namespace

TEST_CASE("fft2c matches the direct DFT sum")
{
  for (auto [h, w] : {std::pair{6, 8}, {8, 8}, {5, 7}, {9, 4}}) {
    auto const img = oracle::random_image(h, w, std::uint64_t(h * 100 + w));
    auto const fast = fft2c(img);
    auto const slow = oracle::dft2c(img);
    double err = 0.0;
    for (std::size_t i = 0; i < slow.size(); i++) {
      err = std::max(err, std::abs(fast.coeffs.data[i] - slow.data[i]));
    }
    CHECK(err < 1e-6);
  }
}

TEST_CASE("fft2c round trip, Parseval and DC")
{
  auto const img = oracle::random_image(8, 8, 3);
  auto const back = ifft2c(fft2c(img));
  for (std::size_t i = 0; i < img.size(); i++) {
    CHECK(std::abs(back.data[i] - img.data[i]) < 1e-6);
  }
  auto const odd = oracle::random_image(7, 10, 4);
  double e_img = 0.0;
  for (double v : odd.data) e_img += v * v;
  CHECK(std::abs(spectral_energy(fft2c(odd)) - e_img) <= 1e-6 * e_img);

  Grid<double> c(6, 10, 0.37);
  auto const k = fft2c(c);
  for (int u = 0; u < 6; u++) {
    for (int v = 0; v < 10; v++) {
      double const mag = std::abs(k.coeffs(u, v));
      if (u == 3 && v == 5) {
        CHECK(mag == doctest::Approx(0.37 * std::sqrt(60.0)).epsilon(1e-12));
      } else {
        CHECK(mag < 1e-12);
      }
    }
  }

  auto bad = img;
  bad(2, 2) = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(fft2c(bad), Error);
}

TEST_CASE("central crop window")
{
  KSpaceGrid k{Grid<Cx>(8, 8)};
  for (int u = 0; u < 8; u++) {
    for (int v = 0; v < 8; v++) {
      k.coeffs(u, v) = Cx(u, v);
    }
  }
  auto const c = central_crop(k, {4, 4});
  for (int i = 0; i < 4; i++) {
    for (int j = 0; j < 4; j++) {
      CHECK(c.coeffs(i, j) == Cx(2 + i, 2 + j));
    }
  }
  auto const same = central_crop(k, {8, 8});
  CHECK(same.coeffs == k.coeffs);
  CHECK_THROWS_AS(central_crop(k, {9, 8}), Error);
  // DC stays at index n/2 of the output for both parities.
  CHECK(crop_start(24, 3) + 3 / 2 == 24 / 2);
  CHECK(crop_start(25, 4) + 4 / 2 == 25 / 2);
  CHECK(crop_start(12, 8) == 2);

  Grid<double> dc(8, 8, 0.5);
  auto const kd = fft2c(dc);
  CHECK(spectral_energy(central_crop(kd, {4, 4})) == doctest::Approx(spectral_energy(kd)).epsilon(1e-12));
}

TEST_CASE("degradation matches the brute-force pipeline")
{
  for (double k : {1.5, 2.0, 3.0, 4.0}) {
    for (std::uint64_t seed = 0; seed < 3; seed++) {
      auto const img = oracle::random_image(24, 24, 500 + seed);
      auto const lr = degrade(img, k);
      int const n = int(std::lround(24 / k));
      CHECK(lr.dims() == Dims{n, n});
      CHECK(max_abs(lr, oracle::degrade(img, n, n)) < 1e-6);
    }
  }
  // Odd LR size and non-square input.
  auto const rect = oracle::random_image(24, 12, 9);
  CHECK(max_abs(degrade(rect, 8.0), oracle::degrade(rect, 3, 2)) < 1e-6);
}

TEST_CASE("degradation closed forms")
{
  Grid<double> c(24, 24, 0.42);
  for (double k : {1.0, 1.5, 2.0, 3.0, 4.0, 6.0, 8.0}) {
    auto const lr = degrade(c, k);
    for (double v : lr.data) {
      REQUIRE(std::abs(v - 0.42) < 1e-12);
    }
  }
  auto const img = oracle::random_image(12, 12, 2);
  CHECK(max_abs(degrade(img, 1.0), img) < 1e-6);
  CHECK_THROWS_AS(degrade(img, 0.9), Error);
}

TEST_CASE("retained coefficients cover 1/k^2 of the spectrum")
{
  for (double k : {1.5, 2.0, 3.0, 4.0, 6.0, 8.0}) {
    auto const lr = lr_dims_for({24, 24}, k);
    auto const m = lowpass_mask({24, 24}, lr);
    int ones = 0;
    for (auto v : m.values.data) ones += v;
    CHECK(ones == lr.count());
    CHECK(double(ones) / 576.0 == doctest::Approx(1.0 / (k * k)).epsilon(1e-12));
  }
}

TEST_CASE("lowpass mask layout")
{
  auto const m = lowpass_mask({8, 8}, {4, 4});
  int ones = 0;
  for (int u = 0; u < 8; u++) {
    for (int v = 0; v < 8; v++) {
      bool const in = u >= 2 && u <= 5 && v >= 2 && v <= 5;
      CHECK(m.values(u, v) == (in ? 1 : 0));
      ones += m.values(u, v);
    }
  }
  CHECK(ones == 16);
  auto const all = lowpass_mask({5, 5}, {5, 5});
  for (auto v : all.values.data) CHECK(v == 1);
  auto const m12 = lowpass_mask({12, 12}, {8, 8});
  int n12 = 0;
  for (int u = 0; u < 12; u++) {
    for (int v = 0; v < 12; v++) {
      n12 += m12.values(u, v);
      if (m12.values(u, v)) {
        CHECK(u >= 2);
        CHECK(u < 10);
        CHECK(v >= 2);
        CHECK(v < 10);
      }
    }
  }
  CHECK(n12 == 64);
  CHECK_THROWS_AS(lowpass_mask({8, 8}, {9, 4}), Error);
}

TEST_CASE("mask and crop are consistent")
{
  auto const img = oracle::random_image(24, 24, 17);
  auto const k = fft2c(img);
  for (Dims lr : {Dims{12, 12}, Dims{8, 8}, Dims{3, 3}, Dims{16, 6}}) {
    auto const m = lowpass_mask({24, 24}, lr);
    auto const padded = zero_pad(central_crop(k, lr), {24, 24});
    for (std::size_t i = 0; i < k.coeffs.size(); i++) {
      REQUIRE(padded.coeffs.data[i] == (m.values.data[i] ? k.coeffs.data[i] : Cx{}));
    }
  }
}

TEST_CASE("retained energy is monotone in the factor")
{
  auto const img = oracle::random_image(24, 24, 23);
  auto const k = fft2c(img);
  double prev = std::numeric_limits<double>::infinity();
  for (double f : {1.0, 1.5, 2.0, 3.0, 4.0, 6.0, 8.0}) {
    double const e = spectral_energy(central_crop(k, lr_dims_for({24, 24}, f)));
    CHECK(e <= prev);
    prev = e;
  }
}

TEST_CASE("transpose commutes with degradation, flips do not in general")
{
  auto const img = oracle::random_image(24, 24, 31);
  for (double k : {1.5, 2.0, 3.0}) {
    CHECK(max_abs(degrade(transpose(img), k), transpose(degrade(img, k))) < 1e-12);
  }
  Grid<double> flipped(24, 24);
  for (int y = 0; y < 24; y++) {
    for (int x = 0; x < 24; x++) {
      flipped(y, x) = img(23 - y, x);
    }
  }
  auto const a = degrade(flipped, 2.0);
  auto const b = degrade(img, 2.0);
  Grid<double> bf(12, 12);
  for (int y = 0; y < 12; y++) {
    for (int x = 0; x < 12; x++) {
      bf(y, x) = b(11 - y, x);
    }
  }
  CHECK(max_abs(a, bf) > 1e-3);
}
