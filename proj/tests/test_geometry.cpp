#include "arbsr/error.hpp"
#include "arbsr/geometry.hpp"
#include "arbsr/rng.hpp"

#include <doctest.h>

#include <cmath>

using namespace arbsr;

namespace {

Tensor<double> random_tensor(int c, int h, int w, std::uint64_t seed)
{
  Rng rng(seed);
  Tensor<double> t(c, h, w);
  for (auto &v : t.data) v = uniform(rng, -1, 1);
  return t;
}

} // namespace

TEST_CASE("nearest upsampling")
{
  Tensor<double> f(1, 2, 2);
  f.data = {1, 2, 3, 4};
  auto const up = nearest_upsample(f, {4, 4});
  double const want[4][4] = {{1, 1, 2, 2}, {1, 1, 2, 2}, {3, 3, 4, 4}, {3, 3, 4, 4}};
  for (int i = 0; i < 4; i++) {
    for (int j = 0; j < 4; j++) {
      CHECK(up(0, i, j) == want[i][j]);
    }
  }
  auto const t = random_tensor(3, 5, 7, 1);
  CHECK(nearest_upsample(t, {5, 7}) == t);
  CHECK(nearest_source(0, 3, 2) == 0);
  CHECK(nearest_source(1, 3, 2) == 1);
  CHECK(nearest_source(2, 3, 2) == 1);
  // Down-mapping stays within the source.
  for (int i = 0; i < 3; i++) {
    CHECK(nearest_source(i, 3, 8) < 8);
  }
  CHECK_THROWS_AS(nearest_upsample(t, {0, 3}), Error);
}

TEST_CASE("nearest upsampling commutes with channel permutation")
{
  auto const t = random_tensor(3, 4, 6, 2);
  Tensor<double> p(3, 4, 6);
  int const perm[3] = {2, 0, 1};
  for (int c = 0; c < 3; c++) {
    std::copy(t.channel(perm[c]), t.channel(perm[c]) + t.plane(), p.channel(c));
  }
  auto const a = nearest_upsample(t, {9, 13});
  auto const b = nearest_upsample(p, {9, 13});
  for (int c = 0; c < 3; c++) {
    CHECK(std::equal(b.channel(c), b.channel(c) + b.plane(), a.channel(perm[c])));
  }
  auto const once = nearest_upsample(t, {4, 6});
  CHECK(nearest_upsample(once, {4, 6}) == once);
}

TEST_CASE("integer factors map each cell to s^2 pixels")
{
  for (int s : {2, 3, 4}) {
    int const h = 5;
    std::vector<int> count(h * h, 0);
    for (int i = 0; i < h * s; i++) {
      for (int j = 0; j < h * s; j++) {
        count[nearest_source(i, h * s, h) * h + nearest_source(j, h * s, h)]++;
      }
    }
    for (int c : count) CHECK(c == s * s);
  }
}

TEST_CASE("upsample backward is the adjoint")
{
  auto const x = random_tensor(2, 3, 5, 3);
  auto const g = random_tensor(2, 7, 11, 4);
  auto const ux = nearest_upsample(x, {7, 11});
  auto const bg = nearest_upsample_backward(g, {3, 5});
  double lhs = 0, rhs = 0;
  for (std::size_t i = 0; i < ux.size(); i++) lhs += ux.data[i] * g.data[i];
  for (std::size_t i = 0; i < x.size(); i++) rhs += x.data[i] * bg.data[i];
  CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
}

TEST_CASE("3x3 unfolding")
{
  Tensor<double> one(1, 1, 1, 0.7);
  auto const u1 = unfold3x3(one);
  CHECK(u1.channels == 9);
  for (double v : u1.data) CHECK(v == 0.7);

  Tensor<double> f(1, 2, 2);
  f.data = {1, 2, 3, 4};
  auto const u = unfold3x3(f);
  CHECK(u(0, 0, 0) == 1); // offset (-1,-1) clamps to (0,0)
  CHECK(u(8, 0, 0) == 4); // offset (+1,+1)
  CHECK(u(2, 1, 0) == 2); // offset (-1,+1) from (1,0) reaches (0,1)
  CHECK(u(6, 0, 1) == 3); // offset (+1,-1) from (0,1) reaches (1,0)

  auto const t = random_tensor(3, 4, 5, 5);
  auto const ut = unfold3x3(t);
  CHECK(ut.channels == 27);
  for (int c = 0; c < 3; c++) {
    CHECK(std::equal(t.channel(c), t.channel(c) + t.plane(), ut.channel(4 * 3 + c)));
  }
  for (int b = 0; b < 9; b++) {
    int const dy = b / 3 - 1, dx = b % 3 - 1;
    for (int c = 0; c < 3; c++) {
      for (int y = 0; y < 4; y++) {
        for (int x = 0; x < 5; x++) {
          REQUIRE(ut(b * 3 + c, y, x) == t(c, std::clamp(y + dy, 0, 3), std::clamp(x + dx, 0, 4)));
        }
      }
    }
  }
}

TEST_CASE("unfold backward is the adjoint")
{
  auto const x = random_tensor(2, 4, 3, 6);
  auto const g = random_tensor(18, 4, 3, 7);
  auto const ux = unfold3x3(x);
  auto const bg = unfold3x3_backward(g, 2);
  double lhs = 0, rhs = 0;
  for (std::size_t i = 0; i < ux.size(); i++) lhs += ux.data[i] * g.data[i];
  for (std::size_t i = 0; i < x.size(); i++) rhs += x.data[i] * bg.data[i];
  CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
}

TEST_CASE("relative coordinates")
{
  auto const z = relative_coords({6, 9}, {6, 9});
  for (double v : z.data) CHECK(v == 0.0);

  auto const p = relative_coords({4, 4}, {2, 2});
  double const want[4] = {-0.5, 0.5, -0.5, 0.5};
  for (int i = 0; i < 4; i++) {
    CHECK(p(0, i, 0) == doctest::Approx(want[i]).epsilon(1e-15));
    CHECK(p(1, 0, i) == doctest::Approx(want[i]).epsilon(1e-15));
  }
  for (auto [H, h] : {std::pair{17, 5}, {64, 32}, {81, 24}, {5, 17}, {3, 2}}) {
    auto const m = relative_coords({H, H}, {h, h});
    for (double v : m.data) REQUIRE(std::abs(v) <= 1.0);
  }
  for (auto [H, h] : {std::pair{12, 4}, {15, 5}, {64, 32}}) {
    auto const m = relative_coords({H, H}, {h, h});
    double sum = 0;
    for (double v : m.data) sum += v;
    CHECK(std::abs(sum) < 1e-9);
  }
}

TEST_CASE("effective scale")
{
  auto a = effective_scale(32, 2.0);
  CHECK(a.hr_size == 64);
  CHECK(a.s_exact == 2.0);
  a = effective_scale(32, 1.0);
  CHECK(a.hr_size == 32);
  CHECK(a.s_exact == 1.0);
  a = effective_scale(32, 1.7);
  CHECK(a.hr_size == 54);
  CHECK(a.s_exact == 1.6875);
  CHECK_THROWS_AS(effective_scale(0, 2.0), Error);
  CHECK_THROWS_AS(effective_scale(8, 0.5), Error);
}

TEST_CASE("scale tasks")
{
  auto const t = make_task({64, 48}, {32, 24}, {48, 36}, RefMode::Custom);
  CHECK(t.s_tar() == 2.0);
  CHECK(t.s_ref() == doctest::Approx(4.0 / 3.0));
  CHECK_THROWS_AS(make_task({64, 48}, {32, 32}, {64, 48}, RefMode::HR), Error); // anisotropic target
  CHECK_THROWS_AS(make_task({64, 64}, {2, 2}, {64, 64}, RefMode::HR), Error);   // s = 32
  CHECK(parse_ref_mode("lr") == RefMode::LR);
  CHECK(parse_ref_mode(to_string(RefMode::Custom)) == RefMode::Custom);
  CHECK_THROWS_AS(parse_ref_mode("mid"), Error);
}
