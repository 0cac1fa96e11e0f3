#include "arbsr/phantom.hpp"

#include "arbsr/error.hpp"
#include "arbsr/rng.hpp"

#include <cmath>
#include <fmt/format.h>
#include <numbers>

namespace arbsr {

std::string to_string(Contrast c) { return c == Contrast::Target ? "target" : "reference"; }

Contrast parse_contrast(std::string const &s)
{
  if (s == "target") {
    return Contrast::Target;
  }
  if (s == "reference") {
    return Contrast::Reference;
  }
  fail(ErrorKind::InvalidArgument, fmt::format("unknown contrast '{}'", s));
}

bool Ellipse::contains(double y, double x) const
{
  if (ay <= 0 || ax <= 0) {
    return false;
  }
  double const dy = y - cy;
  double const dx = x - cx;
  double const c = std::cos(angle);
  double const s = std::sin(angle);
  double const u = dx * c + dy * s;
  double const v = -dx * s + dy * c;
  return (u / ax) * (u / ax) + (v / ay) * (v / ay) <= 1.0;
}

std::vector<double> default_target_intensities() { return {0.0, 0.35, 0.45, 0.6, 1.0, 0.8}; }

std::vector<double> default_reference_intensities() { return {0.0, 0.85, 0.7, 0.8, 0.9, 0.55}; }

namespace {

void validate(PhantomSpec const &spec)
{
  if (spec.canvas.h <= 0 || spec.canvas.w <= 0 || spec.canvas.h % 24 != 0 ||
      spec.canvas.w % 24 != 0) {
    fail(
      ErrorKind::InvalidArgument,
      fmt::format(
        "phantom canvas {}x{} must be positive multiples of 24", spec.canvas.h, spec.canvas.w));
  }
  if (spec.n_ellipses < 3) {
    fail(ErrorKind::InvalidArgument, fmt::format("need at least 3 ellipses, got {}", spec.n_ellipses));
  }
  if (spec.intensity_target.size() != spec.intensity_reference.size() ||
      spec.intensity_target.size() < 3) {
    fail(ErrorKind::InvalidArgument, "intensity maps must have equal length of at least 3 classes");
  }
  for (auto const *map : {&spec.intensity_target, &spec.intensity_reference}) {
    for (double v : *map) {
      if (!(v >= 0.0 && v <= 1.0)) {
        fail(ErrorKind::InvalidArgument, "class intensities must lie in [0, 1]");
      }
    }
  }
  if (spec.slice_position < -1.0 || spec.slice_position > 1.0) {
    fail(ErrorKind::InvalidArgument, "slice_position must lie in [-1, 1]");
  }
}

SliceImage paint(
  PhantomSpec const &spec, Grid<std::uint8_t> const &classes, std::vector<double> const &map,
  Contrast contrast)
{
  double peak = 0.0;
  for (auto c : classes.data) {
    peak = std::max(peak, map[c]);
  }
  if (peak <= 0.0) {
    fail(ErrorKind::InvalidArgument, "phantom has no positive intensity to normalize by");
  }
  SliceImage img;
  img.pixels = Grid<float>(classes.height, classes.width);
  for (std::size_t i = 0; i < classes.size(); i++) {
    img.pixels.data[i] = float(map[classes.data[i]] / peak);
  }
  img.contrast = contrast;
  img.subject_id = spec.subject_id;
  img.slice_id = spec.slice_id;
  img.norm_max = peak;
  return img;
}

} // namespace

std::vector<Ellipse> phantom_geometry(PhantomSpec const &spec)
{
  validate(spec);
  Rng rng(derive_seed({spec.seed, 0x70686e74}));
  int const n_classes = int(spec.intensity_target.size());

  // Subject pose.
  double const theta = uniform(rng, -0.26, 0.26);
  double const ty = uniform(rng, -0.05, 0.05);
  double const tx = uniform(rng, -0.05, 0.05);
  double const zoom = uniform(rng, 0.9, 1.0);

  struct Proto
  {
    Ellipse e;
    double extent; // half-thickness along the slice axis
  };
  std::vector<Proto> protos;
  protos.push_back({{0.0, 0.0, 0.88, 0.70, 0.0, 1}, 1.4});
  protos.push_back({{-0.02, 0.0, 0.80, 0.62, 0.0, std::min(2, n_classes - 1)}, 1.25});
  for (int i = 2; i < spec.n_ellipses; i++) {
    Ellipse e;
    e.cy = uniform(rng, -0.55, 0.55);
    e.cx = uniform(rng, -0.42, 0.42);
    e.ay = uniform(rng, 0.06, 0.28);
    e.ax = uniform(rng, 0.06, 0.28);
    e.angle = uniform(rng, 0.0, std::numbers::pi);
    e.tissue = n_classes > 3 ? 3 + uniform_int(rng, n_classes - 3) : n_classes - 1;
    protos.push_back({e, uniform(rng, 0.5, 1.5)});
  }

  double const c = std::cos(theta);
  double const s = std::sin(theta);
  std::vector<Ellipse> out;
  out.reserve(protos.size());
  for (auto const &[e, extent] : protos) {
    double const z = spec.slice_position / extent;
    double const section = z * z < 1.0 ? std::sqrt(1.0 - z * z) : 0.0;
    Ellipse t = e;
    // Rotate the scaled center about the canvas origin, then translate.
    double const y = zoom * e.cy;
    double const x = zoom * e.cx;
    t.cy = s * x + c * y + ty;
    t.cx = c * x - s * y + tx;
    t.ay = zoom * e.ay * section;
    t.ax = zoom * e.ax * section;
    t.angle = e.angle + theta;
    out.push_back(t);
  }
  return out;
}

PhantomPair generate_phantom(PhantomSpec const &spec)
{
  auto ellipses = phantom_geometry(spec);
  int const H = spec.canvas.h;
  int const W = spec.canvas.w;
  Grid<std::uint8_t> classes(H, W, 0);
  for (int i = 0; i < H; i++) {
    double const y = (i + 0.5) / H * 2.0 - 1.0;
    for (int j = 0; j < W; j++) {
      double const x = (j + 0.5) / W * 2.0 - 1.0;
      for (auto const &e : ellipses) {
        if (e.contains(y, x)) {
          classes(i, j) = std::uint8_t(e.tissue);
        }
      }
    }
  }
  PhantomPair pair;
  pair.target = paint(spec, classes, spec.intensity_target, Contrast::Target);
  pair.reference = paint(spec, classes, spec.intensity_reference, Contrast::Reference);
  pair.classes = std::move(classes);
  pair.ellipses = std::move(ellipses);
  return pair;
}

} // namespace arbsr
