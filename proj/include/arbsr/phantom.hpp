#pragma once

#include "tensor.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace arbsr {

enum class Contrast { Target, Reference };

std::string to_string(Contrast c);
Contrast parse_contrast(std::string const &s);

// One normalized magnitude image. Pixels lie in [0, 1]; norm_max holds the
// maximum before normalization so intensities can be restored.
struct SliceImage
{
  Grid<float> pixels;
  Contrast contrast = Contrast::Target;
  std::string subject_id;
  std::string slice_id;
  double norm_max = 1.0;

  Dims dims() const { return pixels.dims(); }
  bool operator==(SliceImage const &) const = default;
};

struct Ellipse
{
  double cy = 0, cx = 0; // center in normalized [-1, 1] canvas coordinates
  double ay = 0, ax = 0; // semi-axes
  double angle = 0;      // radians, counter-clockwise
  int tissue = 1;        // class index (0 is background)

  // Pixel-center inclusion test in normalized coordinates.
  bool contains(double y, double x) const;
};

struct PhantomSpec
{
  std::uint64_t seed = 0;
  Dims canvas{96, 96};
  int n_ellipses = 10;
  // Per tissue class intensity, index 0 is background. Both maps must have the
  // same length.
  std::vector<double> intensity_target;
  std::vector<double> intensity_reference;
  // Cross-section position in [-1, 1]; shrinks the anatomy like moving away
  // from the mid-slice. Zero gives the full-size configuration.
  double slice_position = 0.0;
  std::string subject_id = "sub000";
  std::string slice_id = "sl00";
};

// Default class intensities loosely modelled on T2 (target) and PD (reference)
// contrast: background, scalp, white matter, grey matter, CSF, lesion.
std::vector<double> default_target_intensities();
std::vector<double> default_reference_intensities();

struct PhantomPair
{
  SliceImage target;
  SliceImage reference;
  Grid<std::uint8_t> classes; // shared tissue-class index per pixel
  std::vector<Ellipse> ellipses;
};

// Ellipses are painted in order, later ones overwriting earlier ones, sampled
// at pixel centers without anti-aliasing.
PhantomPair generate_phantom(PhantomSpec const &spec);

// Geometry only; exposed so the class mask can be checked independently.
std::vector<Ellipse> phantom_geometry(PhantomSpec const &spec);

} // namespace arbsr
