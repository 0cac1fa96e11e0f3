#pragma once

#include "phantom.hpp"
#include "tensor.hpp"

#include <complex>
#include <cstdint>

namespace arbsr {

using Cx = std::complex<double>;

// DC-centered spectrum: frequency f along an axis of length N sits at index
// f + N/2 (integer division), for both parities.
struct KSpaceGrid
{
  Grid<Cx> coeffs;

  Dims dims() const { return coeffs.dims(); }
};

struct FrequencyMask
{
  Grid<std::uint8_t> values;
  Dims passband;

  Dims dims() const { return values.dims(); }
};

// First index of the retained centered window of length `keep` inside an axis
// of length `full`. Keeps DC at index keep/2 of the output for every parity;
// for even `keep` this is full/2 - keep/2.
int crop_start(int full, int keep);

// Orthonormal centered transforms.
KSpaceGrid fft2c(Grid<double> const &img);
KSpaceGrid fft2c(SliceImage const &img);
Grid<Cx> ifft2c(KSpaceGrid const &k);

KSpaceGrid central_crop(KSpaceGrid const &k, Dims out);
// Inverse placement of central_crop: embeds the spectrum in a zero grid.
KSpaceGrid zero_pad(KSpaceGrid const &k, Dims out);

Dims lr_dims_for(Dims hr, double k);

// Low-frequency k-space truncation: keeps the central round(H/k) x round(W/k)
// block, returns the magnitude image scaled by sqrt(N_LR/N_HR) so constant
// images keep their value.
Grid<double> degrade(Grid<double> const &hr, double k);
SliceImage degrade(SliceImage const &hr, double k);

FrequencyMask lowpass_mask(Dims hr, Dims lr);

double spectral_energy(KSpaceGrid const &k);

} // namespace arbsr
