#pragma once

#include "model.hpp"

#include <memory>

namespace arbsr {

// Fused features of one whole slice at one scale. F^(0) holds the upsampled
// target and reference features, which the skip branch reads directly.
struct PreparedSlice
{
  ScaleTask task;
  FusedFeatures<float> fused;

  std::size_t bytes() const;
};

// HR dims = round(tar * s) per axis; the reference scale follows from its dims.
ScaleTask inference_task(Dims tar, Dims ref, double s, RefMode mode);

class Reconstructor
{
public:
  explicit Reconstructor(std::shared_ptr<DualArbNet<float> const> model);

  DualArbNet<float> const &model() const { return *model_; }

  PreparedSlice prepare(Grid<double> const &tar_lr, Grid<double> const &ref, ScaleTask const &task) const;
  // SR_tar over `rect` of the HR grid. Any rect decodes to exactly the same
  // values as the matching crop of the full grid.
  Grid<double> decode(PreparedSlice const &prepared, Rect rect) const;
  Grid<double> reconstruct(Grid<double> const &tar_lr, Grid<double> const &ref, ScaleTask const &task) const;

private:
  std::shared_ptr<DualArbNet<float> const> model_;
};

} // namespace arbsr
