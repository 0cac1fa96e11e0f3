#include "arbsr/reconstruct.hpp"

#include "arbsr/error.hpp"

#include <cmath>

namespace arbsr {

std::size_t PreparedSlice::bytes() const
{
  std::size_t n = 0;
  for (auto const &f : fused) {
    n += f.size() * sizeof(float);
  }
  return n;
}

ScaleTask inference_task(Dims tar, Dims ref, double s, RefMode mode)
{
  if (!(s > 0.0) || !std::isfinite(s)) {
    fail(ErrorKind::InvalidArgument, "scale must be positive and finite");
  }
  Dims const hr{int(std::lround(tar.h * s)), int(std::lround(tar.w * s))};
  return make_task(hr, tar, ref, mode);
}

Reconstructor::Reconstructor(std::shared_ptr<DualArbNet<float> const> model)
  : model_{std::move(model)}
{
  if (!model_) {
    fail(ErrorKind::InvalidArgument, "reconstructor needs a model");
  }
}

PreparedSlice Reconstructor::prepare(
  Grid<double> const &tar_lr, Grid<double> const &ref, ScaleTask const &task) const
{
  auto const &m = *model_;
  if (tar_lr.dims() != task.tar || (m.config().use_ref && ref.dims() != task.ref)) {
    fail(ErrorKind::DimensionMismatch, "inputs do not match the scale task");
  }
  auto const up_tar = nearest_upsample(m.encode(tar_lr.cast<float>()), task.hr);
  PreparedSlice p;
  p.task = task;
  if (m.config().use_ref) {
    auto const up_ref = nearest_upsample(m.encode(ref.cast<float>()), task.hr);
    p.fused = m.fuse(up_tar, up_ref);
  } else {
    p.fused = m.fuse(up_tar, up_tar);
  }
  return p;
}

Grid<double> Reconstructor::decode(PreparedSlice const &p, Rect rect) const
{
  auto const &m = *model_;
  auto const inputs = m.decoder_inputs(p.task, rect);
  auto sr = m.idf_decode(p.fused, inputs, Branch::Target, rect);
  auto const s = m.skip(ConstView<float>(p.fused[0]).slice(0, m.config().idf_width()), rect);
  Grid<double> out(rect.h, rect.w);
  for (std::size_t i = 0; i < sr.size(); i++) {
    sr.data[i] += s.data[i];
    out.data[i] = sr.data[i];
  }
  return out;
}

Grid<double> Reconstructor::reconstruct(
  Grid<double> const &tar_lr, Grid<double> const &ref, ScaleTask const &task) const
{
  return decode(prepare(tar_lr, ref, task), Rect{0, 0, task.hr.h, task.hr.w});
}

} // namespace arbsr
