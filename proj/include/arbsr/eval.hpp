#pragma once

#include "dataset.hpp"
#include "geometry.hpp"
#include "model.hpp"
#include "trainer.hpp"

#include <array>
#include <filesystem>
#include <functional>
#include <json.hpp>
#include <memory>
#include <string>
#include <vector>

namespace arbsr {

// Interpolation baselines on the degradation's sampling grid: HR pixel i
// sits at LR coordinate i * lr / hr (the k-space crop keeps sample 0 fixed).
Grid<double> upsample_nearest(Grid<double> const &lr, Dims hr);
// Keys cubic convolution (a = -0.5), separable, edge samples clamped.
Grid<double> upsample_bicubic(Grid<double> const &lr, Dims hr);

struct ErrorMap
{
  Grid<double> abs;
  double max = 0.0;
};

ErrorMap error_map(Grid<double> const &sr, Grid<double> const &hr);
// Black-red-yellow-white ramp over [0, 1].
std::array<std::uint8_t, 3> colormap(double t);
// Renders |sr - hr| / vmax through the colormap; vmax <= 0 uses the map max.
std::vector<std::uint8_t> error_map_png(ErrorMap const &m, double vmax = 0.0);

struct Score
{
  double psnr = 0.0;
  double ssim = 0.0;
};

struct EvalRow
{
  double scale = 0.0;
  bool out_of_distribution = false;
  std::vector<Score> scores; // aligned with EvalReport::methods
};

struct EvalReport
{
  std::string label;
  std::string ref_mode;
  int slices = 0;
  std::vector<std::string> methods;
  std::vector<EvalRow> rows;
  std::vector<Score> averages; // arithmetic mean over rows, per method
};

void to_json(nlohmann::json &j, EvalReport const &r);
std::string to_markdown(EvalReport const &r);
std::string to_markdown(std::vector<EvalReport> const &reports);
void write_report(EvalReport const &r, std::filesystem::path const &out);
void write_reports(std::vector<EvalReport> const &reports, std::filesystem::path const &out);

using Method =
  std::function<Grid<double>(Grid<double> const &tar_lr, Grid<double> const &ref, ScaleTask const &task, Grid<double> const &hr)>;

struct NamedMethod
{
  std::string name;
  Method fn;
};

std::vector<double> default_eval_scales();

struct EvalOptions
{
  std::vector<double> scales = default_eval_scales();
  RefMode ref_mode = RefMode::HR;
  std::string label = "eval";
  bool clamp = true;                      // clip outputs to [0, 1] before scoring
  std::filesystem::path error_map_dir;    // empty: no error maps
  double error_map_vmax = 0.0;
};

// Scales above this count as out-of-distribution.
inline constexpr double kTrainScaleMax = 4.0;

EvalReport evaluate(std::vector<SlicePair> const &pairs, std::vector<NamedMethod> const &methods, EvalOptions const &opts);

std::vector<NamedMethod> baseline_methods();
NamedMethod model_method(std::shared_ptr<DualArbNet<float> const> model);
EvalReport eval_model(
  std::shared_ptr<DualArbNet<float> const> model, std::vector<SlicePair> const &pairs, EvalOptions const &opts);

struct AblationVariant
{
  std::string label;
  TrainConfig config;
  std::vector<RefMode> test_refs;
};

// Flags: "strategies", "no-k-loss", "no-ref", "no-scale", "no-coord".
std::vector<std::string> ablation_flags();
std::vector<AblationVariant> ablation_variants(TrainConfig const &base, std::vector<std::string> const &flags);

// Trains each variant for `epochs` epochs into out_dir/<label>/ and evaluates
// it on the test split once per test reference mode.
std::vector<EvalReport> ablation_suite(
  std::vector<AblationVariant> const &variants, std::filesystem::path const &data_dir,
  std::filesystem::path const &out_dir, int epochs, EvalOptions const &eval_opts, int max_test_slices = 0);

} // namespace arbsr
