#pragma once

#include "geometry.hpp"
#include "rng.hpp"

#include <json.hpp>
#include <string>
#include <vector>

namespace arbsr {

enum class Stage { WarmUp, PreLearning, FullTraining };
std::string to_string(Stage s);

enum class ScaleSampler { FixedSet, UniformGrid };
// UniformLRHR draws LR or HR reference with equal probability; Continuous
// draws the reference scale from the same grid as the target.
enum class RefSampler { AlwaysHR, AlwaysLR, UniformLRHR, Continuous };

// Training-strategy rows: the three-stage curriculum or a single stage with
// grid scales and a fixed or random reference resolution.
enum class Strategy { CurRandom, Random, FixedHR, FixedLR };
std::string to_string(Strategy s);
Strategy parse_strategy(std::string const &s);

struct CurriculumSchedule
{
  int warmup_epochs = 10;
  int prelearn_epochs = 40;
  int fulltrain_epochs = 150;
  double warmup_lr = 5e-5;
  double prelearn_lr = 1e-4;
  double fulltrain_lr0 = 1e-4;
  int halving_period = 40;

  int total_epochs() const { return warmup_epochs + prelearn_epochs + fulltrain_epochs; }
  void validate() const;
  bool operator==(CurriculumSchedule const &) const = default;
};

void to_json(nlohmann::json &j, CurriculumSchedule const &s);
void from_json(nlohmann::json const &j, CurriculumSchedule &s);

CurriculumSchedule full_schedule();
CurriculumSchedule desk_schedule();

struct StageParams
{
  Stage stage = Stage::WarmUp;
  ScaleSampler scale_sampler = ScaleSampler::FixedSet;
  RefSampler ref_sampler = RefSampler::AlwaysHR;
  double lr = 0.0;
  int epoch_in_stage = 0;
};

// Piecewise-constant stage lookup. Non-curriculum strategies run the whole
// epoch budget as one full-training stage with the step decay.
StageParams stage_for_epoch(
  CurriculumSchedule const &schedule, int epoch, Strategy strategy = Strategy::CurRandom,
  bool continuous_ref = false);

// 1.0, 1.1, ..., 4.0
std::vector<double> scale_grid();
std::vector<double> warmup_scales();

struct TaskDraw
{
  double s_nominal = 1.0;
  RefMode ref_mode = RefMode::HR;
  double s_ref_nominal = 1.0; // only meaningful for RefMode::Custom
};

TaskDraw sample_task(StageParams const &stage, Rng &rng);

} // namespace arbsr
