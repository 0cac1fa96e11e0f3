#include "arbsr/curriculum.hpp"

#include "arbsr/error.hpp"

#include <cmath>
#include <fmt/format.h>

namespace arbsr {

std::string to_string(Stage s)
{
  switch (s) {
  case Stage::WarmUp: return "warm-up";
  case Stage::PreLearning: return "pre-learning";
  case Stage::FullTraining: return "full-training";
  }
  return "?";
}

std::string to_string(Strategy s)
{
  switch (s) {
  case Strategy::CurRandom: return "cur-random";
  case Strategy::Random: return "random";
  case Strategy::FixedHR: return "fixed-hr";
  case Strategy::FixedLR: return "fixed-lr";
  }
  return "?";
}

Strategy parse_strategy(std::string const &s)
{
  for (auto v : {Strategy::CurRandom, Strategy::Random, Strategy::FixedHR, Strategy::FixedLR}) {
    if (s == to_string(v)) {
      return v;
    }
  }
  fail(ErrorKind::InvalidArgument, fmt::format("unknown strategy '{}'", s));
}

void CurriculumSchedule::validate() const
{
  if (warmup_epochs < 0 || prelearn_epochs < 0 || fulltrain_epochs < 0) {
    fail(ErrorKind::InvalidArgument, "stage epoch counts must be non-negative");
  }
  if (total_epochs() == 0) {
    fail(ErrorKind::InvalidArgument, "schedule has no epochs");
  }
  if (halving_period < 1) {
    fail(ErrorKind::InvalidArgument, "halving period must be positive");
  }
  if (!(warmup_lr > 0 && prelearn_lr > 0 && fulltrain_lr0 > 0)) {
    fail(ErrorKind::InvalidArgument, "learning rates must be positive");
  }
}

void to_json(nlohmann::json &j, CurriculumSchedule const &s)
{
  j = nlohmann::json{
    {"warmup_epochs", s.warmup_epochs},     {"prelearn_epochs", s.prelearn_epochs},
    {"fulltrain_epochs", s.fulltrain_epochs}, {"warmup_lr", s.warmup_lr},
    {"prelearn_lr", s.prelearn_lr},         {"fulltrain_lr0", s.fulltrain_lr0},
    {"halving_period", s.halving_period},
  };
}

void from_json(nlohmann::json const &j, CurriculumSchedule &s)
{
  CurriculumSchedule d;
  s.warmup_epochs = j.value("warmup_epochs", d.warmup_epochs);
  s.prelearn_epochs = j.value("prelearn_epochs", d.prelearn_epochs);
  s.fulltrain_epochs = j.value("fulltrain_epochs", d.fulltrain_epochs);
  s.warmup_lr = j.value("warmup_lr", d.warmup_lr);
  s.prelearn_lr = j.value("prelearn_lr", d.prelearn_lr);
  s.fulltrain_lr0 = j.value("fulltrain_lr0", d.fulltrain_lr0);
  s.halving_period = j.value("halving_period", d.halving_period);
}

CurriculumSchedule full_schedule() { return {}; }

CurriculumSchedule desk_schedule()
{
  CurriculumSchedule s;
  s.warmup_epochs = 2;
  s.prelearn_epochs = 4;
  s.fulltrain_epochs = 14;
  return s;
}

StageParams stage_for_epoch(CurriculumSchedule const &sc, int epoch, Strategy strategy, bool continuous_ref)
{
  sc.validate();
  if (epoch < 0 || epoch >= sc.total_epochs()) {
    fail(
      ErrorKind::OutOfRange,
      fmt::format("epoch {} outside schedule of {} epochs", epoch, sc.total_epochs()));
  }
  auto step_lr = [&](int e) { return sc.fulltrain_lr0 * std::ldexp(1.0, -(e / sc.halving_period)); };
  StageParams p;
  if (strategy != Strategy::CurRandom) {
    p.stage = Stage::FullTraining;
    p.scale_sampler = ScaleSampler::UniformGrid;
    p.ref_sampler = strategy == Strategy::FixedHR  ? RefSampler::AlwaysHR
                    : strategy == Strategy::FixedLR ? RefSampler::AlwaysLR
                                                    : RefSampler::UniformLRHR;
    p.epoch_in_stage = epoch;
    p.lr = step_lr(epoch);
    return p;
  }
  if (epoch < sc.warmup_epochs) {
    p.stage = Stage::WarmUp;
    p.scale_sampler = ScaleSampler::FixedSet;
    p.ref_sampler = RefSampler::AlwaysHR;
    p.lr = sc.warmup_lr;
    p.epoch_in_stage = epoch;
  } else if (epoch < sc.warmup_epochs + sc.prelearn_epochs) {
    p.stage = Stage::PreLearning;
    p.scale_sampler = ScaleSampler::UniformGrid;
    p.ref_sampler = RefSampler::AlwaysHR;
    p.lr = sc.prelearn_lr;
    p.epoch_in_stage = epoch - sc.warmup_epochs;
  } else {
    p.stage = Stage::FullTraining;
    p.scale_sampler = ScaleSampler::UniformGrid;
    p.ref_sampler = continuous_ref ? RefSampler::Continuous : RefSampler::UniformLRHR;
    p.epoch_in_stage = epoch - sc.warmup_epochs - sc.prelearn_epochs;
    p.lr = step_lr(p.epoch_in_stage);
  }
  return p;
}

std::vector<double> scale_grid()
{
  std::vector<double> g;
  for (int i = 10; i <= 40; i++) {
    g.push_back(i / 10.0);
  }
  return g;
}

std::vector<double> warmup_scales() { return {2.0, 3.0, 4.0}; }

TaskDraw sample_task(StageParams const &stage, Rng &rng)
{
  static auto const grid = scale_grid();
  static auto const fixed = warmup_scales();
  auto const &set = stage.scale_sampler == ScaleSampler::FixedSet ? fixed : grid;
  TaskDraw d;
  d.s_nominal = set[uniform_int(rng, int(set.size()))];
  switch (stage.ref_sampler) {
  case RefSampler::AlwaysHR: d.ref_mode = RefMode::HR; break;
  case RefSampler::AlwaysLR: d.ref_mode = RefMode::LR; break;
  case RefSampler::UniformLRHR: d.ref_mode = uniform_int(rng, 2) == 0 ? RefMode::LR : RefMode::HR; break;
  case RefSampler::Continuous:
    d.ref_mode = RefMode::Custom;
    d.s_ref_nominal = grid[uniform_int(rng, int(grid.size()))];
    break;
  }
  if (d.ref_mode == RefMode::HR) {
    d.s_ref_nominal = 1.0;
  } else if (d.ref_mode == RefMode::LR) {
    d.s_ref_nominal = d.s_nominal;
  }
  return d;
}

} // namespace arbsr
