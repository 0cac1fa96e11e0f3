#pragma once

#include "curriculum.hpp"
#include "dataset.hpp"
#include "kspace.hpp"
#include "losses.hpp"
#include "model.hpp"

#include <cstdint>
#include <filesystem>
#include <json.hpp>
#include <limits>
#include <optional>
#include <span>
#include <vector>

namespace arbsr {

struct TrainConfig
{
  ModelConfig model;
  CurriculumSchedule schedule = desk_schedule();
  Strategy strategy = Strategy::CurRandom;
  bool continuous_ref = false;
  int batch = 6;
  int lr_patch = 32;
  int steps_per_epoch = 20;
  LossOptions loss;
  std::uint64_t seed = 0;
  bool augment = true;
  std::vector<double> valid_scales{2.0, 4.0};
  int valid_max_slices = 0; // 0: whole valid split

  bool operator==(TrainConfig const &) const = default;
};

void to_json(nlohmann::json &j, TrainConfig const &c);
void from_json(nlohmann::json const &j, TrainConfig &c);
TrainConfig load_train_config(std::filesystem::path const &file);

struct AdamConfig
{
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// One bias-corrected Adam step; `t` is the 1-based step count after increment.
template <typename T>
void adam_update(
  std::span<T> params, std::span<T const> grads, std::span<T> m, std::span<T> v, std::int64_t t,
  double lr, AdamConfig const &cfg = {});

struct TrainState
{
  ParameterSet<float> params;
  Buffer<float> adam_m, adam_v;
  std::int64_t step = 0;
  int epoch = 0;
  Rng rng;
  double best_valid_psnr = -std::numeric_limits<double>::infinity();
};

TrainState init_state(ModelConfig const &cfg, std::uint64_t seed);

struct Sample
{
  std::size_t pair = 0;
  int y0 = 0, x0 = 0;
  int transform = 0;
  Grid<double> hr;     // target HR window
  Grid<double> ref_hr; // co-located reference window at HR
  Grid<double> tar_lr;
  Grid<double> ref;    // reference fed to the model (HR, LR or custom size)
  FrequencyMask mask;
};

struct Batch
{
  TaskDraw draw;
  ScaleTask task;
  std::vector<Sample> samples;
};

// ScaleTask for an h x h HR window with `lr_patch` LR pixels per side.
ScaleTask patch_task(TaskDraw const &draw, int lr_patch);
bool task_feasible(std::vector<SlicePair> const &pairs, TaskDraw const &draw, int lr_patch);

// Dihedral transform t in [0, 8): bit 2 transposes, bit 0 flips rows, bit 1
// flips columns, applied in that order.
Grid<double> dihedral(Grid<double> const &img, int t);

// Recomputes the LR target, the model reference and the mask from the HR
// windows of `s`.
void derive_views(Sample &s, ScaleTask const &task);

// Applies transform t to the HR target and reference windows, then re-derives
// the LR views by degradation so the k-space crop stays exact.
Sample augment(Sample const &s, ScaleTask const &task, int t);
Sample augment(Sample const &s, ScaleTask const &task, Rng &rng);

// Draws batch samples; sample i uses its own stream derived from (seed, i).
Batch sample_batch(
  std::vector<SlicePair> const &pairs, TaskDraw const &draw, std::uint64_t seed, int batch = 6,
  int lr_patch = 32, bool augment_samples = true);

struct StepOptions
{
  double lr = 1e-4;
  LossOptions loss;
  AdamConfig adam;
};

// Mean loss over the batch, gradients averaged, one Adam update.
LossReport train_step(ModelConfig const &cfg, TrainState &state, Batch const &batch, StepOptions const &opts);

// Checkpoint archive: "DARBCKPT", u32 version, u32 section count, then
// sections (u32 name length, name, u64 size, payload).
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint
{
  TrainConfig config;
  TrainState state;
};

void save_checkpoint(Checkpoint const &ckpt, std::filesystem::path const &path);
Checkpoint load_checkpoint(std::filesystem::path const &path);
// Fails with ConfigConflict when the stored model config differs.
Checkpoint load_checkpoint(std::filesystem::path const &path, ModelConfig const &expected);
std::string checkpoint_hash(std::filesystem::path const &path);

// Mean PSNR of SR_tar over pairs x scales with HR reference.
double validation_psnr(
  ModelConfig const &cfg, ParameterSet<float> const &params, std::vector<SlicePair> const &pairs,
  std::vector<double> const &scales);

struct StepRecord
{
  int epoch = 0;
  std::int64_t step = 0;
  Stage stage = Stage::WarmUp;
  double lr = 0.0;
  LossReport loss;
  double s = 0.0;
  RefMode ref_mode = RefMode::HR;
};

void to_json(nlohmann::json &j, StepRecord const &r);

class Trainer
{
public:
  Trainer(TrainConfig cfg, std::filesystem::path data_dir, std::filesystem::path out_dir);

  void resume(std::filesystem::path const &ckpt);
  // Trains until the schedule ends or `stop_epoch` epochs have completed.
  std::vector<StepRecord> run(std::optional<int> stop_epoch = std::nullopt);

  TrainState const &state() const { return state_; }
  TrainConfig const &config() const { return cfg_; }

private:
  TrainConfig cfg_;
  std::filesystem::path out_dir_;
  std::vector<SlicePair> train_, valid_;
  TrainState state_;
};

} // namespace arbsr
