#include "arbsr/curriculum.hpp"
#include "arbsr/error.hpp"

#include <doctest.h>

#include <cmath>
#include <map>

using namespace arbsr;

TEST_CASE("stage and learning rate at reference epochs")
{
  auto const s = full_schedule();
  CHECK(s.warmup_epochs == 10);
  CHECK(s.prelearn_epochs == 40);
  CHECK(s.fulltrain_epochs == 150);
  struct Want
  {
    int epoch;
    Stage stage;
    double lr;
  };
  for (auto w : {Want{5, Stage::WarmUp, 5e-5}, {20, Stage::PreLearning, 1e-4}, {60, Stage::FullTraining, 1e-4},
                 {95, Stage::FullTraining, 5e-5}}) {
    auto const p = stage_for_epoch(s, w.epoch);
    CHECK(p.stage == w.stage);
    CHECK(p.lr == w.lr);
  }
  // Boundaries.
  CHECK(stage_for_epoch(s, 9).stage == Stage::WarmUp);
  CHECK(stage_for_epoch(s, 10).stage == Stage::PreLearning);
  CHECK(stage_for_epoch(s, 49).stage == Stage::PreLearning);
  CHECK(stage_for_epoch(s, 50).stage == Stage::FullTraining);
  CHECK(stage_for_epoch(s, 89).lr == 1e-4);
  CHECK(stage_for_epoch(s, 90).lr == 5e-5);
  CHECK(stage_for_epoch(s, 130).lr == 2.5e-5);
  CHECK(stage_for_epoch(s, 199).lr == 1.25e-5);
  CHECK_THROWS_AS(stage_for_epoch(s, 200), Error);
  CHECK_THROWS_AS(stage_for_epoch(s, -1), Error);
}

TEST_CASE("stage samplers")
{
  auto const s = full_schedule();
  auto const w = stage_for_epoch(s, 0);
  CHECK(w.scale_sampler == ScaleSampler::FixedSet);
  CHECK(w.ref_sampler == RefSampler::AlwaysHR);
  auto const p = stage_for_epoch(s, 10);
  CHECK(p.scale_sampler == ScaleSampler::UniformGrid);
  CHECK(p.ref_sampler == RefSampler::AlwaysHR);
  auto const f = stage_for_epoch(s, 50);
  CHECK(f.ref_sampler == RefSampler::UniformLRHR);
  CHECK(stage_for_epoch(s, 50, Strategy::CurRandom, true).ref_sampler == RefSampler::Continuous);
  CHECK(f.epoch_in_stage == 0);

  // Single-stage strategies.
  for (auto [st, ref] : {std::pair{Strategy::Random, RefSampler::UniformLRHR}, {Strategy::FixedHR, RefSampler::AlwaysHR},
                         {Strategy::FixedLR, RefSampler::AlwaysLR}}) {
    auto const q = stage_for_epoch(s, 5, st);
    CHECK(q.stage == Stage::FullTraining);
    CHECK(q.scale_sampler == ScaleSampler::UniformGrid);
    CHECK(q.ref_sampler == ref);
    CHECK(q.lr == 1e-4);
    CHECK(stage_for_epoch(s, 45, st).lr == 5e-5);
  }
  for (auto st : {Strategy::CurRandom, Strategy::Random, Strategy::FixedHR, Strategy::FixedLR}) {
    CHECK(parse_strategy(to_string(st)) == st);
  }
  CHECK_THROWS_AS(parse_strategy("fixed"), Error);
}

TEST_CASE("schedule validation and serialization")
{
  auto s = desk_schedule();
  CHECK(s.total_epochs() == 20);
  nlohmann::json j = s;
  CHECK(j.get<CurriculumSchedule>() == s);
  s.halving_period = 0;
  CHECK_THROWS_AS(s.validate(), Error);
  CurriculumSchedule empty;
  empty.warmup_epochs = empty.prelearn_epochs = empty.fulltrain_epochs = 0;
  CHECK_THROWS_AS(empty.validate(), Error);
}

TEST_CASE("scale grid")
{
  auto const g = scale_grid();
  REQUIRE(g.size() == 31);
  CHECK(g.front() == 1.0);
  CHECK(g.back() == 4.0);
  for (std::size_t i = 0; i < g.size(); i++) {
    CHECK(std::abs(g[i] - (1.0 + 0.1 * double(i))) < 1e-12);
  }
  CHECK(warmup_scales() == std::vector<double>{2.0, 3.0, 4.0});
}

TEST_CASE("sampler statistics over 1e5 draws")
{
  auto const s = full_schedule();
  Rng rng(123);
  int const n = 100000;

  std::map<double, int> warm;
  for (int i = 0; i < n; i++) {
    auto const d = sample_task(stage_for_epoch(s, 3), rng);
    CHECK_FALSE(d.ref_mode != RefMode::HR);
    warm[d.s_nominal]++;
  }
  REQUIRE(warm.size() == 3);
  for (auto [scale, c] : warm) {
    // 5 sigma of a binomial(n, 1/3)
    CHECK(std::abs(c - n / 3.0) < 5 * std::sqrt(n * (1 / 3.0) * (2 / 3.0)));
  }

  std::map<long, int> pre;
  for (int i = 0; i < n; i++) {
    auto const d = sample_task(stage_for_epoch(s, 30), rng);
    REQUIRE(d.ref_mode == RefMode::HR);
    REQUIRE(d.s_ref_nominal == 1.0);
    pre[std::lround(d.s_nominal * 10)]++;
  }
  REQUIRE(pre.size() == 31);
  double const p = 1.0 / 31.0;
  for (auto [k, c] : pre) {
    CHECK(std::abs(c - n * p) < 5 * std::sqrt(n * p * (1 - p)));
  }

  int lr = 0;
  for (int i = 0; i < n; i++) {
    auto const d = sample_task(stage_for_epoch(s, 100), rng);
    REQUIRE((d.ref_mode == RefMode::LR || d.ref_mode == RefMode::HR));
    if (d.ref_mode == RefMode::LR) {
      lr++;
      REQUIRE(d.s_ref_nominal == d.s_nominal);
    }
  }
  CHECK(std::abs(lr - n / 2.0) < 5 * std::sqrt(n * 0.25));

  for (int i = 0; i < 1000; i++) {
    auto const d = sample_task(stage_for_epoch(s, 100, Strategy::CurRandom, true), rng);
    REQUIRE(d.ref_mode == RefMode::Custom);
    REQUIRE(d.s_ref_nominal >= 1.0);
    REQUIRE(d.s_ref_nominal <= 4.0);
  }
}

TEST_CASE("sampling is a pure function of the rng state")
{
  auto const st = stage_for_epoch(full_schedule(), 70);
  Rng a(5), b(5);
  for (int i = 0; i < 200; i++) {
    auto const x = sample_task(st, a);
    auto const y = sample_task(st, b);
    REQUIRE(x.s_nominal == y.s_nominal);
    REQUIRE(x.ref_mode == y.ref_mode);
  }
}
