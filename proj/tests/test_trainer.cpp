#include "arbsr/dataset.hpp"
#include "arbsr/error.hpp"
#include "arbsr/trainer.hpp"
#include "gradcheck.hpp"
#include "oracles.hpp"
#include "tmpdir.hpp"

#include <doctest.h>
#include <spdlog/spdlog.h>

#include <fstream>
#include <limits>
#include <set>

using namespace arbsr;

namespace {

ErrorKind kind_of(auto &&f)
{
  try {
    f();
  } catch (Error const &e) {
    return e.kind();
  }
  FAIL("no error raised");
  return ErrorKind::InvalidArgument;
}

TrainConfig tiny_train_config()
{
  TrainConfig c;
  c.model = gradcheck::tiny_config();
  c.schedule.warmup_epochs = 1;
  c.schedule.prelearn_epochs = 1;
  c.schedule.fulltrain_epochs = 1;
  c.batch = 2;
  c.lr_patch = 8;
  c.steps_per_epoch = 2;
  c.seed = 9;
  c.valid_scales = {2.0};
  return c;
}

void small_dataset(std::filesystem::path const &dir)
{
  DatasetOptions o;
  o.subjects = 4;
  o.size = {48, 48};
  o.n_ellipses = 5;
  o.ratios = {0.5, 0.25, 0.25};
  o.seed = 2;
  generate_dataset(o, dir);
}

std::string slurp(std::filesystem::path const &p)
{
  std::ifstream in(p, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(in)), {});
}

void spit(std::filesystem::path const &p, std::string const &s)
{
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out << s;
}

} // namespace

TEST_CASE("adam matches a hand-evaluated step")
{
  std::vector<double> p{1.0, -2.0, 0.5}, m(3, 0.0), v(3, 0.0);
  std::vector<double> g{0.1, -0.5, 0.0};
  adam_update<double>(p, g, m, v, 1, 0.01);
  // First bias-corrected step is lr * g / (|g| + eps).
  CHECK(p[0] == doctest::Approx(1.0 - 0.01 * 0.1 / (0.1 + 1e-8)).epsilon(1e-14));
  CHECK(p[1] == doctest::Approx(-2.0 + 0.01 * 0.5 / (0.5 + 1e-8)).epsilon(1e-14));
  CHECK(p[2] == 0.5);
  CHECK(m[0] == doctest::Approx(0.01).epsilon(1e-14));
  CHECK(v[1] == doctest::Approx(2.5e-4).epsilon(1e-14));
  g = {0.2, 0.0, 0.0};
  adam_update<double>(p, g, m, v, 2, 0.01);
  // m = 0.029, v = 4.999e-5; mhat = 0.029 / 0.19, vhat = 4.999e-5 / 0.001999.
  CHECK(p[0] == doctest::Approx(0.9803481813521252).epsilon(1e-13));
  CHECK(p[1] == doctest::Approx(-1.983299417848203).epsilon(1e-13));
  CHECK(p[2] == 0.5);
  CHECK_THROWS_AS(adam_update<double>(p, g, m, v, 0, 0.01), Error);
}

TEST_CASE("zero gradient leaves parameters and moments unchanged")
{
  std::vector<float> p{0.3f, -0.7f}, g(2, 0.0f), m(2, 0.0f), v(2, 0.0f);
  auto const keep = p;
  for (int t = 1; t <= 5; t++) {
    adam_update<float>(p, g, m, v, t, 1e-3);
  }
  CHECK(p == keep);
  CHECK(m == std::vector<float>(2, 0.0f));
  CHECK(v == std::vector<float>(2, 0.0f));
}

TEST_CASE("dihedral transforms")
{
  auto const img = oracle::random_image(5, 5, 1);
  for (int t : {1, 2, 3, 4}) {
    CHECK(dihedral(dihedral(img, t), t) == img);
  }
  auto const tr = dihedral(img, 4);
  CHECK(tr(1, 3) == img(3, 1));
  auto const fr = dihedral(img, 1);
  CHECK(fr(0, 2) == img(4, 2));
  std::set<Buffer<double>> distinct;
  for (int t = 0; t < 8; t++) {
    distinct.insert(dihedral(img, t).data);
  }
  CHECK(distinct.size() == 8);
  CHECK_THROWS_AS(dihedral(img, 8), Error);
}

TEST_CASE("augmentation re-degrades the transformed windows")
{
  TempDir dir;
  small_dataset(dir.path);
  auto const pairs = load_pairs(load_manifest(dir / "train.json", Split::Train));
  TaskDraw d;
  d.s_nominal = 2.0;
  d.ref_mode = RefMode::LR;
  d.s_ref_nominal = 2.0;
  auto const b = sample_batch(pairs, d, 5, 3, 8, false);
  auto const &s = b.samples[0];
  CHECK(s.transform == 0);
  CHECK(s.tar_lr.dims() == Dims{8, 8});
  CHECK(s.hr.dims() == Dims{16, 16});
  for (int t = 0; t < 8; t++) {
    auto const a = augment(s, b.task, t);
    CHECK(a.hr == dihedral(s.hr, t));
    CHECK(a.tar_lr == degrade(dihedral(s.hr, t), 2.0));
    CHECK(a.ref == degrade(dihedral(s.ref_hr, t), 2.0));
    // Applying the same flip twice restores the sample.
    if (!(t & 4)) {
      auto const back = augment(a, b.task, t);
      CHECK(back.hr == s.hr);
      CHECK(back.tar_lr == s.tar_lr);
    }
  }
  // Transposition commutes with degradation.
  auto const tr = augment(s, b.task, 4);
  double err = 0.0;
  auto const want = dihedral(s.tar_lr, 4);
  for (std::size_t i = 0; i < want.size(); i++) err = std::max(err, std::abs(want.data[i] - tr.tar_lr.data[i]));
  CHECK(err < 1e-12);
}

TEST_CASE("batch sampling")
{
  TempDir dir;
  small_dataset(dir.path);
  auto const pairs = load_pairs(load_manifest(dir / "train.json", Split::Train));
  TaskDraw d;
  d.s_nominal = 1.7;
  d.ref_mode = RefMode::HR;
  auto const a = sample_batch(pairs, d, 11, 6, 8, true);
  auto const b = sample_batch(pairs, d, 11, 6, 8, true);
  auto const c = sample_batch(pairs, d, 11, 3, 8, true);
  CHECK(a.task.hr == Dims{14, 14});
  CHECK(a.task.s_tar() == 1.75);
  for (std::size_t i = 0; i < 6; i++) {
    CHECK(a.samples[i].hr == b.samples[i].hr);
    CHECK(a.samples[i].ref.dims() == Dims{14, 14});
    CHECK(a.samples[i].mask.passband == Dims{8, 8});
  }
  for (std::size_t i = 0; i < 3; i++) {
    CHECK(a.samples[i].hr == c.samples[i].hr); // per-sample streams
  }
  d.s_nominal = 7.0;
  CHECK(kind_of([&] { sample_batch(pairs, d, 1, 2, 8); }) == ErrorKind::OutOfRange);
  CHECK_FALSE(task_feasible(pairs, d, 8));

  TaskDraw custom{3.0, RefMode::Custom, 2.0};
  auto const t = patch_task(custom, 8);
  CHECK(t.hr == Dims{24, 24});
  CHECK(t.ref == Dims{12, 12});
}

TEST_CASE("training overfits a single batch")
{
  TempDir dir;
  small_dataset(dir.path);
  auto const pairs = load_pairs(load_manifest(dir / "train.json", Split::Train));
  auto const cfg = gradcheck::tiny_config();
  auto st = init_state(cfg, 1);
  TaskDraw d;
  d.s_nominal = 2.0;
  auto const batch = sample_batch(pairs, d, 3, 2, 8, false);
  StepOptions o;
  o.lr = 1e-3;
  double first = 0, last = 0;
  for (int i = 0; i < 200; i++) {
    auto const r = train_step(cfg, st, batch, o);
    if (i == 0) first = r.l_full;
    last = r.l_full;
    REQUIRE(std::isfinite(r.l_full));
  }
  INFO("first " << first << " last " << last);
  CHECK(last < 0.2 * first);
  CHECK(st.step == 200);
}

TEST_CASE("train config json")
{
  auto c = tiny_train_config();
  c.strategy = Strategy::FixedLR;
  c.loss.k_loss_on = false;
  c.loss.form = KLossForm::Squared;
  nlohmann::json j = c;
  CHECK(j.get<TrainConfig>() == c);
  j["lambda_k"] = -1.0;
  CHECK_THROWS_AS(j.get<TrainConfig>(), Error);
  TempDir dir;
  spit(dir / "c.json", R"({"strategy":"random","batch":4})");
  auto const l = load_train_config(dir / "c.json");
  CHECK(l.strategy == Strategy::Random);
  CHECK(l.batch == 4);
  CHECK(l.lr_patch == 32);
}

TEST_CASE("checkpoint round trip and error categories")
{
  TempDir dir;
  Checkpoint ck{tiny_train_config(), init_state(gradcheck::tiny_config(), 4)};
  ck.state.step = 17;
  ck.state.epoch = 3;
  ck.state.adam_m[5] = 0.25f;
  ck.state.adam_v[7] = 0.5f;
  ck.state.rng.discard(1234);
  ck.state.best_valid_psnr = 21.5;
  save_checkpoint(ck, dir / "a.ckpt");
  CHECK_FALSE(std::filesystem::exists(dir / "a.ckpt.tmp"));
  auto const back = load_checkpoint(dir / "a.ckpt");
  CHECK(back.config == ck.config);
  CHECK(back.state.params.values == ck.state.params.values);
  CHECK(back.state.adam_m == ck.state.adam_m);
  CHECK(back.state.adam_v == ck.state.adam_v);
  CHECK(back.state.step == 17);
  CHECK(back.state.epoch == 3);
  CHECK(back.state.rng == ck.state.rng);
  CHECK(back.state.best_valid_psnr == 21.5);
  CHECK(checkpoint_hash(dir / "a.ckpt").size() == 16);

  ck.state.best_valid_psnr = -std::numeric_limits<double>::infinity();
  save_checkpoint(ck, dir / "b.ckpt");
  CHECK(std::isinf(load_checkpoint(dir / "b.ckpt").state.best_valid_psnr));
  CHECK(checkpoint_hash(dir / "a.ckpt") != checkpoint_hash(dir / "b.ckpt"));

  auto other = gradcheck::tiny_config();
  other.growth = 4;
  CHECK(kind_of([&] { load_checkpoint(dir / "a.ckpt", other); }) == ErrorKind::ConfigConflict);
  CHECK_NOTHROW(load_checkpoint(dir / "a.ckpt", gradcheck::tiny_config()));

  auto const bytes = slurp(dir / "a.ckpt");
  spit(dir / "t.ckpt", bytes.substr(0, bytes.size() - 100));
  CHECK(kind_of([&] { load_checkpoint(dir / "t.ckpt"); }) == ErrorKind::Truncated);
  spit(dir / "t.ckpt", bytes.substr(0, 10));
  CHECK(kind_of([&] { load_checkpoint(dir / "t.ckpt"); }) == ErrorKind::Truncated);
  auto v2 = bytes;
  v2[8] = 2;
  spit(dir / "v.ckpt", v2);
  CHECK(kind_of([&] { load_checkpoint(dir / "v.ckpt"); }) == ErrorKind::VersionMismatch);
  spit(dir / "n.ckpt", "not a checkpoint at all");
  CHECK(kind_of([&] { load_checkpoint(dir / "n.ckpt"); }) == ErrorKind::InvalidArgument);
  CHECK(kind_of([&] { load_checkpoint(dir / "missing.ckpt"); }) == ErrorKind::Io);
}

TEST_CASE("twin runs are identical and resume reproduces the trajectory")
{
  spdlog::set_level(spdlog::level::warn);
  TempDir data;
  small_dataset(data.path);
  auto const cfg = tiny_train_config();
  TempDir out_a, out_b, out_c;
  auto const ra = Trainer(cfg, data.path, out_a.path).run();
  Trainer tb(cfg, data.path, out_b.path);
  auto const rb = tb.run();
  REQUIRE(ra.size() == 6);
  REQUIRE(rb.size() == ra.size());
  for (std::size_t i = 0; i < ra.size(); i++) {
    CHECK(ra[i].loss.l_full == rb[i].loss.l_full);
    CHECK(ra[i].s == rb[i].s);
  }
  CHECK(ra.back().stage == Stage::FullTraining);
  CHECK(std::filesystem::exists(out_a / "best.ckpt"));
  CHECK(std::filesystem::exists(out_a / "train_log.jsonl"));
  CHECK(std::filesystem::exists(out_a / "valid_log.jsonl"));

  // Interrupt after the first epoch, then resume in a fresh trainer.
  Trainer first(cfg, data.path, out_c.path);
  auto const r1 = first.run(1);
  REQUIRE(r1.size() == 2);
  Trainer second(cfg, data.path, out_c.path);
  second.resume(out_c / "last.ckpt");
  CHECK(second.state().epoch == 1);
  auto const r2 = second.run();
  REQUIRE(r2.size() == 4);
  for (std::size_t i = 0; i < 2; i++) CHECK(r1[i].loss.l_full == ra[i].loss.l_full);
  for (std::size_t i = 0; i < 4; i++) {
    CHECK(r2[i].loss.l_full == ra[i + 2].loss.l_full);
    CHECK(r2[i].step == ra[i + 2].step);
  }
  CHECK(second.state().params.values == tb.state().params.values);
  CHECK(second.state().adam_v == tb.state().adam_v);

  auto other = cfg;
  other.model.growth = 4;
  Trainer mismatch(other, data.path, out_c.path);
  CHECK(kind_of([&] { mismatch.resume(out_c / "last.ckpt"); }) == ErrorKind::ConfigConflict);
}
