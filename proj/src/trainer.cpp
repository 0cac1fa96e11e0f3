#include "arbsr/trainer.hpp"

#include "arbsr/error.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fmt/format.h>
#include <fstream>
#include <spdlog/spdlog.h>
#include <cstring>
#include <map>
#include <sstream>

namespace arbsr {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Config

namespace {

std::string form_name(KLossForm f) { return f == KLossForm::Norm ? "norm" : "squared"; }

KLossForm parse_form(std::string const &s)
{
  if (s == "norm") {
    return KLossForm::Norm;
  }
  if (s == "squared") {
    return KLossForm::Squared;
  }
  fail(ErrorKind::InvalidArgument, fmt::format("unknown k-loss form '{}'", s));
}

} // namespace

void to_json(nlohmann::json &j, TrainConfig const &c)
{
  j = nlohmann::json{
    {"model", c.model},
    {"schedule", c.schedule},
    {"strategy", to_string(c.strategy)},
    {"continuous_ref", c.continuous_ref},
    {"batch", c.batch},
    {"lr_patch", c.lr_patch},
    {"steps_per_epoch", c.steps_per_epoch},
    {"lambda_k", c.loss.lambda_k},
    {"k_loss", c.loss.k_loss_on},
    {"k_loss_form", form_name(c.loss.form)},
    {"seed", c.seed},
    {"augment", c.augment},
    {"valid_scales", c.valid_scales},
    {"valid_max_slices", c.valid_max_slices},
  };
}

void from_json(nlohmann::json const &j, TrainConfig &c)
{
  TrainConfig d;
  c.model = j.contains("model") ? j.at("model").get<ModelConfig>() : d.model;
  c.schedule = j.contains("schedule") ? j.at("schedule").get<CurriculumSchedule>() : d.schedule;
  c.strategy = parse_strategy(j.value("strategy", to_string(d.strategy)));
  c.continuous_ref = j.value("continuous_ref", d.continuous_ref);
  c.batch = j.value("batch", d.batch);
  c.lr_patch = j.value("lr_patch", d.lr_patch);
  c.steps_per_epoch = j.value("steps_per_epoch", d.steps_per_epoch);
  c.loss.lambda_k = j.value("lambda_k", d.loss.lambda_k);
  c.loss.k_loss_on = j.value("k_loss", d.loss.k_loss_on);
  c.loss.form = parse_form(j.value("k_loss_form", form_name(d.loss.form)));
  c.seed = j.value("seed", d.seed);
  c.augment = j.value("augment", d.augment);
  c.valid_scales = j.value("valid_scales", d.valid_scales);
  c.valid_max_slices = j.value("valid_max_slices", d.valid_max_slices);
  if (c.batch < 1 || c.lr_patch < 3 || c.steps_per_epoch < 1) {
    fail(ErrorKind::InvalidArgument, "batch, lr_patch and steps_per_epoch must be positive (lr_patch >= 3)");
  }
  if (!(c.loss.lambda_k >= 0.0)) {
    fail(ErrorKind::InvalidArgument, "lambda_k must be non-negative");
  }
  c.model.validate();
  c.schedule.validate();
}

TrainConfig load_train_config(fs::path const &file)
{
  std::ifstream in(file);
  if (!in) {
    fail(ErrorKind::Io, fmt::format("cannot read config {}", file.string()));
  }
  try {
    return nlohmann::json::parse(in).get<TrainConfig>();
  } catch (nlohmann::json::exception const &e) {
    fail(ErrorKind::InvalidArgument, fmt::format("{}: {}", file.string(), e.what()));
  }
}

// ---------------------------------------------------------------------------
// Optimizer

template <typename T>
void adam_update(
  std::span<T> params, std::span<T const> grads, std::span<T> m, std::span<T> v, std::int64_t t,
  double lr, AdamConfig const &cfg)
{
  if (grads.size() != params.size() || m.size() != params.size() || v.size() != params.size()) {
    fail(ErrorKind::DimensionMismatch, "adam: parameter, gradient and moment sizes differ");
  }
  if (t < 1) {
    fail(ErrorKind::InvalidArgument, "adam: step count starts at 1");
  }
  double const c1 = 1.0 - std::pow(cfg.beta1, double(t));
  double const c2 = 1.0 - std::pow(cfg.beta2, double(t));
  for (std::size_t i = 0; i < params.size(); i++) {
    double const g = grads[i];
    double const mi = cfg.beta1 * double(m[i]) + (1.0 - cfg.beta1) * g;
    double const vi = cfg.beta2 * double(v[i]) + (1.0 - cfg.beta2) * g * g;
    m[i] = T(mi);
    v[i] = T(vi);
    double const mhat = mi / c1;
    double const vhat = vi / c2;
    params[i] = T(double(params[i]) - lr * mhat / (std::sqrt(vhat) + cfg.eps));
  }
}

template void adam_update<float>(
  std::span<float>, std::span<float const>, std::span<float>, std::span<float>, std::int64_t, double,
  AdamConfig const &);
template void adam_update<double>(
  std::span<double>, std::span<double const>, std::span<double>, std::span<double>, std::int64_t,
  double, AdamConfig const &);

TrainState init_state(ModelConfig const &cfg, std::uint64_t seed)
{
  TrainState s;
  s.params = init_params<float>(cfg);
  s.adam_m.assign(s.params.values.size(), 0.0f);
  s.adam_v.assign(s.params.values.size(), 0.0f);
  s.rng.seed(derive_seed({seed, 0x7461736b}));
  return s;
}

// ---------------------------------------------------------------------------
// Batches

ScaleTask patch_task(TaskDraw const &draw, int lr_patch)
{
  auto const e = effective_scale(lr_patch, draw.s_nominal);
  int const h = e.hr_size;
  Dims ref{h, h};
  if (draw.ref_mode == RefMode::LR) {
    ref = {lr_patch, lr_patch};
  } else if (draw.ref_mode == RefMode::Custom) {
    int const r = std::max(1, int(std::lround(h / draw.s_ref_nominal)));
    ref = {r, r};
  }
  return make_task({h, h}, {lr_patch, lr_patch}, ref, draw.ref_mode);
}

bool task_feasible(std::vector<SlicePair> const &pairs, TaskDraw const &draw, int lr_patch)
{
  int const h = effective_scale(lr_patch, draw.s_nominal).hr_size;
  return std::all_of(pairs.begin(), pairs.end(), [&](SlicePair const &p) {
    return p.target.pixels.height >= h && p.target.pixels.width >= h;
  });
}

Grid<double> dihedral(Grid<double> const &img, int t)
{
  if (t < 0 || t >= 8) {
    fail(ErrorKind::InvalidArgument, fmt::format("dihedral transform {} outside [0, 8)", t));
  }
  Grid<double> cur = img;
  if (t & 4) {
    Grid<double> tr(cur.width, cur.height);
    for (int y = 0; y < cur.height; y++) {
      for (int x = 0; x < cur.width; x++) {
        tr(x, y) = cur(y, x);
      }
    }
    cur = std::move(tr);
  }
  Grid<double> out(cur.height, cur.width);
  for (int y = 0; y < cur.height; y++) {
    int const sy = (t & 1) ? cur.height - 1 - y : y;
    for (int x = 0; x < cur.width; x++) {
      out(y, x) = cur(sy, (t & 2) ? cur.width - 1 - x : x);
    }
  }
  return out;
}

void derive_views(Sample &s, ScaleTask const &task)
{
  if (s.hr.dims() != task.hr || s.ref_hr.dims() != task.hr) {
    fail(ErrorKind::DimensionMismatch, "sample windows do not match the task HR dims");
  }
  s.tar_lr = degrade(s.hr, task.s_tar());
  if (task.ref_mode == RefMode::HR) {
    s.ref = s.ref_hr;
  } else {
    s.ref = degrade(s.ref_hr, task.s_ref());
  }
  if (s.tar_lr.dims() != task.tar || s.ref.dims() != task.ref) {
    fail(ErrorKind::DimensionMismatch, "degraded views do not match the task dims");
  }
  s.mask = lowpass_mask(task.hr, task.tar);
}

Sample augment(Sample const &s, ScaleTask const &task, int t)
{
  if ((t & 4) && (s.hr.height != s.hr.width || s.ref_hr.height != s.ref_hr.width)) {
    fail(ErrorKind::InvalidArgument, "rotation requested on a non-square patch");
  }
  Sample out = s;
  out.transform = t;
  out.hr = dihedral(s.hr, t);
  out.ref_hr = dihedral(s.ref_hr, t);
  derive_views(out, task);
  return out;
}

Sample augment(Sample const &s, ScaleTask const &task, Rng &rng)
{
  return augment(s, task, uniform_int(rng, 8));
}

namespace {

Grid<double> crop(Grid<float> const &img, int y0, int x0, int h, int w)
{
  Grid<double> out(h, w);
  for (int y = 0; y < h; y++) {
    for (int x = 0; x < w; x++) {
      out(y, x) = img(y0 + y, x0 + x);
    }
  }
  return out;
}

} // namespace

Batch sample_batch(
  std::vector<SlicePair> const &pairs, TaskDraw const &draw, std::uint64_t seed, int batch, int lr_patch,
  bool augment_samples)
{
  if (pairs.empty()) {
    fail(ErrorKind::InvalidArgument, "sample_batch: no slice pairs");
  }
  if (batch < 1) {
    fail(ErrorKind::InvalidArgument, "sample_batch: batch must be positive");
  }
  if (!task_feasible(pairs, draw, lr_patch)) {
    fail(ErrorKind::OutOfRange, fmt::format("scale {} needs windows larger than the slices", draw.s_nominal));
  }
  Batch b;
  b.draw = draw;
  b.task = patch_task(draw, lr_patch);
  int const h = b.task.hr.h;
  for (int i = 0; i < batch; i++) {
    Rng rng(derive_seed({seed, std::uint64_t(i)}));
    Sample s;
    s.pair = std::size_t(uniform_int(rng, int(pairs.size())));
    auto const &p = pairs[s.pair];
    s.y0 = uniform_int(rng, p.target.pixels.height - h + 1);
    s.x0 = uniform_int(rng, p.target.pixels.width - h + 1);
    s.hr = crop(p.target.pixels, s.y0, s.x0, h, h);
    s.ref_hr = crop(p.reference.pixels, s.y0, s.x0, h, h);
    int const t = augment_samples ? uniform_int(rng, 8) : 0;
    if (t != 0) {
      s = augment(s, b.task, t);
    } else {
      derive_views(s, b.task);
    }
    b.samples.push_back(std::move(s));
  }
  return b;
}

// ---------------------------------------------------------------------------
// Step

LossReport train_step(ModelConfig const &cfg, TrainState &state, Batch const &batch, StepOptions const &opts)
{
  if (batch.samples.empty()) {
    fail(ErrorKind::InvalidArgument, "train_step: empty batch");
  }
  if (state.adam_m.size() != state.params.values.size() || state.adam_v.size() != state.params.values.size()) {
    fail(ErrorKind::DimensionMismatch, "train_step: moment shapes differ from parameters");
  }
  DualArbNet<float> net(cfg, std::move(state.params));
  try {
    Buffer<float> grads(net.params().values.size(), 0.0f);
    double const inv = 1.0 / double(batch.samples.size());
    double l_rec = 0.0, l_k = 0.0;
    for (auto const &s : batch.samples) {
      auto const pass = net.forward(s.tar_lr.cast<float>(), s.ref.cast<float>(), batch.task, false, true);
      auto const sr = pass.sr_tar.cast<double>();
      Grid<double> g;
      auto const r = full_loss_grad(sr, s.hr, s.mask, opts.loss, g);
      if (!std::isfinite(r.l_full)) {
        std::string where;
        for (auto const &t : batch.samples) {
          where += fmt::format(" [pair {} at ({}, {}) t{}]", t.pair, t.y0, t.x0, t.transform);
        }
        fail(ErrorKind::NonFinite, fmt::format("non-finite loss at step {}; batch:{}", state.step, where));
      }
      Grid<float> gf(g.height, g.width);
      for (std::size_t i = 0; i < g.size(); i++) {
        gf.data[i] = float(g.data[i] * inv);
      }
      net.backward(pass, gf, nullptr, grads);
      l_rec += r.l_rec * inv;
      l_k += r.l_k * inv;
    }
    state.step++;
    adam_update<float>(
      net.params().values, grads, state.adam_m, state.adam_v, state.step, opts.lr, opts.adam);
    state.params = std::move(net.params());
    LossReport rep;
    rep.lambda_k = opts.loss.lambda_k;
    rep.l_rec = l_rec;
    rep.l_k = l_k;
    rep.l_full = opts.loss.k_loss_on ? l_rec + opts.loss.lambda_k * l_k : l_rec;
    return rep;
  } catch (...) {
    state.params = std::move(net.params());
    throw;
  }
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr char kMagic[8] = {'D', 'A', 'R', 'B', 'C', 'K', 'P', 'T'};

static_assert(std::endian::native == std::endian::little, "checkpoint arrays assume a little-endian host");

template <typename T>
void put(std::string &buf, T v)
{
  buf.append(reinterpret_cast<char const *>(&v), sizeof(T));
}

std::string floats_bytes(Buffer<float> const &v)
{
  return std::string(reinterpret_cast<char const *>(v.data()), v.size() * sizeof(float));
}

Buffer<float> bytes_floats(std::string const &s, std::size_t expected, char const *what)
{
  if (s.size() != expected * sizeof(float)) {
    fail(
      ErrorKind::Truncated,
      fmt::format("{}: {} bytes, expected {}", what, s.size(), expected * sizeof(float)));
  }
  Buffer<float> v(expected);
  std::memcpy(v.data(), s.data(), s.size());
  return v;
}

std::string rng_string(Rng const &r)
{
  std::ostringstream os;
  os << r;
  return os.str();
}

} // namespace

void save_checkpoint(Checkpoint const &ck, fs::path const &path)
{
  auto const &st = ck.state;
  nlohmann::json index = nlohmann::json::array();
  for (auto const &i : st.params.infos) {
    index.push_back({{"name", i.name}, {"group", i.group}, {"shape", i.shape}, {"offset", i.offset}, {"count", i.count}});
  }
  nlohmann::json state{
    {"step", st.step},
    {"epoch", st.epoch},
    {"rng", rng_string(st.rng)},
    {"best_valid_psnr", std::isfinite(st.best_valid_psnr) ? nlohmann::json(st.best_valid_psnr) : nlohmann::json()},
  };
  std::vector<std::pair<std::string, std::string>> sections{
    {"config.json", nlohmann::json(ck.config).dump()},
    {"index.json", index.dump()},
    {"params.bin", floats_bytes(st.params.values)},
    {"adam_m.bin", floats_bytes(st.adam_m)},
    {"adam_v.bin", floats_bytes(st.adam_v)},
    {"state.json", state.dump()},
  };
  std::string buf(kMagic, sizeof(kMagic));
  put<std::uint32_t>(buf, kCheckpointVersion);
  put<std::uint32_t>(buf, std::uint32_t(sections.size()));
  for (auto const &[name, payload] : sections) {
    put<std::uint32_t>(buf, std::uint32_t(name.size()));
    buf += name;
    put<std::uint64_t>(buf, payload.size());
    buf += payload;
  }
  if (path.has_parent_path()) {
    fs::create_directories(path.parent_path());
  }
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) {
      fail(ErrorKind::Io, fmt::format("cannot write {}", tmp.string()));
    }
    out.write(buf.data(), std::streamsize(buf.size()));
    if (!out) {
      fail(ErrorKind::Io, fmt::format("short write to {}", tmp.string()));
    }
  }
  fs::rename(tmp, path);
}

Checkpoint load_checkpoint(fs::path const &path)
{
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    fail(ErrorKind::Io, fmt::format("cannot open checkpoint {}", path.string()));
  }
  std::string const buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  std::size_t pos = 0;
  auto take = [&](std::size_t n, char const *what) {
    if (buf.size() - pos < n) {
      fail(ErrorKind::Truncated, fmt::format("{}: truncated while reading {}", path.string(), what));
    }
    auto const s = buf.substr(pos, n);
    pos += n;
    return s;
  };
  auto take_u32 = [&](char const *what) {
    std::uint32_t v;
    std::memcpy(&v, take(4, what).data(), 4);
    return v;
  };
  if (buf.size() >= sizeof(kMagic) && buf.compare(0, sizeof(kMagic), kMagic, sizeof(kMagic)) != 0) {
    fail(ErrorKind::InvalidArgument, fmt::format("{} is not a checkpoint", path.string()));
  }
  take(sizeof(kMagic), "magic");
  auto const version = take_u32("version");
  if (version != kCheckpointVersion) {
    fail(
      ErrorKind::VersionMismatch,
      fmt::format("{}: checkpoint version {}, expected {}", path.string(), version, kCheckpointVersion));
  }
  auto const count = take_u32("section count");
  std::map<std::string, std::string> sections;
  for (std::uint32_t i = 0; i < count; i++) {
    auto const name = take(take_u32("section name length"), "section name");
    std::uint64_t size;
    std::memcpy(&size, take(8, "section size").data(), 8);
    sections[name] = take(size, name.c_str());
  }
  auto section = [&](std::string const &name) -> std::string const & {
    auto it = sections.find(name);
    if (it == sections.end()) {
      fail(ErrorKind::Truncated, fmt::format("{}: missing section {}", path.string(), name));
    }
    return it->second;
  };

  Checkpoint ck;
  try {
    ck.config = nlohmann::json::parse(section("config.json")).get<TrainConfig>();
    auto const layout = build_layout(ck.config.model);
    auto const index = nlohmann::json::parse(section("index.json"));
    if (index.size() != layout.infos.size()) {
      fail(ErrorKind::ConfigConflict, "parameter index does not match the stored model config");
    }
    for (std::size_t i = 0; i < index.size(); i++) {
      auto const &e = index[i];
      auto const &l = layout.infos[i];
      if (e.at("name") != l.name || e.at("shape").get<std::vector<int>>() != l.shape ||
          e.at("offset").get<std::size_t>() != l.offset) {
        fail(ErrorKind::ConfigConflict, fmt::format("parameter '{}' does not match the model config", l.name));
      }
    }
    auto &st = ck.state;
    st.params.infos = layout.infos;
    st.params.values = bytes_floats(section("params.bin"), layout.total, "params.bin");
    st.adam_m = bytes_floats(section("adam_m.bin"), layout.total, "adam_m.bin");
    st.adam_v = bytes_floats(section("adam_v.bin"), layout.total, "adam_v.bin");
    auto const js = nlohmann::json::parse(section("state.json"));
    st.step = js.at("step").get<std::int64_t>();
    st.epoch = js.at("epoch").get<int>();
    std::istringstream rs(js.at("rng").get<std::string>());
    rs >> st.rng;
    if (!rs) {
      fail(ErrorKind::InvalidArgument, "corrupt rng state");
    }
    auto const &b = js.at("best_valid_psnr");
    st.best_valid_psnr = b.is_null() ? -std::numeric_limits<double>::infinity() : b.get<double>();
  } catch (nlohmann::json::exception const &e) {
    fail(ErrorKind::InvalidArgument, fmt::format("{}: {}", path.string(), e.what()));
  }
  for (float v : ck.state.params.values) {
    if (!std::isfinite(v)) {
      fail(ErrorKind::NonFinite, fmt::format("{}: non-finite parameter", path.string()));
    }
  }
  return ck;
}

Checkpoint load_checkpoint(fs::path const &path, ModelConfig const &expected)
{
  auto ck = load_checkpoint(path);
  if (!(ck.config.model == expected)) {
    fail(
      ErrorKind::ConfigConflict,
      fmt::format(
        "{}: stored model config {} differs from requested {}", path.string(),
        nlohmann::json(ck.config.model).dump(), nlohmann::json(expected).dump()));
  }
  return ck;
}

std::string checkpoint_hash(fs::path const &path)
{
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    fail(ErrorKind::Io, fmt::format("cannot open {}", path.string()));
  }
  std::uint64_t h = 0xcbf29ce484222325ull;
  char buf[1 << 16];
  while (in) {
    in.read(buf, sizeof(buf));
    for (std::streamsize i = 0; i < in.gcount(); i++) {
      h = (h ^ std::uint8_t(buf[i])) * 0x100000001b3ull;
    }
  }
  return fmt::format("{:016x}", h);
}

// ---------------------------------------------------------------------------
// Loop

double validation_psnr(
  ModelConfig const &cfg, ParameterSet<float> const &params, std::vector<SlicePair> const &pairs,
  std::vector<double> const &scales)
{
  if (pairs.empty() || scales.empty()) {
    fail(ErrorKind::InvalidArgument, "validation needs slices and scales");
  }
  DualArbNet<float> net(cfg, params);
  double total = 0.0;
  int n = 0;
  for (auto const &p : pairs) {
    auto const hr = p.target.pixels.cast<double>();
    auto const ref = p.reference.pixels.cast<double>();
    for (double k : scales) {
      auto const lr = degrade(hr, k);
      auto const task = make_task(hr.dims(), lr.dims(), ref.dims(), RefMode::HR);
      auto sr = net.forward(lr.cast<float>(), ref.cast<float>(), task).sr_tar.cast<double>();
      for (auto &v : sr.data) {
        v = std::clamp(v, 0.0, 1.0);
      }
      total += std::min(psnr(sr, hr), 100.0);
      n++;
    }
  }
  return total / n;
}

void to_json(nlohmann::json &j, StepRecord const &r)
{
  j = nlohmann::ordered_json{
    {"epoch", r.epoch},     {"step", r.step},     {"stage", to_string(r.stage)},
    {"lr", r.lr},           {"l_rec", r.loss.l_rec}, {"l_k", r.loss.l_k},
    {"l_full", r.loss.l_full}, {"s", r.s},        {"ref_mode", to_string(r.ref_mode)},
  };
}

Trainer::Trainer(TrainConfig cfg, fs::path data_dir, fs::path out_dir)
  : cfg_{std::move(cfg)}
  , out_dir_{std::move(out_dir)}
{
  cfg_.model.validate();
  cfg_.schedule.validate();
  train_ = load_pairs(load_manifest(data_dir / "train.json", Split::Train));
  valid_ = load_pairs(load_manifest(data_dir / "valid.json", Split::Valid));
  if (train_.empty() || valid_.empty()) {
    fail(ErrorKind::InvalidArgument, "train and valid splits must be non-empty");
  }
  if (cfg_.valid_max_slices > 0 && int(valid_.size()) > cfg_.valid_max_slices) {
    valid_.resize(cfg_.valid_max_slices);
  }
  state_ = init_state(cfg_.model, cfg_.seed);
  fs::create_directories(out_dir_);
}

void Trainer::resume(fs::path const &ckpt)
{
  auto ck = load_checkpoint(ckpt, cfg_.model);
  state_ = std::move(ck.state);
  spdlog::info("resumed from {} at epoch {} step {}", ckpt.string(), state_.epoch, state_.step);
}

std::vector<StepRecord> Trainer::run(std::optional<int> stop_epoch)
{
  int const total = cfg_.schedule.total_epochs();
  int const end = stop_epoch ? std::min(total, *stop_epoch) : total;
  std::ofstream log(out_dir_ / "train_log.jsonl", std::ios::app);
  std::ofstream vlog(out_dir_ / "valid_log.jsonl", std::ios::app);
  std::vector<StepRecord> records;
  while (state_.epoch < end) {
    int const epoch = state_.epoch;
    auto const stage = stage_for_epoch(cfg_.schedule, epoch, cfg_.strategy, cfg_.continuous_ref);
    for (int k = 0; k < cfg_.steps_per_epoch; k++) {
      auto draw = sample_task(stage, state_.rng);
      for (int tries = 0; !task_feasible(train_, draw, cfg_.lr_patch); tries++) {
        if (tries > 1000) {
          fail(ErrorKind::OutOfRange, "no feasible training scale for these slice sizes");
        }
        spdlog::debug("scale {} needs windows larger than the slices; redrawing", draw.s_nominal);
        draw = sample_task(stage, state_.rng);
      }
      auto const seed = derive_seed({cfg_.seed, 0x62617463, std::uint64_t(epoch), std::uint64_t(k)});
      auto const batch = sample_batch(train_, draw, seed, cfg_.batch, cfg_.lr_patch, cfg_.augment);
      StepOptions opts;
      opts.lr = stage.lr;
      opts.loss = cfg_.loss;
      StepRecord rec;
      rec.loss = train_step(cfg_.model, state_, batch, opts);
      rec.epoch = epoch;
      rec.step = state_.step;
      rec.stage = stage.stage;
      rec.lr = stage.lr;
      rec.s = batch.task.s_tar();
      rec.ref_mode = draw.ref_mode;
      log << nlohmann::json(rec).dump() << "\n";
      log.flush();
      spdlog::info(
        "epoch {} step {} {} s={:.4f} ref={} l_full={:.5f}", epoch, rec.step, to_string(stage.stage), rec.s,
        to_string(rec.ref_mode), rec.loss.l_full);
      records.push_back(rec);
    }
    state_.epoch = epoch + 1;
    double const vp = validation_psnr(cfg_.model, state_.params, valid_, cfg_.valid_scales);
    vlog << nlohmann::json{{"epoch", epoch}, {"valid_psnr", vp}}.dump() << "\n";
    vlog.flush();
    spdlog::info("epoch {} valid psnr {:.3f} dB", epoch, vp);
    if (vp > state_.best_valid_psnr) {
      state_.best_valid_psnr = vp;
      save_checkpoint({cfg_, state_}, out_dir_ / "best.ckpt");
    }
    save_checkpoint({cfg_, state_}, out_dir_ / "last.ckpt");
  }
  return records;
}

} // namespace arbsr
