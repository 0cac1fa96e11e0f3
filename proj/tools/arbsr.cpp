// Command-line front end: dataset generation, degradation, training,
// evaluation, single-slice inference, ablations and the HTTP service.

#include "arbsr/dataset.hpp"
#include "arbsr/error.hpp"
#include "arbsr/eval.hpp"
#include "arbsr/kspace.hpp"
#include "arbsr/png.hpp"
#include "arbsr/reconstruct.hpp"
#include "arbsr/service.hpp"
#include "arbsr/trainer.hpp"

#include <CLI11.hpp>
#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

namespace fs = std::filesystem;
using namespace arbsr;

namespace {

Dims parse_dims(std::string const &s)
{
  int h = 0, w = 0;
  char x = 0;
  std::istringstream in(s);
  if (!(in >> h >> x >> w) || (x != 'x' && x != 'X') || !in.eof()) {
    fail(ErrorKind::InvalidArgument, fmt::format("expected HxW, got '{}'", s));
  }
  return {h, w};
}

std::vector<std::string> split_list(std::string const &s)
{
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(s);
  while (std::getline(in, item, ',')) {
    if (!item.empty()) {
      out.push_back(item);
    }
  }
  return out;
}

std::vector<double> parse_scales(std::string const &s)
{
  std::vector<double> out;
  for (auto const &t : split_list(s)) {
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(t, &used);
    } catch (std::exception const &) {
      used = 0;
    }
    if (used != t.size()) {
      fail(ErrorKind::InvalidArgument, fmt::format("bad scale '{}'", t));
    }
    out.push_back(v);
  }
  if (out.empty()) {
    fail(ErrorKind::InvalidArgument, "no scales given");
  }
  return out;
}

std::shared_ptr<DualArbNet<float> const> load_model(fs::path const &ckpt)
{
  auto ck = load_checkpoint(ckpt);
  return std::make_shared<DualArbNet<float> const>(ck.config.model, std::move(ck.state.params));
}

void write_text(fs::path const &path, std::string const &text)
{
  if (path.has_parent_path()) {
    fs::create_directories(path.parent_path());
  }
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) {
    fail(ErrorKind::Io, fmt::format("cannot write {}", path.string()));
  }
}

// Reports go to .json, .md, or both when the path has no extension.
void emit_reports(std::vector<EvalReport> const &reports, fs::path const &out)
{
  auto const ext = out.extension();
  if (ext == ".json" || ext == ".md") {
    write_reports(reports, out);
    return;
  }
  write_reports(reports, fs::path(out).concat(".json"));
  write_reports(reports, fs::path(out).concat(".md"));
}

std::vector<fs::path> sidecars_in(fs::path const &dir)
{
  auto const root = fs::is_directory(dir / "slices") ? dir / "slices" : dir;
  if (!fs::is_directory(root)) {
    fail(ErrorKind::NotFound, fmt::format("no such directory {}", dir.string()));
  }
  std::vector<fs::path> out;
  for (auto const &e : fs::directory_iterator(root)) {
    if (e.path().extension() == ".json" && fs::exists(fs::path(e.path()).replace_extension(".bin"))) {
      out.push_back(e.path());
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

// ---------------------------------------------------------------------------

struct PhantomArgs
{
  std::uint64_t seed = 0;
  int subjects = 20;
  int slices = 1;
  int ellipses = 10;
  std::string size = "96x96";
  fs::path out;
};

int cmd_phantom(PhantomArgs const &a)
{
  DatasetOptions o;
  o.seed = a.seed;
  o.subjects = a.subjects;
  o.slices_per_subject = a.slices;
  o.n_ellipses = a.ellipses;
  o.size = parse_dims(a.size);
  auto const splits = generate_dataset(o, a.out);
  spdlog::info(
    "wrote {} subjects to {} (train {}, valid {}, test {} slices)", a.subjects, a.out.string(),
    splits.train.entries.size(), splits.valid.entries.size(), splits.test.entries.size());
  return 0;
}

struct DegradeArgs
{
  fs::path in, out;
  double scale = 2.0;
  bool masks = false;
};

int cmd_degrade(DegradeArgs const &a)
{
  fs::create_directories(a.out);
  std::set<std::pair<int, int>> masks_written;
  int n = 0;
  for (auto const &p : sidecars_in(a.in)) {
    auto const hr = read_slice(p);
    auto const lr = degrade(hr, a.scale);
    write_slice(lr, a.out / p.stem());
    n++;
    if (a.masks && masks_written.insert({hr.dims().h, hr.dims().w}).second) {
      auto const m = lowpass_mask(hr.dims(), lr.dims());
      Grid<double> img(m.values.height, m.values.width);
      std::transform(m.values.data.begin(), m.values.data.end(), img.data.begin(), [](auto v) { return double(v); });
      write_bytes(a.out / fmt::format("mask_{}x{}.png", hr.dims().h, hr.dims().w), encode_png_gray(img));
    }
  }
  spdlog::info("degraded {} slices by {} into {}", n, a.scale, a.out.string());
  return 0;
}

struct TrainArgs
{
  fs::path config, data, out, resume;
  bool no_k_loss = false;
  std::string strategy;
  int stop_epoch = 0;
};

int cmd_train(TrainArgs const &a)
{
  auto cfg = a.config.empty() ? TrainConfig{} : load_train_config(a.config);
  if (a.no_k_loss) {
    cfg.loss.k_loss_on = false;
  }
  if (!a.strategy.empty()) {
    cfg.strategy = parse_strategy(a.strategy);
  }
  fs::create_directories(a.out);
  write_text(a.out / "config.json", nlohmann::json(cfg).dump(2) + "\n");
  Trainer trainer(cfg, a.data, a.out);
  if (!a.resume.empty()) {
    trainer.resume(a.resume);
  }
  trainer.run(a.stop_epoch > 0 ? std::optional<int>(a.stop_epoch) : std::nullopt);
  spdlog::info("best valid psnr {:.3f} dB", trainer.state().best_valid_psnr);
  return 0;
}

struct EvalArgs
{
  fs::path ckpt, data, out, error_maps;
  std::string scales = "1.5,2,3,4,6,8";
  std::string ref = "hr";
  std::string split = "test";
  int max_slices = 0;
  bool baselines_only = false;
};

int cmd_eval(EvalArgs const &a)
{
  auto const split = a.split == "valid" ? Split::Valid : Split::Test;
  if (a.split != "valid" && a.split != "test") {
    fail(ErrorKind::InvalidArgument, "split must be valid or test");
  }
  auto pairs = load_pairs(load_manifest(a.data / (a.split + ".json"), split));
  if (a.max_slices > 0 && int(pairs.size()) > a.max_slices) {
    pairs.resize(a.max_slices);
  }
  EvalOptions o;
  o.scales = parse_scales(a.scales);
  o.ref_mode = parse_ref_mode(a.ref);
  o.label = a.ckpt.empty() ? "baselines" : a.ckpt.stem().string();
  o.error_map_dir = a.error_maps;
  EvalReport report;
  if (a.baselines_only) {
    report = evaluate(pairs, baseline_methods(), o);
  } else {
    if (a.ckpt.empty()) {
      fail(ErrorKind::InvalidArgument, "--ckpt is required unless --baselines-only");
    }
    report = eval_model(load_model(a.ckpt), pairs, o);
  }
  std::cout << to_markdown(report);
  if (!a.out.empty()) {
    emit_reports({report}, a.out);
  }
  return 0;
}

struct InferArgs
{
  fs::path ckpt, in, ref;
  double scale = 2.0;
  std::string out;
};

int cmd_infer(InferArgs const &a)
{
  auto const model = load_model(a.ckpt);
  auto const lr_img = read_slice(a.in);
  auto const ref_img = read_slice(a.ref);
  auto const lr = lr_img.pixels.cast<double>();
  auto const ref = ref_img.pixels.cast<double>();
  auto const hr_dims = Dims{int(std::lround(lr.height * a.scale)), int(std::lround(lr.width * a.scale))};
  // The reference resolution follows from its size.
  RefMode mode = RefMode::Custom;
  if (ref.dims() == hr_dims) {
    mode = RefMode::HR;
  } else if (ref.dims() == lr.dims()) {
    mode = RefMode::LR;
  }
  Reconstructor rec(model);
  auto sr = rec.reconstruct(lr, ref, inference_task(lr.dims(), ref.dims(), a.scale, mode));
  for (auto &v : sr.data) {
    v = std::clamp(v, 0.0, 1.0);
  }
  auto const outs = split_list(a.out);
  if (outs.empty()) {
    fail(ErrorKind::InvalidArgument, "--out needs at least one path");
  }
  for (auto const &o : outs) {
    fs::path const p = o;
    if (p.has_parent_path()) {
      fs::create_directories(p.parent_path());
    }
    if (p.extension() == ".png") {
      write_bytes(p, encode_png_gray(sr));
    } else {
      SliceImage img;
      img.pixels = sr.cast<float>();
      img.contrast = Contrast::Target;
      img.subject_id = lr_img.subject_id;
      img.slice_id = lr_img.slice_id;
      img.norm_max = lr_img.norm_max;
      write_slice(img, p);
    }
  }
  spdlog::info("{}x{} -> {}x{} (ref {})", lr.height, lr.width, sr.height, sr.width, to_string(mode));
  return 0;
}

struct ServeArgs
{
  fs::path ckpt, data;
  std::string host = "127.0.0.1";
  int port = 8080;
  std::size_t cache_entries = 16;
  double cache_mb = 1024;
  double acquisition = 2.0;
};

int cmd_serve(ServeArgs const &a)
{
  ServiceOptions o;
  o.data_dir = a.data;
  o.checkpoint = a.ckpt;
  o.cache_entries = a.cache_entries;
  o.cache_bytes = std::size_t(a.cache_mb * 1024 * 1024);
  o.acquisition_factor = a.acquisition;
  InferenceService svc(o);
  serve(svc, a.host, a.port);
  return 0;
}

struct AblateArgs
{
  fs::path config, data, out, report;
  std::string flags = "strategies,no-k-loss,no-ref,no-scale,no-coord";
  std::string scales = "1.5,2,3,4,6,8";
  int epochs = 1;
  int max_slices = 0;
};

int cmd_ablate(AblateArgs const &a)
{
  auto const base = a.config.empty() ? TrainConfig{} : load_train_config(a.config);
  auto const variants = ablation_variants(base, split_list(a.flags));
  EvalOptions o;
  o.scales = parse_scales(a.scales);
  auto const reports = ablation_suite(variants, a.data, a.out, a.epochs, o, a.max_slices);
  std::cout << to_markdown(reports);
  emit_reports(reports, a.report.empty() ? a.out / "ablation" : a.report);
  return 0;
}

} // namespace

int main(int argc, char **argv)
{
  CLI::App app{"Dual-ArbNet arbitrary-scale MR super-resolution"};
  app.require_subcommand(1);
  std::string log_level = "info";
  app.add_option("--log-level", log_level, "trace, debug, info, warn, error or off");

  PhantomArgs pa;
  auto *ph = app.add_subcommand("phantom-gen", "Generate a synthetic multi-contrast dataset");
  ph->add_option("--seed", pa.seed);
  ph->add_option("--subjects", pa.subjects)->check(CLI::PositiveNumber);
  ph->add_option("--slices-per-subject", pa.slices)->check(CLI::PositiveNumber);
  ph->add_option("--ellipses", pa.ellipses)->check(CLI::PositiveNumber);
  ph->add_option("--size", pa.size, "HxW, multiples of 24");
  ph->add_option("--out", pa.out)->required();

  DegradeArgs da;
  auto *dg = app.add_subcommand("degrade", "k-space truncate every slice in a directory");
  dg->add_option("--in", da.in)->required();
  dg->add_option("--scale", da.scale)->required();
  dg->add_option("--out", da.out)->required();
  dg->add_flag("--masks", da.masks, "also export the low-pass masks as PNG");

  TrainArgs ta;
  auto *tr = app.add_subcommand("train", "Train a model");
  tr->add_option("--config", ta.config);
  tr->add_option("--data", ta.data)->required();
  tr->add_option("--out", ta.out)->required();
  tr->add_flag("--no-k-loss", ta.no_k_loss);
  tr->add_option("--strategy", ta.strategy)
    ->check(CLI::IsMember({"cur-random", "random", "fixed-hr", "fixed-lr"}));
  tr->add_option("--resume", ta.resume);
  tr->add_option("--stop-epoch", ta.stop_epoch, "stop after this many completed epochs");

  EvalArgs ea;
  auto *ev = app.add_subcommand("eval", "Evaluate a checkpoint and the interpolation baselines");
  ev->add_option("--ckpt", ea.ckpt);
  ev->add_option("--data", ea.data)->required();
  ev->add_option("--scales", ea.scales);
  ev->add_option("--ref", ea.ref)->check(CLI::IsMember({"hr", "lr"}));
  ev->add_option("--split", ea.split);
  ev->add_option("--out", ea.out, "report.json, report.md, or a stem for both");
  ev->add_option("--error-maps", ea.error_maps, "directory for per-slice error map PNGs");
  ev->add_option("--max-slices", ea.max_slices);
  ev->add_flag("--baselines-only", ea.baselines_only);

  InferArgs ia;
  auto *in = app.add_subcommand("infer", "Super-resolve one slice");
  in->add_option("--ckpt", ia.ckpt)->required();
  in->add_option("--in", ia.in)->required();
  in->add_option("--ref", ia.ref)->required();
  in->add_option("--scale", ia.scale)->required()->check(CLI::Range(1.0, 8.0));
  in->add_option("--out", ia.out, "comma-separated; .png writes an image, anything else a slice file")->required();

  ServeArgs sa;
  auto *sv = app.add_subcommand("serve", "Run the HTTP inference service");
  sv->add_option("--ckpt", sa.ckpt);
  sv->add_option("--data", sa.data)->required();
  sv->add_option("--host", sa.host);
  sv->add_option("--port", sa.port);
  sv->add_option("--cache-entries", sa.cache_entries);
  sv->add_option("--cache-mb", sa.cache_mb);
  sv->add_option("--acquisition-factor", sa.acquisition, "LR views are the HR slices degraded by this");

  AblateArgs aa;
  auto *ab = app.add_subcommand("ablate", "Train and evaluate ablation variants");
  ab->add_option("--config", aa.config);
  ab->add_option("--data", aa.data)->required();
  ab->add_option("--out", aa.out)->required();
  ab->add_option("--flags", aa.flags);
  ab->add_option("--scales", aa.scales);
  ab->add_option("--epochs", aa.epochs)->check(CLI::PositiveNumber);
  ab->add_option("--max-slices", aa.max_slices);
  ab->add_option("--report", aa.report);

  CLI11_PARSE(app, argc, argv);
  spdlog::set_level(spdlog::level::from_str(log_level));

  try {
    if (*ph) return cmd_phantom(pa);
    if (*dg) return cmd_degrade(da);
    if (*tr) return cmd_train(ta);
    if (*ev) return cmd_eval(ea);
    if (*in) return cmd_infer(ia);
    if (*sv) return cmd_serve(sa);
    if (*ab) return cmd_ablate(aa);
  } catch (Error const &e) {
    spdlog::error("{}", e.what());
    return 2;
  } catch (std::exception const &e) {
    spdlog::error("{}", e.what());
    return 1;
  }
  return 0;
}
