#include "arbsr/eval.hpp"

#include "arbsr/error.hpp"
#include "arbsr/kspace.hpp"
#include "arbsr/losses.hpp"
#include "arbsr/png.hpp"
#include "arbsr/reconstruct.hpp"

#include <algorithm>
#include <cmath>
#include <fmt/format.h>
#include <fstream>
#include <spdlog/spdlog.h>

namespace arbsr {

namespace fs = std::filesystem;

namespace {

// Keys kernel, a = -0.5.
double keys(double x)
{
  constexpr double a = -0.5;
  x = std::abs(x);
  if (x <= 1.0) {
    return ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0;
  }
  if (x < 2.0) {
    return ((a * x - 5.0 * a) * x + 8.0 * a) * x - 4.0 * a;
  }
  return 0.0;
}

struct Taps
{
  std::array<int, 4> idx;
  std::array<double, 4> w;
};

std::vector<Taps> cubic_taps(int out, int in)
{
  std::vector<Taps> t(out);
  double const step = double(in) / out;
  for (int i = 0; i < out; i++) {
    double const src = i * step;
    int const base = int(std::floor(src));
    for (int k = 0; k < 4; k++) {
      int const j = base - 1 + k;
      t[i].idx[k] = std::clamp(j, 0, in - 1);
      t[i].w[k] = keys(src - j);
    }
  }
  return t;
}

void check_dims(Dims a, Dims b, char const *what)
{
  if (a != b) {
    fail(ErrorKind::DimensionMismatch, fmt::format("{}: dims {}x{} vs {}x{}", what, a.h, a.w, b.h, b.w));
  }
}

} // namespace

Grid<double> upsample_nearest(Grid<double> const &lr, Dims hr)
{
  if (hr.h <= 0 || hr.w <= 0 || lr.size() == 0) {
    fail(ErrorKind::InvalidArgument, "upsample_nearest: empty dims");
  }
  auto src = [](int i, int out, int in) {
    return std::min(in - 1, int(std::floor(i * double(in) / out + 0.5)));
  };
  Grid<double> out(hr.h, hr.w);
  for (int y = 0; y < hr.h; y++) {
    int const sy = src(y, hr.h, lr.height);
    for (int x = 0; x < hr.w; x++) {
      out(y, x) = lr(sy, src(x, hr.w, lr.width));
    }
  }
  return out;
}

Grid<double> upsample_bicubic(Grid<double> const &lr, Dims hr)
{
  if (hr.h <= 0 || hr.w <= 0 || lr.size() == 0) {
    fail(ErrorKind::InvalidArgument, "upsample_bicubic: empty dims");
  }
  auto const ty = cubic_taps(hr.h, lr.height);
  auto const tx = cubic_taps(hr.w, lr.width);
  Grid<double> rows(lr.height, hr.w);
  for (int y = 0; y < lr.height; y++) {
    for (int x = 0; x < hr.w; x++) {
      double s = 0.0;
      for (int k = 0; k < 4; k++) {
        s += tx[x].w[k] * lr(y, tx[x].idx[k]);
      }
      rows(y, x) = s;
    }
  }
  Grid<double> out(hr.h, hr.w);
  for (int y = 0; y < hr.h; y++) {
    for (int x = 0; x < hr.w; x++) {
      double s = 0.0;
      for (int k = 0; k < 4; k++) {
        s += ty[y].w[k] * rows(ty[y].idx[k], x);
      }
      out(y, x) = s;
    }
  }
  return out;
}

ErrorMap error_map(Grid<double> const &sr, Grid<double> const &hr)
{
  check_dims(sr.dims(), hr.dims(), "error_map");
  ErrorMap m;
  m.abs = Grid<double>(sr.height, sr.width);
  for (std::size_t i = 0; i < sr.size(); i++) {
    m.abs.data[i] = std::abs(sr.data[i] - hr.data[i]);
    m.max = std::max(m.max, m.abs.data[i]);
  }
  return m;
}

std::array<std::uint8_t, 3> colormap(double t)
{
  t = std::clamp(t, 0.0, 1.0);
  auto ch = [](double v) { return std::uint8_t(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)); };
  return {ch(3.0 * t), ch(3.0 * t - 1.0), ch(3.0 * t - 2.0)};
}

std::vector<std::uint8_t> error_map_png(ErrorMap const &m, double vmax)
{
  double const top = vmax > 0.0 ? vmax : m.max;
  std::vector<std::uint8_t> rgb(m.abs.size() * 3);
  for (std::size_t i = 0; i < m.abs.size(); i++) {
    auto const c = colormap(top > 0.0 ? m.abs.data[i] / top : 0.0);
    std::copy(c.begin(), c.end(), rgb.begin() + 3 * i);
  }
  return encode_png_rgb(m.abs.height, m.abs.width, rgb);
}

std::vector<double> default_eval_scales() { return {1.5, 2.0, 3.0, 4.0, 6.0, 8.0}; }

namespace {

nlohmann::ordered_json number(double v) { return std::isfinite(v) ? nlohmann::ordered_json(v) : nlohmann::ordered_json(); }

nlohmann::ordered_json score_json(Score const &s)
{
  return nlohmann::ordered_json{{"psnr", number(s.psnr)}, {"ssim", number(s.ssim)}};
}

std::string scale_label(double s) { return fmt::format("x{}", s); }

nlohmann::ordered_json report_json(EvalReport const &r)
{
  nlohmann::ordered_json o;
  o["label"] = r.label;
  o["ref_mode"] = r.ref_mode;
  o["slices"] = r.slices;
  o["methods"] = r.methods;
  auto rows = nlohmann::ordered_json::array();
  for (auto const &row : r.rows) {
    nlohmann::ordered_json jr;
    jr["scale"] = row.scale;
    jr["out_of_distribution"] = row.out_of_distribution;
    nlohmann::ordered_json scores;
    for (std::size_t m = 0; m < r.methods.size(); m++) {
      scores[r.methods[m]] = score_json(row.scores[m]);
    }
    jr["scores"] = scores;
    rows.push_back(jr);
  }
  o["rows"] = rows;
  nlohmann::ordered_json avg;
  for (std::size_t m = 0; m < r.methods.size(); m++) {
    avg[r.methods[m]] = score_json(r.averages[m]);
  }
  o["averages"] = avg;
  return o;
}

std::string cell(Score const &s)
{
  auto const p = std::isfinite(s.psnr) ? fmt::format("{:.3f}", s.psnr) : std::string("inf");
  return fmt::format("{} / {:.4f}", p, s.ssim);
}

} // namespace

void to_json(nlohmann::json &j, EvalReport const &r) { j = nlohmann::json::parse(report_json(r).dump()); }

std::string to_markdown(EvalReport const &r)
{
  std::string md = fmt::format("### {} (test ref: {}, {} slices)\n\n", r.label, r.ref_mode, r.slices);
  md += "| Method |";
  std::string sep = "|---|";
  std::string group = "| |";
  for (auto const &row : r.rows) {
    md += fmt::format(" {} |", scale_label(row.scale));
    sep += "---|";
    group += row.out_of_distribution ? " out-of-dist. |" : " in-dist. |";
  }
  md += " Average |\n";
  sep += "---|\n";
  group += " |\n";
  md += sep + group;
  for (std::size_t m = 0; m < r.methods.size(); m++) {
    md += fmt::format("| {} |", r.methods[m]);
    for (auto const &row : r.rows) {
      md += fmt::format(" {} |", cell(row.scores[m]));
    }
    md += fmt::format(" {} |\n", cell(r.averages[m]));
  }
  md += "\nCells: PSNR (dB) / SSIM.\n";
  return md;
}

std::string to_markdown(std::vector<EvalReport> const &reports)
{
  std::string md;
  for (auto const &r : reports) {
    md += to_markdown(r) + "\n";
  }
  return md;
}

void write_reports(std::vector<EvalReport> const &reports, fs::path const &out)
{
  if (out.has_parent_path()) {
    fs::create_directories(out.parent_path());
  }
  std::ofstream f(out, std::ios::trunc);
  if (!f) {
    fail(ErrorKind::Io, fmt::format("cannot write {}", out.string()));
  }
  if (out.extension() == ".md") {
    f << to_markdown(reports);
  } else if (reports.size() == 1) {
    f << report_json(reports[0]).dump(2) << "\n";
  } else {
    f << "[\n";
    for (std::size_t i = 0; i < reports.size(); i++) {
      f << report_json(reports[i]).dump(2) << (i + 1 < reports.size() ? ",\n" : "\n");
    }
    f << "]\n";
  }
}

void write_report(EvalReport const &r, fs::path const &out) { write_reports({r}, out); }

EvalReport evaluate(std::vector<SlicePair> const &pairs, std::vector<NamedMethod> const &methods, EvalOptions const &opts)
{
  if (pairs.empty()) {
    fail(ErrorKind::InvalidArgument, "evaluation needs a non-empty test set");
  }
  if (methods.empty() || opts.scales.empty()) {
    fail(ErrorKind::InvalidArgument, "evaluation needs methods and scales");
  }
  EvalReport rep;
  rep.label = opts.label;
  rep.ref_mode = to_string(opts.ref_mode);
  rep.slices = int(pairs.size());
  for (auto const &m : methods) {
    rep.methods.push_back(m.name);
  }
  for (double k : opts.scales) {
    EvalRow row;
    row.scale = k;
    row.out_of_distribution = k > kTrainScaleMax;
    row.scores.assign(methods.size(), Score{});
    for (std::size_t pi = 0; pi < pairs.size(); pi++) {
      auto const &p = pairs[pi];
      auto const hr = p.target.pixels.cast<double>();
      for (int d : {hr.height, hr.width}) {
        double const q = d / k;
        if (std::abs(q - std::round(q)) > 1e-9) {
          fail(
            ErrorKind::InvalidArgument,
            fmt::format("slice {}/{}: size {} not divisible by scale {}", p.subject_id, p.slice_id, d, k));
        }
      }
      auto const lr = degrade(hr, k);
      auto const ref_full = p.reference.pixels.cast<double>();
      auto const ref = opts.ref_mode == RefMode::LR ? degrade(ref_full, k) : ref_full;
      auto const task = make_task(hr.dims(), lr.dims(), ref.dims(), opts.ref_mode);
      for (std::size_t m = 0; m < methods.size(); m++) {
        auto sr = methods[m].fn(lr, ref, task, hr);
        check_dims(sr.dims(), hr.dims(), "method output");
        if (opts.clamp) {
          for (auto &v : sr.data) {
            v = std::clamp(v, 0.0, 1.0);
          }
        }
        row.scores[m].psnr += psnr(sr, hr) / double(pairs.size());
        row.scores[m].ssim += ssim(sr, hr) / double(pairs.size());
        if (!opts.error_map_dir.empty() && pi == 0) {
          auto const em = error_map(sr, hr);
          write_bytes(
            opts.error_map_dir / fmt::format("{}_x{}_{}.png", methods[m].name, k, p.slice_id),
            error_map_png(em, opts.error_map_vmax));
        }
      }
    }
    rep.rows.push_back(std::move(row));
  }
  rep.averages.assign(methods.size(), Score{});
  for (std::size_t m = 0; m < methods.size(); m++) {
    double sp = 0.0, ss = 0.0;
    for (auto const &row : rep.rows) {
      sp += row.scores[m].psnr;
      ss += row.scores[m].ssim;
    }
    rep.averages[m] = {sp / double(rep.rows.size()), ss / double(rep.rows.size())};
  }
  return rep;
}

std::vector<NamedMethod> baseline_methods()
{
  return {
    {"Bicubic", [](auto const &lr, auto const &, ScaleTask const &t, auto const &) { return upsample_bicubic(lr, t.hr); }},
    {"Nearest", [](auto const &lr, auto const &, ScaleTask const &t, auto const &) { return upsample_nearest(lr, t.hr); }},
  };
}

NamedMethod model_method(std::shared_ptr<DualArbNet<float> const> model)
{
  auto rec = std::make_shared<Reconstructor>(std::move(model));
  return {"Dual-ArbNet", [rec](auto const &lr, auto const &ref, ScaleTask const &t, auto const &) {
            return rec->reconstruct(lr, ref, t);
          }};
}

EvalReport eval_model(
  std::shared_ptr<DualArbNet<float> const> model, std::vector<SlicePair> const &pairs, EvalOptions const &opts)
{
  std::vector<NamedMethod> methods{model_method(std::move(model))};
  for (auto &b : baseline_methods()) {
    methods.push_back(std::move(b));
  }
  return evaluate(pairs, methods, opts);
}

std::vector<std::string> ablation_flags() { return {"strategies", "no-k-loss", "no-ref", "no-scale", "no-coord"}; }

std::vector<AblationVariant> ablation_variants(TrainConfig const &base, std::vector<std::string> const &flags)
{
  auto const known = ablation_flags();
  std::vector<AblationVariant> out;
  for (auto const &f : flags) {
    if (std::find(known.begin(), known.end(), f) == known.end()) {
      fail(ErrorKind::InvalidArgument, fmt::format("unknown ablation flag '{}'", f));
    }
  }
  auto has = [&](char const *f) { return std::find(flags.begin(), flags.end(), f) != flags.end(); };
  if (has("strategies")) {
    for (auto s : {Strategy::FixedLR, Strategy::FixedHR, Strategy::Random, Strategy::CurRandom}) {
      AblationVariant v{to_string(s), base, {RefMode::LR, RefMode::HR}};
      v.config.strategy = s;
      out.push_back(std::move(v));
    }
  }
  auto component = [&](char const *flag, char const *label, auto edit) {
    if (has(flag)) {
      AblationVariant v{label, base, {RefMode::HR}};
      v.config.strategy = Strategy::CurRandom;
      edit(v.config);
      out.push_back(std::move(v));
    }
  };
  component("no-coord", "w/o coord", [](TrainConfig &c) { c.model.use_coord = false; });
  component("no-scale", "w/o scale", [](TrainConfig &c) { c.model.use_scale = false; });
  component("no-ref", "w/o ref", [](TrainConfig &c) { c.model.use_ref = false; });
  component("no-k-loss", "w/o k-loss", [](TrainConfig &c) { c.loss.k_loss_on = false; });
  return out;
}

std::vector<EvalReport> ablation_suite(
  std::vector<AblationVariant> const &variants, fs::path const &data_dir, fs::path const &out_dir, int epochs,
  EvalOptions const &eval_opts, int max_test_slices)
{
  auto test = load_pairs(load_manifest(data_dir / "test.json", Split::Test));
  if (max_test_slices > 0 && int(test.size()) > max_test_slices) {
    test.resize(max_test_slices);
  }
  std::vector<EvalReport> reports;
  for (auto const &v : variants) {
    std::string dir = v.label;
    std::replace(dir.begin(), dir.end(), '/', '_');
    std::replace(dir.begin(), dir.end(), ' ', '_');
    spdlog::info("ablation variant '{}'", v.label);
    Trainer trainer(v.config, data_dir, out_dir / dir);
    trainer.run(epochs);
    auto const model = std::make_shared<DualArbNet<float> const>(v.config.model, trainer.state().params);
    for (auto ref : v.test_refs) {
      auto opts = eval_opts;
      opts.ref_mode = ref;
      opts.label = v.label;
      reports.push_back(eval_model(model, test, opts));
    }
  }
  return reports;
}

} // namespace arbsr
