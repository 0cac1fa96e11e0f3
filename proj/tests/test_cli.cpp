#include "arbsr/dataset.hpp"
#include "arbsr/kspace.hpp"
#include "arbsr/png.hpp"
#include "arbsr/service.hpp"
#include "arbsr/trainer.hpp"
#include "gradcheck.hpp"
#include "tmpdir.hpp"

#include <doctest.h>
#include <fmt/format.h>

#include <algorithm>
#include <cstdlib>
#include <fstream>

using namespace arbsr;
using nlohmann::json;

namespace {

int run(std::string const &args)
{
  auto const cmd = fmt::format("\"{}\" --log-level warn {}", ARBSR_CLI, args);
  int const rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

std::string q(std::filesystem::path const &p) { return "\"" + p.string() + "\""; }

json read_json(std::filesystem::path const &p)
{
  std::ifstream in(p);
  return json::parse(in);
}

std::vector<std::uint8_t> read_bytes(std::filesystem::path const &p)
{
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

} // namespace

TEST_CASE("command line round trip")
{
  TempDir dir;
  auto const data = dir / "data";
  REQUIRE(run(fmt::format("phantom-gen --seed 3 --subjects 3 --size 48x48 --ellipses 5 --out {}", q(data))) == 0);
  CHECK(std::filesystem::exists(data / "manifest.json"));
  CHECK(read_json(data / "manifest.json").size() > 0);

  SUBCASE("degrade writes LR slices and masks")
  {
    auto const lr = dir / "lr";
    REQUIRE(run(fmt::format("degrade --in {} --scale 3 --out {} --masks", q(data), q(lr))) == 0);
    auto const hr_entry = load_manifest(data / "manifest.json", Split::Train).entries.at(0);
    auto const got = read_slice(lr / hr_entry.target_path.filename());
    CHECK(got.dims() == Dims{16, 16});
    auto const want = degrade(read_slice(data / hr_entry.target_path).pixels.cast<double>(), 3.0);
    CHECK(got.pixels.data == want.cast<float>().data);
    auto const mask = decode_png_gray(read_bytes(lr / "mask_48x48.png"));
    CHECK(mask.dims() == Dims{48, 48});
    CHECK(std::count(mask.data.begin(), mask.data.end(), 1.0) == 16 * 16);
  }

  SUBCASE("train, eval, infer and the service agree")
  {
    TrainConfig c;
    c.model = gradcheck::tiny_config();
    c.schedule.warmup_epochs = 1;
    c.schedule.prelearn_epochs = 1;
    c.schedule.fulltrain_epochs = 1;
    c.batch = 2;
    c.lr_patch = 8;
    c.steps_per_epoch = 1;
    c.valid_scales = {2.0};
    auto const cfg_file = dir / "tiny.json";
    std::ofstream(cfg_file) << json(c).dump();
    auto const run_dir = dir / "run";
    REQUIRE(run(fmt::format("train --config {} --data {} --out {}", q(cfg_file), q(data), q(run_dir))) == 0);
    auto const ckpt = run_dir / "last.ckpt";
    REQUIRE(std::filesystem::exists(ckpt));
    auto const log = read_json(run_dir / "config.json");
    CHECK(log["batch"] == 2);
    std::ifstream tl(run_dir / "train_log.jsonl");
    std::string line;
    REQUIRE(std::getline(tl, line));
    auto const rec = json::parse(line);
    for (auto const *k : {"epoch", "step", "stage", "lr", "l_rec", "l_k", "l_full", "s", "ref_mode"}) {
      CHECK_MESSAGE(rec.contains(k), k);
    }

    auto const report = dir / "report";
    REQUIRE(run(fmt::format(
              "eval --ckpt {} --data {} --scales 2,6 --ref hr --out {}", q(ckpt), q(data), q(report))) == 0);
    auto const rj = read_json(fs::path(report).concat(".json"));
    CHECK(rj["rows"].size() == 2);
    CHECK(rj["methods"].size() == 3);
    CHECK(std::filesystem::exists(fs::path(report).concat(".md")));

    // infer on the service's own inputs: LR = degrade(HR, 2), HR reference.
    auto const cat = scan_catalog(data, 2.0);
    REQUIRE(!cat.empty());
    auto const &slice = cat[0].slices[0];
    auto lr = read_slice(slice.target);
    lr = degrade(lr, 2.0);
    write_slice(lr, dir / "in.mrs");
    auto const sr_mrs = dir / "sr.mrs";
    auto const sr_png = dir / "sr.png";
    REQUIRE(run(fmt::format(
              "infer --ckpt {} --in {} --ref {} --scale 2.5 --out {},{}", q(ckpt), q(dir / "in.mrs"),
              q(slice.reference), sr_mrs.string(), sr_png.string())) == 0);
    auto const sr = read_slice(sr_mrs);
    CHECK(sr.dims() == Dims{60, 60});
    CHECK(decode_png_gray(read_bytes(sr_png)).dims() == Dims{60, 60});

    ServiceOptions o;
    o.data_dir = data;
    o.checkpoint = ckpt;
    InferenceService svc(o);
    RoiRequest req;
    req.volume_id = cat[0].id;
    req.slice_id = slice.id;
    req.roi = {0, 0, 24, 24};
    req.scale = 2.5;
    auto const res = svc.reconstruct(req);
    CHECK(res.sr.cast<float>().data == sr.pixels.data);

    // Error exits.
    CHECK(run(fmt::format("infer --ckpt {} --in {} --ref {} --scale 2 --out x.mrs", q(dir / "none.ckpt"),
                          q(dir / "in.mrs"), q(slice.reference))) == 2);
    CHECK(run("eval --data /nonexistent --baselines-only") == 2);
    CHECK(run("train --data x --out y --strategy sideways") != 0);
  }
}
