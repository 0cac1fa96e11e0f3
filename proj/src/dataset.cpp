#include "arbsr/dataset.hpp"

#include "arbsr/error.hpp"
#include "arbsr/rng.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fmt/format.h>
#include <fstream>
#include <json.hpp>
#include <map>
#include <numeric>
#include <set>

namespace arbsr {

static_assert(std::endian::native == std::endian::little, "slice payloads assume a little-endian host");

using ordered_json = nlohmann::ordered_json;

SlicePaths slice_paths(fs::path const &path)
{
  fs::path base = path;
  auto const ext = base.extension();
  if (ext == ".mrs" || ext == ".bin" || ext == ".json") {
    base.replace_extension();
  }
  return {fs::path(base).concat(".bin"), fs::path(base).concat(".json")};
}

void write_slice(SliceImage const &img, fs::path const &path)
{
  auto const [bin, json] = slice_paths(path);
  if (bin.has_parent_path()) {
    fs::create_directories(bin.parent_path());
  }
  {
    std::ofstream out(bin, std::ios::binary | std::ios::trunc);
    if (!out) {
      fail(ErrorKind::Io, fmt::format("cannot write {}", bin.string()));
    }
    out.write(
      reinterpret_cast<char const *>(img.pixels.data.data()),
      std::streamsize(img.pixels.data.size() * sizeof(float)));
  }
  ordered_json side;
  side["h"] = img.pixels.height;
  side["w"] = img.pixels.width;
  side["contrast"] = to_string(img.contrast);
  side["subject"] = img.subject_id;
  side["slice"] = img.slice_id;
  side["norm_max"] = img.norm_max;
  std::ofstream out(json, std::ios::trunc);
  if (!out) {
    fail(ErrorKind::Io, fmt::format("cannot write {}", json.string()));
  }
  out << side.dump(2) << "\n";
}

SliceImage read_slice(fs::path const &path)
{
  auto const [bin, json] = slice_paths(path);
  std::ifstream side_in(json);
  if (!side_in) {
    fail(ErrorKind::Io, fmt::format("missing sidecar {}", json.string()));
  }
  SliceImage img;
  int h = 0, w = 0;
  try {
    auto const side = nlohmann::json::parse(side_in);
    h = side.at("h").get<int>();
    w = side.at("w").get<int>();
    img.contrast = parse_contrast(side.at("contrast").get<std::string>());
    img.subject_id = side.at("subject").get<std::string>();
    img.slice_id = side.at("slice").get<std::string>();
    img.norm_max = side.at("norm_max").get<double>();
  } catch (nlohmann::json::exception const &e) {
    fail(ErrorKind::CorruptSidecar, fmt::format("{}: {}", json.string(), e.what()));
  } catch (Error const &e) {
    fail(ErrorKind::CorruptSidecar, fmt::format("{}: {}", json.string(), e.what()));
  }
  if (h <= 0 || w <= 0) {
    fail(ErrorKind::CorruptSidecar, fmt::format("{}: non-positive dims {}x{}", json.string(), h, w));
  }
  std::error_code ec;
  auto const bytes = fs::file_size(bin, ec);
  if (ec) {
    fail(ErrorKind::Io, fmt::format("missing payload {}", bin.string()));
  }
  auto const expected = std::uintmax_t(h) * std::uintmax_t(w) * sizeof(float);
  if (bytes != expected) {
    fail(
      ErrorKind::DimensionMismatch,
      fmt::format(
        "{}: sidecar claims {}x{} ({} bytes) but payload has {} bytes", bin.string(), h, w,
        expected, bytes));
  }
  img.pixels = Grid<float>(h, w);
  std::ifstream in(bin, std::ios::binary);
  in.read(reinterpret_cast<char *>(img.pixels.data.data()), std::streamsize(expected));
  if (!in) {
    fail(ErrorKind::Io, fmt::format("short read on {}", bin.string()));
  }
  return img;
}

std::string to_string(Split s)
{
  switch (s) {
  case Split::Train: return "train";
  case Split::Valid: return "valid";
  case Split::Test: return "test";
  }
  return "?";
}

void save_manifest(std::vector<ManifestEntry> const &entries, fs::path const &file)
{
  auto const root = file.parent_path();
  ordered_json arr = ordered_json::array();
  for (auto const &e : entries) {
    ordered_json j;
    j["subject"] = e.subject_id;
    j["slice"] = e.slice_id;
    j["target"] = e.target_path.is_absolute() ? fs::relative(e.target_path, root).generic_string()
                                              : e.target_path.generic_string();
    j["reference"] = e.reference_path.is_absolute()
                       ? fs::relative(e.reference_path, root).generic_string()
                       : e.reference_path.generic_string();
    j["h"] = e.dims.h;
    j["w"] = e.dims.w;
    arr.push_back(std::move(j));
  }
  std::ofstream out(file, std::ios::trunc);
  if (!out) {
    fail(ErrorKind::Io, fmt::format("cannot write {}", file.string()));
  }
  out << arr.dump(2) << "\n";
}

DatasetManifest load_manifest(fs::path const &file, Split split)
{
  std::ifstream in(file);
  if (!in) {
    fail(ErrorKind::Io, fmt::format("missing manifest {}", file.string()));
  }
  DatasetManifest m;
  m.split = split;
  auto const root = fs::absolute(file).parent_path();
  try {
    auto const arr = nlohmann::json::parse(in);
    for (auto const &j : arr) {
      ManifestEntry e;
      e.subject_id = j.at("subject").get<std::string>();
      e.slice_id = j.at("slice").get<std::string>();
      e.target_path = root / j.at("target").get<std::string>();
      e.reference_path = root / j.at("reference").get<std::string>();
      e.dims = {j.at("h").get<int>(), j.at("w").get<int>()};
      m.entries.push_back(std::move(e));
    }
  } catch (nlohmann::json::exception const &e) {
    fail(ErrorKind::CorruptSidecar, fmt::format("{}: {}", file.string(), e.what()));
  }
  for (auto const &e : m.entries) {
    for (auto const &p : {e.target_path, e.reference_path}) {
      if (!fs::exists(slice_paths(p).bin) || !fs::exists(slice_paths(p).json)) {
        fail(ErrorKind::NotFound, fmt::format("manifest entry {} does not resolve", p.string()));
      }
    }
  }
  return m;
}

Splits build_splits(
  std::vector<ManifestEntry> const &entries, std::array<double, 3> const &ratios, std::uint64_t seed)
{
  double const total = ratios[0] + ratios[1] + ratios[2];
  if (std::any_of(ratios.begin(), ratios.end(), [](double r) { return !(r > 0.0); }) ||
      std::abs(total - 1.0) > 1e-9) {
    fail(ErrorKind::InvalidArgument, "split ratios must be positive and sum to 1");
  }
  std::vector<std::string> subjects;
  {
    std::set<std::string> seen;
    for (auto const &e : entries) {
      if (seen.insert(e.subject_id).second) {
        subjects.push_back(e.subject_id);
      }
    }
  }
  std::sort(subjects.begin(), subjects.end());
  int const n = int(subjects.size());
  if (n < 3) {
    fail(ErrorKind::InvalidArgument, fmt::format("{} subjects cannot fill 3 splits", n));
  }

  // Largest-remainder apportionment.
  std::array<int, 3> counts{};
  std::array<double, 3> rem{};
  int assigned = 0;
  for (int i = 0; i < 3; i++) {
    double const quota = ratios[i] * n;
    counts[i] = int(std::floor(quota + 1e-9));
    rem[i] = quota - counts[i];
    assigned += counts[i];
  }
  while (assigned < n) {
    int const best = int(std::max_element(rem.begin(), rem.end()) - rem.begin());
    counts[best]++;
    rem[best] = -1.0;
    assigned++;
  }
  for (int i = 0; i < 3; i++) {
    while (counts[i] == 0) {
      int const donor = int(std::max_element(counts.begin(), counts.end()) - counts.begin());
      counts[donor]--;
      counts[i]++;
    }
  }

  Rng rng(derive_seed({seed, 0x73706c74}));
  for (int i = n - 1; i > 0; i--) {
    std::swap(subjects[i], subjects[uniform_int(rng, i + 1)]);
  }
  std::map<std::string, Split> assignment;
  for (int i = 0; i < n; i++) {
    assignment[subjects[i]] = i < counts[0]              ? Split::Train
                              : i < counts[0] + counts[1] ? Split::Valid
                                                          : Split::Test;
  }
  Splits out;
  out.train.split = Split::Train;
  out.valid.split = Split::Valid;
  out.test.split = Split::Test;
  for (auto const &e : entries) {
    switch (assignment[e.subject_id]) {
    case Split::Train: out.train.entries.push_back(e); break;
    case Split::Valid: out.valid.entries.push_back(e); break;
    case Split::Test: out.test.entries.push_back(e); break;
    }
  }
  return out;
}

Splits generate_dataset(DatasetOptions const &opts, fs::path const &dir)
{
  if (opts.subjects < 3 || opts.slices_per_subject < 1) {
    fail(ErrorKind::InvalidArgument, "need at least 3 subjects and 1 slice per subject");
  }
  fs::create_directories(dir / "slices");
  std::vector<ManifestEntry> entries;
  for (int s = 0; s < opts.subjects; s++) {
    for (int k = 0; k < opts.slices_per_subject; k++) {
      PhantomSpec spec;
      spec.seed = derive_seed({opts.seed, std::uint64_t(s)});
      spec.canvas = opts.size;
      spec.n_ellipses = opts.n_ellipses;
      spec.intensity_target = default_target_intensities();
      spec.intensity_reference = default_reference_intensities();
      spec.slice_position =
        opts.slices_per_subject > 1 ? -0.3 + 0.6 * k / (opts.slices_per_subject - 1) : 0.0;
      spec.subject_id = fmt::format("sub{:03d}", s);
      spec.slice_id = fmt::format("sl{:02d}", k);
      auto const pair = generate_phantom(spec);
      auto const stem = fmt::format("{}_{}", spec.subject_id, spec.slice_id);
      auto const tar = dir / "slices" / (stem + "_target");
      auto const ref = dir / "slices" / (stem + "_reference");
      write_slice(pair.target, tar);
      write_slice(pair.reference, ref);
      entries.push_back(
        {spec.subject_id, spec.slice_id, fs::path("slices") / (stem + "_target"),
         fs::path("slices") / (stem + "_reference"), opts.size});
    }
  }
  auto splits = build_splits(entries, opts.ratios, opts.seed);
  save_manifest(entries, dir / "manifest.json");
  save_manifest(splits.train.entries, dir / "train.json");
  save_manifest(splits.valid.entries, dir / "valid.json");
  save_manifest(splits.test.entries, dir / "test.json");
  return splits;
}

std::vector<SlicePair> load_pairs(DatasetManifest const &manifest)
{
  std::vector<SlicePair> pairs;
  for (auto const &e : manifest.entries) {
    SlicePair p{e.subject_id, e.slice_id, read_slice(e.target_path), read_slice(e.reference_path)};
    if (p.target.dims() != p.reference.dims()) {
      fail(
        ErrorKind::DimensionMismatch,
        fmt::format("{}/{}: target and reference dims differ", e.subject_id, e.slice_id));
    }
    pairs.push_back(std::move(p));
  }
  return pairs;
}

} // namespace arbsr
