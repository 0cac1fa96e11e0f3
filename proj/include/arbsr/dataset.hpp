#pragma once

#include "phantom.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace arbsr {

namespace fs = std::filesystem;

// Slice files: <base>.bin holds raw little-endian float32 pixels in row-major
// order, <base>.json the sidecar {"h","w","contrast","subject","slice",
// "norm_max"}. `path` may name the base, either file, or carry a ".mrs" suffix.
void write_slice(SliceImage const &img, fs::path const &path);
SliceImage read_slice(fs::path const &path);

struct SlicePaths
{
  fs::path bin;
  fs::path json;
};
SlicePaths slice_paths(fs::path const &path);

enum class Split { Train, Valid, Test };
std::string to_string(Split s);

struct ManifestEntry
{
  std::string subject_id;
  std::string slice_id;
  fs::path target_path;    // slice base path, absolute once loaded
  fs::path reference_path;
  Dims dims;

  bool operator==(ManifestEntry const &) const = default;
};

struct DatasetManifest
{
  Split split = Split::Train;
  std::vector<ManifestEntry> entries;
};

// Manifest files are JSON arrays of entry objects with paths relative to the
// manifest's directory.
void save_manifest(std::vector<ManifestEntry> const &entries, fs::path const &file);
DatasetManifest load_manifest(fs::path const &file, Split split);

struct Splits
{
  DatasetManifest train, valid, test;
};

// Assigns whole subjects to splits. Counts follow the ratios by largest
// remainder, with every split receiving at least one subject.
Splits build_splits(
  std::vector<ManifestEntry> const &entries, std::array<double, 3> const &ratios, std::uint64_t seed);

struct DatasetOptions
{
  std::uint64_t seed = 0;
  int subjects = 20;
  int slices_per_subject = 1;
  Dims size{96, 96};
  int n_ellipses = 10;
  std::array<double, 3> ratios{0.8, 0.1, 0.1};
};

// Writes slices/ plus manifest.json, train.json, valid.json and test.json.
Splits generate_dataset(DatasetOptions const &opts, fs::path const &dir);

// A loaded target/reference pair at HR.
struct SlicePair
{
  std::string subject_id;
  std::string slice_id;
  SliceImage target;
  SliceImage reference;
};

std::vector<SlicePair> load_pairs(DatasetManifest const &manifest);

} // namespace arbsr
