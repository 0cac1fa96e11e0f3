#pragma once

#include "error.hpp"
#include "eval.hpp"
#include "geometry.hpp"
#include "reconstruct.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <json.hpp>
#include <list>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

namespace httplib {
class Server;
}

namespace arbsr {

std::string base64_encode(std::vector<std::uint8_t> const &bytes);
std::vector<std::uint8_t> base64_decode(std::string const &text);

// ROI in target-LR pixel units.
struct Roi
{
  int x0 = 0, y0 = 0, w = 0, h = 0;
  bool operator==(Roi const &) const = default;
};

struct RoiRequest
{
  std::string volume_id;
  std::string slice_id;
  Roi roi;
  double scale = 2.0;
  RefMode ref_mode = RefMode::HR;
  bool compare = false;
  bool raw = false; // attach the float32 pixels as well as the PNG
};

// Throws InvalidArgument on missing or mistyped fields.
RoiRequest parse_roi_request(nlohmann::json const &j);

struct RoiResult
{
  Grid<double> sr;  // clamped to [0, 1]
  Rect rect;        // decoded window on the full-slice HR grid
  Dims hr_full;
  double s_exact = 0.0;
  bool cache_hit = false;
  std::optional<Score> metrics;         // compare only, vs. the HR crop when the grid has ground truth
  std::optional<Grid<double>> baseline; // bicubic, when compare is set
  std::optional<Score> baseline_metrics;
  std::optional<ErrorMap> error;
};

nlohmann::json to_json(RoiResult const &r, bool raw);

struct FeatureCacheKey
{
  std::string slice;      // "<volume>/<slice>"
  std::int64_t scale_q = 0; // scale in 1/96 steps
  RefMode ref_mode = RefMode::HR;
  std::string checkpoint;

  auto operator<=>(FeatureCacheKey const &) const = default;
};

struct CacheStats
{
  std::size_t entries = 0;
  std::size_t bytes = 0;
  std::uint64_t hits = 0;
  std::uint64_t misses = 0;
};

// Least-recently-used store of fused full-slice features, bounded by entry
// count and bytes. Entries are immutable once inserted.
class FeatureCache
{
public:
  FeatureCache(std::size_t max_entries, std::size_t max_bytes);

  std::shared_ptr<PreparedSlice const> get(FeatureCacheKey const &key);
  void put(FeatureCacheKey const &key, std::shared_ptr<PreparedSlice const> value);
  void clear();
  CacheStats stats() const;

private:
  using Entry = std::pair<FeatureCacheKey, std::shared_ptr<PreparedSlice const>>;

  void evict_locked();

  std::size_t max_entries_;
  std::size_t max_bytes_;
  mutable std::mutex mu_;
  std::list<Entry> order_; // front = most recent
  std::map<FeatureCacheKey, std::list<Entry>::iterator> index_;
  std::size_t bytes_ = 0;
  std::uint64_t hits_ = 0, misses_ = 0;
};

inline constexpr int kScaleSteps = 96;

struct ServiceOptions
{
  std::filesystem::path data_dir;
  std::filesystem::path checkpoint; // empty: start without a model
  double scale_min = 1.0;
  double scale_max = 8.0;
  double acquisition_factor = 2.0; // LR views are the stored HR slices degraded by this
  std::size_t cache_entries = 16;
  std::size_t cache_bytes = std::size_t(1) << 30;
};

struct CatalogSlice
{
  std::string id;
  Dims hr;
  Dims lr;
  std::filesystem::path target;
  std::filesystem::path reference; // empty when absent
  double norm_max = 1.0;
};

struct CatalogVolume
{
  std::string id;
  std::vector<CatalogSlice> slices;
};

// Groups <data_dir>/slices/*.json sidecars by subject and slice. A missing
// directory yields an empty catalog.
std::vector<CatalogVolume> scan_catalog(std::filesystem::path const &data_dir, double acquisition_factor);

class InferenceService
{
public:
  explicit InferenceService(ServiceOptions opts);

  // Loads a checkpoint and swaps it in atomically; on failure the previous
  // model stays active.
  void load_model(std::filesystem::path const &ckpt);
  void reload(std::optional<std::filesystem::path> const &ckpt = std::nullopt);
  bool model_loaded() const;
  std::string checkpoint_hash() const;

  nlohmann::json health() const;
  nlohmann::json volumes() const;
  std::vector<std::uint8_t> slice_png(std::string const &volume, std::string const &slice, std::string const &view) const;
  RoiResult reconstruct(RoiRequest const &req);

  CacheStats cache_stats() const { return cache_.stats(); }
  ServiceOptions const &options() const { return opts_; }

private:
  struct Snapshot
  {
    std::shared_ptr<Reconstructor const> rec;
    std::string hash;
    std::filesystem::path path;
  };

  std::shared_ptr<Snapshot const> snapshot() const;
  CatalogSlice const &find(std::string const &volume, std::string const &slice) const;

  ServiceOptions opts_;
  std::vector<CatalogVolume> catalog_;
  mutable std::mutex snap_mu_;
  std::shared_ptr<Snapshot const> snap_;
  FeatureCache cache_;
};

// Maps error categories to HTTP status codes: NotFound 404, Unavailable 503,
// request validation 422, everything else 500.
int http_status(ErrorKind kind);

void register_routes(httplib::Server &server, InferenceService &service);

// Blocks until the server stops. Port 0 picks a free port; `on_bound`
// receives the port actually bound.
void serve(InferenceService &service, std::string const &host, int port, std::function<void(int)> const &on_bound = {});

} // namespace arbsr
