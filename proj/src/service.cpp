#include "arbsr/service.hpp"

#include "arbsr/dataset.hpp"
#include "arbsr/error.hpp"
#include "arbsr/kspace.hpp"
#include "arbsr/losses.hpp"
#include "arbsr/png.hpp"
#include "arbsr/trainer.hpp"

#include <boost/beast/core/detail/base64.hpp>
#include <fmt/format.h>
#include <httplib.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <cstring>

namespace arbsr {

namespace fs = std::filesystem;
using nlohmann::json;

std::string base64_encode(std::vector<std::uint8_t> const &bytes)
{
  namespace b64 = boost::beast::detail::base64;
  std::string out(b64::encoded_size(bytes.size()), '\0');
  out.resize(b64::encode(out.data(), bytes.data(), bytes.size()));
  return out;
}

std::vector<std::uint8_t> base64_decode(std::string const &text)
{
  namespace b64 = boost::beast::detail::base64;
  std::vector<std::uint8_t> out(b64::decoded_size(text.size()));
  auto const [written, read] = b64::decode(out.data(), text.data(), text.size());
  // The decoder stops at the first '=' or invalid character; only padding may follow.
  auto const rest = text.size() - read;
  if (rest > 2 || text.find_first_not_of('=', read) != std::string::npos) {
    fail(ErrorKind::InvalidArgument, "malformed base64");
  }
  out.resize(written);
  return out;
}

// ---------------------------------------------------------------------------
// Requests and responses

RoiRequest parse_roi_request(json const &j)
{
  try {
    RoiRequest r;
    r.volume_id = j.at("volume_id").get<std::string>();
    r.slice_id = j.at("slice_id").get<std::string>();
    auto const &roi = j.at("roi");
    r.roi = {roi.at("x0").get<int>(), roi.at("y0").get<int>(), roi.at("w").get<int>(), roi.at("h").get<int>()};
    r.scale = j.at("scale").get<double>();
    r.ref_mode = parse_ref_mode(j.value("ref_mode", std::string("hr")));
    r.compare = j.value("compare", false);
    r.raw = j.value("raw", false);
    return r;
  } catch (json::exception const &e) {
    fail(ErrorKind::InvalidArgument, fmt::format("bad reconstruct request: {}", e.what()));
  }
}

namespace {

json number(double v) { return std::isfinite(v) ? json(v) : json(); }

std::vector<std::uint8_t> float_bytes(Grid<double> const &g)
{
  std::vector<std::uint8_t> out(g.size() * sizeof(float));
  for (std::size_t i = 0; i < g.size(); i++) {
    float const f = float(g.data[i]);
    std::memcpy(out.data() + i * sizeof(float), &f, sizeof(float));
  }
  return out;
}

Grid<double> crop(Grid<double> const &img, Rect r)
{
  Grid<double> out(r.h, r.w);
  for (int y = 0; y < r.h; y++) {
    for (int x = 0; x < r.w; x++) {
      out(y, x) = img(r.y0 + y, r.x0 + x);
    }
  }
  return out;
}

void clamp01(Grid<double> &g)
{
  for (auto &v : g.data) {
    v = std::clamp(v, 0.0, 1.0);
  }
}

} // namespace

json to_json(RoiResult const &r, bool raw)
{
  json j{
    {"png", base64_encode(encode_png_gray(r.sr))},
    {"h", r.sr.height},
    {"w", r.sr.width},
    {"scale_exact", r.s_exact},
    {"hr_h", r.hr_full.h},
    {"hr_w", r.hr_full.w},
    {"rect", {{"x0", r.rect.x0}, {"y0", r.rect.y0}, {"w", r.rect.w}, {"h", r.rect.h}}},
    {"cache_hit", r.cache_hit},
  };
  if (r.metrics) {
    j["psnr"] = number(r.metrics->psnr);
    j["ssim"] = number(r.metrics->ssim);
  }
  if (r.error) {
    j["error_png"] = base64_encode(error_map_png(*r.error));
    j["error_max"] = r.error->max;
  }
  if (r.baseline) {
    j["baseline_png"] = base64_encode(encode_png_gray(*r.baseline));
    j["baseline_method"] = "Bicubic";
  }
  if (r.baseline_metrics) {
    j["baseline_psnr"] = number(r.baseline_metrics->psnr);
    j["baseline_ssim"] = number(r.baseline_metrics->ssim);
  }
  if (raw) {
    j["sr_f32"] = base64_encode(float_bytes(r.sr));
  }
  return j;
}

// ---------------------------------------------------------------------------
// Cache

FeatureCache::FeatureCache(std::size_t max_entries, std::size_t max_bytes)
  : max_entries_{std::max<std::size_t>(1, max_entries)}
  , max_bytes_{max_bytes}
{
}

std::shared_ptr<PreparedSlice const> FeatureCache::get(FeatureCacheKey const &key)
{
  std::lock_guard lock(mu_);
  auto it = index_.find(key);
  if (it == index_.end()) {
    misses_++;
    return nullptr;
  }
  hits_++;
  order_.splice(order_.begin(), order_, it->second);
  return it->second->second;
}

void FeatureCache::put(FeatureCacheKey const &key, std::shared_ptr<PreparedSlice const> value)
{
  std::lock_guard lock(mu_);
  if (index_.count(key)) {
    return; // first insert wins; entries never change
  }
  bytes_ += value->bytes();
  order_.emplace_front(key, std::move(value));
  index_[key] = order_.begin();
  evict_locked();
}

void FeatureCache::evict_locked()
{
  // The newest entry is kept even when it alone exceeds the byte budget.
  while (order_.size() > 1 && (order_.size() > max_entries_ || bytes_ > max_bytes_)) {
    auto &victim = order_.back();
    bytes_ -= victim.second->bytes();
    index_.erase(victim.first);
    order_.pop_back();
  }
}

void FeatureCache::clear()
{
  std::lock_guard lock(mu_);
  order_.clear();
  index_.clear();
  bytes_ = 0;
}

CacheStats FeatureCache::stats() const
{
  std::lock_guard lock(mu_);
  return {order_.size(), bytes_, hits_, misses_};
}

// ---------------------------------------------------------------------------
// Catalog

std::vector<CatalogVolume> scan_catalog(fs::path const &data_dir, double acquisition_factor)
{
  std::map<std::string, std::map<std::string, CatalogSlice>> found;
  auto const dir = data_dir / "slices";
  if (!fs::is_directory(dir)) {
    return {};
  }
  std::vector<fs::path> sidecars;
  for (auto const &e : fs::directory_iterator(dir)) {
    if (e.path().extension() == ".json") {
      sidecars.push_back(e.path());
    }
  }
  std::sort(sidecars.begin(), sidecars.end());
  for (auto const &p : sidecars) {
    SliceImage img;
    try {
      img = read_slice(p);
    } catch (Error const &e) {
      spdlog::warn("skipping {}: {}", p.string(), e.what());
      continue;
    }
    auto &s = found[img.subject_id][img.slice_id];
    s.id = img.slice_id;
    s.hr = img.dims();
    s.lr = lr_dims_for(s.hr, acquisition_factor);
    if (img.contrast == Contrast::Target) {
      s.target = slice_paths(p).json;
      s.norm_max = img.norm_max;
    } else {
      s.reference = slice_paths(p).json;
    }
  }
  std::vector<CatalogVolume> out;
  for (auto &[vid, slices] : found) {
    CatalogVolume v{vid, {}};
    for (auto &[sid, s] : slices) {
      if (s.target.empty()) {
        continue; // reference-only slices have nothing to reconstruct
      }
      v.slices.push_back(std::move(s));
    }
    if (!v.slices.empty()) {
      out.push_back(std::move(v));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Service

InferenceService::InferenceService(ServiceOptions opts)
  : opts_{std::move(opts)}
  , cache_{opts_.cache_entries, opts_.cache_bytes}
{
  if (!(opts_.scale_min >= 1.0 && opts_.scale_max >= opts_.scale_min)) {
    fail(ErrorKind::InvalidArgument, "scale bounds must satisfy 1 <= min <= max");
  }
  catalog_ = scan_catalog(opts_.data_dir, opts_.acquisition_factor);
  if (!opts_.checkpoint.empty()) {
    load_model(opts_.checkpoint);
  }
}

void InferenceService::load_model(fs::path const &ckpt)
{
  auto ck = load_checkpoint(ckpt);
  auto net = std::make_shared<DualArbNet<float> const>(ck.config.model, std::move(ck.state.params));
  auto snap = std::make_shared<Snapshot>();
  snap->rec = std::make_shared<Reconstructor const>(std::move(net));
  snap->hash = arbsr::checkpoint_hash(ckpt);
  snap->path = ckpt;
  {
    std::lock_guard lock(snap_mu_);
    snap_ = std::move(snap);
  }
  spdlog::info("model loaded from {} ({})", ckpt.string(), checkpoint_hash());
}

void InferenceService::reload(std::optional<fs::path> const &ckpt)
{
  auto const path = ckpt ? *ckpt : (snapshot() ? snapshot()->path : opts_.checkpoint);
  if (path.empty()) {
    fail(ErrorKind::InvalidArgument, "no checkpoint path to reload");
  }
  load_model(path);
  catalog_ = scan_catalog(opts_.data_dir, opts_.acquisition_factor);
}

std::shared_ptr<InferenceService::Snapshot const> InferenceService::snapshot() const
{
  std::lock_guard lock(snap_mu_);
  return snap_;
}

bool InferenceService::model_loaded() const { return snapshot() != nullptr; }

std::string InferenceService::checkpoint_hash() const
{
  auto const s = snapshot();
  return s ? s->hash : std::string();
}

json InferenceService::health() const
{
  auto const s = snapshot();
  auto const c = cache_.stats();
  return json{
    {"status", "ok"},
    {"model_loaded", s != nullptr},
    {"checkpoint_hash", s ? json(s->hash) : json()},
    {"scale_min", opts_.scale_min},
    {"scale_max", opts_.scale_max},
    {"scale_step", 1.0 / kScaleSteps},
    {"cache", {{"entries", c.entries}, {"bytes", c.bytes}, {"hits", c.hits}, {"misses", c.misses}}},
  };
}

json InferenceService::volumes() const
{
  json vols = json::array();
  for (auto const &v : catalog_) {
    json slices = json::array();
    for (auto const &s : v.slices) {
      json contrasts = json::array({"target"});
      if (!s.reference.empty()) {
        contrasts.push_back("reference");
      }
      slices.push_back({
        {"id", s.id},
        {"h", s.hr.h},
        {"w", s.hr.w},
        {"lr_h", s.lr.h},
        {"lr_w", s.lr.w},
        {"contrasts", contrasts},
      });
    }
    vols.push_back({{"id", v.id}, {"slices", slices}});
  }
  return json{
    {"volumes", vols},
    {"acquisition_factor", opts_.acquisition_factor},
    {"scale_min", opts_.scale_min},
    {"scale_max", opts_.scale_max},
  };
}

CatalogSlice const &InferenceService::find(std::string const &volume, std::string const &slice) const
{
  for (auto const &v : catalog_) {
    if (v.id != volume) {
      continue;
    }
    for (auto const &s : v.slices) {
      if (s.id == slice) {
        return s;
      }
    }
  }
  fail(ErrorKind::NotFound, fmt::format("unknown slice {}/{}", volume, slice));
}

std::vector<std::uint8_t> InferenceService::slice_png(
  std::string const &volume, std::string const &slice, std::string const &view) const
{
  auto const &s = find(volume, slice);
  if (view == "hr") {
    return encode_png_gray(read_slice(s.target).pixels.cast<double>());
  }
  if (view == "lr") {
    return encode_png_gray(degrade(read_slice(s.target).pixels.cast<double>(), opts_.acquisition_factor));
  }
  if (view == "ref") {
    if (s.reference.empty()) {
      fail(ErrorKind::NotFound, fmt::format("slice {}/{} has no reference", volume, slice));
    }
    return encode_png_gray(read_slice(s.reference).pixels.cast<double>());
  }
  fail(ErrorKind::InvalidArgument, fmt::format("unknown view '{}' (lr, hr or ref)", view));
}

RoiResult InferenceService::reconstruct(RoiRequest const &req)
{
  auto const snap = snapshot();
  if (!snap) {
    fail(ErrorKind::Unavailable, "no model loaded");
  }
  auto const &entry = find(req.volume_id, req.slice_id);
  if (!std::isfinite(req.scale) || req.scale < opts_.scale_min || req.scale > opts_.scale_max) {
    fail(
      ErrorKind::OutOfRange,
      fmt::format("scale {} outside [{}, {}]", req.scale, opts_.scale_min, opts_.scale_max));
  }
  auto const &roi = req.roi;
  if (roi.w < 1 || roi.h < 1 || roi.x0 < 0 || roi.y0 < 0 || roi.x0 + roi.w > entry.lr.w ||
      roi.y0 + roi.h > entry.lr.h) {
    fail(
      ErrorKind::OutOfRange,
      fmt::format(
        "roi ({}, {}, {}x{}) outside the {}x{} LR slice", roi.x0, roi.y0, roi.w, roi.h, entry.lr.w, entry.lr.h));
  }
  if (req.ref_mode == RefMode::Custom) {
    fail(ErrorKind::OutOfRange, "ref_mode must be lr or hr");
  }
  if (entry.reference.empty() && snap->rec->model().config().use_ref) {
    fail(ErrorKind::NotFound, fmt::format("slice {}/{} has no reference", req.volume_id, req.slice_id));
  }

  auto const q = std::int64_t(std::llround(req.scale * kScaleSteps));
  double const s_q = double(q) / kScaleSteps;
  auto const hr_target = read_slice(entry.target).pixels.cast<double>();
  auto const lr = degrade(hr_target, opts_.acquisition_factor);
  Grid<double> ref;
  if (!entry.reference.empty()) {
    ref = read_slice(entry.reference).pixels.cast<double>();
    if (req.ref_mode == RefMode::LR) {
      ref = degrade(ref, opts_.acquisition_factor);
    }
  } else {
    ref = lr;
  }
  ScaleTask task;
  try {
    task = inference_task(lr.dims(), ref.dims(), s_q, req.ref_mode);
  } catch (Error const &e) {
    fail(ErrorKind::OutOfRange, e.what());
  }

  RoiResult res;
  res.hr_full = task.hr;
  res.s_exact = task.s_tar();
  FeatureCacheKey key{req.volume_id + "/" + req.slice_id, q, req.ref_mode, snap->hash};
  auto prepared = cache_.get(key);
  res.cache_hit = prepared != nullptr;
  if (!prepared) {
    prepared = std::make_shared<PreparedSlice const>(snap->rec->prepare(lr, ref, task));
    cache_.put(key, prepared);
  }

  Rect rect;
  rect.y0 = int(std::lround(roi.y0 * res.s_exact));
  rect.x0 = int(std::lround(roi.x0 * res.s_exact));
  rect.h = std::min(int(std::lround(roi.h * res.s_exact)), task.hr.h - rect.y0);
  rect.w = std::min(int(std::lround(roi.w * res.s_exact)), task.hr.w - rect.x0);
  if (rect.h < 1 || rect.w < 1) {
    fail(ErrorKind::OutOfRange, "roi maps to an empty output");
  }
  res.rect = rect;
  res.sr = snap->rec->decode(*prepared, rect);
  clamp01(res.sr);

  if (req.compare) {
    // The stored HR slice is ground truth only on its own grid.
    bool const has_truth = task.hr == hr_target.dims();
    if (has_truth) {
      auto const gt = crop(hr_target, rect);
      res.metrics = Score{psnr(res.sr, gt), ssim(res.sr, gt)};
      res.error = error_map(res.sr, gt);
    }
    auto base = crop(upsample_bicubic(lr, task.hr), rect);
    clamp01(base);
    if (has_truth) {
      auto const gt = crop(hr_target, rect);
      res.baseline_metrics = Score{psnr(base, gt), ssim(base, gt)};
    }
    res.baseline = std::move(base);
  }
  return res;
}

// ---------------------------------------------------------------------------
// HTTP

int http_status(ErrorKind kind)
{
  switch (kind) {
  case ErrorKind::NotFound: return 404;
  case ErrorKind::Unavailable: return 503;
  case ErrorKind::InvalidArgument:
  case ErrorKind::OutOfRange:
  case ErrorKind::DimensionMismatch: return 422;
  default: return 500;
  }
}

namespace {

void send_json(httplib::Response &res, json const &j, int status = 200)
{
  res.status = status;
  res.set_content(j.dump(), "application/json");
}

void send_error(httplib::Response &res, int status, std::string const &kind, std::string const &msg)
{
  send_json(res, json{{"error", kind}, {"message", msg}}, status);
}

template <typename F>
void guarded(httplib::Response &res, F &&f)
{
  try {
    f();
  } catch (Error const &e) {
    send_error(res, http_status(e.kind()), std::string(to_string(e.kind())), e.what());
  } catch (std::exception const &e) {
    spdlog::error("request failed: {}", e.what());
    send_error(res, 500, "internal", e.what());
  }
}

} // namespace

void register_routes(httplib::Server &server, InferenceService &service)
{
  server.Get("/api/health", [&](httplib::Request const &, httplib::Response &res) {
    guarded(res, [&] { send_json(res, service.health()); });
  });
  server.Get("/api/volumes", [&](httplib::Request const &, httplib::Response &res) {
    guarded(res, [&] { send_json(res, service.volumes()); });
  });
  server.Get(R"(/api/volumes/([^/]+)/slices/([^/]+))", [&](httplib::Request const &req, httplib::Response &res) {
    guarded(res, [&] {
      auto const view = req.has_param("view") ? req.get_param_value("view") : std::string("hr");
      auto const png = service.slice_png(req.matches[1], req.matches[2], view);
      res.set_content(std::string(png.begin(), png.end()), "image/png");
    });
  });
  server.Post("/api/reconstruct", [&](httplib::Request const &req, httplib::Response &res) {
    guarded(res, [&] {
      json body;
      try {
        body = json::parse(req.body);
      } catch (json::exception const &e) {
        send_error(res, 400, "bad-json", e.what());
        return;
      }
      auto const r = parse_roi_request(body);
      send_json(res, to_json(service.reconstruct(r), r.raw));
    });
  });
  server.Post("/api/reload", [&](httplib::Request const &req, httplib::Response &res) {
    guarded(res, [&] {
      std::optional<fs::path> path;
      if (!req.body.empty()) {
        auto const body = json::parse(req.body, nullptr, false);
        if (body.is_object() && body.contains("ckpt")) {
          path = body["ckpt"].get<std::string>();
        }
      }
      service.reload(path);
      send_json(res, service.health());
    });
  });
  server.set_pre_routing_handler([](httplib::Request const &, httplib::Response &res) {
    res.set_header("Access-Control-Allow-Origin", "*");
    return httplib::Server::HandlerResponse::Unhandled;
  });
  server.Options(R"(/api/.*)", [](httplib::Request const &, httplib::Response &res) {
    res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
    res.set_header("Access-Control-Allow-Headers", "Content-Type");
    res.status = 204;
  });
}

void serve(InferenceService &service, std::string const &host, int port, std::function<void(int)> const &on_bound)
{
  httplib::Server server;
  register_routes(server, service);
  int bound = port;
  if (port == 0) {
    bound = server.bind_to_any_port(host);
  } else if (!server.bind_to_port(host, port)) {
    bound = -1;
  }
  if (bound < 0) {
    fail(ErrorKind::Io, fmt::format("cannot bind {}:{}", host, port));
  }
  spdlog::info("serving on http://{}:{}", host, bound);
  if (on_bound) {
    on_bound(bound);
  }
  server.listen_after_bind();
}

} // namespace arbsr
