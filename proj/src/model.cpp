#include "arbsr/model.hpp"

#include "arbsr/error.hpp"
#include "arbsr/rng.hpp"

#include <Eigen/Core>
#include <cmath>
#include <fmt/format.h>
#include <numeric>
#include <set>

namespace arbsr {

namespace {

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using Vec = Eigen::Matrix<T, Eigen::Dynamic, 1>;
template <typename T>
using RowVec = Eigen::Matrix<T, 1, Eigen::Dynamic>;

template <typename T>
void check_finite(T const *data, std::size_t n, std::string const &where)
{
  for (std::size_t i = 0; i < n; i++) {
    if (!std::isfinite(data[i])) {
      fail(ErrorKind::NonFinite, fmt::format("{} produced non-finite activations", where));
    }
  }
}

template <typename T>
void add_into(TensorView<T> dst, ConstView<T> src)
{
  for (std::size_t i = 0, n = dst.size(); i < n; i++) {
    dst.data[i] += src.data[i];
  }
}

} // namespace

// ---------------------------------------------------------------------------
// Configuration

int ModelConfig::idf_input_width() const
{
  return (use_scale ? 2 : 0) + (use_coord ? 2 : 0) + (use_coord && ref_grid_coords ? 2 : 0);
}

int ModelConfig::ca_hidden() const { return std::max(1, fusion_channels() / ca_reduction); }

void ModelConfig::validate() const
{
  if (num_blocks < 1 || convs_per_block < 1 || growth < 1 || base_channels < 1) {
    fail(ErrorKind::InvalidArgument, "encoder dimensions must be positive");
  }
  if (ca_reduction < 1) {
    fail(ErrorKind::InvalidArgument, "channel attention reduction must be positive");
  }
  if (sa_kernel < 1 || sa_kernel % 2 == 0) {
    fail(ErrorKind::InvalidArgument, "spatial attention kernel must be a positive odd size");
  }
}

void to_json(nlohmann::json &j, ModelConfig const &c)
{
  j = nlohmann::json{
    {"num_blocks", c.num_blocks},
    {"convs_per_block", c.convs_per_block},
    {"growth", c.growth},
    {"base_channels", c.base_channels},
    {"ca_reduction", c.ca_reduction},
    {"sa_kernel", c.sa_kernel},
    {"seed", c.seed},
    {"use_ref", c.use_ref},
    {"use_scale", c.use_scale},
    {"use_coord", c.use_coord},
    {"ref_grid_coords", c.ref_grid_coords},
    {"local_fusion", c.local_fusion},
  };
}

void from_json(nlohmann::json const &j, ModelConfig &c)
{
  ModelConfig d;
  c.num_blocks = j.value("num_blocks", d.num_blocks);
  c.convs_per_block = j.value("convs_per_block", d.convs_per_block);
  c.growth = j.value("growth", d.growth);
  c.base_channels = j.value("base_channels", d.base_channels);
  c.ca_reduction = j.value("ca_reduction", d.ca_reduction);
  c.sa_kernel = j.value("sa_kernel", d.sa_kernel);
  c.seed = j.value("seed", d.seed);
  c.use_ref = j.value("use_ref", d.use_ref);
  c.use_scale = j.value("use_scale", d.use_scale);
  c.use_coord = j.value("use_coord", d.use_coord);
  c.ref_grid_coords = j.value("ref_grid_coords", d.ref_grid_coords);
  c.local_fusion = j.value("local_fusion", d.local_fusion);
}

ModelConfig desk_config() { return {}; }

ModelConfig full_config()
{
  ModelConfig c;
  c.num_blocks = 16;
  c.convs_per_block = 8;
  c.growth = 64;
  c.base_channels = 64;
  c.ca_reduction = 16;
  return c;
}

// ---------------------------------------------------------------------------
// Parameters

template <typename T>
ParamInfo const &ParameterSet<T>::info(std::string const &name) const
{
  for (auto const &i : infos) {
    if (i.name == name) {
      return i;
    }
  }
  fail(ErrorKind::NotFound, fmt::format("no parameter named '{}'", name));
}

template <typename T>
std::span<T> ParameterSet<T>::operator[](std::string const &name)
{
  auto const &i = info(name);
  return {values.data() + i.offset, i.count};
}

template <typename T>
std::span<T const> ParameterSet<T>::operator[](std::string const &name) const
{
  auto const &i = info(name);
  return {values.data() + i.offset, i.count};
}

template <typename T>
std::vector<std::string> ParameterSet<T>::groups() const
{
  std::vector<std::string> out;
  std::set<std::string> seen;
  for (auto const &i : infos) {
    if (seen.insert(i.group).second) {
      out.push_back(i.group);
    }
  }
  return out;
}

namespace {

struct LayoutBuilder
{
  ModelLayout &layout;
  std::vector<double> &bounds;

  std::size_t add(std::string const &name, std::string const &group, std::vector<int> shape, double bound)
  {
    ParamInfo info;
    info.name = name;
    info.group = group;
    info.count = std::accumulate(shape.begin(), shape.end(), std::size_t(1), std::multiplies<>());
    info.shape = std::move(shape);
    info.offset = layout.total;
    layout.total += info.count;
    layout.infos.push_back(std::move(info));
    bounds.push_back(bound);
    return layout.infos.back().offset;
  }

  nn::ConvSpec conv(std::string const &name, std::string const &group, int cin, int cout, int k)
  {
    double const bound = 1.0 / std::sqrt(double(cin * k * k));
    nn::ConvSpec s{cin, cout, k, 0, 0};
    s.weight = add(name + ".weight", group, {cout, cin, k, k}, bound);
    s.bias = add(name + ".bias", group, {cout}, bound);
    return s;
  }

  Linear linear(std::string const &name, std::string const &group, int in, int out, double wb, double bb)
  {
    Linear l{in, out, 0, 0};
    l.weight = add(name + ".weight", group, {out, in}, wb);
    l.bias = add(name + ".bias", group, {out}, bb);
    return l;
  }
};

ModelLayout build_layout_with_bounds(ModelConfig const &cfg, std::vector<double> &bounds)
{
  cfg.validate();
  ModelLayout L;
  LayoutBuilder b{L, bounds};
  int const G0 = cfg.base_channels, G = cfg.growth, C = cfg.convs_per_block, D = cfg.num_blocks;
  L.sfe1 = b.conv("encoder.sfe1", "encoder.sfe", 1, G0, 3);
  L.sfe2 = b.conv("encoder.sfe2", "encoder.sfe", G0, G0, 3);
  for (int d = 0; d < D; d++) {
    auto const group = fmt::format("encoder.rdb{}", d);
    std::vector<nn::ConvSpec> convs;
    for (int c = 0; c < C; c++) {
      convs.push_back(b.conv(fmt::format("{}.conv{}", group, c), group, G0 + c * G, G, 3));
    }
    L.rdb_convs.push_back(std::move(convs));
    L.rdb_lff.push_back(b.conv(group + ".lff", group, G0 + C * G, G0, 1));
  }
  L.gff1 = b.conv("encoder.gff1", "encoder.gff", D * G0, G0, 1);
  L.gff2 = b.conv("encoder.gff2", "encoder.gff", G0, G0, 3);

  int const F = cfg.fusion_channels();
  int const Hd = cfg.ca_hidden();
  for (int i = 0; i < ModelConfig::fusion_layers; i++) {
    auto const group = fmt::format("fusion{}", i + 1);
    auto &f = L.fusion[i];
    f.conv_a = b.conv(group + ".conv_a", group, F, F, 3);
    f.conv_b = b.conv(group + ".conv_b", group, F, F, 3);
    f.ca.channels = F;
    f.ca.hidden = Hd;
    f.ca.w1 = b.add(group + ".ca.fc1.weight", group, {Hd, F}, 1.0 / std::sqrt(double(F)));
    f.ca.b1 = b.add(group + ".ca.fc1.bias", group, {Hd}, 1.0 / std::sqrt(double(F)));
    f.ca.w2 = b.add(group + ".ca.fc2.weight", group, {F, Hd}, 1.0 / std::sqrt(double(Hd)));
    f.ca.b2 = b.add(group + ".ca.fc2.bias", group, {F}, 1.0 / std::sqrt(double(Hd)));
    f.sa = b.conv(group + ".sa", group, 2, 1, cfg.sa_kernel);
  }

  int const W = cfg.idf_width();
  int const K0 = cfg.idf_input_width();
  // W0 ~ U(-1/4, 1/4) scaled by omega0, independent of which input channels are enabled.
  double const w0 = kSineOmega / 4.0;
  double const b0 = kSineOmega / std::sqrt(double(std::max(1, K0)));
  L.idf[0] = b.linear("idf.layer0", "idf.layer0", K0, W, w0, b0);
  // sqrt(6/n)/omega0 assumes a forward multiplier omega0 in every sine layer.
  // The decoder has none, so the multiplier is folded into the weights as for W0;
  // without it the hidden pre-activations are bias-dominated (~1e-11 grads at W0).
  double const hidden_w = std::sqrt(6.0 / W);
  double const hidden_b = 1.0 / std::sqrt(double(W));
  for (int i = 1; i < ModelConfig::idf_layers; i++) {
    auto const name = fmt::format("idf.layer{}", i);
    L.idf[i] = b.linear(name, name, W, W, hidden_w, hidden_b);
  }
  L.idf_out = b.linear("idf.out", "idf.out", W, 1, hidden_w, 0.0);
  L.skip = b.linear("skip", "skip", W, 1, 1.0 / std::sqrt(double(W)), 1.0 / std::sqrt(double(W)));
  return L;
}

} // namespace

ModelLayout build_layout(ModelConfig const &cfg)
{
  std::vector<double> bounds;
  return build_layout_with_bounds(cfg, bounds);
}

template <typename T>
ParameterSet<T> init_params(ModelConfig const &cfg)
{
  std::vector<double> bounds;
  auto const L = build_layout_with_bounds(cfg, bounds);
  ParameterSet<T> p;
  p.infos = L.infos;
  p.values.assign(L.total, T(0));
  for (std::size_t i = 0; i < L.infos.size(); i++) {
    Rng rng(derive_seed({cfg.seed, 0x696e6974, i}));
    auto const &info = L.infos[i];
    for (std::size_t k = 0; k < info.count; k++) {
      p.values[info.offset + k] = T(uniform(rng, -bounds[i], bounds[i]));
    }
  }
  return p;
}

// ---------------------------------------------------------------------------
// Network

template <typename T>
DualArbNet<T>::DualArbNet(ModelConfig const &cfg)
  : DualArbNet(cfg, init_params<T>(cfg))
{
}

template <typename T>
DualArbNet<T>::DualArbNet(ModelConfig const &cfg, ParameterSet<T> params)
  : config_{cfg}
  , layout_{build_layout(cfg)}
  , params_{std::move(params)}
{
  if (params_.values.size() != layout_.total || params_.infos.size() != layout_.infos.size()) {
    fail(ErrorKind::ConfigConflict, "parameter set does not match model configuration");
  }
  for (std::size_t i = 0; i < layout_.infos.size(); i++) {
    auto const &a = layout_.infos[i];
    auto const &b = params_.infos[i];
    if (a.name != b.name || a.shape != b.shape || a.offset != b.offset) {
      fail(
        ErrorKind::ConfigConflict,
        fmt::format("parameter '{}' does not match configuration layout", b.name));
    }
  }
}

template <typename T>
Tensor<T> DualArbNet<T>::encode(Grid<T> const &img, EncoderCache<T> *cache) const
{
  if (img.height < 3 || img.width < 3) {
    fail(ErrorKind::InvalidArgument, fmt::format("encoder input {}x{} smaller than 3x3", img.height, img.width));
  }
  auto const *P = params_.values.data();
  auto const &L = layout_;
  int const h = img.height, w = img.width;
  int const G0 = config_.base_channels, G = config_.growth, C = config_.convs_per_block,
            D = config_.num_blocks;

  EncoderCache<T> local;
  auto &c = cache ? *cache : local;
  c.input = Tensor<T>(1, h, w);
  std::copy(img.data.begin(), img.data.end(), c.input.data.begin());
  check_finite(c.input.data.data(), c.input.size(), "encoder input");

  c.f1 = Tensor<T>(G0, h, w);
  nn::conv_forward<T>(L.sfe1, P, c.input, c.f1);
  c.f2 = Tensor<T>(G0, h, w);
  nn::conv_forward<T>(L.sfe2, P, c.f1, c.f2);

  c.rdb_cat.assign(D, Tensor<T>());
  c.gcat = Tensor<T>(D * G0, h, w);
  TensorView<T> gcat(c.gcat);
  for (int d = 0; d < D; d++) {
    auto &cat = c.rdb_cat[d];
    cat = Tensor<T>(G0 + C * G, h, w);
    TensorView<T> cv(cat);
    ConstView<T> in = d == 0 ? ConstView<T>(c.f2) : ConstView<T>(gcat.slice((d - 1) * G0, G0));
    std::copy(in.data, in.data + in.size(), cat.data.begin());
    for (int k = 0; k < C; k++) {
      auto out = cv.slice(G0 + k * G, G);
      nn::conv_forward<T>(L.rdb_convs[d][k], P, cv.prefix(G0 + k * G), out);
      nn::relu_inplace(out);
    }
    auto bo = gcat.slice(d * G0, G0);
    nn::conv_forward<T>(L.rdb_lff[d], P, cv, bo);
    add_into<T>(bo, in);
    check_finite(bo.data, bo.size(), fmt::format("encoder.rdb{}", d));
  }
  c.g1 = Tensor<T>(G0, h, w);
  nn::conv_forward<T>(L.gff1, P, c.gcat, c.g1);
  c.out = Tensor<T>(G0, h, w);
  nn::conv_forward<T>(L.gff2, P, c.g1, c.out);
  add_into<T>(c.out, c.f1);
  check_finite(c.out.data.data(), c.out.size(), "encoder.gff");
  return unfold3x3(c.out);
}

template <typename T>
FusedFeatures<T> DualArbNet<T>::fuse(
  Tensor<T> const &up_tar, Tensor<T> const &up_ref, FusionCache<T> *cache) const
{
  int const W = config_.idf_width();
  if (up_tar.dims() != up_ref.dims() || up_tar.channels != W || up_ref.channels != W) {
    fail(ErrorKind::DimensionMismatch, "fusion inputs must share dims and decoder width");
  }
  auto const *P = params_.values.data();
  FusedFeatures<T> F;
  F[0] = Tensor<T>(2 * W, up_tar.height, up_tar.width);
  std::copy(up_tar.data.begin(), up_tar.data.end(), F[0].data.begin());
  std::copy(up_ref.data.begin(), up_ref.data.end(), F[0].data.begin() + up_tar.size());

  for (int i = 1; i <= ModelConfig::fusion_layers; i++) {
    auto const &prev = F[i - 1];
    auto &cur = F[i];
    cur = Tensor<T>(prev.channels, prev.height, prev.width);
    if (config_.local_fusion) {
      for (std::size_t k = 0; k < prev.size(); k++) {
        cur.data[k] = (prev.data[k] > T(0) ? prev.data[k] : T(0)) + prev.data[k];
      }
      continue;
    }
    auto const &spec = layout_.fusion[i - 1];
    FusionLayerCache<T> local;
    auto &c = cache ? cache->layers[i - 1] : local;
    c.r1 = Tensor<T>(prev.channels, prev.height, prev.width);
    nn::conv_forward<T>(spec.conv_a, P, prev, c.r1);
    nn::relu_inplace<T>(c.r1);
    c.a2 = Tensor<T>(prev.channels, prev.height, prev.width);
    nn::conv_forward<T>(spec.conv_b, P, c.r1, c.a2);
    c.c = Tensor<T>(prev.channels, prev.height, prev.width);
    nn::channel_attention_forward<T>(spec.ca, P, c.a2, c.c, c.ca);
    nn::spatial_attention_forward<T>(spec.sa, P, c.c, cur, c.sa);
    add_into<T>(cur, prev);
    check_finite(cur.data.data(), cur.size(), fmt::format("fusion{}", i));
  }
  return F;
}

template <typename T>
Tensor<T> DualArbNet<T>::decoder_inputs(ScaleTask const &task, Rect rect) const
{
  int const K0 = config_.idf_input_width();
  Tensor<T> in(K0, rect.h, rect.w);
  int ch = 0;
  auto fill = [&](double v) {
    std::fill(in.channel(ch), in.channel(ch) + in.plane(), T(v));
    ch++;
  };
  auto coords = [&](Dims grid) {
    auto const m = relative_coords(task.hr, grid);
    for (int k = 0; k < 2; k++) {
      for (int y = 0; y < rect.h; y++) {
        for (int x = 0; x < rect.w; x++) {
          in(ch, y, x) = T(m(k, rect.y0 + y, rect.x0 + x));
        }
      }
      ch++;
    }
  };
  if (config_.use_scale) {
    fill(task.s_tar());
    fill(config_.use_ref ? task.s_ref() : task.s_tar());
  }
  if (config_.use_coord) {
    coords(task.tar);
    if (config_.ref_grid_coords) {
      coords(config_.use_ref ? task.ref : task.tar);
    }
  }
  return in;
}

template <typename T>
Grid<T> DualArbNet<T>::idf_decode(
  FusedFeatures<T> const &fused, Tensor<T> const &inputs, Branch branch, Rect rect,
  DecodeCache<T> *cache) const
{
  int const Wd = config_.idf_width();
  int const K0 = config_.idf_input_width();
  int const H = fused[0].height, Wf = fused[0].width;
  if (rect.h <= 0 || rect.w <= 0 || rect.y0 < 0 || rect.x0 < 0 || rect.y0 + rect.h > H ||
      rect.x0 + rect.w > Wf) {
    fail(ErrorKind::OutOfRange, "decode rectangle outside the fused grid");
  }
  if (inputs.channels != K0 || inputs.height != rect.h || inputs.width != rect.w) {
    fail(ErrorKind::DimensionMismatch, "decoder inputs do not match the decode rectangle");
  }
  for (int i = 1; i <= ModelConfig::fusion_layers; i++) {
    if (fused[i].height != H || fused[i].width != Wf || fused[i].channels != 2 * Wd) {
      fail(ErrorKind::DimensionMismatch, "fused feature levels disagree in shape");
    }
  }
  auto const *P = params_.values.data();
  auto const &L = layout_;
  int const off = branch == Branch::Target ? 0 : Wd;
  int const n = rect.w;
  std::size_t const fplane = fused[0].plane();

  if (cache) {
    for (int i = 0; i < ModelConfig::idf_layers; i++) {
      cache->pre[i] = Tensor<T>(Wd, rect.h, rect.w);
      cache->act[i] = Tensor<T>(Wd, rect.h, rect.w);
      cache->f[i] = Tensor<T>(Wd, rect.h, rect.w);
    }
  }
  Grid<T> out(rect.h, rect.w);
  Buffer<T> prev(std::size_t(Wd) * n), cur(std::size_t(Wd) * n), acc(n);
  std::size_t const cplane = std::size_t(rect.h) * rect.w;

  // Every pixel is computed independently with a fixed summation order, so
  // decoding any subset of pixels reproduces the full-grid values exactly.
  for (int y = 0; y < rect.h; y++) {
    std::size_t const fbase = std::size_t(rect.y0 + y) * Wf + rect.x0;
    std::size_t const cbase = std::size_t(y) * rect.w;
    {
      T const *w0 = P + L.idf[0].weight;
      T const *b0 = P + L.idf[0].bias;
      for (int o = 0; o < Wd; o++) {
        std::fill(acc.begin(), acc.end(), b0[o]);
        for (int k = 0; k < K0; k++) {
          T const wk = w0[o * K0 + k];
          T const *src = inputs.channel(k) + cbase;
          for (int p = 0; p < n; p++) {
            acc[p] += wk * src[p];
          }
        }
        T *dst = cur.data() + std::size_t(o) * n;
        for (int p = 0; p < n; p++) {
          dst[p] = std::sin(acc[p]);
        }
        if (cache) {
          std::copy(acc.begin(), acc.end(), cache->pre[0].channel(o) + cbase);
          std::copy(acc.begin(), acc.end(), cache->act[0].channel(o) + cbase);
          std::copy(dst, dst + n, cache->f[0].channel(o) + cbase);
        }
      }
    }
    for (int i = 1; i < ModelConfig::idf_layers; i++) {
      std::swap(prev, cur);
      T const *wi = P + L.idf[i].weight;
      T const *bi = P + L.idf[i].bias;
      auto const &Fi = fused[i];
      for (int o = 0; o < Wd; o++) {
        std::fill(acc.begin(), acc.end(), bi[o]);
        for (int k = 0; k < Wd; k++) {
          T const wk = wi[o * Wd + k];
          T const *src = prev.data() + std::size_t(k) * n;
          for (int p = 0; p < n; p++) {
            acc[p] += wk * src[p];
          }
        }
        T const *mod = Fi.data.data() + std::size_t(off + o) * fplane + fbase;
        T *dst = cur.data() + std::size_t(o) * n;
        if (cache) {
          std::copy(acc.begin(), acc.end(), cache->pre[i].channel(o) + cbase);
        }
        for (int p = 0; p < n; p++) {
          acc[p] *= mod[p];
          dst[p] = std::sin(acc[p]);
        }
        if (cache) {
          std::copy(acc.begin(), acc.end(), cache->act[i].channel(o) + cbase);
          std::copy(dst, dst + n, cache->f[i].channel(o) + cbase);
        }
      }
    }
    T const *wo = P + L.idf_out.weight;
    T *row = out.data.data() + cbase;
    std::fill(row, row + n, P[L.idf_out.bias]);
    for (int k = 0; k < Wd; k++) {
      T const wk = wo[k];
      T const *src = cur.data() + std::size_t(k) * n;
      for (int p = 0; p < n; p++) {
        row[p] += wk * src[p];
      }
    }
  }
  (void)cplane;
  check_finite(out.data.data(), out.size(), "idf");
  return out;
}

template <typename T>
Grid<T> DualArbNet<T>::skip(ConstView<T> up, Rect rect, Grid<T> *pre) const
{
  int const Wd = config_.idf_width();
  if (up.channels != Wd) {
    fail(ErrorKind::DimensionMismatch, "skip input width differs from decoder width");
  }
  if (rect.y0 < 0 || rect.x0 < 0 || rect.y0 + rect.h > up.height || rect.x0 + rect.w > up.width) {
    fail(ErrorKind::OutOfRange, "skip rectangle outside the feature grid");
  }
  auto const *P = params_.values.data();
  T const *ws = P + layout_.skip.weight;
  Grid<T> out(rect.h, rect.w);
  if (pre) {
    *pre = Grid<T>(rect.h, rect.w);
  }
  for (int y = 0; y < rect.h; y++) {
    T *row = out.data.data() + std::size_t(y) * rect.w;
    std::fill(row, row + rect.w, P[layout_.skip.bias]);
    for (int k = 0; k < Wd; k++) {
      T const wk = ws[k];
      T const *src = up.channel(k) + std::size_t(rect.y0 + y) * up.width + rect.x0;
      for (int p = 0; p < rect.w; p++) {
        row[p] += wk * src[p];
      }
    }
    if (pre) {
      std::copy(row, row + rect.w, pre->data.data() + std::size_t(y) * rect.w);
    }
    for (int p = 0; p < rect.w; p++) {
      row[p] = std::sin(row[p]);
    }
  }
  return out;
}

template <typename T>
ForwardPass<T> DualArbNet<T>::forward(
  Grid<T> const &tar, Grid<T> const &ref, ScaleTask const &task, bool want_ref, bool keep_cache) const
{
  if (tar.dims() != task.tar) {
    fail(
      ErrorKind::DimensionMismatch,
      fmt::format("target {}x{} does not match task {}x{}", tar.height, tar.width, task.tar.h, task.tar.w));
  }
  if (config_.use_ref && ref.dims() != task.ref) {
    fail(
      ErrorKind::DimensionMismatch,
      fmt::format("reference {}x{} does not match task {}x{}", ref.height, ref.width, task.ref.h, task.ref.w));
  }
  ForwardPass<T> pass;
  pass.task = task;
  pass.cached = keep_cache;
  Rect const full{0, 0, task.hr.h, task.hr.w};

  auto feat_tar = encode(tar, keep_cache ? &pass.enc_tar : nullptr);
  pass.feat_tar = feat_tar.dims();
  pass.up_tar = nearest_upsample(feat_tar, task.hr);
  if (config_.use_ref) {
    auto feat_ref = encode(ref, keep_cache ? &pass.enc_ref : nullptr);
    pass.feat_ref = feat_ref.dims();
    pass.up_ref = nearest_upsample(feat_ref, task.hr);
  }
  Tensor<T> const &up_ref = config_.use_ref ? pass.up_ref : pass.up_tar;
  pass.fused = fuse(pass.up_tar, up_ref, keep_cache ? &pass.fusion : nullptr);
  pass.inputs = decoder_inputs(task, full);

  auto assemble = [&](Branch b, Tensor<T> const &up, DecodeCache<T> *dec) {
    auto sr = idf_decode(pass.fused, pass.inputs, b, full, dec);
    auto const s = skip(up, full, dec ? &dec->skip_pre : nullptr);
    for (std::size_t i = 0; i < sr.size(); i++) {
      sr.data[i] += s.data[i];
    }
    return sr;
  };
  pass.sr_tar = assemble(Branch::Target, pass.up_tar, keep_cache ? &pass.dec_tar : nullptr);
  if (want_ref) {
    pass.sr_ref = assemble(Branch::Reference, up_ref, keep_cache ? &pass.dec_ref : nullptr);
  }
  if (!keep_cache) {
    pass.fused = {};
    pass.up_tar = {};
    pass.up_ref = {};
  }
  return pass;
}

template <typename T>
void DualArbNet<T>::decode_backward(
  ForwardPass<T> const &pass, DecodeCache<T> const &dec, Tensor<T> const &up, Branch branch,
  Grid<T> const &d_out, FusedFeatures<T> &d_fused, Tensor<T> &d_up, T *grads) const
{
  auto const *P = params_.values.data();
  auto const &L = layout_;
  int const Wd = config_.idf_width();
  int const K0 = config_.idf_input_width();
  auto const n = Eigen::Index(d_out.size());
  int const off = branch == Branch::Target ? 0 : Wd;

  Eigen::Map<RowVec<T> const> g(d_out.data.data(), n);

  // Output head.
  Mat<T> df(Wd, n);
  {
    Eigen::Map<Mat<T> const> f5(dec.f[5].data.data(), Wd, n);
    Eigen::Map<Vec<T>> gw(grads + L.idf_out.weight, Wd);
    gw.noalias() += f5 * g.transpose();
    grads[L.idf_out.bias] += g.sum();
    Eigen::Map<Vec<T> const> wo(P + L.idf_out.weight, Wd);
    df.noalias() = wo * g;
  }
  // Skip branch.
  {
    RowVec<T> ds(n);
    for (Eigen::Index p = 0; p < n; p++) {
      ds[p] = g[p] * std::cos(dec.skip_pre.data[p]);
    }
    Eigen::Map<Mat<T> const> u(up.data.data(), Wd, n);
    Eigen::Map<Vec<T>> gw(grads + L.skip.weight, Wd);
    gw.noalias() += u * ds.transpose();
    grads[L.skip.bias] += ds.sum();
    Eigen::Map<Vec<T> const> ws(P + L.skip.weight, Wd);
    Eigen::Map<Mat<T>> du(d_up.data.data(), Wd, n);
    du.noalias() += ws * ds;
  }
  Mat<T> dpre(Wd, n);
  for (int i = ModelConfig::idf_layers - 1; i >= 1; i--) {
    Eigen::Map<Mat<T> const> act(dec.act[i].data.data(), Wd, n);
    Eigen::Map<Mat<T> const> pre(dec.pre[i].data.data(), Wd, n);
    Eigen::Map<Mat<T> const> mod(pass.fused[i].channel(off), Wd, n);
    Eigen::Map<Mat<T>> dmod(d_fused[i].channel(off), Wd, n);
    Mat<T> const da = df.array() * act.array().cos();
    dmod.array() += da.array() * pre.array();
    dpre = da.array() * mod.array();
    Eigen::Map<Mat<T> const> fprev(dec.f[i - 1].data.data(), Wd, n);
    Eigen::Map<Mat<T>> gw(grads + L.idf[i].weight, Wd, Wd);
    gw.noalias() += dpre * fprev.transpose();
    Eigen::Map<Vec<T>> gb(grads + L.idf[i].bias, Wd);
    gb += dpre.rowwise().sum();
    Eigen::Map<Mat<T> const> w(P + L.idf[i].weight, Wd, Wd);
    df.noalias() = w.transpose() * dpre;
  }
  {
    Eigen::Map<Mat<T> const> act(dec.act[0].data.data(), Wd, n);
    Mat<T> const da = df.array() * act.array().cos();
    if (K0 > 0) {
      Eigen::Map<Mat<T> const> in(pass.inputs.data.data(), K0, n);
      Eigen::Map<Mat<T>> gw(grads + L.idf[0].weight, Wd, K0);
      gw.noalias() += da * in.transpose();
    }
    Eigen::Map<Vec<T>> gb(grads + L.idf[0].bias, Wd);
    gb += da.rowwise().sum();
  }
}

template <typename T>
Tensor<T> DualArbNet<T>::encoder_backward(EncoderCache<T> const &c, Tensor<T> const &d_out, T *grads) const
{
  auto const *P = params_.values.data();
  auto const &L = layout_;
  int const h = c.input.height, w = c.input.width;
  int const G0 = config_.base_channels, G = config_.growth, C = config_.convs_per_block,
            D = config_.num_blocks;

  Tensor<T> df1 = d_out; // global residual
  Tensor<T> dg1(G0, h, w);
  nn::conv_backward<T>(L.gff2, P, c.g1, d_out, grads, dg1);
  Tensor<T> dgcat(D * G0, h, w);
  nn::conv_backward<T>(L.gff1, P, c.gcat, dg1, grads, dgcat);

  TensorView<T> dg(dgcat);
  Tensor<T> carry(G0, h, w);
  for (int d = D - 1; d >= 0; d--) {
    Tensor<T> dbo(G0, h, w);
    auto const src = dg.slice(d * G0, G0);
    std::copy(src.data, src.data + src.size(), dbo.data.begin());
    if (d < D - 1) {
      add_into<T>(dbo, carry);
    }
    auto const &cat = c.rdb_cat[d];
    Tensor<T> dcat(cat.channels, h, w);
    TensorView<T> dcv(dcat);
    ConstView<T> cv(cat);
    nn::conv_backward<T>(L.rdb_lff[d], P, cat, dbo, grads, dcat);
    for (int k = C - 1; k >= 0; k--) {
      auto d_o = dcv.slice(G0 + k * G, G);
      nn::relu_backward_inplace<T>(cv.slice(G0 + k * G, G), d_o);
      nn::conv_backward<T>(L.rdb_convs[d][k], P, cv.prefix(G0 + k * G), d_o, grads, dcv.prefix(G0 + k * G));
    }
    // Block input gradient: residual path plus the dense-concat copy.
    carry = dbo;
    add_into<T>(carry, dcv.prefix(G0));
  }
  Tensor<T> dx(1, h, w);
  nn::conv_backward<T>(L.sfe2, P, c.f1, carry, grads, df1);
  nn::conv_backward<T>(L.sfe1, P, c.input, df1, grads, dx);
  return dx;
}

template <typename T>
void DualArbNet<T>::backward(
  ForwardPass<T> const &pass, Grid<T> const &d_tar, Grid<T> const *d_ref, std::span<T> grads) const
{
  if (!pass.cached) {
    fail(ErrorKind::InvalidArgument, "backward needs a forward pass run with keep_cache");
  }
  if (grads.size() != params_.values.size()) {
    fail(ErrorKind::DimensionMismatch, "gradient buffer does not match parameter count");
  }
  if (d_tar.dims() != pass.task.hr || (d_ref && d_ref->dims() != pass.task.hr)) {
    fail(ErrorKind::DimensionMismatch, "output gradient dims differ from the HR grid");
  }
  if (d_ref && !pass.sr_ref) {
    fail(ErrorKind::InvalidArgument, "reference gradient given but reference output was not computed");
  }
  auto const *P = params_.values.data();
  T *G = grads.data();
  int const Wd = config_.idf_width();
  auto const hr = pass.task.hr;

  FusedFeatures<T> dF;
  for (auto &t : dF) {
    t = Tensor<T>(2 * Wd, hr.h, hr.w);
  }
  Tensor<T> d_up_tar(Wd, hr.h, hr.w);
  Tensor<T> d_up_ref(Wd, hr.h, hr.w);
  auto &d_up_ref_sink = config_.use_ref ? d_up_ref : d_up_tar;
  Tensor<T> const &up_ref = config_.use_ref ? pass.up_ref : pass.up_tar;

  decode_backward(pass, pass.dec_tar, pass.up_tar, Branch::Target, d_tar, dF, d_up_tar, G);
  if (d_ref) {
    decode_backward(pass, pass.dec_ref, up_ref, Branch::Reference, *d_ref, dF, d_up_ref_sink, G);
  }

  for (int i = ModelConfig::fusion_layers; i >= 1; i--) {
    auto const &prev = pass.fused[i - 1];
    auto &dprev = dF[i - 1];
    add_into<T>(dprev, dF[i]);
    if (config_.local_fusion) {
      for (std::size_t k = 0; k < prev.size(); k++) {
        if (prev.data[k] > T(0)) {
          dprev.data[k] += dF[i].data[k];
        }
      }
      continue;
    }
    auto const &spec = layout_.fusion[i - 1];
    auto const &c = pass.fusion.layers[i - 1];
    Tensor<T> dc(prev.channels, hr.h, hr.w);
    nn::spatial_attention_backward<T>(spec.sa, P, c.c, dF[i], c.sa, G, dc);
    Tensor<T> da2(prev.channels, hr.h, hr.w);
    nn::channel_attention_backward<T>(spec.ca, P, c.a2, dc, c.ca, G, da2);
    Tensor<T> dr1(prev.channels, hr.h, hr.w);
    nn::conv_backward<T>(spec.conv_b, P, c.r1, da2, G, dr1);
    nn::relu_backward_inplace<T>(c.r1, dr1);
    nn::conv_backward<T>(spec.conv_a, P, prev, dr1, G, dprev);
  }

  ConstView<T> d0(dF[0]);
  add_into<T>(d_up_tar, d0.slice(0, Wd));
  add_into<T>(d_up_ref_sink, d0.slice(Wd, Wd));

  int const G0 = config_.base_channels;
  auto run_encoder = [&](EncoderCache<T> const &enc, Dims feat, Tensor<T> const &d_up) {
    auto const d_feat = nearest_upsample_backward(d_up, feat);
    auto const d_rdn = unfold3x3_backward(d_feat, G0);
    encoder_backward(enc, d_rdn, G);
  };
  run_encoder(pass.enc_tar, pass.feat_tar, d_up_tar);
  if (config_.use_ref) {
    run_encoder(pass.enc_ref, pass.feat_ref, d_up_ref);
  }
}

template struct ParameterSet<float>;
template struct ParameterSet<double>;
template ParameterSet<float> init_params<float>(ModelConfig const &);
template ParameterSet<double> init_params<double>(ModelConfig const &);
template class DualArbNet<float>;
template class DualArbNet<double>;

} // namespace arbsr
