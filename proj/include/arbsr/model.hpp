#pragma once

#include "geometry.hpp"
#include "nn.hpp"
#include "tensor.hpp"

#include <array>
#include <cstdint>
#include <json.hpp>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace arbsr {

struct ModelConfig
{
  // Residual dense network encoder.
  int num_blocks = 4;      // D
  int convs_per_block = 4; // C
  int growth = 16;         // G
  int base_channels = 8;   // G0
  // Fusion attention.
  int ca_reduction = 4;
  int sa_kernel = 7;
  std::uint64_t seed = 0;
  // Ablation switches.
  bool use_ref = true;    // false: target features stand in for the reference
  bool use_scale = true;  // false: drop the two scale channels from the decoder input
  bool use_coord = true;  // false: drop the two coordinate channels
  bool ref_grid_coords = false; // add offsets relative to the reference grid
  // Bypasses fusion convolutions and attention (L_i(x) = ReLU(x)) so the
  // decoder output depends only on pointwise-local features.
  bool local_fusion = false;

  static constexpr int fusion_layers = 5;
  static constexpr int idf_layers = 6;

  int idf_width() const { return 9 * base_channels; }
  int fusion_channels() const { return 2 * idf_width(); }
  int idf_input_width() const;
  int ca_hidden() const;

  void validate() const;
  bool operator==(ModelConfig const &) const = default;
};

void to_json(nlohmann::json &j, ModelConfig const &c);
void from_json(nlohmann::json const &j, ModelConfig &c);

// Desk-scale and full-size encoder presets.
ModelConfig desk_config();
ModelConfig full_config();

struct ParamInfo
{
  std::string name;
  std::string group;
  std::vector<int> shape;
  std::size_t offset = 0;
  std::size_t count = 0;
};

template <typename T>
struct ParameterSet
{
  std::vector<ParamInfo> infos;
  Buffer<T> values;

  ParamInfo const &info(std::string const &name) const;
  std::span<T> operator[](std::string const &name);
  std::span<T const> operator[](std::string const &name) const;
  std::vector<std::string> groups() const;

  template <typename U>
  ParameterSet<U> cast() const
  {
    ParameterSet<U> out;
    out.infos = infos;
    out.values.assign(values.begin(), values.end());
    return out;
  }
};

struct Linear
{
  int in = 0;
  int out = 0;
  std::size_t weight = 0; // [out][in]
  std::size_t bias = 0;
};

struct FusionLayerSpec
{
  nn::ConvSpec conv_a, conv_b;
  nn::ChannelAttentionSpec ca;
  nn::ConvSpec sa;
};

// Offsets of every layer inside the flat parameter array.
struct ModelLayout
{
  nn::ConvSpec sfe1, sfe2;
  std::vector<std::vector<nn::ConvSpec>> rdb_convs;
  std::vector<nn::ConvSpec> rdb_lff;
  nn::ConvSpec gff1, gff2;
  std::array<FusionLayerSpec, ModelConfig::fusion_layers> fusion;
  std::array<Linear, ModelConfig::idf_layers> idf;
  Linear idf_out;
  Linear skip;
  std::vector<ParamInfo> infos;
  std::size_t total = 0;
};

ModelLayout build_layout(ModelConfig const &cfg);

// Fan-in scaled uniform for encoder/fusion; sine-aware ranges for the decoder.
template <typename T>
ParameterSet<T> init_params(ModelConfig const &cfg);

enum class Branch { Target, Reference };

struct Rect
{
  int y0 = 0, x0 = 0, h = 0, w = 0;
  bool operator==(Rect const &) const = default;
};

template <typename T>
struct EncoderCache
{
  Tensor<T> input;
  Tensor<T> f1, f2;
  std::vector<Tensor<T>> rdb_cat; // [block input | conv outputs]
  Tensor<T> gcat;                 // block outputs
  Tensor<T> g1;
  Tensor<T> out;
};

template <typename T>
struct FusionLayerCache
{
  Tensor<T> r1; // ReLU(conv_a(x))
  Tensor<T> a2; // conv_b(r1)
  Tensor<T> c;  // channel-attention output
  nn::ChannelAttentionCache<T> ca;
  nn::SpatialAttentionCache<T> sa;
};

template <typename T>
struct FusionCache
{
  std::array<FusionLayerCache<T>, ModelConfig::fusion_layers> layers;
};

// F^(0) .. F^(5); each holds [target half | reference half].
template <typename T>
using FusedFeatures = std::array<Tensor<T>, ModelConfig::fusion_layers + 1>;

template <typename T>
struct DecodeCache
{
  std::array<Tensor<T>, ModelConfig::idf_layers> pre; // W f + b
  std::array<Tensor<T>, ModelConfig::idf_layers> act; // sin input
  std::array<Tensor<T>, ModelConfig::idf_layers> f;   // sin output
  Grid<T> skip_pre;
};

template <typename T>
struct ForwardPass
{
  ScaleTask task;
  Grid<T> sr_tar;
  std::optional<Grid<T>> sr_ref;

  // Intermediates kept for backward when requested.
  bool cached = false;
  EncoderCache<T> enc_tar, enc_ref;
  Dims feat_tar, feat_ref;
  Tensor<T> up_tar, up_ref;
  FusedFeatures<T> fused;
  FusionCache<T> fusion;
  Tensor<T> inputs;
  DecodeCache<T> dec_tar, dec_ref;
};

template <typename T>
class DualArbNet
{
public:
  explicit DualArbNet(ModelConfig const &cfg);
  DualArbNet(ModelConfig const &cfg, ParameterSet<T> params);

  ModelConfig const &config() const { return config_; }
  ModelLayout const &layout() const { return layout_; }
  ParameterSet<T> const &params() const { return params_; }
  ParameterSet<T> &params() { return params_; }

  // RDN followed by 3x3 unfolding: (9 G0) x h x w.
  Tensor<T> encode(Grid<T> const &img, EncoderCache<T> *cache = nullptr) const;
  // Returns F^(0..5) on the HR grid.
  FusedFeatures<T> fuse(
    Tensor<T> const &up_tar, Tensor<T> const &up_ref, FusionCache<T> *cache = nullptr) const;
  // Per-pixel decoder input channels (scales, coordinates) over `rect`.
  Tensor<T> decoder_inputs(ScaleTask const &task, Rect rect) const;
  // Implicit decoding function output W_out f^(5) + b_out over `rect`.
  // `inputs` must cover exactly `rect`; fused features cover the full HR grid.
  Grid<T> idf_decode(
    FusedFeatures<T> const &fused, Tensor<T> const &inputs, Branch branch, Rect rect,
    DecodeCache<T> *cache = nullptr) const;
  // sin(W_s F_up + b_s) over `rect`.
  Grid<T> skip(ConstView<T> up, Rect rect, Grid<T> *pre = nullptr) const;

  ForwardPass<T> forward(
    Grid<T> const &tar, Grid<T> const &ref, ScaleTask const &task, bool want_ref = false,
    bool keep_cache = false) const;

  // Accumulates parameter gradients of sum(d_tar * sr_tar) (+ the reference
  // term) into `grads`.
  void backward(
    ForwardPass<T> const &pass, Grid<T> const &d_tar, Grid<T> const *d_ref,
    std::span<T> grads) const;

private:
  Tensor<T> encoder_backward(EncoderCache<T> const &cache, Tensor<T> const &d_out, T *grads) const;
  void decode_backward(
    ForwardPass<T> const &pass, DecodeCache<T> const &dec, Tensor<T> const &up, Branch branch,
    Grid<T> const &d_out, FusedFeatures<T> &d_fused, Tensor<T> &d_up, T *grads) const;

  ModelConfig config_;
  ModelLayout layout_;
  ParameterSet<T> params_;
};

// Frequency multiplier folded into the first decoder layer.
inline constexpr double kSineOmega = 30.0;

} // namespace arbsr
