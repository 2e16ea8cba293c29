#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <random>
#include <string>

#include "aem/ops.hpp"
#include "aem/parameter.hpp"

namespace aem::nn {

enum class Init { kaiming, trunc_normal, zeros };

/// Registers parameters under a dotted name prefix and initializes them from
/// one shared generator, so registration order fixes the values.
template <typename T>
class ParamBuilder {
 public:
  ParamBuilder(ParameterSet<T>& set, std::uint64_t seed)
      : set_(&set), rng_(std::make_shared<std::mt19937_64>(seed)) {}

  ParamBuilder child(const std::string& name) const {
    ParamBuilder b = *this;
    b.prefix_ = prefix_.empty() ? name : prefix_ + "." + name;
    return b;
  }

  std::string path(const std::string& name) const { return prefix_.empty() ? name : prefix_ + "." + name; }

  Tensor<T> tensor(const std::string& name, Shape shape, Init init, double fan_in = 1, double gain = 1);
  Tensor<T> constant(const std::string& name, Shape shape, T value);

 private:
  ParameterSet<T>* set_;
  std::shared_ptr<std::mt19937_64> rng_;
  std::string prefix_;
};

template <typename T>
struct Conv2dParams {
  Tensor<T> weight;  // [O, C, k, k]
  Tensor<T> bias;    // [O]
  Index stride = 1;
};

template <typename T>
Conv2dParams<T> make_conv(ParamBuilder<T> b, Index in, Index out, Index kernel, Index stride = 1,
                          Init init = Init::kaiming);
template <typename T>
Tensor<T> conv(const Tensor<T>& x, const Conv2dParams<T>& p);

template <typename T>
struct LayerNormParams {
  Tensor<T> gain, bias;
};

template <typename T>
LayerNormParams<T> make_norm(ParamBuilder<T> b, Index channels);
/// Layer norm over the channel axis of an [N,C,H,W] map.
template <typename T>
Tensor<T> channel_norm(const Tensor<T>& x, const LayerNormParams<T>& p);

/// conv -> prelu -> conv -> prelu. No normalization anywhere in this block.
template <typename T>
struct ConvBlockParams {
  Conv2dParams<T> conv1, conv2;
  Tensor<T> slope1, slope2;
};

template <typename T>
ConvBlockParams<T> make_conv_block(ParamBuilder<T> b, Index in, Index out, Index stride = 1,
                                   Index second_kernel = 3);
template <typename T>
Tensor<T> conv_block(const Tensor<T>& x, const ConvBlockParams<T>& p);

/// out = skip(x) + conv2(prelu(conv1(x))), skip a 1x1 projection when channels change.
template <typename T>
struct ResidualBlockParams {
  Conv2dParams<T> conv1, conv2;
  Tensor<T> slope;
  std::optional<Conv2dParams<T>> proj;
};

template <typename T>
ResidualBlockParams<T> make_residual_block(ParamBuilder<T> b, Index in, Index out, Index kernel = 3);
template <typename T>
Tensor<T> residual_block(const Tensor<T>& x, const ResidualBlockParams<T>& p);

/// Pointwise two-layer MLP with GELU, hidden width ratio x dim.
template <typename T>
struct MlpParams {
  Conv2dParams<T> fc1, fc2;
};

template <typename T>
MlpParams<T> make_mlp(ParamBuilder<T> b, Index dim, Index ratio = 4);
template <typename T>
Tensor<T> mlp(const Tensor<T>& x, const MlpParams<T>& p);

// ---------------------------------------------------------------------------
// Windowed multi-head self-attention.

template <typename T>
struct WindowAttentionParams {
  Index dim = 0, heads = 1, window = 1;
  Conv2dParams<T> qkv, proj;
  Tensor<T> rel_bias;  // [(2*window-1)^2, heads]
};

template <typename T>
WindowAttentionParams<T> make_window_attention(ParamBuilder<T> b, Index dim, Index heads, Index window);

/// x[N,C,H,W] with H and W multiples of `window_size` (<= params.window).
/// With shift > 0 the map is cyclically rolled by -shift first and pairs that
/// were not adjacent before the roll are masked. Keys at rows >= valid_h or
/// columns >= valid_w (caller padding) are masked too; pass H, W for none.
template <typename T>
Tensor<T> window_attention(const Tensor<T>& x, const WindowAttentionParams<T>& p, Index window_size, Index shift,
                           Index valid_h, Index valid_w);

template <typename T>
struct SwinBlockParams {
  LayerNormParams<T> norm1, norm2;
  WindowAttentionParams<T> attn;
  MlpParams<T> mlp;
  bool shifted = false;
};

template <typename T>
SwinBlockParams<T> make_swin_block(ParamBuilder<T> b, Index dim, Index heads, Index window, bool shifted);

/// x + attn(norm(x)), then + mlp(norm(.)). Pads internally to the window grid;
/// maps no larger than the window use one unshifted window.
template <typename T>
Tensor<T> swin_block(const Tensor<T>& x, const SwinBlockParams<T>& p);

// ---------------------------------------------------------------------------
// Axis-wise attention.

struct AxisPad {
  Index batch = 0, channels = 0;
  Index height = 0, width = 0;
  Index padded_height = 0, padded_width = 0;
  Index band = 1;

  Index x_bands() const { return padded_height / band; }
  Index y_bands() const { return padded_width / band; }
  Index x_tokens() const { return band * padded_width; }
  Index y_tokens() const { return padded_height * band; }
};

/// Both branches as token tensors. x_bands: [N * Hp/band, band * Wp, C/2]
/// holds horizontal strips (row-major tokens) of the first channel half;
/// y_bands: [N * Wp/band, Hp * band, C/2] holds vertical strips of the second.
/// Padding tokens are zero.
template <typename T>
struct AxisSplit {
  Tensor<T> x_bands, y_bands;
  AxisPad pad;
};

template <typename T>
AxisSplit<T> axis_split(const Tensor<T>& x, Index band);
/// Inverse of axis_split: reassembles both halves and drops padding.
template <typename T>
Tensor<T> axis_merge(const Tensor<T>& x_bands, const Tensor<T>& y_bands, const AxisPad& pad);

/// Token validity per branch, 1 for real pixels and 0 for padding.
std::vector<std::uint8_t> x_band_validity(const AxisPad& pad);
std::vector<std::uint8_t> y_band_validity(const AxisPad& pad);

template <typename T>
struct BandAttentionParams {
  Index dim = 0, heads = 1;
  Tensor<T> qkv_weight, qkv_bias;    // [3*dim, dim], [3*dim]
  Tensor<T> proj_weight, proj_bias;  // [dim, dim], [dim]
};

template <typename T>
BandAttentionParams<T> make_band_attention(ParamBuilder<T> b, Index dim, Index heads);

/// Multi-head self-attention over the token axis of tokens[B,T,C], no positional
/// terms. Keys whose validity entry is 0 are masked; empty validity means all valid.
template <typename T>
Tensor<T> band_attention(const Tensor<T>& tokens, const BandAttentionParams<T>& p,
                         const std::vector<std::uint8_t>& validity = {});

template <typename T>
struct AxisAttentionParams {
  Index dim = 0, heads = 1, band = 4;
  BandAttentionParams<T> x_branch, y_branch;
};

template <typename T>
AxisAttentionParams<T> make_axis_attention(ParamBuilder<T> b, Index dim, Index heads, Index band);
template <typename T>
Tensor<T> axis_attention(const Tensor<T>& x, const AxisAttentionParams<T>& p);

// ---------------------------------------------------------------------------
// Appearance-enhanced axis-wise learning.

template <typename T>
struct AEBlockParams {
  Conv2dParams<T> fuse;  // 1x1, (Cc + Ca) -> Cc
  ResidualBlockParams<T> res;
  Conv2dParams<T> out;   // 1x1, Cc -> Cc
};

template <typename T>
AEBlockParams<T> make_ae_block(ParamBuilder<T> b, Index context_dim, Index appearance_dim, Index res_kernel = 3);
/// F_ac = F_c + Conv(Res(Conv(Cat(F_c, F_a)))).
template <typename T>
Tensor<T> ae_block(const Tensor<T>& context, const Tensor<T>& appearance, const AEBlockParams<T>& p);

template <typename T>
struct AEALBlockParams {
  AEBlockParams<T> ae;
  LayerNormParams<T> norm1, norm2;
  AxisAttentionParams<T> attn;
  MlpParams<T> ffn;
};

template <typename T>
AEALBlockParams<T> make_aeal_block(ParamBuilder<T> b, Index context_dim, Index appearance_dim, Index heads,
                                   Index band, Index res_kernel = 3);
template <typename T>
Tensor<T> aeal_block(const Tensor<T>& context, const Tensor<T>& appearance, const AEALBlockParams<T>& p);

/// Zeroes every tensor of a residual branch's last layer so the block reduces to its skip path.
template <typename T>
void zero_out(Conv2dParams<T>& p);

}  // namespace aem::nn
