#include "aem/layers.hpp"

#include <algorithm>
#include <cmath>

namespace aem::nn {

namespace {

constexpr double kMasked = -1e9;
// He gain for PReLU with the initial slope of 0.25.
const double kPreluGain = std::sqrt(2.0 / (1.0 + 0.25 * 0.25));

using IndexMap = std::shared_ptr<std::vector<Index>>;

IndexMap new_map(Index n) { return std::make_shared<std::vector<Index>>(static_cast<std::size_t>(n), Index{-1}); }

template <typename T>
Tensor<T> attend(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, const Tensor<T>& bias,
                 const Tensor<T>& mask) {
  const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(q.dim(-1))));
  Tensor<T> s = ops::matmul(ops::mul_scalar(q, scale), ops::permute(k, {0, 1, 3, 2}));
  if (bias.defined()) s = ops::add(s, bias);
  if (mask.defined()) s = ops::add(s, mask);
  return ops::matmul(ops::softmax(s, -1), v);
}

Index round_up(Index v, Index m) { return (v + m - 1) / m * m; }

}  // namespace

template <typename T>
Tensor<T> ParamBuilder<T>::tensor(const std::string& name, Shape shape, Init init, double fan_in, double gain) {
  Tensor<T> t(shape);
  auto& rng = *rng_;
  switch (init) {
    case Init::zeros:
      break;
    case Init::kaiming: {
      std::normal_distribution<double> d(0.0, gain / std::sqrt(fan_in));
      for (auto& v : t.mutable_data()) v = static_cast<T>(d(rng));
      break;
    }
    case Init::trunc_normal: {
      std::normal_distribution<double> d(0.0, 0.02);
      for (auto& v : t.mutable_data()) {
        double s;
        do s = d(rng);
        while (std::abs(s) > 0.04);
        v = static_cast<T>(s);
      }
      break;
    }
  }
  return set_->add(path(name), t);
}

template <typename T>
Tensor<T> ParamBuilder<T>::constant(const std::string& name, Shape shape, T value) {
  return set_->add(path(name), Tensor<T>(shape, value));
}

template <typename T>
Conv2dParams<T> make_conv(ParamBuilder<T> b, Index in, Index out, Index kernel, Index stride, Init init) {
  Conv2dParams<T> p;
  p.weight = b.tensor("weight", {out, in, kernel, kernel}, init, static_cast<double>(in * kernel * kernel),
                      kPreluGain);
  p.bias = b.tensor("bias", {out}, Init::zeros);
  p.stride = stride;
  return p;
}

template <typename T>
Tensor<T> conv(const Tensor<T>& x, const Conv2dParams<T>& p) {
  return ops::conv2d(x, p.weight, p.bias, p.stride, p.weight.dim(2) / 2);
}

template <typename T>
void zero_out(Conv2dParams<T>& p) {
  for (auto& v : p.weight.mutable_data()) v = T(0);
  for (auto& v : p.bias.mutable_data()) v = T(0);
}

template <typename T>
LayerNormParams<T> make_norm(ParamBuilder<T> b, Index channels) {
  return {b.constant("gain", {channels}, T(1)), b.constant("bias", {channels}, T(0))};
}

template <typename T>
Tensor<T> channel_norm(const Tensor<T>& x, const LayerNormParams<T>& p) {
  return ops::layer_norm(x, p.gain, p.bias, 1);
}

template <typename T>
ConvBlockParams<T> make_conv_block(ParamBuilder<T> b, Index in, Index out, Index stride, Index second_kernel) {
  ConvBlockParams<T> p;
  p.conv1 = make_conv(b.child("conv1"), in, out, 3, stride);
  p.slope1 = b.constant("slope1", {out}, T(0.25));
  p.conv2 = make_conv(b.child("conv2"), out, out, second_kernel);
  p.slope2 = b.constant("slope2", {out}, T(0.25));
  return p;
}

template <typename T>
Tensor<T> conv_block(const Tensor<T>& x, const ConvBlockParams<T>& p) {
  Tensor<T> h = ops::prelu(conv(x, p.conv1), p.slope1);
  return ops::prelu(conv(h, p.conv2), p.slope2);
}

template <typename T>
ResidualBlockParams<T> make_residual_block(ParamBuilder<T> b, Index in, Index out, Index kernel) {
  ResidualBlockParams<T> p;
  p.conv1 = make_conv(b.child("conv1"), in, out, kernel);
  p.slope = b.constant("slope", {out}, T(0.25));
  p.conv2 = make_conv(b.child("conv2"), out, out, kernel);
  if (in != out) p.proj = make_conv(b.child("proj"), in, out, 1, 1, Init::trunc_normal);
  return p;
}

template <typename T>
Tensor<T> residual_block(const Tensor<T>& x, const ResidualBlockParams<T>& p) {
  Tensor<T> branch = conv(ops::prelu(conv(x, p.conv1), p.slope), p.conv2);
  return ops::add(p.proj ? conv(x, *p.proj) : x, branch);
}

template <typename T>
MlpParams<T> make_mlp(ParamBuilder<T> b, Index dim, Index ratio) {
  return {make_conv(b.child("fc1"), dim, dim * ratio, 1, 1, Init::trunc_normal),
          make_conv(b.child("fc2"), dim * ratio, dim, 1, 1, Init::trunc_normal)};
}

template <typename T>
Tensor<T> mlp(const Tensor<T>& x, const MlpParams<T>& p) {
  return conv(ops::gelu(conv(x, p.fc1)), p.fc2);
}

// ---------------------------------------------------------------------------

template <typename T>
WindowAttentionParams<T> make_window_attention(ParamBuilder<T> b, Index dim, Index heads, Index window) {
  if (dim % heads != 0) throw ShapeError("window attention: dim must be divisible by heads");
  WindowAttentionParams<T> p;
  p.dim = dim;
  p.heads = heads;
  p.window = window;
  p.qkv = make_conv(b.child("qkv"), dim, 3 * dim, 1, 1, Init::trunc_normal);
  p.rel_bias = b.tensor("rel_bias", {(2 * window - 1) * (2 * window - 1), heads}, Init::zeros);
  p.proj = make_conv(b.child("proj"), dim, dim, 1, 1, Init::trunc_normal);
  return p;
}

template <typename T>
Tensor<T> window_attention(const Tensor<T>& x, const WindowAttentionParams<T>& p, Index ws, Index shift,
                           Index valid_h, Index valid_w) {
  if (x.rank() != 4 || x.dim(1) != p.dim) throw ShapeError("window attention: bad input " + shape_str(x.shape()));
  const Index N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (ws < 1 || ws > p.window || H % ws || W % ws) throw ShapeError("window attention: map not divisible by window");
  if (shift < 0 || shift >= ws) throw ShapeError("window attention: shift out of range");
  const Index heads = p.heads, hd = C / heads, T_ = ws * ws;
  const Index nwy = H / ws, nwx = W / ws, nw = nwy * nwx, B = N * nw;

  // Original coordinates of the token at rolled position r.
  auto orig_y = [&](Index r) { return (r + shift) % H; };
  auto orig_x = [&](Index r) { return (r + shift) % W; };

  const Tensor<T> qkv = conv(x, p.qkv);
  auto part_map = new_map(3 * B * heads * T_ * hd);
  {
    Index o = 0;
    for (Index part = 0; part < 3; ++part)
      for (Index n = 0; n < N; ++n)
        for (Index wy = 0; wy < nwy; ++wy)
          for (Index wx = 0; wx < nwx; ++wx)
            for (Index h = 0; h < heads; ++h)
              for (Index t = 0; t < T_; ++t) {
                const Index y = orig_y(wy * ws + t / ws), xx = orig_x(wx * ws + t % ws);
                for (Index d = 0; d < hd; ++d) {
                  const Index ch = part * C + h * hd + d;
                  (*part_map)[static_cast<std::size_t>(o++)] = ((n * 3 * C + ch) * H + y) * W + xx;
                }
              }
  }
  const Tensor<T> parts = ops::gather(qkv, {3, B, heads, T_, hd}, part_map);
  const Tensor<T> q = ops::reshape(ops::slice(parts, 0, 0, 1), {B, heads, T_, hd});
  const Tensor<T> k = ops::reshape(ops::slice(parts, 0, 1, 1), {B, heads, T_, hd});
  const Tensor<T> v = ops::reshape(ops::slice(parts, 0, 2, 1), {B, heads, T_, hd});

  const Index span = 2 * p.window - 1;
  auto bias_map = new_map(heads * T_ * T_);
  for (Index h = 0; h < heads; ++h)
    for (Index i = 0; i < T_; ++i)
      for (Index j = 0; j < T_; ++j) {
        const Index dy = i / ws - j / ws + p.window - 1, dx = i % ws - j % ws + p.window - 1;
        (*bias_map)[static_cast<std::size_t>((h * T_ + i) * T_ + j)] = (dy * span + dx) * heads + h;
      }
  const Tensor<T> bias = ops::gather(p.rel_bias, {1, heads, T_, T_}, bias_map);

  Tensor<T> mask;
  if (shift > 0 || valid_h < H || valid_w < W) {
    auto region = [&](Index r, Index extent) {
      if (shift == 0) return Index{0};
      return r < extent - ws ? Index{0} : (r < extent - shift ? Index{1} : Index{2});
    };
    mask = Tensor<T>({B, heads, T_, T_});
    auto m = mask.mutable_data();
    for (Index wy = 0; wy < nwy; ++wy)
      for (Index wx = 0; wx < nwx; ++wx) {
        std::vector<Index> label(static_cast<std::size_t>(T_));
        std::vector<bool> valid(static_cast<std::size_t>(T_));
        for (Index t = 0; t < T_; ++t) {
          const Index ry = wy * ws + t / ws, rx = wx * ws + t % ws;
          label[t] = region(ry, H) * 3 + region(rx, W);
          valid[t] = orig_y(ry) < valid_h && orig_x(rx) < valid_w;
        }
        for (Index n = 0; n < N; ++n)
          for (Index h = 0; h < heads; ++h) {
            const Index base = ((n * nw + wy * nwx + wx) * heads + h) * T_ * T_;
            for (Index i = 0; i < T_; ++i)
              for (Index j = 0; j < T_; ++j)
                m[static_cast<std::size_t>(base + i * T_ + j)] =
                    (label[i] != label[j] || !valid[j]) ? static_cast<T>(kMasked) : T(0);
          }
      }
  }

  const Tensor<T> o = attend(q, k, v, bias, mask);  // [B, heads, T, hd]
  auto merge_map = new_map(N * C * H * W);
  {
    Index idx = 0;
    for (Index n = 0; n < N; ++n)
      for (Index c = 0; c < C; ++c)
        for (Index y = 0; y < H; ++y)
          for (Index xx = 0; xx < W; ++xx) {
            const Index ry = (y - shift + H) % H, rx = (xx - shift + W) % W;
            const Index b = n * nw + (ry / ws) * nwx + rx / ws;
            const Index t = (ry % ws) * ws + rx % ws;
            (*merge_map)[static_cast<std::size_t>(idx++)] = ((b * heads + c / hd) * T_ + t) * hd + c % hd;
          }
  }
  return conv(ops::gather(o, {N, C, H, W}, merge_map), p.proj);
}

template <typename T>
SwinBlockParams<T> make_swin_block(ParamBuilder<T> b, Index dim, Index heads, Index window, bool shifted) {
  SwinBlockParams<T> p;
  p.norm1 = make_norm(b.child("norm1"), dim);
  p.attn = make_window_attention(b.child("attn"), dim, heads, window);
  p.norm2 = make_norm(b.child("norm2"), dim);
  p.mlp = make_mlp(b.child("mlp"), dim);
  p.shifted = shifted;
  return p;
}

template <typename T>
Tensor<T> swin_block(const Tensor<T>& x, const SwinBlockParams<T>& p) {
  const Index H = x.dim(2), W = x.dim(3);
  const Index window = p.attn.window;
  Index ws = window, shift = p.shifted ? window / 2 : 0;
  if (std::min(H, W) <= window) {
    ws = std::min(H, W);
    shift = 0;
  }
  const Index hp = round_up(H, ws), wp = round_up(W, ws);
  Tensor<T> h = channel_norm(x, p.norm1);
  if (hp != H || wp != W) h = ops::pad_zero(h, {0, hp - H, 0, wp - W});
  h = window_attention(h, p.attn, ws, shift, H, W);
  if (hp != H || wp != W) h = ops::crop(h, 0, 0, H, W);
  const Tensor<T> y = ops::add(x, h);
  return ops::add(y, mlp(channel_norm(y, p.norm2), p.mlp));
}

// ---------------------------------------------------------------------------

std::vector<std::uint8_t> x_band_validity(const AxisPad& pad) {
  std::vector<std::uint8_t> v;
  v.reserve(static_cast<std::size_t>(pad.batch * pad.x_bands() * pad.x_tokens()));
  for (Index n = 0; n < pad.batch; ++n)
    for (Index b = 0; b < pad.x_bands(); ++b)
      for (Index ty = 0; ty < pad.band; ++ty)
        for (Index x = 0; x < pad.padded_width; ++x) v.push_back(b * pad.band + ty < pad.height && x < pad.width);
  return v;
}

std::vector<std::uint8_t> y_band_validity(const AxisPad& pad) {
  std::vector<std::uint8_t> v;
  v.reserve(static_cast<std::size_t>(pad.batch * pad.y_bands() * pad.y_tokens()));
  for (Index n = 0; n < pad.batch; ++n)
    for (Index b = 0; b < pad.y_bands(); ++b)
      for (Index y = 0; y < pad.padded_height; ++y)
        for (Index tx = 0; tx < pad.band; ++tx) v.push_back(y < pad.height && b * pad.band + tx < pad.width);
  return v;
}

template <typename T>
AxisSplit<T> axis_split(const Tensor<T>& x, Index band) {
  if (x.rank() != 4) throw ShapeError("axis_split: expected [N,C,H,W], got " + shape_str(x.shape()));
  if (band < 1) throw ShapeError("axis_split: band must be positive");
  AxisPad pad;
  pad.batch = x.dim(0);
  pad.channels = x.dim(1);
  pad.height = x.dim(2);
  pad.width = x.dim(3);
  if (pad.channels % 2) throw ShapeError("axis_split: channel count must be even");
  pad.band = band;
  pad.padded_height = round_up(pad.height, band);
  pad.padded_width = round_up(pad.width, band);
  const Index N = pad.batch, C = pad.channels, H = pad.height, W = pad.width, half = C / 2;
  auto src = [&](Index n, Index c, Index y, Index xx) -> Index {
    return (y < H && xx < W) ? ((n * C + c) * H + y) * W + xx : -1;
  };

  auto xm = new_map(N * pad.x_bands() * pad.x_tokens() * half);
  Index o = 0;
  for (Index n = 0; n < N; ++n)
    for (Index b = 0; b < pad.x_bands(); ++b)
      for (Index ty = 0; ty < band; ++ty)
        for (Index xx = 0; xx < pad.padded_width; ++xx)
          for (Index c = 0; c < half; ++c) (*xm)[static_cast<std::size_t>(o++)] = src(n, c, b * band + ty, xx);
  auto ym = new_map(N * pad.y_bands() * pad.y_tokens() * half);
  o = 0;
  for (Index n = 0; n < N; ++n)
    for (Index b = 0; b < pad.y_bands(); ++b)
      for (Index y = 0; y < pad.padded_height; ++y)
        for (Index tx = 0; tx < band; ++tx)
          for (Index c = 0; c < half; ++c) (*ym)[static_cast<std::size_t>(o++)] = src(n, half + c, y, b * band + tx);

  AxisSplit<T> out;
  out.pad = pad;
  out.x_bands = ops::gather(x, {N * pad.x_bands(), pad.x_tokens(), half}, xm);
  out.y_bands = ops::gather(x, {N * pad.y_bands(), pad.y_tokens(), half}, ym);
  return out;
}

template <typename T>
Tensor<T> axis_merge(const Tensor<T>& x_bands, const Tensor<T>& y_bands, const AxisPad& pad) {
  const Index N = pad.batch, H = pad.height, W = pad.width, half = pad.channels / 2, band = pad.band;
  if (x_bands.shape() != Shape{N * pad.x_bands(), pad.x_tokens(), half} ||
      y_bands.shape() != Shape{N * pad.y_bands(), pad.y_tokens(), half}) {
    throw ShapeError("axis_merge: band shapes do not match the recorded split");
  }
  auto xm = new_map(N * half * H * W);
  auto ym = new_map(N * half * H * W);
  Index o = 0;
  for (Index n = 0; n < N; ++n)
    for (Index c = 0; c < half; ++c)
      for (Index y = 0; y < H; ++y)
        for (Index xx = 0; xx < W; ++xx, ++o) {
          const Index bx = n * pad.x_bands() + y / band;
          (*xm)[static_cast<std::size_t>(o)] = (bx * pad.x_tokens() + (y % band) * pad.padded_width + xx) * half + c;
          const Index by = n * pad.y_bands() + xx / band;
          (*ym)[static_cast<std::size_t>(o)] = (by * pad.y_tokens() + y * band + xx % band) * half + c;
        }
  return ops::concat<T>({ops::gather(x_bands, {N, half, H, W}, xm), ops::gather(y_bands, {N, half, H, W}, ym)}, 1);
}

template <typename T>
BandAttentionParams<T> make_band_attention(ParamBuilder<T> b, Index dim, Index heads) {
  if (dim % heads != 0) throw ShapeError("band attention: dim must be divisible by heads");
  BandAttentionParams<T> p;
  p.dim = dim;
  p.heads = heads;
  p.qkv_weight = b.tensor("qkv.weight", {3 * dim, dim}, Init::trunc_normal);
  p.qkv_bias = b.tensor("qkv.bias", {3 * dim}, Init::zeros);
  p.proj_weight = b.tensor("proj.weight", {dim, dim}, Init::trunc_normal);
  p.proj_bias = b.tensor("proj.bias", {dim}, Init::zeros);
  return p;
}

template <typename T>
Tensor<T> band_attention(const Tensor<T>& tokens, const BandAttentionParams<T>& p,
                         const std::vector<std::uint8_t>& validity) {
  if (tokens.rank() != 3 || tokens.dim(2) != p.dim) {
    throw ShapeError("band attention: bad tokens " + shape_str(tokens.shape()));
  }
  const Index B = tokens.dim(0), T_ = tokens.dim(1), heads = p.heads, hd = p.dim / heads;
  const Tensor<T> qkv = ops::reshape(ops::linear(tokens, p.qkv_weight, p.qkv_bias), {B, T_, 3, heads, hd});
  const Tensor<T> parts = ops::permute(qkv, {2, 0, 3, 1, 4});
  const Tensor<T> q = ops::reshape(ops::slice(parts, 0, 0, 1), {B, heads, T_, hd});
  const Tensor<T> k = ops::reshape(ops::slice(parts, 0, 1, 1), {B, heads, T_, hd});
  const Tensor<T> v = ops::reshape(ops::slice(parts, 0, 2, 1), {B, heads, T_, hd});

  Tensor<T> mask;
  if (!validity.empty()) {
    if (static_cast<Index>(validity.size()) != B * T_) throw ShapeError("band attention: validity size mismatch");
    if (std::find(validity.begin(), validity.end(), 0) != validity.end()) {
      mask = Tensor<T>({B, heads, T_, T_});
      auto m = mask.mutable_data();
      for (Index b = 0; b < B; ++b)
        for (Index h = 0; h < heads; ++h)
          for (Index i = 0; i < T_; ++i)
            for (Index j = 0; j < T_; ++j)
              m[static_cast<std::size_t>(((b * heads + h) * T_ + i) * T_ + j)] =
                  validity[static_cast<std::size_t>(b * T_ + j)] ? T(0) : static_cast<T>(kMasked);
    }
  }
  const Tensor<T> o = attend(q, k, v, Tensor<T>(), mask);
  const Tensor<T> merged = ops::reshape(ops::permute(o, {0, 2, 1, 3}), {B, T_, p.dim});
  return ops::linear(merged, p.proj_weight, p.proj_bias);
}

template <typename T>
AxisAttentionParams<T> make_axis_attention(ParamBuilder<T> b, Index dim, Index heads, Index band) {
  if (dim % 2) throw ShapeError("axis attention: dim must be even");
  AxisAttentionParams<T> p;
  p.dim = dim;
  p.heads = heads;
  p.band = band;
  p.x_branch = make_band_attention(b.child("x"), dim / 2, heads);
  p.y_branch = make_band_attention(b.child("y"), dim / 2, heads);
  return p;
}

template <typename T>
Tensor<T> axis_attention(const Tensor<T>& x, const AxisAttentionParams<T>& p) {
  if (x.rank() != 4 || x.dim(1) != p.dim) throw ShapeError("axis attention: bad input " + shape_str(x.shape()));
  const AxisSplit<T> s = axis_split(x, p.band);
  const Tensor<T> xo = band_attention(s.x_bands, p.x_branch, x_band_validity(s.pad));
  const Tensor<T> yo = band_attention(s.y_bands, p.y_branch, y_band_validity(s.pad));
  return axis_merge(xo, yo, s.pad);
}

// ---------------------------------------------------------------------------

template <typename T>
AEBlockParams<T> make_ae_block(ParamBuilder<T> b, Index context_dim, Index appearance_dim, Index res_kernel) {
  AEBlockParams<T> p;
  p.fuse = make_conv(b.child("fuse"), context_dim + appearance_dim, context_dim, 1, 1, Init::trunc_normal);
  p.res = make_residual_block(b.child("res"), context_dim, context_dim, res_kernel);
  p.out = make_conv(b.child("out"), context_dim, context_dim, 1, 1, Init::trunc_normal);
  return p;
}

template <typename T>
Tensor<T> ae_block(const Tensor<T>& context, const Tensor<T>& appearance, const AEBlockParams<T>& p) {
  if (context.rank() != 4 || appearance.rank() != 4 || context.dim(0) != appearance.dim(0) ||
      context.dim(2) != appearance.dim(2) || context.dim(3) != appearance.dim(3)) {
    throw ShapeError("ae block: context " + shape_str(context.shape()) + " and appearance " +
                     shape_str(appearance.shape()) + " must share batch and spatial dims");
  }
  const Tensor<T> fused = conv(ops::concat<T>({context, appearance}, 1), p.fuse);
  return ops::add(context, conv(residual_block(fused, p.res), p.out));
}

template <typename T>
AEALBlockParams<T> make_aeal_block(ParamBuilder<T> b, Index context_dim, Index appearance_dim, Index heads,
                                   Index band, Index res_kernel) {
  AEALBlockParams<T> p;
  p.ae = make_ae_block(b.child("ae"), context_dim, appearance_dim, res_kernel);
  p.norm1 = make_norm(b.child("norm1"), context_dim);
  p.attn = make_axis_attention(b.child("attn"), context_dim, heads, band);
  p.norm2 = make_norm(b.child("norm2"), context_dim);
  p.ffn = make_mlp(b.child("ffn"), context_dim);
  return p;
}

template <typename T>
Tensor<T> aeal_block(const Tensor<T>& context, const Tensor<T>& appearance, const AEALBlockParams<T>& p) {
  const Tensor<T> fac = ae_block(context, appearance, p.ae);
  const Tensor<T> y = ops::add(fac, axis_attention(channel_norm(fac, p.norm1), p.attn));
  return ops::add(y, mlp(channel_norm(y, p.norm2), p.ffn));
}

#define AEM_LAYERS_INSTANTIATE(T)                                                                               \
  template class ParamBuilder<T>;                                                                               \
  template Conv2dParams<T> make_conv(ParamBuilder<T>, Index, Index, Index, Index, Init);                        \
  template Tensor<T> conv(const Tensor<T>&, const Conv2dParams<T>&);                                            \
  template void zero_out(Conv2dParams<T>&);                                                                     \
  template LayerNormParams<T> make_norm(ParamBuilder<T>, Index);                                                \
  template Tensor<T> channel_norm(const Tensor<T>&, const LayerNormParams<T>&);                                 \
  template ConvBlockParams<T> make_conv_block(ParamBuilder<T>, Index, Index, Index, Index);                     \
  template Tensor<T> conv_block(const Tensor<T>&, const ConvBlockParams<T>&);                                   \
  template ResidualBlockParams<T> make_residual_block(ParamBuilder<T>, Index, Index, Index);                    \
  template Tensor<T> residual_block(const Tensor<T>&, const ResidualBlockParams<T>&);                           \
  template MlpParams<T> make_mlp(ParamBuilder<T>, Index, Index);                                                \
  template Tensor<T> mlp(const Tensor<T>&, const MlpParams<T>&);                                                \
  template WindowAttentionParams<T> make_window_attention(ParamBuilder<T>, Index, Index, Index);                \
  template Tensor<T> window_attention(const Tensor<T>&, const WindowAttentionParams<T>&, Index, Index, Index,   \
                                      Index);                                                                   \
  template SwinBlockParams<T> make_swin_block(ParamBuilder<T>, Index, Index, Index, bool);                      \
  template Tensor<T> swin_block(const Tensor<T>&, const SwinBlockParams<T>&);                                   \
  template AxisSplit<T> axis_split(const Tensor<T>&, Index);                                                    \
  template Tensor<T> axis_merge(const Tensor<T>&, const Tensor<T>&, const AxisPad&);                            \
  template BandAttentionParams<T> make_band_attention(ParamBuilder<T>, Index, Index);                           \
  template Tensor<T> band_attention(const Tensor<T>&, const BandAttentionParams<T>&,                            \
                                    const std::vector<std::uint8_t>&);                                          \
  template AxisAttentionParams<T> make_axis_attention(ParamBuilder<T>, Index, Index, Index);                    \
  template Tensor<T> axis_attention(const Tensor<T>&, const AxisAttentionParams<T>&);                           \
  template AEBlockParams<T> make_ae_block(ParamBuilder<T>, Index, Index, Index);                                \
  template Tensor<T> ae_block(const Tensor<T>&, const Tensor<T>&, const AEBlockParams<T>&);                     \
  template AEALBlockParams<T> make_aeal_block(ParamBuilder<T>, Index, Index, Index, Index, Index);              \
  template Tensor<T> aeal_block(const Tensor<T>&, const Tensor<T>&, const AEALBlockParams<T>&);

AEM_LAYERS_INSTANTIATE(float)
AEM_LAYERS_INSTANTIATE(double)

}  // namespace aem::nn
