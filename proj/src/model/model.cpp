#include "aem/model.hpp"

#include <stdexcept>

namespace aem {

namespace {

Index round_up(Index v, Index m) { return (v + m - 1) / m * m; }

void require(bool ok, const std::string& msg) {
  if (!ok) throw std::invalid_argument("AEMatterConfig: " + msg);
}

}  // namespace

void AEMatterConfig::validate() const {
  require(in_channels > 0, "in_channels must be positive");
  for (Index c : stem) require(c > 0, "stem channels must be positive");
  for (int i = 0; i < 4; ++i) {
    require(stages[i] > 0 && blocks[i] > 0 && heads[i] > 0, "stage widths, blocks and heads must be positive");
    require(stages[i] % heads[i] == 0, "stage width must be divisible by its head count");
    if (i > 0) require(stages[i] == 2 * stages[i - 1], "stage widths must double");
  }
  require(window > 0, "window must be positive");
  require(aeal.count >= 1, "aeal.count must be >= 1");
  require(aeal.band > 0 && aeal.heads > 0, "aeal band and heads must be positive");
  require(aeal.context_dim % (2 * aeal.heads) == 0, "aeal.context_dim must be divisible by 2*aeal.heads");
  require(decoder_blocks > 0, "decoder_blocks must be positive");
  require(fusion_kernel > 0 && fusion_kernel % 2 == 1, "fusion_kernel must be odd");
  require(aeal_res_kernel > 0 && aeal_res_kernel % 2 == 1, "aeal_res_kernel must be odd");
}

AEMatterConfig AEMatterConfig::reduced() {
  AEMatterConfig c;
  c.stem = {4, 8};
  c.stages = {2, 4, 8, 16};
  c.blocks = {1, 1, 1, 1};
  c.heads = {1, 1, 1, 2};
  c.aeal = {3, 8, 4, 2};
  return c;
}

AEMatterConfig AEMatterConfig::small() {
  AEMatterConfig c;
  c.stem = {16, 32};
  c.stages = {16, 32, 64, 128};
  c.blocks = {1, 1, 2, 1};
  c.heads = {1, 1, 2, 4};
  c.aeal = {3, 32, 4, 2};
  return c;
}

bool operator==(const AEMatterConfig& a, const AEMatterConfig& b) {
  return a.stem == b.stem && a.stages == b.stages && a.blocks == b.blocks && a.heads == b.heads &&
         a.window == b.window && a.aeal.count == b.aeal.count && a.aeal.context_dim == b.aeal.context_dim &&
         a.aeal.band == b.aeal.band && a.aeal.heads == b.aeal.heads && a.decoder_blocks == b.decoder_blocks &&
         a.in_channels == b.in_channels && a.fusion_kernel == b.fusion_kernel &&
         a.aeal_res_kernel == b.aeal_res_kernel;
}

template <typename T>
ModelWeights<T> build_model(const AEMatterConfig& config, std::uint64_t seed) {
  config.validate();
  ModelWeights<T> w;
  w.config = config;
  nn::ParamBuilder<T> b(w.params, seed);
  const auto& C = config.stages;
  const Index fk = config.fusion_kernel, cx = config.aeal.context_dim;
  auto swins = [&](const std::string& prefix, Index s, Index n) {
    std::vector<nn::SwinBlockParams<T>> out;
    for (Index j = 0; j < n; ++j)
      out.push_back(nn::make_swin_block(b.child(prefix + "." + std::to_string(j)), C[s], config.heads[s],
                                        config.window, j % 2 == 1));
    return out;
  };

  w.stem1 = nn::make_conv_block(b.child("stem.0"), config.in_channels, config.stem[0], 1, fk);
  w.stem2 = nn::make_conv_block(b.child("stem.1"), config.stem[0], config.stem[1], 2, fk);
  w.embed = nn::make_conv(b.child("embed.conv"), config.stem[1], C[0], 3, 2);
  w.embed_norm = nn::make_norm(b.child("embed.norm"), C[0]);
  for (Index s = 0; s < 4; ++s) {
    const std::string stage = "stage." + std::to_string(s);
    if (s > 0) {
      w.merges[s - 1].norm = nn::make_norm(b.child(stage + ".merge.norm"), 4 * C[s - 1]);
      w.merges[s - 1].reduce =
          nn::make_conv(b.child(stage + ".merge.reduce"), 4 * C[s - 1], C[s], 1, 1, nn::Init::trunc_normal);
    }
    w.stages[s] = swins(stage + ".block", s, config.blocks[s]);
    w.stage_norms[s] = nn::make_norm(b.child(stage + ".norm"), C[s]);
  }

  w.context_proj = nn::make_conv(b.child("context.proj"), C[3], cx, 1);
  w.context_res = nn::make_residual_block(b.child("context.res"), cx, cx);
  w.appearance_proj = nn::make_conv(b.child("appearance.proj"), C[3] + C[2], cx, 1);
  w.appearance_res = nn::make_residual_block(b.child("appearance.res"), cx, cx);
  w.appearance_down = nn::make_conv(b.child("appearance.down"), cx, cx, 3, 2);
  for (Index i = 0; i < config.aeal.count; ++i)
    w.aeal.push_back(nn::make_aeal_block(b.child("aeal." + std::to_string(i)), cx, cx, config.aeal.heads,
                                         config.aeal.band, config.aeal_res_kernel));

  w.decoder_in = nn::make_conv(b.child("decoder.in"), cx + C[3], C[3], 1);
  w.decoder_stages[3] = swins("decoder.level.3", 3, config.decoder_blocks);
  for (Index lvl = 2; lvl >= 0; --lvl) {
    const std::string level = "decoder.level." + std::to_string(lvl);
    w.decoder_fuse[lvl] = nn::make_conv(b.child(level + ".fuse"), C[lvl + 1] + C[lvl], C[lvl], 1);
    w.decoder_stages[lvl] = swins(level + ".block", lvl, config.decoder_blocks);
  }
  w.detail2 = nn::make_conv_block(b.child("decoder.detail.1"), C[0] + config.stem[1], config.stem[1], 1, fk);
  w.detail1 = nn::make_conv_block(b.child("decoder.detail.0"), config.stem[1] + config.stem[0], config.stem[0], 1, fk);
  w.head = nn::make_conv(b.child("head"), config.stem[0], 1, 3);
  // A near-flat 0.5 start: with full-gain head noise, early updates tend to
  // push every pixel below the clip, where the gradient is zero.
  for (auto& v : w.head.weight.mutable_data()) v *= T(0.1);
  for (auto& v : w.head.bias.mutable_data()) v = T(0.5);
  return w;
}

template <typename T>
EncoderFeatures<T> encoder_forward(const Tensor<T>& x, const ModelWeights<T>& w) {
  if (x.rank() != 4 || x.dim(1) != w.config.in_channels) {
    throw ShapeError("encoder: expected [N," + std::to_string(w.config.in_channels) + ",H,W], got " +
                     shape_str(x.shape()));
  }
  if (x.dim(2) < 32 || x.dim(3) < 32 || x.dim(2) % 32 || x.dim(3) % 32) {
    throw ShapeError("encoder: input " + shape_str(x.shape()) + " does not survive 5 halvings (sides must be multiples of 32)");
  }
  EncoderFeatures<T> f;
  f.d1 = nn::conv_block(x, w.stem1);
  f.d2 = nn::conv_block(f.d1, w.stem2);
  Tensor<T> h = nn::channel_norm(nn::conv(f.d2, w.embed), w.embed_norm);
  for (std::size_t s = 0; s < 4; ++s) {
    if (s > 0) h = nn::conv(nn::channel_norm(ops::space_to_depth2(h), w.merges[s - 1].norm), w.merges[s - 1].reduce);
    for (const auto& blk : w.stages[s]) h = nn::swin_block(h, blk);
    f.f[s] = nn::channel_norm(h, w.stage_norms[s]);
  }
  return f;
}

template <typename T>
Tensor<T> aeal_stack_forward(const Tensor<T>& f3, const Tensor<T>& f4, const ModelWeights<T>& w) {
  if (f3.rank() != 4 || f4.rank() != 4 || f3.dim(2) != 2 * f4.dim(2) || f3.dim(3) != 2 * f4.dim(3)) {
    throw ShapeError("aeal stack: F3 " + shape_str(f3.shape()) + " must be twice the resolution of F4 " +
                     shape_str(f4.shape()));
  }
  Tensor<T> fc = nn::residual_block(nn::conv(f4, w.context_proj), w.context_res);
  const Tensor<T> guided = nn::conv(ops::concat<T>({ops::upsample_nearest(f4, 2), f3}, 1), w.appearance_proj);
  const Tensor<T> fa = nn::conv(nn::residual_block(guided, w.appearance_res), w.appearance_down);
  for (const auto& blk : w.aeal) fc = nn::aeal_block(fc, fa, blk);
  return fc;
}

template <typename T>
Tensor<T> decoder_forward_raw(const EncoderFeatures<T>& feats, const Tensor<T>& f_rc, const ModelWeights<T>& w) {
  Tensor<T> x = nn::conv(ops::concat<T>({f_rc, feats.f[3]}, 1), w.decoder_in);
  for (const auto& blk : w.decoder_stages[3]) x = nn::swin_block(x, blk);
  for (int lvl = 2; lvl >= 0; --lvl) {
    x = nn::conv(ops::concat<T>({ops::upsample_nearest(x, 2), feats.f[lvl]}, 1), w.decoder_fuse[lvl]);
    for (const auto& blk : w.decoder_stages[lvl]) x = nn::swin_block(x, blk);
  }
  x = nn::conv_block(ops::concat<T>({ops::upsample_nearest(x, 2), feats.d2}, 1), w.detail2);
  x = nn::conv_block(ops::concat<T>({ops::upsample_nearest(x, 2), feats.d1}, 1), w.detail1);
  return nn::conv(x, w.head);
}

template <typename T>
Tensor<T> decoder_forward(const EncoderFeatures<T>& feats, const Tensor<T>& f_rc, const ModelWeights<T>& w) {
  return ops::clamp(decoder_forward_raw(feats, f_rc, w), T(0), T(1));
}

template <typename T>
Tensor<T> trimap_one_hot(const Tensor<T>& trimap) {
  if (trimap.rank() != 4 || trimap.dim(1) != 1) throw ShapeError("trimap must be [N,1,H,W], got " + shape_str(trimap.shape()));
  const Index N = trimap.dim(0), HW = trimap.dim(2) * trimap.dim(3);
  Tensor<T> out({N, 3, trimap.dim(2), trimap.dim(3)});
  auto o = out.mutable_data();
  const auto t = trimap.data();
  for (Index n = 0; n < N; ++n)
    for (Index i = 0; i < HW; ++i) {
      const T v = t[static_cast<std::size_t>(n * HW + i)];
      const Index cls = v < T(0.25) ? 0 : (v > T(0.75) ? 2 : 1);
      o[static_cast<std::size_t>((n * 3 + cls) * HW + i)] = T(1);
    }
  return out;
}

template <typename T>
ForwardResult<T> model_forward_full(const Tensor<T>& image, const Tensor<T>& trimap, const ModelWeights<T>& w) {
  if (image.rank() != 4 || image.dim(1) != 3) throw ShapeError("image must be [N,3,H,W], got " + shape_str(image.shape()));
  if (trimap.rank() != 4 || trimap.dim(0) != image.dim(0) || trimap.dim(2) != image.dim(2) ||
      trimap.dim(3) != image.dim(3)) {
    throw ShapeError("trimap " + shape_str(trimap.shape()) + " does not match image " + shape_str(image.shape()));
  }
  const Index H = image.dim(2), W = image.dim(3);
  if (H < 32 || W < 32) throw ShapeError("input " + shape_str(image.shape()) + " is smaller than 32x32");
  Tensor<T> x = ops::concat<T>({image, trimap_one_hot(trimap)}, 1);
  const Index ph = round_up(H, 32) - H, pw = round_up(W, 32) - W;
  if (ph || pw) x = ops::reflect_pad(x, {0, ph, 0, pw});
  const EncoderFeatures<T> feats = encoder_forward(x, w);
  const Tensor<T> f_rc = aeal_stack_forward(feats.f[2], feats.f[3], w);
  ForwardResult<T> r;
  r.raw = decoder_forward_raw(feats, f_rc, w);
  if (ph || pw) r.raw = ops::crop(r.raw, 0, 0, H, W);
  r.alpha = ops::clamp(r.raw, T(0), T(1));
  return r;
}

template <typename T>
Tensor<T> model_forward(const Tensor<T>& image, const Tensor<T>& trimap, const ModelWeights<T>& w) {
  return model_forward_full(image, trimap, w).alpha;
}

#define AEM_MODEL_INSTANTIATE(T)                                                                       \
  template ModelWeights<T> build_model<T>(const AEMatterConfig&, std::uint64_t);                      \
  template EncoderFeatures<T> encoder_forward(const Tensor<T>&, const ModelWeights<T>&);               \
  template Tensor<T> aeal_stack_forward(const Tensor<T>&, const Tensor<T>&, const ModelWeights<T>&);   \
  template Tensor<T> decoder_forward_raw(const EncoderFeatures<T>&, const Tensor<T>&, const ModelWeights<T>&); \
  template Tensor<T> decoder_forward(const EncoderFeatures<T>&, const Tensor<T>&, const ModelWeights<T>&); \
  template Tensor<T> trimap_one_hot(const Tensor<T>&);                                                 \
  template ForwardResult<T> model_forward_full(const Tensor<T>&, const Tensor<T>&, const ModelWeights<T>&); \
  template Tensor<T> model_forward(const Tensor<T>&, const Tensor<T>&, const ModelWeights<T>&);

AEM_MODEL_INSTANTIATE(float)
AEM_MODEL_INSTANTIATE(double)

}  // namespace aem
