#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "aem/layers.hpp"

namespace aem {

struct AEALConfig {
  Index count = 3;
  Index context_dim = 128;
  Index band = 4;
  Index heads = 4;
};

struct AEMatterConfig {
  std::array<Index, 2> stem{16, 32};
  std::array<Index, 4> stages{32, 64, 128, 256};
  std::array<Index, 4> blocks{2, 2, 2, 2};
  std::array<Index, 4> heads{1, 2, 4, 8};
  Index window = 4;
  AEALConfig aeal;
  Index decoder_blocks = 1;
  Index in_channels = 6;
  // Kernel of the second conv in every stem / detail-fusion conv block.
  Index fusion_kernel = 3;
  Index aeal_res_kernel = 3;

  /// Throws std::invalid_argument on an inconsistent config.
  void validate() const;

  static AEMatterConfig toy() { return {}; }
  /// Every channel width <= 16; for finite-difference checks on 32x32 inputs.
  static AEMatterConfig reduced();
  /// Under 1M parameters; the overfit and study default.
  static AEMatterConfig small();
};

bool operator==(const AEMatterConfig& a, const AEMatterConfig& b);

template <typename T>
struct EncoderFeatures {
  Tensor<T> d1, d2;              // stem: full and 1/2 resolution
  std::array<Tensor<T>, 4> f;    // stages: 1/4 .. 1/32
};

template <typename T>
struct PatchMergeParams {
  nn::LayerNormParams<T> norm;
  nn::Conv2dParams<T> reduce;  // 1x1, 4C -> 2C
};

/// All weights of one network. The parameter set owns the tensors; the
/// structured fields alias the same storage.
template <typename T>
struct ModelWeights {
  AEMatterConfig config;
  ParameterSet<T> params;

  nn::ConvBlockParams<T> stem1, stem2;
  nn::Conv2dParams<T> embed;
  nn::LayerNormParams<T> embed_norm;
  std::array<std::vector<nn::SwinBlockParams<T>>, 4> stages;
  std::array<PatchMergeParams<T>, 3> merges;
  std::array<nn::LayerNormParams<T>, 4> stage_norms;

  nn::Conv2dParams<T> context_proj;
  nn::ResidualBlockParams<T> context_res;
  nn::Conv2dParams<T> appearance_proj;
  nn::ResidualBlockParams<T> appearance_res;
  nn::Conv2dParams<T> appearance_down;
  std::vector<nn::AEALBlockParams<T>> aeal;

  nn::Conv2dParams<T> decoder_in;
  std::array<std::vector<nn::SwinBlockParams<T>>, 4> decoder_stages;  // index = encoder level
  std::array<nn::Conv2dParams<T>, 3> decoder_fuse;                    // into levels 0..2
  nn::ConvBlockParams<T> detail2, detail1;
  nn::Conv2dParams<T> head;

  ModelWeights() = default;
  ModelWeights(const ModelWeights&) = delete;
  ModelWeights& operator=(const ModelWeights&) = delete;
  ModelWeights(ModelWeights&&) = default;
  ModelWeights& operator=(ModelWeights&&) = default;
};

template <typename T>
ModelWeights<T> build_model(const AEMatterConfig& config, std::uint64_t seed);

/// x: [N, in_channels, H, W] with H, W positive multiples of 32.
template <typename T>
EncoderFeatures<T> encoder_forward(const Tensor<T>& x, const ModelWeights<T>& w);

/// F_c from F4, F_a from F3 under F4 guidance, then the AEAL cascade.
template <typename T>
Tensor<T> aeal_stack_forward(const Tensor<T>& f3, const Tensor<T>& f4, const ModelWeights<T>& w);

/// Unclipped head output at input resolution.
template <typename T>
Tensor<T> decoder_forward_raw(const EncoderFeatures<T>& feats, const Tensor<T>& f_rc, const ModelWeights<T>& w);
template <typename T>
Tensor<T> decoder_forward(const EncoderFeatures<T>& feats, const Tensor<T>& f_rc, const ModelWeights<T>& w);

/// Trimap codes as a [N,1,H,W] map in [0,1]: < 0.25 background, > 0.75
/// foreground, anything else unknown (so 0, 128/255, 1 all decode). Returns
/// the [N,3,H,W] one-hot ordered background, unknown, foreground.
template <typename T>
Tensor<T> trimap_one_hot(const Tensor<T>& trimap);

template <typename T>
struct ForwardResult {
  Tensor<T> alpha;  // clipped to [0, 1]
  Tensor<T> raw;    // pre-clip head output
};

/// image [N,3,H,W] in [0,1], trimap [N,1,H,W]. Sides must be >= 32; other
/// sides are reflect-padded to the next multiple of 32 and cropped back.
template <typename T>
ForwardResult<T> model_forward_full(const Tensor<T>& image, const Tensor<T>& trimap, const ModelWeights<T>& w);
template <typename T>
Tensor<T> model_forward(const Tensor<T>& image, const Tensor<T>& trimap, const ModelWeights<T>& w);

// ---------------------------------------------------------------------------
// Checkpoints.
//
// Layout, little-endian: "AEMT", u32 version, u64 tensor count, then per
// tensor u32 name length, name bytes, u32 rank, u64 dims[rank], u8 dtype
// (1 = f32, 2 = f64), raw values. Optional trailing sections follow until end
// of file: u32 tag length, tag bytes, u64 payload length, payload.

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct CheckpointSection {
  std::string tag;
  std::vector<std::uint8_t> payload;
  bool operator==(const CheckpointSection&) const = default;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Tensors in a checkpoint body, as stored.
struct StoredTensor {
  std::string name;
  Shape shape;
  std::uint8_t dtype = 1;
  std::vector<double> values;
};

template <typename T>
std::vector<std::uint8_t> encode_tensors(const std::vector<std::pair<std::string, Tensor<T>>>& tensors);
/// Parses a tensor list as written by encode_tensors, advancing `offset`.
std::vector<StoredTensor> decode_tensors(const std::vector<std::uint8_t>& bytes, std::size_t& offset);

template <typename T>
std::vector<std::uint8_t> serialize_checkpoint(const ParameterSet<T>& params,
                                               const std::vector<CheckpointSection>& sections = {});
/// Copies stored values into `params`. The stored name set and shapes must
/// match exactly; values convert between f32 and f64 as needed.
template <typename T>
std::vector<CheckpointSection> deserialize_checkpoint(const std::vector<std::uint8_t>& bytes, ParameterSet<T>& params);

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const ParameterSet<T>& params,
                     const std::vector<CheckpointSection>& sections = {});
template <typename T>
std::vector<CheckpointSection> load_checkpoint(const std::filesystem::path& path, ParameterSet<T>& params);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes);

}  // namespace aem
