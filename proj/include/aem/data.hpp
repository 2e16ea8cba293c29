#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "aem/image.hpp"

namespace aem::data {

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ImageIOError : public DataError {
 public:
  using DataError::DataError;
};

/// One training / evaluation sample. `fg` and `bg` are empty for samples read
/// back from disk, where only the composite is stored.
struct CompositeSample {
  RGBImage image, fg, bg;
  Plane alpha;
  Trimap trimap;

  bool has_layers() const { return !fg.data.empty() && !bg.data.empty(); }
  bool operator==(const CompositeSample&) const = default;
};

/// I = alpha * F + (1 - alpha) * B per pixel and channel.
RGBImage composite(const RGBImage& fg, const RGBImage& bg, const Plane& alpha);

/// Binary erosion by a Euclidean disk of radius d: a pixel survives iff every
/// in-image pixel within distance d is also set.
std::vector<std::uint8_t> erode_disk(const std::vector<std::uint8_t>& mask, Index height, Index width, double d);

/// FG = erode(alpha >= 1 - 1e-6, d), BG = erode(alpha <= 1e-6, d), rest unknown.
Trimap make_trimap(const Plane& alpha, double d);

enum class ShapeFamily { disk, ring, blob, strokes, gradient };

struct SynthSpec {
  std::uint64_t seed = 0;
  Index canvas = 64;
  std::vector<ShapeFamily> families{ShapeFamily::disk, ShapeFamily::ring, ShapeFamily::blob, ShapeFamily::strokes,
                                    ShapeFamily::gradient};
  Index min_shapes = 1, max_shapes = 3;
  Index supersample = 4;
  double trimap_radius = 5;
  // Unknown-fraction window a sample must land in at trimap_radius.
  double min_unknown = 0.01, max_unknown = 0.60;
  Index max_retries = 64;
};

/// Sample `index` of the dataset defined by `spec`; depends only on (spec, index).
CompositeSample synth_sample(const SynthSpec& spec, Index index);
std::vector<CompositeSample> synth_dataset(const SynthSpec& spec, Index n);

/// Square crop of all fields. When the trimap has unknown pixels the crop is
/// centred on one of them, preferring pixels whose centred crop fits.
/// Throws std::invalid_argument when size exceeds the canvas.
CompositeSample sample_patch(const CompositeSample& s, Index size, std::mt19937_64& rng);
CompositeSample crop_sample(const CompositeSample& s, Index top, Index left, Index height, Index width);

struct AugmentConfig {
  double flip_probability = 0.5;
  double scale_min = 0.75, scale_max = 1.25;
  double brightness = 0.10;
};

CompositeSample flip_sample(const CompositeSample& s);
/// Random flip, rescale (then random re-crop or edge pad back to the original
/// size) and brightness jitter. With layers present the jitter scales F and B
/// and the composite is rebuilt, so the blend invariant survives.
CompositeSample augment(const CompositeSample& s, const AugmentConfig& cfg, std::mt19937_64& rng);

// PNG I/O (8-bit). Errors raise ImageIOError with the path in the message.
void save_png(const std::filesystem::path& path, const RGBImage& img);
void save_png(const std::filesystem::path& path, const Plane& gray);
void save_png(const std::filesystem::path& path, const Trimap& trimap);
RGBImage load_png_rgb(const std::filesystem::path& path);
Plane load_png_gray(const std::filesystem::path& path);
/// Throws ImageIOError if any value is not 0, 128 or 255.
Trimap load_png_trimap(const std::filesystem::path& path);

struct ManifestRow {
  std::string id;
  Index width = 0, height = 0;
  double unknown_fraction = 0;
};

/// Writes <root>/{image,alpha,trimap}/NNNN.png and <root>/manifest.csv.
void write_dataset(const std::filesystem::path& root, const std::vector<CompositeSample>& samples);
std::vector<ManifestRow> read_manifest(const std::filesystem::path& root);
std::vector<CompositeSample> read_dataset(const std::filesystem::path& root);

std::string sample_id(Index i);

}  // namespace aem::data
