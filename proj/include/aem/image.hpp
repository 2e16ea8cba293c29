#pragma once

#include <cstdint>
#include <vector>

#include "aem/tensor.hpp"

namespace aem {

/// Single-channel float image, row-major.
struct Plane {
  Index height = 0, width = 0;
  std::vector<float> data;

  Plane() = default;
  Plane(Index h, Index w, float fill = 0.f) : height(h), width(w), data(static_cast<std::size_t>(h * w), fill) {}

  float& at(Index y, Index x) { return data[static_cast<std::size_t>(y * width + x)]; }
  float at(Index y, Index x) const { return data[static_cast<std::size_t>(y * width + x)]; }
  Index size() const { return height * width; }
  bool operator==(const Plane&) const = default;
};

/// Planar RGB float image (all of R, then G, then B).
struct RGBImage {
  Index height = 0, width = 0;
  std::vector<float> data;

  RGBImage() = default;
  RGBImage(Index h, Index w, float fill = 0.f)
      : height(h), width(w), data(static_cast<std::size_t>(3 * h * w), fill) {}

  float& at(Index c, Index y, Index x) { return data[static_cast<std::size_t>((c * height + y) * width + x)]; }
  float at(Index c, Index y, Index x) const { return data[static_cast<std::size_t>((c * height + y) * width + x)]; }
  bool operator==(const RGBImage&) const = default;
};

namespace trimap_code {
inline constexpr std::uint8_t background = 0;
inline constexpr std::uint8_t unknown = 128;
inline constexpr std::uint8_t foreground = 255;
}  // namespace trimap_code

struct Trimap {
  Index height = 0, width = 0;
  std::vector<std::uint8_t> labels;

  Trimap() = default;
  Trimap(Index h, Index w, std::uint8_t fill = trimap_code::unknown)
      : height(h), width(w), labels(static_cast<std::size_t>(h * w), fill) {}

  std::uint8_t& at(Index y, Index x) { return labels[static_cast<std::size_t>(y * width + x)]; }
  std::uint8_t at(Index y, Index x) const { return labels[static_cast<std::size_t>(y * width + x)]; }
  bool unknown(Index i) const { return labels[static_cast<std::size_t>(i)] == trimap_code::unknown; }
  Index unknown_count() const {
    Index n = 0;
    for (auto v : labels) n += v == trimap_code::unknown;
    return n;
  }
  bool operator==(const Trimap&) const = default;
};

/// [1,1,H,W] and [1,3,H,W] tensor views (copies) of the image types.
template <typename T>
Tensor<T> to_tensor(const Plane& p);
template <typename T>
Tensor<T> to_tensor(const RGBImage& img);
/// Trimap codes scaled to [0,1] (0, 128/255, 1), as the model expects.
template <typename T>
Tensor<T> to_tensor(const Trimap& t);

/// Stacks same-sized images along the batch axis.
template <typename T>
Tensor<T> stack_planes(const std::vector<Plane>& planes);
template <typename T>
Tensor<T> stack_images(const std::vector<RGBImage>& images);
template <typename T>
Tensor<T> stack_trimaps(const std::vector<Trimap>& trimaps);

/// Batch item n, channel 0 of an [N,C,H,W] tensor.
template <typename T>
Plane plane_from_tensor(const Tensor<T>& t, Index n = 0);

}  // namespace aem
