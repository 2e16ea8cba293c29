#pragma once

#include <vector>

#include "aem/ops.hpp"

namespace aem::loss {

/// Unknown-region mask of a trimap tensor [N,1,H,W] holding codes in [0,1]
/// (unknown is anything in [0.25, 0.75], matching the model's decoding).
template <typename T>
struct TrimapMask {
  Tensor<T> mask;  // [N,1,H,W], 1 on unknown pixels else 0
  Index count = 0;

  static TrimapMask from_trimap(const Tensor<T>& trimap);
};

struct CharbonnierConfig {
  double epsilon = 1e-6;
};

struct LossConfig {
  CharbonnierConfig charbonnier;
  Index pyramid_levels = 4;
};

/// Mean |alpha - gt| over every pixel.
template <typename T>
Tensor<T> l1_loss(const Tensor<T>& alpha, const Tensor<T>& gt);

/// (1/|U|) * sum over unknown pixels of sqrt((alpha - gt)^2 + eps^2).
/// Throws std::invalid_argument for an empty mask or eps <= 0.
template <typename T>
Tensor<T> charbonnier_loss(const Tensor<T>& alpha, const Tensor<T>& gt, const TrimapMask<T>& mask,
                           double epsilon = 1e-6);

/// Levels L_0..L_{J-1} (finest first) followed by the coarsest Gaussian level.
template <typename T>
using PyramidLevels = std::vector<Tensor<T>>;

/// Separable [1,4,6,4,1]/16 blur with reflect borders, per channel.
template <typename T>
Tensor<T> binomial_blur(const Tensor<T>& x);
/// Blur, then keep even rows and columns: ceil(H/2) x ceil(W/2).
template <typename T>
Tensor<T> pyr_down(const Tensor<T>& x);
/// Nearest x2, blur, crop to height x width.
template <typename T>
Tensor<T> pyr_up(const Tensor<T>& x, Index height, Index width);

/// Throws ShapeError when a side is below 2^levels or levels < 1.
template <typename T>
PyramidLevels<T> build_laplacian_pyramid(const Tensor<T>& x, Index levels);
template <typename T>
Tensor<T> reconstruct_pyramid(const PyramidLevels<T>& levels);

/// sum_j 2^j * mean|L_j(alpha) - L_j(gt)|, j = 0 the finest level.
template <typename T>
Tensor<T> laplacian_loss(const Tensor<T>& alpha, const Tensor<T>& gt, Index levels = 4);

template <typename T>
struct LossBreakdown {
  Tensor<T> total, l1, charbonnier, laplacian;
};

/// Unweighted sum l1 + charbonnier + laplacian.
template <typename T>
LossBreakdown<T> total_loss(const Tensor<T>& alpha, const Tensor<T>& gt, const TrimapMask<T>& mask,
                            const LossConfig& cfg = {});

}  // namespace aem::loss
