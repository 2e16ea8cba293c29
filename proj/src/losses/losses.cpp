#include "aem/losses.hpp"

#include <stdexcept>

namespace aem::loss {

namespace {

template <typename T>
void require_same(const Tensor<T>& a, const Tensor<T>& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(what) + ": shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()) + " differ");
  }
}

// Reflection that folds repeatedly, so any pad works even on 1- and 2-pixel maps.
Index reflect(Index i, Index n) {
  if (n == 1) return 0;
  const Index period = 2 * (n - 1);
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - i;
}

template <typename T>
Tensor<T> reflect_pad_any(const Tensor<T>& x, Index pad) {
  const Index planes = x.numel() / (x.dim(-2) * x.dim(-1)), H = x.dim(-2), W = x.dim(-1);
  const Index Ho = H + 2 * pad, Wo = W + 2 * pad;
  auto idx = std::make_shared<std::vector<Index>>();
  idx->reserve(static_cast<std::size_t>(planes * Ho * Wo));
  for (Index p = 0; p < planes; ++p)
    for (Index y = 0; y < Ho; ++y)
      for (Index c = 0; c < Wo; ++c) idx->push_back((p * H + reflect(y - pad, H)) * W + reflect(c - pad, W));
  Shape s = x.shape();
  s[s.size() - 2] = Ho;
  s[s.size() - 1] = Wo;
  return ops::gather(x, s, std::shared_ptr<const std::vector<Index>>(idx));
}

template <typename T>
Tensor<T> blur_kernel() {
  const double k[5] = {1, 4, 6, 4, 1};
  Tensor<T> w({1, 1, 5, 5});
  for (Index i = 0; i < 5; ++i)
    for (Index j = 0; j < 5; ++j) w.mutable_data()[static_cast<std::size_t>(i * 5 + j)] = static_cast<T>(k[i] * k[j] / 256.0);
  return w;
}

template <typename T>
Tensor<T> blur_impl(const Tensor<T>& x, Index stride) {
  if (x.rank() != 4) throw ShapeError("pyramid: expected [N,C,H,W], got " + shape_str(x.shape()));
  const Index N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  Tensor<T> planes = ops::reshape(x, {N * C, 1, H, W});
  static const Tensor<T> kernel = blur_kernel<T>();
  Tensor<T> v = ops::conv2d(reflect_pad_any(planes, 2), kernel, Tensor<T>(), 1, 0);
  if (stride == 2) {
    const Index Ho = (H + 1) / 2, Wo = (W + 1) / 2;
    auto idx = std::make_shared<std::vector<Index>>();
    idx->reserve(static_cast<std::size_t>(N * C * Ho * Wo));
    for (Index p = 0; p < N * C; ++p)
      for (Index y = 0; y < Ho; ++y)
        for (Index c = 0; c < Wo; ++c) idx->push_back((p * H + 2 * y) * W + 2 * c);
    v = ops::gather(v, {N * C, 1, Ho, Wo}, std::shared_ptr<const std::vector<Index>>(idx));
    return ops::reshape(v, {N, C, Ho, Wo});
  }
  return ops::reshape(v, {N, C, H, W});
}

}  // namespace

template <typename T>
TrimapMask<T> TrimapMask<T>::from_trimap(const Tensor<T>& trimap) {
  if (trimap.rank() != 4 || trimap.dim(1) != 1) throw ShapeError("trimap must be [N,1,H,W], got " + shape_str(trimap.shape()));
  TrimapMask<T> m;
  m.mask = Tensor<T>(trimap.shape());
  auto d = m.mask.mutable_data();
  for (Index i = 0; i < trimap.numel(); ++i) {
    const T v = trimap.at(i);
    if (v >= T(0.25) && v <= T(0.75)) {
      d[static_cast<std::size_t>(i)] = T(1);
      ++m.count;
    }
  }
  return m;
}

template <typename T>
Tensor<T> l1_loss(const Tensor<T>& alpha, const Tensor<T>& gt) {
  require_same(alpha, gt, "l1_loss");
  return ops::mean(ops::abs(ops::sub(alpha, gt)));
}

template <typename T>
Tensor<T> charbonnier_loss(const Tensor<T>& alpha, const Tensor<T>& gt, const TrimapMask<T>& mask, double epsilon) {
  require_same(alpha, gt, "charbonnier_loss");
  require_same(alpha, mask.mask, "charbonnier_loss mask");
  if (!(epsilon > 0)) throw std::invalid_argument("charbonnier_loss: epsilon must be positive");
  if (mask.count < 1) throw std::invalid_argument("charbonnier_loss: the unknown region is empty");
  const Tensor<T> d = ops::sub(alpha, gt);
  const Tensor<T> r = ops::sqrt(ops::add_scalar(ops::square(d), static_cast<T>(epsilon * epsilon)));
  return ops::mul_scalar(ops::sum(ops::mul(r, mask.mask)), static_cast<T>(1.0 / static_cast<double>(mask.count)));
}

template <typename T>
Tensor<T> binomial_blur(const Tensor<T>& x) {
  return blur_impl(x, 1);
}

template <typename T>
Tensor<T> pyr_down(const Tensor<T>& x) {
  return blur_impl(x, 2);
}

template <typename T>
Tensor<T> pyr_up(const Tensor<T>& x, Index height, Index width) {
  if (height > 2 * x.dim(2) || width > 2 * x.dim(3)) throw ShapeError("pyr_up: target larger than twice the input");
  return ops::crop(binomial_blur(ops::upsample_nearest(x, 2)), 0, 0, height, width);
}

template <typename T>
PyramidLevels<T> build_laplacian_pyramid(const Tensor<T>& x, Index levels) {
  if (levels < 1) throw ShapeError("pyramid: levels must be >= 1");
  if (x.rank() != 4) throw ShapeError("pyramid: expected [N,C,H,W], got " + shape_str(x.shape()));
  if (x.dim(2) < (Index{1} << levels) || x.dim(3) < (Index{1} << levels)) {
    throw ShapeError("pyramid: " + shape_str(x.shape()) + " is too small for " + std::to_string(levels) + " levels");
  }
  PyramidLevels<T> out;
  Tensor<T> g = x;
  for (Index j = 0; j < levels; ++j) {
    Tensor<T> next = pyr_down(g);
    out.push_back(ops::sub(g, pyr_up(next, g.dim(2), g.dim(3))));
    g = next;
  }
  out.push_back(g);
  return out;
}

template <typename T>
Tensor<T> reconstruct_pyramid(const PyramidLevels<T>& levels) {
  if (levels.size() < 2) throw ShapeError("pyramid: need at least one band-pass level and the residual");
  Tensor<T> g = levels.back();
  for (std::size_t j = levels.size() - 1; j-- > 0;)
    g = ops::add(levels[j], pyr_up(g, levels[j].dim(2), levels[j].dim(3)));
  return g;
}

template <typename T>
Tensor<T> laplacian_loss(const Tensor<T>& alpha, const Tensor<T>& gt, Index levels) {
  require_same(alpha, gt, "laplacian_loss");
  const auto pa = build_laplacian_pyramid(alpha, levels);
  const auto pg = build_laplacian_pyramid(gt, levels);
  Tensor<T> total;
  for (Index j = 0; j < levels; ++j) {
    Tensor<T> term = ops::mul_scalar(ops::mean(ops::abs(ops::sub(pa[j], pg[j]))), static_cast<T>(Index{1} << j));
    total = total.defined() ? ops::add(total, term) : term;
  }
  return total;
}

template <typename T>
LossBreakdown<T> total_loss(const Tensor<T>& alpha, const Tensor<T>& gt, const TrimapMask<T>& mask,
                            const LossConfig& cfg) {
  LossBreakdown<T> b;
  b.l1 = l1_loss(alpha, gt);
  b.charbonnier = charbonnier_loss(alpha, gt, mask, cfg.charbonnier.epsilon);
  b.laplacian = laplacian_loss(alpha, gt, cfg.pyramid_levels);
  b.total = ops::add(ops::add(b.l1, b.charbonnier), b.laplacian);
  return b;
}

#define AEM_LOSSES_INSTANTIATE(T)                                                                          \
  template struct TrimapMask<T>;                                                                           \
  template Tensor<T> l1_loss(const Tensor<T>&, const Tensor<T>&);                                          \
  template Tensor<T> charbonnier_loss(const Tensor<T>&, const Tensor<T>&, const TrimapMask<T>&, double);   \
  template Tensor<T> binomial_blur(const Tensor<T>&);                                                      \
  template Tensor<T> pyr_down(const Tensor<T>&);                                                           \
  template Tensor<T> pyr_up(const Tensor<T>&, Index, Index);                                               \
  template PyramidLevels<T> build_laplacian_pyramid(const Tensor<T>&, Index);                              \
  template Tensor<T> reconstruct_pyramid(const PyramidLevels<T>&);                                         \
  template Tensor<T> laplacian_loss(const Tensor<T>&, const Tensor<T>&, Index);                            \
  template LossBreakdown<T> total_loss(const Tensor<T>&, const Tensor<T>&, const TrimapMask<T>&, const LossConfig&);

AEM_LOSSES_INSTANTIATE(float)
AEM_LOSSES_INSTANTIATE(double)

}  // namespace aem::loss
