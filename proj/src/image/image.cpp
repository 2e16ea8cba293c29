#include "aem/image.hpp"

namespace aem {

namespace {

template <typename T, typename Item, typename Fill>
Tensor<T> stack(const std::vector<Item>& items, Index channels, Fill fill) {
  if (items.empty()) throw ShapeError("cannot stack an empty batch");
  const Index H = items[0].height, W = items[0].width;
  Tensor<T> out({static_cast<Index>(items.size()), channels, H, W});
  auto o = out.mutable_data();
  for (std::size_t n = 0; n < items.size(); ++n) {
    if (items[n].height != H || items[n].width != W) throw ShapeError("batch items differ in size");
    fill(items[n], o.data() + n * static_cast<std::size_t>(channels * H * W));
  }
  return out;
}

}  // namespace

template <typename T>
Tensor<T> stack_planes(const std::vector<Plane>& planes) {
  return stack<T>(planes, 1, [](const Plane& p, T* dst) {
    for (std::size_t i = 0; i < p.data.size(); ++i) dst[i] = static_cast<T>(p.data[i]);
  });
}

template <typename T>
Tensor<T> stack_images(const std::vector<RGBImage>& images) {
  return stack<T>(images, 3, [](const RGBImage& p, T* dst) {
    for (std::size_t i = 0; i < p.data.size(); ++i) dst[i] = static_cast<T>(p.data[i]);
  });
}

template <typename T>
Tensor<T> stack_trimaps(const std::vector<Trimap>& trimaps) {
  return stack<T>(trimaps, 1, [](const Trimap& p, T* dst) {
    for (std::size_t i = 0; i < p.labels.size(); ++i) dst[i] = static_cast<T>(p.labels[i]) / T(255);
  });
}

template <typename T>
Tensor<T> to_tensor(const Plane& p) {
  return stack_planes<T>({p});
}
template <typename T>
Tensor<T> to_tensor(const RGBImage& img) {
  return stack_images<T>({img});
}
template <typename T>
Tensor<T> to_tensor(const Trimap& t) {
  return stack_trimaps<T>({t});
}

template <typename T>
Plane plane_from_tensor(const Tensor<T>& t, Index n) {
  if (t.rank() != 4 || n < 0 || n >= t.dim(0)) throw ShapeError("plane_from_tensor: bad tensor " + shape_str(t.shape()));
  Plane p(t.dim(2), t.dim(3));
  const Index off = n * t.dim(1) * p.size();
  for (Index i = 0; i < p.size(); ++i) p.data[static_cast<std::size_t>(i)] = static_cast<float>(t.at(off + i));
  return p;
}

#define AEM_IMAGE_INSTANTIATE(T)                                     \
  template Tensor<T> to_tensor<T>(const Plane&);                    \
  template Tensor<T> to_tensor<T>(const RGBImage&);                 \
  template Tensor<T> to_tensor<T>(const Trimap&);                   \
  template Tensor<T> stack_planes<T>(const std::vector<Plane>&);    \
  template Tensor<T> stack_images<T>(const std::vector<RGBImage>&); \
  template Tensor<T> stack_trimaps<T>(const std::vector<Trimap>&);  \
  template Plane plane_from_tensor(const Tensor<T>&, Index);

AEM_IMAGE_INSTANTIATE(float)
AEM_IMAGE_INSTANTIATE(double)

}  // namespace aem
