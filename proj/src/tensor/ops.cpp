#include "aem/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "gemm.hpp"

namespace aem::ops {
namespace {

using detail::Node;
using detail::NodePtr;

template <typename T>
bool recording(std::initializer_list<const Tensor<T>*> inputs) {
  if (active_tape<T>() == nullptr) return false;
  for (const Tensor<T>* t : inputs)
    if (t->defined() && t->requires_grad()) return true;
  return false;
}

// Registers `out` on the active tape. `fn` runs during backward with out's grad filled.
template <typename T, typename Fn>
void record(std::string_view op, Tensor<T>& out, std::initializer_list<const Tensor<T>*> inputs, Fn&& fn) {
  if (!recording<T>(inputs)) return;
  out.node()->requires_grad = true;
  std::vector<NodePtr<T>> ins;
  for (const Tensor<T>* t : inputs)
    if (t->defined()) ins.push_back(t->node());
  active_tape<T>()->record(op, std::move(ins), out.node(), std::forward<Fn>(fn));
}

template <typename T>
bool wants(const Tensor<T>& t) {
  return t.defined() && t.requires_grad();
}

template <typename T>
std::vector<T>& gbuf(const Tensor<T>& t) {
  return t.node()->grad_buffer();
}

int norm_axis(int axis, int rank) {
  if (axis < 0) axis += rank;
  if (axis < 0 || axis >= rank) throw ShapeError("axis " + std::to_string(axis) + " out of range");
  return axis;
}

struct AxisSplit {
  Index outer, len, inner;
};

AxisSplit split_at(const Shape& s, int axis) {
  AxisSplit r{1, s[static_cast<std::size_t>(axis)], 1};
  for (int i = 0; i < axis; ++i) r.outer *= s[static_cast<std::size_t>(i)];
  for (std::size_t i = static_cast<std::size_t>(axis) + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

bool broadcastable(const Shape& a, const Shape& b) {
  if (shape_numel(b) == 1) return true;
  std::size_t s = 0;
  while (s < b.size() && b[s] == 1) ++s;
  const std::size_t nb = b.size() - s;
  if (nb > a.size()) return false;
  for (std::size_t k = 0; k < nb; ++k)
    if (b[s + k] != a[a.size() - nb + k]) return false;
  return true;
}

template <typename T, typename F, typename DA, typename DB>
Tensor<T> binary(std::string_view name, const Tensor<T>& a, const Tensor<T>& b, F f, DA da, DB db) {
  if (!broadcastable(a.shape(), b.shape())) {
    throw ShapeError(std::string(name) + ": cannot broadcast " + shape_str(b.shape()) + " onto " +
                     shape_str(a.shape()));
  }
  Tensor<T> out(a.shape());
  const Index n = a.numel(), nb = b.numel();
  const T* pa = a.data().data();
  const T* pb = b.data().data();
  T* po = out.mutable_data().data();
  for (Index i = 0; i < n; ++i) po[i] = f(pa[i], pb[i % nb]);
  record(name, out, {&a, &b}, [a, b, out, n, nb, da, db] {
    const T* g = out.grad().data();
    const T* pa = a.data().data();
    const T* pb = b.data().data();
    if (wants(a)) {
      T* ga = gbuf(a).data();
      for (Index i = 0; i < n; ++i) ga[i] += da(pa[i], pb[i % nb], g[i]);
    }
    if (wants(b)) {
      T* gb = gbuf(b).data();
      for (Index i = 0; i < n; ++i) gb[i % nb] += db(pa[i], pb[i % nb], g[i]);
    }
  });
  return out;
}

// df(x, y) is dy/dx given input x and output y.
template <typename T, typename F, typename DF>
Tensor<T> unary(std::string_view name, const Tensor<T>& x, F f, DF df) {
  Tensor<T> out(x.shape());
  const Index n = x.numel();
  const T* px = x.data().data();
  T* po = out.mutable_data().data();
  for (Index i = 0; i < n; ++i) po[i] = f(px[i]);
  record(name, out, {&x}, [x, out, n, df] {
    const T* g = out.grad().data();
    const T* px = x.data().data();
    const T* py = out.data().data();
    T* gx = gbuf(x).data();
    for (Index i = 0; i < n; ++i) gx[i] += g[i] * df(px[i], py[i]);
  });
  return out;
}

// Gathers with a shared index map; used by every pure re-indexing op.
template <typename T>
Tensor<T> gather_impl(std::string_view name, const Tensor<T>& x, Shape out_shape,
                      std::shared_ptr<const std::vector<Index>> index) {
  const Index n = shape_numel(out_shape);
  if (static_cast<Index>(index->size()) != n) throw ShapeError(std::string(name) + ": index size mismatch");
  Tensor<T> out(std::move(out_shape));
  const T* px = x.data().data();
  T* po = out.mutable_data().data();
  const Index* idx = index->data();
  const Index nx = x.numel();
  for (Index i = 0; i < n; ++i) {
    const Index s = idx[i];
    if (s >= nx) throw ShapeError(std::string(name) + ": index out of range");
    po[i] = s < 0 ? T(0) : px[s];
  }
  record(name, out, {&x}, [x, out, index, n] {
    const T* g = out.grad().data();
    T* gx = gbuf(x).data();
    const Index* idx = index->data();
    for (Index i = 0; i < n; ++i)
      if (idx[i] >= 0) gx[idx[i]] += g[i];
  });
  return out;
}

void require_spatial(const Shape& s, std::string_view op) {
  if (s.size() < 2) throw ShapeError(std::string(op) + ": needs at least 2 axes, got " + shape_str(s));
}

template <typename T>
void im2col(const T* x, Index C, Index H, Index W, Index kh, Index kw, Index stride, Index pad, Index Ho, Index Wo,
            T* cols) {
  for (Index c = 0; c < C; ++c)
    for (Index ki = 0; ki < kh; ++ki)
      for (Index kj = 0; kj < kw; ++kj) {
        T* row = cols + ((c * kh + ki) * kw + kj) * Ho * Wo;
        for (Index oy = 0; oy < Ho; ++oy) {
          const Index iy = oy * stride - pad + ki;
          T* r = row + oy * Wo;
          if (iy < 0 || iy >= H) {
            std::fill(r, r + Wo, T(0));
            continue;
          }
          const T* xr = x + (c * H + iy) * W;
          for (Index ox = 0; ox < Wo; ++ox) {
            const Index ix = ox * stride - pad + kj;
            r[ox] = (ix < 0 || ix >= W) ? T(0) : xr[ix];
          }
        }
      }
}

template <typename T>
void col2im(const T* cols, Index C, Index H, Index W, Index kh, Index kw, Index stride, Index pad, Index Ho, Index Wo,
            T* gx) {
  for (Index c = 0; c < C; ++c)
    for (Index ki = 0; ki < kh; ++ki)
      for (Index kj = 0; kj < kw; ++kj) {
        const T* row = cols + ((c * kh + ki) * kw + kj) * Ho * Wo;
        for (Index oy = 0; oy < Ho; ++oy) {
          const Index iy = oy * stride - pad + ki;
          if (iy < 0 || iy >= H) continue;
          T* gr = gx + (c * H + iy) * W;
          const T* r = row + oy * Wo;
          for (Index ox = 0; ox < Wo; ++ox) {
            const Index ix = ox * stride - pad + kj;
            if (ix >= 0 && ix < W) gr[ix] += r[ox];
          }
        }
      }
}

}  // namespace

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return binary<T>(
      "add", a, b, [](T x, T y) { return x + y; }, [](T, T, T g) { return g; }, [](T, T, T g) { return g; });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return binary<T>(
      "sub", a, b, [](T x, T y) { return x - y; }, [](T, T, T g) { return g; }, [](T, T, T g) { return -g; });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return binary<T>(
      "mul", a, b, [](T x, T y) { return x * y; }, [](T, T y, T g) { return g * y; },
      [](T x, T, T g) { return g * x; });
}

template <typename T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
  for (T v : b.data())
    if (v == T(0)) throw NumericError("div: division by exact zero");
  return binary<T>(
      "div", a, b, [](T x, T y) { return x / y; }, [](T, T y, T g) { return g / y; },
      [](T x, T y, T g) { return -g * x / (y * y); });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T s) {
  return unary<T>("add_scalar", a, [s](T x) { return x + s; }, [](T, T) { return T(1); });
}

template <typename T>
Tensor<T> mul_scalar(const Tensor<T>& a, T s) {
  return unary<T>("mul_scalar", a, [s](T x) { return x * s; }, [s](T, T) { return s; });
}

template <typename T>
Tensor<T> abs(const Tensor<T>& x) {
  return unary<T>(
      "abs", x, [](T v) { return std::abs(v); },
      [](T v, T) { return v > T(0) ? T(1) : (v < T(0) ? T(-1) : T(0)); });
}

template <typename T>
Tensor<T> sqrt(const Tensor<T>& x) {
  for (T v : x.data())
    if (v < T(0)) throw NumericError("sqrt: negative input");
  return unary<T>(
      "sqrt", x, [](T v) { return std::sqrt(v); },
      [](T, T y) {
        if (y == T(0)) throw NumericError("sqrt: gradient undefined at 0");
        return T(0.5) / y;
      });
}

template <typename T>
Tensor<T> square(const Tensor<T>& x) {
  return unary<T>("square", x, [](T v) { return v * v; }, [](T v, T) { return T(2) * v; });
}

template <typename T>
Tensor<T> clamp(const Tensor<T>& x, T lo, T hi) {
  if (lo > hi) throw std::invalid_argument("clamp: lo > hi");
  return unary<T>(
      "clamp", x, [lo, hi](T v) { return std::clamp(v, lo, hi); },
      [lo, hi](T v, T) { return (v >= lo && v <= hi) ? T(1) : T(0); });
}

template <typename T>
Tensor<T> prelu(const Tensor<T>& x, const Tensor<T>& slope, int axis) {
  axis = norm_axis(axis, x.rank());
  const AxisSplit s = split_at(x.shape(), axis);
  const Index ns = slope.numel();
  if (ns != 1 && ns != s.len) throw ShapeError("prelu: slope count does not match channel count");
  Tensor<T> out(x.shape());
  const T* px = x.data().data();
  const T* pa = slope.data().data();
  T* po = out.mutable_data().data();
  for (Index o = 0; o < s.outer; ++o)
    for (Index c = 0; c < s.len; ++c) {
      const T a = pa[ns == 1 ? 0 : c];
      const Index base = (o * s.len + c) * s.inner;
      for (Index i = 0; i < s.inner; ++i) {
        const T v = px[base + i];
        po[base + i] = v >= T(0) ? v : a * v;
      }
    }
  record("prelu", out, {&x, &slope}, [x, slope, out, s, ns] {
    const T* g = out.grad().data();
    const T* px = x.data().data();
    const T* pa = slope.data().data();
    T* gx = wants(x) ? gbuf(x).data() : nullptr;
    T* ga = wants(slope) ? gbuf(slope).data() : nullptr;
    for (Index o = 0; o < s.outer; ++o)
      for (Index c = 0; c < s.len; ++c) {
        const Index ci = ns == 1 ? 0 : c;
        const T a = pa[ci];
        const Index base = (o * s.len + c) * s.inner;
        T acc = 0;
        for (Index i = 0; i < s.inner; ++i) {
          const T v = px[base + i];
          if (v >= T(0)) {
            if (gx) gx[base + i] += g[base + i];
          } else {
            if (gx) gx[base + i] += a * g[base + i];
            acc += v * g[base + i];
          }
        }
        if (ga) ga[ci] += acc;
      }
  });
  return out;
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
  constexpr T k0 = T(0.7978845608028654);  // sqrt(2/pi)
  constexpr T k1 = T(0.044715);
  return unary<T>(
      "gelu", x,
      [](T v) { return T(0.5) * v * (T(1) + std::tanh(k0 * (v + k1 * v * v * v))); },
      [](T v, T) {
        const T u = k0 * (v + k1 * v * v * v);
        const T t = std::tanh(u);
        const T du = k0 * (T(1) + T(3) * k1 * v * v);
        return T(0.5) * (T(1) + t) + T(0.5) * v * (T(1) - t * t) * du;
      });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  T s = 0;
  for (T v : x.data()) s += v;
  Tensor<T> out = Tensor<T>::scalar(s);
  record("sum", out, {&x}, [x, out] {
    const T g = out.grad()[0];
    for (T& v : gbuf(x)) v += g;
  });
  return out;
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  if (x.numel() == 0) throw ShapeError("mean of empty tensor");
  return mul_scalar(sum(x), T(1) / static_cast<T>(x.numel()));
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() < 2 || b.rank() < 2) throw ShapeError("matmul: operands need rank >= 2");
  const Index M = a.dim(-2), K = a.dim(-1), N = b.dim(-1);
  if (b.dim(-2) != K) {
    throw ShapeError("matmul: inner dims differ, " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  const Shape batch_a(a.shape().begin(), a.shape().end() - 2);
  const Shape batch_b(b.shape().begin(), b.shape().end() - 2);
  const Index na = shape_numel(batch_a), nb = shape_numel(batch_b);
  Shape out_shape;
  if (batch_a == batch_b || nb == 1) {
    out_shape = batch_a;
  } else if (na == 1) {
    out_shape = batch_b;
  } else {
    throw ShapeError("matmul: batch dims " + shape_str(batch_a) + " vs " + shape_str(batch_b));
  }
  const Index nbatch = std::max(na, nb);
  out_shape.push_back(M);
  out_shape.push_back(N);
  Tensor<T> out(out_shape);
  for (Index i = 0; i < nbatch; ++i) {
    const T* pa = a.data().data() + (na == 1 ? 0 : i) * M * K;
    const T* pb = b.data().data() + (nb == 1 ? 0 : i) * K * N;
    detail::gemm(false, false, M, N, K, pa, pb, out.mutable_data().data() + i * M * N, false);
  }
  record("matmul", out, {&a, &b}, [a, b, out, M, N, K, na, nb, nbatch] {
    const T* g = out.grad().data();
    for (Index i = 0; i < nbatch; ++i) {
      const Index ia = na == 1 ? 0 : i, ib = nb == 1 ? 0 : i;
      const T* gi = g + i * M * N;
      if (wants(a))
        detail::gemm(false, true, M, K, N, gi, b.data().data() + ib * K * N, gbuf(a).data() + ia * M * K, true);
      if (wants(b))
        detail::gemm(true, false, K, N, M, a.data().data() + ia * M * K, gi, gbuf(b).data() + ib * K * N, true);
    }
  });
  return out;
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias) {
  if (w.rank() != 2) throw ShapeError("linear: weight must be [out, in]");
  const Index out_f = w.dim(0), in_f = w.dim(1);
  if (x.rank() < 1 || x.dim(-1) != in_f) {
    throw ShapeError("linear: input " + shape_str(x.shape()) + " vs weight " + shape_str(w.shape()));
  }
  if (bias.defined() && bias.numel() != out_f) throw ShapeError("linear: bias size mismatch");
  const Index rows = x.numel() / in_f;
  Shape out_shape = x.shape();
  out_shape.back() = out_f;
  Tensor<T> out(out_shape);
  T* po = out.mutable_data().data();
  detail::gemm(false, true, rows, out_f, in_f, x.data().data(), w.data().data(), po, false);
  if (bias.defined()) {
    const T* pb = bias.data().data();
    for (Index r = 0; r < rows; ++r)
      for (Index j = 0; j < out_f; ++j) po[r * out_f + j] += pb[j];
  }
  record("linear", out, {&x, &w, &bias}, [x, w, bias, out, rows, in_f, out_f] {
    const T* g = out.grad().data();
    if (wants(x)) detail::gemm(false, false, rows, in_f, out_f, g, w.data().data(), gbuf(x).data(), true);
    if (wants(w)) detail::gemm(true, false, out_f, in_f, rows, g, x.data().data(), gbuf(w).data(), true);
    if (wants(bias)) {
      T* gb = gbuf(bias).data();
      for (Index r = 0; r < rows; ++r)
        for (Index j = 0; j < out_f; ++j) gb[j] += g[r * out_f + j];
    }
  });
  return out;
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias, Index stride, Index pad) {
  if (x.rank() != 4 || w.rank() != 4) throw ShapeError("conv2d: expects x[N,C,H,W] and w[O,C,kh,kw]");
  const Index N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const Index O = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  if (w.dim(1) != C) {
    throw ShapeError("conv2d: input has " + std::to_string(C) + " channels, weight expects " +
                     std::to_string(w.dim(1)));
  }
  if (kh % 2 == 0 || kw % 2 == 0) throw ShapeError("conv2d: kernel extents must be odd");
  if (stride < 1 || pad < 0) throw ShapeError("conv2d: bad stride/pad");
  if (bias.defined() && bias.numel() != O) throw ShapeError("conv2d: bias size mismatch");
  const Index Ho = (H + 2 * pad - kh) / stride + 1;
  const Index Wo = (W + 2 * pad - kw) / stride + 1;
  if (H + 2 * pad < kh || W + 2 * pad < kw || Ho <= 0 || Wo <= 0) throw ShapeError("conv2d: non-positive output size");

  const Index K = C * kh * kw, P = Ho * Wo;
  const bool pointwise = kh == 1 && kw == 1 && stride == 1 && pad == 0;
  Tensor<T> out(Shape{N, O, Ho, Wo});
  std::vector<T> cols(pointwise ? 0 : static_cast<std::size_t>(K * P));
  for (Index n = 0; n < N; ++n) {
    const T* xn = x.data().data() + n * C * H * W;
    const T* src = xn;
    if (!pointwise) {
      im2col(xn, C, H, W, kh, kw, stride, pad, Ho, Wo, cols.data());
      src = cols.data();
    }
    T* on = out.mutable_data().data() + n * O * P;
    detail::gemm(false, false, O, P, K, w.data().data(), src, on, false);
    if (bias.defined())
      for (Index o = 0; o < O; ++o) {
        const T bv = bias.data()[static_cast<std::size_t>(o)];
        for (Index p = 0; p < P; ++p) on[o * P + p] += bv;
      }
  }
  record("conv2d", out, {&x, &w, &bias}, [=] {
    const T* g = out.grad().data();
    std::vector<T> cols(pointwise ? 0 : static_cast<std::size_t>(K * P));
    std::vector<T> dcols(pointwise ? 0 : static_cast<std::size_t>(K * P));
    for (Index n = 0; n < N; ++n) {
      const T* gn = g + n * O * P;
      const T* xn = x.data().data() + n * C * H * W;
      if (wants(w)) {
        const T* src = xn;
        if (!pointwise) {
          im2col(xn, C, H, W, kh, kw, stride, pad, Ho, Wo, cols.data());
          src = cols.data();
        }
        detail::gemm(false, true, O, K, P, gn, src, gbuf(w).data(), true);
      }
      if (wants(x)) {
        T* gx = gbuf(x).data() + n * C * H * W;
        if (pointwise) {
          detail::gemm(true, false, K, P, O, w.data().data(), gn, gx, true);
        } else {
          detail::gemm(true, false, K, P, O, w.data().data(), gn, dcols.data(), false);
          col2im(dcols.data(), C, H, W, kh, kw, stride, pad, Ho, Wo, gx);
        }
      }
      if (wants(bias)) {
        T* gb = gbuf(bias).data();
        for (Index o = 0; o < O; ++o) {
          T s = 0;
          for (Index p = 0; p < P; ++p) s += gn[o * P + p];
          gb[o] += s;
        }
      }
    }
  });
  return out;
}

template <typename T>
Tensor<T> pad_zero(const Tensor<T>& x, Pad2d pad) {
  require_spatial(x.shape(), "pad_zero");
  if (pad.top < 0 || pad.bottom < 0 || pad.left < 0 || pad.right < 0) throw ShapeError("pad_zero: negative pad");
  const Index H = x.dim(-2), W = x.dim(-1);
  const Index Hp = H + pad.top + pad.bottom, Wp = W + pad.left + pad.right;
  const Index outer = x.numel() / std::max<Index>(H * W, 1);
  Shape s = x.shape();
  s[s.size() - 2] = Hp;
  s[s.size() - 1] = Wp;
  Tensor<T> out(s);
  const T* px = x.data().data();
  T* po = out.mutable_data().data();
  for (Index o = 0; o < outer; ++o)
    for (Index y = 0; y < H; ++y)
      std::copy_n(px + (o * H + y) * W, W, po + (o * Hp + y + pad.top) * Wp + pad.left);
  record("pad_zero", out, {&x}, [x, out, outer, H, W, Hp, Wp, pad] {
    const T* g = out.grad().data();
    T* gx = gbuf(x).data();
    for (Index o = 0; o < outer; ++o)
      for (Index y = 0; y < H; ++y) {
        const T* src = g + (o * Hp + y + pad.top) * Wp + pad.left;
        T* dst = gx + (o * H + y) * W;
        for (Index i = 0; i < W; ++i) dst[i] += src[i];
      }
  });
  return out;
}

template <typename T>
Tensor<T> crop(const Tensor<T>& x, Index top, Index left, Index height, Index width) {
  require_spatial(x.shape(), "crop");
  const Index H = x.dim(-2), W = x.dim(-1);
  if (top < 0 || left < 0 || height < 0 || width < 0 || top + height > H || left + width > W) {
    throw ShapeError("crop: window outside " + shape_str(x.shape()));
  }
  const Index outer = x.numel() / std::max<Index>(H * W, 1);
  Shape s = x.shape();
  s[s.size() - 2] = height;
  s[s.size() - 1] = width;
  Tensor<T> out(s);
  const T* px = x.data().data();
  T* po = out.mutable_data().data();
  for (Index o = 0; o < outer; ++o)
    for (Index y = 0; y < height; ++y)
      std::copy_n(px + (o * H + y + top) * W + left, width, po + (o * height + y) * width);
  record("crop", out, {&x}, [x, out, outer, H, W, top, left, height, width] {
    const T* g = out.grad().data();
    T* gx = gbuf(x).data();
    for (Index o = 0; o < outer; ++o)
      for (Index y = 0; y < height; ++y) {
        const T* src = g + (o * height + y) * width;
        T* dst = gx + (o * H + y + top) * W + left;
        for (Index i = 0; i < width; ++i) dst[i] += src[i];
      }
  });
  return out;
}

namespace {

// Builds a spatial index map: out(y, x) <- in(fy(y), fx(x)) per leading slice.
template <typename FY, typename FX>
std::shared_ptr<const std::vector<Index>> spatial_map(Index outer, Index H, Index W, Index Ho, Index Wo, FY fy,
                                                      FX fx) {
  auto idx = std::make_shared<std::vector<Index>>(static_cast<std::size_t>(outer * Ho * Wo));
  Index k = 0;
  for (Index o = 0; o < outer; ++o)
    for (Index y = 0; y < Ho; ++y) {
      const Index sy = fy(y);
      for (Index x = 0; x < Wo; ++x) (*idx)[static_cast<std::size_t>(k++)] = (o * H + sy) * W + fx(x);
    }
  return idx;
}

}  // namespace

template <typename T>
Tensor<T> reflect_pad(const Tensor<T>& x, Pad2d pad) {
  require_spatial(x.shape(), "reflect_pad");
  const Index H = x.dim(-2), W = x.dim(-1);
  if (std::max(pad.top, pad.bottom) > H - 1 || std::max(pad.left, pad.right) > W - 1 || pad.top < 0 ||
      pad.bottom < 0 || pad.left < 0 || pad.right < 0) {
    throw ShapeError("reflect_pad: pad must be in [0, extent-1]");
  }
  const Index Ho = H + pad.top + pad.bottom, Wo = W + pad.left + pad.right;
  auto reflect = [](Index i, Index n) { return i < 0 ? -i : (i >= n ? 2 * n - 2 - i : i); };
  auto idx = spatial_map(
      x.numel() / std::max<Index>(H * W, 1), H, W, Ho, Wo, [&](Index y) { return reflect(y - pad.top, H); },
      [&](Index c) { return reflect(c - pad.left, W); });
  Shape s = x.shape();
  s[s.size() - 2] = Ho;
  s[s.size() - 1] = Wo;
  return gather_impl<T>("reflect_pad", x, s, idx);
}

template <typename T>
Tensor<T> roll2d(const Tensor<T>& x, Index shift_y, Index shift_x) {
  require_spatial(x.shape(), "roll2d");
  const Index H = x.dim(-2), W = x.dim(-1);
  auto wrap = [](Index i, Index n) { return ((i % n) + n) % n; };
  auto idx = spatial_map(
      x.numel() / std::max<Index>(H * W, 1), H, W, H, W, [&](Index y) { return wrap(y - shift_y, H); },
      [&](Index c) { return wrap(c - shift_x, W); });
  return gather_impl<T>("roll2d", x, x.shape(), idx);
}

template <typename T>
Tensor<T> flip_w(const Tensor<T>& x) {
  require_spatial(x.shape(), "flip_w");
  const Index H = x.dim(-2), W = x.dim(-1);
  auto idx = spatial_map(
      x.numel() / std::max<Index>(H * W, 1), H, W, H, W, [](Index y) { return y; },
      [W](Index c) { return W - 1 - c; });
  return gather_impl<T>("flip_w", x, x.shape(), idx);
}

template <typename T>
Tensor<T> upsample_nearest(const Tensor<T>& x, Index factor) {
  require_spatial(x.shape(), "upsample_nearest");
  if (factor < 1) throw ShapeError("upsample_nearest: factor must be >= 1");
  const Index H = x.dim(-2), W = x.dim(-1);
  const Index Ho = H * factor, Wo = W * factor;
  const Index outer = x.numel() / std::max<Index>(H * W, 1);
  Shape s = x.shape();
  s[s.size() - 2] = Ho;
  s[s.size() - 1] = Wo;
  Tensor<T> out(s);
  const T* px = x.data().data();
  T* po = out.mutable_data().data();
  for (Index o = 0; o < outer; ++o)
    for (Index y = 0; y < Ho; ++y) {
      const T* src = px + (o * H + y / factor) * W;
      T* dst = po + (o * Ho + y) * Wo;
      for (Index c = 0; c < Wo; ++c) dst[c] = src[c / factor];
    }
  record("upsample_nearest", out, {&x}, [x, out, outer, H, W, Ho, Wo, factor] {
    const T* g = out.grad().data();
    T* gx = gbuf(x).data();
    for (Index o = 0; o < outer; ++o)
      for (Index y = 0; y < Ho; ++y) {
        const T* src = g + (o * Ho + y) * Wo;
        T* dst = gx + (o * H + y / factor) * W;
        for (Index c = 0; c < Wo; ++c) dst[c / factor] += src[c];
      }
  });
  return out;
}

template <typename T>
Tensor<T> space_to_depth2(const Tensor<T>& x) {
  if (x.rank() != 4) throw ShapeError("space_to_depth2: expects [N,C,H,W]");
  const Index N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (H % 2 || W % 2) throw ShapeError("space_to_depth2: spatial extents must be even");
  const Index Ho = H / 2, Wo = W / 2;
  auto idx = std::make_shared<std::vector<Index>>(static_cast<std::size_t>(N * 4 * C * Ho * Wo));
  Index k = 0;
  for (Index n = 0; n < N; ++n)
    for (Index blk = 0; blk < 4; ++blk) {
      const Index dy = blk % 2, dx = blk / 2;
      for (Index c = 0; c < C; ++c)
        for (Index y = 0; y < Ho; ++y)
          for (Index xx = 0; xx < Wo; ++xx)
            (*idx)[static_cast<std::size_t>(k++)] = ((n * C + c) * H + 2 * y + dy) * W + 2 * xx + dx;
    }
  return gather_impl<T>("space_to_depth2", x, Shape{N, 4 * C, Ho, Wo}, idx);
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, int axis) {
  if (parts.empty()) throw ShapeError("concat: no parts");
  const int rank = parts[0].rank();
  axis = norm_axis(axis, rank);
  Shape out_shape = parts[0].shape();
  out_shape[static_cast<std::size_t>(axis)] = 0;
  for (const auto& p : parts) {
    if (p.rank() != rank) throw ShapeError("concat: rank mismatch");
    for (int d = 0; d < rank; ++d)
      if (d != axis && p.dim(d) != parts[0].dim(d)) {
        throw ShapeError("concat: " + shape_str(p.shape()) + " vs " + shape_str(parts[0].shape()));
      }
    out_shape[static_cast<std::size_t>(axis)] += p.dim(axis);
  }
  const AxisSplit so = split_at(out_shape, axis);
  Tensor<T> out(out_shape);
  T* po = out.mutable_data().data();
  Index offset = 0;
  std::vector<Index> offsets;
  for (const auto& p : parts) {
    const Index len = p.dim(axis);
    offsets.push_back(offset);
    const T* pp = p.data().data();
    for (Index o = 0; o < so.outer; ++o)
      std::copy_n(pp + o * len * so.inner, len * so.inner, po + (o * so.len + offset) * so.inner);
    offset += len;
  }
  if (active_tape<T>() == nullptr) return out;
  bool any = false;
  for (const auto& p : parts) any = any || p.requires_grad();
  if (!any) return out;
  out.node()->requires_grad = true;
  std::vector<detail::NodePtr<T>> ins;
  for (const auto& p : parts) ins.push_back(p.node());
  active_tape<T>()->record("concat", ins, out.node(), [parts, out, offsets, so, axis] {
    const T* g = out.grad().data();
    for (std::size_t i = 0; i < parts.size(); ++i) {
      if (!wants(parts[i])) continue;
      const Index len = parts[i].dim(axis);
      T* gp = gbuf(parts[i]).data();
      for (Index o = 0; o < so.outer; ++o) {
        const T* src = g + (o * so.len + offsets[i]) * so.inner;
        T* dst = gp + o * len * so.inner;
        for (Index k = 0; k < len * so.inner; ++k) dst[k] += src[k];
      }
    }
  });
  return out;
}

template <typename T>
Tensor<T> slice(const Tensor<T>& x, int axis, Index start, Index length) {
  axis = norm_axis(axis, x.rank());
  const AxisSplit s = split_at(x.shape(), axis);
  if (start < 0 || length < 0 || start + length > s.len) throw ShapeError("slice: range outside axis");
  Shape out_shape = x.shape();
  out_shape[static_cast<std::size_t>(axis)] = length;
  Tensor<T> out(out_shape);
  const T* px = x.data().data();
  T* po = out.mutable_data().data();
  for (Index o = 0; o < s.outer; ++o)
    std::copy_n(px + (o * s.len + start) * s.inner, length * s.inner, po + o * length * s.inner);
  record("slice", out, {&x}, [x, out, s, start, length] {
    const T* g = out.grad().data();
    T* gx = gbuf(x).data();
    for (Index o = 0; o < s.outer; ++o) {
      const T* src = g + o * length * s.inner;
      T* dst = gx + (o * s.len + start) * s.inner;
      for (Index k = 0; k < length * s.inner; ++k) dst[k] += src[k];
    }
  });
  return out;
}

template <typename T>
std::vector<Tensor<T>> split(const Tensor<T>& x, int axis, const std::vector<Index>& sizes) {
  axis = norm_axis(axis, x.rank());
  const Index total = std::accumulate(sizes.begin(), sizes.end(), Index{0});
  if (total != x.dim(axis)) throw ShapeError("split: sizes do not cover the axis");
  std::vector<Tensor<T>> parts;
  Index start = 0;
  for (Index len : sizes) {
    parts.push_back(slice(x, axis, start, len));
    start += len;
  }
  return parts;
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, int axis) {
  axis = norm_axis(axis, x.rank());
  const AxisSplit s = split_at(x.shape(), axis);
  for (T v : x.data())
    if (std::isnan(v)) throw NumericError("softmax: NaN input");
  Tensor<T> out(x.shape());
  const T* px = x.data().data();
  T* po = out.mutable_data().data();
  for (Index o = 0; o < s.outer; ++o)
    for (Index i = 0; i < s.inner; ++i) {
      const Index base = o * s.len * s.inner + i;
      T m = px[base];
      for (Index k = 1; k < s.len; ++k) m = std::max(m, px[base + k * s.inner]);
      T z = 0;
      for (Index k = 0; k < s.len; ++k) {
        const T e = std::exp(px[base + k * s.inner] - m);
        po[base + k * s.inner] = e;
        z += e;
      }
      const T inv = T(1) / z;
      for (Index k = 0; k < s.len; ++k) po[base + k * s.inner] *= inv;
    }
  record("softmax", out, {&x}, [x, out, s] {
    const T* g = out.grad().data();
    const T* py = out.data().data();
    T* gx = gbuf(x).data();
    for (Index o = 0; o < s.outer; ++o)
      for (Index i = 0; i < s.inner; ++i) {
        const Index base = o * s.len * s.inner + i;
        T d = 0;
        for (Index k = 0; k < s.len; ++k) d += g[base + k * s.inner] * py[base + k * s.inner];
        for (Index k = 0; k < s.len; ++k) {
          const Index j = base + k * s.inner;
          gx[j] += py[j] * (g[j] - d);
        }
      }
  });
  return out;
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias, int axis, T eps) {
  axis = norm_axis(axis, x.rank());
  const AxisSplit s = split_at(x.shape(), axis);
  if (s.len < 1) throw ShapeError("layer_norm: empty axis");
  if (gain.numel() != s.len || bias.numel() != s.len) throw ShapeError("layer_norm: affine size mismatch");
  Tensor<T> out(x.shape());
  std::vector<T> xhat(static_cast<std::size_t>(x.numel()));
  std::vector<T> rstd(static_cast<std::size_t>(s.outer * s.inner));
  const T* px = x.data().data();
  const T* pg = gain.data().data();
  const T* pb = bias.data().data();
  T* po = out.mutable_data().data();
  const T inv_len = T(1) / static_cast<T>(s.len);
  for (Index o = 0; o < s.outer; ++o)
    for (Index i = 0; i < s.inner; ++i) {
      const Index base = o * s.len * s.inner + i;
      T m = 0;
      for (Index k = 0; k < s.len; ++k) m += px[base + k * s.inner];
      m *= inv_len;
      T v = 0;
      for (Index k = 0; k < s.len; ++k) {
        const T d = px[base + k * s.inner] - m;
        v += d * d;
      }
      v *= inv_len;
      const T r = T(1) / std::sqrt(v + eps);
      rstd[static_cast<std::size_t>(o * s.inner + i)] = r;
      for (Index k = 0; k < s.len; ++k) {
        const Index j = base + k * s.inner;
        const T h = (px[j] - m) * r;
        xhat[static_cast<std::size_t>(j)] = h;
        po[j] = h * pg[k] + pb[k];
      }
    }
  record("layer_norm", out, {&x, &gain, &bias}, [x, gain, bias, out, s, xhat = std::move(xhat),
                                                  rstd = std::move(rstd), inv_len] {
    const T* g = out.grad().data();
    const T* pg = gain.data().data();
    T* gx = wants(x) ? gbuf(x).data() : nullptr;
    T* gg = wants(gain) ? gbuf(gain).data() : nullptr;
    T* gb = wants(bias) ? gbuf(bias).data() : nullptr;
    for (Index o = 0; o < s.outer; ++o)
      for (Index i = 0; i < s.inner; ++i) {
        const Index base = o * s.len * s.inner + i;
        T sum_d = 0, sum_dh = 0;
        for (Index k = 0; k < s.len; ++k) {
          const Index j = base + k * s.inner;
          const T dh = g[j] * pg[k];
          sum_d += dh;
          sum_dh += dh * xhat[static_cast<std::size_t>(j)];
          if (gg) gg[k] += g[j] * xhat[static_cast<std::size_t>(j)];
          if (gb) gb[k] += g[j];
        }
        if (!gx) continue;
        const T r = rstd[static_cast<std::size_t>(o * s.inner + i)];
        for (Index k = 0; k < s.len; ++k) {
          const Index j = base + k * s.inner;
          const T dh = g[j] * pg[k];
          gx[j] += r * (dh - inv_len * sum_d - xhat[static_cast<std::size_t>(j)] * inv_len * sum_dh);
        }
      }
  });
  return out;
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw ShapeError("reshape: " + shape_str(x.shape()) + " -> " + shape_str(shape));
  }
  Tensor<T> out(std::move(shape), std::vector<T>(x.data().begin(), x.data().end()));
  record("reshape", out, {&x}, [x, out] {
    const auto g = out.grad();
    auto& gx = gbuf(x);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[i];
  });
  return out;
}

template <typename T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<int>& axes) {
  const int r = x.rank();
  if (static_cast<int>(axes.size()) != r) throw ShapeError("permute: axes count mismatch");
  std::vector<bool> seen(static_cast<std::size_t>(r), false);
  for (int a : axes) {
    if (a < 0 || a >= r || seen[static_cast<std::size_t>(a)]) throw ShapeError("permute: invalid axes");
    seen[static_cast<std::size_t>(a)] = true;
  }
  const Shape& in = x.shape();
  std::vector<Index> in_stride(static_cast<std::size_t>(r), 1);
  for (int d = r - 2; d >= 0; --d)
    in_stride[static_cast<std::size_t>(d)] = in_stride[static_cast<std::size_t>(d) + 1] * in[static_cast<std::size_t>(d) + 1];
  Shape out_shape(static_cast<std::size_t>(r));
  std::vector<Index> src_stride(static_cast<std::size_t>(r));
  for (int d = 0; d < r; ++d) {
    out_shape[static_cast<std::size_t>(d)] = in[static_cast<std::size_t>(axes[static_cast<std::size_t>(d)])];
    src_stride[static_cast<std::size_t>(d)] = in_stride[static_cast<std::size_t>(axes[static_cast<std::size_t>(d)])];
  }
  const Index n = x.numel();
  auto idx = std::make_shared<std::vector<Index>>(static_cast<std::size_t>(n));
  std::vector<Index> pos(static_cast<std::size_t>(r), 0);
  Index src = 0;
  for (Index i = 0; i < n; ++i) {
    (*idx)[static_cast<std::size_t>(i)] = src;
    for (int d = r - 1; d >= 0; --d) {
      const auto du = static_cast<std::size_t>(d);
      if (++pos[du] < out_shape[du]) {
        src += src_stride[du];
        break;
      }
      src -= src_stride[du] * (out_shape[du] - 1);
      pos[du] = 0;
    }
  }
  return gather_impl<T>("permute", x, out_shape, idx);
}

template <typename T>
Tensor<T> gather(const Tensor<T>& x, Shape out_shape, std::shared_ptr<const std::vector<Index>> index) {
  return gather_impl<T>("gather", x, std::move(out_shape), std::move(index));
}

template <typename To, typename From>
Tensor<To> cast(const Tensor<From>& x) {
  std::vector<To> v(x.data().begin(), x.data().end());
  return Tensor<To>(x.shape(), std::move(v));
}

#define AEM_INSTANTIATE(T)                                                                        \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                     \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                     \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                     \
  template Tensor<T> div(const Tensor<T>&, const Tensor<T>&);                                     \
  template Tensor<T> add_scalar(const Tensor<T>&, T);                                             \
  template Tensor<T> mul_scalar(const Tensor<T>&, T);                                             \
  template Tensor<T> abs(const Tensor<T>&);                                                       \
  template Tensor<T> sqrt(const Tensor<T>&);                                                      \
  template Tensor<T> square(const Tensor<T>&);                                                    \
  template Tensor<T> clamp(const Tensor<T>&, T, T);                                               \
  template Tensor<T> prelu(const Tensor<T>&, const Tensor<T>&, int);                              \
  template Tensor<T> gelu(const Tensor<T>&);                                                      \
  template Tensor<T> sum(const Tensor<T>&);                                                       \
  template Tensor<T> mean(const Tensor<T>&);                                                      \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                                  \
  template Tensor<T> linear(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, Index, Index);  \
  template Tensor<T> pad_zero(const Tensor<T>&, Pad2d);                                           \
  template Tensor<T> crop(const Tensor<T>&, Index, Index, Index, Index);                          \
  template Tensor<T> reflect_pad(const Tensor<T>&, Pad2d);                                        \
  template Tensor<T> roll2d(const Tensor<T>&, Index, Index);                                      \
  template Tensor<T> flip_w(const Tensor<T>&);                                                    \
  template Tensor<T> upsample_nearest(const Tensor<T>&, Index);                                   \
  template Tensor<T> space_to_depth2(const Tensor<T>&);                                           \
  template Tensor<T> concat(const std::vector<Tensor<T>>&, int);                                  \
  template Tensor<T> slice(const Tensor<T>&, int, Index, Index);                                  \
  template std::vector<Tensor<T>> split(const Tensor<T>&, int, const std::vector<Index>&);        \
  template Tensor<T> softmax(const Tensor<T>&, int);                                              \
  template Tensor<T> layer_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, int, T);    \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                                            \
  template Tensor<T> permute(const Tensor<T>&, const std::vector<int>&);                          \
  template Tensor<T> gather(const Tensor<T>&, Shape, std::shared_ptr<const std::vector<Index>>);

AEM_INSTANTIATE(float)
AEM_INSTANTIATE(double)
#undef AEM_INSTANTIATE

template Tensor<float> cast<float, double>(const Tensor<double>&);
template Tensor<double> cast<double, float>(const Tensor<float>&);
template Tensor<float> cast<float, float>(const Tensor<float>&);
template Tensor<double> cast<double, double>(const Tensor<double>&);

}  // namespace aem::ops
