#include "aem/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

namespace aem::metrics {

namespace {

void check_shapes(const Plane& a, const Plane& g, const Trimap& t) {
  if (a.height != g.height || a.width != g.width || a.height != t.height || a.width != t.width) {
    throw ShapeError("metrics: alpha " + std::to_string(a.height) + "x" + std::to_string(a.width) + ", gt " +
                     std::to_string(g.height) + "x" + std::to_string(g.width) + ", trimap " +
                     std::to_string(t.height) + "x" + std::to_string(t.width) + " must match");
  }
}

// Component labels of a binary map under 4-connectivity, numbered in order of
// each component's first pixel (row-major). Union-find over the two-pass scan.
struct Components {
  std::vector<Index> label;  // -1 for background
  std::vector<Index> size;
};

Index find(std::vector<Index>& parent, Index x) {
  while (parent[x] != x) {
    parent[x] = parent[parent[x]];
    x = parent[x];
  }
  return x;
}

Components label_components(const std::vector<std::uint8_t>& on, Index H, Index W) {
  std::vector<Index> provisional(on.size(), -1), parent;
  for (Index y = 0; y < H; ++y)
    for (Index x = 0; x < W; ++x) {
      const Index i = y * W + x;
      if (!on[i]) continue;
      const Index up = y > 0 ? provisional[i - W] : -1, left = x > 0 ? provisional[i - 1] : -1;
      if (up < 0 && left < 0) {
        provisional[i] = static_cast<Index>(parent.size());
        parent.push_back(provisional[i]);
      } else if (up >= 0 && left >= 0) {
        const Index a = find(parent, up), b = find(parent, left);
        provisional[i] = std::min(a, b);
        parent[std::max(a, b)] = std::min(a, b);
      } else {
        provisional[i] = up >= 0 ? up : left;
      }
    }
  Components c;
  c.label.assign(on.size(), -1);
  std::vector<Index> renumber(parent.size(), -1);
  for (std::size_t i = 0; i < on.size(); ++i) {
    if (provisional[i] < 0) continue;
    const Index root = find(parent, provisional[i]);
    if (renumber[root] < 0) {
      renumber[root] = static_cast<Index>(c.size.size());
      c.size.push_back(0);
    }
    c.label[i] = renumber[root];
    ++c.size[renumber[root]];
  }
  return c;
}

std::vector<double> derivative_kernel(double sigma, std::vector<double>& smooth) {
  const Index r = static_cast<Index>(std::ceil(3 * sigma));
  std::vector<double> d;
  smooth.clear();
  for (Index i = -r; i <= r; ++i) {
    const double g = std::exp(-static_cast<double>(i * i) / (2 * sigma * sigma)) / (sigma * std::sqrt(2 * std::numbers::pi));
    smooth.push_back(g);
    d.push_back(-static_cast<double>(i) * g / (sigma * sigma));
  }
  // The 2-D filter smooth(y) * d(x) has L2 norm |smooth| * |d|; fold it into d.
  const double ns = std::sqrt(std::inner_product(smooth.begin(), smooth.end(), smooth.begin(), 0.0));
  const double nd = std::sqrt(std::inner_product(d.begin(), d.end(), d.begin(), 0.0));
  for (auto& v : d) v /= ns * nd;
  return d;
}

// Separable correlation with replicate borders: kernel ky along rows, kx along
// columns. Taps are summed in mirrored pairs so an antisymmetric kernel gives
// exactly zero on flat input.
std::vector<double> filter(const Plane& p, const std::vector<double>& ky, const std::vector<double>& kx) {
  const Index H = p.height, W = p.width, r = static_cast<Index>(kx.size() / 2);
  std::vector<double> tmp(static_cast<std::size_t>(H * W)), out(tmp.size());
  for (Index y = 0; y < H; ++y)
    for (Index x = 0; x < W; ++x) {
      double acc = kx[r] * p.at(y, x);
      for (Index k = 1; k <= r; ++k)
        acc += kx[r + k] * p.at(y, std::min(x + k, W - 1)) + kx[r - k] * p.at(y, std::max<Index>(x - k, 0));
      tmp[y * W + x] = acc;
    }
  for (Index y = 0; y < H; ++y)
    for (Index x = 0; x < W; ++x) {
      double acc = ky[r] * tmp[y * W + x];
      for (Index k = 1; k <= r; ++k)
        acc += ky[r + k] * tmp[std::min(y + k, H - 1) * W + x] + ky[r - k] * tmp[std::max<Index>(y - k, 0) * W + x];
      out[y * W + x] = acc;
    }
  return out;
}

}  // namespace

double sad(const Plane& alpha, const Plane& gt, const Trimap& trimap) {
  check_shapes(alpha, gt, trimap);
  double s = 0;
  for (Index i = 0; i < alpha.size(); ++i)
    if (trimap.unknown(i)) s += std::abs(static_cast<double>(alpha.data[i]) - gt.data[i]);
  return s / 1000.0;
}

double mse(const Plane& alpha, const Plane& gt, const Trimap& trimap) {
  check_shapes(alpha, gt, trimap);
  double s = 0;
  Index n = 0;
  for (Index i = 0; i < alpha.size(); ++i)
    if (trimap.unknown(i)) {
      const double d = static_cast<double>(alpha.data[i]) - gt.data[i];
      s += d * d;
      ++n;
    }
  return n ? s / static_cast<double>(n) * 1000.0 : 0.0;
}

Plane gradient_magnitude(const Plane& p, double sigma) {
  std::vector<double> smooth;
  const std::vector<double> d = derivative_kernel(sigma, smooth);
  const auto gx = filter(p, smooth, d);
  const auto gy = filter(p, d, smooth);
  Plane out(p.height, p.width);
  for (std::size_t i = 0; i < gx.size(); ++i) out.data[i] = static_cast<float>(std::sqrt(gx[i] * gx[i] + gy[i] * gy[i]));
  return out;
}

double grad_metric(const Plane& alpha, const Plane& gt, const Trimap& trimap) {
  check_shapes(alpha, gt, trimap);
  std::vector<double> smooth;
  const std::vector<double> d = derivative_kernel(1.4, smooth);
  const auto ax = filter(alpha, smooth, d), ay = filter(alpha, d, smooth);
  const auto gx = filter(gt, smooth, d), gy = filter(gt, d, smooth);
  double s = 0;
  for (Index i = 0; i < alpha.size(); ++i) {
    if (!trimap.unknown(i)) continue;
    const double e = std::sqrt(ax[i] * ax[i] + ay[i] * ay[i]) - std::sqrt(gx[i] * gx[i] + gy[i] * gy[i]);
    s += e * e;
  }
  return s / 1000.0;
}

ConnResult conn_metric_full(const Plane& alpha, const Plane& gt, const Trimap& trimap) {
  check_shapes(alpha, gt, trimap);
  const Index H = alpha.height, W = alpha.width, n = alpha.size();
  std::vector<double> level(static_cast<std::size_t>(n), -1.0);
  std::vector<std::uint8_t> on(static_cast<std::size_t>(n));
  ConnResult r;
  for (int step = 1; step <= 10; ++step) {
    const double theta = step / 10.0, prev = (step - 1) / 10.0;
    for (Index i = 0; i < n; ++i) on[i] = alpha.data[i] >= theta && gt.data[i] >= theta;
    const Components c = label_components(on, H, W);
    Index omega = -1;
    for (std::size_t k = 0; k < c.size.size(); ++k)
      if (omega < 0 || c.size[k] > c.size[omega]) omega = static_cast<Index>(k);
    if (step == 10 && omega < 0) r.fallback = true;
    for (Index i = 0; i < n; ++i)
      if (level[i] < 0 && (omega < 0 || c.label[i] != omega)) level[i] = prev;
  }
  double s = 0;
  for (Index i = 0; i < n; ++i) {
    if (level[i] < 0) level[i] = 1.0;
    if (!trimap.unknown(i)) continue;
    const double da = alpha.data[i] - level[i], dg = gt.data[i] - level[i];
    const double pa = 1.0 - (da >= 0.15 ? da : 0.0), pg = 1.0 - (dg >= 0.15 ? dg : 0.0);
    s += std::abs(pa - pg);
  }
  r.value = s / 1000.0;
  return r;
}

double conn_metric(const Plane& alpha, const Plane& gt, const Trimap& trimap) {
  return conn_metric_full(alpha, gt, trimap).value;
}

MetricReport evaluate(const Plane& alpha, const Plane& gt, const Trimap& trimap) {
  MetricReport m;
  m.sad = sad(alpha, gt, trimap);
  m.mse = mse(alpha, gt, trimap);
  m.grad = grad_metric(alpha, gt, trimap);
  const ConnResult c = conn_metric_full(alpha, gt, trimap);
  m.conn = c.value;
  m.conn_fallback = c.fallback;
  m.unknown_pixels = trimap.unknown_count();
  return m;
}

MetricReport mean_report(const std::vector<MetricReport>& reports) {
  MetricReport m;
  if (reports.empty()) return m;
  for (const auto& r : reports) {
    m.sad += r.sad;
    m.mse += r.mse;
    m.grad += r.grad;
    m.conn += r.conn;
    m.unknown_pixels += r.unknown_pixels;
    m.conn_fallback = m.conn_fallback || r.conn_fallback;
  }
  const double k = static_cast<double>(reports.size());
  m.sad /= k;
  m.mse /= k;
  m.grad /= k;
  m.conn /= k;
  m.unknown_pixels = static_cast<Index>(std::llround(static_cast<double>(m.unknown_pixels) / k));
  return m;
}

}  // namespace aem::metrics
