#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numbers>

#include "aem/data.hpp"

namespace aem::data {

namespace {

void check_same(Index h1, Index w1, Index h2, Index w2, const char* what) {
  if (h1 != h2 || w1 != w2) {
    throw ShapeError(std::string(what) + ": " + std::to_string(h1) + "x" + std::to_string(w1) + " vs " +
                     std::to_string(h2) + "x" + std::to_string(w2));
  }
}

// Squared distance transform of a 1-D sampled function (lower envelope of parabolas).
void dt1d(const std::vector<double>& f, std::vector<double>& d, std::vector<Index>& v, std::vector<double>& z) {
  const Index n = static_cast<Index>(f.size());
  const double inf = std::numeric_limits<double>::infinity();
  Index k = 0;
  v[0] = 0;
  z[0] = -inf;
  z[1] = inf;
  for (Index q = 1; q < n; ++q) {
    if (f[q] == inf) continue;
    if (f[v[k]] == inf) {
      v[k] = q;
      continue;
    }
    double s;
    while (true) {
      s = ((f[q] + double(q * q)) - (f[v[k]] + double(v[k] * v[k]))) / double(2 * q - 2 * v[k]);
      if (s > z[k] || k == 0) break;
      --k;
    }
    if (s <= z[k]) {
      v[k] = q;
      z[k + 1] = inf;
      continue;
    }
    ++k;
    v[k] = q;
    z[k] = s;
    z[k + 1] = inf;
  }
  k = 0;
  for (Index q = 0; q < n; ++q) {
    while (z[k + 1] < double(q)) ++k;
    d[q] = f[v[k]] == inf ? inf : double((q - v[k]) * (q - v[k])) + f[v[k]];
  }
}

// Squared Euclidean distance from every pixel to the nearest pixel where mask == 0.
std::vector<double> squared_distance_to_unset(const std::vector<std::uint8_t>& mask, Index H, Index W) {
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> g(mask.size());
  for (std::size_t i = 0; i < mask.size(); ++i) g[i] = mask[i] ? inf : 0.0;
  const Index n = std::max(H, W);
  std::vector<double> f(static_cast<std::size_t>(n)), d(f.size()), z(static_cast<std::size_t>(n + 1));
  std::vector<Index> v(f.size());
  f.resize(static_cast<std::size_t>(H));
  d.resize(f.size());
  for (Index x = 0; x < W; ++x) {
    for (Index y = 0; y < H; ++y) f[y] = g[y * W + x];
    dt1d(f, d, v, z);
    for (Index y = 0; y < H; ++y) g[y * W + x] = d[y];
  }
  f.resize(static_cast<std::size_t>(W));
  d.resize(f.size());
  for (Index y = 0; y < H; ++y) {
    for (Index x = 0; x < W; ++x) f[x] = g[y * W + x];
    dt1d(f, d, v, z);
    for (Index x = 0; x < W; ++x) g[y * W + x] = d[x];
  }
  return g;
}

double uniform(std::mt19937_64& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }
Index uniform_int(std::mt19937_64& rng, Index lo, Index hi) { return std::uniform_int_distribution<Index>(lo, hi)(rng); }

// Fraction of an ss x ss grid of sub-samples inside the shape, per pixel.
template <typename Inside>
Plane coverage(Index canvas, Index ss, Inside inside) {
  Plane p(canvas, canvas);
  for (Index y = 0; y < canvas; ++y)
    for (Index x = 0; x < canvas; ++x) {
      Index hits = 0;
      for (Index i = 0; i < ss; ++i)
        for (Index j = 0; j < ss; ++j) hits += inside(y + (i + 0.5) / double(ss), x + (j + 0.5) / double(ss));
      p.at(y, x) = static_cast<float>(static_cast<double>(hits) / static_cast<double>(ss * ss));
    }
  return p;
}

double segment_distance(double py, double px, double ay, double ax, double by, double bx) {
  const double vy = by - ay, vx = bx - ax;
  const double len2 = vy * vy + vx * vx;
  const double t = len2 > 0 ? std::clamp(((py - ay) * vy + (px - ax) * vx) / len2, 0.0, 1.0) : 0.0;
  return std::hypot(py - (ay + t * vy), px - (ax + t * vx));
}

Plane make_shape(ShapeFamily family, const SynthSpec& spec, std::mt19937_64& rng) {
  const double C = static_cast<double>(spec.canvas);
  const double cy = uniform(rng, 0.25 * C, 0.75 * C), cx = uniform(rng, 0.25 * C, 0.75 * C);
  switch (family) {
    case ShapeFamily::disk: {
      const double r = uniform(rng, 0.10 * C, 0.28 * C);
      return coverage(spec.canvas, spec.supersample, [&](double y, double x) { return std::hypot(y - cy, x - cx) <= r; });
    }
    case ShapeFamily::ring: {
      const double ro = uniform(rng, 0.15 * C, 0.32 * C), t = uniform(rng, 0.04 * C, 0.10 * C);
      return coverage(spec.canvas, spec.supersample, [&](double y, double x) {
        const double d = std::hypot(y - cy, x - cx);
        return d <= ro && d >= ro - t;
      });
    }
    case ShapeFamily::blob: {
      const double r0 = uniform(rng, 0.12 * C, 0.28 * C);
      double amp[3], phase[3];
      for (int k = 0; k < 3; ++k) {
        amp[k] = uniform(rng, 0.0, 0.12);
        phase[k] = uniform(rng, 0.0, 2 * std::numbers::pi);
      }
      return coverage(spec.canvas, spec.supersample, [&](double y, double x) {
        const double th = std::atan2(y - cy, x - cx);
        double r = r0;
        for (int k = 0; k < 3; ++k) r += r0 * amp[k] * std::sin((k + 2) * th + phase[k]);
        return std::hypot(y - cy, x - cx) <= r;
      });
    }
    case ShapeFamily::strokes: {
      // Hair-like strands: thin quadratic curves fanning out from one root.
      const Index count = uniform_int(rng, 3, 8);
      std::vector<std::array<double, 4>> segs;  // ay, ax, by, bx
      std::vector<double> half_width;
      for (Index s = 0; s < count; ++s) {
        const double angle = uniform(rng, 0, 2 * std::numbers::pi), len = uniform(rng, 0.25 * C, 0.5 * C);
        const double bend = uniform(rng, -0.4, 0.4), w = uniform(rng, 0.3, 0.8);
        const double ey = cy + len * std::sin(angle), ex = cx + len * std::cos(angle);
        const double my = (cy + ey) / 2 + bend * len * std::cos(angle), mx = (cx + ex) / 2 - bend * len * std::sin(angle);
        double py = cy, px = cx;
        for (int k = 1; k <= 12; ++k) {
          const double t = k / 12.0;
          const double qy = (1 - t) * (1 - t) * cy + 2 * (1 - t) * t * my + t * t * ey;
          const double qx = (1 - t) * (1 - t) * cx + 2 * (1 - t) * t * mx + t * t * ex;
          segs.push_back({py, px, qy, qx});
          half_width.push_back(w);
          py = qy;
          px = qx;
        }
      }
      const double opacity = uniform(rng, 0.6, 1.0);
      Plane p = coverage(spec.canvas, spec.supersample, [&](double y, double x) {
        for (std::size_t k = 0; k < segs.size(); ++k)
          if (segment_distance(y, x, segs[k][0], segs[k][1], segs[k][2], segs[k][3]) <= half_width[k]) return true;
        return false;
      });
      for (auto& v : p.data) v *= static_cast<float>(opacity);
      return p;
    }
    case ShapeFamily::gradient: {
      // Semi-transparent disk whose opacity ramps linearly along one direction.
      const double r = uniform(rng, 0.10 * C, 0.22 * C), dir = uniform(rng, 0, 2 * std::numbers::pi);
      const double lo = uniform(rng, 0.15, 0.4), hi = uniform(rng, 0.6, 0.95);
      Plane p = coverage(spec.canvas, spec.supersample, [&](double y, double x) { return std::hypot(y - cy, x - cx) <= r; });
      for (Index y = 0; y < spec.canvas; ++y)
        for (Index x = 0; x < spec.canvas; ++x) {
          const double t = std::clamp(0.5 + ((y + 0.5 - cy) * std::sin(dir) + (x + 0.5 - cx) * std::cos(dir)) / (2 * r), 0.0, 1.0);
          p.at(y, x) *= static_cast<float>(lo + (hi - lo) * t);
        }
      return p;
    }
  }
  throw std::logic_error("unknown shape family");
}

RGBImage make_texture(Index canvas, std::mt19937_64& rng, bool busy) {
  RGBImage img(canvas, canvas);
  double c0[3], c1[3];
  for (int c = 0; c < 3; ++c) {
    c0[c] = uniform(rng, 0.05, 0.95);
    c1[c] = uniform(rng, 0.05, 0.95);
  }
  const double dir = uniform(rng, 0, 2 * std::numbers::pi);
  const double fy = uniform(rng, 0.05, busy ? 0.6 : 0.2), fx = uniform(rng, 0.05, busy ? 0.6 : 0.2);
  const double amp = busy ? uniform(rng, 0.2, 0.5) : uniform(rng, 0.02, 0.12);
  const bool checker = busy && rng() % 3 == 0;
  const Index cell = uniform_int(rng, 4, 12);
  for (Index y = 0; y < canvas; ++y)
    for (Index x = 0; x < canvas; ++x) {
      double t = 0.5 + 0.5 * ((y * std::sin(dir) + x * std::cos(dir)) / static_cast<double>(canvas));
      t += amp * std::sin(fy * y) * std::cos(fx * x);
      if (checker && ((y / cell + x / cell) % 2)) t = 1 - t;
      t = std::clamp(t, 0.0, 1.0);
      for (int c = 0; c < 3; ++c) img.at(c, y, x) = static_cast<float>(c0[c] + (c1[c] - c0[c]) * t);
    }
  return img;
}

float bilinear(const float* plane, Index H, Index W, double y, double x) {
  y = std::clamp(y, 0.0, static_cast<double>(H - 1));
  x = std::clamp(x, 0.0, static_cast<double>(W - 1));
  const Index y0 = static_cast<Index>(std::floor(y)), x0 = static_cast<Index>(std::floor(x));
  const Index y1 = std::min(y0 + 1, H - 1), x1 = std::min(x0 + 1, W - 1);
  const double fy = y - y0, fx = x - x0;
  const double top = plane[y0 * W + x0] * (1 - fx) + plane[y0 * W + x1] * fx;
  const double bot = plane[y1 * W + x0] * (1 - fx) + plane[y1 * W + x1] * fx;
  return static_cast<float>(top * (1 - fy) + bot * fy);
}

// Resamples `channels` planes of H x W to Ho x Wo; bilinear or nearest.
std::vector<float> resample(const std::vector<float>& src, Index channels, Index H, Index W, Index Ho, Index Wo,
                            bool nearest) {
  std::vector<float> out(static_cast<std::size_t>(channels * Ho * Wo));
  const double sy = static_cast<double>(H) / Ho, sx = static_cast<double>(W) / Wo;
  for (Index c = 0; c < channels; ++c)
    for (Index y = 0; y < Ho; ++y)
      for (Index x = 0; x < Wo; ++x) {
        const double py = (y + 0.5) * sy - 0.5, px = (x + 0.5) * sx - 0.5;
        float v;
        if (nearest) {
          const Index ny = std::clamp<Index>(static_cast<Index>(std::floor((y + 0.5) * sy)), 0, H - 1);
          const Index nx = std::clamp<Index>(static_cast<Index>(std::floor((x + 0.5) * sx)), 0, W - 1);
          v = src[static_cast<std::size_t>((c * H + ny) * W + nx)];
        } else {
          v = bilinear(src.data() + c * H * W, H, W, py, px);
        }
        out[static_cast<std::size_t>((c * Ho + y) * Wo + x)] = v;
      }
  return out;
}

// Edge-replicating placement of channels x H x W into Ho x Wo at (top, left);
// negative offsets crop.
template <typename V>
std::vector<V> place(const std::vector<V>& src, Index channels, Index H, Index W, Index Ho, Index Wo, Index top,
                     Index left) {
  std::vector<V> out(static_cast<std::size_t>(channels * Ho * Wo));
  for (Index c = 0; c < channels; ++c)
    for (Index y = 0; y < Ho; ++y)
      for (Index x = 0; x < Wo; ++x) {
        const Index sy = std::clamp<Index>(y - top, 0, H - 1), sx = std::clamp<Index>(x - left, 0, W - 1);
        out[static_cast<std::size_t>((c * Ho + y) * Wo + x)] = src[static_cast<std::size_t>((c * H + sy) * W + sx)];
      }
  return out;
}

}  // namespace

RGBImage composite(const RGBImage& fg, const RGBImage& bg, const Plane& alpha) {
  check_same(fg.height, fg.width, bg.height, bg.width, "composite F/B");
  check_same(fg.height, fg.width, alpha.height, alpha.width, "composite F/alpha");
  RGBImage out(fg.height, fg.width);
  const Index HW = alpha.size();
  for (Index c = 0; c < 3; ++c)
    for (Index i = 0; i < HW; ++i) {
      const float a = alpha.data[static_cast<std::size_t>(i)];
      const std::size_t k = static_cast<std::size_t>(c * HW + i);
      out.data[k] = a * fg.data[k] + (1.f - a) * bg.data[k];
    }
  return out;
}

std::vector<std::uint8_t> erode_disk(const std::vector<std::uint8_t>& mask, Index H, Index W, double d) {
  if (static_cast<Index>(mask.size()) != H * W) throw ShapeError("erode_disk: mask size mismatch");
  if (d < 0) throw std::invalid_argument("erode_disk: radius must be non-negative");
  const auto dist2 = squared_distance_to_unset(mask, H, W);
  std::vector<std::uint8_t> out(mask.size());
  for (std::size_t i = 0; i < mask.size(); ++i) out[i] = mask[i] && dist2[i] > d * d;
  return out;
}

Trimap make_trimap(const Plane& alpha, double d) {
  if (d < 0) throw std::invalid_argument("make_trimap: dilation distance must be non-negative");
  std::vector<std::uint8_t> fg(alpha.data.size()), bg(alpha.data.size());
  for (std::size_t i = 0; i < alpha.data.size(); ++i) {
    fg[i] = alpha.data[i] >= 1.f - 1e-6f;
    bg[i] = alpha.data[i] <= 1e-6f;
  }
  fg = erode_disk(fg, alpha.height, alpha.width, d);
  bg = erode_disk(bg, alpha.height, alpha.width, d);
  Trimap t(alpha.height, alpha.width, trimap_code::unknown);
  for (std::size_t i = 0; i < t.labels.size(); ++i) {
    if (fg[i]) t.labels[i] = trimap_code::foreground;
    if (bg[i]) t.labels[i] = trimap_code::background;
  }
  return t;
}

CompositeSample synth_sample(const SynthSpec& spec, Index index) {
  if (spec.canvas < 8 || spec.supersample < 1 || spec.families.empty() || spec.min_shapes < 1 ||
      spec.max_shapes < spec.min_shapes) {
    throw std::invalid_argument("SynthSpec: invalid canvas, supersample, families or shape counts");
  }
  for (Index attempt = 0; attempt < spec.max_retries; ++attempt) {
    std::seed_seq seq{static_cast<std::uint32_t>(spec.seed), static_cast<std::uint32_t>(spec.seed >> 32),
                      static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(attempt)};
    std::mt19937_64 rng(seq);
    CompositeSample s;
    s.alpha = Plane(spec.canvas, spec.canvas, 0.f);
    const Index shapes = uniform_int(rng, spec.min_shapes, spec.max_shapes);
    for (Index k = 0; k < shapes; ++k) {
      const ShapeFamily fam = spec.families[rng() % spec.families.size()];
      const Plane cov = make_shape(fam, spec, rng);
      for (std::size_t i = 0; i < cov.data.size(); ++i) s.alpha.data[i] = 1.f - (1.f - s.alpha.data[i]) * (1.f - cov.data[i]);
    }
    s.fg = make_texture(spec.canvas, rng, false);
    s.bg = make_texture(spec.canvas, rng, true);
    s.image = composite(s.fg, s.bg, s.alpha);
    s.trimap = make_trimap(s.alpha, spec.trimap_radius);
    const double unk = static_cast<double>(s.trimap.unknown_count()) / static_cast<double>(s.alpha.size());
    if (unk >= spec.min_unknown && unk <= spec.max_unknown) return s;
  }
  throw DataError("synth: sample " + std::to_string(index) + " stayed degenerate after " +
                  std::to_string(spec.max_retries) + " attempts");
}

std::vector<CompositeSample> synth_dataset(const SynthSpec& spec, Index n) {
  std::vector<CompositeSample> out;
  out.reserve(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) out.push_back(synth_sample(spec, i));
  return out;
}

CompositeSample crop_sample(const CompositeSample& s, Index top, Index left, Index height, Index width) {
  const Index H = s.alpha.height, W = s.alpha.width;
  if (top < 0 || left < 0 || height < 1 || width < 1 || top + height > H || left + width > W) {
    throw std::invalid_argument("crop_sample: window outside the canvas");
  }
  auto crop_planes = [&](const std::vector<float>& src, Index channels) {
    std::vector<float> out;
    out.reserve(static_cast<std::size_t>(channels * height * width));
    for (Index c = 0; c < channels; ++c)
      for (Index y = 0; y < height; ++y)
        for (Index x = 0; x < width; ++x) out.push_back(src[static_cast<std::size_t>((c * H + top + y) * W + left + x)]);
    return out;
  };
  CompositeSample o;
  o.image = RGBImage(height, width);
  o.image.data = crop_planes(s.image.data, 3);
  if (s.has_layers()) {
    o.fg = RGBImage(height, width);
    o.fg.data = crop_planes(s.fg.data, 3);
    o.bg = RGBImage(height, width);
    o.bg.data = crop_planes(s.bg.data, 3);
  }
  o.alpha = Plane(height, width);
  o.alpha.data = crop_planes(s.alpha.data, 1);
  o.trimap = Trimap(height, width);
  for (Index y = 0; y < height; ++y)
    for (Index x = 0; x < width; ++x) o.trimap.at(y, x) = s.trimap.at(top + y, left + x);
  return o;
}

CompositeSample sample_patch(const CompositeSample& s, Index size, std::mt19937_64& rng) {
  const Index H = s.alpha.height, W = s.alpha.width;
  if (size < 1 || size > H || size > W) {
    throw std::invalid_argument("sample_patch: size " + std::to_string(size) + " exceeds canvas " +
                                std::to_string(H) + "x" + std::to_string(W));
  }
  const Index half = size / 2;
  std::vector<Index> fitting, any;
  for (Index y = 0; y < H; ++y)
    for (Index x = 0; x < W; ++x) {
      if (s.trimap.at(y, x) != trimap_code::unknown) continue;
      any.push_back(y * W + x);
      if (y >= half && y - half + size <= H && x >= half && x - half + size <= W) fitting.push_back(y * W + x);
    }
  Index top, left;
  if (!any.empty()) {
    const auto& pool = fitting.empty() ? any : fitting;
    const Index c = pool[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<Index>(pool.size()) - 1))];
    top = std::clamp<Index>(c / W - half, 0, H - size);
    left = std::clamp<Index>(c % W - half, 0, W - size);
  } else {
    top = uniform_int(rng, 0, H - size);
    left = uniform_int(rng, 0, W - size);
  }
  return crop_sample(s, top, left, size, size);
}

CompositeSample flip_sample(const CompositeSample& s) {
  auto flip = [](std::vector<float>& v, Index rows, Index W) {
    for (Index r = 0; r < rows; ++r) std::reverse(v.begin() + r * W, v.begin() + (r + 1) * W);
  };
  CompositeSample o = s;
  const Index H = s.alpha.height, W = s.alpha.width;
  flip(o.image.data, 3 * H, W);
  if (o.has_layers()) {
    flip(o.fg.data, 3 * H, W);
    flip(o.bg.data, 3 * H, W);
  }
  flip(o.alpha.data, H, W);
  for (Index r = 0; r < H; ++r) std::reverse(o.trimap.labels.begin() + r * W, o.trimap.labels.begin() + (r + 1) * W);
  return o;
}

CompositeSample augment(const CompositeSample& s, const AugmentConfig& cfg, std::mt19937_64& rng) {
  CompositeSample o = uniform(rng, 0, 1) < cfg.flip_probability ? flip_sample(s) : s;
  const Index H = o.alpha.height, W = o.alpha.width;
  const double scale = uniform(rng, cfg.scale_min, cfg.scale_max);
  const Index Ho = std::max<Index>(1, std::lround(H * scale)), Wo = std::max<Index>(1, std::lround(W * scale));
  // Offset of the rescaled canvas inside the original frame: random crop when
  // it grew, edge padding on a random side when it shrank.
  const Index top = Ho >= H ? -uniform_int(rng, 0, Ho - H) : uniform_int(rng, 0, H - Ho);
  const Index left = Wo >= W ? -uniform_int(rng, 0, Wo - W) : uniform_int(rng, 0, W - Wo);
  auto geo = [&](const std::vector<float>& v, Index channels, bool nearest) {
    return place(resample(v, channels, H, W, Ho, Wo, nearest), channels, Ho, Wo, H, W, top, left);
  };
  o.alpha.data = geo(o.alpha.data, 1, false);
  for (auto& a : o.alpha.data) a = std::clamp(a, 0.f, 1.f);
  std::vector<float> tri(o.trimap.labels.begin(), o.trimap.labels.end());
  tri = geo(tri, 1, true);
  for (std::size_t i = 0; i < tri.size(); ++i) o.trimap.labels[i] = static_cast<std::uint8_t>(tri[i]);

  const float k = static_cast<float>(uniform(rng, 1 - cfg.brightness, 1 + cfg.brightness));
  if (o.has_layers()) {
    o.fg.data = geo(o.fg.data, 3, false);
    o.bg.data = geo(o.bg.data, 3, false);
    for (auto* layer : {&o.fg, &o.bg})
      for (auto& v : layer->data) v = std::clamp(v * k, 0.f, 1.f);
    o.image = composite(o.fg, o.bg, o.alpha);
  } else {
    o.image.data = geo(o.image.data, 3, false);
    for (auto& v : o.image.data) v = std::clamp(v * k, 0.f, 1.f);
  }
  return o;
}

std::string sample_id(Index i) {
  std::string s = std::to_string(i);
  return std::string(s.size() < 4 ? 4 - s.size() : 0, '0') + s;
}

}  // namespace aem::data
