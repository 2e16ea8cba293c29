#include <cmath>
#include <deque>
#include <numbers>
#include <random>

#include "aem/metrics.hpp"
#include "doctest.h"

using namespace aem;
using namespace aem::metrics;

namespace {

Plane random_plane(Index h, Index w, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(0.f, 1.f);
  Plane p(h, w);
  for (auto& v : p.data) v = u(rng);
  return p;
}

Trimap random_trimap(Index h, Index w, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Trimap t(h, w);
  const std::uint8_t codes[3] = {trimap_code::background, trimap_code::unknown, trimap_code::foreground};
  for (auto& v : t.labels) v = codes[rng() % 3];
  return t;
}

// Two soft blobs plus noise; values are multiples of 0.05 so thresholds bite.
Plane two_blobs(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0, 1);
  Plane p(16, 16);
  const double cy1 = 2 + 5 * u(rng), cx1 = 2 + 5 * u(rng), cy2 = 9 + 5 * u(rng), cx2 = 9 + 5 * u(rng);
  const double r1 = 2 + 3 * u(rng), r2 = 2 + 3 * u(rng);
  for (Index y = 0; y < 16; ++y)
    for (Index x = 0; x < 16; ++x) {
      const double d1 = std::hypot(y - cy1, x - cx1) / r1, d2 = std::hypot(y - cy2, x - cx2) / r2;
      double v = std::max(std::clamp(1.5 - d1, 0.0, 1.0), std::clamp(1.5 - d2, 0.0, 1.0));
      v = std::clamp(v + 0.2 * (u(rng) - 0.5), 0.0, 1.0);
      p.at(y, x) = static_cast<float>(std::round(v * 20) / 20);
    }
  return p;
}

// Standard connectivity error, recomputed with breadth-first flood fill.
double flood_fill_conn(const Plane& a, const Plane& g, const Trimap& t) {
  const Index H = a.height, W = a.width;
  std::vector<double> level(static_cast<std::size_t>(H * W), -1.0);
  for (int step = 1; step <= 10; ++step) {
    const double theta = step / 10.0;
    auto on = [&](Index i) { return a.data[i] >= theta && g.data[i] >= theta; };
    std::vector<int> comp(static_cast<std::size_t>(H * W), -1);
    int best = -1, best_size = 0, next = 0;
    for (Index s = 0; s < H * W; ++s) {
      if (!on(s) || comp[s] >= 0) continue;
      int size = 0;
      std::deque<Index> q{s};
      comp[s] = next;
      while (!q.empty()) {
        const Index i = q.front();
        q.pop_front();
        ++size;
        const Index y = i / W, x = i % W;
        const Index nb[4][2] = {{y - 1, x}, {y + 1, x}, {y, x - 1}, {y, x + 1}};
        for (auto& n : nb) {
          if (n[0] < 0 || n[0] >= H || n[1] < 0 || n[1] >= W) continue;
          const Index j = n[0] * W + n[1];
          if (on(j) && comp[j] < 0) {
            comp[j] = next;
            q.push_back(j);
          }
        }
      }
      if (size > best_size) {
        best_size = size;
        best = next;
      }
      ++next;
    }
    for (Index i = 0; i < H * W; ++i)
      if (level[i] < 0 && comp[i] != best) level[i] = (step - 1) / 10.0;
    if (best < 0)
      for (Index i = 0; i < H * W; ++i)
        if (level[i] < 0) level[i] = (step - 1) / 10.0;
  }
  double s = 0;
  for (Index i = 0; i < H * W; ++i) {
    const double l = level[i] < 0 ? 1.0 : level[i];
    if (t.labels[i] != trimap_code::unknown) continue;
    const double da = a.data[i] - l, dg = g.data[i] - l;
    s += std::abs((1 - (da >= 0.15 ? da : 0)) - (1 - (dg >= 0.15 ? dg : 0)));
  }
  return s / 1000.0;
}

// Non-separable 2-D Gaussian-derivative filter with clamped borders.
Plane brute_gradient(const Plane& p, double sigma) {
  const Index r = static_cast<Index>(std::ceil(3 * sigma));
  const Index n = 2 * r + 1;
  std::vector<double> hx(static_cast<std::size_t>(n * n));
  double norm = 0;
  for (Index i = -r; i <= r; ++i)
    for (Index j = -r; j <= r; ++j) {
      const double gi = std::exp(-i * i / (2 * sigma * sigma)) / (sigma * std::sqrt(2 * std::numbers::pi));
      const double gj = std::exp(-j * j / (2 * sigma * sigma)) / (sigma * std::sqrt(2 * std::numbers::pi));
      const double v = gi * (-j * gj / (sigma * sigma));
      hx[(i + r) * n + (j + r)] = v;
      norm += v * v;
    }
  for (auto& v : hx) v /= std::sqrt(norm);
  Plane out(p.height, p.width);
  for (Index y = 0; y < p.height; ++y)
    for (Index x = 0; x < p.width; ++x) {
      double gx = 0, gy = 0;
      for (Index i = -r; i <= r; ++i)
        for (Index j = -r; j <= r; ++j) {
          const double h = hx[(i + r) * n + (j + r)];
          gx += h * p.at(std::clamp<Index>(y + i, 0, p.height - 1), std::clamp<Index>(x + j, 0, p.width - 1));
          gy += h * p.at(std::clamp<Index>(y + j, 0, p.height - 1), std::clamp<Index>(x + i, 0, p.width - 1));
        }
      out.at(y, x) = static_cast<float>(std::sqrt(gx * gx + gy * gy));
    }
  return out;
}

}  // namespace

TEST_CASE("sad") {
  auto a = random_plane(16, 16, 1), b = random_plane(16, 16, 2);
  auto t = random_trimap(16, 16, 3);
  CHECK(sad(a, a, t) == 0.0);
  Plane one(40, 25, 1.f), zero(40, 25, 0.f);
  CHECK(sad(one, zero, Trimap(40, 25)) == 1.0);
  double s = 0;
  for (Index i = 0; i < 256; ++i)
    if (t.labels[i] == 128) s += std::abs(static_cast<double>(a.data[i]) - b.data[i]);
  CHECK(sad(a, b, t) == s / 1000.0);
  CHECK_THROWS_AS(sad(a, Plane(16, 15), t), ShapeError);
}

TEST_CASE("mse") {
  auto a = random_plane(16, 16, 1), b = random_plane(16, 16, 2);
  auto t = random_trimap(16, 16, 3);
  CHECK(mse(a, a, t) == 0.0);
  CHECK(mse(Plane(8, 8, 0.6f), Plane(8, 8, 0.5f), Trimap(8, 8)) == doctest::Approx(10.0).epsilon(1e-6));
  double s = 0;
  Index n = 0;
  for (Index i = 0; i < 256; ++i)
    if (t.labels[i] == 128) {
      const double d = static_cast<double>(a.data[i]) - b.data[i];
      s += d * d;
      ++n;
    }
  CHECK(mse(a, b, t) == s / static_cast<double>(n) * 1000.0);
}

TEST_CASE("grad metric") {
  auto a = random_plane(20, 18, 1);
  Trimap t(20, 18);
  CHECK(grad_metric(a, a, t) == 0.0);
  CHECK(grad_metric(Plane(20, 18, 0.2f), Plane(20, 18, 0.9f), t) == 0.0);

  Plane s1(24, 24), s2(24, 24);
  for (Index y = 0; y < 24; ++y)
    for (Index x = 0; x < 24; ++x) {
      s1.at(y, x) = x >= 12 ? 1.f : 0.f;
      s2.at(y, x) = x >= 13 ? 1.f : 0.f;
    }
  const Plane m1 = brute_gradient(s1, 1.4), m2 = brute_gradient(s2, 1.4);
  double expect = 0;
  for (Index i = 0; i < 24 * 24; ++i) {
    const double d = static_cast<double>(m1.data[i]) - m2.data[i];
    expect += d * d;
  }
  expect /= 1000.0;
  const double got = grad_metric(s1, s2, Trimap(24, 24));
  CHECK(expect > 0);
  CHECK(std::abs(got - expect) / expect < 1e-6);

  auto r = random_plane(17, 13, 4);
  const Plane fast = gradient_magnitude(r), slow = brute_gradient(r, 1.4);
  for (Index i = 0; i < r.size(); ++i) CHECK(fast.data[i] == doctest::Approx(slow.data[i]).epsilon(1e-5));
}

TEST_CASE("conn metric") {
  auto a = random_plane(16, 16, 1);
  Trimap t(16, 16);
  CHECK(conn_metric(a, a, t) == 0.0);
  Plane sq(16, 16, 0.f);
  for (Index y = 4; y < 12; ++y)
    for (Index x = 3; x < 9; ++x) sq.at(y, x) = 1.f;
  auto r = conn_metric_full(sq, sq, t);
  CHECK(r.value == 0.0);
  CHECK_FALSE(r.fallback);
  CHECK(conn_metric_full(Plane(16, 16, 0.5f), Plane(16, 16, 0.5f), t).fallback);

  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const Plane x = two_blobs(seed), y = two_blobs(seed + 1000);
    const Trimap tri = random_trimap(16, 16, seed + 2000);
    INFO("seed " << seed);
    CHECK(conn_metric(x, y, tri) == flood_fill_conn(x, y, tri));
    CHECK(conn_metric(x, y, Trimap(16, 16)) == flood_fill_conn(x, y, Trimap(16, 16)));
  }
}

TEST_CASE("metric properties on random mattes") {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const Plane a = random_plane(16, 16, seed), b = random_plane(16, 16, seed + 100);
    const Trimap t = random_trimap(16, 16, seed + 200);
    const auto same = evaluate(a, a, t);
    CHECK(same.sad == 0.0);
    CHECK(same.mse == 0.0);
    CHECK(same.grad == 0.0);
    CHECK(same.conn == 0.0);
    const auto ab = evaluate(a, b, t), ba = evaluate(b, a, t);
    CHECK(ab.sad == ba.sad);
    CHECK(ab.mse == ba.mse);
    CHECK(ab.grad == ba.grad);
    CHECK(ab.conn == ba.conn);
    CHECK(ab.sad >= 0);
    CHECK(ab.grad >= 0);
    // Pushing the prediction further from gt never lowers SAD or MSE.
    Plane far = a;
    for (Index i = 0; i < a.size(); ++i) far.data[i] = b.data[i] + 1.5f * (a.data[i] - b.data[i]);
    CHECK(sad(far, b, t) >= ab.sad);
    CHECK(mse(far, b, t) >= ab.mse);
  }
}

TEST_CASE("mean report") {
  MetricReport a{1, 2, 3, 4, 10, false}, b{3, 4, 5, 6, 20, true};
  auto m = mean_report({a, b});
  CHECK(m.sad == 2);
  CHECK(m.mse == 3);
  CHECK(m.grad == 4);
  CHECK(m.conn == 5);
  CHECK(m.unknown_pixels == 15);
  CHECK(m.conn_fallback);
}
