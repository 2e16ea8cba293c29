#include <cmath>
#include <random>

#include "aem/losses.hpp"
#include "doctest.h"
#include "support/gradcheck.hpp"

using namespace aem;
using namespace aem::loss;
using aem::testing::grad_check;
using aem::testing::random_tensor;

namespace {

using D = double;

Tensor<D> trimap_with_unknown(Index h, Index w, std::uint64_t seed, double unknown_fraction = 0.5) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0, 1);
  Tensor<D> t({1, 1, h, w});
  for (auto& v : t.mutable_data()) v = u(rng) < unknown_fraction ? 128.0 / 255.0 : (u(rng) < 0.5 ? 0.0 : 1.0);
  t.mutable_data()[0] = 128.0 / 255.0;
  return t;
}

// Plain-loop pyramid on a single H x W plane.
using Grid = std::vector<std::vector<double>>;

Index fold(Index i, Index n) {
  if (n == 1) return 0;
  const Index p = 2 * (n - 1);
  i = ((i % p) + p) % p;
  return i < n ? i : p - i;
}

Grid blur(const Grid& g) {
  const double k[5] = {1, 4, 6, 4, 1};
  const Index H = static_cast<Index>(g.size()), W = static_cast<Index>(g[0].size());
  Grid out(H, std::vector<double>(W, 0));
  for (Index y = 0; y < H; ++y)
    for (Index x = 0; x < W; ++x) {
      double acc = 0;
      for (Index a = -2; a <= 2; ++a)
        for (Index b = -2; b <= 2; ++b) acc += k[a + 2] * k[b + 2] / 256.0 * g[fold(y + a, H)][fold(x + b, W)];
      out[y][x] = acc;
    }
  return out;
}

Grid down(const Grid& g) {
  Grid b = blur(g), out;
  for (std::size_t y = 0; y < b.size(); y += 2) {
    out.emplace_back();
    for (std::size_t x = 0; x < b[0].size(); x += 2) out.back().push_back(b[y][x]);
  }
  return out;
}

Grid up(const Grid& g, std::size_t H, std::size_t W) {
  Grid n(2 * g.size(), std::vector<double>(2 * g[0].size()));
  for (std::size_t y = 0; y < n.size(); ++y)
    for (std::size_t x = 0; x < n[0].size(); ++x) n[y][x] = g[y / 2][x / 2];
  Grid b = blur(n);
  b.resize(H);
  for (auto& row : b) row.resize(W);
  return b;
}

double loop_laplacian_loss(const Grid& a, const Grid& b, int levels) {
  Grid ga = a, gb = b;
  double total = 0;
  for (int j = 0; j < levels; ++j) {
    Grid na = down(ga), nb = down(gb);
    Grid ua = up(na, ga.size(), ga[0].size()), ub = up(nb, gb.size(), gb[0].size());
    double s = 0;
    for (std::size_t y = 0; y < ga.size(); ++y)
      for (std::size_t x = 0; x < ga[0].size(); ++x) s += std::abs((ga[y][x] - ua[y][x]) - (gb[y][x] - ub[y][x]));
    total += std::pow(2.0, j) * s / static_cast<double>(ga.size() * ga[0].size());
    ga = na;
    gb = nb;
  }
  return total;
}

Grid to_grid(const Tensor<D>& t) {
  Grid g(static_cast<std::size_t>(t.dim(2)), std::vector<double>(static_cast<std::size_t>(t.dim(3))));
  for (Index y = 0; y < t.dim(2); ++y)
    for (Index x = 0; x < t.dim(3); ++x) g[y][x] = t.at(y * t.dim(3) + x);
  return g;
}

}  // namespace

TEST_CASE("l1 loss") {
  auto a = random_tensor<D>({1, 1, 4, 4}, 1, 0, 1), b = random_tensor<D>({1, 1, 4, 4}, 2, 0, 1);
  CHECK(l1_loss(a, a).item() == 0.0);
  CHECK(l1_loss(Tensor<D>({1, 1, 3, 3}, 1.0), Tensor<D>({1, 1, 3, 3}, 0.0)).item() == 1.0);
  double s = 0;
  for (Index i = 0; i < 16; ++i) s += std::abs(a.at(i) - b.at(i));
  CHECK(l1_loss(a, b).item() == s / 16);
  CHECK_THROWS_AS(l1_loss(a, Tensor<D>({1, 1, 4, 5})), ShapeError);
}

TEST_CASE("charbonnier loss") {
  auto a = random_tensor<D>({1, 1, 6, 6}, 1, 0, 1), b = random_tensor<D>({1, 1, 6, 6}, 2, 0, 1);
  auto tri = trimap_with_unknown(6, 6, 3);
  auto m = TrimapMask<D>::from_trimap(tri);
  CHECK(charbonnier_loss(a, a, m, 1e-6).item() == doctest::Approx(1e-6).epsilon(1e-12));

  SUBCASE("single unknown pixel, eps to zero") {
    Tensor<D> t({1, 1, 2, 2}, 0.0);
    t.mutable_data()[3] = 0.5;
    Tensor<D> x({1, 1, 2, 2}, 0.0), y({1, 1, 2, 2}, 0.0);
    x.mutable_data()[3] = 0.75;
    CHECK(charbonnier_loss(x, y, TrimapMask<D>::from_trimap(t), 1e-12).item() == doctest::Approx(0.75).epsilon(1e-12));
  }

  SUBCASE("loop oracle") {
    double s = 0;
    Index n = 0;
    for (Index i = 0; i < 36; ++i) {
      if (std::abs(tri.at(i) - 128.0 / 255.0) > 1e-9) continue;
      s += std::sqrt((a.at(i) - b.at(i)) * (a.at(i) - b.at(i)) + 1e-12);
      ++n;
    }
    CHECK(m.count == n);
    const double got = charbonnier_loss(a, b, m, 1e-6).item();
    CHECK(std::abs(got - s / n) / (s / n) < 1e-7);
  }

  SUBCASE("approaches masked L1 as eps shrinks") {
    double s = 0;
    for (Index i = 0; i < 36; ++i) s += m.mask.at(i) * std::abs(a.at(i) - b.at(i));
    CHECK(std::abs(charbonnier_loss(a, b, m, 1e-8).item() - s / m.count) < 1e-6);
  }

  CHECK_THROWS_AS(charbonnier_loss(a, b, TrimapMask<D>::from_trimap(Tensor<D>({1, 1, 6, 6}, 0.0))), std::invalid_argument);
  CHECK_THROWS_AS(charbonnier_loss(a, b, m, 0.0), std::invalid_argument);
}

TEST_CASE("laplacian pyramid") {
  SUBCASE("constant image has empty bands") {
    auto levels = build_laplacian_pyramid(Tensor<D>({1, 1, 16, 16}, 0.4), 4);
    REQUIRE(levels.size() == 5);
    for (int j = 0; j < 4; ++j)
      for (D v : levels[j].data()) CHECK(std::abs(v) <= 1e-6);
    for (D v : levels[4].data()) CHECK(v == doctest::Approx(0.4).epsilon(1e-12));
  }
  SUBCASE("reconstruction") {
    for (auto [h, w] : {std::pair<Index, Index>{16, 16}, {17, 23}, {64, 40}}) {
      auto x = random_tensor<float>({2, 1, h, w}, static_cast<std::uint64_t>(h * w), 0, 1);
      auto back = reconstruct_pyramid(build_laplacian_pyramid(x, 4));
      REQUIRE(back.shape() == x.shape());
      for (Index i = 0; i < x.numel(); ++i) CHECK(std::abs(back.at(i) - x.at(i)) < 1e-5);
    }
  }
  SUBCASE("single bright pixel puts more energy in the finest band") {
    Tensor<D> x({1, 1, 16, 16}, 0.0);
    x.mutable_data()[8 * 16 + 8] = 1.0;
    auto levels = build_laplacian_pyramid(x, 2);
    double e0 = 0, e1 = 0;
    for (D v : levels[0].data()) e0 += v * v;
    for (D v : levels[1].data()) e1 += v * v;
    CHECK(e0 > e1);
  }
  CHECK_THROWS_AS(build_laplacian_pyramid(Tensor<D>({1, 1, 8, 32}), 4), ShapeError);
  CHECK_THROWS_AS(build_laplacian_pyramid(Tensor<D>({1, 1, 8, 8}), 0), ShapeError);
}

TEST_CASE("laplacian loss") {
  auto a = random_tensor<D>({1, 1, 4, 4}, 1, 0, 1), b = random_tensor<D>({1, 1, 4, 4}, 2, 0, 1);
  CHECK(laplacian_loss(a, a, 2).item() == 0.0);
  CHECK(laplacian_loss(a, b, 2).item() == doctest::Approx(laplacian_loss(b, a, 2).item()).epsilon(1e-14));
  CHECK(std::abs(laplacian_loss(a, b, 2).item() - loop_laplacian_loss(to_grid(a), to_grid(b), 2)) < 1e-12);

  auto big_a = random_tensor<D>({1, 1, 32, 32}, 3, 0, 1), big_b = random_tensor<D>({1, 1, 32, 32}, 4, 0, 1);
  CHECK(std::abs(laplacian_loss(big_a, big_b, 4).item() - loop_laplacian_loss(to_grid(big_a), to_grid(big_b), 4)) <
        1e-12);

  Tensor<D> shifted({1, 1, 16, 16}, 0.0), base({1, 1, 16, 16}, 0.0);
  for (Index y = 0; y < 16; ++y)
    for (Index x = 0; x < 16; ++x) {
      base.mutable_data()[y * 16 + x] = x >= 8;
      shifted.mutable_data()[y * 16 + x] = x >= 9;
    }
  CHECK(laplacian_loss(base, shifted, 4).item() > 0);
}

TEST_CASE("total loss") {
  auto a = random_tensor<D>({2, 1, 16, 16}, 1, 0, 1), b = random_tensor<D>({2, 1, 16, 16}, 2, 0, 1);
  Tensor<D> tri({2, 1, 16, 16});
  for (Index i = 0; i < tri.numel(); ++i) tri.mutable_data()[i] = (i % 3) * 0.5;
  auto m = TrimapMask<D>::from_trimap(tri);

  auto same = total_loss(a, a, m);
  CHECK(std::abs(same.total.item() - 1e-6) <= 1e-9);
  CHECK(same.l1.item() == 0.0);
  CHECK(same.laplacian.item() == 0.0);

  auto t = total_loss(a, b, m);
  CHECK(t.total.item() == (t.l1.item() + t.charbonnier.item()) + t.laplacian.item());
  CHECK(t.l1.item() >= 0);
  CHECK(t.charbonnier.item() >= 1e-6);
  CHECK(t.laplacian.item() >= 0);

  SUBCASE("finite-difference gradient on 8x8") {
    auto x = random_tensor<D>({1, 1, 8, 8}, 5, 0, 1), gt = random_tensor<D>({1, 1, 8, 8}, 6, 0, 1);
    auto mk = TrimapMask<D>::from_trimap(trimap_with_unknown(8, 8, 7));
    auto r = grad_check([&] { return total_loss(x, gt, mk, {{1e-6}, 3}).total; }, {x}, 1e-7);
    CHECK(r.rel_err < 1e-5);
  }

  SUBCASE("gradients stay finite on boundary values") {
    Tensor<D> x({1, 1, 8, 8}, 0.0), gt({1, 1, 8, 8}, 1.0);
    for (Index i = 0; i < 32; ++i) x.mutable_data()[i] = 1.0;
    x.set_requires_grad(true);
    auto mk = TrimapMask<D>::from_trimap(Tensor<D>({1, 1, 8, 8}, 0.5));
    Tape<D> tape;
    TapeScope<D> scope(tape);
    tape.backward(total_loss(x, gt, mk, {{1e-6}, 3}).total);
    for (D g : x.grad()) CHECK(std::isfinite(g));
  }
}
