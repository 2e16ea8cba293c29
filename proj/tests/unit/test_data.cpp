#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "aem/data.hpp"
#include "doctest.h"

using namespace aem;
using namespace aem::data;

namespace {

// Direct definition: a set pixel survives iff every in-image pixel within d is set.
std::vector<std::uint8_t> brute_erode(const std::vector<std::uint8_t>& m, Index H, Index W, double d) {
  std::vector<std::uint8_t> out(m.size(), 0);
  const Index r = static_cast<Index>(std::ceil(d));
  for (Index y = 0; y < H; ++y)
    for (Index x = 0; x < W; ++x) {
      if (!m[y * W + x]) continue;
      bool ok = true;
      for (Index dy = -r; dy <= r && ok; ++dy)
        for (Index dx = -r; dx <= r && ok; ++dx) {
          const Index yy = y + dy, xx = x + dx;
          if (yy < 0 || xx < 0 || yy >= H || xx >= W) continue;
          if (double(dy * dy + dx * dx) <= d * d && !m[yy * W + xx]) ok = false;
        }
      out[y * W + x] = ok;
    }
  return out;
}

std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("aem_test_data_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

double max_blend_error(const CompositeSample& s) {
  double worst = 0;
  const Index HW = s.alpha.size();
  for (Index c = 0; c < 3; ++c)
    for (Index i = 0; i < HW; ++i) {
      const std::size_t k = static_cast<std::size_t>(c * HW + i);
      const double a = s.alpha.data[static_cast<std::size_t>(i)];
      worst = std::max(worst, std::abs(s.image.data[k] - (a * s.fg.data[k] + (1 - a) * s.bg.data[k])));
    }
  return worst;
}

}  // namespace

TEST_CASE("composite of fixed pixels") {
  RGBImage f(1, 3, 0.f), b(1, 3, 0.f);
  Plane a(1, 3);
  a.data = {0.f, 0.25f, 1.f};
  for (Index c = 0; c < 3; ++c)
    for (Index x = 0; x < 3; ++x) {
      f.at(c, 0, x) = 0.8f;
      b.at(c, 0, x) = 0.4f;
    }
  const auto img = composite(f, b, a);
  CHECK(img.at(0, 0, 0) == doctest::Approx(0.4));
  CHECK(img.at(1, 0, 1) == doctest::Approx(0.5));
  CHECK(img.at(2, 0, 2) == doctest::Approx(0.8));
  CHECK_THROWS_AS(composite(f, b, Plane(2, 3)), ShapeError);
  RGBImage f2(1, 1, 0.8f), b2(1, 1, 0.2f);
  const auto half = composite(f2, b2, Plane(1, 1, 0.5f));
  for (Index c = 0; c < 3; ++c) CHECK(half.at(c, 0, 0) == doctest::Approx(0.5).epsilon(1e-7));
}

TEST_CASE("erosion matches the direct disk definition") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 400; ++trial) {
    const Index H = 5 + rng() % 12, W = 5 + rng() % 12;
    const double d = static_cast<double>(rng() % 5) + (trial % 3 == 0 ? 0.5 : 0.0);
    std::vector<std::uint8_t> m(static_cast<std::size_t>(H * W));
    const int density = 50 + static_cast<int>(rng() % 50);
    for (auto& v : m) v = static_cast<int>(rng() % 100) < density;
    REQUIRE(erode_disk(m, H, W, d) == brute_erode(m, H, W, d));
  }
}

TEST_CASE("erosion of a 9x9 disk by radius 2") {
  const Index n = 9;
  std::vector<std::uint8_t> m(n * n);
  for (Index y = 0; y < n; ++y)
    for (Index x = 0; x < n; ++x) m[y * n + x] = (y - 4) * (y - 4) + (x - 4) * (x - 4) <= 16;
  const auto e = erode_disk(m, n, n, 2);
  // Survivors are exactly the pixels whose radius-2 neighbourhood stays in the disk.
  CHECK(e == brute_erode(m, n, n, 2));
  CHECK(e[4 * n + 4] == 1);
  CHECK(e[4 * n + 2] == 1);
  CHECK(e[4 * n + 1] == 0);
  CHECK(e[0] == 0);
}

TEST_CASE("make_trimap at d = 0 equals thresholding, and grows with d") {
  std::mt19937_64 rng(3);
  Plane a(20, 24);
  for (auto& v : a.data) {
    const auto r = rng() % 4;
    v = r == 0 ? 0.f : r == 1 ? 1.f : static_cast<float>((rng() % 1000) / 1000.0);
  }
  const auto t0 = make_trimap(a, 0);
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    const std::uint8_t expect = a.data[i] >= 1.f - 1e-6f ? trimap_code::foreground
                                : a.data[i] <= 1e-6f     ? trimap_code::background
                                                         : trimap_code::unknown;
    CHECK(t0.labels[i] == expect);
  }
  Index prev = t0.unknown_count();
  for (double d : {1.0, 2.0, 3.0, 5.0}) {
    const auto t = make_trimap(a, d);
    CHECK(t.unknown_count() >= prev);
    for (std::size_t i = 0; i < a.data.size(); ++i)
      if (t0.labels[i] == trimap_code::unknown) CHECK(t.labels[i] == trimap_code::unknown);
    prev = t.unknown_count();
  }
}

TEST_CASE("synthetic samples are deterministic and self-consistent") {
  SynthSpec spec;
  spec.seed = 42;
  const auto a = synth_sample(spec, 5), b = synth_sample(spec, 5), c = synth_sample(spec, 6);
  CHECK(a == b);
  CHECK_FALSE(a == c);
  for (Index i = 0; i < 24; ++i) {
    const auto s = synth_sample(spec, i);
    CHECK(max_blend_error(s) <= 1e-6);
    bool fractional = false;
    for (float v : s.alpha.data) {
      CHECK(v >= 0.f);
      CHECK(v <= 1.f);
      fractional |= v > 0.f && v < 1.f;
    }
    CHECK(fractional);
    const double unk = double(s.trimap.unknown_count()) / double(s.alpha.size());
    CHECK(unk >= spec.min_unknown);
    CHECK(unk <= spec.max_unknown);
    CHECK(s.trimap == make_trimap(s.alpha, spec.trimap_radius));
  }
}

TEST_CASE("every shape family produces a valid sample") {
  for (auto fam : {ShapeFamily::disk, ShapeFamily::ring, ShapeFamily::blob, ShapeFamily::strokes,
                   ShapeFamily::gradient}) {
    SynthSpec spec;
    spec.families = {fam};
    for (Index i = 0; i < 4; ++i) CHECK_NOTHROW(synth_sample(spec, i));
  }
}

TEST_CASE("patch sampling") {
  SynthSpec spec;
  const auto s = synth_sample(spec, 1);
  std::mt19937_64 rng(9);
  CHECK(sample_patch(s, 64, rng) == s);
  CHECK_THROWS_AS(sample_patch(s, 65, rng), std::invalid_argument);

  int unknown_centres = 0;
  for (int k = 0; k < 1000; ++k) {
    const auto p = sample_patch(s, 32, rng);
    REQUIRE(p.alpha.height == 32);
    if (k < 50) CHECK(max_blend_error(p) <= 1e-6);
    unknown_centres += p.trimap.at(16, 16) == trimap_code::unknown;
  }
  CHECK(unknown_centres >= 950);
}

TEST_CASE("flip and augmentation") {
  SynthSpec spec;
  const auto s = synth_sample(spec, 2);
  CHECK(flip_sample(flip_sample(s)) == s);
  const auto f = flip_sample(s);
  CHECK(f.alpha.at(3, 0) == s.alpha.at(3, 63));

  std::mt19937_64 rng(4);
  AugmentConfig cfg;
  for (int k = 0; k < 20; ++k) {
    const auto a = augment(s, cfg, rng);
    CHECK(a.alpha.height == 64);
    CHECK(a.alpha.width == 64);
    CHECK(max_blend_error(a) <= 1e-6);
    for (float v : a.alpha.data) {
      CHECK(v >= 0.f);
      CHECK(v <= 1.f);
    }
    for (auto l : a.trimap.labels)
      CHECK((l == trimap_code::background || l == trimap_code::unknown || l == trimap_code::foreground));
  }
}

TEST_CASE("png round trips") {
  const auto dir = temp_dir("png");
  SynthSpec spec;
  const auto s = synth_sample(spec, 0);
  save_png(dir / "t.png", s.trimap);
  CHECK(load_png_trimap(dir / "t.png") == s.trimap);
  save_png(dir / "a.png", s.alpha);
  const auto a = load_png_gray(dir / "a.png");
  for (std::size_t i = 0; i < a.data.size(); ++i) CHECK(std::abs(a.data[i] - s.alpha.data[i]) <= 0.5f / 255.f + 1e-6f);
  save_png(dir / "i.png", s.image);
  const auto img = load_png_rgb(dir / "i.png");
  REQUIRE(img.data.size() == s.image.data.size());
  for (std::size_t i = 0; i < img.data.size(); ++i) CHECK(std::abs(img.data[i] - s.image.data[i]) <= 0.5f / 255.f + 1e-6f);

  std::ofstream(dir / "bad.png") << "not a png";
  CHECK_THROWS_AS(load_png_rgb(dir / "bad.png"), ImageIOError);
  CHECK_THROWS_AS(load_png_gray(dir / "missing.png"), ImageIOError);
  Plane odd(4, 4, 7.f / 255.f);
  save_png(dir / "odd.png", odd);
  CHECK_THROWS_AS(load_png_trimap(dir / "odd.png"), ImageIOError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("dataset round trip") {
  const auto dir = temp_dir("set");
  SynthSpec spec;
  spec.seed = 7;
  const auto samples = synth_dataset(spec, 3);
  write_dataset(dir, samples);
  const auto rows = read_manifest(dir);
  REQUIRE(rows.size() == 3);
  CHECK(rows[1].id == "0001");
  {
    std::ifstream in(dir / "manifest.csv");
    std::string header;
    std::getline(in, header);
    CHECK(header == "id,width,height,unk_fraction");
  }
  CHECK(rows[1].width == 64);
  CHECK(rows[2].unknown_fraction ==
        doctest::Approx(double(samples[2].trimap.unknown_count()) / 4096.0).epsilon(1e-5));
  const auto back = read_dataset(dir);
  REQUIRE(back.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(back[i].trimap == samples[i].trimap);
    CHECK_FALSE(back[i].has_layers());
  }
  std::filesystem::remove(dir / "alpha" / "0002.png");
  CHECK_THROWS_AS(read_dataset(dir), ImageIOError);
  std::filesystem::remove_all(dir);
}
