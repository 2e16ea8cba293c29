#include <filesystem>
#include <fstream>
#include <set>

#include "aem/study.hpp"
#include "doctest.h"
#include "support/gradcheck.hpp"

using namespace aem;
using namespace aem::study;
using aem::testing::random_tensor;

namespace {

std::vector<data::CompositeSample> set_of(Index n, std::uint64_t seed, Index canvas = 64) {
  data::SynthSpec spec;
  spec.seed = seed;
  spec.canvas = canvas;
  if (canvas < 64) spec.trimap_radius = 2;
  return data::synth_dataset(spec, n);
}

train::TrainConfig quick_train() {
  train::TrainConfig cfg;
  cfg.batch_size = 2;
  cfg.steps = 2;
  cfg.optimizer.lr = 1e-3;
  return cfg;
}

std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("aem_test_study_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace

TEST_CASE("csv rows round trip") {
  const auto dir = temp_dir("csv");
  std::vector<StudyRow> rows{{"trimap", "d=0", 3, 0.1, 1.0 / 3.0, 2e-17, 4.5, "hash=ab12;unk=7"},
                             {"patch-infer", "whole", 3, 0, 0, 0, 0, ""}};
  write_csv(dir / "r.csv", rows);
  std::ifstream in(dir / "r.csv");
  std::string header;
  std::getline(in, header);
  CHECK(header == "protocol,setting,seed,sad,mse,grad,conn,extra");
  CHECK(read_csv(dir / "r.csv") == rows);
  CHECK(extra_value(rows[0].extra, "unk") == "7");
  CHECK(extra_value(rows[0].extra, "nope").empty());
  rows[0].extra = "a,b";
  CHECK_THROWS_AS(format_row(rows[0]), std::invalid_argument);
  std::filesystem::remove_all(dir);
}

TEST_CASE("non-overlapping tiles equal stitched per-tile predictions") {
  const auto w = build_model<float>(AEMatterConfig::reduced(), 4);
  const auto s = set_of(1, 2)[0];
  const Plane tiled = predict_tiled(w, s.image, s.trimap, 32, 32);
  for (Index ty = 0; ty < 2; ++ty)
    for (Index tx = 0; tx < 2; ++tx) {
      const auto tile = data::crop_sample(s, 32 * ty, 32 * tx, 32, 32);
      const Plane p = train::predict(w, tile.image, tile.trimap);
      for (Index y = 0; y < 32; ++y)
        for (Index x = 0; x < 32; ++x) REQUIRE(tiled.at(32 * ty + y, 32 * tx + x) == p.at(y, x));
    }
  CHECK_THROWS_AS(predict_tiled(w, s.image, s.trimap, 16, 8), std::invalid_argument);
  // A tile at least as large as the image is the whole-image prediction.
  CHECK(predict_tiled(w, s.image, s.trimap, 96, 48) == train::predict(w, s.image, s.trimap));
}

TEST_CASE("feathered tiling of a constant output stays constant") {
  auto w = build_model<float>(AEMatterConfig::reduced(), 4);
  nn::zero_out(w.head);
  for (auto& v : w.head.bias.mutable_data()) v = 0.3f;
  const auto s = set_of(1, 2)[0];
  const Plane p = predict_tiled(w, s.image, s.trimap, 32, 16);
  for (float v : p.data) CHECK(v == doctest::Approx(0.3).epsilon(1e-6));
}

TEST_CASE("patch inference rows") {
  const auto w = build_model<float>(AEMatterConfig::reduced(), 4);
  const auto samples = set_of(2, 8);
  const StudyContext ctx{"cafe", 4};
  const auto rows = patch_inference_study(w, samples, {32, 48}, ctx);
  REQUIRE(rows.size() == 3);
  CHECK(rows[0].setting == "tile=32");
  CHECK(rows[2].setting == "whole");
  CHECK(extra_value(rows[2].extra, "hash") == "cafe");
  std::vector<metrics::MetricReport> direct;
  for (const auto& s : samples) direct.push_back(metrics::evaluate(train::predict(w, s.image, s.trimap), s.alpha, s.trimap));
  const auto m = metrics::mean_report(direct);
  CHECK(rows[2].sad == m.sad);
  CHECK(rows[2].mse == m.mse);
  CHECK(rows[2].grad == m.grad);
  CHECK(rows[2].conn == m.conn);
  CHECK_THROWS_AS(patch_inference_study(w, samples, {16}, ctx), std::invalid_argument);
}

TEST_CASE("training plan keeps the pixel budget") {
  const auto plan = training_plan({32, 64, 48}, 9, 2, 4);
  REQUIRE(plan.size() == 3);
  CHECK(plan[0] == TrainingPlan{32, 36});
  CHECK(plan[1] == TrainingPlan{64, 9});
  CHECK(plan[2] == TrainingPlan{48, 16});
  CHECK_THROWS_AS(training_plan({32, 64}, 1, 2, 8), std::invalid_argument);
  CHECK_THROWS_AS(training_plan({64}, 4, 2, 2), std::invalid_argument);
}

TEST_CASE("patch training is reproducible and survives csv") {
  const auto train_set = set_of(2, 1), eval = set_of(1, 9);
  const auto plan = training_plan({32, 64}, 1, 2, 2);
  const StudyContext ctx{"beef", 6};
  const auto a = patch_training_study(AEMatterConfig::reduced(), quick_train(), train_set, eval, plan, ctx, 1, 32);
  const auto b = patch_training_study(AEMatterConfig::reduced(), quick_train(), train_set, eval, plan, ctx, 1, 32);
  REQUIRE(a.rows.size() == 2);
  CHECK(a.rows == b.rows);
  CHECK(extra_value(a.rows[0].extra, "steps") == "4");
  CHECK(extra_value(a.rows[1].extra, "steps") == "1");
  CHECK_FALSE(extra_value(a.rows[0].extra, "erf_area").empty());
  const auto dir = temp_dir("train");
  write_csv(dir / "rows.csv", a.rows);
  CHECK(read_csv(dir / "rows.csv") == a.rows);
  std::filesystem::remove_all(dir);
}

TEST_CASE("trimap robustness rows") {
  const auto w = build_model<float>(AEMatterConfig::reduced(), 4);
  const auto samples = set_of(2, 3);
  const auto rows = trimap_robustness_study(w, samples, {4, 0, 2}, StudyContext{"aa", 1});
  REQUIRE(rows.size() == 3);
  CHECK(rows[0].setting == "d=0");
  CHECK(rows[1].setting == "d=2");
  CHECK(rows[2].setting == "d=4");
  for (std::size_t i = 1; i < rows.size(); ++i)
    CHECK(std::stoll(extra_value(rows[i].extra, "unk")) >= std::stoll(extra_value(rows[i - 1].extra, "unk")));
  auto base = samples;
  for (auto& s : base) s.trimap = data::make_trimap(s.alpha, 0);
  const auto m = evaluate_model(w, base);
  CHECK(rows[0].sad == m.sad);
  CHECK(rows[0].mse == m.mse);
}

TEST_CASE("kernel variants") {
  const auto base = AEMatterConfig::reduced();
  const auto w1 = build_model<float>(kernel_variant(base, 1), 0);
  const auto w3 = build_model<float>(kernel_variant(base, 3), 0);
  const auto w5 = build_model<float>(kernel_variant(base, 5), 0);
  const auto ref = build_model<float>(base, 0);
  CHECK(w3.params.names() == ref.params.names());
  for (std::size_t i = 0; i < ref.params.size(); ++i)
    CHECK(w3.params.items()[i].tensor.shape() == ref.params.items()[i].tensor.shape());
  CHECK(count_parameters(w1.params) < count_parameters(w3.params));
  CHECK(count_parameters(w3.params) < count_parameters(w5.params));
  const auto img = random_tensor<float>({1, 3, 32, 64}, 3, 0, 1);
  const Tensor<float> tri({1, 1, 32, 64}, 0.5f);
  for (const auto* w : {&w1, &w3, &w5}) CHECK(model_forward(img, tri, *w).shape() == Shape{1, 1, 32, 64});

  auto small_patch = quick_train();
  small_patch.patch_size = 32;
  const auto rows = kernel_size_study(base, small_patch, set_of(2, 1, 32), set_of(1, 2, 32), {1, 3}, StudyContext{"k", 0});
  REQUIRE(rows.size() == 2);
  CHECK(std::stoll(extra_value(rows[0].extra, "params")) < std::stoll(extra_value(rows[1].extra, "params")));
}

TEST_CASE("erf of a local conv stack stays within its receptive field") {
  const Index H = 21, W = 17;
  const auto k1 = random_tensor<float>({4, 3, 3, 3}, 1, -1, 1), k2 = random_tensor<float>({1, 4, 3, 3}, 2, -1, 1);
  const Tensor<float> b1({4}, 0.1f), b2({1}, 0.f);
  const ProbeForward f = [&](const Tensor<float>& x, Index) {
    return ops::conv2d(ops::gelu(ops::conv2d(x, k1, b1, 1, 1)), k2, b2, 1, 1);
  };
  std::vector<RGBImage> probes;
  for (int k = 0; k < 3; ++k) {
    RGBImage img(H, W);
    const auto t = random_tensor<float>({3 * H * W}, 10 + k, 0, 1);
    std::copy(t.data().begin(), t.data().end(), img.data.begin());
    probes.push_back(img);
  }
  const auto m = erf_map(f, probes);
  CHECK(m.values.height == H);
  CHECK(m.values.width == W);
  CHECK(m.area <= 25);
  CHECK(m.area >= 1);
  CHECK(*std::max_element(m.values.data.begin(), m.values.data.end()) == 1.f);
  CHECK(m.values.at(H / 2, W / 2) > 0.f);
  for (Index y = 0; y < H; ++y)
    for (Index x = 0; x < W; ++x)
      if (std::abs(y - H / 2) > 2 || std::abs(x - W / 2) > 2) CHECK(m.values.at(y, x) == 0.f);
}

TEST_CASE("erf of the model") {
  const auto w = build_model<float>(AEMatterConfig::reduced(), 4);
  const auto m = erf_map(w, 32, 2, 5);
  CHECK(m.values.height == 32);
  CHECK(*std::max_element(m.values.data.begin(), m.values.data.end()) == 1.f);
  CHECK(m.values.at(16, 16) > 0.f);
  for (float v : m.values.data) {
    CHECK(v >= 0.f);
    CHECK(v <= 1.f);
  }
  const auto dir = temp_dir("erf");
  write_pgm(dir / "erf.pgm", m.values);
  const auto back = read_pgm(dir / "erf.pgm");
  CHECK(back.height == 32);
  CHECK(back.width == 32);
  std::filesystem::remove_all(dir);
}

TEST_CASE("plots and trends") {
  const auto dir = temp_dir("svg");
  write_svg_plot(dir / "p.svg", "MSE vs d", "d", "MSE", {{"seed 0", {0, 2, 4}, {1, 2, 2}}});
  std::ifstream in(dir / "p.svg");
  std::string all((std::istreambuf_iterator<char>(in)), {});
  CHECK(all.find("<svg") != std::string::npos);
  CHECK(all.find("polyline") != std::string::npos);
  std::filesystem::remove_all(dir);
  CHECK(trend_direction({1, 2, 2}) == "non-decreasing");
  CHECK(trend_direction({3, 2}) == "non-increasing");
  CHECK(trend_direction({1, 1}) == "flat");
  CHECK(trend_direction({1, 3, 2}) == "mixed");
}
