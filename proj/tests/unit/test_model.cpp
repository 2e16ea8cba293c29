#include <cmath>
#include <filesystem>
#include <random>

#include "aem/model.hpp"
#include "doctest.h"
#include "support/gradcheck.hpp"

using namespace aem;
using aem::testing::grad_check;
using aem::testing::random_tensor;

namespace {

using D = double;

Tensor<D> random_trimap(Index n, Index h, Index w, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Tensor<D> t({n, 1, h, w});
  const D codes[3] = {0.0, 128.0 / 255.0, 1.0};
  for (auto& v : t.mutable_data()) v = codes[rng() % 3];
  return t;
}

template <typename T>
bool bit_equal(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) return false;
  for (Index i = 0; i < a.numel(); ++i)
    if (a.at(i) != b.at(i)) return false;
  return true;
}

// Parameter count derived by walking the architecture by hand, independent
// of the builder.
Index expected_parameters(const AEMatterConfig& c) {
  auto conv = [](Index in, Index out, Index k) { return out * in * k * k + out; };
  auto norm = [](Index ch) { return 2 * ch; };
  auto conv_block = [&](Index in, Index out, Index k2) { return conv(in, out, 3) + conv(out, out, k2) + 2 * out; };
  auto res = [&](Index ch, Index k) { return 2 * conv(ch, ch, k) + ch; };
  auto mlp = [&](Index ch) { return conv(ch, 4 * ch, 1) + conv(4 * ch, ch, 1); };
  auto swin = [&](Index ch, Index heads) {
    return 2 * norm(ch) + conv(ch, 3 * ch, 1) + conv(ch, ch, 1) + (2 * c.window - 1) * (2 * c.window - 1) * heads +
           mlp(ch);
  };
  auto band = [](Index d) { return 3 * d * d + 3 * d + d * d + d; };
  const Index cx = c.aeal.context_dim;
  auto aeal = [&] {
    return conv(2 * cx, cx, 1) + res(cx, c.aeal_res_kernel) + conv(cx, cx, 1) + 2 * norm(cx) + 2 * band(cx / 2) +
           mlp(cx);
  };
  Index n = conv_block(c.in_channels, c.stem[0], c.fusion_kernel) + conv_block(c.stem[0], c.stem[1], c.fusion_kernel);
  n += conv(c.stem[1], c.stages[0], 3) + norm(c.stages[0]);
  for (int s = 0; s < 4; ++s) {
    if (s > 0) n += norm(4 * c.stages[s - 1]) + conv(4 * c.stages[s - 1], c.stages[s], 1);
    n += c.blocks[s] * swin(c.stages[s], c.heads[s]) + norm(c.stages[s]);
  }
  n += conv(c.stages[3], cx, 1) + res(cx, 3);
  n += conv(c.stages[3] + c.stages[2], cx, 1) + res(cx, 3) + conv(cx, cx, 3);
  n += c.aeal.count * aeal();
  n += conv(cx + c.stages[3], c.stages[3], 1) + c.decoder_blocks * swin(c.stages[3], c.heads[3]);
  for (int l = 2; l >= 0; --l)
    n += conv(c.stages[l + 1] + c.stages[l], c.stages[l], 1) + c.decoder_blocks * swin(c.stages[l], c.heads[l]);
  n += conv_block(c.stages[0] + c.stem[1], c.stem[1], c.fusion_kernel);
  n += conv_block(c.stem[1] + c.stem[0], c.stem[0], c.fusion_kernel);
  n += conv(c.stem[0], 1, 3);
  return n;
}

}  // namespace

TEST_CASE("config validation") {
  CHECK_NOTHROW(AEMatterConfig::toy().validate());
  CHECK_NOTHROW(AEMatterConfig::reduced().validate());
  CHECK_NOTHROW(AEMatterConfig::small().validate());
  auto bad = AEMatterConfig::toy();
  bad.stages[2] = 100;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = AEMatterConfig::toy();
  bad.aeal.count = 0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = AEMatterConfig::toy();
  bad.fusion_kernel = 2;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("parameter counts") {
  ParameterSet<float> empty;
  CHECK(count_parameters(empty) == 0);
  ParameterSet<float> one;
  nn::make_conv(nn::ParamBuilder<float>(one, 1), 4, 8, 3);
  CHECK(count_parameters(one) == 296);
  for (const auto& cfg : {AEMatterConfig::toy(), AEMatterConfig::reduced(), AEMatterConfig::small()}) {
    auto w = build_model<float>(cfg, 1);
    CHECK(count_parameters(w.params) == expected_parameters(cfg));
  }
  CHECK(count_parameters(build_model<float>(AEMatterConfig::small(), 1).params) < 1000000);
}

TEST_CASE("encoder feature ladder") {
  const auto cfg = AEMatterConfig::reduced();
  auto w = build_model<D>(cfg, 3);
  auto f = encoder_forward(random_tensor<D>({1, 6, 64, 64}, 1, 0, 1), w);
  CHECK(f.d1.shape() == Shape{1, cfg.stem[0], 64, 64});
  CHECK(f.d2.shape() == Shape{1, cfg.stem[1], 32, 32});
  for (int s = 0; s < 4; ++s) {
    const Index side = 64 >> (s + 2);
    CHECK(f.f[s].shape() == Shape{1, cfg.stages[s], side, side});
  }
  CHECK_THROWS_AS(encoder_forward(random_tensor<D>({1, 6, 16, 16}, 1), w), ShapeError);
  CHECK_THROWS_AS(encoder_forward(random_tensor<D>({1, 6, 48, 64}, 1), w), ShapeError);
  CHECK_THROWS_AS(encoder_forward(random_tensor<D>({1, 5, 64, 64}, 1), w), ShapeError);
}

TEST_CASE("all-zero input gives finite outputs") {
  auto w = build_model<float>(AEMatterConfig::reduced(), 4);
  auto f = encoder_forward(Tensor<float>({1, 6, 32, 32}, 0.f), w);
  for (const auto& t : f.f)
    for (float v : t.data()) CHECK(std::isfinite(v));
  auto a = model_forward(Tensor<float>({1, 3, 32, 32}, 0.f), Tensor<float>({1, 1, 32, 32}, 0.f), w);
  for (float v : a.data()) CHECK(std::isfinite(v));
}

TEST_CASE("aeal stack shape, identity and gradient reach") {
  const auto cfg = AEMatterConfig::reduced();
  auto w = build_model<D>(cfg, 5);
  auto f3 = random_tensor<D>({1, cfg.stages[2], 4, 4}, 1).set_requires_grad(true);
  auto f4 = random_tensor<D>({1, cfg.stages[3], 2, 2}, 2).set_requires_grad(true);
  {
    Tape<D> tape;
    TapeScope<D> scope(tape);
    auto frc = aeal_stack_forward(f3, f4, w);
    CHECK(frc.shape() == Shape{1, cfg.aeal.context_dim, 2, 2});
    tape.backward(ops::sum(ops::square(frc)));
  }
  double g3 = 0, g4 = 0;
  for (double g : f3.grad()) g3 += std::abs(g);
  for (double g : f4.grad()) g4 += std::abs(g);
  CHECK(g3 > 0);
  CHECK(g4 > 0);

  CHECK_THROWS_AS(aeal_stack_forward(random_tensor<D>({1, cfg.stages[2], 6, 4}, 1), f4, w), ShapeError);

  for (auto& blk : w.aeal) {
    nn::zero_out(blk.ae.out);
    nn::zero_out(blk.ffn.fc2);
    for (auto* b : {&blk.attn.x_branch, &blk.attn.y_branch}) {
      for (auto& v : b->proj_weight.mutable_data()) v = 0;
      for (auto& v : b->proj_bias.mutable_data()) v = 0;
    }
  }
  NoGradScope<D> off;
  auto fc = nn::residual_block(nn::conv(f4, w.context_proj), w.context_res);
  CHECK(bit_equal(aeal_stack_forward(f3, f4, w), fc));
}

TEST_CASE("output resolution and clip contract") {
  auto w = build_model<float>(AEMatterConfig::reduced(), 6);
  for (auto [h, wd] : {std::pair<Index, Index>{64, 64}, {96, 96}, {64, 96}, {40, 70}, {33, 32}}) {
    auto img = random_tensor<float>({2, 3, h, wd}, 7, 0, 1);
    auto tri = random_tensor<float>({2, 1, h, wd}, 8, 0, 1);
    auto r = model_forward_full(img, tri, w);
    CHECK(r.alpha.shape() == Shape{2, 1, h, wd});
    CHECK(r.raw.shape() == Shape{2, 1, h, wd});
    for (float v : r.alpha.data()) {
      CHECK(v >= 0.f);
      CHECK(v <= 1.f);
    }
  }
}

TEST_CASE("clip holds even when the head saturates") {
  auto w = build_model<float>(AEMatterConfig::reduced(), 6);
  for (auto& v : w.head.weight.mutable_data()) v = 0.f;
  for (auto& v : w.head.bias.mutable_data()) v = 5.f;
  auto a = model_forward(random_tensor<float>({1, 3, 32, 32}, 1, 0, 1), Tensor<float>({1, 1, 32, 32}, 1.f), w);
  for (float v : a.data()) CHECK(v == 1.f);
  for (auto& v : w.head.bias.mutable_data()) v = -5.f;
  a = model_forward(random_tensor<float>({1, 3, 32, 32}, 1, 0, 1), Tensor<float>({1, 1, 32, 32}, 1.f), w);
  for (float v : a.data()) CHECK(v == 0.f);
}

TEST_CASE("model input validation") {
  auto w = build_model<float>(AEMatterConfig::reduced(), 6);
  CHECK_THROWS_AS(model_forward(Tensor<float>({1, 3, 32, 32}), Tensor<float>({1, 1, 32, 64}), w), ShapeError);
  CHECK_THROWS_AS(model_forward(Tensor<float>({1, 3, 16, 32}), Tensor<float>({1, 1, 16, 32}), w), ShapeError);
  CHECK_THROWS_AS(model_forward(Tensor<float>({1, 4, 32, 32}), Tensor<float>({1, 1, 32, 32}), w), ShapeError);
}

TEST_CASE("trimap one-hot ordering") {
  Tensor<float> t({1, 1, 1, 3}, {0.f, 128.f / 255.f, 1.f});
  auto oh = trimap_one_hot(t);
  const std::vector<float> expect{1, 0, 0, 0, 1, 0, 0, 0, 1};
  CHECK(std::vector<float>(oh.data().begin(), oh.data().end()) == expect);
}

TEST_CASE("forward is deterministic") {
  auto w = build_model<float>(AEMatterConfig::reduced(), 9);
  auto img = random_tensor<float>({1, 3, 64, 64}, 1, 0, 1);
  auto tri = random_tensor<float>({1, 1, 64, 64}, 2, 0, 1);
  CHECK(bit_equal(model_forward(img, tri, w), model_forward(img, tri, w)));
  auto w2 = build_model<float>(AEMatterConfig::reduced(), 9);
  CHECK(bit_equal(model_forward(img, tri, w), model_forward(img, tri, w2)));
}

TEST_CASE("full model finite-difference gradient at reduced size") {
  auto w = build_model<D>(AEMatterConfig::reduced(), 10);
  std::mt19937_64 rng(11);
  std::normal_distribution<double> nd(0.0, 0.05);
  for (auto& p : w.params.items())
    for (auto& v : p.tensor.mutable_data()) v += nd(rng);
  auto img = random_tensor<D>({1, 3, 32, 32}, 12, 0, 1);
  auto tri = random_trimap(1, 32, 32, 13);
  std::vector<Tensor<D>> wrt;
  for (auto& p : w.params.items()) wrt.push_back(p.tensor);
  wrt.push_back(img);
  auto r = grad_check([&] { return model_forward(img, tri, w); }, wrt, 1e-6, 14, 3);
  INFO("rel " << r.rel_err << " over " << r.checked << " entries");
  CHECK(r.rel_err < 1e-5);
}

TEST_CASE("checkpoint round trip is byte-identical and restores outputs") {
  auto w = build_model<float>(AEMatterConfig::reduced(), 15);
  const std::vector<CheckpointSection> sections{{"train", {1, 2, 3}}, {"config", {'a', '=', '1'}}};
  auto bytes = serialize_checkpoint(w.params, sections);
  auto fresh = build_model<float>(AEMatterConfig::reduced(), 99);
  auto back = deserialize_checkpoint(bytes, fresh.params);
  CHECK(back == sections);
  CHECK(serialize_checkpoint(fresh.params, back) == bytes);
  auto img = random_tensor<float>({1, 3, 32, 32}, 1, 0, 1);
  auto tri = random_tensor<float>({1, 1, 32, 32}, 2, 0, 1);
  CHECK(bit_equal(model_forward(img, tri, w), model_forward(img, tri, fresh)));

  const auto path = std::filesystem::temp_directory_path() / "aem_test_ckpt.bin";
  save_checkpoint(path, w.params, sections);
  CHECK(read_file_bytes(path) == bytes);
  auto third = build_model<float>(AEMatterConfig::reduced(), 7);
  CHECK(load_checkpoint(path, third.params) == sections);
  std::filesystem::remove(path);

  SUBCASE("f32 checkpoint loads into an f64 model") {
    auto wd = build_model<D>(AEMatterConfig::reduced(), 3);
    deserialize_checkpoint(bytes, wd.params);
    CHECK(wd.params.items()[0].tensor.at(0) == static_cast<D>(w.params.items()[0].tensor.at(0)));
  }
}

TEST_CASE("checkpoint errors") {
  auto w = build_model<float>(AEMatterConfig::reduced(), 1);
  auto bytes = serialize_checkpoint(w.params);
  auto other = build_model<float>(AEMatterConfig::small(), 1);
  CHECK_THROWS_AS(deserialize_checkpoint(bytes, other.params), CheckpointError);
  auto bad = bytes;
  bad[0] = 'X';
  CHECK_THROWS_AS(deserialize_checkpoint(bad, w.params), CheckpointError);
  auto truncated = std::vector<std::uint8_t>(bytes.begin(), bytes.begin() + static_cast<long>(bytes.size() / 2));
  CHECK_THROWS_AS(deserialize_checkpoint(truncated, w.params), CheckpointError);
  CHECK_THROWS_AS(load_checkpoint("/nonexistent/ckpt.bin", w.params), CheckpointError);
}
