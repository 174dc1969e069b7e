#include "doctest.h"

#include <cmath>
#include <memory>

#include "sslf/fusion.hpp"
#include "sslf/gradcheck.hpp"

using namespace sslf;

namespace {

UNetConfig tiny_unet_config() {
  UNetConfig cfg;
  cfg.base_channels = 2;
  cfg.depth = 1;
  cfg.norm = NormKind::kGroup;
  return cfg;  // bottleneck width 4
}

BackboneConfig tiny_backbone_config() {
  BackboneConfig cfg;
  cfg.stem_channels = 8;
  cfg.stages = {{1, 8, 1, 1, 3}};
  cfg.feature_dim = 8;
  cfg.norm = NormKind::kGroup;
  return cfg;  // cumulative stride 2
}

Tensor random_batch(std::size_t n, std::size_t h, std::size_t w, Rng& rng) {
  Tensor t = Tensor::zeros({n, 3, h, w});
  for (std::size_t i = 0; i < t.size(); ++i) t.at(i) = static_cast<float>(rng.next_double());
  return t;
}

template <class T>
FusedModelT<T> make_variant(VariantKind variant, std::uint64_t seed, bool freeze = true,
                            BackboneInput input = BackboneInput::kReconstruction) {
  FusionConfig cfg;
  cfg.variant = variant;
  cfg.head_dims = {8};
  cfg.common_dim = 8;
  cfg.dropout = 0.0;
  cfg.freeze_unet_encoder = freeze;
  cfg.backbone_input = input;
  UNetConfig ucfg = tiny_unet_config();
  BackboneConfig bcfg = tiny_backbone_config();
  auto unet = std::make_shared<UNetModelT<T>>(build_unet<T>(ucfg, seed));
  auto backbone = std::make_shared<BackboneModelT<T>>(build_backbone<T>(bcfg, seed + 1));
  return build_fused<T>(cfg, unet, backbone, seed + 2);
}

}  // namespace

TEST_CASE("fuse_concat lengths and ordering") {
  auto u = Tensor::from({1, 2}, {1, 2});
  auto e = Tensor::from({1, 1}, {3});
  auto f = fuse_concat(u, e);
  CHECK(f.shape() == Shape{1, 3});
  CHECK(f.at(0) == 1);
  CHECK(f.at(1) == 2);
  CHECK(f.at(2) == 3);

  auto u2 = Tensor::zeros({4, 256});
  auto e2 = Tensor::zeros({4, 128});
  CHECK(fuse_concat(u2, e2).shape() == Shape{4, 384});

  // Slicing recovers both inputs bit-exactly.
  Rng rng(1);
  auto ru = Tensor::zeros({2, 5});
  auto re = Tensor::zeros({2, 3});
  for (std::size_t i = 0; i < ru.size(); ++i) ru.at(i) = static_cast<float>(rng.next_double());
  for (std::size_t i = 0; i < re.size(); ++i) re.at(i) = static_cast<float>(rng.next_double());
  auto cat = fuse_concat(ru, re);
  CHECK(slice(cat, 1, 0, 5).values() == ru.values());
  CHECK(slice(cat, 1, 5, 3).values() == re.values());
}

TEST_CASE("fuse_concat gradient splits back to the branches") {
  Rng rng(2);
  auto u = TensorD::zeros({2, 3});
  auto e = TensorD::zeros({2, 2});
  for (std::size_t i = 0; i < u.size(); ++i) u.at(i) = rng.uniform(-1, 1);
  for (std::size_t i = 0; i < e.size(); ++i) e.at(i) = rng.uniform(-1, 1);
  auto result = grad_check<double>(
      [&](Tape<double>& tape) {
        return sum_all(square(fuse_concat(u, e, &tape), &tape), &tape);
      },
      {{"u", u}, {"e", e}}, 1e-4, 1e-4);
  CHECK(result.passed);
}

TEST_CASE("fuse_attention closed-form gating") {
  // Scalar branches: du = de = common_dim = 1, identity projections.
  auto setup = [](double score_u, double score_e) {
    ParamSet<double> ps;
    ps.add("fuse.proj_u.w", TensorD::from({1, 1}, {1}));
    ps.add("fuse.proj_e.w", TensorD::from({1, 1}, {1}));
    ps.add("fuse.score_u", TensorD::from({1, 1}, {score_u}));
    ps.add("fuse.score_e", TensorD::from({1, 1}, {score_e}));
    return ps;
  };
  auto u = TensorD::from({1, 1}, {1.0});
  auto e = TensorD::from({1, 1}, {2.0});

  // Equal scores: midpoint of the projections.
  auto ps_equal = setup(0.0, 0.0);
  CHECK(fuse_attention(u, e, ps_equal).at(0) == doctest::Approx(1.5));

  // s_u - s_e = 20: output saturates to p_u.
  auto ps_sat = setup(20.0, 0.0);
  CHECK(fuse_attention(u, e, ps_sat).at(0) == doctest::Approx(1.0).epsilon(1e-4));

  // s = (1, 0): weights (e/(e+1), 1/(e+1)) = (0.7311, 0.2689).
  auto ps_one = setup(1.0, 0.0);
  const double a_u = std::exp(1.0) / (std::exp(1.0) + 1.0);
  CHECK(a_u == doctest::Approx(0.7311).epsilon(1e-4));
  CHECK(fuse_attention(u, e, ps_one).at(0) == doctest::Approx(a_u * 1.0 + (1 - a_u) * 2.0));
}

TEST_CASE("attention weights sum to one and are nonnegative") {
  Rng rng(3);
  ParamSet<double> ps;
  ps.add("fuse.proj_u.w", he_uniform<double>({4, 3}, 4, rng));
  ps.add("fuse.proj_e.w", he_uniform<double>({5, 3}, 5, rng));
  ps.add("fuse.score_u", he_uniform<double>({3, 1}, 3, rng));
  ps.add("fuse.score_e", he_uniform<double>({3, 1}, 3, rng));
  for (int trial = 0; trial < 50; ++trial) {
    auto u = TensorD::zeros({2, 4});
    auto e = TensorD::zeros({2, 5});
    for (std::size_t i = 0; i < u.size(); ++i) u.at(i) = rng.uniform(-2, 2);
    for (std::size_t i = 0; i < e.size(); ++i) e.at(i) = rng.uniform(-2, 2);
    // Recompute the weights directly and check the convexity identity.
    auto p_u = linear(u, ps.get("fuse.proj_u.w"), TensorD());
    auto p_e = linear(e, ps.get("fuse.proj_e.w"), TensorD());
    auto s_u = linear(p_u, ps.get("fuse.score_u"), TensorD());
    auto s_e = linear(p_e, ps.get("fuse.score_e"), TensorD());
    auto alpha = softmax_rows(concat<double>({s_u, s_e}, 1));
    for (std::size_t r = 0; r < 2; ++r) {
      REQUIRE(alpha.at(r * 2) >= 0.0);
      REQUIRE(alpha.at(r * 2 + 1) >= 0.0);
      REQUIRE(alpha.at(r * 2) + alpha.at(r * 2 + 1) == doctest::Approx(1.0).epsilon(1e-9));
    }
    // The fused output matches the manual blend.
    auto fused = fuse_attention(u, e, ps);
    for (std::size_t r = 0; r < 2; ++r)
      for (std::size_t j = 0; j < 3; ++j)
        REQUIRE(fused.at(r * 3 + j) ==
                doctest::Approx(alpha.at(r * 2) * p_u.at(r * 3 + j) +
                                alpha.at(r * 2 + 1) * p_e.at(r * 3 + j)));
  }
}

TEST_CASE("classify_forward shape contract for all variants") {
  Rng rng(5);
  auto batch = random_batch(2, 8, 8, rng);
  for (VariantKind v :
       {VariantKind::kUNetOnly, VariantKind::kEfficientOnly, VariantKind::kEfficientFusionUNet,
        VariantKind::kEfficientFusionUNetAttention}) {
    auto model = make_variant<float>(v, 100);
    auto logits = classify_forward(model, batch);
    CHECK(logits.shape() == Shape{2, 10});
  }
}

TEST_CASE("variant component mismatch raises config error") {
  FusionConfig cfg;
  cfg.variant = VariantKind::kEfficientFusionUNet;
  auto backbone = std::make_shared<BackboneModelT<float>>(
      build_backbone<float>(tiny_backbone_config(), 1));
  CHECK_THROWS_AS(build_fused<float>(cfg, nullptr, backbone, 2), Error);

  FusionConfig ecfg;
  ecfg.variant = VariantKind::kEfficientOnly;
  ecfg.backbone_input = BackboneInput::kReconstruction;
  CHECK_THROWS_AS(build_fused<float>(ecfg, nullptr, backbone, 3), Error);
}

TEST_CASE("deterministic forward with dropout 0") {
  Rng rng(7);
  auto batch = random_batch(2, 8, 8, rng);
  auto model = make_variant<float>(VariantKind::kEfficientFusionUNet, 200);
  auto a = classify_forward(model, batch);
  auto b = classify_forward(model, batch);
  REQUIRE(a.values() == b.values());
}

TEST_CASE("full fusion pipeline gradients match finite differences") {
  Rng rng(11);
  auto batch = TensorD::zeros({1, 3, 8, 8});
  for (std::size_t i = 0; i < batch.size(); ++i) batch.at(i) = rng.next_double();
  auto model = make_variant<double>(VariantKind::kEfficientFusionUNet, 300, /*freeze=*/false);
  std::vector<std::size_t> labels = {4};

  std::vector<std::pair<std::string, TensorD>> params;
  for (auto& [name, p] : model.unet->params.params) params.emplace_back("unet." + name, p);
  for (auto& [name, p] : model.backbone->params.params)
    params.emplace_back("backbone." + name, p);
  for (auto& [name, p] : model.params.params) params.emplace_back("fused." + name, p);

  // Looser tolerance than the op-level checks: the composite crosses ReLU and
  // max-pool kinks under perturbation, and conv biases that feed straight into
  // a normalization have an exactly-zero gradient that finite differences can
  // only resolve down to roundoff.
  auto result = grad_check<double>(
      [&](Tape<double>& tape) {
        auto logits = classify_forward(model, batch, &tape, false, nullptr);
        return softmax_cross_entropy(logits, labels, &tape);
      },
      params, 5e-3, 1e-5);
  INFO("max relative error ", result.max_relative_error);
  CHECK(result.passed);
}

TEST_CASE("predict argmax rules") {
  auto logits = Tensor::zeros({3, 10});
  logits.at(9) = 5.0f;  // row 0: [0,...,0,5]
  // row 1: all equal -> class 0
  logits.at(2 * 10 + 3) = 2.0f;
  logits.at(2 * 10 + 7) = 2.0f;  // tie between 3 and 7 -> 3
  auto pred = argmax_rows(logits);
  CHECK(pred[0] == 9);
  CHECK(pred[1] == 0);
  CHECK(pred[2] == 3);
}

TEST_CASE("argmax matches a brute-force scan oracle and shift invariance") {
  Rng rng(13);
  for (int trial = 0; trial < 200; ++trial) {
    auto logits = Tensor::zeros({4, 10});
    for (std::size_t i = 0; i < logits.size(); ++i)
      logits.at(i) = static_cast<float>(rng.uniform(-5, 5));
    auto pred = argmax_rows(logits);
    // Oracle: smallest index attaining the row maximum.
    for (std::size_t r = 0; r < 4; ++r) {
      float mx = logits.at(r * 10);
      for (std::size_t j = 1; j < 10; ++j) mx = std::max(mx, logits.at(r * 10 + j));
      std::size_t first = 0;
      while (logits.at(r * 10 + first) != mx) ++first;
      REQUIRE(pred[r] == first);
    }
    // Adding a per-row constant leaves predictions unchanged.
    auto shifted = logits.clone();
    for (std::size_t r = 0; r < 4; ++r) {
      const float c = static_cast<float>(rng.uniform(-3, 3));
      for (std::size_t j = 0; j < 10; ++j) shifted.at(r * 10 + j) += c;
    }
    REQUIRE(argmax_rows(shifted) == pred);
  }
}
