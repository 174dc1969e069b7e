#pragma once

#include <memory>
#include <string>
#include <vector>

#include "sslf/backbone.hpp"
#include "sslf/layers.hpp"
#include "sslf/unet.hpp"

namespace sslf {

enum class VariantKind {
  kUNetOnly,
  kEfficientOnly,
  kEfficientFusionUNet,
  kEfficientFusionUNetAttention,
};

inline const char* to_string(VariantKind v) {
  switch (v) {
    case VariantKind::kUNetOnly: return "unet";
    case VariantKind::kEfficientOnly: return "efficient";
    case VariantKind::kEfficientFusionUNet: return "fusion";
    case VariantKind::kEfficientFusionUNetAttention: return "fusion-attention";
  }
  return "?";
}

inline VariantKind parse_variant(const std::string& name) {
  if (name == "unet") return VariantKind::kUNetOnly;
  if (name == "efficient") return VariantKind::kEfficientOnly;
  if (name == "fusion") return VariantKind::kEfficientFusionUNet;
  if (name == "fusion-attention") return VariantKind::kEfficientFusionUNetAttention;
  fail(ErrorKind::Config, "unknown variant '", name,
       "'; valid: unet, efficient, fusion, fusion-attention");
}

enum class BackboneInput { kReconstruction, kRaw };

struct FusionConfig {
  VariantKind variant = VariantKind::kEfficientFusionUNet;
  std::size_t common_dim = 128;                 // attention fusion projection width
  std::vector<std::size_t> head_dims = {256, 64};
  std::size_t num_classes = 10;
  double dropout = 0.3;
  bool freeze_unet_encoder = true;
  BackboneInput backbone_input = BackboneInput::kReconstruction;

  void validate() const {
    require(num_classes == 10, ErrorKind::Config, "classifier is fixed to 10 classes, got ",
            num_classes);
    require(!head_dims.empty(), ErrorKind::Config, "head_dims must be non-empty");
    require(dropout >= 0.0 && dropout < 1.0, ErrorKind::Config, "dropout must be in [0,1)");
    require(common_dim >= 1, ErrorKind::Config, "common_dim must be positive");
  }

  bool uses_unet() const { return variant != VariantKind::kEfficientOnly; }
  bool uses_backbone() const { return variant != VariantKind::kUNetOnly; }
};

template <class T>
struct FusedModelT {
  FusionConfig config;
  std::shared_ptr<UNetModelT<T>> unet;          // absent for EfficientOnly with raw input
  std::shared_ptr<BackboneModelT<T>> backbone;  // absent for UNetOnly
  ParamSet<T> params;                           // fusion + dense head parameters
};
using FusedModel = FusedModelT<float>;

// Concatenation fusion; U-Net features first, backbone features second.
template <class T>
TensorT<T> fuse_concat(const TensorT<T>& unet_features, const TensorT<T>& backbone_features,
                       Tape<T>* tape = nullptr) {
  return concat<T>({unet_features, backbone_features}, 1, tape);
}

// Softmax-gated fusion: both branches are projected to common_dim, scored by
// learned vectors, and blended with weights softmax(s_u, s_e).
template <class T>
TensorT<T> fuse_attention(const TensorT<T>& unet_features, const TensorT<T>& backbone_features,
                          ParamSet<T>& params, Tape<T>* tape = nullptr) {
  const std::size_t n = unet_features.dim(0);
  const std::size_t common = params.get("fuse.proj_u.w").dim(1);
  auto p_u = linear(unet_features, params.get("fuse.proj_u.w"), TensorT<T>(), tape);
  auto p_e = linear(backbone_features, params.get("fuse.proj_e.w"), TensorT<T>(), tape);
  auto s_u = linear(p_u, params.get("fuse.score_u"), TensorT<T>(), tape);  // [N,1]
  auto s_e = linear(p_e, params.get("fuse.score_e"), TensorT<T>(), tape);  // [N,1]
  auto alpha = softmax_rows(concat<T>({s_u, s_e}, 1, tape), tape);         // [N,2]
  auto gated_u = scale_channels(reshape(p_u, {n, 1, common, 1}, tape),
                                slice(alpha, 1, 0, 1, tape), tape);
  auto gated_e = scale_channels(reshape(p_e, {n, 1, common, 1}, tape),
                                slice(alpha, 1, 1, 1, tape), tape);
  return reshape(add(gated_u, gated_e, tape), {n, common}, tape);
}

// Builds fusion and head parameters for the variant. The component models are
// shared in, not copied; EfficientOnly may carry a U-Net purely as the
// reconstruction preprocessor when backbone_input = reconstruction.
template <class T>
FusedModelT<T> build_fused(const FusionConfig& config, std::shared_ptr<UNetModelT<T>> unet,
                           std::shared_ptr<BackboneModelT<T>> backbone, std::uint64_t seed) {
  config.validate();
  FusedModelT<T> model;
  model.config = config;
  model.unet = std::move(unet);
  model.backbone = std::move(backbone);

  if (config.uses_unet())
    require(model.unet != nullptr, ErrorKind::Config, "variant ", to_string(config.variant),
            " requires a U-Net component");
  if (config.uses_backbone())
    require(model.backbone != nullptr, ErrorKind::Config, "variant ", to_string(config.variant),
            " requires a backbone component");
  if (config.variant == VariantKind::kUNetOnly)
    model.backbone = nullptr;  // invariant: no stray components
  if (config.uses_backbone() && config.backbone_input == BackboneInput::kReconstruction)
    require(model.unet != nullptr, ErrorKind::Config,
            "backbone_input = reconstruction requires a U-Net component");

  Rng rng(seed);
  const std::size_t du = model.unet ? model.unet->config.bottleneck_width() : 0;
  const std::size_t de = model.backbone ? model.backbone->config.feature_dim : 0;

  std::size_t head_in = 0;
  switch (config.variant) {
    case VariantKind::kUNetOnly: head_in = du; break;
    case VariantKind::kEfficientOnly: head_in = de; break;
    case VariantKind::kEfficientFusionUNet: head_in = du + de; break;
    case VariantKind::kEfficientFusionUNetAttention: head_in = config.common_dim; break;
  }

  if (config.variant == VariantKind::kEfficientFusionUNetAttention) {
    model.params.add("fuse.proj_u.w", he_uniform<T>({du, config.common_dim}, du, rng));
    model.params.add("fuse.proj_e.w", he_uniform<T>({de, config.common_dim}, de, rng));
    model.params.add("fuse.score_u", he_uniform<T>({config.common_dim, 1}, config.common_dim, rng));
    model.params.add("fuse.score_e", he_uniform<T>({config.common_dim, 1}, config.common_dim, rng));
  }

  std::size_t in_dim = head_in;
  for (std::size_t i = 0; i < config.head_dims.size(); ++i) {
    add_dense(model.params, "head" + std::to_string(i), in_dim, config.head_dims[i], rng);
    in_dim = config.head_dims[i];
  }
  add_dense(model.params, "head_out", in_dim, config.num_classes, rng);
  return model;
}

// Per-variant dataflow ending in the dense head. `rng` drives dropout and is
// only consulted when training with dropout > 0; frozen components run in
// eval mode without a tape.
template <class T>
TensorT<T> classify_forward(FusedModelT<T>& model, const TensorT<T>& batch,
                            Tape<T>* tape = nullptr, bool training = false,
                            Rng* rng = nullptr) {
  const FusionConfig& cfg = model.config;

  const bool unet_frozen = cfg.freeze_unet_encoder;
  Tape<T>* unet_tape = unet_frozen ? nullptr : tape;

  TensorT<T> unet_feats, backbone_feats;
  if (cfg.uses_unet()) {
    auto features = encode(*model.unet, batch, unet_tape, training && !unet_frozen);
    unet_feats = features.bottleneck_vector;
  }
  if (cfg.uses_backbone()) {
    TensorT<T> backbone_in = batch;
    if (cfg.backbone_input == BackboneInput::kReconstruction) {
      require(model.unet != nullptr, ErrorKind::Config,
              "backbone_input = reconstruction requires a U-Net component");
      backbone_in = unet_forward(*model.unet, batch, unet_tape, training && !unet_frozen);
    }
    backbone_feats = backbone_forward(*model.backbone, backbone_in, tape, training);
  }

  TensorT<T> fused;
  switch (cfg.variant) {
    case VariantKind::kUNetOnly: fused = unet_feats; break;
    case VariantKind::kEfficientOnly: fused = backbone_feats; break;
    case VariantKind::kEfficientFusionUNet:
      fused = fuse_concat(unet_feats, backbone_feats, tape);
      break;
    case VariantKind::kEfficientFusionUNetAttention:
      fused = fuse_attention(unet_feats, backbone_feats, model.params, tape);
      break;
  }

  TensorT<T> x = fused;
  for (std::size_t i = 0; i < cfg.head_dims.size(); ++i) {
    x = relu(apply_dense(model.params, "head" + std::to_string(i), x, tape), tape);
    if (training && cfg.dropout > 0.0) {
      require(rng != nullptr, ErrorKind::Config, "training with dropout requires an rng");
      x = dropout(x, cfg.dropout, *rng, tape);
    }
  }
  return apply_dense(model.params, "head_out", x, tape);  // [N, num_classes]
}

// Argmax over logits, ties broken toward the lower class index.
template <class T>
std::vector<std::size_t> argmax_rows(const TensorT<T>& logits) {
  require(logits.rank() == 2, ErrorKind::Shape, "argmax_rows expects [N,K], got ",
          shape_str(logits.shape()));
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  std::vector<std::size_t> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < k; ++j)
      if (logits.at(i * k + j) > logits.at(i * k + best)) best = j;
    out[i] = best;
  }
  return out;
}

template <class T>
std::vector<std::size_t> predict(FusedModelT<T>& model, const TensorT<T>& batch) {
  return argmax_rows(classify_forward(model, batch));
}

}  // namespace sslf
