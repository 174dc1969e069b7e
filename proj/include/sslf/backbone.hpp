#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "sslf/layers.hpp"
#include "sslf/model.hpp"
#include "sslf/ops.hpp"

namespace sslf {

enum class Activation { kSilu, kRelu };

struct StageSpec {
  std::size_t expansion = 6;
  std::size_t channels = 16;
  std::size_t repeats = 1;
  std::size_t stride = 1;  // applied to the first block of the stage only
  std::size_t kernel = 3;

  void validate() const {
    require(expansion >= 1 && channels >= 1 && repeats >= 1, ErrorKind::Config,
            "stage expansion/channels/repeats must be positive");
    require(stride == 1 || stride == 2, ErrorKind::Config, "stage stride must be 1 or 2, got ",
            stride);
    require(kernel == 3 || kernel == 5, ErrorKind::Config, "stage kernel must be 3 or 5, got ",
            kernel);
  }
};

// Compound-scalable MBConv feature extractor. Width and depth multipliers
// rescale the stage plan the EfficientNet way; the default plan is a "nano"
// profile that trains at desk scale.
struct BackboneConfig {
  std::size_t in_channels = 3;
  std::size_t stem_channels = 16;
  std::vector<StageSpec> stages = {
      {1, 16, 1, 1, 3},
      {6, 24, 2, 2, 3},
      {6, 40, 2, 2, 5},
      {6, 80, 2, 1, 3},
  };
  double width_mult = 1.0;
  double depth_mult = 1.0;
  double se_ratio = 0.25;
  std::size_t feature_dim = 128;
  NormKind norm = NormKind::kBatch;
  Activation activation = Activation::kSilu;

  static std::size_t scale_channels_count(std::size_t channels, double width_mult) {
    return std::max<std::size_t>(
        8, static_cast<std::size_t>(std::llround(channels * width_mult)));
  }
  static std::size_t scale_repeats(std::size_t repeats, double depth_mult) {
    return std::max<std::size_t>(
        1, static_cast<std::size_t>(std::ceil(repeats * depth_mult)));
  }

  std::size_t cumulative_stride() const {
    std::size_t s = 2;  // stem
    for (const auto& st : stages) s *= st.stride;
    return s;
  }

  void validate() const {
    require(width_mult >= 0.1 && depth_mult >= 0.1, ErrorKind::Config,
            "width/depth multipliers must be >= 0.1");
    require(se_ratio > 0.0 && se_ratio <= 1.0, ErrorKind::Config, "se_ratio must be in (0,1]");
    require(!stages.empty(), ErrorKind::Config, "backbone needs at least one stage");
    require(stem_channels >= 1 && feature_dim >= 1 && in_channels >= 1, ErrorKind::Config,
            "backbone channel counts must be positive");
    for (const auto& st : stages) st.validate();
  }
};

template <class T>
struct BackboneModelT {
  BackboneConfig config;
  ParamSet<T> params;
  // Resolved per-block plan after compound scaling.
  struct BlockPlan {
    std::size_t in_ch, mid_ch, out_ch, stride, kernel, expansion, se_hidden;
    bool residual;
  };
  std::vector<BlockPlan> blocks;
};
using BackboneModel = BackboneModelT<float>;

namespace detail {

template <class T>
TensorT<T> activate(const TensorT<T>& x, Activation act, Tape<T>* tape) {
  return act == Activation::kSilu ? silu(x, tape) : relu(x, tape);
}

}  // namespace detail

// Squeeze-and-excitation gate: per-channel global average pooling, a two-layer
// bottleneck ending in a sigmoid, and per-channel rescaling of the input.
template <class T>
TensorT<T> se_gate(const TensorT<T>& features, const TensorT<T>& w1, const TensorT<T>& b1,
                   const TensorT<T>& w2, const TensorT<T>& b2, Tape<T>* tape = nullptr) {
  auto squeezed = global_avg_pool(features, tape);               // [N,C]
  auto hidden = relu(linear(squeezed, w1, b1, tape), tape);      // [N,h]
  auto gate = sigmoid(linear(hidden, w2, b2, tape), tape);       // [N,C]
  return scale_channels(features, gate, tape);
}

template <class T>
BackboneModelT<T> build_backbone(const BackboneConfig& config, std::uint64_t seed) {
  config.validate();
  BackboneModelT<T> model;
  model.config = config;
  Rng rng(seed);
  ParamSet<T>& ps = model.params;

  const std::size_t stem = BackboneConfig::scale_channels_count(config.stem_channels,
                                                                config.width_mult);
  add_conv(ps, "stem.conv", stem, config.in_channels, 3, 3, rng);
  add_norm(ps, "stem.norm", stem);

  std::size_t in_ch = stem;
  std::size_t block_idx = 0;
  for (const auto& stage : config.stages) {
    const std::size_t out_ch = BackboneConfig::scale_channels_count(stage.channels,
                                                                    config.width_mult);
    const std::size_t repeats = BackboneConfig::scale_repeats(stage.repeats, config.depth_mult);
    for (std::size_t r = 0; r < repeats; ++r) {
      typename BackboneModelT<T>::BlockPlan plan;
      plan.in_ch = in_ch;
      plan.out_ch = out_ch;
      plan.stride = r == 0 ? stage.stride : 1;
      plan.kernel = stage.kernel;
      plan.expansion = stage.expansion;
      plan.mid_ch = in_ch * stage.expansion;
      plan.se_hidden = static_cast<std::size_t>(std::ceil(plan.mid_ch * config.se_ratio));
      require(plan.se_hidden >= 1, ErrorKind::Config, "se_ratio too small for ", plan.mid_ch,
              " channels");
      plan.residual = plan.stride == 1 && plan.in_ch == plan.out_ch;

      const std::string base = "block" + std::to_string(block_idx);
      if (stage.expansion != 1) {
        add_conv(ps, base + ".expand", plan.mid_ch, in_ch, 1, 1, rng, false);
        add_norm(ps, base + ".expand_norm", plan.mid_ch);
      }
      add_conv(ps, base + ".dw", plan.mid_ch, 1, stage.kernel, stage.kernel, rng, false);
      add_norm(ps, base + ".dw_norm", plan.mid_ch);
      add_dense(ps, base + ".se1", plan.mid_ch, plan.se_hidden, rng);
      add_dense(ps, base + ".se2", plan.se_hidden, plan.mid_ch, rng);
      add_conv(ps, base + ".project", out_ch, plan.mid_ch, 1, 1, rng, false);
      add_norm(ps, base + ".project_norm", out_ch);

      model.blocks.push_back(plan);
      in_ch = out_ch;
      ++block_idx;
    }
  }

  add_conv(ps, "head.conv", config.feature_dim, in_ch, 1, 1, rng, false);
  add_norm(ps, "head.norm", config.feature_dim);
  return model;
}

// stem -> MBConv stages -> head conv -> global average pool.
template <class T>
TensorT<T> backbone_forward(BackboneModelT<T>& model, const TensorT<T>& batch,
                            Tape<T>* tape = nullptr, bool training = false) {
  const auto& cfg = model.config;
  require(batch.rank() == 4, ErrorKind::Shape, "backbone: batch must be [N,C,H,W], got ",
          shape_str(batch.shape()));
  require(batch.dim(1) == cfg.in_channels, ErrorKind::Shape, "backbone: expected ",
          cfg.in_channels, " input channels, got ", batch.dim(1));
  const std::size_t cum = cfg.cumulative_stride();
  require(batch.dim(2) % cum == 0 && batch.dim(3) % cum == 0, ErrorKind::Shape,
          "backbone: spatial dims ", batch.dim(2), "x", batch.dim(3),
          " must be divisible by the cumulative stride ", cum);

  ParamSet<T>& ps = model.params;
  auto x = apply_conv(ps, "stem.conv", batch, 2, Padding::kSame, tape);
  x = detail::activate(apply_norm(ps, "stem.norm", x, cfg.norm, training, tape), cfg.activation,
                       tape);

  for (std::size_t bi = 0; bi < model.blocks.size(); ++bi) {
    const auto& plan = model.blocks[bi];
    const std::string base = "block" + std::to_string(bi);
    TensorT<T> input = x;
    if (plan.expansion != 1) {
      x = apply_conv(ps, base + ".expand", x, 1, Padding::kSame, tape);
      x = detail::activate(apply_norm(ps, base + ".expand_norm", x, cfg.norm, training, tape),
                           cfg.activation, tape);
    }
    x = apply_conv(ps, base + ".dw", x, plan.stride, Padding::kSame, tape, plan.mid_ch);
    x = detail::activate(apply_norm(ps, base + ".dw_norm", x, cfg.norm, training, tape),
                         cfg.activation, tape);
    x = se_gate(x, ps.get(base + ".se1.w"), ps.get(base + ".se1.b"), ps.get(base + ".se2.w"),
                ps.get(base + ".se2.b"), tape);
    x = apply_conv(ps, base + ".project", x, 1, Padding::kSame, tape);
    x = apply_norm(ps, base + ".project_norm", x, cfg.norm, training, tape);
    if (plan.residual) x = add(x, input, tape);
  }

  x = apply_conv(ps, "head.conv", x, 1, Padding::kSame, tape);
  x = detail::activate(apply_norm(ps, "head.norm", x, cfg.norm, training, tape), cfg.activation,
                       tape);
  return global_avg_pool(x, tape);  // [N, feature_dim]
}

}  // namespace sslf
