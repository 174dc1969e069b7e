#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "sslf/layers.hpp"
#include "sslf/model.hpp"
#include "sslf/ops.hpp"

namespace sslf {

struct UNetConfig {
  std::size_t in_channels = 3;
  std::size_t base_channels = 16;
  std::size_t depth = 3;
  bool attention_bottleneck = true;
  NormKind norm = NormKind::kBatch;
  std::size_t out_channels = 3;
  std::size_t attention_heads = 4;

  std::size_t bottleneck_width() const { return base_channels << depth; }
  std::size_t level_width(std::size_t level) const { return base_channels << level; }

  void validate() const {
    require(depth >= 1, ErrorKind::Config, "unet depth must be >= 1, got ", depth);
    require(base_channels >= 1 && in_channels >= 1 && out_channels >= 1, ErrorKind::Config,
            "unet channel counts must be positive");
    if (attention_bottleneck)
      require(bottleneck_width() % attention_heads == 0, ErrorKind::Config,
              "bottleneck width ", bottleneck_width(), " must be divisible by ", attention_heads,
              " attention heads");
  }
};

template <class T>
struct UNetModelT {
  UNetConfig config;
  ParamSet<T> params;
};
using UNetModel = UNetModelT<float>;

// Encoder output: globally average-pooled bottleneck map [N, width], plus the
// per-level encoder maps for experimentation.
template <class T>
struct EncoderFeaturesT {
  TensorT<T> bottleneck_vector;           // [N, base * 2^depth]
  std::vector<TensorT<T>> per_level_maps;  // encoder maps, level 0 first
  TensorT<T> bottleneck_map;               // [N, width, H', W']
};
using EncoderFeatures = EncoderFeaturesT<float>;

// Convolutional U-Net: per level two 3x3 conv+norm+relu, 2x2 max-pool down,
// nearest-neighbor up, skip concatenation, and an optional multi-head
// self-attention block on the bottleneck map. Output projection is a 1x1 conv
// through a sigmoid.
template <class T>
UNetModelT<T> build_unet(const UNetConfig& config, std::uint64_t seed) {
  config.validate();
  UNetModelT<T> model;
  model.config = config;
  Rng rng(seed);
  ParamSet<T>& ps = model.params;

  for (std::size_t l = 0; l < config.depth; ++l) {
    const std::size_t cin = l == 0 ? config.in_channels : config.level_width(l - 1);
    const std::size_t cout = config.level_width(l);
    const std::string base = "enc" + std::to_string(l);
    add_conv(ps, base + ".conv1", cout, cin, 3, 3, rng);
    add_norm(ps, base + ".norm1", cout);
    add_conv(ps, base + ".conv2", cout, cout, 3, 3, rng);
    add_norm(ps, base + ".norm2", cout);
  }

  const std::size_t bw = config.bottleneck_width();
  add_conv(ps, "bottleneck.conv1", bw, config.level_width(config.depth - 1), 3, 3, rng);
  add_norm(ps, "bottleneck.norm1", bw);
  add_conv(ps, "bottleneck.conv2", bw, bw, 3, 3, rng);
  add_norm(ps, "bottleneck.norm2", bw);
  if (config.attention_bottleneck) {
    for (const char* n : {"wq", "wk", "wv", "wo"})
      ps.add(std::string("bottleneck.attn.") + n, he_uniform<T>({bw, bw}, bw, rng));
  }

  for (std::size_t l = config.depth; l-- > 0;) {
    const std::size_t cout = config.level_width(l);
    const std::size_t cin = cout + config.level_width(l + 1);  // skip + upsampled
    const std::string base = "dec" + std::to_string(l);
    add_conv(ps, base + ".conv1", cout, cin, 3, 3, rng);
    add_norm(ps, base + ".norm1", cout);
    add_conv(ps, base + ".conv2", cout, cout, 3, 3, rng);
    add_norm(ps, base + ".norm2", cout);
  }

  add_conv(ps, "out", config.out_channels, config.base_channels, 1, 1, rng);
  return model;
}

namespace detail {

template <class T>
TensorT<T> unet_block(UNetModelT<T>& model, const std::string& base, const TensorT<T>& x,
                      bool training, Tape<T>* tape) {
  auto& ps = model.params;
  auto y = apply_conv(ps, base + ".conv1", x, 1, Padding::kSame, tape);
  y = relu(apply_norm(ps, base + ".norm1", y, model.config.norm, training, tape), tape);
  y = apply_conv(ps, base + ".conv2", y, 1, Padding::kSame, tape);
  return relu(apply_norm(ps, base + ".norm2", y, model.config.norm, training, tape), tape);
}

// Multi-head self-attention over the bottleneck's spatial positions, with a
// residual connection: y = x + softmax(QK^T / sqrt(dh)) V Wo.
template <class T>
TensorT<T> bottleneck_attention(UNetModelT<T>& model, const TensorT<T>& x, Tape<T>* tape) {
  auto& ps = model.params;
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3), s = h * w;
  const std::size_t heads = model.config.attention_heads, dh = c / heads;
  const T scale = T(1) / static_cast<T>(std::sqrt(static_cast<double>(dh)));
  const TensorT<T>&wq = ps.get("bottleneck.attn.wq"), &wk = ps.get("bottleneck.attn.wk"),
                  &wv = ps.get("bottleneck.attn.wv"), &wo = ps.get("bottleneck.attn.wo");

  std::vector<TensorT<T>> out_samples;
  out_samples.reserve(n);
  for (std::size_t si = 0; si < n; ++si) {
    auto xs = transpose(reshape(slice(x, 0, si, 1, tape), {c, s}, tape), tape);  // [S,C]
    auto q = matmul(xs, wq, tape), k = matmul(xs, wk, tape), v = matmul(xs, wv, tape);
    std::vector<TensorT<T>> head_outs;
    head_outs.reserve(heads);
    for (std::size_t hd = 0; hd < heads; ++hd) {
      auto qh = slice(q, 1, hd * dh, dh, tape);
      auto kh = slice(k, 1, hd * dh, dh, tape);
      auto vh = slice(v, 1, hd * dh, dh, tape);
      auto scores = mul_scalar(matmul(qh, transpose(kh, tape), tape), scale, tape);
      head_outs.push_back(matmul(softmax_rows(scores, tape), vh, tape));
    }
    auto attended = matmul(concat(head_outs, 1, tape), wo, tape);
    auto ys = add(xs, attended, tape);
    out_samples.push_back(reshape(transpose(ys, tape), {1, c, h, w}, tape));
  }
  return concat(out_samples, 0, tape);
}

template <class T>
struct UNetEncoded {
  std::vector<TensorT<T>> skips;
  TensorT<T> bottleneck;
};

template <class T>
UNetEncoded<T> unet_encode_impl(UNetModelT<T>& model, const TensorT<T>& batch, bool training,
                                Tape<T>* tape) {
  const auto& cfg = model.config;
  require(batch.rank() == 4, ErrorKind::Shape, "unet: batch must be [N,C,H,W], got ",
          shape_str(batch.shape()));
  require(batch.dim(1) == cfg.in_channels, ErrorKind::Shape, "unet: expected ", cfg.in_channels,
          " input channels, got ", batch.dim(1));
  const std::size_t div = std::size_t{1} << cfg.depth;
  require(batch.dim(2) % div == 0 && batch.dim(3) % div == 0, ErrorKind::Shape,
          "unet: spatial dims ", batch.dim(2), "x", batch.dim(3), " must be divisible by 2^depth = ",
          div);

  UNetEncoded<T> enc;
  TensorT<T> x = batch;
  for (std::size_t l = 0; l < cfg.depth; ++l) {
    x = unet_block(model, "enc" + std::to_string(l), x, training, tape);
    enc.skips.push_back(x);
    x = pool2d(x, PoolKind::kMax, 2, 2, tape);
  }
  x = unet_block(model, "bottleneck", x, training, tape);
  if (cfg.attention_bottleneck) x = bottleneck_attention(model, x, tape);
  enc.bottleneck = x;
  return enc;
}

}  // namespace detail

// Full reconstruction pass; output shape [N, out_channels, H, W], values in
// (0,1) from the final sigmoid.
template <class T>
TensorT<T> unet_forward(UNetModelT<T>& model, const TensorT<T>& batch, Tape<T>* tape = nullptr,
                        bool training = false, bool zero_skips = false) {
  auto enc = detail::unet_encode_impl(model, batch, training, tape);
  TensorT<T> x = enc.bottleneck;
  for (std::size_t l = model.config.depth; l-- > 0;) {
    x = upsample2d(x, 2, tape);
    // zero_skips substitutes zero maps for the skip tensors; used to audit
    // that the skip path contributes to the output.
    TensorT<T> skip = zero_skips ? TensorT<T>::zeros(enc.skips[l].shape()) : enc.skips[l];
    x = concat<T>({skip, x}, 1, tape);
    x = detail::unet_block(model, "dec" + std::to_string(l), x, training, tape);
  }
  return sigmoid(apply_conv(model.params, "out", x, 1, Padding::kSame, tape), tape);
}

// Encoder + bottleneck only; no decoder computation.
template <class T>
EncoderFeaturesT<T> encode(UNetModelT<T>& model, const TensorT<T>& batch, Tape<T>* tape = nullptr,
                           bool training = false) {
  auto enc = detail::unet_encode_impl(model, batch, training, tape);
  EncoderFeaturesT<T> features;
  features.bottleneck_map = enc.bottleneck;
  features.bottleneck_vector = global_avg_pool(enc.bottleneck, tape);
  features.per_level_maps = std::move(enc.skips);
  return features;
}

// 10 * log10(1 / MSE) for images in [0,1]; capped at 100 dB for MSE < 1e-10.
template <class T>
double psnr(const TensorT<T>& prediction, const TensorT<T>& target) {
  require(prediction.shape() == target.shape(), ErrorKind::Shape, "psnr: shapes differ, ",
          shape_str(prediction.shape()), " vs ", shape_str(target.shape()));
  double mse = 0.0;
  for (std::size_t i = 0; i < prediction.size(); ++i) {
    const double d = static_cast<double>(prediction.at(i)) - static_cast<double>(target.at(i));
    mse += d * d;
  }
  mse /= static_cast<double>(prediction.size());
  if (mse < 1e-10) return 100.0;
  return 10.0 * std::log10(1.0 / mse);
}

}  // namespace sslf
