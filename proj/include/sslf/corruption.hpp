#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <utility>
#include <vector>

#include "sslf/ops.hpp"
#include "sslf/rng.hpp"
#include "sslf/tensor.hpp"

namespace sslf {

enum class CorruptionKind { kPatchMask, kGaussianNoise };
enum class LossPolicy { kMaskedOnly, kFull };

inline const char* to_string(CorruptionKind k) {
  return k == CorruptionKind::kPatchMask ? "patch_mask" : "gaussian_noise";
}

// Pretext-task definition. patch_size / mask_ratio / fill_value apply to
// patch masking, sigma to Gaussian noise; clamp keeps noised pixels in [0,1].
struct CorruptionSpec {
  CorruptionKind kind = CorruptionKind::kGaussianNoise;
  std::size_t patch_size = 8;
  double mask_ratio = 0.5;
  double fill_value = 0.0;
  double sigma = 0.1;
  bool clamp = true;

  void validate() const {
    require(mask_ratio >= 0.0 && mask_ratio <= 1.0, ErrorKind::Config,
            "mask_ratio must be in [0,1], got ", mask_ratio);
    require(patch_size >= 1, ErrorKind::Config, "patch_size must be >= 1");
    require(sigma >= 0.0, ErrorKind::Config, "sigma must be >= 0, got ", sigma);
  }

  // The reconstruction loss averages over masked pixels for patch masking
  // ("predict the missing pixels") and over the whole image for noise, where
  // every pixel is corrupted.
  LossPolicy default_policy() const {
    return kind == CorruptionKind::kPatchMask ? LossPolicy::kMaskedOnly : LossPolicy::kFull;
  }
};

// Per-pixel corruption indicator; true = corrupted.
struct MaskMap {
  std::size_t h = 0, w = 0;
  std::vector<std::uint8_t> on;

  static MaskMap make(std::size_t h, std::size_t w, bool value = false) {
    MaskMap m;
    m.h = h;
    m.w = w;
    m.on.assign(h * w, value ? 1 : 0);
    return m;
  }

  bool at(std::size_t i, std::size_t j) const { return on[i * w + j] != 0; }
  std::size_t count_true() const {
    return static_cast<std::size_t>(std::count(on.begin(), on.end(), std::uint8_t(1)));
  }
  bool operator==(const MaskMap& o) const { return h == o.h && w == o.w && on == o.on; }
};

// Masks exactly round(mask_ratio * tile_count) whole patch_size x patch_size
// tiles, chosen uniformly without replacement, setting them to fill_value in
// every channel. Unmasked pixels are left bit-identical.
template <class T>
std::pair<TensorT<T>, MaskMap> mask_patches(const TensorT<T>& image, const CorruptionSpec& spec,
                                            Rng& rng) {
  spec.validate();
  require(spec.kind == CorruptionKind::kPatchMask, ErrorKind::Config,
          "mask_patches requires a PatchMask spec");
  require(image.rank() == 3, ErrorKind::Shape, "mask_patches: image must be [C,H,W], got ",
          shape_str(image.shape()));
  const std::size_t c = image.dim(0), h = image.dim(1), w = image.dim(2), p = spec.patch_size;
  require(h % p == 0 && w % p == 0, ErrorKind::Config, "patch_size ", p,
          " must divide image dims ", h, "x", w);

  const std::size_t th = h / p, tw = w / p, tiles = th * tw;
  const std::size_t k = static_cast<std::size_t>(std::llround(spec.mask_ratio * tiles));
  std::vector<std::size_t> order(tiles);
  std::iota(order.begin(), order.end(), std::size_t{0});
  rng.shuffle(order);

  TensorT<T> corrupted = image.clone();
  MaskMap mask = MaskMap::make(h, w, false);
  for (std::size_t t = 0; t < k; ++t) {
    const std::size_t ti = order[t] / tw, tj = order[t] % tw;
    for (std::size_t i = ti * p; i < (ti + 1) * p; ++i)
      for (std::size_t j = tj * p; j < (tj + 1) * p; ++j) {
        mask.on[i * w + j] = 1;
        for (std::size_t ch = 0; ch < c; ++ch)
          corrupted.at((ch * h + i) * w + j) = static_cast<T>(spec.fill_value);
      }
  }
  return {std::move(corrupted), std::move(mask)};
}

// Adds i.i.d. N(0, sigma^2) noise per pixel and channel; with clamp the
// result is clipped back to [0,1]. The whole image counts as corrupted.
template <class T>
TensorT<T> add_gaussian_noise(const TensorT<T>& image, const CorruptionSpec& spec, Rng& rng) {
  spec.validate();
  require(spec.kind == CorruptionKind::kGaussianNoise, ErrorKind::Config,
          "add_gaussian_noise requires a GaussianNoise spec");
  require(image.rank() == 3, ErrorKind::Shape, "add_gaussian_noise: image must be [C,H,W], got ",
          shape_str(image.shape()));
  TensorT<T> out = image.clone();
  for (std::size_t i = 0; i < out.size(); ++i) {
    double v = static_cast<double>(out.at(i)) + spec.sigma * rng.normal();
    if (spec.clamp) v = std::min(1.0, std::max(0.0, v));
    out.at(i) = static_cast<T>(v);
  }
  return out;
}

// Applies a pretext corruption and returns the corrupted image plus its mask
// (all-true for noise).
template <class T>
std::pair<TensorT<T>, MaskMap> corrupt(const TensorT<T>& image, const CorruptionSpec& spec,
                                       Rng& rng) {
  if (spec.kind == CorruptionKind::kPatchMask) return mask_patches(image, spec, rng);
  auto noised = add_gaussian_noise(image, spec, rng);
  return {std::move(noised), MaskMap::make(image.dim(1), image.dim(2), true)};
}

// Combined mode: applies several corruptions in sequence; masks are unioned.
template <class T>
std::pair<TensorT<T>, MaskMap> corrupt(const TensorT<T>& image,
                                       const std::vector<CorruptionSpec>& specs, Rng& rng) {
  require(!specs.empty(), ErrorKind::Config, "corrupt: at least one corruption spec required");
  TensorT<T> img = image;
  MaskMap acc = MaskMap::make(image.dim(1), image.dim(2), false);
  for (const auto& spec : specs) {
    auto [next, mask] = corrupt(img, spec, rng);
    img = std::move(next);
    for (std::size_t i = 0; i < acc.on.size(); ++i) acc.on[i] |= mask.on[i];
  }
  return {std::move(img), std::move(acc)};
}

// Mean squared error over the selected pixel set. masked_only averages over
// mask-true pixels (all channels); full averages over every element.
// Differentiable in `prediction` when a tape is supplied.
template <class T>
TensorT<T> reconstruction_loss(const TensorT<T>& prediction, const TensorT<T>& target,
                               const MaskMap& mask, LossPolicy policy, Tape<T>* tape = nullptr) {
  require(prediction.shape() == target.shape(), ErrorKind::Shape,
          "reconstruction_loss: shapes differ, ", shape_str(prediction.shape()), " vs ",
          shape_str(target.shape()));
  require(prediction.rank() == 3, ErrorKind::Shape,
          "reconstruction_loss: tensors must be [C,H,W], got ", shape_str(prediction.shape()));
  const std::size_t c = prediction.dim(0), h = prediction.dim(1), w = prediction.dim(2);
  require(mask.h == h && mask.w == w, ErrorKind::Shape, "reconstruction_loss: mask is ", mask.h,
          "x", mask.w, " but image is ", h, "x", w);

  TensorT<T> weights = TensorT<T>::zeros(prediction.shape());
  std::size_t selected = 0;
  if (policy == LossPolicy::kMaskedOnly) {
    selected = mask.count_true() * c;
    require(selected > 0, ErrorKind::Domain,
            "reconstruction_loss: masked_only policy with an empty mask");
    const T inv = T(1) / static_cast<T>(selected);
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t i = 0; i < h * w; ++i)
        if (mask.on[i]) weights.at(ch * h * w + i) = inv;
  } else {
    const T inv = T(1) / static_cast<T>(prediction.size());
    for (std::size_t i = 0; i < weights.size(); ++i) weights.at(i) = inv;
  }
  auto diff = sub(prediction, target, tape);
  return sum_all(mul(square(diff, tape), weights, tape), tape);
}

}  // namespace sslf
