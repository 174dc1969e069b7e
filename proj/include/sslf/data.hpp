#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "sslf/rng.hpp"
#include "sslf/tensor.hpp"

namespace sslf {

inline constexpr std::size_t kNumClasses = 10;

// Stable ids 0-9 in alphabetical order of the printed class names.
enum class ClassLabel : std::uint8_t {
  kAngioectasia = 0,
  kBleeding,
  kErosion,
  kErythema,
  kForeignBody,
  kLymphangiectasia,
  kNormal,
  kPolyp,
  kUlcer,
  kWorms,
};

// Printed names ("foreign body" keeps its space).
const std::array<std::string, kNumClasses>& class_names();

// Filesystem-safe name: spaces replaced by underscores.
std::string class_dir_name(ClassLabel label);

// Case-insensitive; underscores and spaces are interchangeable.
std::optional<ClassLabel> parse_class_label(std::string_view text);

struct ManifestEntry {
  std::string path;  // relative to the manifest root
  ClassLabel label;
};

struct DatasetManifest {
  std::filesystem::path root;
  std::vector<ManifestEntry> entries;

  std::array<std::size_t, kNumClasses> class_counts() const;
};

// CSV with header `filename,label`; paths resolve relative to the CSV's
// directory. Unknown labels and duplicate filenames are rejected with the
// offending row number.
DatasetManifest load_manifest(const std::filesystem::path& csv_path);

// Binary PPM (P6, maxval 255) -> [3,H,W] tensor with values v/255 in [0,1].
Tensor load_ppm(const std::filesystem::path& path);

// Writes a [3,H,W] tensor as P6; values are clamped to [0,1] and rounded.
void save_ppm(const std::filesystem::path& path, const Tensor& image);

// Pixel-center bilinear interpolation with edge clamping.
Tensor resize_bilinear(const Tensor& image, std::size_t out_h, std::size_t out_w);

// load_ppm followed by resize to size x size.
Tensor load_image(const std::filesystem::path& path, std::size_t size);

// Parametric texture dataset: each class is an oriented sinusoid plus a blob
// field with a class-specific hue, with per-image jitter. Default parameter
// tables are distinct per class so the classes are separable by construction.
struct SyntheticSpec {
  std::size_t per_class = 16;
  std::size_t size = 64;
  std::uint64_t seed = 0;
  // Optional imbalanced counts (size 10); empty means `per_class` everywhere.
  std::vector<std::size_t> per_class_counts;
  std::array<double, kNumClasses> frequency = {0.06, 0.09, 0.12, 0.15, 0.18,
                                               0.21, 0.24, 0.27, 0.30, 0.33};
  std::array<double, kNumClasses> orientation = {0.0,  0.314, 0.628, 0.942, 1.257,
                                                 1.571, 1.885, 2.199, 2.513, 2.827};
  std::array<std::size_t, kNumClasses> blob_count = {0, 2, 4, 6, 8, 10, 12, 14, 16, 18};
  std::array<double, kNumClasses> base_hue = {0.0, 0.1, 0.2, 0.3, 0.4,
                                              0.5, 0.6, 0.7, 0.8, 0.9};

  std::size_t count_for(std::size_t cls) const {
    return per_class_counts.empty() ? per_class : per_class_counts[cls];
  }
  void validate() const;
};

// Writes images/<class>/<idx>.ppm plus labels.csv under out_dir and returns
// the manifest. Fully deterministic from the spec.
DatasetManifest generate_synthetic(const SyntheticSpec& spec,
                                   const std::filesystem::path& out_dir);

// Stratified split: each class contributes round(count * val_fraction)
// validation entries chosen by seeded shuffle. Every class needs >= 2 entries.
std::pair<DatasetManifest, DatasetManifest> split(const DatasetManifest& manifest,
                                                  double val_fraction, std::uint64_t seed);

struct Normalization {
  std::array<float, 3> mean{0, 0, 0};
  std::array<float, 3> stddev{1, 1, 1};
};

// Per-channel mean/std over a manifest (normally the training split).
Normalization compute_normalization(const DatasetManifest& manifest, std::size_t size);

struct Batch {
  Tensor images;                    // [N,3,size,size], normalized
  std::vector<std::size_t> labels;  // class ids, length N
};

// Seeded shuffle, then batches of batch_size with the final short batch kept.
std::vector<Batch> make_batches(const DatasetManifest& manifest, std::size_t batch_size,
                                std::uint64_t shuffle_seed, const Normalization& norm,
                                std::size_t size);

}  // namespace sslf
