#include "sslf/data.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

namespace sslf {

namespace fs = std::filesystem;

const std::array<std::string, kNumClasses>& class_names() {
  static const std::array<std::string, kNumClasses> names = {
      "angioectasia", "bleeding", "erosion",          "erythema", "foreign body",
      "lymphangiectasia", "normal", "polyp",          "ulcer",    "worms"};
  return names;
}

std::string class_dir_name(ClassLabel label) {
  std::string name = class_names()[static_cast<std::size_t>(label)];
  std::replace(name.begin(), name.end(), ' ', '_');
  return name;
}

std::optional<ClassLabel> parse_class_label(std::string_view text) {
  std::string canon;
  canon.reserve(text.size());
  for (char c : text)
    canon.push_back(c == '_' ? ' ' : static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  const auto& names = class_names();
  for (std::size_t i = 0; i < kNumClasses; ++i)
    if (canon == names[i]) return static_cast<ClassLabel>(i);
  return std::nullopt;
}

std::array<std::size_t, kNumClasses> DatasetManifest::class_counts() const {
  std::array<std::size_t, kNumClasses> counts{};
  for (const auto& e : entries) ++counts[static_cast<std::size_t>(e.label)];
  return counts;
}

namespace {

std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

DatasetManifest load_manifest(const fs::path& csv_path) {
  std::ifstream in(csv_path);
  require(in.good(), ErrorKind::Io, "cannot open manifest: ", csv_path.string());

  DatasetManifest manifest;
  manifest.root = csv_path.parent_path();

  std::string line;
  require(static_cast<bool>(std::getline(in, line)), ErrorKind::Format,
          "manifest is empty: ", csv_path.string());
  require(trim(line) == "filename,label", ErrorKind::Format,
          "manifest header must be 'filename,label', got '", trim(line), "'");

  std::set<std::string> seen;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    const std::string stripped = trim(line);
    if (stripped.empty()) continue;
    const std::size_t comma = stripped.find(',');
    require(comma != std::string::npos, ErrorKind::Format, "manifest row ", row,
            ": missing comma");
    const std::string filename = trim(stripped.substr(0, comma));
    const std::string label_text = trim(stripped.substr(comma + 1));
    require(!filename.empty(), ErrorKind::Format, "manifest row ", row, ": empty filename");
    auto label = parse_class_label(label_text);
    require(label.has_value(), ErrorKind::Format, "manifest row ", row, ": unknown label '",
            label_text, "'");
    require(seen.insert(filename).second, ErrorKind::Format, "manifest row ", row,
            ": duplicate filename '", filename, "'");
    manifest.entries.push_back({filename, *label});
  }
  require(!manifest.entries.empty(), ErrorKind::Format,
          "manifest has no data rows: ", csv_path.string());
  return manifest;
}

namespace {

// Reads one whitespace-delimited PPM header token, skipping '#' comments.
std::string ppm_token(std::istream& in) {
  std::string tok;
  int c;
  while ((c = in.get()) != EOF) {
    if (c == '#') {
      while ((c = in.get()) != EOF && c != '\n') {}
      continue;
    }
    if (std::isspace(c)) {
      if (!tok.empty()) break;
      continue;
    }
    tok.push_back(static_cast<char>(c));
  }
  return tok;
}

std::size_t ppm_number(std::istream& in, const char* what) {
  const std::string tok = ppm_token(in);
  require(!tok.empty() && tok.find_first_not_of("0123456789") == std::string::npos,
          ErrorKind::Format, "ppm: bad ", what, " '", tok, "'");
  return static_cast<std::size_t>(std::stoull(tok));
}

}  // namespace

Tensor load_ppm(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), ErrorKind::Io, "cannot open image: ", path.string());
  require(ppm_token(in) == "P6", ErrorKind::Format, "ppm: not a P6 file: ", path.string());
  const std::size_t w = ppm_number(in, "width");
  const std::size_t h = ppm_number(in, "height");
  const std::size_t maxval = ppm_number(in, "maxval");
  require(w >= 1 && h >= 1, ErrorKind::Format, "ppm: empty image: ", path.string());
  require(maxval == 255, ErrorKind::Format, "ppm: maxval must be 255, got ", maxval);

  std::vector<unsigned char> raw(3 * w * h);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  require(static_cast<std::size_t>(in.gcount()) == raw.size(), ErrorKind::Format,
          "ppm: truncated payload: ", path.string());

  Tensor image = Tensor::zeros({3, h, w});
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < 3; ++c)
        image.at((c * h + y) * w + x) = static_cast<float>(raw[(y * w + x) * 3 + c]) / 255.0f;
  return image;
}

void save_ppm(const fs::path& path, const Tensor& image) {
  require(image.rank() == 3 && image.dim(0) == 3, ErrorKind::Shape,
          "save_ppm expects [3,H,W], got ", shape_str(image.shape()));
  const std::size_t h = image.dim(1), w = image.dim(2);
  std::ofstream out(path, std::ios::binary);
  require(out.good(), ErrorKind::Io, "cannot write image: ", path.string());
  out << "P6\n" << w << " " << h << "\n255\n";
  std::vector<unsigned char> raw(3 * w * h);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < 3; ++c) {
        const float v = std::clamp(image.at((c * h + y) * w + x), 0.0f, 1.0f);
        raw[(y * w + x) * 3 + c] = static_cast<unsigned char>(std::lround(v * 255.0f));
      }
  out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  require(out.good(), ErrorKind::Io, "write failed: ", path.string());
}

Tensor resize_bilinear(const Tensor& image, std::size_t out_h, std::size_t out_w) {
  require(image.rank() == 3, ErrorKind::Shape, "resize expects [C,H,W], got ",
          shape_str(image.shape()));
  require(out_h >= 1 && out_w >= 1, ErrorKind::Domain, "resize target must be positive");
  const std::size_t ch = image.dim(0), in_h = image.dim(1), in_w = image.dim(2);
  if (in_h == out_h && in_w == out_w) return image.clone();

  Tensor out = Tensor::zeros({ch, out_h, out_w});
  const double sy = static_cast<double>(in_h) / static_cast<double>(out_h);
  const double sx = static_cast<double>(in_w) / static_cast<double>(out_w);
  for (std::size_t y = 0; y < out_h; ++y) {
    // Pixel-center mapping, clamped to the source extent.
    double fy = (static_cast<double>(y) + 0.5) * sy - 0.5;
    fy = std::clamp(fy, 0.0, static_cast<double>(in_h - 1));
    const std::size_t y0 = static_cast<std::size_t>(fy);
    const std::size_t y1 = std::min(y0 + 1, in_h - 1);
    const double wy = fy - static_cast<double>(y0);
    for (std::size_t x = 0; x < out_w; ++x) {
      double fx = (static_cast<double>(x) + 0.5) * sx - 0.5;
      fx = std::clamp(fx, 0.0, static_cast<double>(in_w - 1));
      const std::size_t x0 = static_cast<std::size_t>(fx);
      const std::size_t x1 = std::min(x0 + 1, in_w - 1);
      const double wx = fx - static_cast<double>(x0);
      for (std::size_t c = 0; c < ch; ++c) {
        const auto px = [&](std::size_t yy, std::size_t xx) {
          return static_cast<double>(image.at((c * in_h + yy) * in_w + xx));
        };
        const double top = px(y0, x0) * (1 - wx) + px(y0, x1) * wx;
        const double bot = px(y1, x0) * (1 - wx) + px(y1, x1) * wx;
        out.at((c * out_h + y) * out_w + x) = static_cast<float>(top * (1 - wy) + bot * wy);
      }
    }
  }
  return out;
}

Tensor load_image(const fs::path& path, std::size_t size) {
  return resize_bilinear(load_ppm(path), size, size);
}

void SyntheticSpec::validate() const {
  require(size >= 8, ErrorKind::Config, "synthetic image size must be >= 8, got ", size);
  require(per_class_counts.empty() || per_class_counts.size() == kNumClasses, ErrorKind::Config,
          "per_class_counts must have ", kNumClasses, " entries");
  for (std::size_t c = 0; c < kNumClasses; ++c)
    require(count_for(c) >= 1, ErrorKind::Config, "per-class count must be >= 1");
  // Distinct parameter tuples keep the classes separable.
  for (std::size_t a = 0; a < kNumClasses; ++a)
    for (std::size_t b = a + 1; b < kNumClasses; ++b)
      require(frequency[a] != frequency[b] || orientation[a] != orientation[b] ||
                  blob_count[a] != blob_count[b] || base_hue[a] != base_hue[b],
              ErrorKind::Config, "classes ", a, " and ", b, " share a texture parameter tuple");
}

namespace {

// Hue in [0,1) -> RGB multipliers, a smooth wheel with full saturation.
std::array<double, 3> hue_to_rgb(double hue) {
  std::array<double, 3> rgb;
  for (int c = 0; c < 3; ++c) {
    const double phase = hue * 2.0 * M_PI - c * 2.0 * M_PI / 3.0;
    rgb[c] = 0.5 + 0.5 * std::cos(phase);
  }
  return rgb;
}

Tensor synth_image(const SyntheticSpec& spec, std::size_t cls, Rng& rng) {
  const std::size_t n = spec.size;
  const double freq = spec.frequency[cls] * (1.0 + rng.uniform(-0.1, 0.1));
  const double theta = spec.orientation[cls] + rng.uniform(-0.08, 0.08);
  const double phase = rng.uniform(0.0, 2.0 * M_PI);
  const double hue = spec.base_hue[cls] + rng.uniform(-0.03, 0.03);
  const auto tint = hue_to_rgb(hue - std::floor(hue));

  struct Blob {
    double cy, cx, r, amp;
  };
  std::vector<Blob> blobs(spec.blob_count[cls]);
  for (auto& b : blobs) {
    b.cy = rng.uniform(0.0, static_cast<double>(n));
    b.cx = rng.uniform(0.0, static_cast<double>(n));
    b.r = rng.uniform(0.04, 0.10) * static_cast<double>(n);
    b.amp = rng.uniform(0.25, 0.45) * (rng.next_double() < 0.5 ? -1.0 : 1.0);
  }

  const double cos_t = std::cos(theta), sin_t = std::sin(theta);
  Tensor image = Tensor::zeros({3, n, n});
  for (std::size_t y = 0; y < n; ++y)
    for (std::size_t x = 0; x < n; ++x) {
      const double u = cos_t * static_cast<double>(x) + sin_t * static_cast<double>(y);
      double v = 0.55 + 0.3 * std::sin(2.0 * M_PI * freq * u + phase);
      for (const auto& b : blobs) {
        const double dy = static_cast<double>(y) - b.cy;
        const double dx = static_cast<double>(x) - b.cx;
        v += b.amp * std::exp(-(dy * dy + dx * dx) / (2.0 * b.r * b.r));
      }
      for (std::size_t c = 0; c < 3; ++c)
        image.at((c * n + y) * n + x) =
            static_cast<float>(std::clamp(v * (0.35 + 0.65 * tint[c]), 0.0, 1.0));
    }
  return image;
}

}  // namespace

DatasetManifest generate_synthetic(const SyntheticSpec& spec, const fs::path& out_dir) {
  spec.validate();
  std::error_code ec;
  fs::create_directories(out_dir / "images", ec);
  require(!ec, ErrorKind::Io, "cannot create output dir: ", out_dir.string());

  DatasetManifest manifest;
  manifest.root = out_dir;
  Rng root_rng(spec.seed);
  for (std::size_t cls = 0; cls < kNumClasses; ++cls) {
    const std::string dir = class_dir_name(static_cast<ClassLabel>(cls));
    fs::create_directories(out_dir / "images" / dir, ec);
    require(!ec, ErrorKind::Io, "cannot create class dir: ", dir);
    for (std::size_t i = 0; i < spec.count_for(cls); ++i) {
      Rng rng = root_rng.fork(cls * 1000003 + i);
      Tensor image = synth_image(spec, cls, rng);
      const std::string rel = "images/" + dir + "/" + std::to_string(i) + ".ppm";
      save_ppm(out_dir / rel, image);
      manifest.entries.push_back({rel, static_cast<ClassLabel>(cls)});
    }
  }

  std::ofstream csv(out_dir / "labels.csv");
  require(csv.good(), ErrorKind::Io, "cannot write labels.csv in ", out_dir.string());
  csv << "filename,label\n";
  for (const auto& e : manifest.entries)
    csv << e.path << "," << class_dir_name(e.label) << "\n";
  require(csv.good(), ErrorKind::Io, "write failed: labels.csv");
  return manifest;
}

std::pair<DatasetManifest, DatasetManifest> split(const DatasetManifest& manifest,
                                                  double val_fraction, std::uint64_t seed) {
  require(val_fraction > 0.0 && val_fraction < 1.0, ErrorKind::Domain,
          "val_fraction must be in (0,1), got ", val_fraction);
  std::array<std::vector<std::size_t>, kNumClasses> by_class;
  for (std::size_t i = 0; i < manifest.entries.size(); ++i)
    by_class[static_cast<std::size_t>(manifest.entries[i].label)].push_back(i);
  for (std::size_t c = 0; c < kNumClasses; ++c)
    require(by_class[c].size() >= 2, ErrorKind::Domain, "class '", class_names()[c],
            "' has ", by_class[c].size(), " entries; need at least 2 to split");

  DatasetManifest train, val;
  train.root = val.root = manifest.root;
  Rng rng(seed);
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    auto& idx = by_class[c];
    rng.shuffle(idx);
    const std::size_t n_val = static_cast<std::size_t>(
        std::llround(static_cast<double>(idx.size()) * val_fraction));
    for (std::size_t k = 0; k < idx.size(); ++k)
      (k < n_val ? val : train).entries.push_back(manifest.entries[idx[k]]);
  }
  return {std::move(train), std::move(val)};
}

Normalization compute_normalization(const DatasetManifest& manifest, std::size_t size) {
  require(!manifest.entries.empty(), ErrorKind::Domain, "cannot normalize an empty manifest");
  std::array<double, 3> sum{}, sum_sq{};
  std::size_t count = 0;
  for (const auto& e : manifest.entries) {
    Tensor image = load_image(manifest.root / e.path, size);
    const std::size_t plane = size * size;
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t i = 0; i < plane; ++i) {
        const double v = image.at(c * plane + i);
        sum[c] += v;
        sum_sq[c] += v * v;
      }
    count += plane;
  }
  Normalization norm;
  for (std::size_t c = 0; c < 3; ++c) {
    const double mean = sum[c] / static_cast<double>(count);
    const double var = std::max(sum_sq[c] / static_cast<double>(count) - mean * mean, 1e-12);
    norm.mean[c] = static_cast<float>(mean);
    norm.stddev[c] = static_cast<float>(std::sqrt(var));
  }
  return norm;
}

std::vector<Batch> make_batches(const DatasetManifest& manifest, std::size_t batch_size,
                                std::uint64_t shuffle_seed, const Normalization& norm,
                                std::size_t size) {
  require(batch_size >= 1, ErrorKind::Domain, "batch_size must be >= 1");
  require(!manifest.entries.empty(), ErrorKind::Domain, "cannot batch an empty manifest");

  std::vector<std::size_t> order(manifest.entries.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(shuffle_seed);
  rng.shuffle(order);

  std::vector<Batch> batches;
  const std::size_t plane = size * size;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    const std::size_t n = std::min(batch_size, order.size() - start);
    Batch batch;
    batch.images = Tensor::zeros({n, 3, size, size});
    batch.labels.resize(n);
    for (std::size_t s = 0; s < n; ++s) {
      const auto& e = manifest.entries[order[start + s]];
      Tensor image = load_image(manifest.root / e.path, size);
      for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t i = 0; i < plane; ++i)
          batch.images.at(((s * 3 + c) * plane) + i) =
              (image.at(c * plane + i) - norm.mean[c]) / norm.stddev[c];
      batch.labels[s] = static_cast<std::size_t>(e.label);
    }
    batches.push_back(std::move(batch));
  }
  return batches;
}

}  // namespace sslf
