#include "doctest.h"

#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "sslf/data.hpp"

using namespace sslf;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& tag) {
  fs::path dir = fs::temp_directory_path() / ("sslf_data_" + tag);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  out << text;
}

std::string read_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("class ids follow alphabetical name order") {
  const auto& names = class_names();
  REQUIRE(names.size() == 10);
  CHECK(names[0] == "angioectasia");
  CHECK(names[4] == "foreign body");
  CHECK(names[6] == "normal");
  CHECK(names[9] == "worms");
  for (std::size_t i = 0; i + 1 < names.size(); ++i) CHECK(names[i] < names[i + 1]);
}

TEST_CASE("label parsing is case-insensitive and accepts underscores") {
  CHECK(parse_class_label("bleeding") == ClassLabel::kBleeding);
  CHECK(parse_class_label("Bleeding") == ClassLabel::kBleeding);
  CHECK(parse_class_label("FOREIGN BODY") == ClassLabel::kForeignBody);
  CHECK(parse_class_label("foreign_body") == ClassLabel::kForeignBody);
  CHECK(parse_class_label("Polyps") == std::nullopt);
  CHECK(parse_class_label("") == std::nullopt);
  CHECK(class_dir_name(ClassLabel::kForeignBody) == "foreign_body");
}

TEST_CASE("load_manifest accepts a valid file and reports bad rows") {
  auto dir = fresh_dir("manifest");
  write_text(dir / "ok.csv",
             "filename,label\n"
             "a.ppm,bleeding\n"
             "b.ppm,Normal\n"
             "c.ppm,foreign_body\n");
  auto manifest = load_manifest(dir / "ok.csv");
  CHECK(manifest.entries.size() == 3);
  CHECK(manifest.entries[0].label == ClassLabel::kBleeding);
  CHECK(manifest.entries[2].label == ClassLabel::kForeignBody);

  write_text(dir / "bad_label.csv", "filename,label\na.ppm,bleeding\nb.ppm,Polyps\n");
  CHECK_THROWS_WITH_AS(load_manifest(dir / "bad_label.csv"),
                       doctest::Contains("row 3"), Error);

  write_text(dir / "dup.csv", "filename,label\na.ppm,bleeding\na.ppm,normal\n");
  CHECK_THROWS_AS(load_manifest(dir / "dup.csv"), Error);

  write_text(dir / "empty.csv", "");
  CHECK_THROWS_AS(load_manifest(dir / "empty.csv"), Error);

  write_text(dir / "no_rows.csv", "filename,label\n");
  CHECK_THROWS_AS(load_manifest(dir / "no_rows.csv"), Error);

  CHECK_THROWS_AS(load_manifest(dir / "missing.csv"), Error);
}

TEST_CASE("manifest class counts match a line-counting oracle") {
  auto dir = fresh_dir("counts");
  std::ostringstream csv;
  csv << "filename,label\n";
  std::map<std::string, std::size_t> oracle;
  Rng rng(3);
  for (int i = 0; i < 57; ++i) {
    const auto cls = class_names()[rng.below(10)];
    csv << "img" << i << ".ppm," << cls << "\n";
    ++oracle[cls];
  }
  write_text(dir / "labels.csv", csv.str());
  auto counts = load_manifest(dir / "labels.csv").class_counts();
  std::size_t total = 0;
  for (std::size_t c = 0; c < 10; ++c) {
    CHECK(counts[c] == oracle[class_names()[c]]);
    total += counts[c];
  }
  CHECK(total == 57);
}

TEST_CASE("ppm load maps bytes to [0,1] and validates the stream") {
  auto dir = fresh_dir("ppm");
  {
    std::ofstream out(dir / "white.ppm", std::ios::binary);
    out << "P6\n2 2\n255\n";
    for (int i = 0; i < 12; ++i) out.put(static_cast<char>(255));
  }
  auto white = load_ppm(dir / "white.ppm");
  CHECK(white.shape() == Shape{3, 2, 2});
  for (std::size_t i = 0; i < white.size(); ++i) CHECK(white.at(i) == 1.0f);

  write_text(dir / "text.ppm", "P3\n2 2\n255\n0 0 0\n");
  CHECK_THROWS_AS(load_ppm(dir / "text.ppm"), Error);

  {
    std::ofstream out(dir / "short.ppm", std::ios::binary);
    out << "P6\n2 2\n255\n";
    for (int i = 0; i < 5; ++i) out.put(static_cast<char>(0));
  }
  CHECK_THROWS_AS(load_ppm(dir / "short.ppm"), Error);
}

TEST_CASE("ppm write-then-read roundtrip is exact on quantized values") {
  auto dir = fresh_dir("roundtrip");
  Rng rng(5);
  auto image = Tensor::zeros({3, 6, 4});
  // Quantized values k/255 survive the byte roundtrip bit-exactly.
  for (std::size_t i = 0; i < image.size(); ++i)
    image.at(i) = static_cast<float>(rng.below(256)) / 255.0f;
  save_ppm(dir / "img.ppm", image);
  auto back = load_ppm(dir / "img.ppm");
  REQUIRE(back.shape() == image.shape());
  CHECK(back.values() == image.values());
}

TEST_CASE("bilinear 2x2 -> 4x4 matches the hand-evaluated grid") {
  // Checker [[0,1],[1,0]] under pixel-center mapping with edge clamping:
  // effective coordinates per axis are {0, 0.25, 0.75, 1} and the surface is
  // f(y,x) = x + y - 2xy.
  auto checker = Tensor::from({1, 2, 2}, {0, 1, 1, 0});
  auto out = resize_bilinear(checker, 4, 4);
  const double u[4] = {0.0, 0.25, 0.75, 1.0};
  for (std::size_t y = 0; y < 4; ++y)
    for (std::size_t x = 0; x < 4; ++x)
      CHECK(out.at(y * 4 + x) ==
            doctest::Approx(u[x] + u[y] - 2 * u[x] * u[y]).epsilon(1e-6));

  // Identity when the size already matches.
  auto same = resize_bilinear(checker, 2, 2);
  CHECK(same.values() == checker.values());
}

TEST_CASE("synthetic generation is deterministic and correctly laid out") {
  SyntheticSpec spec;
  spec.per_class = 3;
  spec.size = 16;
  spec.seed = 9;

  auto dir_a = fresh_dir("synth_a");
  auto dir_b = fresh_dir("synth_b");
  auto manifest_a = generate_synthetic(spec, dir_a);
  auto manifest_b = generate_synthetic(spec, dir_b);

  REQUIRE(manifest_a.entries.size() == 30);
  auto counts = manifest_a.class_counts();
  for (std::size_t c = 0; c < 10; ++c) CHECK(counts[c] == 3);

  for (std::size_t i = 0; i < manifest_a.entries.size(); ++i) {
    REQUIRE(manifest_a.entries[i].path == manifest_b.entries[i].path);
    REQUIRE(read_bytes(dir_a / manifest_a.entries[i].path) ==
            read_bytes(dir_b / manifest_b.entries[i].path));
  }

  // labels.csv reloads to the same manifest.
  auto reloaded = load_manifest(dir_a / "labels.csv");
  REQUIRE(reloaded.entries.size() == manifest_a.entries.size());
  for (std::size_t i = 0; i < reloaded.entries.size(); ++i) {
    CHECK(reloaded.entries[i].path == manifest_a.entries[i].path);
    CHECK(reloaded.entries[i].label == manifest_a.entries[i].label);
  }

  // All loaded pixels lie in [0,1].
  auto img = load_ppm(dir_a / manifest_a.entries[0].path);
  for (std::size_t i = 0; i < img.size(); ++i) {
    REQUIRE(img.at(i) >= 0.0f);
    REQUIRE(img.at(i) <= 1.0f);
  }
}

TEST_CASE("stratified split honors the per-class rounding rule") {
  DatasetManifest manifest;
  for (std::size_t c = 0; c < 10; ++c)
    for (std::size_t i = 0; i < 100; ++i)
      manifest.entries.push_back(
          {"img_" + std::to_string(c) + "_" + std::to_string(i), static_cast<ClassLabel>(c)});

  auto [train, val] = split(manifest, 0.2, 7);
  auto vc = val.class_counts();
  auto tc = train.class_counts();
  for (std::size_t c = 0; c < 10; ++c) {
    CHECK(vc[c] == 20);
    CHECK(tc[c] == 80);
  }

  // Partition: disjoint, union equals the input.
  std::set<std::string> train_set, val_set;
  for (const auto& e : train.entries) train_set.insert(e.path);
  for (const auto& e : val.entries) val_set.insert(e.path);
  CHECK(train_set.size() + val_set.size() == manifest.entries.size());
  for (const auto& p : val_set) CHECK(train_set.count(p) == 0);
}

TEST_CASE("split determinism and seed sensitivity") {
  DatasetManifest manifest;
  for (std::size_t c = 0; c < 10; ++c)
    for (std::size_t i = 0; i < 20; ++i)
      manifest.entries.push_back(
          {"img_" + std::to_string(c) + "_" + std::to_string(i), static_cast<ClassLabel>(c)});

  auto paths = [](const DatasetManifest& m) {
    std::vector<std::string> out;
    for (const auto& e : m.entries) out.push_back(e.path);
    return out;
  };

  auto [t1, v1] = split(manifest, 0.25, 11);
  auto [t2, v2] = split(manifest, 0.25, 11);
  CHECK(paths(v1) == paths(v2));
  CHECK(paths(t1) == paths(t2));

  int distinct = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto [t, v] = split(manifest, 0.25, seed);
    if (paths(v) != paths(v1)) ++distinct;
  }
  CHECK(distinct >= 19);  // at most the matching seed collides

  DatasetManifest thin = manifest;
  thin.entries.erase(thin.entries.begin() + 1, thin.entries.begin() + 20);  // class 0 -> 1 entry
  CHECK_THROWS_AS(split(thin, 0.25, 1), Error);
}

TEST_CASE("batching covers every entry once with the short batch kept") {
  SyntheticSpec spec;
  spec.per_class = 1;
  spec.size = 8;
  spec.seed = 21;
  auto dir = fresh_dir("batches");
  auto manifest = generate_synthetic(spec, dir);  // 10 entries

  Normalization identity;
  auto batches = make_batches(manifest, 4, 13, identity, 8);
  REQUIRE(batches.size() == 3);
  CHECK(batches[0].images.dim(0) == 4);
  CHECK(batches[1].images.dim(0) == 4);
  CHECK(batches[2].images.dim(0) == 2);

  // Permutation property: the label multiset is preserved.
  std::vector<std::size_t> seen;
  for (const auto& b : batches) seen.insert(seen.end(), b.labels.begin(), b.labels.end());
  std::sort(seen.begin(), seen.end());
  CHECK(seen == std::vector<std::size_t>{0, 1, 2, 3, 4, 5, 6, 7, 8, 9});

  CHECK_THROWS_AS(make_batches(DatasetManifest{}, 4, 1, identity, 8), Error);
}

TEST_CASE("train-split statistics normalize the train set to zero mean unit std") {
  SyntheticSpec spec;
  spec.per_class = 4;
  spec.size = 16;
  spec.seed = 33;
  auto dir = fresh_dir("norm");
  auto manifest = generate_synthetic(spec, dir);

  auto norm = compute_normalization(manifest, 16);
  auto batches = make_batches(manifest, 8, 17, norm, 16);

  std::array<double, 3> sum{}, sum_sq{};
  std::size_t count = 0;
  for (const auto& b : batches) {
    const std::size_t n = b.images.dim(0), plane = 16 * 16;
    for (std::size_t s = 0; s < n; ++s)
      for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t i = 0; i < plane; ++i) {
          const double v = b.images.at((s * 3 + c) * plane + i);
          sum[c] += v;
          sum_sq[c] += v * v;
        }
    count += n * plane;
  }
  for (std::size_t c = 0; c < 3; ++c) {
    const double mean = sum[c] / count;
    const double stddev = std::sqrt(sum_sq[c] / count - mean * mean);
    CHECK(std::abs(mean) < 1e-3);
    CHECK(std::abs(stddev - 1.0) < 1e-2);
  }
}
