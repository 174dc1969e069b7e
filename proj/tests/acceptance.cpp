// End-to-end acceptance checks. Each criterion prints exactly one PASS/FAIL
// line; the process exits nonzero if any criterion fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "json.hpp"
#include "sslf/commands.hpp"
#include "sslf/corruption.hpp"
#include "sslf/metrics.hpp"
#include "sslf/training.hpp"

using namespace sslf;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

int g_failures = 0;

void record(const std::string& name, bool ok, const std::string& detail) {
  std::cout << (ok ? "[PASS] " : "[FAIL] ") << name << " — " << detail << "\n";
  if (!ok) ++g_failures;
}

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("sslf_accept_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string read_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string fmt(double v, int digits = 4) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.*g", digits, v);
  return buf;
}

// Desk-scale configuration shared by the fast pipeline criteria.
RunConfig tiny_run(const fs::path& out_dir) {
  RunConfig cfg;
  cfg.out_dir = out_dir;
  cfg.synthetic.per_class = 5;
  cfg.synthetic.size = 16;
  cfg.synthetic.seed = 3;
  cfg.pretrain_epochs = 1;
  cfg.unet.base_channels = 4;
  cfg.unet.depth = 1;
  cfg.unet.norm = NormKind::kGroup;
  cfg.backbone.stem_channels = 8;
  cfg.backbone.stages = {{1, 8, 1, 1, 3}};
  cfg.backbone.feature_dim = 16;
  cfg.backbone.norm = NormKind::kGroup;
  cfg.fusion.head_dims = {16};
  cfg.fusion.dropout = 0.0;
  cfg.train.epochs = 1;
  cfg.train.batch_size = 8;
  cfg.train.learning_rate = 1e-3;
  cfg.train.seed = 7;
  cfg.train.input_size = 16;
  return cfg;
}

// --- 1: finite-difference gradient suite -----------------------------------

void criterion_gradient_suite() {
  const auto start = Clock::now();
  std::ostringstream sink;
  const bool ok = cmd_gradcheck(sink) == 0;
  const double secs = seconds_since(start);
  record("gradient-suite", ok && secs < 120.0,
         std::string(ok ? "all ops and the composite classifier pass" : "gradient check failed") +
             ", " + fmt(secs, 3) + "s");
}

// --- 2: published-report arithmetic ----------------------------------------

void criterion_report_arithmetic() {
  // Printed per-class precision/recall/support of the reference evaluation.
  const double P[10] = {0.865, 0.840, 0.785, 0.614, 0.911, 0.888, 0.978, 0.692, 0.989, 0.944};
  const double R[10] = {0.813, 0.822, 0.764, 0.535, 0.844, 0.854, 0.986, 0.752, 0.976, 1.000};
  const double F[10] = {0.838, 0.831, 0.774, 0.572, 0.876, 0.871, 0.982, 0.721, 0.982, 0.971};
  const double S[10] = {497, 359, 1155, 297, 340, 343, 12287, 500, 286, 68};
  const double tol = 0.0015;

  bool ok = true;
  double total = 0, macro_p = 0, macro_r = 0, macro_f = 0, wp = 0, wr = 0, wf = 0;
  for (int c = 0; c < 10; ++c) total += S[c];
  for (int c = 0; c < 10; ++c) {
    const double f1 = 2.0 * P[c] * R[c] / (P[c] + R[c]);
    ok = ok && std::abs(f1 - F[c]) <= tol;
    macro_p += P[c] / 10;
    macro_r += R[c] / 10;
    macro_f += f1 / 10;
    wp += P[c] * S[c] / total;
    wr += R[c] * S[c] / total;
    wf += f1 * S[c] / total;
  }
  ok = ok && std::abs(macro_p - 0.851) <= tol && std::abs(macro_r - 0.835) <= tol &&
       std::abs(macro_f - 0.842) <= tol;
  ok = ok && std::abs(wp - 0.939) <= tol && std::abs(wr - 0.940) <= tol &&
       std::abs(wf - 0.939) <= tol;
  ok = ok && total == 16132.0;
  // Support-weighted recall equals plain accuracy, the headline 0.940.
  ok = ok && std::abs(wr - 0.940) <= tol;

  // The engine reports macro recall as balanced accuracy: verify on a random
  // confusion matrix that the two are computed identically.
  Rng rng(404);
  ConfusionMatrix cm;
  for (auto& row : cm.counts)
    for (auto& cell : row) cell = rng.below(50) + 1;
  const ClassificationReport rep = report(cm);
  double macro_recall = 0;
  for (const auto& row : rep.rows) macro_recall += row.recall / 10;
  ok = ok && std::abs(rep.balanced_accuracy - macro_recall) < 1e-15;

  record("report-arithmetic", ok,
         "macro " + fmt(macro_p) + "/" + fmt(macro_r) + "/" + fmt(macro_f) + ", weighted " +
             fmt(wp) + "/" + fmt(wr) + "/" + fmt(wf) + ", balanced accuracy = macro recall");
}

// --- 3: metrics against brute-force oracles --------------------------------

void criterion_metrics_oracle() {
  Rng rng(99);
  std::vector<std::size_t> labels(1000), preds(1000);
  for (std::size_t i = 0; i < 1000; ++i) {
    labels[i] = rng.below(10);
    preds[i] = rng.below(10);
  }
  const ConfusionMatrix cm = confusion(labels, preds);

  bool counts_ok = true;
  for (std::size_t a = 0; a < 10; ++a)
    for (std::size_t p = 0; p < 10; ++p) {
      std::uint64_t n = 0;
      for (std::size_t i = 0; i < 1000; ++i)
        if (labels[i] == a && preds[i] == p) ++n;
      counts_ok = counts_ok && cm.counts[a][p] == n;
    }

  const ClassificationReport rep = report(cm);
  bool ratios_ok = true;
  double correct = 0;
  for (std::size_t c = 0; c < 10; ++c) {
    double tp = double(cm.counts[c][c]), row = 0, col = 0;
    for (std::size_t j = 0; j < 10; ++j) {
      row += double(cm.counts[c][j]);
      col += double(cm.counts[j][c]);
    }
    correct += tp;
    const double p = tp / col, r = tp / row, f = 2 * p * r / (p + r);
    ratios_ok = ratios_ok && std::abs(rep.rows[c].precision - p) < 1e-12 &&
                std::abs(rep.rows[c].recall - r) < 1e-12 && std::abs(rep.rows[c].f1 - f) < 1e-12;
  }
  ratios_ok = ratios_ok && std::abs(rep.accuracy - correct / 1000.0) < 1e-12;

  record("metrics-oracle", counts_ok && ratios_ok,
         "1000 samples: counts exact, ratios within 1e-12");
}

// --- 4: denoising pretraining beats the corrupted baseline -----------------

void criterion_pretraining_efficacy() {
  const auto start = Clock::now();
  const fs::path dir = fresh_dir("pretrain");

  SyntheticSpec spec;
  spec.per_class = 16;
  spec.size = 64;
  spec.seed = 5;
  const DatasetManifest manifest = generate_synthetic(spec, dir);
  const auto [train_split, val_split] = split(manifest, 0.2, 11);

  CorruptionSpec pretext;  // Gaussian noise, sigma 0.1
  pretext.sigma = 0.1;

  // Baseline: MSE between corrupted and clean validation images.
  double baseline = 0.0;
  Rng rng(17);
  for (const auto& entry : val_split.entries) {
    const Tensor clean = load_image(val_split.root / entry.path, 64);
    Rng img_rng = rng.fork(0);
    const auto [noisy, mask] = corrupt(clean, pretext, img_rng);
    double mse = 0.0;
    for (std::size_t i = 0; i < clean.size(); ++i) {
      const double d = double(noisy.at(i)) - double(clean.at(i));
      mse += d * d;
    }
    baseline += mse / double(clean.size());
  }
  baseline /= double(val_split.entries.size());

  UNetConfig ucfg;
  ucfg.base_channels = 8;
  ucfg.depth = 2;
  ucfg.norm = NormKind::kGroup;
  UNetModel model = build_unet<float>(ucfg, 11);

  TrainConfig tc;
  tc.learning_rate = 3e-3;
  tc.batch_size = 4;  // small batches: more optimizer steps per pass
  tc.epochs = 35;     // inside the 50-epoch budget
  tc.seed = 11;
  tc.input_size = 64;
  const PretrainResult result = pretrain(model, train_split, val_split, pretext, tc);

  double best = result.report.val_curve.empty() ? 1e9 : result.report.val_curve[0];
  for (double v : result.report.val_curve) best = std::min(best, v);

  const double secs = seconds_since(start);
  record("pretraining-efficacy", best <= 0.5 * baseline && secs < 600.0,
         "best val MSE " + fmt(best) + " vs corrupted baseline " + fmt(baseline) + " (" +
             fmt(100.0 * best / baseline, 3) + "%), " + fmt(secs, 3) + "s");
}

// --- 5: pretext selection is an argmin over validation MSE -----------------

void criterion_pretext_selection() {
  PretextReport mask, noise;
  mask.kind = CorruptionKind::kPatchMask;
  noise.kind = CorruptionKind::kGaussianNoise;

  mask.final_val_mse = 0.020;
  noise.final_val_mse = 0.012;
  const bool noise_wins = select_pretext({mask, noise}).winner == CorruptionKind::kGaussianNoise;

  mask.final_val_mse = 0.004;
  const bool mask_wins = select_pretext({noise, mask}).winner == CorruptionKind::kPatchMask;

  mask.final_val_mse = noise.final_val_mse;
  const bool tie_to_noise =
      select_pretext({mask, noise}).winner == CorruptionKind::kGaussianNoise;

  record("pretext-selection", noise_wins && mask_wins && tie_to_noise,
         "argmin over val MSE; exact ties resolve to gaussian_noise");
}

// --- 6: the fused classifier can overfit the synthetic set -----------------

void criterion_overfit_capacity() {
  const auto start = Clock::now();
  const fs::path dir = fresh_dir("overfit");

  SyntheticSpec spec;
  spec.per_class = 16;
  spec.size = 32;
  spec.seed = 9;
  const DatasetManifest manifest = generate_synthetic(spec, dir);
  const Normalization norm = compute_normalization(manifest, 32);

  UNetConfig ucfg;
  ucfg.base_channels = 4;
  ucfg.depth = 1;
  ucfg.norm = NormKind::kGroup;
  BackboneConfig bcfg;
  bcfg.stem_channels = 8;
  bcfg.stages = {{1, 8, 1, 2, 3}, {6, 16, 1, 2, 3}};
  bcfg.feature_dim = 32;
  bcfg.norm = NormKind::kGroup;
  FusionConfig fcfg;
  fcfg.variant = VariantKind::kEfficientFusionUNet;
  fcfg.common_dim = 32;
  fcfg.head_dims = {64};
  fcfg.dropout = 0.0;
  fcfg.freeze_unet_encoder = false;

  auto unet = std::make_shared<UNetModel>(build_unet<float>(ucfg, 21));
  auto backbone = std::make_shared<BackboneModel>(build_backbone<float>(bcfg, 22));
  FusedModel model = build_fused(fcfg, unet, backbone, 23);

  TrainConfig tc;
  tc.learning_rate = 1e-3;
  tc.batch_size = 16;
  tc.epochs = 60;  // within the 200-epoch budget
  tc.seed = 13;
  tc.input_size = 32;

  // Training accuracy: the full set doubles as the validation split, which
  // train_classifier evaluates in inference mode every epoch.
  const ClassifierResult result = train_classifier(model, manifest, manifest, norm, tc);
  double best_acc = 0.0;
  std::size_t best_epoch = 0;
  for (const EpochRecord& r : result.curve)
    if (r.val_accuracy > best_acc) {
      best_acc = r.val_accuracy;
      best_epoch = r.epoch;
    }

  const double secs = seconds_since(start);
  record("overfit-capacity", best_acc >= 0.95 && secs < 900.0,
         "train accuracy " + fmt(best_acc) + " at epoch " + std::to_string(best_epoch) + " of " +
             std::to_string(tc.epochs) + ", " + fmt(secs, 3) + "s");
}

// --- 7: all four classifier variants train and report ----------------------

void criterion_variant_parity() {
  const fs::path dir = fresh_dir("variants");
  const RunConfig cfg = tiny_run(dir);
  std::ostringstream out;
  bool ok = false;
  std::string detail = "cmd_train --variant all failed";
  if (cmd_train(cfg, "all", std::nullopt, std::nullopt, out) == 0) {
    const std::string summary = read_bytes(dir / "summary.csv");
    std::istringstream lines(summary);
    std::string header;
    std::getline(lines, header);
    std::size_t rows = 0;
    bool values_ok = true;
    for (std::string line; std::getline(lines, line);) {
      ++rows;
      const double acc = std::stod(line.substr(line.find(',') + 1));
      values_ok = values_ok && acc >= 0.0 && acc <= 1.0;
    }
    ok = rows == 4 && values_ok;
    detail = "4 variants trained and evaluated, one accuracy each";
  }
  record("variant-parity", ok, detail);
}

// --- 8: training is bit-deterministic --------------------------------------

void criterion_determinism() {
  const fs::path dir_a = fresh_dir("det_a"), dir_b = fresh_dir("det_b");
  RunConfig cfg_a = tiny_run(dir_a), cfg_b = tiny_run(dir_b);
  cfg_a.train.epochs = cfg_b.train.epochs = 2;
  std::ostringstream out;
  const bool ran = cmd_train(cfg_a, "fusion", std::nullopt, std::nullopt, out) == 0 &&
                   cmd_train(cfg_b, "fusion", std::nullopt, std::nullopt, out) == 0;
  const bool ckpt_equal =
      ran && read_bytes(dir_a / "fusion.ckpt") == read_bytes(dir_b / "fusion.ckpt");
  const bool curve_equal =
      ran && read_bytes(dir_a / "fusion_curve.csv") == read_bytes(dir_b / "fusion_curve.csv");
  record("determinism", ckpt_equal && curve_equal,
         "two identical runs: checkpoints and curves bit-identical");
}

// --- 9: checkpoint roundtrip and corruption detection -----------------------

void criterion_checkpoint_robustness() {
  const fs::path dir = fresh_dir("ckpt");
  UNetConfig ucfg;
  ucfg.base_channels = 4;
  ucfg.depth = 1;
  ucfg.norm = NormKind::kGroup;
  UNetModel model = build_unet<float>(ucfg, 31);

  const Checkpoint ckpt = checkpoint_from_unet(model);
  save_checkpoint(ckpt, dir / "a.ckpt");
  const Checkpoint loaded = load_checkpoint(dir / "a.ckpt");
  save_checkpoint(loaded, dir / "b.ckpt");
  std::string bytes = read_bytes(dir / "a.ckpt");
  const bool roundtrip = bytes == read_bytes(dir / "b.ckpt");

  bytes[bytes.size() / 2] ^= 0x20;  // flip one bit in the middle
  std::ofstream(dir / "bad.ckpt", std::ios::binary) << bytes;
  bool detected = false;
  try {
    load_checkpoint(dir / "bad.ckpt");
  } catch (const Error& e) {
    detected = e.kind() == ErrorKind::Format;
  }
  record("checkpoint-robustness", roundtrip && detected,
         "roundtrip bit-exact; single-byte corruption raises a format error");
}

// --- 10: corruption laws over randomized trials ----------------------------

void criterion_corruption_laws() {
  Rng rng(2025);
  bool tiles_ok = true, identity_ok = true, sigma0_ok = true, clamp_ok = true;

  for (int trial = 0; trial < 100; ++trial) {
    CorruptionSpec spec;
    spec.kind = CorruptionKind::kPatchMask;
    spec.patch_size = 1 + rng.below(4);
    spec.mask_ratio = rng.uniform(0.0, 1.0);
    spec.fill_value = rng.uniform(0.0, 1.0);
    const std::size_t h = spec.patch_size * (2 + rng.below(5));
    const std::size_t w = spec.patch_size * (2 + rng.below(5));
    Tensor image = Tensor::zeros({3, h, w});
    for (std::size_t i = 0; i < image.size(); ++i) image.at(i) = float(rng.uniform(0.0, 1.0));

    Rng trial_rng = rng.fork(trial);
    const auto [corrupted, mask] = corrupt(image, spec, trial_rng);

    const std::size_t tiles = (h / spec.patch_size) * (w / spec.patch_size);
    const std::size_t expect =
        std::size_t(std::llround(spec.mask_ratio * double(tiles))) * spec.patch_size *
        spec.patch_size;
    tiles_ok = tiles_ok && mask.count_true() == expect;

    for (std::size_t c = 0; c < 3 && identity_ok; ++c)
      for (std::size_t i = 0; i < h * w; ++i)
        if (!mask.on[i] && corrupted.at(c * h * w + i) != image.at(c * h * w + i)) {
          identity_ok = false;
          break;
        }
  }

  for (int trial = 0; trial < 100; ++trial) {
    Tensor image = Tensor::zeros({3, 6, 6});
    for (std::size_t i = 0; i < image.size(); ++i) image.at(i) = float(rng.uniform(0.0, 1.0));

    CorruptionSpec zero;
    zero.sigma = 0.0;
    Rng r1 = rng.fork(1000 + trial);
    const auto [same, m1] = corrupt(image, zero, r1);
    for (std::size_t i = 0; i < image.size(); ++i)
      sigma0_ok = sigma0_ok && same.at(i) == image.at(i);

    CorruptionSpec heavy;
    heavy.sigma = 0.5;
    heavy.clamp = true;
    Rng r2 = rng.fork(2000 + trial);
    const auto [noisy, m2] = corrupt(image, heavy, r2);
    for (std::size_t i = 0; i < noisy.size(); ++i)
      clamp_ok = clamp_ok && noisy.at(i) >= 0.0f && noisy.at(i) <= 1.0f;
  }

  record("corruption-laws", tiles_ok && identity_ok && sigma0_ok && clamp_ok,
         "100 trials each: tile counts exact, unmasked pixels untouched, sigma=0 identity, "
         "clamp bounds hold");
}

}  // namespace

int main() {
  criterion_gradient_suite();
  criterion_report_arithmetic();
  criterion_metrics_oracle();
  criterion_pretraining_efficacy();
  criterion_pretext_selection();
  criterion_overfit_capacity();
  criterion_variant_parity();
  criterion_determinism();
  criterion_checkpoint_robustness();
  criterion_corruption_laws();

  if (g_failures == 0) {
    std::cout << "acceptance: all 10 criteria passed\n";
    return 0;
  }
  std::cout << "acceptance: " << g_failures << " criteria failed\n";
  return 1;
}
