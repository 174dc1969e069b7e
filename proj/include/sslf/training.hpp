#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "sslf/adam.hpp"
#include "sslf/corruption.hpp"
#include "sslf/data.hpp"
#include "sslf/fusion.hpp"
#include "sslf/unet.hpp"

namespace sslf {

struct TrainConfig {
  double learning_rate = 1e-4;
  std::size_t batch_size = 16;  // desk-scale default; full-size runs use 256
  std::size_t epochs = 10;
  std::uint64_t seed = 0;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  std::size_t input_size = 64;
  // Optional per-class loss weights (size 10); empty disables weighting.
  std::vector<double> class_weights;

  void validate() const;
  AdamConfig adam() const {
    return {learning_rate, adam_beta1, adam_beta2, adam_eps};
  }
};

enum class ModelKind : std::uint8_t {
  kUNet = 1,
  kBackbone = 2,
  kFused = 3,
};

// Self-describing snapshot: a config echo (JSON) plus named tensors. The
// binary layout is: magic "SSLF", u16 version, u8 kind, length-prefixed
// config echo, tensor table, trailing FNV-1a 64 checksum; integers are
// little-endian and length prefixes are u64.
struct Checkpoint {
  std::uint16_t version = 1;
  ModelKind kind = ModelKind::kUNet;
  std::string config_echo;
  std::vector<std::pair<std::string, Tensor>> tensors;
};

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Snapshot and restore between live models and checkpoints. Restoring
// validates the kind tag and the config echo, reporting every divergent
// field, and matches tensors by name with shape checks.
Checkpoint checkpoint_from_unet(const UNetModel& model);
void load_unet_from_checkpoint(UNetModel& model, const Checkpoint& ckpt);
Checkpoint checkpoint_from_fused(const FusedModel& model);
void load_fused_from_checkpoint(FusedModel& model, const Checkpoint& ckpt);

struct PretextReport {
  CorruptionKind kind = CorruptionKind::kGaussianNoise;
  double final_val_mse = 0.0;
  double final_val_psnr = 0.0;
  std::vector<double> train_curve;  // per-epoch mean training loss
  std::vector<double> val_curve;    // per-epoch full-image validation MSE
};

struct PretrainResult {
  Checkpoint best_checkpoint;  // lowest validation MSE (initial weights if 0 epochs)
  std::size_t best_epoch = 0;  // 1-based; 0 means "initialization"
  PretextReport report;
};

// Reconstruction pretraining: per batch, corrupt with fresh seeded
// randomness, minimize the pretext's reconstruction loss with Adam. The
// validation curve tracks full-image MSE between reconstruction and clean
// input so different pretexts are comparable.
PretrainResult pretrain(UNetModel& model, const DatasetManifest& train_data,
                        const DatasetManifest& val_data, const CorruptionSpec& pretext,
                        const TrainConfig& config);

struct PretextSelection {
  CorruptionKind winner = CorruptionKind::kGaussianNoise;
  // Every compared (kind, final validation MSE) pair, in input order.
  std::vector<std::pair<CorruptionKind, double>> compared;
};

// Argmin over final validation MSE; exact ties go to GaussianNoise. The
// outcome is invariant under report ordering.
PretextSelection select_pretext(const std::vector<PretextReport>& reports);

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double val_accuracy = 0.0;
  double val_balanced_accuracy = 0.0;
};

struct ClassifierResult {
  Checkpoint best_checkpoint;  // highest validation balanced accuracy
  std::size_t best_epoch = 0;  // 1-based; 0 means "initialization"
  double best_balanced_accuracy = -1.0;
  std::vector<EpochRecord> curve;
};

// Cross-entropy training of a fused classifier. Honors the freeze flag
// bit-exactly: a frozen U-Net is never stepped. Batches are normalized with
// the supplied (train-split) statistics.
ClassifierResult train_classifier(FusedModel& model, const DatasetManifest& train_data,
                                  const DatasetManifest& val_data, const Normalization& norm,
                                  const TrainConfig& config);

}  // namespace sslf
