#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "json.hpp"
#include "sslf/backbone.hpp"
#include "sslf/corruption.hpp"
#include "sslf/data.hpp"
#include "sslf/fusion.hpp"
#include "sslf/training.hpp"
#include "sslf/unet.hpp"

// Command implementations behind the CLI binary. Each command takes a fully
// parsed RunConfig, writes its artifacts under the configured output
// directory, prints a human-readable summary to `out`, and reports failures
// as sslf::Error; run_guarded maps error kinds to the stable exit codes
// (0 success, 2 config, 3 I/O, 4 divergence, 5 gradient-check failure).

namespace sslf {

// Complete declarative description of a run. With an empty manifest path the
// dataset is synthesized under <out_dir>/dataset; otherwise the manifest CSV
// is loaded and the synthetic spec is ignored.
struct RunConfig {
  std::filesystem::path out_dir = "out";
  std::filesystem::path manifest_path;
  SyntheticSpec synthetic;
  double val_fraction = 0.2;
  std::vector<CorruptionSpec> pretexts;  // default: patch masking + Gaussian noise
  std::size_t pretrain_epochs = 10;
  UNetConfig unet;
  BackboneConfig backbone;
  FusionConfig fusion;
  TrainConfig train;

  RunConfig();
  void validate() const;
};

nlohmann::json run_to_json(const RunConfig& c);
RunConfig run_from_json(const nlohmann::json& doc);
RunConfig load_run_config(const std::filesystem::path& path);

// Synthesizes the dataset and prints per-class counts.
int cmd_synth(const RunConfig& config, std::ostream& out);

// Pretrains one U-Net per configured pretext; writes pretext_<kind>.ckpt,
// pretext_<kind>_report.json, and pretext_<kind>_curve.csv.
int cmd_pretrain(const RunConfig& config, std::ostream& out);

// Picks the pretext with the lowest final validation MSE from the given
// report files (defaults to the reports cmd_pretrain writes) and records the
// choice in selection.json.
int cmd_select(const RunConfig& config, std::vector<std::filesystem::path> report_paths,
               std::ostream& out);

// Trains one classifier variant (or all four for "all"); writes
// <variant>.ckpt, <variant>_curve.csv, <variant>_report.{json,txt}, and for
// "all" a summary.csv with one accuracy row per variant.
int cmd_train(const RunConfig& config, const std::string& variant,
              const std::optional<std::filesystem::path>& pretrained,
              std::optional<bool> freeze_encoder, std::ostream& out);

// Evaluates a classifier checkpoint on a dataset split ("val", "train", or
// "all"); writes eval_report.{json,txt}.
int cmd_eval(const RunConfig& config, const std::filesystem::path& checkpoint_path,
             const std::string& split, std::ostream& out);

// Finite-difference checks every differentiable op plus a small end-to-end
// classifier; prints one line per check and returns 5 if any fails.
// `inject_fault` flips a sign in one backward rule as a negative control.
int cmd_gradcheck(std::ostream& out, bool inject_fault = false);

// Runs `body`, translating sslf::Error kinds into the exit-code contract.
int run_guarded(const std::function<int()>& body, std::ostream& err);

}  // namespace sslf
