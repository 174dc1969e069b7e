#include "sslf/training.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "sslf/config_json.hpp"
#include "sslf/metrics.hpp"

namespace sslf {

namespace fs = std::filesystem;
using nlohmann::json;

void TrainConfig::validate() const {
  require(learning_rate > 0, ErrorKind::Config, "learning_rate must be > 0");
  require(adam_beta1 > 0 && adam_beta1 < 1 && adam_beta2 > 0 && adam_beta2 < 1,
          ErrorKind::Config, "adam betas must lie in (0,1)");
  require(batch_size >= 1, ErrorKind::Config, "batch_size must be >= 1");
  require(input_size >= 8, ErrorKind::Config, "input_size must be >= 8");
  require(class_weights.empty() || class_weights.size() == kNumClasses, ErrorKind::Config,
          "class_weights must have ", kNumClasses, " entries when set");
}

// ---------------------------------------------------------------------------
// Checkpoint binary format
// ---------------------------------------------------------------------------

namespace {

constexpr char kMagic[4] = {'S', 'S', 'L', 'F'};
constexpr std::uint16_t kFormatVersion = 1;

std::uint64_t fnv1a64(const std::string& bytes) {
  std::uint64_t hash = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    hash ^= c;
    hash *= 0x100000001b3ULL;
  }
  return hash;
}

template <class T>
void put_le(std::string& out, T value) {
  for (std::size_t i = 0; i < sizeof(T); ++i)
    out.push_back(static_cast<char>((static_cast<std::uint64_t>(value) >> (8 * i)) & 0xff));
}

void put_f32(std::string& out, float value) {
  std::uint32_t bits;
  std::memcpy(&bits, &value, 4);
  put_le(out, bits);
}

struct ByteReader {
  const std::string& bytes;
  std::size_t pos = 0;

  void need(std::size_t n) const {
    require(pos + n <= bytes.size(), ErrorKind::Format, "checkpoint truncated at byte ", pos);
  }
  template <class T>
  T get_le() {
    need(sizeof(T));
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i)
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[pos + i])) << (8 * i);
    pos += sizeof(T);
    return static_cast<T>(v);
  }
  float get_f32() {
    const std::uint32_t bits = get_le<std::uint32_t>();
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }
  std::string get_string() {
    const std::uint64_t len = get_le<std::uint64_t>();
    need(len);
    std::string s = bytes.substr(pos, len);
    pos += len;
    return s;
  }
};

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const fs::path& path) {
  std::string body;
  body.append(kMagic, 4);
  put_le(body, ckpt.version);
  put_le(body, static_cast<std::uint8_t>(ckpt.kind));
  put_le(body, static_cast<std::uint64_t>(ckpt.config_echo.size()));
  body += ckpt.config_echo;
  put_le(body, static_cast<std::uint64_t>(ckpt.tensors.size()));
  for (const auto& [name, tensor] : ckpt.tensors) {
    put_le(body, static_cast<std::uint64_t>(name.size()));
    body += name;
    put_le(body, static_cast<std::uint8_t>(tensor.rank()));
    for (std::size_t d = 0; d < tensor.rank(); ++d)
      put_le(body, static_cast<std::uint64_t>(tensor.dim(d)));
    for (std::size_t i = 0; i < tensor.size(); ++i) put_f32(body, tensor.at(i));
  }
  put_le(body, fnv1a64(body));

  std::ofstream out(path, std::ios::binary);
  require(out.good(), ErrorKind::Io, "cannot write checkpoint: ", path.string());
  out.write(body.data(), static_cast<std::streamsize>(body.size()));
  require(out.good(), ErrorKind::Io, "checkpoint write failed: ", path.string());
}

Checkpoint load_checkpoint(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), ErrorKind::Io, "cannot open checkpoint: ", path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  const std::string bytes = ss.str();

  require(bytes.size() >= 4 && bytes.compare(0, 4, kMagic, 4) == 0, ErrorKind::Format,
          "not a checkpoint (bad magic): ", path.string());

  ByteReader r{bytes};
  r.pos = 4;
  Checkpoint ckpt;
  ckpt.version = r.get_le<std::uint16_t>();
  require(ckpt.version == kFormatVersion, ErrorKind::Format, "unsupported checkpoint version ",
          ckpt.version, " (expected ", kFormatVersion, ")");
  require(bytes.size() >= 4 + 2 + 1 + 8 + 8 + 8, ErrorKind::Format,
          "checkpoint truncated: ", path.string());
  const std::uint64_t stored = [&] {
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < 8; ++i)
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[bytes.size() - 8 + i]))
           << (8 * i);
    return v;
  }();
  require(fnv1a64(bytes.substr(0, bytes.size() - 8)) == stored, ErrorKind::Format,
          "checkpoint checksum mismatch: ", path.string());
  const std::uint8_t kind = r.get_le<std::uint8_t>();
  require(kind >= 1 && kind <= 3, ErrorKind::Format, "unknown model kind tag ", unsigned(kind));
  ckpt.kind = static_cast<ModelKind>(kind);
  ckpt.config_echo = r.get_string();
  const std::uint64_t count = r.get_le<std::uint64_t>();
  for (std::uint64_t t = 0; t < count; ++t) {
    std::string name = r.get_string();
    const std::uint8_t rank = r.get_le<std::uint8_t>();
    Shape shape(rank);
    for (std::size_t d = 0; d < rank; ++d)
      shape[d] = static_cast<std::size_t>(r.get_le<std::uint64_t>());
    Tensor tensor = Tensor::zeros(shape);
    for (std::size_t i = 0; i < tensor.size(); ++i) tensor.at(i) = r.get_f32();
    ckpt.tensors.emplace_back(std::move(name), std::move(tensor));
  }
  require(r.pos == bytes.size() - 8, ErrorKind::Format, "checkpoint has ",
          bytes.size() - 8 - r.pos, " trailing bytes");
  return ckpt;
}

// ---------------------------------------------------------------------------
// Config echoes and tensor snapshots
// ---------------------------------------------------------------------------

namespace {

json fused_config_json(const FusedModel& model) {
  json doc = {{"fusion", fusion_to_json(model.config)}};
  if (model.unet) doc["unet"] = unet_to_json(model.unet->config);
  if (model.backbone) doc["backbone"] = backbone_to_json(model.backbone->config);
  return doc;
}

// Compares the "config" subtree of a checkpoint echo against the expectation
// and reports every divergent field at once.
void check_echo(const std::string& echo, const json& expected, const char* what) {
  json stored;
  try {
    stored = json::parse(echo);
  } catch (const json::exception& e) {
    fail(ErrorKind::Format, what, ": unreadable config echo: ", e.what());
  }
  const json flat_a = stored.value("config", json::object()).flatten();
  const json flat_b = expected.flatten();
  std::ostringstream diffs;
  for (const auto& [key, value] : flat_b.items())
    if (!flat_a.contains(key) || flat_a[key] != value)
      diffs << " " << key << " (checkpoint "
            << (flat_a.contains(key) ? flat_a[key].dump() : std::string("<missing>"))
            << ", model " << value.dump() << ")";
  for (const auto& [key, value] : flat_a.items())
    if (!flat_b.contains(key)) diffs << " " << key << " (only in checkpoint)";
  require(diffs.str().empty(), ErrorKind::Config, what, ": config mismatch:", diffs.str());
}

void append_tensors(std::vector<std::pair<std::string, Tensor>>& out, const ParamSet<float>& ps,
                    const std::string& prefix) {
  for (const auto& [name, t] : ps.params) out.emplace_back(prefix + name, t.clone());
  for (const auto& [name, t] : ps.buffers) out.emplace_back(prefix + name, t.clone());
}

void restore_tensors(ParamSet<float>& ps, const Checkpoint& ckpt, const std::string& prefix) {
  auto restore_one = [&](const std::string& name, Tensor& dst) {
    for (const auto& [n, t] : ckpt.tensors)
      if (n == prefix + name) {
        require(t.shape() == dst.shape(), ErrorKind::Format, "checkpoint tensor ", n,
                " has shape ", shape_str(t.shape()), ", model expects ", shape_str(dst.shape()));
        for (std::size_t i = 0; i < dst.size(); ++i) dst.at(i) = t.at(i);
        return;
      }
    fail(ErrorKind::Format, "checkpoint is missing tensor ", prefix + name);
  };
  for (auto& [name, t] : ps.params) restore_one(name, t);
  for (auto& [name, t] : ps.buffers) restore_one(name, t);
}

json meta_json(std::size_t epoch, std::uint64_t seed, double score) {
  return {{"epoch", epoch}, {"seed", seed}, {"score", score}};
}

}  // namespace

Checkpoint checkpoint_from_unet(const UNetModel& model) {
  Checkpoint ckpt;
  ckpt.kind = ModelKind::kUNet;
  ckpt.config_echo = json{{"config", unet_to_json(model.config)}}.dump();
  append_tensors(ckpt.tensors, model.params, "");
  return ckpt;
}

void load_unet_from_checkpoint(UNetModel& model, const Checkpoint& ckpt) {
  require(ckpt.kind == ModelKind::kUNet, ErrorKind::Format,
          "checkpoint kind tag ", unsigned(static_cast<std::uint8_t>(ckpt.kind)),
          " is not a U-Net checkpoint");
  check_echo(ckpt.config_echo, unet_to_json(model.config), "unet checkpoint");
  restore_tensors(model.params, ckpt, "");
}

Checkpoint checkpoint_from_fused(const FusedModel& model) {
  Checkpoint ckpt;
  ckpt.kind = ModelKind::kFused;
  ckpt.config_echo = json{{"config", fused_config_json(model)}}.dump();
  if (model.unet) append_tensors(ckpt.tensors, model.unet->params, "unet.");
  if (model.backbone) append_tensors(ckpt.tensors, model.backbone->params, "backbone.");
  append_tensors(ckpt.tensors, model.params, "");
  return ckpt;
}

void load_fused_from_checkpoint(FusedModel& model, const Checkpoint& ckpt) {
  require(ckpt.kind == ModelKind::kFused, ErrorKind::Format,
          "checkpoint kind tag ", unsigned(static_cast<std::uint8_t>(ckpt.kind)),
          " is not a fused-classifier checkpoint");
  check_echo(ckpt.config_echo, fused_config_json(model), "fused checkpoint");
  if (model.unet) restore_tensors(model.unet->params, ckpt, "unet.");
  if (model.backbone) restore_tensors(model.backbone->params, ckpt, "backbone.");
  restore_tensors(model.params, ckpt, "");
}

// ---------------------------------------------------------------------------
// Pretraining
// ---------------------------------------------------------------------------

namespace {

struct CorruptedBatch {
  Tensor corrupted;  // [N,3,H,W]
  Tensor weights;    // per-element loss weights summing the loss to a mean
};

// Corrupts every sample independently and builds the loss-weight tensor that
// averages the pretext loss over its selected pixels and the batch.
CorruptedBatch corrupt_batch(const Tensor& clean, const CorruptionSpec& spec, Rng& rng) {
  const std::size_t n = clean.dim(0), c = clean.dim(1), h = clean.dim(2), w = clean.dim(3);
  const std::size_t sample = c * h * w;
  CorruptedBatch out;
  out.corrupted = Tensor::zeros(clean.shape());
  out.weights = Tensor::zeros(clean.shape());
  const LossPolicy policy = spec.default_policy();
  for (std::size_t s = 0; s < n; ++s) {
    Tensor image = Tensor::zeros({c, h, w});
    std::copy_n(clean.data() + s * sample, sample, image.data());
    auto [corrupted, mask] = corrupt(image, spec, rng);
    std::copy_n(corrupted.data(), sample, out.corrupted.data() + s * sample);
    if (policy == LossPolicy::kMaskedOnly) {
      const std::size_t selected = mask.count_true() * c;
      require(selected > 0, ErrorKind::Domain, "pretext masked no pixels");
      const float inv = 1.0f / (static_cast<float>(selected) * static_cast<float>(n));
      for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t i = 0; i < h * w; ++i)
          if (mask.on[i]) out.weights.at(s * sample + ch * h * w + i) = inv;
    } else {
      const float inv = 1.0f / static_cast<float>(clean.size());
      for (std::size_t i = 0; i < sample; ++i) out.weights.at(s * sample + i) = inv;
    }
  }
  return out;
}

// Full-image validation MSE and PSNR of the current model over a manifest.
std::pair<double, double> eval_reconstruction(UNetModel& model, const std::vector<Batch>& batches,
                                              const CorruptionSpec& spec, Rng rng) {
  double mse_sum = 0.0;
  std::size_t count = 0;
  for (const auto& batch : batches) {
    auto [corrupted, weights] = corrupt_batch(batch.images, spec, rng);
    auto recon = unet_forward(model, corrupted);
    for (std::size_t i = 0; i < recon.size(); ++i) {
      const double d = static_cast<double>(recon.at(i)) - static_cast<double>(batch.images.at(i));
      mse_sum += d * d;
    }
    count += recon.size();
  }
  const double mse = mse_sum / static_cast<double>(count);
  const double psnr_db = mse < 1e-10 ? 100.0 : 10.0 * std::log10(1.0 / mse);
  return {mse, psnr_db};
}

}  // namespace

PretrainResult pretrain(UNetModel& model, const DatasetManifest& train_data,
                        const DatasetManifest& val_data, const CorruptionSpec& pretext,
                        const TrainConfig& config) {
  config.validate();
  pretext.validate();
  require(!train_data.entries.empty() && !val_data.entries.empty(), ErrorKind::Domain,
          "pretrain: train and validation manifests must be non-empty");

  const Normalization identity;  // pretraining reconstructs raw [0,1] images
  AdamState adam = AdamState::for_params(model.params);
  Rng base(config.seed);

  PretrainResult result;
  result.report.kind = pretext.kind;
  result.best_checkpoint = checkpoint_from_unet(model);
  double best_mse = std::numeric_limits<double>::infinity();

  // Fixed validation batches; corruption randomness is re-seeded per epoch.
  const auto val_batches =
      make_batches(val_data, config.batch_size, config.seed ^ 0x5a5a5a5a, identity,
                   config.input_size);

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    Rng shuffle_rng = base.fork(3 * epoch);
    Rng corrupt_rng = base.fork(3 * epoch + 1);
    Rng val_rng = base.fork(3 * epoch + 2);

    auto batches = make_batches(train_data, config.batch_size, shuffle_rng.next_u64(), identity,
                                config.input_size);
    double loss_sum = 0.0;
    for (std::size_t b = 0; b < batches.size(); ++b) {
      auto [corrupted, weights] = corrupt_batch(batches[b].images, pretext, corrupt_rng);
      Tape<float> tape;
      auto recon = unet_forward(model, corrupted, &tape, true);
      auto loss =
          sum_all(mul(square(sub(recon, batches[b].images, &tape), &tape), weights, &tape), &tape);
      const double value = loss.at(0);
      require(std::isfinite(value), ErrorKind::Divergence, "pretraining diverged (loss ", value,
              ") at epoch ", epoch, ", batch ", b + 1);
      model.params.zero_grad();
      tape.backward(loss);
      adam_step(model.params, adam, config.adam());
      loss_sum += value;
    }
    result.report.train_curve.push_back(loss_sum / static_cast<double>(batches.size()));

    auto [val_mse, val_psnr] = eval_reconstruction(model, val_batches, pretext, val_rng);
    result.report.val_curve.push_back(val_mse);
    result.report.final_val_mse = val_mse;
    result.report.final_val_psnr = val_psnr;
    if (val_mse < best_mse) {
      best_mse = val_mse;
      result.best_epoch = epoch;
      result.best_checkpoint = checkpoint_from_unet(model);
      json echo = json::parse(result.best_checkpoint.config_echo);
      echo["meta"] = meta_json(epoch, config.seed, val_mse);
      result.best_checkpoint.config_echo = echo.dump();
    }
  }
  return result;
}

PretextSelection select_pretext(const std::vector<PretextReport>& reports) {
  require(reports.size() >= 2, ErrorKind::Config, "select_pretext needs at least 2 reports, got ",
          reports.size());
  PretextSelection sel;
  double best = std::numeric_limits<double>::infinity();
  bool best_is_gaussian = false;
  for (const auto& report : reports) {
    sel.compared.emplace_back(report.kind, report.final_val_mse);
    const bool gaussian = report.kind == CorruptionKind::kGaussianNoise;
    // Strictly better wins; an exact tie goes to GaussianNoise regardless of
    // input order.
    if (report.final_val_mse < best ||
        (report.final_val_mse == best && gaussian && !best_is_gaussian)) {
      best = report.final_val_mse;
      best_is_gaussian = gaussian;
      sel.winner = report.kind;
    }
  }
  return sel;
}

// ---------------------------------------------------------------------------
// Classifier training
// ---------------------------------------------------------------------------

ClassifierResult train_classifier(FusedModel& model, const DatasetManifest& train_data,
                                  const DatasetManifest& val_data, const Normalization& norm,
                                  const TrainConfig& config) {
  config.validate();
  require(!train_data.entries.empty() && !val_data.entries.empty(), ErrorKind::Domain,
          "train_classifier: train and validation manifests must be non-empty");

  const bool unet_frozen = model.config.freeze_unet_encoder && model.unet != nullptr;
  if (unet_frozen) model.unet->params.set_requires_grad(false);

  AdamState head_adam = AdamState::for_params(model.params);
  AdamState unet_adam;
  AdamState backbone_adam;
  if (model.unet) unet_adam = AdamState::for_params(model.unet->params);
  if (model.backbone) backbone_adam = AdamState::for_params(model.backbone->params);

  std::vector<float> weights(config.class_weights.begin(), config.class_weights.end());
  Rng base(config.seed);

  ClassifierResult result;
  result.best_checkpoint = checkpoint_from_fused(model);

  const auto val_batches =
      make_batches(val_data, config.batch_size, config.seed ^ 0xa5a5a5a5, norm,
                   config.input_size);

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    Rng shuffle_rng = base.fork(2 * epoch);
    Rng dropout_rng = base.fork(2 * epoch + 1);

    auto batches = make_batches(train_data, config.batch_size, shuffle_rng.next_u64(), norm,
                                config.input_size);
    double loss_sum = 0.0;
    std::size_t sample_count = 0;
    for (std::size_t b = 0; b < batches.size(); ++b) {
      Tape<float> tape;
      auto logits = classify_forward(model, batches[b].images, &tape, true, &dropout_rng);
      auto loss = softmax_cross_entropy(logits, batches[b].labels, &tape, weights);
      const double value = loss.at(0);
      require(std::isfinite(value), ErrorKind::Divergence, "training diverged (loss ", value,
              ") at epoch ", epoch, ", batch ", b + 1);
      model.params.zero_grad();
      if (model.unet && !unet_frozen) model.unet->params.zero_grad();
      if (model.backbone) model.backbone->params.zero_grad();
      tape.backward(loss);
      adam_step(model.params, head_adam, config.adam());
      if (model.unet) adam_step(model.unet->params, unet_adam, config.adam());
      if (model.backbone) adam_step(model.backbone->params, backbone_adam, config.adam());
      loss_sum += value * static_cast<double>(batches[b].labels.size());
      sample_count += batches[b].labels.size();
    }

    std::vector<std::size_t> all_labels, all_preds;
    for (const auto& batch : val_batches) {
      auto preds = predict(model, batch.images);
      all_preds.insert(all_preds.end(), preds.begin(), preds.end());
      all_labels.insert(all_labels.end(), batch.labels.begin(), batch.labels.end());
    }
    const auto rep = report(confusion(all_labels, all_preds));

    EpochRecord record;
    record.epoch = epoch;
    record.train_loss = loss_sum / static_cast<double>(sample_count);
    record.val_accuracy = rep.accuracy;
    record.val_balanced_accuracy = rep.balanced_accuracy;
    result.curve.push_back(record);

    if (rep.balanced_accuracy > result.best_balanced_accuracy) {
      result.best_balanced_accuracy = rep.balanced_accuracy;
      result.best_epoch = epoch;
      result.best_checkpoint = checkpoint_from_fused(model);
      json echo = json::parse(result.best_checkpoint.config_echo);
      echo["meta"] = meta_json(epoch, config.seed, rep.balanced_accuracy);
      result.best_checkpoint.config_echo = echo.dump();
    }
  }
  return result;
}

}  // namespace sslf
