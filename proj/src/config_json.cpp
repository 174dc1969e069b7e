#include "sslf/config_json.hpp"

#include <set>

namespace sslf {

using nlohmann::json;

namespace {

// Rejects keys outside the allowed set so config typos fail loudly.
void check_keys(const json& doc, const char* what, const std::set<std::string>& allowed) {
  require(doc.is_object(), ErrorKind::Config, what, " config must be a JSON object");
  for (const auto& [key, value] : doc.items())
    require(allowed.count(key) == 1, ErrorKind::Config, what, ": unknown key '", key, "'");
}

template <class T>
void read(const json& doc, const char* key, T& out) {
  if (!doc.contains(key)) return;
  try {
    out = doc.at(key).get<T>();
  } catch (const json::exception& e) {
    fail(ErrorKind::Config, "bad value for '", key, "': ", e.what());
  }
}

NormKind norm_from_string(const std::string& name) {
  if (name == "batch") return NormKind::kBatch;
  if (name == "group") return NormKind::kGroup;
  fail(ErrorKind::Config, "unknown norm '", name, "'; valid: batch, group");
}

const char* norm_to_string(NormKind n) { return n == NormKind::kBatch ? "batch" : "group"; }

void read_norm(const json& doc, NormKind& out) {
  if (!doc.contains("norm")) return;
  std::string name;
  read(doc, "norm", name);
  out = norm_from_string(name);
}

}  // namespace

CorruptionKind parse_corruption_kind(const std::string& name) {
  if (name == "patch_mask") return CorruptionKind::kPatchMask;
  if (name == "gaussian_noise") return CorruptionKind::kGaussianNoise;
  fail(ErrorKind::Config, "unknown corruption kind '", name,
       "'; valid: patch_mask, gaussian_noise");
}

json unet_to_json(const UNetConfig& c) {
  return {{"in_channels", c.in_channels},
          {"base_channels", c.base_channels},
          {"depth", c.depth},
          {"attention_bottleneck", c.attention_bottleneck},
          {"norm", norm_to_string(c.norm)},
          {"out_channels", c.out_channels},
          {"attention_heads", c.attention_heads}};
}

UNetConfig unet_from_json(const json& doc) {
  check_keys(doc, "unet",
             {"in_channels", "base_channels", "depth", "attention_bottleneck", "norm",
              "out_channels", "attention_heads"});
  UNetConfig c;
  read(doc, "in_channels", c.in_channels);
  read(doc, "base_channels", c.base_channels);
  read(doc, "depth", c.depth);
  read(doc, "attention_bottleneck", c.attention_bottleneck);
  read_norm(doc, c.norm);
  read(doc, "out_channels", c.out_channels);
  read(doc, "attention_heads", c.attention_heads);
  c.validate();
  return c;
}

json backbone_to_json(const BackboneConfig& c) {
  json stages = json::array();
  for (const auto& s : c.stages)
    stages.push_back({{"expansion", s.expansion},
                      {"channels", s.channels},
                      {"repeats", s.repeats},
                      {"stride", s.stride},
                      {"kernel", s.kernel}});
  return {{"in_channels", c.in_channels},
          {"stem_channels", c.stem_channels},
          {"stages", stages},
          {"width_mult", c.width_mult},
          {"depth_mult", c.depth_mult},
          {"se_ratio", c.se_ratio},
          {"feature_dim", c.feature_dim},
          {"norm", norm_to_string(c.norm)},
          {"activation", c.activation == Activation::kSilu ? "silu" : "relu"}};
}

BackboneConfig backbone_from_json(const json& doc) {
  check_keys(doc, "backbone",
             {"in_channels", "stem_channels", "stages", "width_mult", "depth_mult", "se_ratio",
              "feature_dim", "norm", "activation"});
  BackboneConfig c;
  read(doc, "in_channels", c.in_channels);
  read(doc, "stem_channels", c.stem_channels);
  if (doc.contains("stages")) {
    require(doc.at("stages").is_array(), ErrorKind::Config, "backbone stages must be an array");
    c.stages.clear();
    for (const auto& entry : doc.at("stages")) {
      check_keys(entry, "backbone stage", {"expansion", "channels", "repeats", "stride",
                                           "kernel"});
      StageSpec s;
      read(entry, "expansion", s.expansion);
      read(entry, "channels", s.channels);
      read(entry, "repeats", s.repeats);
      read(entry, "stride", s.stride);
      read(entry, "kernel", s.kernel);
      c.stages.push_back(s);
    }
  }
  read(doc, "width_mult", c.width_mult);
  read(doc, "depth_mult", c.depth_mult);
  read(doc, "se_ratio", c.se_ratio);
  read(doc, "feature_dim", c.feature_dim);
  read_norm(doc, c.norm);
  if (doc.contains("activation")) {
    std::string name;
    read(doc, "activation", name);
    require(name == "silu" || name == "relu", ErrorKind::Config, "unknown activation '", name,
            "'; valid: silu, relu");
    c.activation = name == "silu" ? Activation::kSilu : Activation::kRelu;
  }
  c.validate();
  return c;
}

json fusion_to_json(const FusionConfig& c) {
  return {{"variant", to_string(c.variant)},
          {"common_dim", c.common_dim},
          {"head_dims", c.head_dims},
          {"num_classes", c.num_classes},
          {"dropout", c.dropout},
          {"freeze_unet_encoder", c.freeze_unet_encoder},
          {"backbone_input",
           c.backbone_input == BackboneInput::kReconstruction ? "reconstruction" : "raw"}};
}

FusionConfig fusion_from_json(const json& doc) {
  check_keys(doc, "fusion",
             {"variant", "common_dim", "head_dims", "num_classes", "dropout",
              "freeze_unet_encoder", "backbone_input"});
  FusionConfig c;
  if (doc.contains("variant")) {
    std::string name;
    read(doc, "variant", name);
    c.variant = parse_variant(name);
  }
  read(doc, "common_dim", c.common_dim);
  read(doc, "head_dims", c.head_dims);
  read(doc, "num_classes", c.num_classes);
  read(doc, "dropout", c.dropout);
  read(doc, "freeze_unet_encoder", c.freeze_unet_encoder);
  if (doc.contains("backbone_input")) {
    std::string name;
    read(doc, "backbone_input", name);
    require(name == "reconstruction" || name == "raw", ErrorKind::Config,
            "unknown backbone_input '", name, "'; valid: reconstruction, raw");
    c.backbone_input =
        name == "reconstruction" ? BackboneInput::kReconstruction : BackboneInput::kRaw;
  }
  c.validate();
  return c;
}

json train_to_json(const TrainConfig& c) {
  return {{"learning_rate", c.learning_rate},
          {"batch_size", c.batch_size},
          {"epochs", c.epochs},
          {"seed", c.seed},
          {"adam_beta1", c.adam_beta1},
          {"adam_beta2", c.adam_beta2},
          {"adam_eps", c.adam_eps},
          {"input_size", c.input_size},
          {"class_weights", c.class_weights}};
}

TrainConfig train_from_json(const json& doc) {
  check_keys(doc, "train",
             {"learning_rate", "batch_size", "epochs", "seed", "adam_beta1", "adam_beta2",
              "adam_eps", "input_size", "class_weights"});
  TrainConfig c;
  read(doc, "learning_rate", c.learning_rate);
  read(doc, "batch_size", c.batch_size);
  read(doc, "epochs", c.epochs);
  read(doc, "seed", c.seed);
  read(doc, "adam_beta1", c.adam_beta1);
  read(doc, "adam_beta2", c.adam_beta2);
  read(doc, "adam_eps", c.adam_eps);
  read(doc, "input_size", c.input_size);
  read(doc, "class_weights", c.class_weights);
  c.validate();
  return c;
}

json corruption_to_json(const CorruptionSpec& c) {
  return {{"kind", to_string(c.kind)},
          {"patch_size", c.patch_size},
          {"mask_ratio", c.mask_ratio},
          {"fill_value", c.fill_value},
          {"sigma", c.sigma},
          {"clamp", c.clamp}};
}

CorruptionSpec corruption_from_json(const json& doc) {
  check_keys(doc, "pretext", {"kind", "patch_size", "mask_ratio", "fill_value", "sigma",
                              "clamp"});
  CorruptionSpec c;
  if (doc.contains("kind")) {
    std::string name;
    read(doc, "kind", name);
    c.kind = parse_corruption_kind(name);
  }
  read(doc, "patch_size", c.patch_size);
  read(doc, "mask_ratio", c.mask_ratio);
  read(doc, "fill_value", c.fill_value);
  read(doc, "sigma", c.sigma);
  read(doc, "clamp", c.clamp);
  c.validate();
  return c;
}

json synthetic_to_json(const SyntheticSpec& c) {
  return {{"per_class", c.per_class},
          {"size", c.size},
          {"seed", c.seed},
          {"per_class_counts", c.per_class_counts},
          {"frequency", c.frequency},
          {"orientation", c.orientation},
          {"blob_count", c.blob_count},
          {"base_hue", c.base_hue}};
}

SyntheticSpec synthetic_from_json(const json& doc) {
  check_keys(doc, "synthetic",
             {"per_class", "size", "seed", "per_class_counts", "frequency", "orientation",
              "blob_count", "base_hue"});
  SyntheticSpec c;
  read(doc, "per_class", c.per_class);
  read(doc, "size", c.size);
  read(doc, "seed", c.seed);
  read(doc, "per_class_counts", c.per_class_counts);
  read(doc, "frequency", c.frequency);
  read(doc, "orientation", c.orientation);
  read(doc, "blob_count", c.blob_count);
  read(doc, "base_hue", c.base_hue);
  c.validate();
  return c;
}

}  // namespace sslf
