#pragma once

#include "json.hpp"
#include "sslf/backbone.hpp"
#include "sslf/corruption.hpp"
#include "sslf/data.hpp"
#include "sslf/fusion.hpp"
#include "sslf/training.hpp"
#include "sslf/unet.hpp"

// JSON (de)serialization for every config struct. Parsers start from the
// struct's defaults, apply the present keys, reject unknown keys, and run the
// struct's own validation; serializers emit every field so a round trip is
// lossless. The same key names appear in run-config files and in checkpoint
// config echoes.

namespace sslf {

nlohmann::json unet_to_json(const UNetConfig& c);
UNetConfig unet_from_json(const nlohmann::json& doc);

nlohmann::json backbone_to_json(const BackboneConfig& c);
BackboneConfig backbone_from_json(const nlohmann::json& doc);

nlohmann::json fusion_to_json(const FusionConfig& c);
FusionConfig fusion_from_json(const nlohmann::json& doc);

nlohmann::json train_to_json(const TrainConfig& c);
TrainConfig train_from_json(const nlohmann::json& doc);

nlohmann::json corruption_to_json(const CorruptionSpec& c);
CorruptionSpec corruption_from_json(const nlohmann::json& doc);

nlohmann::json synthetic_to_json(const SyntheticSpec& c);
SyntheticSpec synthetic_from_json(const nlohmann::json& doc);

CorruptionKind parse_corruption_kind(const std::string& name);

}  // namespace sslf
