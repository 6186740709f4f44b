#pragma once

// JSON mapping for configuration structs. Missing keys keep their defaults;
// unknown enum names raise ConfigError.

#include <nlohmann/json.hpp>

#include "mpd/decoder.hpp"
#include "mpd/joint.hpp"
#include "mpd/sinkhorn.hpp"

namespace mpd {

void to_json(nlohmann::json& j, const SinkhornConfig& c);
void from_json(const nlohmann::json& j, SinkhornConfig& c);

void to_json(nlohmann::json& j, const AdamSettings& c);
void from_json(const nlohmann::json& j, AdamSettings& c);

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

void to_json(nlohmann::json& j, const JointConfig& c);
void from_json(const nlohmann::json& j, JointConfig& c);

}  // namespace mpd
