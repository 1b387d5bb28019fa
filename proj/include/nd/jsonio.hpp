#pragma once

#include <filesystem>
#include <initializer_list>
#include <string_view>

#include <json.hpp>

#include "nd/features.hpp"
#include "nd/frontend.hpp"
#include "nd/model.hpp"
#include "nd/sigproc.hpp"
#include "nd/train.hpp"

// JSON forms of the configuration structs. Missing keys keep their defaults;
// unknown keys and wrongly typed values raise ConfigError.
namespace nd {

void to_json(nlohmann::json& j, const BandSpec& b);
void from_json(const nlohmann::json& j, BandSpec& b);
void to_json(nlohmann::json& j, const FeatureWindowSpec& w);
void from_json(const nlohmann::json& j, FeatureWindowSpec& w);
void to_json(nlohmann::json& j, const FeatureThresholds& t);
void from_json(const nlohmann::json& j, FeatureThresholds& t);
void to_json(nlohmann::json& j, const FrontEndConfig& c);
void from_json(const nlohmann::json& j, FrontEndConfig& c);
void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);
void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

// Throws ConfigError naming the first key of j not in allowed.
void require_keys(const nlohmann::json& j, std::initializer_list<std::string_view> allowed, std::string_view where);

template <typename T>
void read_key(const nlohmann::json& j, const char* key, T& out) {
  if (auto it = j.find(key); it != j.end()) out = it->template get<T>();
}

// Parses a JSON file; ConfigError if missing or malformed.
nlohmann::json read_json_file(const std::filesystem::path& path);

}  // namespace nd
