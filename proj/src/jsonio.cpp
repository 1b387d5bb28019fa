#include "nd/jsonio.hpp"

#include <fstream>

#include "nd/error.hpp"

namespace nd {

void require_keys(const nlohmann::json& j, std::initializer_list<std::string_view> allowed, std::string_view where) {
  if (!j.is_object()) throw ConfigError(std::string(where) + ": expected an object");
  for (const auto& [key, _] : j.items()) {
    bool ok = false;
    for (auto a : allowed) ok = ok || a == key;
    if (!ok) throw ConfigError(std::string(where) + ": unknown key '" + key + "'");
  }
}

nlohmann::json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

void to_json(nlohmann::json& j, const BandSpec& b) { j = {{"low_hz", b.low_hz}, {"high_hz", b.high_hz}, {"order", b.order}}; }

void from_json(const nlohmann::json& j, BandSpec& b) {
  require_keys(j, {"low_hz", "high_hz", "order"}, "band");
  read_key(j, "low_hz", b.low_hz);
  read_key(j, "high_hz", b.high_hz);
  read_key(j, "order", b.order);
}

void to_json(nlohmann::json& j, const FeatureWindowSpec& w) {
  j = {{"window_ms", w.window_ms}, {"step_ms", w.step_ms}, {"history_s", w.history_s}};
}

void from_json(const nlohmann::json& j, FeatureWindowSpec& w) {
  require_keys(j, {"window_ms", "step_ms", "history_s"}, "window");
  read_key(j, "window_ms", w.window_ms);
  read_key(j, "step_ms", w.step_ms);
  read_key(j, "history_s", w.history_s);
}

void to_json(nlohmann::json& j, const FeatureThresholds& t) {
  j = {{"zc", t.zc}, {"ssc", t.ssc}, {"wamp", t.wamp}, {"mpr", t.mpr}, {"log_eps", t.log_eps}};
}

void from_json(const nlohmann::json& j, FeatureThresholds& t) {
  require_keys(j, {"zc", "ssc", "wamp", "mpr", "log_eps"}, "thresholds");
  read_key(j, "zc", t.zc);
  read_key(j, "ssc", t.ssc);
  read_key(j, "wamp", t.wamp);
  read_key(j, "mpr", t.mpr);
  read_key(j, "log_eps", t.log_eps);
}

void to_json(nlohmann::json& j, const FrontEndConfig& c) {
  j = {{"raw_rate_hz", c.raw_rate_hz}, {"decimation", c.decimation}, {"band", c.band},
       {"window", c.window},           {"thresholds", c.thresholds}};
}

void from_json(const nlohmann::json& j, FrontEndConfig& c) {
  require_keys(j, {"raw_rate_hz", "decimation", "band", "window", "thresholds"}, "frontend");
  read_key(j, "raw_rate_hz", c.raw_rate_hz);
  read_key(j, "decimation", c.decimation);
  read_key(j, "band", c.band);
  read_key(j, "window", c.window);
  read_key(j, "thresholds", c.thresholds);
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = {{"input_rows", c.input_rows}, {"steps", c.steps},           {"conv_out", c.conv_out},
       {"conv_kernel", c.conv_kernel}, {"gru_hidden", c.gru_hidden}, {"fc_hidden", c.fc_hidden},
       {"outputs", c.outputs},       {"dropout_rate", c.dropout_rate}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  require_keys(j, {"input_rows", "steps", "conv_out", "conv_kernel", "gru_hidden", "fc_hidden", "outputs", "dropout_rate"},
               "model");
  read_key(j, "input_rows", c.input_rows);
  read_key(j, "steps", c.steps);
  read_key(j, "conv_out", c.conv_out);
  read_key(j, "conv_kernel", c.conv_kernel);
  read_key(j, "gru_hidden", c.gru_hidden);
  read_key(j, "fc_hidden", c.fc_hidden);
  read_key(j, "outputs", c.outputs);
  read_key(j, "dropout_rate", c.dropout_rate);
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"beta1", c.beta1},
       {"beta2", c.beta2},
       {"adam_eps", c.adam_eps},
       {"weight_decay", c.weight_decay},
       {"batch_size", c.batch_size},
       {"lr0", c.lr0},
       {"max_epochs", c.max_epochs},
       {"plateau_epochs", c.plateau_epochs},
       {"lr_drop_factor", c.lr_drop_factor},
       {"plateau_threshold", c.plateau_threshold},
       {"seeds", c.seeds}};
  if (c.shuffle_seed) j["shuffle_seed"] = *c.shuffle_seed;
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  require_keys(j,
               {"beta1", "beta2", "adam_eps", "weight_decay", "batch_size", "lr0", "max_epochs", "plateau_epochs",
                "lr_drop_factor", "plateau_threshold", "seeds", "shuffle_seed"},
               "train");
  read_key(j, "beta1", c.beta1);
  read_key(j, "beta2", c.beta2);
  read_key(j, "adam_eps", c.adam_eps);
  read_key(j, "weight_decay", c.weight_decay);
  read_key(j, "batch_size", c.batch_size);
  read_key(j, "lr0", c.lr0);
  read_key(j, "max_epochs", c.max_epochs);
  read_key(j, "plateau_epochs", c.plateau_epochs);
  read_key(j, "lr_drop_factor", c.lr_drop_factor);
  read_key(j, "plateau_threshold", c.plateau_threshold);
  read_key(j, "seeds", c.seeds);
  if (auto it = j.find("shuffle_seed"); it != j.end()) c.shuffle_seed = it->get<std::uint64_t>();
}

}  // namespace nd
