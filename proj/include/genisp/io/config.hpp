#pragma once

// Run configuration read from JSON. Every key is optional; unknown keys are
// rejected so that a typo cannot silently fall back to a default.
//
//   {
//     "epochs": 15, "batch_size": 8, "seed": 0, "threads": 1,
//     "lr_schedule": [[0, 0.01], [5, 0.001], [10, 0.0001]],
//     "adam": {"beta1": 0.9, "beta2": 0.999, "eps": 1e-8},
//     "augment": true, "augmentation": {"brightness": 0.1, "contrast": 0.2},
//     "lambda_wb": 0.1, "grad_clip_norm": 10.0, "max_steps": 0,
//     "use_convwb": true, "use_convcc": true, "use_cst": true,
//     "resize": {"long_side": 1333, "short_side": 800, "enabled": true},
//     "inputs": ["a.graw"], "annotations": "ann.json", "weights": "w.json",
//     "out": "out", "detections": "dets.json", "bit_depth": 8
//   }

#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "genisp/trainer.hpp"

namespace genisp::io {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct RunConfig {
  TrainConfig train{};
  std::vector<std::string> inputs;
  std::string annotations;
  std::string weights;
  std::string out;
  std::string detections;
  int bit_depth = 8;

  PreprocessOptions preprocess_options() const {
    return {train.use_cst, train.resize_enabled, train.resize};
  }

  void validate() const {
    try {
      train.validate();
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
    if (bit_depth != 8 && bit_depth != 16) throw ConfigError("bit_depth must be 8 or 16");
  }
};

namespace detail {

inline void reject_unknown(const nlohmann::json& obj, const std::set<std::string>& known,
                           const std::string& where) {
  if (!obj.is_object()) throw ConfigError(where + " must be a JSON object");
  for (const auto& [key, value] : obj.items()) {
    if (!known.count(key)) throw ConfigError("unknown config key '" + where + key + "'");
  }
}

template <typename V>
void read_opt(const nlohmann::json& obj, const char* key, V& dst) {
  if (auto it = obj.find(key); it != obj.end()) {
    try {
      dst = it->template get<V>();
    } catch (const nlohmann::json::exception&) {
      throw ConfigError(std::string("config key '") + key + "' has the wrong type");
    }
  }
}

}  // namespace detail

inline RunConfig parse_run_config(const nlohmann::json& j) {
  using detail::read_opt;
  detail::reject_unknown(
      j,
      {"epochs", "batch_size", "seed", "threads", "lr_schedule", "adam", "augment", "augmentation",
       "lambda_wb", "grad_clip_norm", "max_steps", "use_convwb", "use_convcc", "use_cst", "resize",
       "inputs", "annotations", "weights", "out", "detections", "bit_depth"},
      "");
  RunConfig rc;
  TrainConfig& t = rc.train;
  long long epochs = t.epochs;
  read_opt(j, "epochs", epochs);
  if (epochs < 0) throw ConfigError("epochs must be >= 0");
  t.epochs = static_cast<int>(epochs);
  long long batch = static_cast<long long>(t.batch_size);
  read_opt(j, "batch_size", batch);
  if (batch < 1) throw ConfigError("batch_size must be >= 1");
  t.batch_size = static_cast<std::size_t>(batch);
  read_opt(j, "seed", t.seed);
  long long threads = static_cast<long long>(t.threads);
  read_opt(j, "threads", threads);
  if (threads < 1) throw ConfigError("threads must be >= 1");
  t.threads = static_cast<std::size_t>(threads);
  long long max_steps = static_cast<long long>(t.max_steps);
  read_opt(j, "max_steps", max_steps);
  if (max_steps < 0) throw ConfigError("max_steps must be >= 0");
  t.max_steps = static_cast<std::size_t>(max_steps);

  if (auto it = j.find("lr_schedule"); it != j.end()) {
    if (!it->is_array() || it->empty()) throw ConfigError("lr_schedule must be a non-empty array");
    t.lr_schedule.clear();
    for (const auto& m : *it) {
      if (!m.is_array() || m.size() != 2 || !m[0].is_number_integer() || !m[1].is_number()) {
        throw ConfigError("lr_schedule entries must be [epoch, lr]");
      }
      t.lr_schedule.push_back({m[0].get<int>(), m[1].get<double>()});
    }
  }
  if (auto it = j.find("adam"); it != j.end()) {
    detail::reject_unknown(*it, {"beta1", "beta2", "eps"}, "adam.");
    read_opt(*it, "beta1", t.adam.beta1);
    read_opt(*it, "beta2", t.adam.beta2);
    read_opt(*it, "eps", t.adam.eps);
  }
  read_opt(j, "augment", t.augment);
  if (auto it = j.find("augmentation"); it != j.end()) {
    detail::reject_unknown(*it, {"brightness", "contrast"}, "augmentation.");
    read_opt(*it, "brightness", t.augmentation.brightness);
    read_opt(*it, "contrast", t.augmentation.contrast);
  }
  read_opt(j, "lambda_wb", t.loss.lambda_wb);
  if (!(t.loss.lambda_wb >= 0.0)) throw ConfigError("lambda_wb must be >= 0");
  read_opt(j, "grad_clip_norm", t.grad_clip_norm);
  read_opt(j, "use_convwb", t.use_convwb);
  read_opt(j, "use_convcc", t.use_convcc);
  read_opt(j, "use_cst", t.use_cst);
  if (auto it = j.find("resize"); it != j.end()) {
    detail::reject_unknown(*it, {"long_side", "short_side", "enabled"}, "resize.");
    read_opt(*it, "long_side", t.resize.max_long);
    read_opt(*it, "short_side", t.resize.max_short);
    read_opt(*it, "enabled", t.resize_enabled);
  }
  read_opt(j, "inputs", rc.inputs);
  read_opt(j, "annotations", rc.annotations);
  read_opt(j, "weights", rc.weights);
  read_opt(j, "out", rc.out);
  read_opt(j, "detections", rc.detections);
  read_opt(j, "bit_depth", rc.bit_depth);
  rc.validate();
  return rc;
}

inline RunConfig parse_run_config_text(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("invalid config JSON: ") + e.what());
  }
  return parse_run_config(j);
}

}  // namespace genisp::io
