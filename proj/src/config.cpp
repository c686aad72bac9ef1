#include "stereosed/config.hpp"

#include <fstream>
#include <sstream>

#include "json.hpp"

namespace stereosed {

using nlohmann::json;

namespace {

json feature_json(const FeatureConfig& c) {
  return {
      {"frame_length_ms", c.grid.frame_length_ms},
      {"hop_length_ms", c.grid.hop_length_ms},
      {"fft_size", c.fft_size},
      {"mel_bands", c.mel_bands},
      {"mel_fmin", c.mel_fmin},
      {"mel_fmax", c.mel_fmax},
      {"log_floor", c.log_floor},
      {"pitch_fmin", c.pitch_fmin},
      {"pitch_fmax", c.pitch_fmax},
      {"pitch_threshold", c.pitch_threshold},
      {"tdoa_bands", c.tdoa_bands},
      {"tdoa_windows_ms", c.tdoa_windows_ms},
      {"mic_spacing_m", c.mic_spacing_m},
      {"speed_of_sound", c.speed_of_sound},
      {"phat_floor", c.phat_floor},
      {"median_kernel", c.median_kernel},
  };
}

template <typename T>
void read_field(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

FeatureConfig feature_from_json(const json& j) {
  FeatureConfig c;
  read_field(j, "frame_length_ms", c.grid.frame_length_ms);
  read_field(j, "hop_length_ms", c.grid.hop_length_ms);
  read_field(j, "fft_size", c.fft_size);
  read_field(j, "mel_bands", c.mel_bands);
  read_field(j, "mel_fmin", c.mel_fmin);
  read_field(j, "mel_fmax", c.mel_fmax);
  read_field(j, "log_floor", c.log_floor);
  read_field(j, "pitch_fmin", c.pitch_fmin);
  read_field(j, "pitch_fmax", c.pitch_fmax);
  read_field(j, "pitch_threshold", c.pitch_threshold);
  read_field(j, "tdoa_bands", c.tdoa_bands);
  read_field(j, "tdoa_windows_ms", c.tdoa_windows_ms);
  read_field(j, "mic_spacing_m", c.mic_spacing_m);
  read_field(j, "speed_of_sound", c.speed_of_sound);
  read_field(j, "phat_floor", c.phat_floor);
  read_field(j, "median_kernel", c.median_kernel);
  return c;
}

json to_json(const RunConfig& c) {
  const auto& t = c.training;
  return {
      {"contexts", c.contexts},
      {"data_root", c.data_root.string()},
      {"features", c.features},
      {"combinations", c.combinations},
      {"seed", c.seed},
      {"folds", c.folds},
      {"validation_fraction", c.validation_fraction},
      {"output", c.output.string()},
      {"aggregation", c.aggregation == Aggregation::Micro ? "micro" : "macro"},
      {"extraction", feature_json(c.extraction)},
      {"network", {{"hidden", t.hidden}}},
      {"optimizer",
       {{"learning_rate", t.adam.learning_rate},
        {"beta1", t.adam.beta1},
        {"beta2", t.adam.beta2},
        {"epsilon", t.adam.epsilon},
        {"grad_clip", t.grad_clip},
        {"batch_size", t.batch_size}}},
      {"training",
       {{"max_epochs", t.max_epochs},
        {"patience", t.patience},
        {"mix_ratio", t.mix_ratio},
        {"threshold", t.threshold},
        {"frames_per_segment", t.frames_per_segment}}},
  };
}

// Rejects keys the reference object does not have, so typos are not silently ignored.
void check_keys(const json& j, const json& reference, const std::string& where) {
  if (!j.is_object()) throw UsageError("config: " + (where.empty() ? "top level" : where) + " must be an object");
  for (const auto& [key, value] : j.items()) {
    const std::string name = where.empty() ? key : where + "." + key;
    if (!reference.contains(key)) throw UsageError("config: unknown key '" + name + "'");
    if (reference.at(key).is_object()) check_keys(value, reference.at(key), name);
  }
}

RunConfig from_json(const json& j) {
  check_keys(j, to_json(RunConfig{}), "");
  RunConfig c;
  read_field(j, "contexts", c.contexts);
  if (j.contains("data_root")) c.data_root = j.at("data_root").get<std::string>();
  read_field(j, "features", c.features);
  read_field(j, "combinations", c.combinations);
  read_field(j, "seed", c.seed);
  read_field(j, "folds", c.folds);
  read_field(j, "validation_fraction", c.validation_fraction);
  if (j.contains("output")) c.output = j.at("output").get<std::string>();
  if (j.contains("aggregation")) {
    const auto a = j.at("aggregation").get<std::string>();
    if (a == "micro") c.aggregation = Aggregation::Micro;
    else if (a == "macro") c.aggregation = Aggregation::Macro;
    else throw UsageError("aggregation must be 'micro' or 'macro'");
  }
  if (j.contains("extraction")) c.extraction = feature_from_json(j.at("extraction"));
  auto& t = c.training;
  if (j.contains("network")) read_field(j.at("network"), "hidden", t.hidden);
  if (j.contains("optimizer")) {
    const auto& o = j.at("optimizer");
    read_field(o, "learning_rate", t.adam.learning_rate);
    read_field(o, "beta1", t.adam.beta1);
    read_field(o, "beta2", t.adam.beta2);
    read_field(o, "epsilon", t.adam.epsilon);
    read_field(o, "grad_clip", t.grad_clip);
    read_field(o, "batch_size", t.batch_size);
  }
  if (j.contains("training")) {
    const auto& o = j.at("training");
    read_field(o, "max_epochs", t.max_epochs);
    read_field(o, "patience", t.patience);
    read_field(o, "mix_ratio", t.mix_ratio);
    read_field(o, "threshold", t.threshold);
    read_field(o, "frames_per_segment", t.frames_per_segment);
  }
  t.seed = c.seed;
  return c;
}

}  // namespace

void RunConfig::validate() const {
  if (contexts.empty()) throw UsageError("config: at least one context is required");
  for (const auto& c : contexts)
    if (c.empty() || c.find_first_of("/\\") != std::string::npos)
      throw UsageError("config: invalid context name '" + c + "'");
  parse_combination(features);
  for (const auto& c : combinations) parse_combination(c);
  if (folds < 1) throw UsageError("config: folds must be >= 1");
  if (validation_fraction < 0.0 || validation_fraction >= 1.0)
    throw UsageError("config: validation_fraction must be in [0, 1)");
  const auto& e = extraction;
  if (e.grid.frame_length_ms <= 0.0 || e.grid.hop_length_ms <= 0.0 ||
      e.grid.hop_length_ms > e.grid.frame_length_ms)
    throw UsageError("config: need 0 < hop_length_ms <= frame_length_ms");
  if (e.fft_size != 0 && (e.fft_size & (e.fft_size - 1)) != 0)
    throw UsageError("config: fft_size must be 0 or a power of two");
  if (e.mel_bands < 1 || e.tdoa_bands < 1) throw UsageError("config: band counts must be positive");
  if (e.tdoa_windows_ms.empty()) throw UsageError("config: tdoa_windows_ms must not be empty");
  if (e.median_kernel < 1 || e.median_kernel % 2 == 0) throw UsageError("config: median_kernel must be odd");
  if (e.mic_spacing_m <= 0.0 || e.speed_of_sound <= 0.0)
    throw UsageError("config: mic_spacing_m and speed_of_sound must be positive");
  if (!(e.pitch_fmin > 0.0 && e.pitch_fmin < e.pitch_fmax)) throw UsageError("config: need 0 < pitch_fmin < pitch_fmax");
  const auto& t = training;
  if (t.hidden.empty()) throw UsageError("config: network.hidden must list at least one layer");
  for (int h : t.hidden)
    if (h < 1) throw UsageError("config: hidden sizes must be positive");
  if (t.adam.learning_rate <= 0.0) throw UsageError("config: learning_rate must be positive");
  if (t.batch_size < 1) throw UsageError("config: batch_size must be positive");
  if (t.max_epochs < 1 || t.patience < 0) throw UsageError("config: invalid max_epochs or patience");
  if (t.mix_ratio < 0.0) throw UsageError("config: mix_ratio must be >= 0");
  if (t.threshold <= 0.0 || t.threshold >= 1.0) throw UsageError("config: threshold must be in (0, 1)");
  if (t.frames_per_segment < 1) throw UsageError("config: frames_per_segment must be positive");
}

std::string to_json_text(const RunConfig& config) { return to_json(config).dump(2) + "\n"; }

RunConfig run_config_from_json_text(const std::string& text) {
  try {
    return from_json(json::parse(text));
  } catch (const json::exception& e) {
    throw UsageError(std::string("config: ") + e.what());
  }
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return run_config_from_json_text(ss.str());
}

std::string to_json_text(const FeatureConfig& config) { return feature_json(config).dump(); }

FeatureConfig feature_config_from_json_text(const std::string& text) {
  try {
    return feature_from_json(json::parse(text));
  } catch (const json::exception& e) {
    throw DataError(std::string("feature settings: ") + e.what());
  }
}

}  // namespace stereosed
