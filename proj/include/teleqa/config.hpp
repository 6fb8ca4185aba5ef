// Run configuration for the command-line surface: model shape, audio
// front-end, optimizer settings, and the frozen fusion constants. JSON
// serializable; unknown keys are rejected so typos fail loudly instead of
// silently falling back to defaults.
#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "teleqa/training.hpp"

namespace teleqa {

struct Config {
  uint64_t seed = 7;
  int clip_len = 8;
  std::string pooling = "avg";  // only average pooling is implemented

  // Conv out-channels per layer; every layer is 3x3 stride 2.
  std::vector<int> frame_channels = {8, 16, 16};
  std::vector<int> clip_channels = {8, 8, 8};
  std::vector<int> audio_channels = {8, 8, 8};

  AudioFrontendConfig audio = {256, 64, 16};

  // Regressor widths: the scoring head runs on frame channels, the pathway
  // regressors on the fused/audio feature dims.
  int head_hidden = 8;
  int hidden = 16;
  std::vector<int> fcn = {16, 32, 16};

  TrainConfig train;
  int head_epochs = 40;
  int joint_epochs = 40;

  // Frozen polynomial constants and score range; present so a config file
  // states the full contract, rejected if they disagree with the engine.
  std::vector<double> fusion = {kFusionCoeffs[0], kFusionCoeffs[1], kFusionCoeffs[2],
                                kFusionCoeffs[3]};
  std::vector<double> clamp = {1.0, 5.0};

  void validate() const {
    if (clip_len < 2) throw ConfigError("clip_len must be >= 2");
    if (pooling != "avg") throw ConfigError("unsupported pooling mode: " + pooling);
    for (const auto* ch : {&frame_channels, &clip_channels, &audio_channels}) {
      if (ch->empty()) throw ConfigError("extractor channel list is empty");
      for (int c : *ch)
        if (c < 1) throw ConfigError("extractor channels must be positive");
    }
    if (head_hidden < 1 || hidden < 1) throw ConfigError("regressor widths must be positive");
    if (fcn.size() != 3) throw ConfigError("regressor fcn needs exactly 3 widths");
    for (int d : fcn)
      if (d < 1) throw ConfigError("regressor widths must be positive");
    train.validate();
    if (head_epochs < 1 || joint_epochs < 0) throw ConfigError("stage epochs invalid");
    if (fusion.size() != 4) throw ConfigError("fusion needs exactly 4 coefficients");
    for (int i = 0; i < 4; ++i)
      if (fusion[static_cast<size_t>(i)] != kFusionCoeffs[i])
        throw ConfigError("unsupported fusion coefficients: the polynomial is frozen");
    if (clamp != std::vector<double>{1.0, 5.0})
      throw ConfigError("unsupported clamp range: scores live on [1,5]");
  }
};

namespace detail {

template <typename T>
inline void take_key(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key)) j.at(key).get_to(out);
}

inline void reject_unknown(const nlohmann::json& j, const std::vector<std::string>& known,
                           const std::string& scope) {
  for (const auto& [key, value] : j.items()) {
    if (std::find(known.begin(), known.end(), key) == known.end())
      throw ConfigError("unknown config key: " + scope + key);
  }
}

}  // namespace detail

// Applies a JSON document on top of the current values. Missing keys keep
// their present setting; unknown keys are an error.
inline void apply_config_json(Config& c, const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("config root must be a JSON object");
  detail::reject_unknown(
      j,
      {"seed", "clip_len", "pooling", "frame_channels", "clip_channels", "audio_channels",
       "audio", "regressor", "train", "fusion", "clamp"},
      "");
  detail::take_key(j, "seed", c.seed);
  detail::take_key(j, "clip_len", c.clip_len);
  detail::take_key(j, "pooling", c.pooling);
  detail::take_key(j, "frame_channels", c.frame_channels);
  detail::take_key(j, "clip_channels", c.clip_channels);
  detail::take_key(j, "audio_channels", c.audio_channels);
  if (j.contains("audio")) {
    const auto& a = j.at("audio");
    detail::reject_unknown(a, {"n_fft", "hop", "n_mels"}, "audio.");
    detail::take_key(a, "n_fft", c.audio.n_fft);
    detail::take_key(a, "hop", c.audio.hop);
    detail::take_key(a, "n_mels", c.audio.n_mels);
  }
  if (j.contains("regressor")) {
    const auto& r = j.at("regressor");
    detail::reject_unknown(r, {"head_hidden", "hidden", "fcn"}, "regressor.");
    detail::take_key(r, "head_hidden", c.head_hidden);
    detail::take_key(r, "hidden", c.hidden);
    detail::take_key(r, "fcn", c.fcn);
  }
  if (j.contains("train")) {
    const auto& t = j.at("train");
    detail::reject_unknown(t,
                           {"epochs", "batch_size", "lr_head", "lr_backbone", "weight_decay",
                            "beta1", "beta2", "video_steps", "audio_steps", "head_epochs",
                            "joint_epochs"},
                           "train.");
    detail::take_key(t, "epochs", c.train.epochs);
    detail::take_key(t, "batch_size", c.train.batch_size);
    detail::take_key(t, "lr_head", c.train.lr_head);
    detail::take_key(t, "lr_backbone", c.train.lr_backbone);
    detail::take_key(t, "weight_decay", c.train.weight_decay);
    detail::take_key(t, "beta1", c.train.beta1);
    detail::take_key(t, "beta2", c.train.beta2);
    detail::take_key(t, "video_steps", c.train.video_steps);
    detail::take_key(t, "audio_steps", c.train.audio_steps);
    detail::take_key(t, "head_epochs", c.head_epochs);
    detail::take_key(t, "joint_epochs", c.joint_epochs);
  }
  detail::take_key(j, "fusion", c.fusion);
  detail::take_key(j, "clamp", c.clamp);
}

inline Config load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("missing file: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("invalid config JSON: " + std::string(e.what()));
  }
  Config c;
  apply_config_json(c, j);
  c.validate();
  return c;
}

inline nlohmann::json config_to_json(const Config& c) {
  nlohmann::json j;
  j["seed"] = c.seed;
  j["clip_len"] = c.clip_len;
  j["pooling"] = c.pooling;
  j["frame_channels"] = c.frame_channels;
  j["clip_channels"] = c.clip_channels;
  j["audio_channels"] = c.audio_channels;
  j["audio"] = {{"n_fft", c.audio.n_fft}, {"hop", c.audio.hop}, {"n_mels", c.audio.n_mels}};
  j["regressor"] = {{"head_hidden", c.head_hidden}, {"hidden", c.hidden}, {"fcn", c.fcn}};
  j["train"] = {{"epochs", c.train.epochs},
                {"batch_size", c.train.batch_size},
                {"lr_head", c.train.lr_head},
                {"lr_backbone", c.train.lr_backbone},
                {"weight_decay", c.train.weight_decay},
                {"beta1", c.train.beta1},
                {"beta2", c.train.beta2},
                {"video_steps", c.train.video_steps},
                {"audio_steps", c.train.audio_steps},
                {"head_epochs", c.head_epochs},
                {"joint_epochs", c.joint_epochs}};
  j["fusion"] = c.fusion;
  j["clamp"] = c.clamp;
  return j;
}

// Seed derivation matches the bundled model factories: extractors draw from
// seed, seed+1, seed+2; regressors from seed+3..5.
inline TeleVqaModel build_model(const Config& c) {
  c.validate();
  auto specs = [](const std::vector<int>& channels) {
    std::vector<ConvSpec> out;
    for (int ch : channels) out.push_back({ch, 3, 2});
    return out;
  };
  TeleVqaModel m;
  m.frame_extractor = make_extractor(3, specs(c.frame_channels), c.seed);
  m.clip_extractor = make_extractor(3, specs(c.clip_channels), c.seed + 1, c.clip_len);
  m.audio_extractor = make_extractor(1, specs(c.audio_channels), c.seed + 2);
  m.audio_cfg = c.audio;
  m.head = init_regressor(c.frame_channels.back(), c.head_hidden, c.fcn[0], c.fcn[1], c.fcn[2],
                          c.seed + 3);
  m.visual = init_regressor(m.visual_dim(), c.hidden, c.fcn[0], c.fcn[1], c.fcn[2], c.seed + 4);
  m.audio = init_regressor(m.audio_dim(), c.hidden, c.fcn[0], c.fcn[1], c.fcn[2], c.seed + 5);
  m.validate();
  return m;
}

inline StagedConfig staged_config(const Config& c) {
  StagedConfig sc;
  sc.opt = c.train;
  sc.opt.seed = c.seed;
  sc.head_epochs = c.head_epochs;
  sc.joint_epochs = c.joint_epochs;
  sc.variant = ModelVariant::full;
  return sc;
}

}  // namespace teleqa
