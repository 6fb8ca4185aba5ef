// Weights bundle: a JSON descriptor (tensor names, shapes, configs) next to
// a little-endian f32 payload whose concatenation order equals the
// descriptor's tensor order. Regressor parameters live in double at runtime;
// they serialize as f32, so save -> load -> save reproduces the payload
// byte for byte.
#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "teleqa/pipeline.hpp"

namespace teleqa {

namespace detail {

struct TensorEntry {
  std::string name;
  std::vector<int64_t> shape;
  std::vector<float> values;

  size_t expected_size() const {
    size_t n = 1;
    for (int64_t d : shape) n *= static_cast<size_t>(d);
    return n;
  }
};

inline nlohmann::json extractor_to_json(const ExtractorParams& e) {
  nlohmann::json specs = nlohmann::json::array();
  for (const auto& s : e.specs)
    specs.push_back({{"out_channels", s.out_channels}, {"kernel", s.kernel}, {"stride", s.stride}});
  return {{"in_channels", e.in_channels},
          {"specs", specs},
          {"seed", e.seed},
          {"clip_len", e.clip_len},
          {"temporal_kernel", e.temporal_kernel}};
}

inline ExtractorParams extractor_from_json(const nlohmann::json& j) {
  ExtractorParams e;
  e.in_channels = j.at("in_channels").get<int>();
  for (const auto& s : j.at("specs"))
    e.specs.push_back({s.at("out_channels").get<int>(), s.at("kernel").get<int>(),
                       s.at("stride").get<int>()});
  e.seed = j.at("seed").get<uint64_t>();
  e.clip_len = j.at("clip_len").get<int>();
  e.temporal_kernel = j.at("temporal_kernel").get<int>();
  return e;
}

inline nlohmann::json regressor_to_json(const RegressorParams& r) {
  return {{"input_dim", r.input_dim},
          {"hidden_dim", r.hidden_dim},
          {"fcn1", r.fcn1},
          {"fcn2", r.fcn2},
          {"fcn3", r.fcn3}};
}

inline void append_extractor_tensors(const std::string& prefix, const ExtractorParams& e,
                                     std::vector<TensorEntry>& out) {
  int in_ch = e.in_channels;
  for (size_t l = 0; l < e.specs.size(); ++l) {
    const auto& s = e.specs[l];
    TensorEntry w;
    w.name = prefix + ".layer" + std::to_string(l) + ".weight";
    w.shape = {s.out_channels, in_ch, s.kernel, s.kernel};
    w.values = e.weights[l];
    out.push_back(std::move(w));
    if (l < e.biases.size() && !e.biases[l].empty()) {
      TensorEntry b;
      b.name = prefix + ".layer" + std::to_string(l) + ".bias";
      b.shape = {s.out_channels};
      b.values = e.biases[l];
      out.push_back(std::move(b));
    }
    in_ch = s.out_channels;
  }
  if (e.clip_len > 0) {
    TensorEntry tw;
    tw.name = prefix + ".temporal.weight";
    tw.shape = {e.final_channels(), e.temporal_kernel};
    tw.values = e.temporal_weights;
    out.push_back(std::move(tw));
    if (!e.temporal_bias.empty()) {
      TensorEntry tb;
      tb.name = prefix + ".temporal.bias";
      tb.shape = {e.final_channels()};
      tb.values = e.temporal_bias;
      out.push_back(std::move(tb));
    }
  }
}

// Matrices serialize row-major regardless of in-memory layout.
inline void append_regressor_tensors(const std::string& prefix, const RegressorParams& r,
                                     std::vector<TensorEntry>& out) {
  auto refs = tensor_refs(const_cast<RegressorParams&>(r));
  for (const auto& t : refs) {
    TensorEntry e;
    e.name = prefix + "." + t.name;
    e.shape = {t.rows, t.cols};
    e.values.reserve(static_cast<size_t>(t.size()));
    Eigen::Map<const Eigen::MatrixXd> m(t.data, t.rows, t.cols);
    for (Eigen::Index i = 0; i < t.rows; ++i)
      for (Eigen::Index j = 0; j < t.cols; ++j) e.values.push_back(static_cast<float>(m(i, j)));
    out.push_back(std::move(e));
  }
}

inline void fill_regressor_tensors(const std::string& prefix, RegressorParams& r,
                                   const std::vector<TensorEntry>& entries, size_t& cursor) {
  auto refs = tensor_refs(r);
  for (const auto& t : refs) {
    if (cursor >= entries.size())
      throw IoError("weights descriptor ends before tensor " + prefix + "." + t.name);
    const TensorEntry& e = entries[cursor++];
    if (e.name != prefix + "." + t.name)
      throw IoError("weights descriptor order mismatch: expected " + prefix + "." + t.name +
                    ", found " + e.name);
    if (e.shape.size() != 2 || e.shape[0] != t.rows || e.shape[1] != t.cols)
      throw IoError("tensor shape mismatch for " + e.name);
    Eigen::Map<Eigen::MatrixXd> m(t.data, t.rows, t.cols);
    size_t k = 0;
    for (Eigen::Index i = 0; i < t.rows; ++i)
      for (Eigen::Index j = 0; j < t.cols; ++j) m(i, j) = e.values[k++];
  }
}

inline void fill_extractor_tensors(const std::string& prefix, ExtractorParams& e,
                                   const std::vector<TensorEntry>& entries, size_t& cursor) {
  e.weights.assign(e.specs.size(), {});
  e.biases.assign(e.specs.size(), {});
  auto take = [&](const std::string& name, size_t want) -> std::vector<float> {
    if (cursor >= entries.size()) return {};  // required callers reject empty
    const TensorEntry& t = entries[cursor];
    if (t.name != name) return {};  // optional tensor absent
    ++cursor;
    if (t.expected_size() != want || t.values.size() != want)
      throw IoError("tensor shape mismatch for " + name);
    return t.values;
  };
  int in_ch = e.in_channels;
  for (size_t l = 0; l < e.specs.size(); ++l) {
    const auto& s = e.specs[l];
    auto base = prefix + ".layer" + std::to_string(l);
    size_t wsize = static_cast<size_t>(s.out_channels) * in_ch * s.kernel * s.kernel;
    auto w = take(base + ".weight", wsize);
    if (w.empty() && wsize > 0) throw IoError("weights descriptor missing tensor " + base + ".weight");
    e.weights[l] = std::move(w);
    e.biases[l] = take(base + ".bias", static_cast<size_t>(s.out_channels));
    in_ch = s.out_channels;
  }
  if (e.clip_len > 0) {
    size_t tsize = static_cast<size_t>(e.final_channels()) * e.temporal_kernel;
    auto tw = take(prefix + ".temporal.weight", tsize);
    if (tw.empty()) throw IoError("weights descriptor missing tensor " + prefix + ".temporal.weight");
    e.temporal_weights = std::move(tw);
    e.temporal_bias = take(prefix + ".temporal.bias", static_cast<size_t>(e.final_channels()));
  }
}

inline void check_finite_model(const TeleVqaModel& m) {
  auto check_reg = [](const RegressorParams& r) {
    for (const auto& t : tensor_refs(const_cast<RegressorParams&>(r)))
      for (Eigen::Index i = 0; i < t.size(); ++i)
        if (!std::isfinite(t.data[i])) throw NumericError("numerical overflow in loaded weights");
  };
  check_reg(m.head);
  check_reg(m.visual);
  check_reg(m.audio);
}

}  // namespace detail

inline void save_model(const std::string& dir, const TeleVqaModel& model) {
  model.validate();
  std::filesystem::create_directories(dir);

  std::vector<detail::TensorEntry> entries;
  detail::append_extractor_tensors("frame", model.frame_extractor, entries);
  detail::append_extractor_tensors("clip", model.clip_extractor, entries);
  detail::append_extractor_tensors("audio_fe", model.audio_extractor, entries);
  detail::append_regressor_tensors("head", model.head, entries);
  detail::append_regressor_tensors("visual", model.visual, entries);
  detail::append_regressor_tensors("audio", model.audio, entries);

  nlohmann::json tensors = nlohmann::json::array();
  std::vector<float> payload;
  for (const auto& e : entries) {
    tensors.push_back({{"name", e.name}, {"shape", e.shape}});
    payload.insert(payload.end(), e.values.begin(), e.values.end());
  }

  nlohmann::json j = {
      {"format", "teleqa-weights"},
      {"version", 1},
      {"fusion", model.fusion == FusionReading::audio_and_visual ? "audio_and_visual"
                                                                 : "visual_and_visual"},
      {"audio_cfg",
       {{"n_fft", model.audio_cfg.n_fft}, {"hop", model.audio_cfg.hop}, {"n_mels", model.audio_cfg.n_mels}}},
      {"extractors",
       {{"frame", detail::extractor_to_json(model.frame_extractor)},
        {"clip", detail::extractor_to_json(model.clip_extractor)},
        {"audio", detail::extractor_to_json(model.audio_extractor)}}},
      {"regressors",
       {{"head", detail::regressor_to_json(model.head)},
        {"visual", detail::regressor_to_json(model.visual)},
        {"audio", detail::regressor_to_json(model.audio)}}},
      {"tensors", tensors}};

  std::ofstream out(dir + "/model.json", std::ios::trunc);
  if (!out) throw IoError("cannot open for write: " + dir + "/model.json");
  out << j.dump(2) << "\n";
  if (!out) throw IoError("write failed: " + dir + "/model.json");
  io::write_f32_file(dir + "/weights.f32", payload);
}

inline TeleVqaModel load_model(const std::string& dir) {
  std::ifstream in(dir + "/model.json");
  if (!in) throw IoError("missing file: " + dir + "/model.json");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed weights descriptor: " + std::string(e.what()));
  }
  if (j.value("format", "") != "teleqa-weights") throw IoError("not a weights bundle: " + dir);
  if (j.value("version", 0) != 1) throw IoError("unsupported weights version");

  TeleVqaModel m;
  std::string fusion = j.value("fusion", "audio_and_visual");
  m.fusion = fusion == "visual_and_visual" ? FusionReading::visual_and_visual
                                           : FusionReading::audio_and_visual;
  const auto& ac = j.at("audio_cfg");
  m.audio_cfg = {ac.at("n_fft").get<int>(), ac.at("hop").get<int>(), ac.at("n_mels").get<int>()};
  const auto& ex = j.at("extractors");
  m.frame_extractor = detail::extractor_from_json(ex.at("frame"));
  m.clip_extractor = detail::extractor_from_json(ex.at("clip"));
  m.audio_extractor = detail::extractor_from_json(ex.at("audio"));
  auto reg_dims = [&](const char* key) {
    const auto& r = j.at("regressors").at(key);
    return RegressorParams(r.at("input_dim").get<int>(), r.at("hidden_dim").get<int>(),
                           r.at("fcn1").get<int>(), r.at("fcn2").get<int>(), r.at("fcn3").get<int>());
  };
  m.head = reg_dims("head");
  m.visual = reg_dims("visual");
  m.audio = reg_dims("audio");

  std::vector<detail::TensorEntry> entries;
  size_t total = 0;
  for (const auto& t : j.at("tensors")) {
    detail::TensorEntry e;
    e.name = t.at("name").get<std::string>();
    e.shape = t.at("shape").get<std::vector<int64_t>>();
    total += e.expected_size();
    entries.push_back(std::move(e));
  }
  auto payload = io::read_f32_file(dir + "/weights.f32");
  if (payload.size() != total)
    throw IoError("payload length mismatch: " + dir + "/weights.f32 holds " +
                  std::to_string(payload.size()) + " values, descriptor lists " +
                  std::to_string(total));
  size_t offset = 0;
  for (auto& e : entries) {
    size_t n = e.expected_size();
    e.values.assign(payload.begin() + static_cast<ptrdiff_t>(offset),
                    payload.begin() + static_cast<ptrdiff_t>(offset + n));
    offset += n;
  }

  size_t cursor = 0;
  detail::fill_extractor_tensors("frame", m.frame_extractor, entries, cursor);
  detail::fill_extractor_tensors("clip", m.clip_extractor, entries, cursor);
  detail::fill_extractor_tensors("audio_fe", m.audio_extractor, entries, cursor);
  detail::fill_regressor_tensors("head", m.head, entries, cursor);
  detail::fill_regressor_tensors("visual", m.visual, entries, cursor);
  detail::fill_regressor_tensors("audio", m.audio, entries, cursor);
  if (cursor != entries.size()) throw IoError("weights descriptor lists unexpected extra tensors");

  m.validate();
  detail::check_finite_model(m);
  return m;
}

}  // namespace teleqa
