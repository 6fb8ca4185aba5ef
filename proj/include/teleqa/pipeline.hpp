// Online orchestration: per-packet feature extraction, pathway regression,
// polynomial fusion, missing-modality handling, quality maps, and local
// quality queries. Pathway scores clamp to [1,5] before fusion and the fused
// score clamps again after.
#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "teleqa/backbone.hpp"
#include "teleqa/common.hpp"
#include "teleqa/features.hpp"
#include "teleqa/regressor.hpp"
#include "teleqa/stream.hpp"

namespace teleqa {

// Raw fusion polynomial, no clamping. Coefficients are frozen constants of
// the model, not trainable parameters; order: bias, S_a, S_v, S_a*S_v.
inline constexpr double kFusionCoeffs[4] = {1.12, 0.007, 0.24, 0.088};

inline double kpn_polynomial(double s_a, double s_v) {
  return kFusionCoeffs[0] + kFusionCoeffs[1] * s_a + kFusionCoeffs[2] * s_v +
         kFusionCoeffs[3] * s_a * s_v;
}

inline double kpn_fuse(double s_a, double s_v) {
  if (s_a < 1.0 || s_a > 5.0 || s_v < 1.0 || s_v > 5.0)
    throw ConfigError("fusion inputs must lie in [1,5]");
  return clamp(kpn_polynomial(s_a, s_v), 1.0, 5.0);
}

// Which operand pair the fusion consumes. The printed form of the combined
// model reads as visual fused with visual; the surrounding text and figure
// say audio. Default follows the text; the printed reading stays available
// for comparison.
enum class FusionReading { audio_and_visual, visual_and_visual };

struct TeleVqaModel {
  ExtractorParams frame_extractor;
  ExtractorParams clip_extractor;
  ExtractorParams audio_extractor;
  AudioFrontendConfig audio_cfg;
  RegressorParams head;    // frame/patch scoring regressor
  RegressorParams visual;  // on patch + frame + clip fused features
  RegressorParams audio;   // on audio features
  FusionReading fusion = FusionReading::audio_and_visual;

  int frame_dim() const { return 3 * frame_extractor.final_channels(); }
  int clip_dim() const { return 3 * clip_extractor.final_channels(); }
  int audio_dim() const { return 3 * audio_extractor.final_channels(); }
  int visual_dim() const { return 341 + frame_dim() + clip_dim(); }

  void validate() const {
    if (head.input_dim != frame_extractor.final_channels())
      throw ConfigError("head input dim must equal frame extractor channels");
    if (visual.input_dim != visual_dim())
      throw ConfigError("visual regressor input dim mismatch");
    if (audio.input_dim != audio_dim()) throw ConfigError("audio regressor input dim mismatch");
    if (clip_extractor.clip_len < 2) throw ConfigError("clip extractor needs clip_len >= 2");
  }
};

// Small model for tests and the bundled demo path.
inline TeleVqaModel make_toy_model(uint64_t seed, int clip_len = 4) {
  TeleVqaModel m;
  m.frame_extractor = toy_frame_extractor(seed);
  m.clip_extractor = toy_clip_extractor(seed + 1, clip_len);
  m.audio_extractor = toy_audio_extractor(seed + 2);
  m.audio_cfg = {256, 64, 16};
  m.head = init_regressor(16, 8, 16, 32, 16, seed + 3);
  m.visual = init_regressor(m.visual_dim(), 16, 16, 32, 16, seed + 4);
  m.audio = init_regressor(m.audio_dim(), 16, 16, 32, 16, seed + 5);
  m.validate();
  return m;
}

// Published-scale dims (2880/341/1536 visual parts, 1536 audio, 4757 fused).
inline TeleVqaModel make_paper_model(uint64_t seed, int clip_len = 8) {
  TeleVqaModel m;
  m.frame_extractor = paper_frame_extractor(seed);
  m.clip_extractor = paper_clip_extractor(seed + 1, clip_len);
  m.audio_extractor = paper_audio_extractor(seed + 2);
  m.audio_cfg = {512, 256, 64};
  m.head = init_regressor(960, 128, 128, 256, 128, seed + 3);
  m.visual = init_regressor(m.visual_dim(), 128, 128, 256, 128, seed + 4);
  m.audio = init_regressor(m.audio_dim(), 128, 128, 256, 128, seed + 5);
  m.validate();
  return m;
}

enum class ScoreFlag : uint8_t { fresh, held, default_ };

inline const char* flag_name(ScoreFlag f) {
  switch (f) {
    case ScoreFlag::fresh: return "fresh";
    case ScoreFlag::held: return "held";
    default: return "default";
  }
}

struct QualityTriple {
  int64_t step = 0;
  double s_v = 3.0;
  double s_a = 3.0;
  double s_av = 0.0;
  ScoreFlag flag_v = ScoreFlag::default_;
  ScoreFlag flag_a = ScoreFlag::default_;
};

struct SessionState {
  HiddenState h_v;
  HiddenState h_a;
  double last_sv = 3.0;
  double last_sa = 3.0;
  bool seen_v = false;
  bool seen_a = false;
  std::vector<float> last_clip;  // zeros until the first clip arrives
  int64_t step = 0;
};

inline SessionState init_session(const TeleVqaModel& model) {
  model.validate();
  SessionState s;
  s.h_v = init_state(model.visual);
  s.h_a = init_state(model.audio);
  s.last_clip.assign(static_cast<size_t>(model.clip_dim()), 0.0f);
  return s;
}

namespace detail {

inline Eigen::VectorXd to_eigen(const std::vector<float>& v) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(v.size()));
  for (size_t i = 0; i < v.size(); ++i) out[static_cast<Eigen::Index>(i)] = v[i];
  return out;
}

inline double fuse_for(const TeleVqaModel& model, double s_a, double s_v) {
  return model.fusion == FusionReading::audio_and_visual ? kpn_fuse(s_a, s_v)
                                                         : kpn_fuse(s_v, s_v);
}

}  // namespace detail

inline QualityTriple session_scores(const TeleVqaModel& model, const SessionState& s) {
  QualityTriple q;
  q.step = s.step - 1;
  q.s_v = s.last_sv;
  q.s_a = s.last_sa;
  q.s_av = detail::fuse_for(model, q.s_a, q.s_v);
  q.flag_v = s.seen_v ? ScoreFlag::fresh : ScoreFlag::default_;
  q.flag_a = s.seen_a ? ScoreFlag::fresh : ScoreFlag::default_;
  return q;
}

// Consumes exactly one packet. A pathway's hidden state advances only when
// its modality arrives; otherwise the last score holds (3.0 before anything
// has arrived). An audio segment shorter than one analysis window counts as
// missing.
inline QualityTriple step(const TeleVqaModel& model, SessionState& session,
                          const StreamPacket& packet) {
  if (packet.step != session.step)
    throw ConfigError("step mismatch: packet " + std::to_string(packet.step) + ", session " +
                      std::to_string(session.step));

  QualityTriple q;
  q.step = packet.step;

  if (packet.clip.has_value())
    session.last_clip = clip_features(*packet.clip, model.clip_extractor).values;

  if (packet.frame.has_value()) {
    auto maps = extract_frame_maps(*packet.frame, model.frame_extractor);
    FeatureVector fp = patch_features_from_maps(maps, model.head);
    FeatureVector ff{Modality::frame,
                     detail::flatten_pooled(adaptive_avg_pool(maps, 1, 3))};
    FeatureVector fc{Modality::clip, session.last_clip};
    auto fused = fuse_visual(fp, ff, fc);
    auto [score, h2] = predict_step(detail::to_eigen(fused.values), session.h_v, model.visual);
    session.h_v = h2;
    session.last_sv = clamp(score, 1.0, 5.0);
    session.seen_v = true;
    q.flag_v = ScoreFlag::fresh;
  } else {
    q.flag_v = session.seen_v ? ScoreFlag::held : ScoreFlag::default_;
  }
  q.s_v = session.last_sv;

  bool audio_usable = packet.audio.has_value() &&
                      packet.audio->samples.size() >= static_cast<size_t>(model.audio_cfg.n_fft);
  if (audio_usable) {
    auto fa = audio_features(*packet.audio, model.audio_cfg, model.audio_extractor);
    auto [score, h2] = predict_step(detail::to_eigen(fa.values), session.h_a, model.audio);
    session.h_a = h2;
    session.last_sa = clamp(score, 1.0, 5.0);
    session.seen_a = true;
    q.flag_a = ScoreFlag::fresh;
  } else {
    q.flag_a = session.seen_a ? ScoreFlag::held : ScoreFlag::default_;
  }
  q.s_a = session.last_sa;

  q.s_av = detail::fuse_for(model, q.s_a, q.s_v);
  ++session.step;
  return q;
}

inline std::vector<QualityTriple> run_online(const TeleVqaModel& model,
                                             const std::vector<StreamPacket>& packets) {
  SessionState session = init_session(model);
  std::vector<QualityTriple> out;
  out.reserve(packets.size());
  for (const auto& p : packets) out.push_back(step(model, session, p));
  return out;
}

// Reference path: gathers each pathway's features for the steps where the
// modality is present, scores them in one batched pass, then replays the
// hold/default rules. Same math as run_online through a different
// computation order.
inline std::vector<QualityTriple> run_offline(const TeleVqaModel& model,
                                              const std::vector<StreamPacket>& packets) {
  model.validate();
  std::vector<Eigen::VectorXd> visual_xs, audio_xs;
  std::vector<size_t> visual_steps, audio_steps;
  std::vector<float> last_clip(static_cast<size_t>(model.clip_dim()), 0.0f);

  for (size_t t = 0; t < packets.size(); ++t) {
    const auto& p = packets[t];
    if (p.clip.has_value()) last_clip = clip_features(*p.clip, model.clip_extractor).values;
    if (p.frame.has_value()) {
      auto maps = extract_frame_maps(*p.frame, model.frame_extractor);
      FeatureVector fp = patch_features_from_maps(maps, model.head);
      FeatureVector ff{Modality::frame,
                       detail::flatten_pooled(adaptive_avg_pool(maps, 1, 3))};
      FeatureVector fc{Modality::clip, last_clip};
      visual_xs.push_back(detail::to_eigen(fuse_visual(fp, ff, fc).values));
      visual_steps.push_back(t);
    }
    if (p.audio.has_value() &&
        p.audio->samples.size() >= static_cast<size_t>(model.audio_cfg.n_fft)) {
      audio_xs.push_back(
          detail::to_eigen(audio_features(*p.audio, model.audio_cfg, model.audio_extractor).values));
      audio_steps.push_back(t);
    }
  }

  auto v_scores = offline_scores(model.visual, visual_xs);
  auto a_scores = offline_scores(model.audio, audio_xs);

  std::vector<QualityTriple> out(packets.size());
  double sv = 3.0, sa = 3.0;
  bool seen_v = false, seen_a = false;
  size_t vi = 0, ai = 0;
  for (size_t t = 0; t < packets.size(); ++t) {
    QualityTriple& q = out[t];
    q.step = static_cast<int64_t>(t);
    if (vi < visual_steps.size() && visual_steps[vi] == t) {
      sv = clamp(v_scores[vi], 1.0, 5.0);
      seen_v = true;
      ++vi;
      q.flag_v = ScoreFlag::fresh;
    } else {
      q.flag_v = seen_v ? ScoreFlag::held : ScoreFlag::default_;
    }
    if (ai < audio_steps.size() && audio_steps[ai] == t) {
      sa = clamp(a_scores[ai], 1.0, 5.0);
      seen_a = true;
      ++ai;
      q.flag_a = ScoreFlag::fresh;
    } else {
      q.flag_a = seen_a ? ScoreFlag::held : ScoreFlag::default_;
    }
    q.s_v = sv;
    q.s_a = sa;
    q.s_av = detail::fuse_for(model, sa, sv);
  }
  return out;
}

struct QualityMap {
  int rows = 0;
  int cols = 0;
  std::vector<double> scores;  // row-major, [1,5]

  double at(int i, int j) const { return scores[static_cast<size_t>(i) * cols + j]; }
};

inline QualityMap quality_map(const Frame& frame, int rows, int cols,
                              const ExtractorParams& extractor, const RegressorParams& head) {
  if (rows < 1 || cols < 1) throw ConfigError("quality map dims must be >= 1");
  auto maps = extract_frame_maps(frame, extractor);
  if (rows > maps.height || cols > maps.width)
    throw ConfigError("grid exceeds feature resolution: requested " + std::to_string(rows) +
                      "x" + std::to_string(cols) + ", map is " + std::to_string(maps.height) +
                      "x" + std::to_string(maps.width));

  QualityMap qm;
  qm.rows = rows;
  qm.cols = cols;
  qm.scores.resize(static_cast<size_t>(rows) * cols);
  for (int i = 0; i < rows; ++i) {
    for (int j = 0; j < cols; ++j) {
      RoI cell{static_cast<double>(j) / cols, static_cast<double>(i) / rows,
               static_cast<double>(j + 1) / cols, static_cast<double>(i + 1) / rows};
      double s = score_sequence(head, pooled_columns(roi_pool(maps, cell, 1, 3)));
      qm.scores[static_cast<size_t>(i) * cols + j] = clamp(s, 1.0, 5.0);
    }
  }
  return qm;
}

inline std::vector<double> local_quality(const Frame& frame, const std::vector<RoI>& rois,
                                         const ExtractorParams& extractor,
                                         const RegressorParams& head) {
  if (rois.empty()) return {};
  auto maps = extract_frame_maps(frame, extractor);
  std::vector<double> out;
  out.reserve(rois.size());
  for (const auto& roi : rois) {
    double s = score_sequence(head, pooled_columns(roi_pool(maps, roi, 1, 3)));
    out.push_back(clamp(s, 1.0, 5.0));
  }
  return out;
}

// Trace format: t,S_v,S_a,S_av,flag_v,flag_a per step.
inline void write_trace(std::ostream& os, const std::vector<QualityTriple>& triples) {
  os << "t,S_v,S_a,S_av,flag_v,flag_a\n";
  os.precision(9);
  for (const auto& q : triples)
    os << q.step << "," << q.s_v << "," << q.s_a << "," << q.s_av << "," << flag_name(q.flag_v)
       << "," << flag_name(q.flag_a) << "\n";
}

// Quality maps persist as the feature cache (one record per row, modality
// quality_map, step = row index) plus a PGM grayscale rendering where
// score 1 maps to black and 5 to white.
inline void save_quality_map(const QualityMap& qm, const std::string& cache_path,
                             const std::string& pgm_path) {
  std::vector<CacheRecord> records;
  for (int i = 0; i < qm.rows; ++i) {
    CacheRecord r;
    r.step = static_cast<uint32_t>(i);
    r.modality = Modality::quality_map;
    r.payload.resize(static_cast<size_t>(qm.cols));
    for (int j = 0; j < qm.cols; ++j) r.payload[static_cast<size_t>(j)] = static_cast<float>(qm.at(i, j));
    records.push_back(std::move(r));
  }
  cache_write(cache_path, records);

  std::ofstream pgm(pgm_path, std::ios::binary | std::ios::trunc);
  if (!pgm) throw IoError("cannot open for write: " + pgm_path);
  pgm << "P5\n" << qm.cols << " " << qm.rows << "\n255\n";
  for (int i = 0; i < qm.rows; ++i)
    for (int j = 0; j < qm.cols; ++j) {
      auto px = static_cast<uint8_t>(std::lround((qm.at(i, j) - 1.0) / 4.0 * 255.0));
      pgm.write(reinterpret_cast<const char*>(&px), 1);
    }
  if (!pgm) throw IoError("write failed: " + pgm_path);
}

inline QualityMap load_quality_map(const std::string& cache_path) {
  auto records = cache_read(cache_path);
  if (records.empty()) throw IoError("quality map cache is empty");
  QualityMap qm;
  qm.rows = static_cast<int>(records.size());
  qm.cols = static_cast<int>(records[0].payload.size());
  for (const auto& r : records) {
    if (r.modality != Modality::quality_map) throw IoError("record is not a quality map row");
    if (static_cast<int>(r.payload.size()) != qm.cols)
      throw IoError("payload length mismatch: quality map rows differ");
    for (float v : r.payload) qm.scores.push_back(v);
  }
  return qm;
}

}  // namespace teleqa
