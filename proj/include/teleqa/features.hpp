// Per-timestep feature vectors, the multi-scale RoI grid, visual fusion, and
// the binary feature cache.
//
// A pooled 1x3 map flattens position-major: [col0 channels, col1, col2]. The
// scoring head consumes exactly these three C-dim columns as a length-3
// sequence, so flatten and sequence views always agree.
#pragma once

#include <cstdint>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "teleqa/audio.hpp"
#include "teleqa/backbone.hpp"
#include "teleqa/common.hpp"
#include "teleqa/regressor.hpp"
#include "teleqa/stream.hpp"

namespace teleqa {

// Numeric values are part of the cache file format; do not reorder.
enum class Modality : uint8_t {
  frame = 0,
  patch = 1,
  clip = 2,
  audio = 3,
  visual_fused = 4,
  quality_map = 5,
};

struct FeatureVector {
  Modality modality = Modality::frame;
  std::vector<float> values;

  int dim() const { return static_cast<int>(values.size()); }
};

namespace detail {

inline std::vector<float> flatten_pooled(const FeatureMap& pooled) {
  std::vector<float> out;
  out.reserve(pooled.values.size());
  for (int j = 0; j < pooled.width; ++j)
    for (int i = 0; i < pooled.height; ++i)
      for (int c = 0; c < pooled.channels; ++c) out.push_back(pooled.at(c, i, j));
  return out;
}

}  // namespace detail

// The three pooled columns as the head's input sequence.
inline std::vector<Eigen::VectorXd> pooled_columns(const FeatureMap& pooled) {
  std::vector<Eigen::VectorXd> cols;
  cols.reserve(static_cast<size_t>(pooled.width) * pooled.height);
  for (int j = 0; j < pooled.width; ++j) {
    for (int i = 0; i < pooled.height; ++i) {
      Eigen::VectorXd v(pooled.channels);
      for (int c = 0; c < pooled.channels; ++c) v[c] = pooled.at(c, i, j);
      cols.push_back(std::move(v));
    }
  }
  return cols;
}

// Recovers the column sequence from a flattened vector (inverse of the
// position-major flatten) for a known group size.
inline std::vector<Eigen::VectorXd> feature_columns(const FeatureVector& fv, int channels) {
  if (channels < 1 || fv.dim() % channels != 0)
    throw ConfigError("feature dim not divisible by channel count");
  const int n = fv.dim() / channels;
  std::vector<Eigen::VectorXd> cols(static_cast<size_t>(n), Eigen::VectorXd(channels));
  for (int j = 0; j < n; ++j)
    for (int c = 0; c < channels; ++c)
      cols[static_cast<size_t>(j)][c] = fv.values[static_cast<size_t>(j) * channels + c];
  return cols;
}

inline FeatureVector frame_features(const Frame& frame, const ExtractorParams& extractor) {
  auto pooled = adaptive_avg_pool(extract_frame_maps(frame, extractor), 1, 3);
  return {Modality::frame, detail::flatten_pooled(pooled)};
}

inline FeatureVector clip_features(const Clip& clip, const ExtractorParams& extractor) {
  auto pooled = adaptive_avg_pool(extract_clip_maps(clip, extractor), 1, 3);
  return {Modality::clip, detail::flatten_pooled(pooled)};
}

struct AudioFrontendConfig {
  int n_fft = 512;
  int hop = 256;
  int n_mels = 64;
};

inline FeatureVector audio_features(const AudioSegment& segment, const AudioFrontendConfig& cfg,
                                    const ExtractorParams& extractor) {
  auto mel = mel_spectrogram(segment.samples, cfg.n_fft, cfg.hop, cfg.n_mels,
                             segment.sample_rate);
  auto pooled = adaptive_avg_pool(extract_audio_maps(mel, extractor), 1, 3);
  return {Modality::audio, detail::flatten_pooled(pooled)};
}

// Uniform 2^d x 2^d grids for each scale d in [d_min, d_max], row-major per
// scale, scales ascending.
inline std::vector<RoI> multi_scale_rois(int d_min, int d_max) {
  if (d_min < 0 || d_min > d_max) throw ConfigError("scale range requires 0 <= d_min <= d_max");
  std::vector<RoI> rois;
  for (int d = d_min; d <= d_max; ++d) {
    const int g = 1 << d;
    for (int i = 0; i < g; ++i)
      for (int j = 0; j < g; ++j)
        rois.push_back(RoI{static_cast<double>(j) / g, static_cast<double>(i) / g,
                           static_cast<double>(j + 1) / g, static_cast<double>(i + 1) / g});
  }
  return rois;
}

// One quality score per RoI of the d=0..4 pyramid (1+4+16+64+256 = 341),
// computed on an already-extracted global map.
inline FeatureVector patch_features_from_maps(const FeatureMap& maps,
                                              const RegressorParams& head) {
  auto rois = multi_scale_rois(0, 4);
  FeatureVector out;
  out.modality = Modality::patch;
  out.values.reserve(rois.size());
  for (const auto& roi : rois) {
    auto pooled = roi_pool(maps, roi, 1, 3);
    out.values.push_back(static_cast<float>(score_sequence(head, pooled_columns(pooled))));
  }
  return out;
}

inline FeatureVector patch_features(const Frame& frame, const ExtractorParams& extractor,
                                    const RegressorParams& head) {
  return patch_features_from_maps(extract_frame_maps(frame, extractor), head);
}

// Concatenation order: patch, frame, clip.
inline FeatureVector fuse_visual(const FeatureVector& fp, const FeatureVector& ff,
                                 const FeatureVector& fc) {
  if (fp.modality != Modality::patch || ff.modality != Modality::frame ||
      fc.modality != Modality::clip)
    throw ConfigError("fuse_visual requires (patch, frame, clip) in that order");
  FeatureVector out;
  out.modality = Modality::visual_fused;
  out.values.reserve(fp.values.size() + ff.values.size() + fc.values.size());
  out.values.insert(out.values.end(), fp.values.begin(), fp.values.end());
  out.values.insert(out.values.end(), ff.values.begin(), ff.values.end());
  out.values.insert(out.values.end(), fc.values.begin(), fc.values.end());
  return out;
}

// Binary feature cache: magic "TQAF", version u32, then records of
// (step u32, modality u8, dim u32, dim x f32). Little-endian.
struct CacheRecord {
  uint32_t step = 0;
  Modality modality = Modality::frame;
  std::vector<float> payload;
};

inline constexpr char kCacheMagic[4] = {'T', 'Q', 'A', 'F'};
inline constexpr uint32_t kCacheVersion = 1;

inline void cache_write(const std::string& path, const std::vector<CacheRecord>& records) {
  uint32_t last_step[6] = {0, 0, 0, 0, 0, 0};
  bool seen[6] = {false, false, false, false, false, false};
  for (const auto& r : records) {
    auto m = static_cast<size_t>(r.modality);
    if (m > 5) throw ConfigError("unknown modality");
    if (seen[m] && r.step < last_step[m])
      throw ConfigError("cache steps must be non-decreasing per modality");
    seen[m] = true;
    last_step[m] = r.step;
  }

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for write: " + path);
  io::write_bytes(out, kCacheMagic, 4);
  io::write_u32(out, kCacheVersion);
  for (const auto& r : records) {
    io::write_u32(out, r.step);
    io::write_u8(out, static_cast<uint8_t>(r.modality));
    io::write_u32(out, static_cast<uint32_t>(r.payload.size()));
    if (!r.payload.empty()) io::write_f32_array(out, r.payload.data(), r.payload.size());
  }
  if (!out) throw IoError("write failed: " + path);
}

// Streaming reader; records decode one at a time without loading the file.
class CacheReader {
 public:
  explicit CacheReader(const std::string& path) : in_(path, std::ios::binary) {
    if (!in_) throw IoError("missing file: " + path);
    char magic[4];
    if (!io::read_bytes(in_, magic, 4, "cache header")) throw IoError("truncated payload: cache header");
    if (std::memcmp(magic, kCacheMagic, 4) != 0) throw IoError("cache magic mismatch");
    uint32_t version = io::read_u32(in_, "cache version");
    if (version != kCacheVersion)
      throw IoError("cache version mismatch: got " + std::to_string(version));
  }

  std::optional<CacheRecord> next() {
    uint32_t step = 0;
    if (!io::read_bytes(in_, &step, 4, "record step")) return std::nullopt;  // clean EOF
    CacheRecord r;
    r.step = step;
    uint8_t modality = 0;
    if (!io::read_bytes(in_, &modality, 1, "record modality"))
      throw IoError("truncated payload: record modality");
    if (modality > 5) throw IoError("unknown modality in cache");
    r.modality = static_cast<Modality>(modality);
    uint32_t dim = io::read_u32(in_, "record dim");
    r.payload.resize(dim);
    if (dim > 0 &&
        !io::read_bytes(in_, r.payload.data(), static_cast<size_t>(dim) * 4, "record payload"))
      throw IoError("truncated payload: record payload");
    return r;
  }

 private:
  std::ifstream in_;
};

inline std::vector<CacheRecord> cache_read(const std::string& path) {
  CacheReader reader(path);
  std::vector<CacheRecord> records;
  while (auto r = reader.next()) records.push_back(std::move(*r));
  return records;
}

}  // namespace teleqa
