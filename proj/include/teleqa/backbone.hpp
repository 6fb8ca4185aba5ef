// Stand-in feature extractors and the pooling operators they feed.
//
// Extractors are small conv stacks with seeded frozen weights: deterministic
// stand-ins for pretrained backbones, not trained networks. Pooling is the
// load-bearing part: adaptive_avg_pool is roi_pool with a full-frame RoI, so
// pooling a sub-RoI of a global map and pooling the map of a cropped patch
// run the identical summation and agree bit-for-bit whenever the extractor is
// pointwise (receptive field 1) and the RoI is grid-aligned.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "teleqa/audio.hpp"
#include "teleqa/common.hpp"
#include "teleqa/stream.hpp"

namespace teleqa {

// C-major storage: values[(c*height + y)*width + x].
struct FeatureMap {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<float> values;

  FeatureMap() = default;
  FeatureMap(int c, int h, int w)
      : channels(c), height(h), width(w), values(static_cast<size_t>(c) * h * w, 0.0f) {}

  float at(int c, int y, int x) const {
    return values[(static_cast<size_t>(c) * height + y) * width + x];
  }
  float& at(int c, int y, int x) {
    return values[(static_cast<size_t>(c) * height + y) * width + x];
  }
};

// Normalized frame coordinates, strictly positive area.
struct RoI {
  double x0 = 0.0, y0 = 0.0, x1 = 1.0, y1 = 1.0;
};

struct ConvSpec {
  int out_channels = 0;
  int kernel = 3;
  int stride = 2;
};

// Frozen seeded conv stack. Weight draw order is fixed (per layer: weights
// then bias; for clip extractors the depthwise temporal kernel and bias come
// last); serialization and re-derivation from seed rely on it.
struct ExtractorParams {
  int in_channels = 0;
  std::vector<ConvSpec> specs;
  uint64_t seed = 0;
  int clip_len = 0;  // > 0 marks a clip extractor with a temporal stage
  int temporal_kernel = 3;

  std::vector<std::vector<float>> weights;  // per layer, out*in*k*k
  std::vector<std::vector<float>> biases;   // per layer, out (empty if bias-free)
  std::vector<float> temporal_weights;      // depthwise, C_out * temporal_kernel
  std::vector<float> temporal_bias;

  int final_channels() const { return specs.back().out_channels; }

  // Spatial extent only; the temporal stage adds none.
  int receptive_field() const {
    int rf = 1, jump = 1;
    for (const auto& s : specs) {
      rf += (s.kernel - 1) * jump;
      jump *= s.stride;
    }
    return rf;
  }

  int total_stride() const {
    int s = 1;
    for (const auto& spec : specs) s *= spec.stride;
    return s;
  }
};

inline ExtractorParams make_extractor(int in_channels, std::vector<ConvSpec> specs,
                                      uint64_t seed, int clip_len = 0, bool with_bias = true) {
  if (in_channels < 1 || specs.empty()) throw ConfigError("extractor needs >= 1 layer");
  ExtractorParams p;
  p.in_channels = in_channels;
  p.specs = std::move(specs);
  p.seed = seed;
  p.clip_len = clip_len;

  Rng rng(seed);
  int in_c = in_channels;
  for (const auto& s : p.specs) {
    if (s.out_channels < 1 || s.kernel < 1 || s.stride < 1)
      throw ConfigError("invalid conv spec");
    const int fan_in = in_c * s.kernel * s.kernel;
    const double limit = std::sqrt(6.0 / fan_in);
    std::vector<float> w(static_cast<size_t>(s.out_channels) * fan_in);
    for (auto& v : w) v = static_cast<float>(rng.uniform(-limit, limit));
    p.weights.push_back(std::move(w));
    std::vector<float> b(s.out_channels, 0.0f);
    if (with_bias)
      for (auto& v : b) v = static_cast<float>(rng.uniform(-0.1, 0.1));
    p.biases.push_back(std::move(b));
    in_c = s.out_channels;
  }
  if (clip_len > 0) {
    if (clip_len < p.temporal_kernel) throw ConfigError("clip_len below temporal kernel");
    const int c = p.final_channels();
    const double limit = std::sqrt(6.0 / p.temporal_kernel);
    p.temporal_weights.resize(static_cast<size_t>(c) * p.temporal_kernel);
    for (auto& v : p.temporal_weights) v = static_cast<float>(rng.uniform(-limit, limit));
    p.temporal_bias.assign(c, 0.0f);
    if (with_bias)
      for (auto& v : p.temporal_bias) v = static_cast<float>(rng.uniform(-0.1, 0.1));
  }
  return p;
}

// Presets. Paper-scale channel ladders reproduce the published feature dims
// (frame 960 -> 2880, clip 512 -> 1536, audio 512 -> 1536 after 1x3 pooling).
inline ExtractorParams toy_frame_extractor(uint64_t seed, bool with_bias = true) {
  return make_extractor(3, {{8, 3, 2}, {16, 3, 2}, {16, 3, 2}}, seed, 0, with_bias);
}
inline ExtractorParams paper_frame_extractor(uint64_t seed) {
  return make_extractor(3, {{32, 3, 2}, {64, 3, 2}, {960, 3, 2}}, seed);
}
inline ExtractorParams pointwise_frame_extractor(uint64_t seed, int channels = 16,
                                                 bool with_bias = true) {
  return make_extractor(3, {{channels, 1, 1}}, seed, 0, with_bias);
}
inline ExtractorParams toy_clip_extractor(uint64_t seed, int clip_len, bool with_bias = true) {
  return make_extractor(3, {{8, 3, 2}, {8, 3, 2}, {8, 3, 2}}, seed, clip_len, with_bias);
}
inline ExtractorParams paper_clip_extractor(uint64_t seed, int clip_len = 8) {
  return make_extractor(3, {{32, 3, 2}, {64, 3, 2}, {512, 3, 2}}, seed, clip_len);
}
inline ExtractorParams toy_audio_extractor(uint64_t seed, bool with_bias = true) {
  return make_extractor(1, {{8, 3, 2}, {8, 3, 2}, {8, 3, 2}}, seed, 0, with_bias);
}
inline ExtractorParams paper_audio_extractor(uint64_t seed) {
  return make_extractor(1, {{32, 3, 2}, {64, 3, 2}, {512, 3, 2}}, seed);
}

namespace detail {

// SAME padding, TensorFlow convention: out = ceil(in/stride), surplus padding
// goes to the bottom/right.
inline FeatureMap conv2d_relu(const FeatureMap& in, const std::vector<float>& w,
                              const std::vector<float>& b, int out_c, int k, int stride) {
  const int out_h = (in.height + stride - 1) / stride;
  const int out_w = (in.width + stride - 1) / stride;
  const int pad_h = std::max((out_h - 1) * stride + k - in.height, 0);
  const int pad_w = std::max((out_w - 1) * stride + k - in.width, 0);
  const int pad_top = pad_h / 2;
  const int pad_left = pad_w / 2;

  FeatureMap out(out_c, out_h, out_w);
  const size_t per_out = static_cast<size_t>(in.channels) * k * k;
  for (int oc = 0; oc < out_c; ++oc) {
    const float* wc = w.data() + static_cast<size_t>(oc) * per_out;
    for (int oy = 0; oy < out_h; ++oy) {
      for (int ox = 0; ox < out_w; ++ox) {
        double acc = b.empty() ? 0.0 : b[oc];
        const float* wp = wc;
        for (int ic = 0; ic < in.channels; ++ic) {
          for (int ky = 0; ky < k; ++ky) {
            const int iy = oy * stride - pad_top + ky;
            for (int kx = 0; kx < k; ++kx, ++wp) {
              const int ix = ox * stride - pad_left + kx;
              if (iy < 0 || iy >= in.height || ix < 0 || ix >= in.width) continue;
              acc += static_cast<double>(*wp) * in.at(ic, iy, ix);
            }
          }
        }
        out.at(oc, oy, ox) = static_cast<float>(acc > 0.0 ? acc : 0.0);
      }
    }
  }
  return out;
}

inline FeatureMap run_spatial_stack(FeatureMap m, const ExtractorParams& p) {
  for (size_t l = 0; l < p.specs.size(); ++l)
    m = conv2d_relu(m, p.weights[l], p.biases[l], p.specs[l].out_channels,
                    p.specs[l].kernel, p.specs[l].stride);
  return m;
}

inline void check_input_size(int h, int w, const ExtractorParams& p, const char* what) {
  const int rf = p.receptive_field();
  if (h < rf || w < rf)
    throw ConfigError(std::string(what) + " smaller than receptive field (" +
                      std::to_string(rf) + ")");
}

}  // namespace detail

inline FeatureMap extract_frame_maps(const Frame& frame, const ExtractorParams& params) {
  if (params.in_channels != 3) throw ConfigError("frame extractor requires 3 input channels");
  detail::check_input_size(frame.height, frame.width, params, "frame");
  FeatureMap in(3, frame.height, frame.width);
  std::copy(frame.data.begin(), frame.data.end(), in.values.begin());
  return detail::run_spatial_stack(std::move(in), params);
}

// Spatial stack per frame, then a depthwise temporal conv (VALID, ReLU) and a
// temporal mean that removes the time extent.
inline FeatureMap extract_clip_maps(const Clip& clip, const ExtractorParams& params) {
  if (params.clip_len <= 0) throw ConfigError("extractor lacks a temporal stage");
  if (static_cast<int>(clip.frames.size()) != params.clip_len)
    throw ConfigError("wrong clip length: got " + std::to_string(clip.frames.size()) +
                      ", extractor expects " + std::to_string(params.clip_len));

  std::vector<FeatureMap> maps;
  maps.reserve(clip.frames.size());
  for (const auto& f : clip.frames) maps.push_back(extract_frame_maps(f, params));

  const int C = maps[0].channels, H = maps[0].height, W = maps[0].width;
  const int K = params.temporal_kernel;
  const int T_out = static_cast<int>(maps.size()) - K + 1;

  FeatureMap out(C, H, W);
  const size_t plane = static_cast<size_t>(H) * W;
  for (int c = 0; c < C; ++c) {
    const float* tw = params.temporal_weights.data() + static_cast<size_t>(c) * K;
    const float tb = params.temporal_bias.empty() ? 0.0f : params.temporal_bias[c];
    for (size_t i = 0; i < plane; ++i) {
      double mean = 0.0;
      for (int t = 0; t < T_out; ++t) {
        double acc = tb;
        for (int j = 0; j < K; ++j)
          acc += static_cast<double>(tw[j]) * maps[t + j].values[c * plane + i];
        mean += acc > 0.0 ? acc : 0.0;
      }
      out.values[c * plane + i] = static_cast<float>(mean / T_out);
    }
  }
  return out;
}

inline FeatureMap extract_audio_maps(const Spectrogram& spec, const ExtractorParams& params) {
  if (params.in_channels != 1) throw ConfigError("audio extractor requires 1 input channel");
  detail::check_input_size(spec.bins, spec.frames, params, "spectrogram");
  FeatureMap in(1, spec.bins, spec.frames);
  std::copy(spec.values.begin(), spec.values.end(), in.values.begin());
  return detail::run_spatial_stack(std::move(in), params);
}

enum class PoolMode { avg, max };

namespace detail {

// Adaptive bin boundaries over `extent` cells split into `out` bins. When the
// region has fewer cells than bins, cells replicate (end is forced past start).
inline std::pair<int, int> pool_bin(int i, int extent, int out) {
  int start = static_cast<int>((static_cast<int64_t>(i) * extent) / out);
  int end = static_cast<int>((static_cast<int64_t>(i + 1) * extent) / out);
  if (end <= start) end = start + 1;
  return {start, end};
}

}  // namespace detail

// Pools the RoI's sub-rectangle of the map into out_h x out_w bins. The RoI
// is snapped outward to whole feature cells: floor on the low edge, ceil on
// the high edge, so grid-aligned RoIs cover exactly their cells.
inline FeatureMap roi_pool(const FeatureMap& map, const RoI& roi, int out_h, int out_w,
                           PoolMode mode = PoolMode::avg) {
  if (out_h < 1 || out_w < 1) throw ConfigError("pool output dims must be >= 1");
  if (roi.x0 > roi.x1 || roi.y0 > roi.y1 || roi.x0 < 0.0 || roi.y0 < 0.0 || roi.x1 > 1.0 ||
      roi.y1 > 1.0)
    throw ConfigError("RoI coordinates invalid");

  const int r0 = static_cast<int>(std::floor(roi.y0 * map.height));
  const int r1 = std::min(static_cast<int>(std::ceil(roi.y1 * map.height)), map.height);
  const int c0 = static_cast<int>(std::floor(roi.x0 * map.width));
  const int c1 = std::min(static_cast<int>(std::ceil(roi.x1 * map.width)), map.width);
  if (r1 <= r0 || c1 <= c0) throw ConfigError("empty RoI");

  const int h = r1 - r0, w = c1 - c0;
  FeatureMap out(map.channels, out_h, out_w);
  for (int c = 0; c < map.channels; ++c) {
    for (int i = 0; i < out_h; ++i) {
      auto [ys, ye] = detail::pool_bin(i, h, out_h);
      for (int j = 0; j < out_w; ++j) {
        auto [xs, xe] = detail::pool_bin(j, w, out_w);
        if (mode == PoolMode::avg) {
          double acc = 0.0;
          for (int y = ys; y < ye; ++y)
            for (int x = xs; x < xe; ++x) acc += map.at(c, r0 + y, c0 + x);
          out.at(c, i, j) = static_cast<float>(acc / ((ye - ys) * (xe - xs)));
        } else {
          float best = map.at(c, r0 + ys, c0 + xs);
          for (int y = ys; y < ye; ++y)
            for (int x = xs; x < xe; ++x) best = std::max(best, map.at(c, r0 + y, c0 + x));
          out.at(c, i, j) = best;
        }
      }
    }
  }
  return out;
}

// Global pool == roi_pool with the full-frame RoI; sharing one implementation
// keeps sub-RoI pooling and pooling-of-a-crop bit-identical.
inline FeatureMap adaptive_avg_pool(const FeatureMap& map, int out_h, int out_w) {
  if (out_h > map.height || out_w > map.width)
    throw ConfigError("pool output exceeds input dims");
  return roi_pool(map, RoI{0.0, 0.0, 1.0, 1.0}, out_h, out_w, PoolMode::avg);
}

}  // namespace teleqa
