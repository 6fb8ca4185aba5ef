// Audiovisual stream container: in-memory types, directory-container I/O,
// synthetic stream generation with injected distortions, and packetization
// into per-timestep units.
//
// Container layout (all little-endian):
//   manifest.json  keys: width, height, fps, n_frames, sample_rate (or null),
//                  audio_n_samples
//   frames.f32     float32, frame-major, planar R,G,B per frame
//   audio.f32      optional float32 mono
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <utility>
#include <vector>

#include <json.hpp>

#include "teleqa/common.hpp"

namespace teleqa {

// One video frame, pixels in [0,1], planar RGB: data[(c*height + y)*width + x].
struct Frame {
  int height = 0;
  int width = 0;
  std::vector<float> data;

  Frame() = default;
  Frame(int h, int w) : height(h), width(w), data(static_cast<size_t>(3) * h * w, 0.0f) {}

  float at(int c, int y, int x) const {
    return data[(static_cast<size_t>(c) * height + y) * width + x];
  }
  float& at(int c, int y, int x) {
    return data[(static_cast<size_t>(c) * height + y) * width + x];
  }
};

// Exactly clip_len consecutive frames from the source stream.
struct Clip {
  std::vector<Frame> frames;
  int64_t first_step = 0;  // source index of frames.front()
};

struct AudioSegment {
  std::vector<float> samples;
  double sample_rate = 0.0;
  double start_time = 0.0;  // seconds
};

struct Stream {
  int width = 0;
  int height = 0;
  double fps = 0.0;
  std::vector<Frame> frames;
  std::vector<float> audio;  // mono, amplitudes in [-1,1]; empty when absent
  double sample_rate = 0.0;  // 0 when audio absent

  bool has_audio() const { return !audio.empty(); }
  double duration() const { return fps > 0 ? static_cast<double>(frames.size()) / fps : 0.0; }
};

// Per-timestep unit of delivery. At least one field is present; a clip rides
// on step t only when (t+1) is a multiple of the clip length.
struct StreamPacket {
  int64_t step = 0;
  std::optional<Frame> frame;
  std::optional<Clip> clip;
  std::optional<AudioSegment> audio;
};

enum class DistortionKind { none, blur, blocking, gaussian_noise, audio_hum, audio_clipping };

struct DistortionSpec {
  DistortionKind kind = DistortionKind::none;
  double severity = 0.0;  // in [0,1]
  int64_t onset_step = 0;
};

struct SynthSpec {
  int width = 64;
  int height = 64;
  double fps = 4.0;
  int n_frames = 16;
  double sample_rate = 0.0;  // 0 => no audio track
  std::vector<DistortionSpec> distortions;
};

namespace detail {

inline void validate_stream(const Stream& s) {
  if (s.width < 8 || s.height < 8) throw ConfigError("stream dimensions below 8x8");
  if (s.fps <= 0.0) throw ConfigError("fps must be positive");
  for (const auto& f : s.frames) {
    if (f.width != s.width || f.height != s.height) throw ConfigError("frame dimension mismatch");
    for (float v : f.data) {
      if (!std::isfinite(v)) throw IoError("non-finite pixel value");
      if (v < 0.0f || v > 1.0f) throw IoError("pixel value outside [0,1]");
    }
  }
  if (s.has_audio()) {
    if (s.sample_rate <= 0.0) throw ConfigError("audio present but sample_rate not positive");
    for (float v : s.audio) {
      if (!std::isfinite(v)) throw IoError("non-finite audio sample");
      if (v < -1.0f || v > 1.0f) throw IoError("audio sample outside [-1,1]");
    }
    double audio_dur = static_cast<double>(s.audio.size()) / s.sample_rate;
    if (std::abs(audio_dur - s.duration()) > 1.0 / s.fps + 1e-9)
      throw ConfigError("audio duration differs from video by more than one frame period");
  }
}

}  // namespace detail

inline void store_stream(const Stream& s, const std::filesystem::path& dir) {
  detail::validate_stream(s);
  std::filesystem::create_directories(dir);

  nlohmann::json manifest;
  manifest["width"] = s.width;
  manifest["height"] = s.height;
  manifest["fps"] = s.fps;
  manifest["n_frames"] = s.frames.size();
  if (s.has_audio()) {
    manifest["sample_rate"] = s.sample_rate;
    manifest["audio_n_samples"] = s.audio.size();
  } else {
    manifest["sample_rate"] = nullptr;
    manifest["audio_n_samples"] = 0;
  }
  std::ofstream mf(dir / "manifest.json", std::ios::trunc);
  if (!mf) throw IoError("cannot write manifest: " + (dir / "manifest.json").string());
  mf << manifest.dump(2) << "\n";
  mf.close();

  std::vector<float> pixels;
  pixels.reserve(s.frames.size() * 3 * s.height * s.width);
  for (const auto& f : s.frames) pixels.insert(pixels.end(), f.data.begin(), f.data.end());
  io::write_f32_file((dir / "frames.f32").string(), pixels);

  if (s.has_audio()) {
    io::write_f32_file((dir / "audio.f32").string(), s.audio);
  } else {
    std::filesystem::remove(dir / "audio.f32");
  }
}

inline Stream load_stream(const std::filesystem::path& dir) {
  auto manifest_path = dir / "manifest.json";
  std::ifstream mf(manifest_path);
  if (!mf) throw IoError("missing file: " + manifest_path.string());
  nlohmann::json manifest;
  try {
    mf >> manifest;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("invalid manifest: " + std::string(e.what()));
  }

  Stream s;
  try {
    s.width = manifest.at("width").get<int>();
    s.height = manifest.at("height").get<int>();
    s.fps = manifest.at("fps").get<double>();
    const auto& sr = manifest.at("sample_rate");
    s.sample_rate = sr.is_null() ? 0.0 : sr.get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw IoError("invalid manifest: " + std::string(e.what()));
  }
  auto n_frames = manifest.at("n_frames").get<size_t>();
  auto audio_n = manifest.at("audio_n_samples").get<size_t>();

  auto pixels = io::read_f32_file((dir / "frames.f32").string());
  size_t frame_floats = static_cast<size_t>(3) * s.height * s.width;
  if (pixels.size() != n_frames * frame_floats)
    throw IoError("payload length mismatch: frames.f32 holds " + std::to_string(pixels.size()) +
                  " floats, manifest implies " + std::to_string(n_frames * frame_floats));
  s.frames.reserve(n_frames);
  for (size_t i = 0; i < n_frames; ++i) {
    Frame f(s.height, s.width);
    std::copy_n(pixels.begin() + static_cast<ptrdiff_t>(i * frame_floats), frame_floats, f.data.begin());
    s.frames.push_back(std::move(f));
  }

  if (audio_n > 0) {
    s.audio = io::read_f32_file((dir / "audio.f32").string());
    if (s.audio.size() != audio_n)
      throw IoError("payload length mismatch: audio.f32 holds " + std::to_string(s.audio.size()) +
                    " samples, manifest declares " + std::to_string(audio_n));
  }

  detail::validate_stream(s);
  return s;
}

namespace detail {

inline Frame box_blur3(const Frame& f) {
  Frame out(f.height, f.width);
  for (int c = 0; c < 3; ++c) {
    for (int y = 0; y < f.height; ++y) {
      for (int x = 0; x < f.width; ++x) {
        double sum = 0.0;
        int n = 0;
        for (int dy = -1; dy <= 1; ++dy) {
          for (int dx = -1; dx <= 1; ++dx) {
            int yy = y + dy, xx = x + dx;
            if (yy < 0 || yy >= f.height || xx < 0 || xx >= f.width) continue;
            sum += f.at(c, yy, xx);
            ++n;
          }
        }
        out.at(c, y, x) = static_cast<float>(sum / n);
      }
    }
  }
  return out;
}

inline Frame block_mean(const Frame& f, int block) {
  Frame out(f.height, f.width);
  for (int c = 0; c < 3; ++c) {
    for (int by = 0; by < f.height; by += block) {
      for (int bx = 0; bx < f.width; bx += block) {
        int y1 = std::min(by + block, f.height);
        int x1 = std::min(bx + block, f.width);
        double sum = 0.0;
        for (int y = by; y < y1; ++y)
          for (int x = bx; x < x1; ++x) sum += f.at(c, y, x);
        float mean = static_cast<float>(sum / ((y1 - by) * (x1 - bx)));
        for (int y = by; y < y1; ++y)
          for (int x = bx; x < x1; ++x) out.at(c, y, x) = mean;
      }
    }
  }
  return out;
}

}  // namespace detail

// Deterministic synthetic stream with a known quality target. Ground truth is
// an affine map of the worst injected severity: mos = 5 - 4 * max(severity),
// clamped to [1,5]; the "none" kind contributes nothing.
inline std::pair<Stream, double> synth_stream(const SynthSpec& spec, uint64_t seed) {
  if (spec.n_frames < 1) throw ConfigError("synth spec requires n_frames >= 1");
  if (spec.width < 8 || spec.height < 8) throw ConfigError("synth spec dimensions below 8x8");
  if (spec.fps <= 0.0) throw ConfigError("synth spec fps must be positive");
  for (const auto& d : spec.distortions) {
    if (d.severity < 0.0 || d.severity > 1.0) throw ConfigError("distortion severity outside [0,1]");
    if (d.onset_step < 0) throw ConfigError("distortion onset_step negative");
  }

  Rng rng(seed);
  Stream s;
  s.width = spec.width;
  s.height = spec.height;
  s.fps = spec.fps;
  s.sample_rate = spec.sample_rate;

  // Scene parameters drawn once so content is coherent across frames. Spatial
  // and spectral layouts vary by phase and position; the frequency bands stay
  // narrow so quality, not scene identity, dominates feature variance.
  double fx1 = rng.uniform(3.6, 4.4), fy1 = rng.uniform(3.6, 4.4), ph1 = rng.uniform(0.0, 2 * M_PI);
  double fx2 = rng.uniform(6.6, 7.4), fy2 = rng.uniform(6.6, 7.4), ph2 = rng.uniform(0.0, 2 * M_PI);
  double blob_phase = rng.uniform(0.0, 2 * M_PI);
  double tone_freq[3] = {rng.uniform(300.0, 400.0), rng.uniform(600.0, 750.0), rng.uniform(1000.0, 1200.0)};
  double tone_phase[3] = {rng.uniform(0.0, 2 * M_PI), rng.uniform(0.0, 2 * M_PI), rng.uniform(0.0, 2 * M_PI)};

  s.frames.reserve(spec.n_frames);
  for (int t = 0; t < spec.n_frames; ++t) {
    Frame f(spec.height, spec.width);
    double bx = 0.5 + 0.35 * std::sin(0.25 * t + blob_phase);
    double by = 0.5 + 0.35 * std::cos(0.17 * t + blob_phase);
    for (int y = 0; y < spec.height; ++y) {
      for (int x = 0; x < spec.width; ++x) {
        double u = static_cast<double>(x) / (spec.width - 1);
        double v = static_cast<double>(y) / (spec.height - 1);
        double g1 = std::sin(2 * M_PI * (fx1 * u + fy1 * v) + ph1 + 0.15 * t);
        double g2 = std::sin(2 * M_PI * (fx2 * u - fy2 * v) + ph2 - 0.11 * t);
        double blob = std::exp(-((u - bx) * (u - bx) + (v - by) * (v - by)) / 0.02);
        double texture = 0.08 * (rng.uniform01() - 0.5);
        f.at(0, y, x) = static_cast<float>(clamp(0.45 + 0.20 * g1 + 0.16 * blob + texture, 0.0, 1.0));
        f.at(1, y, x) = static_cast<float>(clamp(0.45 + 0.14 * g1 + 0.10 * g2 + texture, 0.0, 1.0));
        f.at(2, y, x) = static_cast<float>(clamp(0.45 + 0.18 * g2 + 0.10 * blob + texture, 0.0, 1.0));
      }
    }
    s.frames.push_back(std::move(f));
  }

  if (spec.sample_rate > 0.0) {
    auto n_samples = static_cast<size_t>(std::llround(spec.n_frames / spec.fps * spec.sample_rate));
    s.audio.resize(n_samples);
    for (size_t i = 0; i < n_samples; ++i) {
      double tau = static_cast<double>(i) / spec.sample_rate;
      double v = 0.0;
      v += 0.25 * std::sin(2 * M_PI * tone_freq[0] * tau + tone_phase[0]);
      v += 0.15 * std::sin(2 * M_PI * tone_freq[1] * tau + tone_phase[1]);
      v += 0.10 * std::sin(2 * M_PI * tone_freq[2] * tau + tone_phase[2]);
      v += 0.02 * (rng.uniform01() - 0.5);
      s.audio[i] = static_cast<float>(v);
    }
  }

  double max_severity = 0.0;
  for (const auto& d : spec.distortions) {
    if (d.kind == DistortionKind::none) continue;
    max_severity = std::max(max_severity, d.severity);
    double sev = d.severity;
    switch (d.kind) {
      case DistortionKind::blur: {
        for (int t = static_cast<int>(d.onset_step); t < spec.n_frames; ++t) {
          Frame blurred = detail::box_blur3(detail::box_blur3(s.frames[t]));
          for (size_t i = 0; i < blurred.data.size(); ++i)
            s.frames[t].data[i] = static_cast<float>((1.0 - sev) * s.frames[t].data[i] + sev * blurred.data[i]);
        }
        break;
      }
      case DistortionKind::blocking: {
        // Packet-loss style corruption: severity sets the footprint of a
        // heavily block-quantized region at a random position; pixels outside
        // the region stay intact, so the damage is spatially concentrated.
        double frac = clamp(0.05 + 0.75 * sev, 0.0, 1.0);
        int rw = std::max(8, static_cast<int>(std::lround(spec.width * std::sqrt(frac))));
        int rh = std::max(8, static_cast<int>(std::lround(spec.height * std::sqrt(frac))));
        rw = std::min(rw, spec.width);
        rh = std::min(rh, spec.height);
        int x0 = static_cast<int>(rng.uniform(0.0, static_cast<double>(spec.width - rw) + 0.999));
        int y0 = static_cast<int>(rng.uniform(0.0, static_cast<double>(spec.height - rh) + 0.999));
        x0 = std::min(x0, spec.width - rw);
        y0 = std::min(y0, spec.height - rh);
        for (int t = static_cast<int>(d.onset_step); t < spec.n_frames; ++t) {
          Frame blocked = detail::block_mean(s.frames[t], 8);
          for (int c = 0; c < 3; ++c) {
            for (int y = y0; y < y0 + rh; ++y) {
              for (int x = x0; x < x0 + rw; ++x) {
                float& px = s.frames[t].at(c, y, x);
                px = static_cast<float>(0.1 * px + 0.9 * blocked.at(c, y, x));
              }
            }
          }
        }
        break;
      }
      case DistortionKind::gaussian_noise: {
        for (int t = static_cast<int>(d.onset_step); t < spec.n_frames; ++t) {
          for (auto& px : s.frames[t].data)
            px = static_cast<float>(clamp(px + 0.25 * sev * rng.normal(), 0.0, 1.0));
        }
        break;
      }
      case DistortionKind::audio_hum: {
        if (!s.has_audio()) break;
        double onset_time = d.onset_step / spec.fps;
        for (size_t i = 0; i < s.audio.size(); ++i) {
          double tau = static_cast<double>(i) / spec.sample_rate;
          if (tau < onset_time) continue;
          double v = s.audio[i] + 0.35 * sev * std::sin(2 * M_PI * 60.0 * tau);
          s.audio[i] = static_cast<float>(clamp(v, -1.0, 1.0));
        }
        break;
      }
      case DistortionKind::audio_clipping: {
        if (!s.has_audio()) break;
        double onset_time = d.onset_step / spec.fps;
        double gain = 1.0 + 2.5 * sev;
        double threshold = 1.0 - 0.85 * sev;
        for (size_t i = 0; i < s.audio.size(); ++i) {
          double tau = static_cast<double>(i) / spec.sample_rate;
          if (tau < onset_time) continue;
          s.audio[i] = static_cast<float>(clamp(s.audio[i] * gain, -threshold, threshold));
        }
        break;
      }
      case DistortionKind::none:
        break;
    }
  }

  double mos = clamp(5.0 - 4.0 * max_severity, 1.0, 5.0);
  return {std::move(s), mos};
}

// Splits a stream into per-timestep packets: one packet per frame index.
// Packet t carries a clip iff (t+1) % clip_len == 0, composed of frames
// t-clip_len+1 .. t; the trailing partial clip is dropped. Audio samples are
// attached by display interval: packet t holds samples whose timestamps fall
// in [end - window, end) where end = (t+1)/fps. audio_window <= 0 selects one
// frame period, i.e. exactly the display interval.
inline std::vector<StreamPacket> packetize(const Stream& stream, int clip_len,
                                           double audio_window = 0.0) {
  if (clip_len < 2) throw ConfigError("clip_len must be >= 2");
  double window = audio_window > 0.0 ? audio_window : 1.0 / stream.fps;

  std::vector<StreamPacket> packets;
  packets.reserve(stream.frames.size());
  for (size_t t = 0; t < stream.frames.size(); ++t) {
    StreamPacket p;
    p.step = static_cast<int64_t>(t);
    p.frame = stream.frames[t];
    if ((t + 1) % static_cast<size_t>(clip_len) == 0) {
      Clip clip;
      clip.first_step = static_cast<int64_t>(t) - clip_len + 1;
      clip.frames.assign(stream.frames.begin() + static_cast<ptrdiff_t>(t) - clip_len + 1,
                         stream.frames.begin() + static_cast<ptrdiff_t>(t) + 1);
      p.clip = std::move(clip);
    }
    if (stream.has_audio()) {
      double end_time = (static_cast<double>(t) + 1.0) / stream.fps;
      double start_time = end_time - window;
      auto s0 = static_cast<int64_t>(std::ceil(start_time * stream.sample_rate - 1e-9));
      auto s1 = static_cast<int64_t>(std::ceil(end_time * stream.sample_rate - 1e-9));
      s0 = std::max<int64_t>(s0, 0);
      s1 = std::min<int64_t>(s1, static_cast<int64_t>(stream.audio.size()));
      if (s1 > s0) {
        AudioSegment seg;
        seg.sample_rate = stream.sample_rate;
        seg.start_time = static_cast<double>(s0) / stream.sample_rate;
        seg.samples.assign(stream.audio.begin() + s0, stream.audio.begin() + s1);
        p.audio = std::move(seg);
      }
    }
    packets.push_back(std::move(p));
  }
  return packets;
}

}  // namespace teleqa
