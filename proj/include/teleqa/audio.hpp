// Audio front-end: STFT magnitude spectrograms and log-compressed mel
// spectrograms. All spectral math runs in double; stored values are float.
#pragma once

#include <cmath>
#include <complex>
#include <vector>

#include "teleqa/common.hpp"

namespace teleqa {

// bins x frames, row-major by bin. Linear STFT has bins = n_fft/2 + 1,
// mel has bins = n_mels.
struct Spectrogram {
  int bins = 0;
  int frames = 0;
  std::vector<float> values;

  Spectrogram() = default;
  Spectrogram(int b, int f) : bins(b), frames(f), values(static_cast<size_t>(b) * f, 0.0f) {}

  float at(int b, int f) const { return values[static_cast<size_t>(b) * frames + f]; }
  float& at(int b, int f) { return values[static_cast<size_t>(b) * frames + f]; }
};

enum class Window { hann, rect };

namespace detail {

// In-place iterative radix-2 Cooley-Tukey, forward transform, size a power of two.
inline void fft_radix2(std::vector<std::complex<double>>& a) {
  const size_t n = a.size();
  for (size_t i = 1, j = 0; i < n; ++i) {
    size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (size_t len = 2; len <= n; len <<= 1) {
    double ang = -2.0 * M_PI / static_cast<double>(len);
    std::complex<double> wlen(std::cos(ang), std::sin(ang));
    for (size_t i = 0; i < n; i += len) {
      std::complex<double> w(1.0, 0.0);
      for (size_t j = 0; j < len / 2; ++j) {
        std::complex<double> u = a[i + j];
        std::complex<double> v = a[i + j + len / 2] * w;
        a[i + j] = u + v;
        a[i + j + len / 2] = u - v;
        w *= wlen;
      }
    }
  }
}

inline void validate_stft_args(size_t n_samples, int n_fft, int hop) {
  if (n_fft < 16 || (n_fft & (n_fft - 1)) != 0)
    throw ConfigError("n_fft must be a power of two >= 16");
  if (hop <= 0 || hop > n_fft) throw ConfigError("hop must satisfy 0 < hop <= n_fft");
  if (n_samples < static_cast<size_t>(n_fft)) throw ConfigError("audio segment too short");
}

}  // namespace detail

// Magnitude spectrogram. Frame k covers samples [k*hop, k*hop + n_fft);
// frames = floor((len - n_fft)/hop) + 1. Hann window is periodic.
inline Spectrogram stft(const std::vector<float>& samples, int n_fft, int hop,
                        Window window = Window::hann) {
  detail::validate_stft_args(samples.size(), n_fft, hop);
  const int n_frames = static_cast<int>((samples.size() - n_fft) / hop) + 1;
  const int n_bins = n_fft / 2 + 1;

  std::vector<double> win(n_fft, 1.0);
  if (window == Window::hann)
    for (int i = 0; i < n_fft; ++i)
      win[i] = 0.5 * (1.0 - std::cos(2.0 * M_PI * i / n_fft));

  Spectrogram out(n_bins, n_frames);
  std::vector<std::complex<double>> buf(n_fft);
  for (int k = 0; k < n_frames; ++k) {
    const size_t base = static_cast<size_t>(k) * hop;
    for (int i = 0; i < n_fft; ++i)
      buf[i] = {static_cast<double>(samples[base + i]) * win[i], 0.0};
    detail::fft_radix2(buf);
    for (int b = 0; b < n_bins; ++b) out.at(b, k) = static_cast<float>(std::abs(buf[b]));
  }
  return out;
}

inline double hz_to_mel(double f) { return 2595.0 * std::log10(1.0 + f / 700.0); }
inline double mel_to_hz(double m) { return 700.0 * (std::pow(10.0, m / 2595.0) - 1.0); }

// Triangular filterbank on the HTK mel scale, n_mels x (n_fft/2 + 1) row-major.
// A triangle narrow enough to miss every bin center gets unit weight on the
// bin nearest its peak, so every row sums to a positive value.
inline std::vector<double> mel_filterbank(int n_fft, int n_mels, double sr) {
  if (n_fft < 16 || (n_fft & (n_fft - 1)) != 0)
    throw ConfigError("n_fft must be a power of two >= 16");
  if (n_mels < 4 || n_mels > n_fft / 2)
    throw ConfigError("n_mels must satisfy 4 <= n_mels <= n_fft/2");
  if (sr <= 0.0) throw ConfigError("sample rate must be positive");

  const int n_bins = n_fft / 2 + 1;
  const double mel_hi = hz_to_mel(sr / 2.0);
  std::vector<double> edges(n_mels + 2);
  for (int i = 0; i < n_mels + 2; ++i) edges[i] = mel_to_hz(mel_hi * i / (n_mels + 1));

  std::vector<double> fb(static_cast<size_t>(n_mels) * n_bins, 0.0);
  for (int m = 0; m < n_mels; ++m) {
    const double lo = edges[m], peak = edges[m + 1], hi = edges[m + 2];
    double row_sum = 0.0;
    for (int b = 0; b < n_bins; ++b) {
      const double f = b * sr / n_fft;
      double w = 0.0;
      if (f > lo && f < peak)
        w = (f - lo) / (peak - lo);
      else if (f >= peak && f < hi)
        w = (hi - f) / (hi - peak);
      if (f == peak) w = 1.0;
      fb[static_cast<size_t>(m) * n_bins + b] = w;
      row_sum += w;
    }
    if (row_sum == 0.0) {
      int nearest = static_cast<int>(std::llround(peak * n_fft / sr));
      nearest = std::min(std::max(nearest, 0), n_bins - 1);
      fb[static_cast<size_t>(m) * n_bins + nearest] = 1.0;
    }
  }
  return fb;
}

// log(1 + filterbank * power_spectrogram), Hann window.
inline Spectrogram mel_spectrogram(const std::vector<float>& samples, int n_fft, int hop,
                                   int n_mels, double sr) {
  auto fb = mel_filterbank(n_fft, n_mels, sr);
  Spectrogram mag = stft(samples, n_fft, hop, Window::hann);
  const int n_bins = mag.bins;

  Spectrogram out(n_mels, mag.frames);
  for (int m = 0; m < n_mels; ++m) {
    for (int k = 0; k < mag.frames; ++k) {
      double acc = 0.0;
      for (int b = 0; b < n_bins; ++b) {
        double v = mag.at(b, k);
        acc += fb[static_cast<size_t>(m) * n_bins + b] * v * v;
      }
      out.at(m, k) = static_cast<float>(std::log1p(acc));
    }
  }
  return out;
}

}  // namespace teleqa
