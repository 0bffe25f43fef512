#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "spikekit/errors.hpp"
#include "spikekit/tensor.hpp"

namespace spikekit {

/// Audio frontend settings: 16 kHz PCM -> 40-band log-Mel map of 100 frames.
struct FeatureConfig {
  int sample_rate = 16000;
  float win_ms = 30.0f;
  float hop_ms = 10.0f;
  int n_mels = 40;
  float f_min = 20.0f;
  float f_max = 4000.0f;
  int n_frames = 100;
  int fft_size = 512;
  float log_floor = 1e-10f;

  int win_samples() const { return static_cast<int>(win_ms * sample_rate / 1000.0f); }  // 480
  int hop_samples() const { return static_cast<int>(hop_ms * sample_rate / 1000.0f); }  // 160
  int n_bins() const { return fft_size / 2 + 1; }                                       // 257
};

// ---------------------------------------------------------------------------
// WAV loading (RIFF PCM16 mono 16 kHz)
// ---------------------------------------------------------------------------

namespace detail {

inline uint32_t read_u32(const unsigned char* p) {
  return static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
         (static_cast<uint32_t>(p[2]) << 16) | (static_cast<uint32_t>(p[3]) << 24);
}
inline uint16_t read_u16(const unsigned char* p) {
  return static_cast<uint16_t>(p[0] | (p[1] << 8));
}

}  // namespace detail

/// Loads a PCM16 mono 16 kHz WAV file as floats in [-1, 1] (divide by 32768).
inline std::vector<float> load_wav(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open wav file '" + path + "'");
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  if (bytes.size() < 44) throw FormatError("wav '" + path + "': truncated header");
  if (std::memcmp(bytes.data(), "RIFF", 4) != 0 || std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) {
    throw FormatError("wav '" + path + "': missing RIFF/WAVE magic");
  }

  size_t pos = 12;
  bool have_fmt = false;
  uint16_t format = 0, channels = 0, bits = 0;
  uint32_t rate = 0;
  std::vector<float> samples;
  bool have_data = false;
  while (pos + 8 <= bytes.size()) {
    const char* id = reinterpret_cast<const char*>(bytes.data() + pos);
    const uint32_t size = detail::read_u32(bytes.data() + pos + 4);
    const size_t body = pos + 8;
    if (body + size > bytes.size()) throw FormatError("wav '" + path + "': truncated chunk");
    if (std::memcmp(id, "fmt ", 4) == 0) {
      if (size < 16) throw FormatError("wav '" + path + "': short fmt chunk");
      format = detail::read_u16(bytes.data() + body);
      channels = detail::read_u16(bytes.data() + body + 2);
      rate = detail::read_u32(bytes.data() + body + 4);
      bits = detail::read_u16(bytes.data() + body + 14);
      have_fmt = true;
    } else if (std::memcmp(id, "data", 4) == 0) {
      if (!have_fmt) throw FormatError("wav '" + path + "': data before fmt");
      if (format != 1) throw FormatError("wav '" + path + "': format tag " +
                                         std::to_string(format) + ", want PCM (1)");
      if (channels != 1) throw FormatError("wav '" + path + "': channels " +
                                           std::to_string(channels) + ", want mono");
      if (bits != 16) throw FormatError("wav '" + path + "': bits " + std::to_string(bits) +
                                        ", want 16");
      if (rate != 16000) throw FormatError("wav '" + path + "': sample rate " +
                                           std::to_string(rate) + ", want 16000");
      const size_t count = size / 2;
      samples.resize(count);
      for (size_t i = 0; i < count; ++i) {
        const int16_t v = static_cast<int16_t>(
            static_cast<uint16_t>(bytes[body + 2 * i] | (bytes[body + 2 * i + 1] << 8)));
        samples[i] = static_cast<float>(v) / 32768.0f;
      }
      have_data = true;
      break;
    }
    pos = body + size + (size & 1);  // chunks are word-aligned
  }
  if (!have_data) throw FormatError("wav '" + path + "': no data chunk");
  return samples;
}

/// Writes a PCM16 mono 16 kHz WAV file (used by tools and tests).
inline void write_wav(const std::string& path, const std::vector<float>& samples,
                      int sample_rate = 16000) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write wav file '" + path + "'");
  const uint32_t data_size = static_cast<uint32_t>(samples.size() * 2);
  auto w32 = [&](uint32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); };
  auto w16 = [&](uint16_t v) { out.write(reinterpret_cast<const char*>(&v), 2); };
  out.write("RIFF", 4);
  w32(36 + data_size);
  out.write("WAVE", 4);
  out.write("fmt ", 4);
  w32(16);
  w16(1);  // PCM
  w16(1);  // mono
  w32(static_cast<uint32_t>(sample_rate));
  w32(static_cast<uint32_t>(sample_rate * 2));
  w16(2);
  w16(16);
  out.write("data", 4);
  w32(data_size);
  for (float s : samples) {
    const float c = std::max(-1.0f, std::min(1.0f, s));
    const int16_t v = static_cast<int16_t>(std::lround(c * 32767.0f));
    w16(static_cast<uint16_t>(v));
  }
}

// ---------------------------------------------------------------------------
// FFT and mel filterbank
// ---------------------------------------------------------------------------

namespace detail {

// In-place iterative radix-2 FFT over interleaved (re, im) pairs.
inline void fft_radix2(std::vector<float>& re, std::vector<float>& im) {
  const size_t n = re.size();
  for (size_t i = 1, j = 0; i < n; ++i) {
    size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) {
      std::swap(re[i], re[j]);
      std::swap(im[i], im[j]);
    }
  }
  for (size_t len = 2; len <= n; len <<= 1) {
    const double ang = -2.0 * M_PI / static_cast<double>(len);
    const float wr = static_cast<float>(std::cos(ang));
    const float wi = static_cast<float>(std::sin(ang));
    for (size_t i = 0; i < n; i += len) {
      float cr = 1.0f, ci = 0.0f;
      for (size_t k = 0; k < len / 2; ++k) {
        const size_t a = i + k, b = i + k + len / 2;
        const float xr = re[b] * cr - im[b] * ci;
        const float xi = re[b] * ci + im[b] * cr;
        re[b] = re[a] - xr;
        im[b] = im[a] - xi;
        re[a] += xr;
        im[a] += xi;
        const float ncr = cr * wr - ci * wi;
        ci = cr * wi + ci * wr;
        cr = ncr;
      }
    }
  }
}

inline float hz_to_mel(float hz) { return 2595.0f * std::log10(1.0f + hz / 700.0f); }
inline float mel_to_hz(float mel) { return 700.0f * (std::pow(10.0f, mel / 2595.0f) - 1.0f); }

}  // namespace detail

/// Triangular mel filterbank [n_mels, n_bins] on the HTK mel scale between
/// f_min and f_max. Neighboring filters overlap; bins above f_max get zero.
inline std::vector<float> mel_filterbank(const FeatureConfig& cfg) {
  const int bins = cfg.n_bins();
  std::vector<float> fb(static_cast<size_t>(cfg.n_mels) * bins, 0.0f);
  const float mel_lo = detail::hz_to_mel(cfg.f_min);
  const float mel_hi = detail::hz_to_mel(cfg.f_max);
  std::vector<float> edges(static_cast<size_t>(cfg.n_mels) + 2);
  for (int m = 0; m < cfg.n_mels + 2; ++m) {
    edges[static_cast<size_t>(m)] = detail::mel_to_hz(
        mel_lo + (mel_hi - mel_lo) * static_cast<float>(m) / static_cast<float>(cfg.n_mels + 1));
  }
  const float bin_hz = static_cast<float>(cfg.sample_rate) / static_cast<float>(cfg.fft_size);
  for (int m = 0; m < cfg.n_mels; ++m) {
    const float lo = edges[static_cast<size_t>(m)];
    const float mid = edges[static_cast<size_t>(m) + 1];
    const float hi = edges[static_cast<size_t>(m) + 2];
    for (int k = 0; k < bins; ++k) {
      const float f = bin_hz * static_cast<float>(k);
      float w = 0.0f;
      if (f > lo && f < hi) {
        w = (f <= mid) ? (f - lo) / (mid - lo) : (hi - f) / (hi - mid);
      }
      fb[static_cast<size_t>(m) * bins + k] = std::max(0.0f, w);
    }
  }
  return fb;
}

/// Center frequency (Hz) of each mel filter; used by tests to locate tones.
inline std::vector<float> mel_center_frequencies(const FeatureConfig& cfg) {
  const float mel_lo = detail::hz_to_mel(cfg.f_min);
  const float mel_hi = detail::hz_to_mel(cfg.f_max);
  std::vector<float> centers(static_cast<size_t>(cfg.n_mels));
  for (int m = 0; m < cfg.n_mels; ++m) {
    centers[static_cast<size_t>(m)] = detail::mel_to_hz(
        mel_lo +
        (mel_hi - mel_lo) * static_cast<float>(m + 1) / static_cast<float>(cfg.n_mels + 1));
  }
  return centers;
}

namespace detail {

// Pads with zeros or center-crops to exactly one second of samples.
inline std::vector<float> fit_to_second(const std::vector<float>& samples, int want) {
  if (static_cast<int>(samples.size()) == want) return samples;
  std::vector<float> out(static_cast<size_t>(want), 0.0f);
  if (static_cast<int>(samples.size()) < want) {
    std::copy(samples.begin(), samples.end(), out.begin());
  } else {
    const size_t off = (samples.size() - static_cast<size_t>(want)) / 2;
    std::copy(samples.begin() + static_cast<std::ptrdiff_t>(off),
              samples.begin() + static_cast<std::ptrdiff_t>(off) + want, out.begin());
  }
  return out;
}

}  // namespace detail

/// Log-mel map before per-band normalization; [n_frames][n_mels] row-major.
/// Centered framing with reflect padding, Hann window, power spectrum.
inline std::vector<float> log_mel_raw(const std::vector<float>& samples,
                                      const FeatureConfig& cfg) {
  if (samples.empty()) throw DataError("log_mel: empty input");
  const int win = cfg.win_samples();
  const int hop = cfg.hop_samples();
  const std::vector<float> sig = detail::fit_to_second(samples, cfg.sample_rate);
  const int n = static_cast<int>(sig.size());

  // Reflect-pad half a window on both sides, then take the first n_frames.
  const int half = win / 2;
  std::vector<float> padded(static_cast<size_t>(n + 2 * half));
  for (int i = 0; i < half; ++i) padded[static_cast<size_t>(i)] = sig[static_cast<size_t>(half - i)];
  std::copy(sig.begin(), sig.end(), padded.begin() + half);
  for (int i = 0; i < half; ++i) {
    padded[static_cast<size_t>(n + half + i)] = sig[static_cast<size_t>(n - 2 - i)];
  }

  std::vector<float> window(static_cast<size_t>(win));
  for (int i = 0; i < win; ++i) {
    window[static_cast<size_t>(i)] =
        0.5f - 0.5f * static_cast<float>(std::cos(2.0 * M_PI * i / win));
  }

  const std::vector<float> fb = mel_filterbank(cfg);
  const int bins = cfg.n_bins();
  std::vector<float> out(static_cast<size_t>(cfg.n_frames) * cfg.n_mels, 0.0f);
  std::vector<float> re(static_cast<size_t>(cfg.fft_size));
  std::vector<float> im(static_cast<size_t>(cfg.fft_size));
  std::vector<float> power(static_cast<size_t>(bins));

  for (int t = 0; t < cfg.n_frames; ++t) {
    const int start = t * hop;
    std::fill(re.begin(), re.end(), 0.0f);
    std::fill(im.begin(), im.end(), 0.0f);
    for (int i = 0; i < win; ++i) {
      re[static_cast<size_t>(i)] =
          padded[static_cast<size_t>(start + i)] * window[static_cast<size_t>(i)];
    }
    detail::fft_radix2(re, im);
    for (int k = 0; k < bins; ++k) {
      power[static_cast<size_t>(k)] = re[static_cast<size_t>(k)] * re[static_cast<size_t>(k)] +
                                      im[static_cast<size_t>(k)] * im[static_cast<size_t>(k)];
    }
    for (int m = 0; m < cfg.n_mels; ++m) {
      double acc = 0.0;
      const float* row = fb.data() + static_cast<size_t>(m) * bins;
      for (int k = 0; k < bins; ++k) acc += static_cast<double>(row[k]) * power[static_cast<size_t>(k)];
      out[static_cast<size_t>(t) * cfg.n_mels + m] =
          std::log(static_cast<float>(acc) + cfg.log_floor);
    }
  }
  return out;
}

/// Full frontend: log-mel plus per-band mean/variance normalization across
/// time. Bands with variance below 1e-12 are zeroed. Returns [1, n_frames,
/// n_mels].
inline Tensor log_mel(const std::vector<float>& samples, const FeatureConfig& cfg) {
  std::vector<float> map = log_mel_raw(samples, cfg);
  const int frames = cfg.n_frames;
  const int mels = cfg.n_mels;
  for (int m = 0; m < mels; ++m) {
    double mean = 0.0;
    for (int t = 0; t < frames; ++t) mean += map[static_cast<size_t>(t) * mels + m];
    mean /= frames;
    double var = 0.0;
    for (int t = 0; t < frames; ++t) {
      const double d = map[static_cast<size_t>(t) * mels + m] - mean;
      var += d * d;
    }
    var /= frames;
    if (var < 1e-12) {
      for (int t = 0; t < frames; ++t) map[static_cast<size_t>(t) * mels + m] = 0.0f;
    } else {
      const double inv = 1.0 / std::sqrt(var);
      for (int t = 0; t < frames; ++t) {
        auto& v = map[static_cast<size_t>(t) * mels + m];
        v = static_cast<float>((v - mean) * inv);
      }
    }
  }
  return Tensor::from_data({1, frames, mels}, std::move(map));
}

}  // namespace spikekit
