#include "fefa/audio.hpp"

#include <fftw3.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <mutex>
#include <numbers>
#include <random>
#include <sstream>
#include <stdexcept>

namespace fefa::audio {

std::string to_string(NoiseKind kind) {
  return kind == NoiseKind::gaussian ? "gaussian" : "uniform";
}

NoiseKind parse_noise_kind(const std::string& name) {
  if (name == "gaussian") return NoiseKind::gaussian;
  if (name == "uniform") return NoiseKind::uniform;
  throw std::invalid_argument("unknown noise distribution '" + name +
                              "' (expected gaussian or uniform)");
}

std::size_t ms_to_samples(double ms, int sample_rate) {
  return static_cast<std::size_t>(std::llround(ms * sample_rate / 1000.0));
}

std::size_t frame_count(std::size_t n_samples, std::size_t win, std::size_t hop) {
  if (n_samples < win) return 0;
  return (n_samples - win) / hop + 1;
}

namespace {

struct Framing {
  std::size_t win;
  std::size_t hop;
  std::size_t frames;
};

Framing check_framing(const Waveform& w, double frame_len_ms, double hop_ms) {
  if (!(frame_len_ms > 0.0)) throw std::invalid_argument("frame length must be positive");
  if (!(hop_ms > 0.0) || hop_ms > frame_len_ms)
    throw std::invalid_argument("hop must satisfy 0 < hop <= frame length");
  if (w.sample_rate <= 0) throw std::invalid_argument("sample rate must be positive");
  Framing f{ms_to_samples(frame_len_ms, w.sample_rate), ms_to_samples(hop_ms, w.sample_rate), 0};
  if (f.win == 0 || f.hop == 0) throw std::invalid_argument("frame or hop shorter than one sample");
  if (w.samples.size() < f.win) throw std::invalid_argument("utterance too short");
  f.frames = frame_count(w.samples.size(), f.win, f.hop);
  return f;
}

// FFTW planning is not thread-safe; plans are created once per size under a
// lock and executed with the new-array interface afterwards.
fftw_plan plan_for(std::size_t nfft) {
  static std::mutex mu;
  static std::map<std::size_t, fftw_plan> plans;
  std::lock_guard lock(mu);
  auto it = plans.find(nfft);
  if (it != plans.end()) return it->second;
  std::vector<double> in(nfft);
  std::vector<fftw_complex> out(nfft / 2 + 1);
  fftw_plan p = fftw_plan_dft_r2c_1d(static_cast<int>(nfft), in.data(), out.data(),
                                     FFTW_ESTIMATE | FFTW_UNALIGNED);
  if (!p) throw std::runtime_error("failed to create FFT plan");
  plans.emplace(nfft, p);
  return p;
}

}  // namespace

std::vector<std::vector<double>> frame_signal(const Waveform& w, double frame_len_ms, double hop_ms) {
  const Framing f = check_framing(w, frame_len_ms, hop_ms);
  std::vector<std::vector<double>> frames(f.frames);
  for (std::size_t k = 0; k < f.frames; ++k) {
    auto first = w.samples.begin() + static_cast<std::ptrdiff_t>(k * f.hop);
    frames[k].assign(first, first + static_cast<std::ptrdiff_t>(f.win));
  }
  return frames;
}

std::vector<double> hamming_window(std::size_t n) {
  std::vector<double> win(n, 1.0);
  if (n < 2) return win;
  for (std::size_t i = 0; i < n; ++i)
    win[i] = 0.54 - 0.46 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) /
                                    static_cast<double>(n - 1));
  return win;
}

std::vector<std::complex<double>> half_spectrum(std::span<const double> frame, std::size_t nfft) {
  if (nfft < frame.size()) throw std::invalid_argument("nfft smaller than frame length");
  std::vector<double> padded(nfft, 0.0);
  std::copy(frame.begin(), frame.end(), padded.begin());
  std::vector<std::complex<double>> out(nfft / 2 + 1);
  fftw_execute_dft_r2c(plan_for(nfft), padded.data(),
                       reinterpret_cast<fftw_complex*>(out.data()));
  return out;
}

Spectrogram spectrogram(const Waveform& w, const FrameConfig& cfg) {
  const Framing f = check_framing(w, cfg.frame_len_ms, cfg.hop_ms);
  if (cfg.nfft < f.win) throw std::invalid_argument("nfft must be at least the frame length");

  const std::size_t bins = cfg.nfft / 2 + 1;
  Spectrogram s;
  s.values = Matrix(bins, f.frames);
  s.frame_len_ms = cfg.frame_len_ms;
  s.hop_ms = cfg.hop_ms;
  s.sample_rate = w.sample_rate;
  s.nfft = cfg.nfft;

  const fftw_plan plan = plan_for(cfg.nfft);
  const std::vector<double> window = hamming_window(f.win);
  std::vector<double> padded(cfg.nfft);
  std::vector<std::complex<double>> out(bins);
  for (std::size_t t = 0; t < f.frames; ++t) {
    std::fill(padded.begin(), padded.end(), 0.0);
    const double* src = w.samples.data() + t * f.hop;
    for (std::size_t i = 0; i < f.win; ++i) padded[i] = src[i] * window[i];
    fftw_execute_dft_r2c(plan, padded.data(), reinterpret_cast<fftw_complex*>(out.data()));
    for (std::size_t i = 0; i < bins; ++i) s.values(i, t) = std::abs(out[i]);
  }
  return s;
}

Matrix normalize_spectrogram(const Matrix& values) {
  if (values.cols < 2) throw std::invalid_argument("normalization needs at least 2 frames");
  Matrix out(values.rows, values.cols);
  const double n = static_cast<double>(values.cols);
  for (std::size_t r = 0; r < values.rows; ++r) {
    const double* row = &values.data[r * values.cols];
    double mean = 0.0;
    for (std::size_t c = 0; c < values.cols; ++c) mean += row[c];
    mean /= n;
    double var = 0.0;
    for (std::size_t c = 0; c < values.cols; ++c) var += (row[c] - mean) * (row[c] - mean);
    var /= n;
    const double sd = std::sqrt(std::max(var, kVarianceFloor));
    for (std::size_t c = 0; c < values.cols; ++c) out(r, c) = (row[c] - mean) / sd;
  }
  return out;
}

Matrix normalize_spectrogram(const Spectrogram& s) { return normalize_spectrogram(s.values); }

Matrix normalize_global(const Matrix& values) {
  if (values.data.empty()) throw std::invalid_argument("normalization needs a non-empty matrix");
  const double n = static_cast<double>(values.data.size());
  double mean = 0.0;
  for (double v : values.data) mean += v;
  mean /= n;
  double var = 0.0;
  for (double v : values.data) var += (v - mean) * (v - mean);
  var /= n;
  const double sd = std::sqrt(std::max(var, kVarianceFloor));
  Matrix out(values.rows, values.cols);
  for (std::size_t i = 0; i < values.data.size(); ++i) out.data[i] = (values.data[i] - mean) / sd;
  return out;
}

Matrix normalize(const Matrix& values, Normalization mode) {
  return mode == Normalization::global ? normalize_global(values) : normalize_spectrogram(values);
}

double mean_power(std::span<const double> x) {
  if (x.empty()) return 0.0;
  double acc = 0.0;
  for (double v : x) acc += v * v;
  return acc / static_cast<double>(x.size());
}

NoisyWaveform mix_noise(const Waveform& w, const NoiseSpec& spec, std::uint64_t seed) {
  if (!std::isfinite(spec.snr_db)) throw std::invalid_argument("snr_db must be finite");
  const double signal_power = mean_power(w.samples);
  if (!(signal_power > 0.0)) throw std::invalid_argument("cannot set SNR on silent signal");

  std::mt19937_64 rng(seed);
  std::vector<double> noise(w.samples.size());
  if (spec.distribution == NoiseKind::gaussian) {
    std::normal_distribution<double> dist(0.0, 1.0);
    for (double& v : noise) v = dist(rng);
  } else {
    std::uniform_real_distribution<double> dist(-1.0, 1.0);
    for (double& v : noise) v = dist(rng);
  }
  const double noise_power = mean_power(noise);
  const double target_power = signal_power / std::pow(10.0, spec.snr_db / 10.0);
  const double alpha = std::sqrt(target_power / noise_power);

  NoisyWaveform out;
  out.mixed.sample_rate = w.sample_rate;
  out.mixed.samples.resize(w.samples.size());
  for (std::size_t i = 0; i < noise.size(); ++i) {
    noise[i] *= alpha;
    out.mixed.samples[i] = w.samples[i] + noise[i];
  }
  out.scaled_noise = std::move(noise);
  return out;
}

Waveform add_noise(const Waveform& w, const NoiseSpec& spec, std::uint64_t seed) {
  return mix_noise(w, spec, seed).mixed;
}

namespace {

std::uint32_t read_u32(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

std::uint16_t read_u16(const std::uint8_t* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}

std::int16_t to_pcm16(double x) {
  const double v = std::round(x * 32768.0);
  return static_cast<std::int16_t>(std::clamp(v, -32768.0, 32767.0));
}

}  // namespace

Waveform decode_wav(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
      std::memcmp(bytes.data() + 8, "WAVE", 4) != 0)
    throw std::runtime_error("not a RIFF/WAVE file");

  bool have_fmt = false;
  Waveform w;
  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const std::uint8_t* chunk = bytes.data() + pos;
    const std::uint32_t size = read_u32(chunk + 4);
    const std::size_t body = pos + 8;
    if (body + size > bytes.size()) throw std::runtime_error("truncated WAV chunk");
    if (std::memcmp(chunk, "fmt ", 4) == 0) {
      if (size < 16) throw std::runtime_error("malformed WAV fmt chunk");
      const std::uint16_t format = read_u16(bytes.data() + body);
      const std::uint16_t channels = read_u16(bytes.data() + body + 2);
      const std::uint32_t rate = read_u32(bytes.data() + body + 4);
      const std::uint16_t bits = read_u16(bytes.data() + body + 14);
      if (format != 1)
        throw std::runtime_error("unsupported WAV encoding (format tag " + std::to_string(format) +
                                 "); only PCM16 mono is supported");
      if (channels != 1)
        throw std::runtime_error("unsupported WAV channel count " + std::to_string(channels) +
                                 "; only mono is supported");
      if (bits != 16)
        throw std::runtime_error("unsupported WAV sample width " + std::to_string(bits) +
                                 " bits; only PCM16 is supported");
      w.sample_rate = static_cast<int>(rate);
      have_fmt = true;
    } else if (std::memcmp(chunk, "data", 4) == 0) {
      if (!have_fmt) throw std::runtime_error("WAV data chunk precedes fmt chunk");
      const std::size_t n = size / 2;
      w.samples.resize(n);
      for (std::size_t i = 0; i < n; ++i) {
        const auto raw = static_cast<std::int16_t>(read_u16(bytes.data() + body + 2 * i));
        w.samples[i] = static_cast<double>(raw) / 32768.0;
      }
      return w;
    }
    pos = body + size + (size & 1u);
  }
  throw std::runtime_error(have_fmt ? "WAV file has no data chunk" : "WAV file has no fmt chunk");
}

std::vector<std::uint8_t> encode_wav(const Waveform& w) {
  const auto data_bytes = static_cast<std::uint32_t>(w.samples.size() * 2);
  std::vector<std::uint8_t> out;
  out.reserve(44 + data_bytes);
  out.insert(out.end(), {'R', 'I', 'F', 'F'});
  put_u32(out, 36 + data_bytes);
  out.insert(out.end(), {'W', 'A', 'V', 'E', 'f', 'm', 't', ' '});
  put_u32(out, 16);
  put_u16(out, 1);
  put_u16(out, 1);
  put_u32(out, static_cast<std::uint32_t>(w.sample_rate));
  put_u32(out, static_cast<std::uint32_t>(w.sample_rate) * 2);
  put_u16(out, 2);
  put_u16(out, 16);
  out.insert(out.end(), {'d', 'a', 't', 'a'});
  put_u32(out, data_bytes);
  for (double x : w.samples) put_u16(out, static_cast<std::uint16_t>(to_pcm16(x)));
  return out;
}

Waveform read_wav(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open WAV file " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return decode_wav(bytes);
  } catch (const std::runtime_error& e) {
    throw std::runtime_error(path.string() + ": " + e.what());
  }
}

void write_wav(const std::filesystem::path& path, const Waveform& w) {
  const auto bytes = encode_wav(w);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write WAV file " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

Waveform quantize_pcm16(const Waveform& w) {
  Waveform q{std::vector<double>(w.samples.size()), w.sample_rate};
  for (std::size_t i = 0; i < w.samples.size(); ++i)
    q.samples[i] = static_cast<double>(to_pcm16(w.samples[i])) / 32768.0;
  return q;
}

void write_matrix_csv(const std::filesystem::path& path, const Matrix& m) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write CSV " + path.string());
  for (std::size_t r = 0; r < m.rows; ++r) {
    for (std::size_t c = 0; c < m.cols; ++c) {
      if (c) out << ',';
      out << format_double(m(r, c), 9);
    }
    out << '\n';
  }
}

Matrix read_matrix_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open CSV " + path.string());
  Matrix m;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) row.push_back(std::stod(cell));
    if (m.rows == 0) m.cols = row.size();
    if (row.size() != m.cols) throw std::runtime_error("ragged CSV row in " + path.string());
    m.data.insert(m.data.end(), row.begin(), row.end());
    ++m.rows;
  }
  return m;
}

}  // namespace fefa::audio
