#pragma once

#include <complex>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "fefa/common.hpp"

namespace fefa::audio {

inline constexpr int kStandardSampleRate = 16000;

struct Waveform {
  std::vector<double> samples;
  int sample_rate = kStandardSampleRate;
};

/// per_bin standardizes each frequency row over time; global uses one mean
/// and variance for the whole matrix, keeping relative bin levels.
enum class Normalization { per_bin, global };

/// Framing and transform parameters. Defaults are the standard pipeline:
/// 25 ms frames advanced by 10 ms, 512-point FFT (257 bins).
struct FrameConfig {
  double frame_len_ms = 25.0;
  double hop_ms = 10.0;
  std::size_t nfft = 512;
  Normalization normalization = Normalization::per_bin;
};

struct Spectrogram {
  Matrix values;  // bins x frames, magnitudes
  double frame_len_ms = 0.0;
  double hop_ms = 0.0;
  int sample_rate = kStandardSampleRate;
  std::size_t nfft = 0;

  std::size_t bin_count() const { return values.rows; }
  std::size_t frame_count() const { return values.cols; }
};

enum class NoiseKind { gaussian, uniform };

struct NoiseSpec {
  NoiseKind distribution = NoiseKind::gaussian;
  double snr_db = 20.0;
};

std::string to_string(NoiseKind kind);
NoiseKind parse_noise_kind(const std::string& name);

/// Milliseconds to samples, rounded to the nearest sample.
std::size_t ms_to_samples(double ms, int sample_rate);

/// Number of full frames; trailing partial frames are dropped.
std::size_t frame_count(std::size_t n_samples, std::size_t win, std::size_t hop);

std::vector<std::vector<double>> frame_signal(const Waveform& w, double frame_len_ms, double hop_ms);

/// Symmetric Hamming window of length n.
std::vector<double> hamming_window(std::size_t n);

/// DFT coefficients 0..nfft/2 of a real frame zero-padded to nfft.
std::vector<std::complex<double>> half_spectrum(std::span<const double> frame, std::size_t nfft);

Spectrogram spectrogram(const Waveform& w, const FrameConfig& cfg = {});

/// Per-row standardization over time. Rows with variance below 1e-8 use
/// the floor, so constant rows map to zero.
Matrix normalize_spectrogram(const Matrix& values);
Matrix normalize_spectrogram(const Spectrogram& s);
Matrix normalize_global(const Matrix& values);
Matrix normalize(const Matrix& values, Normalization mode);

inline constexpr double kVarianceFloor = 1e-8;

double mean_power(std::span<const double> x);

/// Clean signal plus the scaled noise that was added to it.
struct NoisyWaveform {
  Waveform mixed;
  std::vector<double> scaled_noise;
};

/// Adds i.i.d. noise scaled against its realized power so that the output
/// SNR equals spec.snr_db exactly.
NoisyWaveform mix_noise(const Waveform& w, const NoiseSpec& spec, std::uint64_t seed);
Waveform add_noise(const Waveform& w, const NoiseSpec& spec, std::uint64_t seed);

// PCM16 mono RIFF/WAVE. Samples map to [-1, 1) via division by 32768.
Waveform read_wav(const std::filesystem::path& path);
void write_wav(const std::filesystem::path& path, const Waveform& w);
Waveform decode_wav(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> encode_wav(const Waveform& w);

/// Rounds samples to the PCM16 grid (what a write/read round trip yields).
Waveform quantize_pcm16(const Waveform& w);

// One frequency row per line, DC first, 9 significant digits.
void write_matrix_csv(const std::filesystem::path& path, const Matrix& m);
Matrix read_matrix_csv(const std::filesystem::path& path);

}  // namespace fefa::audio
