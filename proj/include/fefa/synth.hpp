#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fefa/audio.hpp"

// Harmonic-plus-formant speaker synthesis. Speaker identity lives in the
// fundamental and the formant curve; utterance variability comes from pitch
// drift, partial phases and a slow amplitude modulation.
namespace fefa::synth {

struct Formant {
  double center_hz;
  double bandwidth_hz;
  double gain;
};

struct SpeakerProfile {
  double f0 = 120.0;
  std::vector<Formant> formants;
  double rolloff_db_per_octave = -6.0;
  double jitter = 0.0;  // relative pitch drift amplitude

  void validate(int sample_rate = audio::kStandardSampleRate) const;
};

/// f0 ~ U[80, 300] Hz, three formants inside [300, 3500] Hz.
SpeakerProfile sample_profile(std::uint64_t speaker_seed);

/// Resonance curve: sum of Lorentzian peaks plus a small floor.
double formant_response(const SpeakerProfile& p, double hz);
/// Nominal amplitude of partial k >= 1 before peak normalization.
double harmonic_amplitude(const SpeakerProfile& p, std::size_t k);

inline constexpr double kPeakLevel = 0.5;

/// Samples are quantized to PCM16, so writing and re-reading a WAV
/// reproduces them exactly.
audio::Waveform synth_utterance(const SpeakerProfile& profile, double duration_s, std::uint64_t utt_seed,
                                int sample_rate = audio::kStandardSampleRate);

struct Utterance {
  std::string speaker_id;
  std::string utt_id;
  int speaker_index = 0;
  audio::Waveform wave;
};

struct Corpus {
  std::vector<SpeakerProfile> profiles;
  std::vector<std::string> speaker_ids;
  std::vector<Utterance> train;
  std::vector<Utterance> test;
};

struct CorpusSpec {
  std::size_t n_speakers = 20;
  std::size_t utts_per_speaker = 10;
  double duration_s = 1.0;
  double train_fraction = 0.8;
  int sample_rate = audio::kStandardSampleRate;
};

/// The first round(train_fraction * utts_per_speaker) utterances of each
/// speaker go to the training split, the rest to the test split.
Corpus build_corpus(const CorpusSpec& spec, std::uint64_t master_seed);

/// Writes <dir>/wav/<utt_id>.wav and <dir>/manifest.json.
nlohmann::json write_corpus(const Corpus& corpus, const std::filesystem::path& dir);
/// Reads a corpus written by write_corpus (profiles are not stored).
Corpus read_corpus(const std::filesystem::path& dir);

}  // namespace fefa::synth
