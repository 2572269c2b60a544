#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "fefa/audio.hpp"
#include "fefa/config.hpp"
#include "fefa/model.hpp"
#include "fefa/synth.hpp"
#include "fefa/train.hpp"
#include "fefa/verify.hpp"

namespace fefa::harness {

/// Loads the corpus from cfg.corpus_dir, or synthesizes it from the corpus
/// seed stream.
synth::Corpus load_or_build_corpus(const ExperimentConfig& cfg);

/// Normalized spectrogram of one waveform, optionally with noise injected
/// before the transform.
Matrix features_for(const audio::Waveform& w, const audio::FrameConfig& frontend,
                    const std::optional<audio::NoiseSpec>& noise = std::nullopt, std::uint64_t noise_seed = 0);

std::vector<train::Example> training_examples(const synth::Corpus& corpus, const audio::FrameConfig& frontend);

/// Writes the corpus WAVs and manifest to `out`.
nlohmann::json cmd_synth_corpus(const ExperimentConfig& cfg, const std::filesystem::path& out);

struct TrainResult {
  std::filesystem::path checkpoint_dir;
  std::vector<train::EpochStats> history;
};

/// Trains cfg.training.epochs epochs, writing <out>/checkpoint after every
/// epoch together with <out>/train_log.jsonl. With `resume`, continues from
/// that checkpoint's epoch and optimizer state.
TrainResult cmd_train(const ExperimentConfig& cfg, const std::filesystem::path& out,
                      const std::optional<std::filesystem::path>& resume = std::nullopt);

/// A trained model together with the front-end it was trained with.
struct LoadedModel {
  model::SpeakerModel model;
  audio::FrameConfig frontend;
};
LoadedModel load_model(const std::filesystem::path& checkpoint_dir);

struct EvalRow {
  std::string distribution;  // "clean" or a noise kind
  std::optional<double> snr_db;
  double eer = 0.0;
  double threshold = 0.0;
  std::string scores_file;
};

std::string condition_name(const std::optional<audio::NoiseSpec>& noise);

/// Seed used to draw the noise added to test utterance `utt_index` under
/// one noise condition; shared by every model evaluated on that condition.
std::uint64_t noise_seed(std::uint64_t master, const audio::NoiseSpec& noise, std::size_t utt_index);

/// Embeds the test split, scores the trial list and computes the EER for
/// each condition. Without `noise` the conditions are clean plus the
/// configured sweep. Writes trials.txt, scores_<condition>.csv, eer.json.
std::vector<EvalRow> cmd_evaluate(const ExperimentConfig& cfg, const std::filesystem::path& checkpoint_dir,
                                  const std::filesystem::path& out,
                                  const std::optional<audio::NoiseSpec>& noise = std::nullopt);

struct RobustnessRow {
  std::string model;
  std::string distribution;
  std::optional<double> snr_db;  // empty = clean
  double eer = 0.0;
};

/// Evaluates named twin checkpoints on clean and every noisy condition.
/// Writes robustness.csv (model, distribution, snr_db, eer) and
/// robustness_summary.json with the clean-to-lowest-SNR degradation.
std::vector<RobustnessRow> cmd_robustness(const ExperimentConfig& cfg,
                                          const std::vector<std::pair<std::string, std::filesystem::path>>& checkpoints,
                                          const std::filesystem::path& out);

struct AttentionExport {
  attention::AttentionMap map;
  Matrix spectrogram;  // normalized input of the FEFA layer
};

/// Writes attention.csv and spectrogram.csv for the model's input FEFA layer.
AttentionExport cmd_export_attention(const std::filesystem::path& checkpoint_dir, const std::filesystem::path& wav,
                                     const std::filesystem::path& out,
                                     const std::optional<audio::NoiseSpec>& noise = std::nullopt,
                                     std::uint64_t seed = 0);

}  // namespace fefa::harness
