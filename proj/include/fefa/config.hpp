#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include <nlohmann/json.hpp>

#include "fefa/audio.hpp"
#include "fefa/model.hpp"
#include "fefa/synth.hpp"

namespace fefa::harness {

inline constexpr int kSchemaVersion = 1;

struct TrainingParams {
  double lr = 1e-4;
  std::size_t batch_size = 8;
  std::size_t epochs = 30;
};

struct TrialParams {
  std::size_t n_target = 20;
  std::size_t n_nontarget = 200;
};

struct NoiseSweep {
  std::vector<audio::NoiseKind> distributions{audio::NoiseKind::gaussian, audio::NoiseKind::uniform};
  std::vector<double> snr_db{20.0, 50.0, 100.0};
};

/// Everything a run needs. Loaded from JSON with a versioned schema; unknown
/// keys are rejected at every level and `seed` is mandatory.
struct ExperimentConfig {
  std::uint64_t seed = 0;
  synth::CorpusSpec corpus;
  std::optional<std::filesystem::path> corpus_dir;  // read WAVs instead of synthesizing
  audio::FrameConfig frontend;
  model::BackboneConfig model;
  TrainingParams training;
  TrialParams trials;
  NoiseSweep noise;
  std::filesystem::path out_dir = "runs/default";
  unsigned threads = 0;  // embedding workers, 0 = hardware concurrency
};

ExperimentConfig config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ExperimentConfig& cfg);
ExperimentConfig load_config(const std::filesystem::path& path);

nlohmann::json frontend_to_json(const audio::FrameConfig& f);
audio::FrameConfig frontend_from_json(const nlohmann::json& j);

}  // namespace fefa::harness
