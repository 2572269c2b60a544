#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "fefa/checkpoint.hpp"
#include "fefa/common.hpp"
#include "fefa/model.hpp"
#include "fefa/optim.hpp"

namespace fefa::train {

/// One normalized spectrogram with its speaker index.
struct Example {
  Matrix features;
  int label = 0;
};

struct EpochStats {
  double mean_loss = 0.0;
  double accuracy = 0.0;  // fraction of training examples classified correctly
  std::size_t steps = 0;
};

/// Stacks same-sized feature matrices into [N, 1, F, T].
nn::Tensor stack_batch(std::span<const Example> data, std::span<const std::size_t> indices);
nn::Tensor stack_features(std::span<const Matrix> features);

/// One pass over `data` in seeded random order, one optimizer step per
/// batch of softmax cross-entropy. The last batch may be smaller.
EpochStats train_epoch(model::SpeakerModel& model, nn::Adam& opt, std::span<const Example> data,
                       std::size_t batch_size, std::uint64_t seed);

/// Eval-mode embedding of one normalized spectrogram.
std::vector<double> embed(const model::SpeakerModel& model, const Matrix& features);
/// Embeds every input, fanning out over `threads` workers (0 = hardware
/// concurrency). Output order matches input order.
std::vector<std::vector<double>> embed_all(const model::SpeakerModel& model, std::span<const Matrix> features,
                                           unsigned threads = 0);

/// Model parameters plus optimizer state and the number of finished epochs.
nn::Checkpoint training_checkpoint(const model::SpeakerModel& model, const nn::Adam& opt, std::size_t epoch);
/// Restores optimizer state written by training_checkpoint. Returns the
/// number of finished epochs.
std::size_t restore_optimizer(const nn::Checkpoint& ckpt, const model::SpeakerModel& model, nn::Adam& opt);

}  // namespace fefa::train
