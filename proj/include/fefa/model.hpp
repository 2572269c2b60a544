#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fefa/attention.hpp"
#include "fefa/checkpoint.hpp"
#include "fefa/common.hpp"
#include "fefa/ops.hpp"
#include "fefa/optim.hpp"

namespace fefa::model {

enum class Family { vgg, resnet, seresnet };
enum class FefaMode { none, single, multi };

std::string to_string(Family f);
std::string to_string(FefaMode m);
Family parse_family(const std::string& s);
FefaMode parse_fefa_mode(const std::string& s);

/// Desk-scale backbone description.
///
/// vgg: per stage, block_counts[s] conv3x3-BN-ReLU layers then 2x2 max pool.
/// resnet: conv3x3 stem, then per stage block_counts[s] basic residual
/// blocks, the first of which has stride 2 (frequency and time halve).
/// seresnet: resnet with a squeeze-excitation gate in every block.
/// All families end in temporal average pooling and an embedding FC layer.
struct BackboneConfig {
  Family family = Family::resnet;
  std::vector<std::size_t> channel_widths{16, 32, 64};
  std::vector<std::size_t> block_counts{2, 2, 2};
  std::size_t embedding_dim = 128;
  std::size_t se_reduction = 4;
  FefaMode fefa_mode = FefaMode::none;
  bool fefa_bias = true;
  bool fefa_input_dependent = true;
  std::size_t input_bins = 257;

  void validate() const;
  friend bool operator==(const BackboneConfig&, const BackboneConfig&) = default;
};

nlohmann::json to_json(const BackboneConfig& cfg);
/// Rejects unknown keys; missing keys keep their defaults.
BackboneConfig backbone_from_json(const nlohmann::json& j);

/// True when the configs differ at most in their FEFA settings.
bool twin_architectures(const BackboneConfig& a, const BackboneConfig& b);

struct Conv {
  nn::Tensor kernels;
  nn::Conv2dOptions opts;
  nn::Tensor operator()(const nn::Tensor& x) const { return nn::conv2d(x, kernels, {}, opts); }
};

struct SqueezeExcite {
  nn::Tensor fc1;  // [C, C/r]
  nn::Tensor fc2;  // [C/r, C]
};

/// s = sigmoid(fc2(relu(fc1(gap(u))))); out[n,c,h,w] = s[n,c] * u[n,c,h,w].
nn::Tensor se_block(const nn::Tensor& u, const nn::Tensor& fc1, const nn::Tensor& fc2);

/// [N, C, F, T] -> [N, C * F].
nn::Tensor temporal_average_pool(const nn::Tensor& features);

struct ResidualBlock {
  Conv conv1;
  nn::BatchNormState bn1;
  Conv conv2;
  nn::BatchNormState bn2;
  std::optional<SqueezeExcite> se;
  std::optional<Conv> shortcut;
  std::optional<nn::BatchNormState> shortcut_bn;
};

struct VggLayer {
  Conv conv;
  nn::BatchNormState bn;
};

struct Stage {
  std::vector<ResidualBlock> blocks;  // resnet / seresnet
  std::vector<VggLayer> layers;       // vgg
  std::size_t in_bins = 0;
  std::size_t out_bins = 0;
  std::optional<std::size_t> fefa;  // index into fefa layers, applied at stage entry
};

struct ForwardResult {
  nn::Tensor embedding;  // [N, embedding_dim]
  nn::Tensor logits;     // [N, n_speakers]
};

class SpeakerModel {
 public:
  SpeakerModel(const BackboneConfig& cfg, std::size_t n_speakers, std::uint64_t seed);
  SpeakerModel(const SpeakerModel&) = delete;
  SpeakerModel& operator=(const SpeakerModel&) = delete;
  SpeakerModel(SpeakerModel&&) = default;
  SpeakerModel& operator=(SpeakerModel&&) = default;

  /// x is [N, 1, F, T] or [F, T]. Training mode uses batch statistics and
  /// updates running stats; FEFA layers record their probabilities.
  ForwardResult forward(const nn::Tensor& x, bool training);
  /// Eval-mode forward that leaves all model state untouched and records no
  /// graph. Safe to call from several threads.
  ForwardResult infer(const nn::Tensor& x) const;

  const BackboneConfig& config() const { return cfg_; }
  std::size_t n_speakers() const { return n_speakers_; }
  const nn::ParameterSet& parameters() const { return params_; }
  nn::ParameterSet& parameters() { return params_; }

  std::vector<attention::FefaLayer>& fefa_layers() { return fefa_; }
  const std::vector<attention::FefaLayer>& fefa_layers() const { return fefa_; }
  /// Layer applied to the network input, if any.
  const attention::FefaLayer* input_fefa() const;
  attention::FefaLayer* input_fefa();
  const std::vector<Stage>& stages() const { return stages_; }

  /// Copies values of every parameter whose name and shape also exist in
  /// `src`. Returns the number of copied parameters.
  std::size_t copy_matching_parameters(const SpeakerModel& src);

  nn::Checkpoint to_checkpoint() const;
  /// Loads parameter values; throws when names or shapes disagree.
  void load_parameters(const nn::Checkpoint& ckpt);

 private:
  ForwardResult run(const nn::Tensor& x, bool training, std::vector<Matrix>* fefa_probs) const;

  BackboneConfig cfg_;
  std::size_t n_speakers_;
  nn::ParameterSet params_;
  std::optional<Conv> stem_;
  std::optional<nn::BatchNormState> stem_bn_;
  std::vector<Stage> stages_;
  std::vector<attention::FefaLayer> fefa_;
  std::optional<std::size_t> input_fefa_;
  nn::Tensor emb_w_, emb_b_, cls_w_, cls_b_;
};

/// Frequency size after a 3x3 convolution with stride 2 and padding 1.
std::size_t strided_bins(std::size_t bins);
/// Frequency size after 2x2 max pooling with stride 2.
std::size_t pooled_bins(std::size_t bins);

}  // namespace fefa::model
