#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "fefa/common.hpp"
#include "fefa/optim.hpp"
#include "fefa/tensor.hpp"

// Fine-grained early frequency attention.
//
// Each frequency bin i of a time-frequency map X gets a probability
//
//   p = softmax(logits),  logit_i = W_i * xbar_i + b_i,
//
// where xbar is X averaged over time (and channels, for hidden maps). The
// kernel is locally connected: bin i only sees its own pooled value through
// its private weight W_i. The attended map is X'[i, t] = p_i * X[i, t].
// With `input_dependent = false` the logits reduce to W_i (+ b_i) and ignore
// the input.
namespace fefa::attention {

struct FefaOptions {
  bool bias = true;
  bool input_dependent = true;
};

/// Per-bin probabilities and the attention map m_i = p_i * xbar_i.
struct AttentionMap {
  std::vector<double> p;
  std::vector<double> m;
};

// Vector-level building blocks.

std::vector<double> pool_time(const Matrix& x);
std::vector<double> bin_logits(std::span<const double> pooled, std::span<const double> weight,
                               std::span<const double> bias, bool input_dependent = true);
std::vector<double> softmax_bins(std::span<const double> logits);

// Differentiable building blocks over batched maps [N, C, F, T].

/// [N, C, F, T] -> [N, F], mean over channels and time.
nn::Tensor pool_channels_time(const nn::Tensor& x);
/// pooled [N, F] -> logits [N, F]. `bias` may be undefined.
nn::Tensor bin_logits(const nn::Tensor& pooled, const nn::Tensor& weight, const nn::Tensor& bias,
                      bool input_dependent);
/// Softmax over the last axis of [N, F].
nn::Tensor softmax_bins(const nn::Tensor& logits);
/// x[n, c, i, t] * e_{n,i} / S_n with e = exp(logit - max), S = sum(e): the
/// softmax of `logits` broadcast over channels and time.
nn::Tensor apply_bin_attention(const nn::Tensor& x, const nn::Tensor& logits);

class FefaLayer {
 public:
  /// Registers `<prefix>.weight` (and `<prefix>.bias`) of length `bins`,
  /// zero-initialized, so an untrained layer attends uniformly.
  FefaLayer(nn::ParameterSet& params, const std::string& prefix, std::size_t bins, FefaOptions opts = {});
  /// Standalone layer with its own parameter storage.
  explicit FefaLayer(std::size_t bins, FefaOptions opts = {});

  std::size_t bins() const { return bins_; }
  const FefaOptions& options() const { return opts_; }
  std::size_t parameter_count() const { return bins_ * (opts_.bias ? 2 : 1); }

  nn::Tensor& weight() { return weight_; }
  nn::Tensor& bias() { return bias_; }
  const nn::Tensor& weight() const { return weight_; }
  const nn::Tensor& bias() const { return bias_; }

  /// x is [N, C, F, T] or [F, T]. Records the probabilities of the batch in
  /// last_p() (one row per example).
  nn::Tensor forward(const nn::Tensor& x);
  /// Same result without touching layer state; probabilities go to `p_out`
  /// when non-null. Safe to call concurrently with frozen parameters.
  nn::Tensor forward(const nn::Tensor& x, Matrix* p_out) const;

  /// Probabilities of example `n` from the most recent recording forward.
  std::span<const double> last_p(std::size_t n = 0) const;
  const Matrix& last_p_matrix() const { return last_p_; }
  void record_probabilities(Matrix p) { last_p_ = std::move(p); }

  AttentionMap attention_map(const Matrix& x) const;

 private:
  std::size_t bins_;
  FefaOptions opts_;
  nn::ParameterSet own_params_;
  nn::Tensor weight_;
  nn::Tensor bias_;
  Matrix last_p_;
};

/// Single-utterance attention on an F x T matrix.
Matrix fefa_forward(const Matrix& x, FefaLayer& layer);
/// Hidden map [C, F', T]; pooling covers channels and time.
nn::Tensor fefa_forward_hidden(const nn::Tensor& h, FefaLayer& layer);

/// Columns: bin_index, center_frequency_hz, p, m.
void write_attention_csv(const std::filesystem::path& path, const AttentionMap& map, int sample_rate,
                         std::size_t nfft);
AttentionMap read_attention_csv(const std::filesystem::path& path);

}  // namespace fefa::attention
