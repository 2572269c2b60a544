#pragma once

#include <span>

#include "fefa/tensor.hpp"

namespace fefa::nn {

// Elementwise and reductions.
Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor reshape(const Tensor& a, Shape shape);

Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);

struct Conv2dOptions {
  std::size_t stride = 1;
  std::size_t padding = 0;
};

/// Cross-correlation. Input [N, C_in, H, W] or [C_in, H, W]; kernels
/// [C_out, C_in, kH, kW]; bias [C_out] or undefined. Output keeps the input
/// rank with H' = (H + 2p - kH)/s + 1.
Tensor conv2d(const Tensor& input, const Tensor& kernels, const Tensor& bias = {},
              Conv2dOptions opts = {});

/// Non-overlapping-or-strided max pooling without padding; trailing rows and
/// columns that do not fill a window are dropped.
Tensor max_pool2d(const Tensor& input, std::size_t kernel, std::size_t stride);

/// [N, C, H, W] -> [N, C], mean over H and W.
Tensor global_avg_pool(const Tensor& input);

/// x [N, in] times weight [in, out], plus bias [out] when defined.
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias = {});

struct BatchNormState {
  Tensor gamma;         // [C], trainable
  Tensor beta;          // [C], trainable
  Tensor running_mean;  // [C], buffer
  Tensor running_var;   // [C], buffer
};

inline constexpr double kBatchNormMomentum = 0.9;
inline constexpr double kBatchNormEps = 1e-5;

/// Per-channel normalization over N, H, W. In training mode uses batch
/// statistics and updates running = m * running + (1 - m) * batch.
Tensor batch_norm2d(const Tensor& input, BatchNormState& bn, bool training,
                    double momentum = kBatchNormMomentum, double eps = kBatchNormEps);

/// Mean cross-entropy of softmax(logits [N, K]) against class indices.
Tensor softmax_cross_entropy(const Tensor& logits, std::span<const int> labels);
Tensor softmax_cross_entropy(const Tensor& logits, int label);

/// x [N, C, H, W] scaled per (n, c) by s [N, C].
Tensor channel_scale(const Tensor& x, const Tensor& s);

/// [N, C, F, T] -> [N, C * F], mean over T.
Tensor mean_over_time(const Tensor& x);

}  // namespace fefa::nn
