#pragma once

#include <span>
#include <vector>

#include "ahstn/tensor.hpp"

// Differentiable operations used by the forecasting model. Every function
// records a backward rule on the active tape when any input requires a
// gradient, and is a plain forward computation otherwise.
//
// Layout convention for spatio-temporal tensors: [..., N, T, C], i.e. the
// last axis is channels, the one before it time and the one before that the
// node axis. Leading axes (batch) are arbitrary.
namespace ahstn::diff {

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

// Valid cross-correlation along the time axis.
// x: [..., T, C_in], w: [K, C_in, C_out], bias: [C_out] -> [..., T-K+1, C_out]
Tensor conv1d_time(const Tensor& x, const Tensor& w, const Tensor& bias);

// Splits the last axis into value half P and gate half Q; returns P * sigmoid(Q).
Tensor glu(const Tensor& z);

// Row-wise softmax of m / tau for a 2-D tensor.
Tensor softmax_rows(const Tensor& m, double tau);

// (M^T M + eps I)^{-1} M^T for M of shape [N, N'] with N >= N'.
Tensor regularized_pinv(const Tensor& m, double eps);

struct BatchNormState {
  std::vector<double> running_mean;
  std::vector<double> running_var;
  double momentum = 0.1;
  double eps = 1e-5;

  explicit BatchNormState(std::size_t channels = 0)
      : running_mean(channels, 0.0), running_var(channels, 1.0) {}
};

// Per-channel normalization over every axis except the last. In training
// mode batch statistics are used and, when update_stats is set, the running
// statistics move by `momentum` (unbiased variance, as in common frameworks).
Tensor batchnorm(const Tensor& x, const Tensor& gamma, const Tensor& beta, BatchNormState& state,
                 bool training, bool update_stats = true);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor hadamard(const Tensor& a, const Tensor& b);
// Broadcasts b (shape [C]) over the last axis of x.
Tensor add_bias(const Tensor& x, const Tensor& b);
Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor scale(const Tensor& x, double factor);

// Keeps the final last_k steps of the time axis (rank >= 2, axis rank-2).
Tensor slice_time(const Tensor& x, std::size_t last_k);
Tensor concat_channels(std::span<const Tensor> parts);

Tensor reshape(const Tensor& x, Shape shape);

// Applies a [P, N] mixing matrix along the node axis of x: [..., N, T, C] ->
// [..., P, T, C]. Covers graph propagation and cluster pooling/unpooling.
Tensor node_mix(const Tensor& mix, const Tensor& x);

// Mean over the leading axis.
Tensor mean_axis0(const Tensor& x);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

// Scalar sigmoid shared by forward rules.
double sigmoid(double v);

}  // namespace ahstn::diff
