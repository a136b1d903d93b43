#pragma once

#include <array>
#include <cstddef>
#include <vector>

#include "natmotion/autograd.hpp"
#include "natmotion/rng.hpp"

/// Differentiable primitives. Every function records one node on the tape of
/// its first Var argument.
namespace natmotion::ops {

// Elementwise and reductions.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double factor);
Var leaky_relu(const Var& x, double slope);
Var sum(const Var& x);
Var mean(const Var& x);
Var reshape(const Var& x, Shape shape);

// Dense algebra.
Var matmul(const Var& a, const Var& b);
/// x [B, in] * w [in, out] + bias [out].
Var linear(const Var& x, const Var& w, const Var& bias);
Var log_softmax(const Var& logits);
Var softmax(const Var& logits);

// Layout.
/// out.shape[i] = x.shape[perm[i]] for rank-4 x.
Var permute(const Var& x, std::array<std::size_t, 4> perm);
/// [B, p] ++ [B, q] -> [B, p + q].
Var concat_cols(const Var& a, const Var& b);
/// M tensors of shape [B, D] -> [B, M, D].
Var stack_frames(const std::vector<Var>& frames);
/// x [B, T, ...] -> x[:, t, ...].
Var select_frame(const Var& x, std::size_t t);

// Skeleton-sequence layers; activations are laid out [B, C, T, J].
/// out[b,c,t,:] = adjacency * h[b,c,t,:]. The adjacency is a constant.
Var joint_mix(const Var& h, const Tensor& adjacency);
/// out[b,:,t,j] = w^T h[b,:,t,j] with w [C_in, C_out].
Var channel_mix(const Var& h, const Var& w);
/// Zero "same"-padded convolution along T with kernel w [C_out, C_in, ks],
/// shared across joints. `bias` may be unbound.
Var temporal_conv(const Var& h, const Var& w, const Var& bias);
/// Mean over T and J: [B, C, T, J] -> [B, C].
Var mean_pool_tj(const Var& h);
/// out[b,c,t,j] = context[b,c] + positions[t,c].
Var tile_frames(const Var& context, const Tensor& positions, std::size_t joints);
/// out[b,t,...] = seed[b,...] + residual[b,t,...].
Var add_seed(const Var& residual, const Var& seed);

struct BatchStats {
  std::vector<double> mean;
  std::vector<double> biased_var;
  std::size_t count = 0;
};

/// Normalizes channel axis 1 with statistics over every other axis.
Var batch_norm_train(const Var& x, const Var& gamma, const Var& beta, double eps, BatchStats* stats);
Var batch_norm_eval(const Var& x, const Var& gamma, const Var& beta, const Tensor& running_mean,
                    const Tensor& running_var, double eps);

// Losses. Quaternion tensors have the 4 components as their last axis.
/// Mean over quaternions of the summed absolute component differences.
Var l1_quat_loss(const Var& pred, const Var& truth);
/// Mean over quaternions of (|q|^2 - 1)^2.
Var quat_norm_penalty(const Var& pred);
/// Mean over rows of -log softmax(logits)[label].
Var cross_entropy(const Var& logits, const std::vector<std::size_t>& labels);

/// Inverted-dropout mask: each entry 0 with probability `rate`, else 1/(1-rate).
Tensor dropout_mask(const Shape& shape, double rate, Rng& rng);

}  // namespace natmotion::ops
