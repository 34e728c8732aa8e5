#pragma once

#include <cstddef>

#include "aerodiff/nn/autograd.hpp"

namespace aerodiff::nn {

Var add(const Var& a, const Var& b);
Var scale(const Var& a, double s);

// x [B, C, H, W] + v [B, C] broadcast over the spatial grid.
Var add_channel_bias(const Var& x, const Var& v);
// x [B, N, M] + p [N, M] broadcast over the batch.
Var add_row_embedding(const Var& x, const Var& p);
// x [B, N, M] * (1 + scale) + shift, with shift/scale [B, M].
Var modulate(const Var& x, const Var& shift, const Var& scale);
// x + gate * y, with x, y [B, N, M] and gate [B, M].
Var gated_residual(const Var& x, const Var& gate, const Var& y);
// Slice [begin, begin + width) of the last axis of a 2-D [B, K] tensor.
Var slice_columns(const Var& x, std::size_t begin, std::size_t width);

// x [..., in] with weight [out, in] and bias [out] (bias may be undefined).
Var linear(const Var& x, const Var& weight, const Var& bias);
// x [B, C, H, W], weight [O, C, k, k], bias [O].
Var conv2d(const Var& x, const Var& weight, const Var& bias, std::size_t stride, std::size_t padding);
// 2x2 stride-2 transposed convolution; weight [C, O, 2, 2], bias [O].
Var conv_transpose2x2(const Var& x, const Var& weight, const Var& bias);

Var group_norm(const Var& x, std::size_t groups, const Var& gamma, const Var& beta, double eps = 1e-5);
// Normalizes the last axis without an affine transform.
Var layer_norm(const Var& x, double eps = 1e-6);

Var gelu(const Var& x);
Var silu(const Var& x);

// Multi-head scaled dot-product self-attention. qkv [B, N, 3M] packs q | k | v.
Var attention(const Var& qkv, std::size_t heads);
// Attention probabilities [B, heads, N, N] for the same packing (inspection only).
Tensor attention_probabilities(const Tensor& qkv, std::size_t heads);

// [B, C, H, W] -> [B, (H/p)(W/p), C p p] and back.
Var patchify(const Var& x, std::size_t patch);
Var unpatchify(const Var& tokens, std::size_t channels, std::size_t height, std::size_t width, std::size_t patch);

Var concat_last(const Var& a, const Var& b);
Var concat_channels(const Var& a, const Var& b);
// Spatial mean [B, C, H, W] -> [B, C].
Var spatial_mean(const Var& x);

// Mean squared error, returns a scalar.
Var mse_loss(const Var& prediction, const Tensor& target);

}  // namespace aerodiff::nn
