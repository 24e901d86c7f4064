#pragma once

#include <vector>

#include "hvae/graph.hpp"

namespace hvae::nn {

/// Diagonal Gaussian posterior; sigma = exp(log_sigma).
struct GaussianPosterior {
  Var mu;
  Var log_sigma;
};

// All ops record onto `g` and validate shapes, throwing ShapeError.

/// x [N, in] * W [in, out] + b [out].
template <typename T>
Var dense(Graph<T>& g, Var x, Var w, Var b);

/// Cross-correlation. x [N, C, H, W], k [Co, C, kh, kw] -> [N, Co, Ho, Wo]
/// with Ho = floor((H + 2 pad - kh) / stride) + 1.
template <typename T>
Var conv2d(Graph<T>& g, Var x, Var k, int stride, int pad);

/// Transpose of conv2d. x [N, Ci, H, W], k [Ci, Co, kh, kw] -> [N, Co, Ho, Wo]
/// with Ho = (H - 1) stride - 2 pad + kh.
template <typename T>
Var tconv2d(Graph<T>& g, Var x, Var k, int stride, int pad);

/// Adds b[c] to every element of channel c. x [N, C, ...].
template <typename T>
Var bias_channels(Graph<T>& g, Var x, Var b);

/// gamma[c] * x + beta[c] per channel. x [N, C, ...] (or [N, C]).
template <typename T>
Var channel_affine(Graph<T>& g, Var x, Var gamma, Var beta);

/// Per-feature causal convolution over time. x [N, L, F], k [width, F]:
/// y[n, t, f] = sum_j k[j, f] x[n, max(t - j, 0), f], i.e. the left edge is
/// padded by replicating the first step.
template <typename T>
Var temporal_conv(Graph<T>& g, Var x, Var k);

template <typename T>
Var leaky_relu(Graph<T>& g, Var x, T slope = T(0.2));
template <typename T>
Var tanh_act(Graph<T>& g, Var x);
template <typename T>
Var sigmoid(Graph<T>& g, Var x);

template <typename T>
Var add(Graph<T>& g, Var a, Var b);
template <typename T>
Var sub(Graph<T>& g, Var a, Var b);
template <typename T>
Var mul(Graph<T>& g, Var a, Var b);
template <typename T>
Var scale(Graph<T>& g, Var a, T factor);

template <typename T>
Var reshape(Graph<T>& g, Var x, Shape shape);

/// Concatenates 2-D tensors with equal row counts along columns.
template <typename T>
Var concat_cols(Graph<T>& g, const std::vector<Var>& parts);

/// Columns [begin, end) of a 2-D tensor.
template <typename T>
Var slice_cols(Graph<T>& g, Var x, int begin, int end);

/// Rows `index` of x along its first dimension (repeats allowed).
template <typename T>
Var gather_rows(Graph<T>& g, Var x, const std::vector<int>& index);

/// One 2-D block written into a zero-initialised output.
struct Placement {
  Var part;
  std::vector<int> rows;  ///< destination row of each part row
  int col_offset = 0;
};

/// [rows, cols] output holding exact +0.0 outside the placed blocks.
template <typename T>
Var place_blocks(Graph<T>& g, int rows, int cols, const std::vector<Placement>& blocks);

/// Mean over consecutive groups of `group` rows: [N * group, F] -> [N, F].
template <typename T>
Var mean_groups(Graph<T>& g, Var x, int group);

template <typename T>
Var sum(Graph<T>& g, Var x);

/// 1/2 sum (a - b)^2.
template <typename T>
Var half_squared_error(Graph<T>& g, Var a, Var b);

/// mu + exp(log_sigma) * eps with eps supplied by the caller.
template <typename T>
Var reparam_sample(Graph<T>& g, const GaussianPosterior& post, const Tensor<T>& eps);

/// sum_i 1/2 (mu_i^2 + sigma_i^2 - 1 - 2 log sigma_i).
template <typename T>
Var kl_std_normal(Graph<T>& g, const GaussianPosterior& post);

/// Mean negative log-likelihood of `labels` under softmax(logits [N, K]).
template <typename T>
Var softmax_cross_entropy(Graph<T>& g, Var logits, const std::vector<int>& labels);

/// Row-wise softmax of a plain tensor.
template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& logits);

}  // namespace hvae::nn
