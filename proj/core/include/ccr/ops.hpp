#pragma once

#include <cstdint>
#include <span>

#include "ccr/graph.hpp"
#include "ccr/tensor.hpp"

// Differentiable primitives. Every op records itself on the graph when any
// input requires grad; shape mismatches throw std::invalid_argument naming
// the op and the offending shapes. Feature maps are NCHW.
namespace ccr::ops {

inline constexpr std::int32_t kIgnoreLabel = -1;

// Elementwise, equal shapes.
Tensor add(Graph& g, const Tensor& a, const Tensor& b);
Tensor sub(Graph& g, const Tensor& a, const Tensor& b);
Tensor mul(Graph& g, const Tensor& a, const Tensor& b);
Tensor scale(Graph& g, const Tensor& x, double factor);
Tensor add_scalar(Graph& g, const Tensor& x, double value);
Tensor relu(Graph& g, const Tensor& x);
// max(x + margin, 0)
Tensor hinge(Graph& g, const Tensor& x, double margin);
// sqrt(max(x, eps))
Tensor safe_sqrt(Graph& g, const Tensor& x, double eps = 1e-12);

// [M x K] * [K x N]
Tensor matmul(Graph& g, const Tensor& a, const Tensor& b);

// Same-padded, stride-1 convolution. weight [Cout x Cin x k x k] with odd k,
// bias [Cout].
Tensor conv2d(Graph& g, const Tensor& x, const Tensor& weight, const Tensor& bias);

struct BatchNormBuffers {
  Tensor running_mean;  // [C]
  Tensor running_var;   // [C]
};

struct BatchNormOptions {
  bool training = true;
  double momentum = 0.9;  // weight kept by the running average
  double eps = 1e-5;
};

// Per-channel statistics over N x H x W. Training mode normalizes with batch
// statistics and updates `buffers`; eval mode uses the running averages.
Tensor batch_norm(Graph& g, const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  BatchNormBuffers& buffers, const BatchNormOptions& opts);

// Divides every pixel's channel vector by max(||v||, eps).
Tensor l2_normalize_pixels(Graph& g, const Tensor& x, double eps = 1e-12);

// Rows m = x[image, :, flat_index[m]] -> [M x C].
Tensor gather_pixels(Graph& g, const Tensor& x, std::size_t image,
                     std::span<const std::size_t> flat_index);

// Full reductions to a rank-0 tensor.
Tensor sum(Graph& g, const Tensor& x);
Tensor mean(Graph& g, const Tensor& x);
// Gradient goes to the first maximal element.
Tensor max(Graph& g, const Tensor& x);

// Row-wise distances between [M x C] matrices -> [M].
Tensor squared_l2_rows(Graph& g, const Tensor& a, const Tensor& b);

// Mean over non-ignored pixels. labels are N*H*W class ids; returns exact 0
// without graph edges when every pixel is ignored.
Tensor softmax_cross_entropy(Graph& g, const Tensor& logits, std::span<const std::int32_t> labels);

// Mean over valid pixels (mask N*H*W, nonzero = valid) of sum_c |pred - target|.
Tensor l1_loss(Graph& g, const Tensor& pred, const Tensor& target,
               std::span<const std::uint8_t> mask);

// Mean over valid pixels of 1 - cos(pred, target) along channels.
Tensor cosine_loss(Graph& g, const Tensor& pred, const Tensor& target,
                   std::span<const std::uint8_t> mask);

// 2x resampling of NCHW maps. The bilinear downsample is the 2x2 area mean,
// which coincides with half-pixel bilinear sampling at scale 1/2.
Tensor downsample2x_nearest(Graph& g, const Tensor& x);
Tensor downsample2x_bilinear(Graph& g, const Tensor& x);
Tensor upsample2x_nearest(Graph& g, const Tensor& x);
Tensor upsample2x_bilinear(Graph& g, const Tensor& x);

}  // namespace ccr::ops
