#pragma once

#include <vector>

#include "ganet/tensor.hpp"

// Differentiable tensor operations. Layout convention is NCHW throughout;
// batched matrices are [B, rows, cols].
namespace ganet::ops {

// Elementwise.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double s);
Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);

// Reductions.
Tensor sum_all(const Tensor& x);
Tensor mean_all(const Tensor& x);
Tensor mean_channels(const Tensor& x);  // NCHW -> N,1,H,W

// Structure.
Tensor reshape(const Tensor& x, Shape shape);
Tensor concat_channels(const std::vector<Tensor>& xs);
Tensor slice_channels(const Tensor& x, std::int64_t begin, std::int64_t end);
Tensor nchw_to_nlc(const Tensor& x);  // N,C,H,W -> N,H*W,C
Tensor nlc_to_nchw(const Tensor& x, std::int64_t h, std::int64_t w);

// Batched matrix products.
Tensor bmm(const Tensor& a, const Tensor& b);     // [B,M,K] x [B,K,N] -> [B,M,N]
Tensor bmm_nt(const Tensor& a, const Tensor& b);  // [B,M,K] x [B,N,K]^T -> [B,M,N]
Tensor softmax_lastdim(const Tensor& x);

// Convolution and spatial ops. Weight layout [Co, Ci, kh, kw]; square
// kernels/strides only, which is all the network needs.
Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, int stride,
              int padding, int dilation = 1);
Tensor max_pool2d(const Tensor& x, int kernel, int stride, int padding);
Tensor global_avg_pool(const Tensor& x);  // N,C,H,W -> N,C,1,1
Tensor bilinear_resize(const Tensor& x, std::int64_t out_h, std::int64_t out_w);

// Per-channel batch moments over N,H,W (variance is biased).
struct BatchMoments {
  std::vector<double> mean;
  std::vector<double> var;
  std::int64_t count = 0;  // N*H*W
};
BatchMoments batch_moments(const Tensor& x);

// Training-mode batch norm: normalizes with the batch's own moments and
// differentiates through them. Saved moments are written to `saved` when
// non-null (for running-stat updates).
Tensor batch_norm_train(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps,
                        BatchMoments* saved);
// Eval-mode batch norm: running statistics are constants.
Tensor batch_norm_eval(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                       const std::vector<double>& running_mean,
                       const std::vector<double>& running_var, double eps);

}  // namespace ganet::ops
