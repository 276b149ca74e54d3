#pragma once

#include "protoshape/tensor.hpp"

namespace ps {

// Elementwise / scalar
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor mul_scalar(const Tensor& a, double c);
Tensor add_scalar(const Tensor& a, double c);
// Broadcast-multiply by a scalar tensor (grad flows to both arguments).
Tensor scale(const Tensor& a, const Tensor& s);
Tensor relu(const Tensor& a);
// max(a, floor) elementwise; gradient passes only where a > floor
Tensor clamp_min(const Tensor& a, double floor);
Tensor tanh_op(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor log_op(const Tensor& a);

// x:[B,I] w:[I,O] b:[O] -> [B,O]
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);

// x:[Ci,R,R,R] k:[Co,Ci,3,3,3], zero padding 1, stride in {1,2} -> [Co,R/s,..]
Tensor conv3d(const Tensor& x, const Tensor& k, int stride);
// Adjoint of conv3d at stride 2: y:[Co,r,r,r] k:[Co,Ci,3,3,3] -> [Ci,2r,2r,2r]
Tensor conv3d_transposed(const Tensor& y, const Tensor& k, int stride = 2);
// x:[C,R,R,R] b:[C]
Tensor add_channel_bias(const Tensor& x, const Tensor& b);
Tensor concat_channels(const Tensor& a, const Tensor& b);
// a:[N,A] b:[N,B] -> [N,A+B]
Tensor concat_cols(const Tensor& a, const Tensor& b);

// x:[N,D] -> [D]; subgradient routes to the lowest-index argmax row per column
Tensor max_over_points(const Tensor& x);

Tensor sum_all(const Tensor& x);
Tensor mean_all(const Tensor& x);

// logits:[C], scalar cross-entropy against an integer label (log-sum-exp stable)
Tensor softmax_cross_entropy(const Tensor& logits, int label);

}  // namespace ps
