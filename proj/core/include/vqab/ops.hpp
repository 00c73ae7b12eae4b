#pragma once

#include "vqab/tensor.hpp"

namespace vqab::ops {

// Elementwise (shapes must match exactly; there is no broadcasting).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
Tensor add_scalar(const Tensor& a, double c);
Tensor neg(const Tensor& a);
Tensor abs(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor swish(const Tensor& a);

// Reductions to scalar.
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);

Tensor softmax(const Tensor& a, int axis);

// Shape manipulation.
Tensor reshape(const Tensor& a, const Shape& shape);
Tensor permute(const Tensor& a, const std::vector<int>& dims);
Tensor transpose2d(const Tensor& a);
Tensor concat(const std::vector<Tensor>& parts, int axis);

// Linear algebra.
Tensor matmul(const Tensor& a, const Tensor& b);          // (M,K)x(K,N)
Tensor batched_matmul(const Tensor& a, const Tensor& b);  // (B,M,K)x(B,K,N)

// Spatial ops on NCHW tensors.
Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, int stride, int padding);
Tensor pad2d(const Tensor& input, int top, int bottom, int left, int right);
Tensor nearest_upsample2x(const Tensor& input);
Tensor group_norm(const Tensor& input, int groups, const Tensor& gamma, const Tensor& beta, double eps);

/// Per-position L2 normalization along the channel axis of an NCHW tensor.
Tensor channel_l2_normalize(const Tensor& input, double eps = 1e-10);

/// (x - shift[c]) / scale[c] per channel of an NCHW tensor.
Tensor channel_affine(const Tensor& input, const std::vector<double>& shift, const std::vector<double>& scale);

/// NCHW + CHW broadcast addition over the batch axis.
Tensor add_chw(const Tensor& input, const Tensor& table);

/// Inverted dropout. Identity in eval mode; in train mode zeroes elements
/// with probability rate and scales survivors by 1/(1-rate).
Tensor dropout(const Tensor& input, double rate, bool train, Rng& rng);

Tensor detach(const Tensor& a);

/// Forward takes value_source's values bit-exactly; backward routes the
/// gradient to grad_target unchanged. The straight-through estimator.
Tensor value_from_grad_to(const Tensor& value_source, const Tensor& grad_target);

/// Rows of `table` (K,D) selected by index, output (indices.size(), D).
/// Backward scatter-adds into the table.
Tensor gather_rows(const Tensor& table, const std::vector<int>& indices);

}  // namespace vqab::ops
