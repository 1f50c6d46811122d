#pragma once

#include <cstdint>
#include <vector>

#include "csta/tensor.hpp"

namespace csta {

// Elementwise arithmetic. Shapes must match exactly or differ only by
// leading length-1 dims on one side (the smaller operand tiles over the
// leading dims of the larger). Anything fancier is rejected.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);

Tensor add_scalar(const Tensor& a, double s);
Tensor mul_scalar(const Tensor& a, double s);
Tensor neg(const Tensor& a);

// 2-D matrix product [M,K] x [K,N] -> [M,N].
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

Tensor reshape(const Tensor& a, Shape shape);

// Concatenate along `axis` (rank 1 or 2 operands, other dims equal).
Tensor concat(const std::vector<Tensor>& parts, std::int64_t axis);

// Row selection for rank-2 input: out[i, :] = x[indices[i], :].
// Indices may repeat; backward scatter-adds.
Tensor gather_rows(const Tensor& x, const std::vector<std::int64_t>& indices);
Tensor slice_cols(const Tensor& x, std::int64_t start, std::int64_t len);
Tensor mean_axis0(const Tensor& x);

Tensor sum_all(const Tensor& a);
Tensor mean_all(const Tensor& a);

Tensor log(const Tensor& a);
Tensor sqrt(const Tensor& a);
Tensor clamp_min(const Tensor& a, double lo);

// GeLU in its exact (erf) form.
Tensor gelu(const Tensor& a);

// Softmax over the last axis; rows sum to 1.
Tensor softmax(const Tensor& a);

// Layer normalization over the last axis followed by the affine map
// y = xhat * gamma + beta. gamma/beta are rank-1 of the last-axis length.
Tensor layernorm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                 double eps = 1e-5);

// -log softmax(logits)[label] for a rank-1 logit vector.
Tensor cross_entropy(const Tensor& logits, std::int64_t label);

// KL(softmax(p_logits) || softmax(q_logits)) with probabilities floored at
// 1e-12 inside the logs so saturated outputs stay finite.
Tensor kl_divergence(const Tensor& p_logits, const Tensor& q_logits);

// Cosine similarity of two equal-length vectors. A (near-)zero vector yields
// the constant 0 and sets *zero_flag when provided; gradients do not flow
// through that degenerate path.
Tensor cosine_similarity(const Tensor& a, const Tensor& b, bool* zero_flag = nullptr);

// Mean of scalar tensors (batch reduction for losses).
Tensor mean_scalars(const std::vector<Tensor>& xs);

}  // namespace csta
