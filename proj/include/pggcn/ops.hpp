#pragma once

#include <vector>

#include "pggcn/tensor.hpp"

namespace pggcn {

/// Rank-2 matrix product [p x q] * [q x r] -> [p x r].
Tensor matmul(const Tensor& a, const Tensor& b);

/// Row-wise softmax of a rank-2 tensor, computed with max subtraction.
/// Every output row is non-negative and sums to 1.
Tensor softmax_rows(const Tensor& x);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor relu(const Tensor& a);
/// Upstream gradient masked by the sign of the forward input.
Tensor relu_grad(const Tensor& input, const Tensor& upstream);

/// Reductions remove `axis` from the shape (a rank-1 input reduces to a
/// rank-0 scalar tensor). max_index breaks ties toward the lowest index.
Tensor reduce_sum(const Tensor& x, int axis);
Tensor reduce_mean(const Tensor& x, int axis);
Tensor reduce_max_index(const Tensor& x, int axis);

/// Flat argmax of a rank-1 tensor, lowest index on ties.
int argmax(const Tensor& v);

/// Concatenation along the last axis; parts must agree on all other dims.
Tensor concat_last(const std::vector<Tensor>& parts);
/// Inverse of concat_last for the given last-axis sizes.
std::vector<Tensor> split_last(const Tensor& x, const std::vector<int>& sizes);

}  // namespace pggcn
