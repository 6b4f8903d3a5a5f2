#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string_view>
#include <vector>

#include "drformer/tensor.hpp"

// Differentiable tensor operations. Each op records a node on the active tape
// when at least one input requires a gradient; otherwise it is a plain
// forward computation. Broadcasting is limited to add_bias.
namespace drformer {

// [m x k] . [k x n] -> [m x n]
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);
Tensor add_scalar(const Tensor& x, double value);
// Adds a [d] vector to every slice along the last axis of x.
Tensor add_bias(const Tensor& x, const Tensor& bias);
// Sum of equally shaped tensors.
Tensor add_n(std::span<const Tensor> xs);

// Elementwise map with a caller-supplied derivative f'(x).
Tensor map(const Tensor& x, std::function<double(double)> f, std::function<double(double)> df,
           std::string_view name = "map");
Tensor relu(const Tensor& x);
// Tanh approximation used by ViT MLPs.
Tensor gelu(const Tensor& x);

Tensor softmax(const Tensor& x, std::size_t axis);
Tensor log_softmax(const Tensor& x, std::size_t axis);
// Normalizes each slice along the last axis, then applies gain and bias.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
// Mean over one axis; the axis is removed from the result shape.
Tensor mean(const Tensor& x, std::size_t axis);

Tensor reshape(const Tensor& x, Shape shape);
Tensor concat(std::span<const Tensor> xs, std::size_t axis);
Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t length);
std::vector<Tensor> split(const Tensor& x, std::size_t axis, std::span<const std::size_t> lengths);
// Row i of a matrix as a rank-1 tensor.
Tensor row(const Tensor& x, std::size_t i);
// Rows of a matrix selected (with repetition) by index.
Tensor gather_rows(const Tensor& x, std::span<const std::size_t> indices);

Tensor dot(const Tensor& u, const Tensor& v);
// Euclidean norm of each row of a matrix -> [rows].
Tensor row_norms(const Tensor& x);
// u.v / (|u||v|); throws DegenerateInputError on a zero-norm argument.
Tensor cosine_similarity(const Tensor& u, const Tensor& v);

}  // namespace drformer
