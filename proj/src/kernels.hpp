#pragma once

#include <cstddef>

#include "seqadv/tensor.hpp"

// Dense kernels behind the tape primitives. Shapes are validated by the tape
// when nodes are recorded, so these assume well-formed arguments.
namespace seqadv::grad::kernels {

Tensor matmul(const Tensor& a, const Tensor& b, bool transpose_a = false, bool transpose_b = false);

std::size_t conv_out_extent(std::size_t extent, std::size_t stride);

Tensor conv2d(const Tensor& x, const Tensor& w, std::size_t stride);

/// Either output may be skipped by passing nullptr.
void conv2d_backward(const Tensor& x, const Tensor& w, std::size_t stride, const Tensor& dy, Tensor* dx,
                     Tensor* dw);

Tensor maxpool2d(const Tensor& x, std::size_t window_h, std::size_t window_w);

/// Routes each window's gradient to its first (lowest-index) maximum.
Tensor maxpool2d_backward(const Tensor& x, std::size_t window_h, std::size_t window_w, const Tensor& dy);

}  // namespace seqadv::grad::kernels
