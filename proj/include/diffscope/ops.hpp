#pragma once

// Forward and backward kernels on plain tensors. Convolutions lower to im2col + GEMM
// executed per batch element, so a sample's result never depends on what else shares
// its batch.

#include "diffscope/tensor.hpp"

namespace diffscope::ops {

struct ConvGeometry {
    std::int64_t stride = 1;
    std::int64_t padding = 0;
};

/// Output side of a convolution; throws ConfigError when the kernel does not fit.
std::int64_t conv_out_size(std::int64_t in, std::int64_t kernel, ConvGeometry g);
/// Output side of a transposed convolution: (in - 1) * stride - 2 * padding + kernel.
std::int64_t conv_transpose_out_size(std::int64_t in, std::int64_t kernel, ConvGeometry g);

/// Cross-correlation. input [B,Cin,H,W], weight [Cout,Cin,k,k], bias [Cout].
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias, ConvGeometry g);

/// Gradients of conv2d. Any of the output pointers may be null.
template <typename T>
void conv2d_backward(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& grad_out, ConvGeometry g,
                     Tensor<T>* grad_input, Tensor<T>* grad_weight, Tensor<T>* grad_bias);

/// Adjoint of conv2d. input [B,Cin,H,W], weight [Cin,Cout,k,k] (the conv2d weight
/// that maps Cout channels to Cin channels), bias [Cout].
template <typename T>
Tensor<T> conv_transpose2d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias,
                           ConvGeometry g);

template <typename T>
void conv_transpose2d_backward(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& grad_out,
                               ConvGeometry g, Tensor<T>* grad_input, Tensor<T>* grad_weight,
                               Tensor<T>* grad_bias);

template <typename T>
T silu(T x);

template <typename T>
Tensor<T> silu(const Tensor<T>& x);

template <typename T>
Tensor<T> silu_backward(const Tensor<T>& x, const Tensor<T>& grad_out);

/// y = x W^T + b with x [N,in], W [out,in], b [out].
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias);

template <typename T>
void linear_backward(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& grad_out, Tensor<T>* grad_x,
                     Tensor<T>* grad_weight, Tensor<T>* grad_bias);

struct GroupNormStats {
    std::vector<double> mean;  // [B * groups]
    std::vector<double> rstd;
};

/// Normalizes each of `groups` channel groups per sample, then applies per-channel gain/shift.
template <typename T>
Tensor<T> group_norm(const Tensor<T>& x, std::int64_t groups, const Tensor<T>& gain, const Tensor<T>& shift,
                     double eps, GroupNormStats* stats = nullptr);

template <typename T>
void group_norm_backward(const Tensor<T>& x, std::int64_t groups, const Tensor<T>& gain, const GroupNormStats& stats,
                         const Tensor<T>& grad_out, Tensor<T>* grad_x, Tensor<T>* grad_gain, Tensor<T>* grad_shift);

/// Group count used throughout the network: min(8, channels).
std::int64_t default_groups(std::int64_t channels);

}  // namespace diffscope::ops
