#pragma once

#include <cstddef>
#include <span>

#include "occludox/tape.hpp"
#include "occludox/tensor.hpp"

namespace occludox {

// Differentiable operations. Each evaluates eagerly and records itself on the
// tape of its first argument. Shape problems raise ShapeError.

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, Real factor);
Var relu(Var a);
/// min(hi, max(lo, v)); gradient passes only strictly inside (lo, hi).
Var clip(Var a, Real lo, Real hi);
/// 2x2 max-pool with stride 2 over [N,C,H,W]; odd trailing rows/cols are dropped.
/// The first maximum in row-major window order receives the gradient.
Var max_pool2(Var a);
/// [N, ...] -> [N, prod(...)].
Var flatten(Var a);
/// x [N,F], weight [O,F], bias [O] -> [N,O].
Var dense(Var x, Var weight, Var bias);
/// x [N,C,H,W], kernel [O,C,kh,kw], bias [O] -> [N,O,OH,OW] cross-correlation.
Var conv2d(Var x, Var kernel, Var bias, std::size_t stride, std::size_t padding);
/// Per-row -log softmax(logits[n])[labels[n]] for logits [N,K]; result [N].
Var cross_entropy(Var logits, std::span<const std::size_t> labels);
Var sum(Var a);
Var mean(Var a);

/// Numerically stable -log softmax(logits)[label] for one row.
Real softmax_cross_entropy(std::span<const Real> logits, std::size_t label);

namespace kernels {

// Tape-free kernels shared by the ops above. Every image in a batch is
// processed with the same fixed-shape products so a row's result never
// depends on the other rows.

Tensor conv2d_forward(const Tensor& x, const Tensor& kernel, const Tensor& bias, std::size_t stride,
                      std::size_t padding);
void conv2d_backward(const Tensor& x, const Tensor& kernel, const Tensor& grad_out, std::size_t stride,
                     std::size_t padding, Tensor* grad_x, Tensor* grad_kernel, Tensor* grad_bias);
Tensor dense_forward(const Tensor& x, const Tensor& weight, const Tensor& bias);

}  // namespace kernels

}  // namespace occludox
