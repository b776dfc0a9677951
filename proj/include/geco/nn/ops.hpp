#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "geco/nn/autograd.hpp"

namespace geco::nn {

struct Conv2dGeometry {
  std::int64_t kernel = 4;
  std::int64_t stride = 2;
  std::int64_t padding = 1;
};

// x [N,C,H,W], weight [O,C,k,k], bias [O] (may be undefined).
template <class T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, Conv2dGeometry geo);

// x [N,C,H,W], weight [C,O,k,k], bias [O]; output extent (H-1)*stride - 2*pad + k.
template <class T>
Var<T> conv_transpose2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias,
                        Conv2dGeometry geo);

// Per-sample, per-channel normalisation over H*W, no affine terms.
template <class T>
Var<T> instance_norm(const Var<T>& x, T eps = T(1e-5));

struct BatchNormState {
  std::vector<double> running_mean;
  std::vector<double> running_var;
};

// Per-channel normalisation over N*H*W with affine gamma/beta. In training mode the
// batch statistics are used and the running estimates updated (unbiased variance).
template <class T>
Var<T> batch_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta,
                  BatchNormState& state, bool training, double momentum = 0.1,
                  T eps = T(1e-5));

template <class T>
Var<T> relu(const Var<T>& x);
template <class T>
Var<T> leaky_relu(const Var<T>& x, T slope);
template <class T>
Var<T> tanh(const Var<T>& x);
template <class T>
Var<T> sigmoid(const Var<T>& x);
template <class T>
Var<T> softplus(const Var<T>& x);

template <class T>
Var<T> max_pool2d(const Var<T>& x, Conv2dGeometry geo);
// [N,C,H,W] -> [N,C]
template <class T>
Var<T> global_avg_pool(const Var<T>& x);

template <class T>
Var<T> add(const Var<T>& a, const Var<T>& b);
template <class T>
Var<T> sub(const Var<T>& a, const Var<T>& b);
template <class T>
Var<T> scale(const Var<T>& x, T factor);
// Multiplies every element of x by a fixed mask of the same shape.
template <class T>
Var<T> mask_mul(const Var<T>& x, std::span<const T> mask);

// Concatenates along dimension 1 (channels for NCHW, features for [N,D]).
template <class T>
Var<T> concat1(const Var<T>& a, const Var<T>& b);
// [N,D] -> [N,D,H,W], each vector repeated over the spatial grid.
template <class T>
Var<T> broadcast_spatial(const Var<T>& z, std::int64_t height, std::int64_t width);
// Rows [begin, begin+count) of dimension 0.
template <class T>
Var<T> slice0(const Var<T>& x, std::int64_t begin, std::int64_t count);
template <class T>
Var<T> reshape(const Var<T>& x, Shape shape);

// x [N,I], weight [O,I], bias [O] -> [N,O]
template <class T>
Var<T> linear(const Var<T>& x, const Var<T>& weight, const Var<T>& bias);
// a [N,D], b [M,D] -> a * b^T, [N,M]
template <class T>
Var<T> matmul_nt(const Var<T>& a, const Var<T>& b);
// a [N,D], b [N,D] -> [N] of row-wise dot products
template <class T>
Var<T> rowdot(const Var<T>& a, const Var<T>& b);

template <class T>
Var<T> mean(const Var<T>& x);
template <class T>
Var<T> sum(const Var<T>& x);
// mean(|a - b|)
template <class T>
Var<T> l1_mean(const Var<T>& a, const Var<T>& b);
// sqrt(sum of squares) over every element of every input
template <class T>
Var<T> l2_norm(std::span<const Var<T>> xs);

// scores [N,K]; per row: prefactor * (logsumexp_k(s_ik / tau) - s_i,pos(i) / tau)
template <class T>
Var<T> softmax_xent_rows(const Var<T>& scores, std::span<const std::int64_t> positive_col,
                         T tau, T prefactor);

}  // namespace geco::nn
