#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "t2c/rng.hpp"
#include "t2c/tensor.hpp"

// Differentiable tensor operations. All ops treat tensors as 2-D
// (rows x cols) unless stated otherwise; a 1-D tensor of n values acts as a
// 1 x n row. Instantiated for float (training) and double (gradient checks).

namespace t2c {

using TokenId = std::int32_t;

/// [m x k] . [k x n] -> [m x n]
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

/// Exact-shape elementwise ops. `b` may also be a single row (1 x n or n)
/// broadcast over every row of an m x n `a`.
template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> tanh(const Tensor<T>& x);
template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x);
/// Throws NumericError on non-finite input or overflow.
template <typename T>
Tensor<T> exp(const Tensor<T>& x);
/// Throws NumericError on non-finite or non-positive input.
template <typename T>
Tensor<T> log(const Tensor<T>& x);

/// Multiplies by a constant.
template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor);

/// Sum of all elements as a scalar tensor.
template <typename T>
Tensor<T> sum(const Tensor<T>& x);

/// Row-wise softmax with per-row max subtraction.
template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& x);

/// Row-wise softmax restricted to positions where mask != 0. Masked
/// positions get weight exactly 0. A row with no unmasked entry is a
/// ContractError.
template <typename T>
Tensor<T> masked_softmax_rows(const Tensor<T>& x, std::span<const std::uint8_t> mask);

/// Mean of -log softmax(logits)[row, targets[row]] over rows whose target is
/// not `ignore_id`. Ignored rows get zero gradient.
template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const TokenId> targets,
                        TokenId ignore_id);

template <typename T>
Tensor<T> slice_cols(const Tensor<T>& x, std::size_t begin, std::size_t width);
template <typename T>
Tensor<T> slice_rows(const Tensor<T>& x, std::size_t begin, std::size_t count);
template <typename T>
Tensor<T> concat_cols(const std::vector<Tensor<T>>& parts);
template <typename T>
Tensor<T> concat_rows(const std::vector<Tensor<T>>& parts);

/// Gathers rows of `table` ([V x d]) -> [ids.size() x d]; the backward pass
/// scatter-adds into the table gradient.
template <typename T>
Tensor<T> embedding(const Tensor<T>& table, std::span<const TokenId> ids);

/// Scales row r by the constant mask[r].
template <typename T>
Tensor<T> mask_rows(const Tensor<T>& x, std::span<const T> mask);

/// Inverted dropout: zeroes each element with probability p and scales the
/// survivors by 1/(1-p). p == 0 returns x unchanged.
template <typename T>
Tensor<T> dropout(const Tensor<T>& x, T p, Rng& rng);

/// Stacks S tensors of shape [B x d] into one [B x S x d].
template <typename T>
Tensor<T> stack_steps(const std::vector<Tensor<T>>& steps);

/// scores[b, j] = sum_k memory[b, j, k] * query[b, k]; memory is [B x S x d].
template <typename T>
Tensor<T> batched_dot(const Tensor<T>& memory, const Tensor<T>& query);

/// out[b, k] = sum_j weights[b, j] * memory[b, j, k].
template <typename T>
Tensor<T> batched_weighted_sum(const Tensor<T>& weights, const Tensor<T>& memory);

/// Index of the row maximum, lowest index on ties.
template <typename T>
std::vector<TokenId> argmax_rows(const Tensor<T>& x);

template <typename T>
bool all_finite(const Tensor<T>& x);

}  // namespace t2c
