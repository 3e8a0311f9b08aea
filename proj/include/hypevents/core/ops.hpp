#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "hypevents/core/rng.hpp"
#include "hypevents/core/tape.hpp"

// Differentiable operations. Every op records its backward rule on the tape
// of its inputs; inputs must share one tape.
namespace hypevents::ops {

Var add(Var a, Var b);
Var sub(Var a, Var b);
/// Elementwise product of equally shaped tensors.
Var mul(Var a, Var b);
Var scale(Var a, double factor);
/// x[..., n] + bias[n]; the only broadcast supported.
Var add_bias(Var x, Var bias);

/// a[m,k] x b[k,n].
Var matmul(Var a, Var b);
Var transpose(Var a);

/// tanh-approximated GELU.
Var gelu(Var x);

/// Numerically stable softmax along `axis` (negative counts from the back).
Var softmax(Var x, int axis = -1);

/// Mean negative log-likelihood of `targets` under softmax(logits) over the
/// rows whose mask flag is non-zero. An empty mask selects every row.
Var cross_entropy(Var logits, std::span<const int> targets,
                  std::span<const std::uint8_t> mask = {});

/// Row-wise layer normalisation with affine gamma/beta of length n.
Var layer_norm(Var x, Var gamma, Var beta, double eps = 1e-5);

/// Gathers rows of table[v, d] for each id; result [ids.size(), d].
Var embedding(Var table, std::span<const int> ids);

Var slice_cols(Var x, std::size_t begin, std::size_t count);
Var concat_cols(std::span<const Var> parts);
/// Row r of a matrix as a [1, n] matrix.
Var row(Var x, std::size_t r);

Var sum(Var x);
Var mean(Var x);

/// Inverted dropout; the mask is drawn from `rng`. rate must be in [0, 1).
Var dropout(Var x, double rate, RngStream& rng);

// Value-level kernels shared with inference code paths.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor softmax(const Tensor& x, int axis = -1);

}  // namespace hypevents::ops
