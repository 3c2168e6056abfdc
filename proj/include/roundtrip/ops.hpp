#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "roundtrip/tape.hpp"

// Differentiable primitives. Every op checks shapes, rejects non-finite
// inputs with InvalidValueError and records itself on the tape of its inputs.
namespace roundtrip::ad {

// Linear algebra.
Var matmul(Var a, Var b);     // [m x k] * [k x n]
Var matmul_nt(Var a, Var b);  // [m x k] * [n x k]^T

// Elementwise.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, Real factor);
Var add_row(Var a, Var row);      // broadcast a [1 x c] row over every row of a
Var mul_col(Var a, Var column);   // scale row i of a by column[i]; column is [r x 1]
Var tanh(Var a);
Var sigmoid(Var a);
Var exp(Var a);
Var log(Var a);
/// Per-row blend keep[i] ? a : b, with keep a constant 0/1 column.
Var select_rows(const Tensor& keep, Var a, Var b);

// Structure.
Var concat_cols(std::span<const Var> parts);
Var slice_cols(Var a, std::size_t begin, std::size_t count);
/// Gathers rows of `table` ([V x d]) by id.
Var lookup(Var table, std::span<const int> ids);

// Reductions.
Var sum(Var a);
Var dot(Var a, Var b);

// Normalisation.
Var softmax_rows(Var logits);
Var log_softmax_rows(Var logits);
/// Softmax over entries with mask 1; masked entries get probability exactly 0.
Var masked_softmax_rows(Var logits, const Tensor& mask);
/// Per-row layer normalisation over the last axis with learned gain/bias.
Var layer_norm(Var x, Var gain, Var bias, Real epsilon);

/// Sum over rows of weight[i] * -log softmax(logits[i])[target[i]]. Rows with
/// weight 0 contribute exactly 0.
Var cross_entropy(Var logits, std::span<const int> targets, std::span<const Real> weights);

// Attention.
/// scores[b, s] = v^T tanh(query[b] + keys[s][b]); keys are [B x a], v is [a x 1].
Var mlp_attention_scores(Var query, std::span<const Var> keys, Var v);
/// context[b] = sum_s weights[b, s] * memory[s][b].
Var weighted_sum(Var weights, std::span<const Var> memory);

/// Inverted dropout: zero with probability p, scale survivors by 1/(1-p).
Var dropout(Var x, Real p, std::mt19937_64& rng);

/// Value is hard + (soft - reference); gradient passes to soft unchanged.
/// With reference == soft.value() the forward value is exactly `hard`.
Var straight_through(const Tensor& hard, Var soft, const Tensor& reference);
Var straight_through(const Tensor& hard, Var soft);

/// Identity in the forward pass, blocks gradients.
Var stop_gradient(Var a);

/// Test hook: scales every gradient produced by mul() by `factor`.
/// Used by the gradient suite to prove a corrupted backward is caught.
void set_mul_gradient_corruption(Real factor);

}  // namespace roundtrip::ad
