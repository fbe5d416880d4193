// Feedforward paths of a block.  Three interchangeable kinds:
//
//   ffn            x + Lin2(GELU(Lin1(LN(x))))                — the baseline
//   scffn_fused    x + Conv1x1(LN2(grid(GELU(Lin1(LN1(x)))))) — default
//   scffn_literal  two residual sub-blocks: a channel MLP, then a learned
//                  mixing matrix applied across the token axis
//
// The fused kind lays the expanded activations on their square token grid
// and projects back to C with a 1x1 convolution; since a 1x1 convolution is
// a per-position linear map, it has exactly the parameter count of the
// baseline's second linear layer (the inner LN2 is affine-free, so the
// fused kind's total equals the baseline's for every C and ratio).  The
// literal kind adds token mixing on top of the baseline and therefore does
// cost extra parameters; it requires the caller's token count to match the
// mixer size.
//
// Both embedded tokens (window grid, n = w^2) and CLS tokens (window-count
// grid, n = T) run through the same parameter set per block.
#pragma once

#include <string>

#include "tt/errors.hpp"
#include "tt/ops.hpp"
#include "tt/tensor.hpp"

namespace tt {

enum class FfnKind { ffn, scffn_fused, scffn_literal };

template <typename T>
struct ScffnParams {
  FfnKind kind = FfnKind::scffn_fused;
  Tensor<T> ln_gain, ln_bias;  // [C] pre-norm over channels
  Tensor<T> lin1_w, lin1_b;    // [C, rC], [rC]
  // second projection back to C: conv kernel [C, rC, 1, 1] for the fused
  // kind, matrix [rC, C] for ffn / literal
  Tensor<T> proj_w, proj_b;
  // literal kind only: pre-norm over the token axis and the [n, n] mixer
  Tensor<T> ln_tok_gain, ln_tok_bias;  // [n]
  Tensor<T> mix_w, mix_b;              // [n, n], [n]
};

// tokens: [batch, n, C].  The fused and literal kinds need n to be a
// perfect square / to match the mixer size; `stream` names the offending
// token stream in error messages ("embed" or "cls").
template <typename T>
Tensor<T> scffn_forward(const Tensor<T>& tokens, const ScffnParams<T>& p,
                        const std::string& stream) {
  const int b = tokens.dim(0), n = tokens.dim(1), c = tokens.dim(2);

  Tensor<T> h = layernorm(tokens, p.ln_gain, p.ln_bias);
  h = gelu(add(matmul(h, p.lin1_w), p.lin1_b));  // [b, n, rC]

  if (p.kind == FfnKind::scffn_fused) {
    const int s = static_cast<int>(std::lround(std::sqrt(static_cast<double>(n))));
    if (s * s != n)
      throw ContractError("scffn(" + stream + "): token count " +
                          std::to_string(n) + " is not a square grid");
    const int rc = static_cast<int>(p.lin1_w.dim(1));
    h = layernorm(h);  // affine-free, per token over the expanded channels
    h = transpose(reshape(h, {b, s, s, rc}), {0, 3, 1, 2});
    h = conv2d(h, p.proj_w, p.proj_b, 1, 0);  // [b, C, s, s]
    h = reshape(transpose(h, {0, 2, 3, 1}), {b, n, c});
    return add(tokens, h);
  }

  Tensor<T> out = add(tokens, add(matmul(h, p.proj_w), p.proj_b));
  if (p.kind == FfnKind::ffn) return out;

  // literal: mix across the token axis, channel by channel
  if (p.mix_w.dim(0) != n)
    throw ContractError("scffn(" + stream + "): token count " +
                        std::to_string(n) + " does not match the " +
                        std::to_string(p.mix_w.dim(0)) + "-token mixer");
  Tensor<T> tr = transpose(out, {0, 2, 1});  // [b, C, n]
  Tensor<T> mixed = layernorm(tr, p.ln_tok_gain, p.ln_tok_bias);
  mixed = add(matmul(mixed, p.mix_w), p.mix_b);
  tr = add(tr, mixed);
  return transpose(tr, {0, 2, 1});
}

}  // namespace tt
