#pragma once

#include <cstdint>
#include <vector>

#include "objvid/tensor.hpp"

namespace objvid {

// Parameters of the per-frame token mixer (one pre-norm Transformer encoder
// layer over the N object tokens), the temporal pair MLP, and the linear
// classification head. Output projections start at zero so both residual
// branches are silent at initialization.
struct InteractionParams {
  std::size_t heads = 4;
  Tensor ln1_gain, ln1_bias;
  Tensor wq, bq, wk, bk, wv, bv, wo, bo;  // [D,D] / [D]
  Tensor ln2_gain, ln2_bias;
  Tensor ffn_w1, ffn_b1;  // [D,4D],[4D]
  Tensor ffn_w2, ffn_b2;  // [4D,D],[D]
  Tensor ti_w1, ti_b1;    // [2D,D],[D]
  Tensor ti_w2, ti_b2;    // [D,D],[D]
  Tensor head_w, head_b;  // [D,K],[K]; zero so untrained logits are uniform
};

InteractionParams make_interaction_params(std::size_t d, std::size_t k_classes,
                                          std::size_t heads, std::uint64_t seed);

std::vector<Tensor> interaction_param_list(const InteractionParams& p);

// Multi-head self-attention plus feed-forward over the N tokens of each frame
// separately; no information crosses frames.
Tensor object_interact(const Tensor& tokens, const InteractionParams& p);

// Per-object state changes over a fixed interval: rows t pair frames t and
// t+delta channel-wise through the shared two-layer MLP.
struct StateChangeMatrix {
  Tensor s;  // [T',N,D]
  std::size_t delta = 0;
};

StateChangeMatrix state_changes(const Tensor& tokens, std::size_t delta,
                                const InteractionParams& p);

// Stacks state_changes for every delta in 1..T-1, giving T(T-1)/2 rows.
StateChangeMatrix state_changes_all(const Tensor& tokens, const InteractionParams& p);

// Video vector: mean over time, then mean over objects.
Tensor pool_video(const StateChangeMatrix& s);

Tensor classify(const Tensor& v, const InteractionParams& p);

}  // namespace objvid
