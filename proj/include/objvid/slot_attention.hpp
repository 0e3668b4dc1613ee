#pragma once

#include <cstdint>
#include <utility>

#include "objvid/tensor.hpp"

namespace objvid {

// Learnable slot-attention state: query initializations, shared projections,
// the recurrent update cell, and normalization/MLP sub-layers. All parameters
// except q are slot-symmetric.
struct SlotParams {
  Tensor q;            // [N,D]
  Tensor wq, wk, wv;   // [D,D]
  GruParams gru;
  Tensor input_gain, input_bias;  // feature norm
  Tensor slot_gain, slot_bias;    // slot norm before the query projection
  std::size_t iterations = 3;
  bool use_mlp = true;
  Tensor mlp_gain, mlp_bias;      // norm before the residual MLP
  Tensor mlp_w1, mlp_b1;          // [D,D],[D]
  Tensor mlp_w2, mlp_b2;          // [D,D],[D]; zero-initialized so the MLP
                                  // branch starts silent
};

// Seeded initialization. Queries and projections draw from normal(0, 1/sqrt D)
// in a pinned order; biases, norm offsets, and the final MLP layer start at
// zero, norm gains at one.
SlotParams make_slot_params(std::size_t n, std::size_t d, std::uint64_t seed,
                            std::size_t iterations = 3, bool use_mlp = true);

std::vector<Tensor> slot_param_list(const SlotParams& p);

// One routing round: slots compete for spatial features via softmax over the
// slot axis, aggregate values by the epsilon-stabilized weighted mean, and
// update through the shared GRU plus the optional residual MLP.
// Returns the updated slots [N,D] and the attention map [N,HW].
std::pair<Tensor, Tensor> slot_step(const Tensor& slots, const Tensor& features,
                                    const SlotParams& p);

struct SlotOutput {
  Tensor tokens;  // [T,N,D], final-iteration slots per frame
  Tensor attn;    // [T,N,HW], final-iteration attention per frame
};

// Runs `iterations` routing rounds per frame, starting every frame from the
// learned queries; frames never see each other.
SlotOutput decompose(const Tensor& grid, const SlotParams& p);

constexpr double kSlotMeanEps = 1e-8;

}  // namespace objvid
