#pragma once

#include <vector>

#include "objvid/tensor.hpp"

namespace objvid {

// Everything the losses need from one clip's forward pass.
struct ClipTerms {
  Tensor tokens;  // [T,N,D] object tokens
  Tensor cls;     // [T,D] frozen per-frame summary vectors
  Tensor s;       // [T',N,D] state changes
  Tensor logits;  // [K]
  std::size_t label = 0;
};

struct LossConfig {
  double tau = 0.07;       // shared temperature (outer contrast and inner weighting)
  double inner_tau = 0.0;  // > 0 overrides tau inside the correspondence score
  double lambda = 1.0;     // margin
  bool normalize_temporal = true;  // per-term mean; false reproduces raw sums
  std::size_t negative_cap = 0;    // 0 keeps every in-batch negative
  bool enable_obj = true;
  bool enable_temp = true;
};

// Attention-weighted agreement between one frame's object tokens and a
// summary vector: softmax over per-object cosines (scaled by 1/tau) weighting
// those same cosines. Lies in [-1,1].
Tensor correspondence(const Tensor& tokens_t, const Tensor& p, double tau);

// Contrast of each frame's own summary against summaries of the other clips
// in the batch. Raises ConfigError when the batch offers no negatives.
Tensor object_distillation_loss(const std::vector<ClipTerms>& batch, std::size_t idx,
                                const LossConfig& cfg);

// Margin loss over state-change vectors: pulls same-label clips' matching
// rows together, pushes different-label rows and same-clip sibling slots
// apart. Empty pools contribute zero.
Tensor temporal_reasoning_loss(const std::vector<ClipTerms>& batch, std::size_t idx,
                               const LossConfig& cfg);

struct LossBreakdown {
  Tensor obj, temp, cls, total;
};

// Per-clip objective; total is the plain sum obj + temp + cls with the
// association (obj + temp) + cls pinned.
LossBreakdown clip_loss(const std::vector<ClipTerms>& batch, std::size_t idx,
                        const LossConfig& cfg);

}  // namespace objvid
