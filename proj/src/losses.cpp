#include "objvid/losses.hpp"

#include <string>

#include "objvid/errors.hpp"

namespace objvid {

namespace {

void check_clip(const ClipTerms& c, std::size_t idx) {
  const std::string at = "clip " + std::to_string(idx);
  if (!c.tokens.defined() || c.tokens.rank() != 3) {
    throw ContractError("losses: " + at + " tokens must be [T,N,D]");
  }
  if (!c.cls.defined() || c.cls.rank() != 2 || c.cls.dim(0) != c.tokens.dim(0) ||
      c.cls.dim(1) != c.tokens.dim(2)) {
    throw DimensionError("losses: " + at + " cls " +
                         (c.cls.defined() ? shape_str(c.cls.shape()) : "<undefined>") +
                         " inconsistent with tokens " + shape_str(c.tokens.shape()));
  }
}

Tensor frame_tokens(const ClipTerms& c, std::size_t t) {
  return reshape(slice(c.tokens, 0, t, 1), {c.tokens.dim(1), c.tokens.dim(2)});
}

Tensor frame_cls(const ClipTerms& c, std::size_t t) {
  return reshape(slice(c.cls, 0, t, 1), {c.cls.dim(1)});
}

Tensor state_row(const Tensor& s, std::size_t t, std::size_t n) {
  return reshape(slice(slice(s, 0, t, 1), 1, n, 1), {s.dim(2)});
}

// Mean when normalizing, raw sum otherwise; empty groups vanish.
Tensor reduce_group(std::vector<Tensor>& parts, bool normalize) {
  if (parts.empty()) return Tensor::scalar(0.0);
  Tensor flat = concat(parts, 0);
  return normalize ? mean_all(flat) : sum_all(flat);
}

}  // namespace

Tensor correspondence(const Tensor& tokens_t, const Tensor& p, double tau) {
  if (tau <= 0.0) throw ConfigError("correspondence: temperature must be positive");
  Tensor cos = cosine_rows(tokens_t, p);                 // [N]
  Tensor w = softmax(scale(cos, 1.0 / tau), 0);          // attention over objects
  return sum_all(mul(w, cos));
}

Tensor object_distillation_loss(const std::vector<ClipTerms>& batch, std::size_t idx,
                                const LossConfig& cfg) {
  if (idx >= batch.size()) throw ContractError("object_distillation_loss: bad clip index");
  const ClipTerms& me = batch[idx];
  check_clip(me, idx);
  const double inner = cfg.inner_tau > 0.0 ? cfg.inner_tau : cfg.tau;

  // Deterministic negative pool: every frame summary of every other clip, in
  // batch then frame order, optionally truncated.
  std::vector<Tensor> negatives;
  for (std::size_t c = 0; c < batch.size(); ++c) {
    if (c == idx) continue;
    check_clip(batch[c], c);
    for (std::size_t t = 0; t < batch[c].cls.dim(0); ++t) {
      negatives.push_back(frame_cls(batch[c], t));
      if (cfg.negative_cap > 0 && negatives.size() == cfg.negative_cap) break;
    }
    if (cfg.negative_cap > 0 && negatives.size() == cfg.negative_cap) break;
  }
  if (negatives.empty()) {
    throw ConfigError("object_distillation_loss: no negative summaries in batch");
  }

  const std::size_t t_len = me.tokens.dim(0);
  std::vector<Tensor> per_frame;
  per_frame.reserve(t_len);
  for (std::size_t t = 0; t < t_len; ++t) {
    Tensor o_t = frame_tokens(me, t);
    Tensor c_pos = scale(correspondence(o_t, frame_cls(me, t), inner), 1.0 / cfg.tau);
    std::vector<Tensor> logits;
    logits.reserve(negatives.size() + 1);
    logits.push_back(reshape(c_pos, {1}));
    for (const Tensor& neg : negatives) {
      logits.push_back(reshape(scale(correspondence(o_t, neg, inner), 1.0 / cfg.tau), {1}));
    }
    per_frame.push_back(sub(logsumexp(concat(logits, 0)), c_pos));
  }
  std::vector<Tensor> stacked;
  stacked.reserve(per_frame.size());
  for (Tensor& t : per_frame) stacked.push_back(reshape(t, {1}));
  return sum_all(concat(stacked, 0));
}

Tensor temporal_reasoning_loss(const std::vector<ClipTerms>& batch, std::size_t idx,
                               const LossConfig& cfg) {
  if (idx >= batch.size()) throw ContractError("temporal_reasoning_loss: bad clip index");
  const ClipTerms& me = batch[idx];
  if (!me.s.defined() || me.s.rank() != 3) {
    throw ContractError("temporal_reasoning_loss: state changes must be [T',N,D]");
  }
  const std::size_t t_len = me.s.dim(0), n = me.s.dim(1);
  std::vector<std::size_t> positives, negatives;
  for (std::size_t c = 0; c < batch.size(); ++c) {
    if (c == idx) continue;
    if (!batch[c].s.defined() || batch[c].s.shape() != me.s.shape()) {
      throw DimensionError("temporal_reasoning_loss: clip " + std::to_string(c) +
                           " state shape " +
                           (batch[c].s.defined() ? shape_str(batch[c].s.shape())
                                                 : "<undefined>") +
                           " differs from " + shape_str(me.s.shape()));
    }
    (batch[c].label == me.label ? positives : negatives).push_back(c);
  }

  std::vector<Tensor> pull, push_cross, push_sibling;
  for (std::size_t t = 0; t < t_len; ++t) {
    for (std::size_t i = 0; i < n; ++i) {
      Tensor mine = state_row(me.s, t, i);
      for (std::size_t c : positives) {
        Tensor dist = l2_norm(sub(mine, state_row(batch[c].s, t, i)), 0);
        pull.push_back(reshape(dist, {1}));
      }
      for (std::size_t c : negatives) {
        Tensor dist = l2_norm(sub(mine, state_row(batch[c].s, t, i)), 0);
        push_cross.push_back(reshape(relu(affine(dist, -1.0, cfg.lambda)), {1}));
      }
      for (std::size_t m = 0; m < n; ++m) {
        if (m == i) continue;
        Tensor dist = l2_norm(sub(mine, state_row(me.s, t, m)), 0);
        push_sibling.push_back(reshape(relu(affine(dist, -1.0, cfg.lambda)), {1}));
      }
    }
  }
  Tensor a = reduce_group(pull, cfg.normalize_temporal);
  Tensor b = reduce_group(push_cross, cfg.normalize_temporal);
  Tensor c = reduce_group(push_sibling, cfg.normalize_temporal);
  return add(add(a, b), c);
}

LossBreakdown clip_loss(const std::vector<ClipTerms>& batch, std::size_t idx,
                        const LossConfig& cfg) {
  if (idx >= batch.size()) throw ContractError("clip_loss: bad clip index");
  const ClipTerms& me = batch[idx];
  if (!me.logits.defined() || me.logits.rank() != 1) {
    throw ContractError("clip_loss: logits must be rank-1");
  }
  LossBreakdown out;
  out.obj = cfg.enable_obj ? object_distillation_loss(batch, idx, cfg)
                           : Tensor::scalar(0.0);
  out.temp = cfg.enable_temp ? temporal_reasoning_loss(batch, idx, cfg)
                             : Tensor::scalar(0.0);
  out.cls = cross_entropy_with_logits(me.logits, me.label);
  out.total = add(add(out.obj, out.temp), out.cls);
  return out;
}

}  // namespace objvid
