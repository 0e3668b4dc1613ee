#include "objvid/object_time.hpp"

#include <cmath>

#include "objvid/errors.hpp"
#include "objvid/rng.hpp"

namespace objvid {

namespace {

Tensor seeded_normal(const Shape& shape, double stddev, Rng& rng) {
  std::vector<double> data(shape_size(shape));
  for (double& v : data) v = rng.normal(0.0, stddev);
  return Tensor::from_data(shape, std::move(data), true);
}

}  // namespace

InteractionParams make_interaction_params(std::size_t d, std::size_t k_classes,
                                          std::size_t heads, std::uint64_t seed) {
  if (d == 0 || k_classes == 0 || heads == 0) {
    throw ConfigError("make_interaction_params: zero-sized dimension");
  }
  if (d % heads != 0) {
    throw ConfigError("make_interaction_params: channel dim " + std::to_string(d) +
                      " not divisible by " + std::to_string(heads) + " heads");
  }
  Rng rng(seed);
  const double s = 1.0 / std::sqrt(static_cast<double>(d));
  InteractionParams p;
  p.heads = heads;
  p.ln1_gain = Tensor::full({d}, 1.0, true);
  p.ln1_bias = Tensor::zeros({d}, true);
  p.wq = seeded_normal({d, d}, s, rng);
  p.wk = seeded_normal({d, d}, s, rng);
  p.wv = seeded_normal({d, d}, s, rng);
  p.wo = Tensor::zeros({d, d}, true);
  p.bq = Tensor::zeros({d}, true);
  p.bk = Tensor::zeros({d}, true);
  p.bv = Tensor::zeros({d}, true);
  p.bo = Tensor::zeros({d}, true);
  p.ln2_gain = Tensor::full({d}, 1.0, true);
  p.ln2_bias = Tensor::zeros({d}, true);
  p.ffn_w1 = seeded_normal({d, 4 * d}, s, rng);
  p.ffn_b1 = Tensor::zeros({4 * d}, true);
  p.ffn_w2 = Tensor::zeros({4 * d, d}, true);
  p.ffn_b2 = Tensor::zeros({d}, true);
  // Antisymmetric pairing of the two concatenated halves: at initialization
  // the hidden layer reads the state difference, final minus initial.
  Tensor diff_map = seeded_normal({d, d}, 20.0 * s, rng);
  std::vector<double> w1(2 * d * d);
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      w1[i * d + j] = -diff_map.data()[i * d + j];
      w1[(d + i) * d + j] = diff_map.data()[i * d + j];
    }
  }
  p.ti_w1 = Tensor::from_data({2 * d, d}, std::move(w1), true);
  p.ti_b1 = Tensor::zeros({d}, true);
  p.ti_w2 = seeded_normal({d, d}, s, rng);
  p.ti_b2 = Tensor::zeros({d}, true);
  p.head_w = Tensor::zeros({d, k_classes}, true);
  p.head_b = Tensor::zeros({k_classes}, true);
  return p;
}

std::vector<Tensor> interaction_param_list(const InteractionParams& p) {
  return {p.ln1_gain, p.ln1_bias, p.wq,     p.bq,     p.wk,     p.bk,
          p.wv,       p.bv,       p.wo,     p.bo,     p.ln2_gain, p.ln2_bias,
          p.ffn_w1,   p.ffn_b1,   p.ffn_w2, p.ffn_b2, p.ti_w1,  p.ti_b1,
          p.ti_w2,    p.ti_b2,    p.head_w, p.head_b};
}

namespace {

// Pre-norm encoder update of one frame's token set [N,D].
Tensor encode_frame(const Tensor& x, const InteractionParams& p) {
  const std::size_t n = x.dim(0), d = x.dim(1);
  const std::size_t dh = d / p.heads;
  Tensor h = layer_norm(x, p.ln1_gain, p.ln1_bias);
  Tensor q = add_bias(matmul(h, p.wq), p.bq);
  Tensor k = add_bias(matmul(h, p.wk), p.bk);
  Tensor v = add_bias(matmul(h, p.wv), p.bv);
  std::vector<Tensor> head_outs;
  head_outs.reserve(p.heads);
  for (std::size_t hd = 0; hd < p.heads; ++hd) {
    Tensor qh = slice(q, 1, hd * dh, dh);
    Tensor kh = slice(k, 1, hd * dh, dh);
    Tensor vh = slice(v, 1, hd * dh, dh);
    Tensor logits =
        scale(matmul(qh, transpose(kh)), 1.0 / std::sqrt(static_cast<double>(dh)));
    Tensor attn = softmax(logits, 1);  // each token distributes over tokens
    head_outs.push_back(matmul(attn, vh));
  }
  Tensor mixed = add_bias(matmul(concat(head_outs, 1), p.wo), p.bo);
  Tensor x1 = add(x, mixed);
  Tensor h2 = layer_norm(x1, p.ln2_gain, p.ln2_bias);
  Tensor f = add_bias(
      matmul(gelu(add_bias(matmul(h2, p.ffn_w1), p.ffn_b1)), p.ffn_w2), p.ffn_b2);
  (void)n;
  return add(x1, f);
}

}  // namespace

Tensor object_interact(const Tensor& tokens, const InteractionParams& p) {
  if (tokens.rank() != 3) {
    throw DimensionError("object_interact: expected [T,N,D], got " +
                         shape_str(tokens.shape()));
  }
  const std::size_t t_len = tokens.dim(0), n = tokens.dim(1), d = tokens.dim(2);
  if (d % p.heads != 0) {
    throw DimensionError("object_interact: channel dim " + std::to_string(d) +
                         " not divisible by " + std::to_string(p.heads) + " heads");
  }
  std::vector<Tensor> frames;
  frames.reserve(t_len);
  for (std::size_t t = 0; t < t_len; ++t) {
    Tensor x = reshape(slice(tokens, 0, t, 1), {n, d});
    frames.push_back(reshape(encode_frame(x, p), {1, n, d}));
  }
  return concat(frames, 0);
}

StateChangeMatrix state_changes(const Tensor& tokens, std::size_t delta,
                                const InteractionParams& p) {
  if (tokens.rank() != 3) {
    throw DimensionError("state_changes: expected [T,N,D], got " +
                         shape_str(tokens.shape()));
  }
  const std::size_t t_len = tokens.dim(0), n = tokens.dim(1), d = tokens.dim(2);
  if (delta < 1 || delta >= t_len) {
    throw ConfigError("state_changes: temporal interval " + std::to_string(delta) +
                      " exceeds clip length " + std::to_string(t_len));
  }
  const std::size_t t_out = t_len - delta;
  Tensor initial = reshape(slice(tokens, 0, 0, t_out), {t_out * n, d});
  Tensor final_ = reshape(slice(tokens, 0, delta, t_out), {t_out * n, d});
  Tensor cat = concat({initial, final_}, 1);  // [T'N, 2D]
  Tensor h = gelu(add_bias(matmul(cat, p.ti_w1), p.ti_b1));
  Tensor s = add_bias(matmul(h, p.ti_w2), p.ti_b2);
  StateChangeMatrix out;
  out.s = reshape(s, {t_out, n, d});
  out.delta = delta;
  return out;
}

StateChangeMatrix state_changes_all(const Tensor& tokens, const InteractionParams& p) {
  if (tokens.rank() != 3) {
    throw DimensionError("state_changes_all: expected [T,N,D], got " +
                         shape_str(tokens.shape()));
  }
  const std::size_t t_len = tokens.dim(0);
  if (t_len < 2) throw ConfigError("state_changes_all: need at least 2 frames");
  std::vector<Tensor> blocks;
  blocks.reserve(t_len - 1);
  for (std::size_t delta = 1; delta < t_len; ++delta) {
    blocks.push_back(state_changes(tokens, delta, p).s);
  }
  StateChangeMatrix out;
  out.s = concat(blocks, 0);
  out.delta = 0;  // marks the stacked form
  return out;
}

Tensor pool_video(const StateChangeMatrix& sc) {
  if (!sc.s.defined() || sc.s.rank() != 3) {
    throw DimensionError("pool_video: expected [T',N,D] state changes");
  }
  return mean(mean(sc.s, 0), 0);
}

Tensor classify(const Tensor& v, const InteractionParams& p) {
  if (v.rank() != 1 || v.dim(0) != p.head_w.dim(0)) {
    throw DimensionError("classify: vector " + shape_str(v.shape()) +
                         " does not match head " + shape_str(p.head_w.shape()));
  }
  const std::size_t k = p.head_w.dim(1);
  return reshape(add_bias(matmul(reshape(v, {1, v.dim(0)}), p.head_w), p.head_b), {k});
}

}  // namespace objvid
