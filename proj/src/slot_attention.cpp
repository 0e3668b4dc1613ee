#include "objvid/slot_attention.hpp"

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

SlotParams make_slot_params(std::size_t n, std::size_t d, std::uint64_t seed,
                            std::size_t iterations, bool use_mlp) {
  if (n == 0 || d == 0) {
    throw ConfigError("make_slot_params: need n >= 1 and d >= 1");
  }
  if (iterations == 0) throw ConfigError("make_slot_params: need iterations >= 1");
  Rng rng(seed);
  const double s = 1.0 / std::sqrt(static_cast<double>(d));
  SlotParams p;
  p.q = seeded_normal({n, d}, s, rng);
  p.wq = seeded_normal({d, d}, s, rng);
  p.wk = seeded_normal({d, d}, s, rng);
  p.wv = seeded_normal({d, d}, s, rng);
  p.gru.wz = seeded_normal({d, d}, s, rng);
  p.gru.uz = seeded_normal({d, d}, s, rng);
  p.gru.wr = seeded_normal({d, d}, s, rng);
  p.gru.ur = seeded_normal({d, d}, s, rng);
  p.gru.wn = seeded_normal({d, d}, s, rng);
  p.gru.un = seeded_normal({d, d}, s, rng);
  p.gru.bz = Tensor::zeros({d}, true);
  p.gru.br = Tensor::zeros({d}, true);
  p.gru.bn = Tensor::zeros({d}, true);
  p.input_gain = Tensor::full({d}, 1.0, true);
  p.input_bias = Tensor::zeros({d}, true);
  p.slot_gain = Tensor::full({d}, 1.0, true);
  p.slot_bias = Tensor::zeros({d}, true);
  p.iterations = iterations;
  p.use_mlp = use_mlp;
  if (use_mlp) {
    p.mlp_gain = Tensor::full({d}, 1.0, true);
    p.mlp_bias = Tensor::zeros({d}, true);
    p.mlp_w1 = seeded_normal({d, d}, s, rng);
    p.mlp_b1 = Tensor::zeros({d}, true);
    p.mlp_w2 = Tensor::zeros({d, d}, true);
    p.mlp_b2 = Tensor::zeros({d}, true);
  }
  return p;
}

std::vector<Tensor> slot_param_list(const SlotParams& p) {
  std::vector<Tensor> out = {p.q,          p.wq,         p.wk,        p.wv,
                             p.gru.wz,     p.gru.uz,     p.gru.bz,    p.gru.wr,
                             p.gru.ur,     p.gru.br,     p.gru.wn,    p.gru.un,
                             p.gru.bn,     p.input_gain, p.input_bias,
                             p.slot_gain,  p.slot_bias};
  if (p.use_mlp) {
    out.insert(out.end(),
               {p.mlp_gain, p.mlp_bias, p.mlp_w1, p.mlp_b1, p.mlp_w2, p.mlp_b2});
  }
  return out;
}

std::pair<Tensor, Tensor> slot_step(const Tensor& slots, const Tensor& features,
                                    const SlotParams& p) {
  if (slots.rank() != 2 || features.rank() != 2 || slots.dim(1) != features.dim(1)) {
    throw DimensionError("slot_step: slots " + shape_str(slots.shape()) +
                         " and features " + shape_str(features.shape()) +
                         " must be rank-2 with a shared channel dim");
  }
  const std::size_t d = slots.dim(1);
  Tensor f_n = layer_norm(features, p.input_gain, p.input_bias);
  Tensor s_n = layer_norm(slots, p.slot_gain, p.slot_bias);
  Tensor q = matmul(s_n, p.wq);
  Tensor k = matmul(f_n, p.wk);
  Tensor v = matmul(f_n, p.wv);
  Tensor logits = scale(matmul(q, transpose(k)), 1.0 / std::sqrt(static_cast<double>(d)));
  Tensor attn = softmax(logits, 0);  // competition across slots
  Tensor m = row_normalize(attn, kSlotMeanEps);
  Tensor updates = matmul(m, v);
  Tensor next = gru_cell(updates, slots, p.gru);
  if (p.use_mlp) {
    Tensor h = relu(add_bias(matmul(layer_norm(next, p.mlp_gain, p.mlp_bias), p.mlp_w1),
                             p.mlp_b1));
    next = add(next, add_bias(matmul(h, p.mlp_w2), p.mlp_b2));
  }
  return {next, attn};
}

SlotOutput decompose(const Tensor& grid, const SlotParams& p) {
  if (grid.rank() != 3) {
    throw DimensionError("decompose: expected grid [T,HW,D], got " + shape_str(grid.shape()));
  }
  const std::size_t t_len = grid.dim(0), hw = grid.dim(1), d = grid.dim(2);
  const std::size_t n = p.q.dim(0);
  std::vector<Tensor> token_frames, attn_frames;
  token_frames.reserve(t_len);
  attn_frames.reserve(t_len);
  for (std::size_t t = 0; t < t_len; ++t) {
    Tensor f_t = reshape(slice(grid, 0, t, 1), {hw, d});
    Tensor slots = p.q;
    Tensor attn;
    for (std::size_t it = 0; it < p.iterations; ++it) {
      auto [next, a] = slot_step(slots, f_t, p);
      slots = next;
      attn = a;
    }
    token_frames.push_back(reshape(slots, {1, n, d}));
    attn_frames.push_back(reshape(attn, {1, n, hw}));
  }
  SlotOutput out;
  out.tokens = concat(token_frames, 0);
  out.attn = concat(attn_frames, 0);
  return out;
}

}  // namespace objvid
