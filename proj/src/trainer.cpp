#include "objvid/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <json.hpp>

#include "objvid/errors.hpp"
#include "objvid/gradcheck.hpp"
#include "objvid/rng.hpp"
#include "objvid/segmentation.hpp"
#include "objvid/stf.hpp"

namespace objvid {

namespace {

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t i) {
  std::uint64_t x = seed + 0x9e3779b97f4a7c15ull * (i + 1);
  x ^= x >> 30;
  x *= 0xbf58476d1ce4e5b9ull;
  x ^= x >> 27;
  return x;
}

const std::set<std::string>& known_config_keys() {
  static const std::set<std::string> keys{
      "frames",        "n_slots",     "d",
      "delta",         "patch",       "iterations",
      "heads",         "tau",         "inner_tau",
      "lambda",
      "lr",            "weight_decay", "batch_size",
      "epochs",        "seed",        "backbone_seed",
      "data_dir",      "out_dir",     "enable_obj",
      "enable_temp",   "normalize_temporal", "negative_cap",
      "cosine_decay",  "temporal_attention", "eval_every",
      "warmup_steps"};
  return keys;
}

nlohmann::json config_to_json(const TrainConfig& c) {
  nlohmann::json j;
  j["frames"] = c.frames;
  j["n_slots"] = c.n_slots;
  j["d"] = c.d;
  j["delta"] = c.delta;
  j["patch"] = c.patch;
  j["iterations"] = c.iterations;
  j["heads"] = c.heads;
  j["tau"] = c.tau;
  j["inner_tau"] = c.inner_tau;
  j["lambda"] = c.lambda;
  j["lr"] = c.lr;
  j["weight_decay"] = c.weight_decay;
  j["batch_size"] = c.batch_size;
  j["epochs"] = c.epochs;
  j["seed"] = c.seed;
  j["backbone_seed"] = c.backbone_seed;
  j["data_dir"] = c.data_dir;
  j["out_dir"] = c.out_dir;
  j["enable_obj"] = c.enable_obj;
  j["enable_temp"] = c.enable_temp;
  j["normalize_temporal"] = c.normalize_temporal;
  j["negative_cap"] = c.negative_cap;
  j["cosine_decay"] = c.cosine_decay;
  j["warmup_steps"] = c.warmup_steps;
  j["temporal_attention"] = c.temporal_attention;
  j["eval_every"] = c.eval_every;
  return j;
}

TrainConfig config_from_json(const nlohmann::json& j) {
  for (const auto& item : j.items()) {
    if (!known_config_keys().count(item.key())) {
      throw ConfigError("unknown config key: " + item.key());
    }
  }
  TrainConfig c;
  try {
    c.frames = j.value("frames", c.frames);
    c.n_slots = j.value("n_slots", c.n_slots);
    c.d = j.value("d", c.d);
    c.delta = j.value("delta", c.delta);
    c.patch = j.value("patch", c.patch);
    c.iterations = j.value("iterations", c.iterations);
    c.heads = j.value("heads", c.heads);
    c.tau = j.value("tau", c.tau);
    c.inner_tau = j.value("inner_tau", c.inner_tau);
    c.lambda = j.value("lambda", c.lambda);
    c.lr = j.value("lr", c.lr);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.epochs = j.value("epochs", c.epochs);
    c.seed = j.value("seed", c.seed);
    c.backbone_seed = j.value("backbone_seed", c.backbone_seed);
    c.data_dir = j.value("data_dir", c.data_dir);
    c.out_dir = j.value("out_dir", c.out_dir);
    c.enable_obj = j.value("enable_obj", c.enable_obj);
    c.enable_temp = j.value("enable_temp", c.enable_temp);
    c.normalize_temporal = j.value("normalize_temporal", c.normalize_temporal);
    c.negative_cap = j.value("negative_cap", c.negative_cap);
    c.cosine_decay = j.value("cosine_decay", c.cosine_decay);
    c.warmup_steps = j.value("warmup_steps", c.warmup_steps);
    c.temporal_attention = j.value("temporal_attention", c.temporal_attention);
    c.eval_every = j.value("eval_every", c.eval_every);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad config value: ") + e.what());
  }
  return c;
}

LossConfig loss_config(const TrainConfig& c) {
  LossConfig lc;
  lc.tau = c.tau;
  lc.inner_tau = c.inner_tau;
  lc.lambda = c.lambda;
  lc.normalize_temporal = c.normalize_temporal;
  lc.negative_cap = c.negative_cap;
  lc.enable_obj = c.enable_obj;
  lc.enable_temp = c.enable_temp;
  return lc;
}

void append_params(std::vector<NamedParam>& out, const std::string& prefix,
                   const std::vector<std::string>& names, const std::vector<Tensor>& tensors) {
  if (names.size() != tensors.size()) {
    throw ContractError("parameter name list out of sync with tensor list");
  }
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (tensors[i].defined()) out.push_back({prefix + names[i], tensors[i]});
  }
}

}  // namespace

TrainConfig parse_train_config(const std::string& json_text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(json_text);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("config is not valid json: ") + e.what());
  }
  return config_from_json(j);
}

TrainConfig load_train_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open config file: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_train_config(ss.str());
}

std::string train_config_json(const TrainConfig& c) { return config_to_json(c).dump(2); }

void validate_config(const TrainConfig& c) {
  if (c.frames < 2) throw ConfigError("clip length must be at least 2 frames");
  if (c.delta < 1) throw ConfigError("temporal interval must be at least 1");
  if (c.delta >= c.frames) throw ConfigError("temporal interval exceeds clip length");
  if (c.batch_size < 2) {
    throw ConfigError("batch size must be at least 2: the losses need in-batch negatives");
  }
  if (c.tau <= 0.0) throw ConfigError("temperature must be positive");
  if (c.inner_tau < 0.0) throw ConfigError("inner temperature must be nonnegative");
  if (c.lr <= 0.0) throw ConfigError("learning rate must be positive");
  if (c.n_slots == 0 || c.d == 0 || c.patch == 0) throw ConfigError("empty model geometry");
  if (c.temporal_attention) {
    throw ConfigError(
        "temporal attention token mixer is not implemented; set temporal_attention=false");
  }
}

std::uint64_t config_hash(const TrainConfig& c) {
  std::string s = config_to_json(c).dump();
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  return h;
}

Model make_model(const TrainConfig& c, std::size_t classes) {
  if (classes < 2) throw ConfigError("need at least 2 classes");
  Model m;
  m.fusion = make_temporal_fusion(c.d);
  m.slots = make_slot_params(c.n_slots, c.d, mix_seed(c.seed, 101), c.iterations, true);
  m.inter = make_interaction_params(c.d, classes, c.heads, mix_seed(c.seed, 202));
  m.classes = classes;
  return m;
}

std::vector<NamedParam> model_params(const Model& m) {
  std::vector<NamedParam> out;
  out.push_back({"fusion.kernel", m.fusion.kernel});
  append_params(out, "slot.",
                {"q", "wq", "wk", "wv", "gru.wz", "gru.uz", "gru.bz", "gru.wr", "gru.ur",
                 "gru.br", "gru.wn", "gru.un", "gru.bn", "input_gain", "input_bias",
                 "slot_gain", "slot_bias", "mlp_gain", "mlp_bias", "mlp_w1", "mlp_b1",
                 "mlp_w2", "mlp_b2"},
                {m.slots.q, m.slots.wq, m.slots.wk, m.slots.wv, m.slots.gru.wz,
                 m.slots.gru.uz, m.slots.gru.bz, m.slots.gru.wr, m.slots.gru.ur,
                 m.slots.gru.br, m.slots.gru.wn, m.slots.gru.un, m.slots.gru.bn,
                 m.slots.input_gain, m.slots.input_bias, m.slots.slot_gain,
                 m.slots.slot_bias, m.slots.mlp_gain, m.slots.mlp_bias, m.slots.mlp_w1,
                 m.slots.mlp_b1, m.slots.mlp_w2, m.slots.mlp_b2});
  append_params(out, "inter.",
                {"ln1_gain", "ln1_bias", "wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo",
                 "ln2_gain", "ln2_bias", "ffn_w1", "ffn_b1", "ffn_w2", "ffn_b2", "ti_w1",
                 "ti_b1", "ti_w2", "ti_b2", "head_w", "head_b"},
                {m.inter.ln1_gain, m.inter.ln1_bias, m.inter.wq, m.inter.bq, m.inter.wk,
                 m.inter.bk, m.inter.wv, m.inter.bv, m.inter.wo, m.inter.bo,
                 m.inter.ln2_gain, m.inter.ln2_bias, m.inter.ffn_w1, m.inter.ffn_b1,
                 m.inter.ffn_w2, m.inter.ffn_b2, m.inter.ti_w1, m.inter.ti_b1,
                 m.inter.ti_w2, m.inter.ti_b2, m.inter.head_w, m.inter.head_b});
  return out;
}

void adamw_step(std::vector<NamedParam>& params, AdamW& opt) {
  if (opt.m.empty()) {
    opt.m.resize(params.size());
    opt.v.resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
      opt.m[i] = Tensor::zeros(params[i].tensor.shape());
      opt.v[i] = Tensor::zeros(params[i].tensor.shape());
    }
  }
  if (opt.m.size() != params.size()) {
    throw ContractError("optimizer moments out of sync with parameter list");
  }
  ++opt.step_count;
  double t = static_cast<double>(opt.step_count);
  double bc1 = 1.0 - std::pow(opt.beta1, t);
  double bc2 = 1.0 - std::pow(opt.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = params[i].tensor;
    if (opt.m[i].shape() != p.shape()) {
      throw ContractError("optimizer moment shape mismatch at " + params[i].name);
    }
    std::vector<double>& pd = p.data();
    std::vector<double>& md = opt.m[i].data();
    std::vector<double>& vd = opt.v[i].data();
    const std::vector<double>* gd = p.has_grad() ? &p.grad() : nullptr;
    for (std::size_t k = 0; k < pd.size(); ++k) {
      double g = gd ? (*gd)[k] : 0.0;
      md[k] = opt.beta1 * md[k] + (1.0 - opt.beta1) * g;
      vd[k] = opt.beta2 * vd[k] + (1.0 - opt.beta2) * g * g;
      double mhat = md[k] / bc1;
      double vhat = vd[k] / bc2;
      pd[k] -= opt.lr * (mhat / (std::sqrt(vhat) + opt.eps) + opt.weight_decay * pd[k]);
    }
  }
}

double clip_gradients(std::vector<NamedParam>& params, double max_norm) {
  double sq = 0.0;
  for (const NamedParam& p : params) {
    if (!p.tensor.has_grad()) continue;
    for (double g : p.tensor.grad()) sq += g * g;
  }
  double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    double scale = max_norm / norm;
    for (NamedParam& p : params) {
      if (!p.tensor.has_grad()) continue;
      for (double& g : p.tensor.impl()->grad) g *= scale;
    }
  }
  return norm;
}

std::vector<EncodedClip> encode_split(const Manifest& m,
                                      const std::vector<ManifestEntry>& split,
                                      const TrainConfig& c) {
  std::vector<EncodedClip> out;
  out.reserve(split.size());
  for (const ManifestEntry& e : split) {
    VideoClip clip = load_clip(m, e);
    EncodedClip ec;
    ec.id = e.id;
    ec.label = e.label;
    ec.feats = encode_stub(clip, c.patch, c.d, c.backbone_seed);
    ec.gt_masks = clip.gt_masks;
    out.push_back(std::move(ec));
  }
  return out;
}

ClipForward forward_clip(const Model& m, const FrameFeatures& f, std::size_t delta) {
  ClipForward out;
  Tensor fused = temporal_fusion(f.grid, m.fusion);
  out.slots = decompose(fused, m.slots);
  out.interacted = object_interact(out.slots.tokens, m.inter);
  out.states = state_changes(out.interacted, delta, m.inter);
  out.logits = classify(pool_video(out.states), m.inter);
  return out;
}

std::vector<std::vector<std::size_t>> epoch_batches(const std::vector<std::size_t>& labels,
                                                    std::size_t batch_size,
                                                    std::uint64_t seed, std::size_t epoch) {
  if (batch_size < 2) throw ConfigError("batch size must be at least 2");
  std::map<std::size_t, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < labels.size(); ++i) groups[labels[i]].push_back(i);

  Rng rng(mix_seed(seed, 7700 + epoch));
  std::vector<std::vector<std::size_t>> queues;
  for (auto& [label, members] : groups) {
    rng.shuffle(members);
    queues.push_back(members);
  }
  std::vector<std::size_t> class_order(queues.size());
  for (std::size_t i = 0; i < queues.size(); ++i) class_order[i] = i;
  rng.shuffle(class_order);

  // Deal two clips of a class at a time so every full batch carries
  // same-label pairs for the positive pools.
  std::vector<std::size_t> flat;
  std::vector<std::size_t> cursor(queues.size(), 0);
  bool remaining = true;
  while (remaining) {
    remaining = false;
    for (std::size_t c : class_order) {
      std::size_t take = std::min<std::size_t>(2, queues[c].size() - cursor[c]);
      for (std::size_t k = 0; k < take; ++k) flat.push_back(queues[c][cursor[c]++]);
      if (cursor[c] < queues[c].size()) remaining = true;
    }
  }

  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t i = 0; i < flat.size(); i += batch_size) {
    std::size_t end = std::min(flat.size(), i + batch_size);
    if (end - i < 2) break;
    batches.emplace_back(flat.begin() + static_cast<long>(i),
                         flat.begin() + static_cast<long>(end));
  }
  return batches;
}

StepLog train_one_batch(Model& model, AdamW& opt, const std::vector<EncodedClip>& clips,
                        const std::vector<std::size_t>& batch, const TrainConfig& c,
                        std::size_t epoch, std::size_t batch_idx, std::size_t step) {
  if (batch.size() < 2) throw ConfigError("a training batch needs at least 2 clips");
  std::vector<ClipTerms> terms;
  terms.reserve(batch.size());
  for (std::size_t idx : batch) {
    const EncodedClip& ec = clips.at(idx);
    ClipForward f = forward_clip(model, ec.feats, c.delta);
    ClipTerms ct;
    ct.tokens = f.slots.tokens;
    ct.cls = ec.feats.cls;
    ct.s = f.states.s;
    ct.logits = f.logits;
    ct.label = ec.label;
    terms.push_back(std::move(ct));
  }

  LossConfig lc = loss_config(c);
  StepLog log;
  log.step = step;
  log.epoch = epoch;
  log.batch = batch_idx;
  std::vector<Tensor> totals;
  bool finite = true;
  for (std::size_t i = 0; i < terms.size(); ++i) {
    LossBreakdown b = clip_loss(terms, i, lc);
    log.l_obj += b.obj.value();
    log.l_temp += b.temp.value();
    log.l_cls += b.cls.value();
    finite = finite && std::isfinite(b.total.value());
    totals.push_back(b.total);
  }
  double inv = 1.0 / static_cast<double>(terms.size());
  log.l_obj *= inv;
  log.l_temp *= inv;
  log.l_cls *= inv;
  Tensor batch_total = mean_list(totals);
  log.total = batch_total.value();

  if (!finite || !std::isfinite(log.total)) {
    std::string ids;
    for (std::size_t i = 0; i < batch.size(); ++i) {
      if (!std::isfinite(totals[i].value())) {
        if (!ids.empty()) ids += ", ";
        ids += clips.at(batch[i]).id;
      }
    }
    if (ids.empty()) ids = "unidentified";
    throw NanAbortError("non-finite loss at epoch " + std::to_string(epoch) + " batch " +
                        std::to_string(batch_idx) + " (clips: " + ids + ")");
  }

  std::vector<NamedParam> params = model_params(model);
  for (NamedParam& p : params) p.tensor.zero_grad();
  batch_total.backward();
  clip_gradients(params, 1.0);
  adamw_step(params, opt);
  return log;
}

EvalReport evaluate_split(const Model& m, const std::vector<EncodedClip>& clips,
                          const TrainConfig& c) {
  NoGradGuard guard;
  EvalReport rep;
  rep.clips = clips.size();
  if (clips.empty()) return rep;

  std::size_t correct = 0, seg_count = 0;
  double jf_acc = 0.0, rand_acc = 0.0;
  double fg_sum = 0.0, bg_sum = 0.0;
  std::size_t fg_cnt = 0, bg_cnt = 0;

  for (std::size_t ci = 0; ci < clips.size(); ++ci) {
    const EncodedClip& ec = clips[ci];
    ClipForward f = forward_clip(m, ec.feats, c.delta);

    const std::vector<double>& lg = f.logits.data();
    std::size_t pred = 0;
    for (std::size_t k = 1; k < lg.size(); ++k) {
      if (lg[k] > lg[pred]) pred = k;
    }
    if (pred == ec.label) ++correct;

    if (!ec.gt_masks.defined()) continue;
    rep.has_masks = true;
    std::size_t h_img = ec.gt_masks.dim(1), w_img = ec.gt_masks.dim(2);
    MaskSet ms = binarize(f.slots.attn, ec.feats.h, ec.feats.w, h_img, w_img);
    SegScore sc = evaluate_clip(ms, ec.gt_masks);
    if (sc.empty_gt) continue;
    ++seg_count;
    jf_acc += sc.jf;
    rand_acc += random_baseline_jf(ec.gt_masks, c.n_slots, 8, mix_seed(9700, ci));

    // State-change norms per slot, split by the slot-to-object matching.
    auto pairs = match_tracks(ms, ec.gt_masks);
    std::set<std::size_t> fg_slots;
    for (auto [s, g] : pairs) fg_slots.insert(s);
    std::size_t rows = f.states.s.dim(0), n = f.states.s.dim(1), d = f.states.s.dim(2);
    const std::vector<double>& sd = f.states.s.data();
    for (std::size_t slot = 0; slot < n; ++slot) {
      double mean_norm = 0.0;
      for (std::size_t r = 0; r < rows; ++r) {
        double sq = 0.0;
        for (std::size_t k = 0; k < d; ++k) {
          double v = sd[(r * n + slot) * d + k];
          sq += v * v;
        }
        mean_norm += std::sqrt(sq);
      }
      mean_norm /= static_cast<double>(rows);
      if (fg_slots.count(slot)) {
        fg_sum += mean_norm;
        ++fg_cnt;
      } else {
        bg_sum += mean_norm;
        ++bg_cnt;
      }
    }
  }

  rep.accuracy = static_cast<double>(correct) / static_cast<double>(clips.size());
  if (seg_count > 0) {
    rep.jf = jf_acc / static_cast<double>(seg_count);
    rep.random_jf = rand_acc / static_cast<double>(seg_count);
  }
  if (fg_cnt > 0 && bg_cnt > 0 && bg_sum > 0.0) {
    rep.fg_bg_norm_ratio = (fg_sum / static_cast<double>(fg_cnt)) /
                           (bg_sum / static_cast<double>(bg_cnt));
  }
  return rep;
}

namespace {

nlohmann::json report_to_json(const EvalReport& r) {
  nlohmann::json j;
  j["accuracy"] = r.accuracy;
  j["clips"] = r.clips;
  j["has_masks"] = r.has_masks;
  if (r.has_masks) {
    j["jf"] = r.jf;
    j["random_jf"] = r.random_jf;
    j["fg_bg_norm_ratio"] = r.fg_bg_norm_ratio;
  }
  return j;
}

}  // namespace

TrainResult train(const TrainConfig& c) {
  validate_config(c);
  if (c.data_dir.empty()) throw ConfigError("train: data_dir is required");
  Manifest man = load_manifest(c.data_dir + "/manifest.json");
  if (man.frames != c.frames) {
    throw ConfigError("config clip length disagrees with the dataset manifest");
  }

  std::vector<EncodedClip> train_clips = encode_split(man, man.train, c);
  std::vector<EncodedClip> val_clips = encode_split(man, man.val, c);
  if (train_clips.empty()) throw ConfigError("train: empty training split");

  std::vector<std::size_t> labels;
  for (const EncodedClip& ec : train_clips) labels.push_back(ec.label);

  TrainResult result;
  result.model = make_model(c, man.classes);
  AdamW opt;
  opt.lr = c.lr;
  opt.weight_decay = c.weight_decay;

  std::ofstream log_file;
  if (!c.out_dir.empty()) {
    std::filesystem::create_directories(c.out_dir);
    log_file.open(c.out_dir + "/train_log.jsonl");
    if (!log_file) throw FormatError("train: cannot open log file in " + c.out_dir);
  }

  std::size_t steps_per_epoch = epoch_batches(labels, c.batch_size, c.seed, 0).size();
  std::size_t total_steps = std::max<std::size_t>(1, c.epochs * steps_per_epoch);
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < c.epochs; ++epoch) {
    auto batches = epoch_batches(labels, c.batch_size, c.seed, epoch);
    for (std::size_t b = 0; b < batches.size(); ++b) {
      if (c.warmup_steps > 0 && step < c.warmup_steps) {
        opt.lr = c.lr * static_cast<double>(step + 1) / static_cast<double>(c.warmup_steps);
      } else if (c.cosine_decay) {
        double span = static_cast<double>(std::max<std::size_t>(total_steps - c.warmup_steps, 1));
        double frac = static_cast<double>(step - c.warmup_steps) / span;
        opt.lr = c.lr * 0.5 * (1.0 + std::cos(3.14159265358979323846 * frac));
      } else {
        opt.lr = c.lr;
      }
      StepLog log = train_one_batch(result.model, opt, train_clips, batches[b], c, epoch, b,
                                    step);
      result.log.push_back(log);
      if (log_file) {
        nlohmann::json j{{"step", log.step},   {"epoch", log.epoch}, {"batch", log.batch},
                         {"l_obj", log.l_obj}, {"l_temp", log.l_temp},
                         {"l_cls", log.l_cls}, {"total", log.total}};
        log_file << j.dump() << "\n";
        log_file.flush();
      }
      ++step;
    }
    if (c.eval_every > 0 && (epoch + 1) % c.eval_every == 0 && log_file) {
      EvalReport r = evaluate_split(result.model, val_clips, c);
      nlohmann::json j{{"epoch", epoch}, {"event", "val"}, {"accuracy", r.accuracy}};
      log_file << j.dump() << "\n";
      log_file.flush();
    }
  }

  result.train_report = evaluate_split(result.model, train_clips, c);
  result.val_report = evaluate_split(result.model, val_clips, c);

  if (!c.out_dir.empty()) {
    save_checkpoint(c.out_dir + "/checkpoint", result.model, opt, step, c);
    nlohmann::json metrics{{"steps", step},
                           {"train", report_to_json(result.train_report)},
                           {"val", report_to_json(result.val_report)}};
    std::ofstream mf(c.out_dir + "/metrics.json");
    mf << metrics.dump(2) << "\n";
  }
  return result;
}

void save_checkpoint(const std::string& dir, const Model& m, const AdamW& opt,
                     std::size_t step, const TrainConfig& c) {
  std::filesystem::create_directories(dir);
  std::vector<NamedParam> params = model_params(m);

  nlohmann::json index;
  index["step"] = step;
  index["classes"] = m.classes;
  index["config"] = config_to_json(c);
  index["config_hash"] = config_hash(c);
  index["opt"] = {{"lr", opt.lr},
                  {"beta1", opt.beta1},
                  {"beta2", opt.beta2},
                  {"eps", opt.eps},
                  {"weight_decay", opt.weight_decay},
                  {"step_count", opt.step_count},
                  {"has_moments", !opt.m.empty()}};
  nlohmann::json names = nlohmann::json::array();
  for (const NamedParam& p : params) names.push_back(p.name);
  index["params"] = names;

  for (const NamedParam& p : params) {
    stf_write(dir + "/p_" + p.name + ".stf", p.tensor);
  }
  if (!opt.m.empty()) {
    if (opt.m.size() != params.size()) {
      throw ContractError("checkpoint: moments out of sync with parameters");
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
      stf_write(dir + "/m_" + params[i].name + ".stf", opt.m[i]);
      stf_write(dir + "/v_" + params[i].name + ".stf", opt.v[i]);
    }
  }
  std::ofstream out(dir + "/index.json");
  if (!out) throw FormatError("checkpoint: cannot write index in " + dir);
  out << index.dump(2) << "\n";
}

Checkpoint load_checkpoint(const std::string& dir) {
  std::ifstream in(dir + "/index.json");
  if (!in) throw FormatError("checkpoint: cannot open " + dir + "/index.json");
  nlohmann::json index;
  try {
    in >> index;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint: bad index json: ") + e.what());
  }

  Checkpoint ck;
  try {
    ck.step = index.at("step").get<std::size_t>();
    ck.config = config_from_json(index.at("config"));
    std::uint64_t stored_hash = index.at("config_hash").get<std::uint64_t>();
    if (stored_hash != config_hash(ck.config)) {
      throw FormatError("checkpoint: config hash mismatch");
    }
    std::size_t classes = index.at("classes").get<std::size_t>();
    ck.model = make_model(ck.config, classes);

    const auto& opt_j = index.at("opt");
    ck.opt.lr = opt_j.at("lr").get<double>();
    ck.opt.beta1 = opt_j.at("beta1").get<double>();
    ck.opt.beta2 = opt_j.at("beta2").get<double>();
    ck.opt.eps = opt_j.at("eps").get<double>();
    ck.opt.weight_decay = opt_j.at("weight_decay").get<double>();
    ck.opt.step_count = opt_j.at("step_count").get<std::size_t>();

    std::vector<NamedParam> params = model_params(ck.model);
    std::vector<std::string> names;
    for (const auto& n : index.at("params")) names.push_back(n.get<std::string>());
    if (names.size() != params.size()) {
      throw FormatError("checkpoint: parameter list size mismatch");
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
      if (names[i] != params[i].name) {
        throw FormatError("checkpoint: parameter name mismatch at " + names[i]);
      }
      Tensor loaded = stf_read(dir + "/p_" + names[i] + ".stf");
      if (loaded.shape() != params[i].tensor.shape()) {
        throw FormatError("checkpoint: shape mismatch at " + names[i]);
      }
      params[i].tensor.data() = loaded.data();
    }
    if (opt_j.at("has_moments").get<bool>()) {
      ck.opt.m.resize(params.size());
      ck.opt.v.resize(params.size());
      for (std::size_t i = 0; i < params.size(); ++i) {
        ck.opt.m[i] = stf_read(dir + "/m_" + names[i] + ".stf");
        ck.opt.v[i] = stf_read(dir + "/v_" + names[i] + ".stf");
        if (ck.opt.m[i].shape() != params[i].tensor.shape() ||
            ck.opt.v[i].shape() != params[i].tensor.shape()) {
          throw FormatError("checkpoint: moment shape mismatch at " + names[i]);
        }
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint: missing field: ") + e.what());
  }
  return ck;
}

namespace {

Tensor random_tensor(const Shape& shape, Rng& rng, double scale, bool requires_grad) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  std::vector<double> v(n);
  for (double& x : v) x = rng.normal(0.0, scale);
  return Tensor::from_data(shape, v, requires_grad);
}

void wake_tensor(Tensor& t, Rng& rng, double scale) {
  for (double& x : t.data()) x = rng.normal(0.0, scale);
}

GradCheckReport check_fusion(std::uint64_t seed) {
  Rng rng(seed);
  TemporalFusionParams fusion = make_temporal_fusion(8);
  wake_tensor(fusion.kernel, rng, 0.3);
  Tensor grid = random_tensor({2, 4, 8}, rng, 1.0, false);
  Tensor probe = random_tensor({2, 4, 8}, rng, 1.0, false);
  GradCheck gc = grad_check([&] { return sum_all(mul(temporal_fusion(grid, fusion), probe)); },
                            {fusion.kernel});
  return {"fusion", gc.max_rel_err, gc.checked};
}

GradCheckReport check_slots(std::uint64_t seed) {
  Rng rng(seed);
  SlotParams slots = make_slot_params(2, 8, mix_seed(seed, 1), 2, true);
  wake_tensor(slots.mlp_w2, rng, 0.2);
  wake_tensor(slots.mlp_b2, rng, 0.2);
  Tensor grid = random_tensor({2, 4, 8}, rng, 1.0, false);
  Tensor probe_t = random_tensor({2, 2, 8}, rng, 1.0, false);
  Tensor probe_a = random_tensor({2, 2, 4}, rng, 1.0, false);
  GradCheck gc = grad_check(
      [&] {
        SlotOutput out = decompose(grid, slots);
        return add(sum_all(mul(out.tokens, probe_t)), sum_all(mul(out.attn, probe_a)));
      },
      slot_param_list(slots), 1e-3);
  return {"slots", gc.max_rel_err, gc.checked};
}

InteractionParams woken_interaction(std::uint64_t seed, Rng& rng) {
  InteractionParams inter = make_interaction_params(8, 3, 2, seed);
  // The sweep probes operator gradients, so keep the instance in a
  // well-conditioned regime regardless of the training-time init scale.
  for (double& v : inter.ti_w1.data()) v *= 0.05;
  wake_tensor(inter.wo, rng, 0.2);
  wake_tensor(inter.bo, rng, 0.1);
  wake_tensor(inter.ffn_w2, rng, 0.2);
  wake_tensor(inter.ffn_b2, rng, 0.1);
  wake_tensor(inter.ti_w2, rng, 0.2);
  wake_tensor(inter.head_w, rng, 0.2);
  wake_tensor(inter.head_b, rng, 0.1);
  return inter;
}

GradCheckReport check_interaction(std::uint64_t seed) {
  Rng rng(seed);
  InteractionParams inter = woken_interaction(mix_seed(seed, 2), rng);
  Tensor tokens = random_tensor({2, 2, 8}, rng, 1.0, false);
  Tensor probe_s = random_tensor({1, 2, 8}, rng, 1.0, false);
  Tensor probe_l = random_tensor({3}, rng, 1.0, false);
  GradCheck gc = grad_check(
      [&] {
        Tensor mixed = object_interact(tokens, inter);
        StateChangeMatrix st = state_changes(mixed, 1, inter);
        Tensor logits = classify(pool_video(st), inter);
        return add(sum_all(mul(st.s, probe_s)), sum_all(mul(logits, probe_l)));
      },
      interaction_param_list(inter), 1e-3);
  return {"interaction", gc.max_rel_err, gc.checked};
}

GradCheckReport check_losses(std::uint64_t seed) {
  Rng rng(seed);
  TemporalFusionParams fusion = make_temporal_fusion(8);
  wake_tensor(fusion.kernel, rng, 0.2);
  SlotParams slots = make_slot_params(2, 8, mix_seed(seed, 3), 2, true);
  wake_tensor(slots.mlp_w2, rng, 0.2);
  InteractionParams inter = woken_interaction(mix_seed(seed, 4), rng);

  std::vector<Tensor> grids, clss;
  for (int i = 0; i < 2; ++i) {
    grids.push_back(random_tensor({2, 4, 8}, rng, 1.0, false));
    clss.push_back(random_tensor({2, 8}, rng, 1.0, false));
  }
  LossConfig lc;
  lc.tau = 0.07;
  lc.lambda = 2.0;  // keeps the random instance away from hinge kinks

  std::vector<Tensor> params{fusion.kernel};
  for (const Tensor& t : slot_param_list(slots)) params.push_back(t);
  for (const Tensor& t : interaction_param_list(inter)) params.push_back(t);

  GradCheck gc = grad_check(
      [&] {
        std::vector<ClipTerms> batch;
        for (int i = 0; i < 2; ++i) {
          Tensor fused = temporal_fusion(grids[i], fusion);
          SlotOutput so = decompose(fused, slots);
          Tensor mixed = object_interact(so.tokens, inter);
          StateChangeMatrix st = state_changes(mixed, 1, inter);
          ClipTerms ct;
          ct.tokens = so.tokens;
          ct.cls = clss[i];
          ct.s = st.s;
          ct.logits = classify(pool_video(st), inter);
          ct.label = static_cast<std::size_t>(i);
          batch.push_back(std::move(ct));
        }
        return add(clip_loss(batch, 0, lc).total, clip_loss(batch, 1, lc).total);
      },
      params, 1e-3);
  return {"losses", gc.max_rel_err, gc.checked};
}

}  // namespace

std::vector<GradCheckReport> gradcheck_modules(const std::string& which,
                                               std::uint64_t seed) {
  std::vector<GradCheckReport> out;
  bool all = which == "all" || which.empty();
  bool matched = false;
  if (all || which == "fusion") {
    out.push_back(check_fusion(mix_seed(seed, 11)));
    matched = true;
  }
  if (all || which == "slots") {
    out.push_back(check_slots(mix_seed(seed, 22)));
    matched = true;
  }
  if (all || which == "interaction") {
    out.push_back(check_interaction(mix_seed(seed, 33)));
    matched = true;
  }
  if (all || which == "losses") {
    out.push_back(check_losses(mix_seed(seed, 44)));
    matched = true;
  }
  if (!matched) {
    throw ConfigError("unknown gradcheck module: " + which +
                      " (use fusion, slots, interaction, losses, or all)");
  }
  return out;
}

}  // namespace objvid
