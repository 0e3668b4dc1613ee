#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "objvid/backbone.hpp"
#include "objvid/dataset.hpp"
#include "objvid/losses.hpp"
#include "objvid/object_time.hpp"
#include "objvid/slot_attention.hpp"
#include "objvid/tensor.hpp"

namespace objvid {

struct TrainConfig {
  std::size_t frames = 8, n_slots = 4, d = 64, delta = 2;
  std::size_t patch = 8, iterations = 3, heads = 4;
  double tau = 0.07, inner_tau = 0.0, lambda = 1.0;
  double lr = 5e-4, weight_decay = 0.01;
  std::size_t batch_size = 16, epochs = 50;
  std::uint64_t seed = 7, backbone_seed = 1234;
  std::string data_dir, out_dir;
  bool enable_obj = true, enable_temp = true, normalize_temporal = true;
  std::size_t negative_cap = 0;
  bool cosine_decay = false;
  std::size_t warmup_steps = 0;  // linear ramp to lr over this many steps
  // Placeholder for a temporal-attention token mixer; enabling it is refused.
  bool temporal_attention = false;
  std::size_t eval_every = 10;
};

TrainConfig parse_train_config(const std::string& json_text);
TrainConfig load_train_config(const std::string& path);
std::string train_config_json(const TrainConfig& c);

// Enforces delta in [1, frames-1], batch size >= 2, and the unsupported
// temporal-attention toggle being off.
void validate_config(const TrainConfig& c);

// FNV-1a over the canonical JSON form; checkpoints carry it so a resume
// against a different configuration is detectable.
std::uint64_t config_hash(const TrainConfig& c);

struct Model {
  TemporalFusionParams fusion;
  SlotParams slots;
  InteractionParams inter;
  std::size_t classes = 0;
};

Model make_model(const TrainConfig& c, std::size_t classes);

struct NamedParam {
  std::string name;
  Tensor tensor;
};

// Stable name -> tensor listing of every trainable parameter.
std::vector<NamedParam> model_params(const Model& m);

struct AdamW {
  double lr = 5e-4, beta1 = 0.9, beta2 = 0.999, eps = 1e-8, weight_decay = 0.0;
  std::size_t step_count = 0;
  std::vector<Tensor> m, v;  // first/second moments, aligned with the param list
};

// Decoupled-weight-decay Adam with bias correction. Missing gradients count
// as zero; moments are allocated on first use.
void adamw_step(std::vector<NamedParam>& params, AdamW& opt);

// Scales all gradients so their global L2 norm is at most max_norm; returns
// the pre-clip norm.
double clip_gradients(std::vector<NamedParam>& params, double max_norm);

struct EncodedClip {
  std::string id;
  std::size_t label = 0;
  FrameFeatures feats;
  Tensor gt_masks;  // undefined when the manifest has none
};

std::vector<EncodedClip> encode_split(const Manifest& m,
                                      const std::vector<ManifestEntry>& split,
                                      const TrainConfig& c);

struct ClipForward {
  SlotOutput slots;
  Tensor interacted;
  StateChangeMatrix states;
  Tensor logits;
};

ClipForward forward_clip(const Model& m, const FrameFeatures& f, std::size_t delta);

// Deterministic label-aware batching: same-class pairs are dealt round-robin
// so every full batch holds at least two clips of several classes. A trailing
// batch smaller than 2 is dropped.
std::vector<std::vector<std::size_t>> epoch_batches(const std::vector<std::size_t>& labels,
                                                    std::size_t batch_size,
                                                    std::uint64_t seed, std::size_t epoch);

struct StepLog {
  std::size_t step = 0, epoch = 0, batch = 0;
  double l_obj = 0.0, l_temp = 0.0, l_cls = 0.0, total = 0.0;
};

// One optimizer step over the given clip indices. Raises NanAbortError with
// the epoch/batch ids when the loss turns non-finite.
StepLog train_one_batch(Model& model, AdamW& opt, const std::vector<EncodedClip>& clips,
                        const std::vector<std::size_t>& batch, const TrainConfig& c,
                        std::size_t epoch, std::size_t batch_idx, std::size_t step);

struct EvalReport {
  double accuracy = 0.0;
  double jf = 0.0;
  double random_jf = 0.0;          // Monte-Carlo random-assignment baseline
  double fg_bg_norm_ratio = 0.0;   // matched-slot vs unmatched-slot state norms
  bool has_masks = false;
  std::size_t clips = 0;
};

EvalReport evaluate_split(const Model& m, const std::vector<EncodedClip>& clips,
                          const TrainConfig& c);

struct TrainResult {
  Model model;
  std::vector<StepLog> log;
  EvalReport train_report, val_report;
};

TrainResult train(const TrainConfig& c);

void save_checkpoint(const std::string& dir, const Model& m, const AdamW& opt,
                     std::size_t step, const TrainConfig& c);

struct Checkpoint {
  Model model;
  AdamW opt;
  std::size_t step = 0;
  TrainConfig config;
};

Checkpoint load_checkpoint(const std::string& dir);

struct GradCheckReport {
  std::string module;
  double max_rel_err = 0.0;
  std::size_t checked = 0;
};

// Finite-difference verification of every trainable module on small random
// instances (T=2, N=2, D=8). `which` selects fusion, slots, interaction,
// losses, or all.
std::vector<GradCheckReport> gradcheck_modules(const std::string& which,
                                               std::uint64_t seed);

}  // namespace objvid
