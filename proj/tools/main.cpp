#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "objvid/backbone.hpp"
#include "objvid/dataset.hpp"
#include "objvid/errors.hpp"
#include "objvid/segmentation.hpp"
#include "objvid/tensor.hpp"
#include "objvid/trainer.hpp"

namespace {

using nlohmann::json;

void print_report(const char* split, const objvid::EvalReport& r) {
  json j;
  j["split"] = split;
  j["clips"] = r.clips;
  j["accuracy"] = r.accuracy;
  if (r.has_masks) {
    j["jf"] = r.jf;
    j["random_jf"] = r.random_jf;
    j["fg_bg_norm_ratio"] = r.fg_bg_norm_ratio;
  }
  std::printf("%s\n", j.dump().c_str());
}

void run_train(const std::string& config_path, const std::string& data_override,
               const std::string& out_override) {
  objvid::TrainConfig c = objvid::load_train_config(config_path);
  if (!data_override.empty()) c.data_dir = data_override;
  if (!out_override.empty()) c.out_dir = out_override;
  objvid::TrainResult r = objvid::train(c);
  print_report("train", r.train_report);
  print_report("val", r.val_report);
  if (!c.out_dir.empty())
    std::printf("checkpoint written to %s/checkpoint\n", c.out_dir.c_str());
}

void run_eval(const std::string& ckpt, const std::string& split_name,
              const std::string& data_override) {
  objvid::Checkpoint ck = objvid::load_checkpoint(ckpt);
  objvid::TrainConfig c = ck.config;
  if (!data_override.empty()) c.data_dir = data_override;
  if (c.data_dir.empty()) throw objvid::ConfigError("no data directory: pass --data");
  objvid::Manifest man =
      objvid::load_manifest((std::filesystem::path(c.data_dir) / "manifest.json").string());
  const auto& split = split_name == "train" ? man.train : man.val;
  auto clips = objvid::encode_split(man, split, c);
  objvid::EvalReport r = objvid::evaluate_split(ck.model, clips, c);
  print_report(split_name.c_str(), r);
}

void run_segment(const std::string& ckpt, const std::string& clip_id,
                 const std::string& out_dir, const std::string& data_override) {
  objvid::Checkpoint ck = objvid::load_checkpoint(ckpt);
  objvid::TrainConfig c = ck.config;
  if (!data_override.empty()) c.data_dir = data_override;
  if (c.data_dir.empty()) throw objvid::ConfigError("no data directory: pass --data");
  objvid::Manifest man =
      objvid::load_manifest((std::filesystem::path(c.data_dir) / "manifest.json").string());

  const objvid::ManifestEntry* entry = nullptr;
  for (const auto& e : man.train)
    if (e.id == clip_id) entry = &e;
  for (const auto& e : man.val)
    if (e.id == clip_id) entry = &e;
  if (!entry) throw objvid::ConfigError("clip id not in manifest: " + clip_id);

  objvid::VideoClip clip = objvid::load_clip(man, *entry);
  objvid::NoGradGuard guard;
  objvid::FrameFeatures f = objvid::encode_stub(clip, c.patch, c.d, c.backbone_seed);
  objvid::ClipForward fwd = objvid::forward_clip(ck.model, f, c.delta);
  const auto& dims = clip.frames.shape();
  objvid::MaskSet masks = objvid::binarize(fwd.slots.attn, f.h, f.w, dims[2], dims[3]);
  objvid::export_masks(out_dir, clip_id, masks);

  json j;
  j["clip_id"] = clip_id;
  if (clip.gt_masks.defined()) {
    objvid::SegScore s = objvid::evaluate_clip(masks, clip.gt_masks);
    j["J"] = s.j;
    j["F"] = s.f;
    j["JF"] = s.jf;
    j["empty_gt"] = s.empty_gt;
  }
  std::ofstream score((std::filesystem::path(out_dir) / (clip_id + ".json")).string());
  score << j.dump(2) << "\n";
  std::printf("%s\n", j.dump().c_str());
}

int run_gradcheck(const std::string& module, std::uint64_t seed) {
  auto reports = objvid::gradcheck_modules(module, seed);
  bool ok = true;
  for (const auto& r : reports) {
    bool pass = r.max_rel_err < 1e-4;
    ok = ok && pass;
    std::printf("%-12s max_rel_err=%.3e checked=%zu %s\n", r.module.c_str(), r.max_rel_err,
                r.checked, pass ? "PASS" : "FAIL");
  }
  return ok ? 0 : 1;
}

void run_gen_data(const std::string& out_dir, std::size_t clips, std::uint64_t seed,
                  std::size_t classes, std::size_t frames, std::size_t canvas,
                  double jitter) {
  objvid::Manifest man =
      objvid::make_split(out_dir, clips, classes, frames, seed, canvas, jitter);
  std::printf("wrote %zu train + %zu val clips to %s\n", man.train.size(), man.val.size(),
              out_dir.c_str());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"object-centric video adaptation toolkit"};
  app.require_subcommand(1);

  std::string config_path, data_dir, out_dir, ckpt, split_name = "val", clip_id;
  std::string module = "all";
  std::uint64_t seed = 7;
  std::size_t clips = 60, classes = 6, frames = 8, canvas = 64;
  double jitter = 1.5;

  CLI::App* train = app.add_subcommand("train", "train a model from a JSON config");
  train->add_option("--config", config_path, "config JSON path")->required();
  train->add_option("--data", data_dir, "override the config's data directory");
  train->add_option("--out", out_dir, "override the config's output directory");

  CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint on a split");
  eval->add_option("--ckpt", ckpt, "checkpoint directory")->required();
  eval->add_option("--split", split_name, "train or val")
      ->check(CLI::IsMember({"train", "val"}));
  eval->add_option("--data", data_dir, "override the checkpoint's data directory");

  CLI::App* segment = app.add_subcommand("segment", "export predicted masks for one clip");
  segment->add_option("--ckpt", ckpt, "checkpoint directory")->required();
  segment->add_option("--clip", clip_id, "clip id from the manifest")->required();
  segment->add_option("--out", out_dir, "output directory")->required();
  segment->add_option("--data", data_dir, "override the checkpoint's data directory");

  CLI::App* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient audit");
  gradcheck->add_option("--module", module, "all, fusion, slots, interaction, or losses");
  gradcheck->add_option("--seed", seed, "instance seed");

  CLI::App* gen = app.add_subcommand("gen-data", "generate a synthetic moving-shapes split");
  gen->add_option("--out", out_dir, "output directory")->required();
  gen->add_option("--clips", clips, "total clip count");
  gen->add_option("--seed", seed, "generator seed");
  gen->add_option("--classes", classes, "action class count");
  gen->add_option("--frames", frames, "frames per clip");
  gen->add_option("--canvas", canvas, "square canvas size");
  gen->add_option("--jitter", jitter, "camera jitter step bound in px per frame");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*train) run_train(config_path, data_dir, out_dir);
    if (*eval) run_eval(ckpt, split_name, data_dir);
    if (*segment) run_segment(ckpt, clip_id, out_dir, data_dir);
    if (*gradcheck) return run_gradcheck(module, seed);
    if (*gen) run_gen_data(out_dir, clips, seed, classes, frames, canvas, jitter);
  } catch (const objvid::NanAbortError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
