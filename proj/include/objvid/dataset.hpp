#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "objvid/backbone.hpp"
#include "objvid/tensor.hpp"

namespace objvid {

enum class ShapeKind { kSquare = 0, kCircle = 1, kTriangle = 2 };

// Action classes are motion laws, not appearances: left/right/up translation
// at 2 px per frame, half-extent growth and shrinkage at 1 px per frame, and
// orbiting the canvas center at pi/6 per frame. No single frame separates
// the translation directions, so labels demand temporal evidence.
enum class Action {
  kTranslateLeft = 0,
  kTranslateRight = 1,
  kTranslateUp = 2,
  kGrow = 3,
  kShrink = 4,
  kRotateOrbit = 5,
};
inline constexpr std::size_t kNumActions = 6;
const char* action_name(std::size_t id);

struct ObjectSpec {
  ShapeKind shape = ShapeKind::kSquare;
  double size = 4.0;   // half extent in pixels
  double color = 1.0;  // gray level in (0,1]
  double x = 0.0, y = 0.0;  // start center
};

struct SceneSpec {
  std::uint64_t seed = 0;
  std::size_t canvas = 64;
  std::vector<ObjectSpec> objects;  // 1 to 3, later entries occlude earlier
  std::size_t action = 0;
  std::size_t frames = 8;
  // Camera jitter: per-frame random-walk offset applied to every object,
  // step size uniform in [-jitter, jitter] px per axis. A class-independent
  // nuisance, so labels cannot be read off absolute positions.
  double jitter = 0.0;
};

// Rasterizes the scene under its action's motion law. Frames are grayscale
// [T,1,H,W] in [0,1]; gt ids are 1-based in list order with background 0.
// Centers are clamped so shapes stay fully on canvas. The jitter camera path
// derives from the scene seed, so masks shift with the frames.
VideoClip generate(const SceneSpec& spec);

// Seed-derived scene with 1-3 objects whose start positions leave room to
// move before clamping.
SceneSpec random_scene(std::uint64_t seed, std::size_t action, std::size_t frames,
                       std::size_t canvas = 64, double jitter = 0.0);

struct ManifestEntry {
  std::string id;
  std::string frames_path;  // relative to the manifest's directory
  std::string masks_path;
  std::size_t label = 0;
};

struct Manifest {
  std::string root;  // directory the relative paths resolve against
  std::size_t canvas = 64, frames = 8, classes = kNumActions;
  std::vector<ManifestEntry> train, val;
};

// Generates n_clips balanced over the first `classes` actions, writes clip
// tensors under dir/clips and the manifest to dir/manifest.json, and splits
// 80/20 per class (validation keeps at least one clip per class).
Manifest make_split(const std::string& dir, std::size_t n_clips, std::size_t classes,
                    std::size_t frames, std::uint64_t seed, std::size_t canvas = 64,
                    double jitter = 0.0);

Manifest load_manifest(const std::string& path);

VideoClip load_clip(const Manifest& m, const ManifestEntry& entry);

}  // namespace objvid
