#include "objvid/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "objvid/errors.hpp"
#include "objvid/rng.hpp"
#include "objvid/stf.hpp"

namespace objvid {

namespace {

constexpr double kTranslateSpeed = 2.0;  // px per frame
constexpr double kSizeSpeed = 1.0;       // half-extent px per frame
constexpr double kMinHalfExtent = 2.0;
constexpr double kOrbitOmega = 3.14159265358979323846 / 6.0;  // rad per frame

struct Pose {
  double x, y, size;
};

Pose pose_at(const ObjectSpec& obj, std::size_t action, std::size_t frame,
             std::size_t canvas, double cam_x, double cam_y) {
  double f = static_cast<double>(frame);
  Pose p{obj.x, obj.y, obj.size};
  switch (static_cast<Action>(action)) {
    case Action::kTranslateLeft:
      p.x -= kTranslateSpeed * f;
      break;
    case Action::kTranslateRight:
      p.x += kTranslateSpeed * f;
      break;
    case Action::kTranslateUp:
      p.y -= kTranslateSpeed * f;
      break;
    case Action::kGrow:
      p.size += kSizeSpeed * f;
      break;
    case Action::kShrink:
      p.size = std::max(kMinHalfExtent, p.size - kSizeSpeed * f);
      break;
    case Action::kRotateOrbit: {
      double c = (static_cast<double>(canvas) - 1.0) / 2.0;
      double dx = obj.x - c, dy = obj.y - c;
      double r = std::hypot(dx, dy);
      double theta = std::atan2(dy, dx) + kOrbitOmega * f;
      p.x = c + r * std::cos(theta);
      p.y = c + r * std::sin(theta);
      break;
    }
  }
  p.x += cam_x;
  p.y += cam_y;
  // Keep the whole shape on canvas; a collapsed range pins it to the center.
  double lo = p.size, hi = static_cast<double>(canvas) - 1.0 - p.size;
  if (lo > hi) {
    p.x = p.y = (static_cast<double>(canvas) - 1.0) / 2.0;
  } else {
    p.x = std::clamp(p.x, lo, hi);
    p.y = std::clamp(p.y, lo, hi);
  }
  return p;
}

bool covers(ShapeKind shape, const Pose& p, std::size_t px, std::size_t py) {
  double dx = static_cast<double>(px) - p.x;
  double dy = static_cast<double>(py) - p.y;
  switch (shape) {
    case ShapeKind::kSquare:
      return std::abs(dx) <= p.size && std::abs(dy) <= p.size;
    case ShapeKind::kCircle:
      return dx * dx + dy * dy <= p.size * p.size;
    case ShapeKind::kTriangle:
      // Apex up: the row's halfwidth widens linearly toward the base.
      return dy >= -p.size && dy <= p.size && std::abs(dx) <= (dy + p.size) * 0.5;
  }
  return false;
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t i) {
  std::uint64_t x = seed + 0x9e3779b97f4a7c15ull * (i + 1);
  x ^= x >> 30;
  x *= 0xbf58476d1ce4e5b9ull;
  x ^= x >> 27;
  return x;
}

}  // namespace

const char* action_name(std::size_t id) {
  switch (static_cast<Action>(id)) {
    case Action::kTranslateLeft: return "translate-left";
    case Action::kTranslateRight: return "translate-right";
    case Action::kTranslateUp: return "translate-up";
    case Action::kGrow: return "grow";
    case Action::kShrink: return "shrink";
    case Action::kRotateOrbit: return "rotate-orbit";
  }
  throw ConfigError("unknown action id");
}

VideoClip generate(const SceneSpec& spec) {
  if (spec.frames < 2) throw ConfigError("generate: a clip needs at least 2 frames");
  if (spec.objects.empty()) throw ConfigError("generate: scene has no objects");
  if (spec.objects.size() > 3) throw ConfigError("generate: at most 3 objects");
  if (spec.action >= kNumActions) throw ConfigError("generate: unknown action id");
  if (spec.canvas < 8) throw ConfigError("generate: canvas too small");

  std::size_t t = spec.frames, hw = spec.canvas;
  std::vector<double> frames(t * hw * hw, 0.0);
  std::vector<double> masks(t * hw * hw, 0.0);
  // Common-mode camera walk, one offset per frame shared by all objects.
  std::vector<double> cam_x(t, 0.0), cam_y(t, 0.0);
  if (spec.jitter > 0.0) {
    Rng cam(spec.seed ^ 0x6a69747465726121ull);
    for (std::size_t f = 1; f < t; ++f) {
      cam_x[f] = cam_x[f - 1] + cam.uniform(-spec.jitter, spec.jitter);
      cam_y[f] = cam_y[f - 1] + cam.uniform(-spec.jitter, spec.jitter);
    }
  }
  for (std::size_t f = 0; f < t; ++f) {
    double* img = frames.data() + f * hw * hw;
    double* msk = masks.data() + f * hw * hw;
    for (std::size_t oi = 0; oi < spec.objects.size(); ++oi) {
      const ObjectSpec& obj = spec.objects[oi];
      Pose p = pose_at(obj, spec.action, f, spec.canvas, cam_x[f], cam_y[f]);
      for (std::size_t py = 0; py < hw; ++py) {
        for (std::size_t px = 0; px < hw; ++px) {
          if (!covers(obj.shape, p, px, py)) continue;
          img[py * hw + px] = obj.color;
          msk[py * hw + px] = static_cast<double>(oi + 1);
        }
      }
    }
  }
  VideoClip clip;
  clip.frames = Tensor::from_data({t, 1, hw, hw}, frames);
  clip.gt_masks = Tensor::from_data({t, hw, hw}, masks);
  clip.label = spec.action;
  return clip;
}

SceneSpec random_scene(std::uint64_t seed, std::size_t action, std::size_t frames,
                       std::size_t canvas, double jitter) {
  if (canvas < 48) throw ConfigError("random_scene: canvas too small for start margins");
  Rng rng(seed);
  SceneSpec spec;
  spec.seed = seed;
  spec.canvas = canvas;
  spec.action = action;
  spec.frames = frames;
  spec.jitter = jitter;
  std::size_t n = 1 + rng.below(3);
  for (std::size_t i = 0; i < n; ++i) {
    ObjectSpec obj;
    obj.shape = static_cast<ShapeKind>(rng.below(3));
    obj.size = 3.0 + static_cast<double>(rng.below(4));
    obj.color = rng.uniform(0.35, 1.0);
    // A 14 px margin keeps 2 px/frame translations clamp-free for T = 8.
    double lo = obj.size + 14.0, hi = static_cast<double>(canvas) - 15.0 - obj.size;
    obj.x = std::floor(rng.uniform(lo, hi + 1.0));
    obj.y = std::floor(rng.uniform(lo, hi + 1.0));
    spec.objects.push_back(obj);
  }
  return spec;
}

Manifest make_split(const std::string& dir, std::size_t n_clips, std::size_t classes,
                    std::size_t frames, std::uint64_t seed, std::size_t canvas,
                    double jitter) {
  if (classes == 0 || classes > kNumActions) {
    throw ConfigError("make_split: class count must be in [1, 6]");
  }
  if (n_clips < classes) throw ConfigError("make_split: need at least one clip per class");

  std::filesystem::create_directories(std::filesystem::path(dir) / "clips");

  Manifest m;
  m.root = dir;
  m.canvas = canvas;
  m.frames = frames;
  m.classes = classes;

  std::vector<std::vector<ManifestEntry>> per_class(classes);
  for (std::size_t i = 0; i < n_clips; ++i) {
    std::size_t label = i % classes;
    SceneSpec spec = random_scene(mix_seed(seed, i), label, frames, canvas, jitter);
    VideoClip clip = generate(spec);

    char id[32];
    std::snprintf(id, sizeof(id), "clip%04zu", i);
    ManifestEntry e;
    e.id = id;
    e.frames_path = std::string("clips/") + id + ".frames.stf";
    e.masks_path = std::string("clips/") + id + ".masks.stf";
    e.label = label;
    stf_write(dir + "/" + e.frames_path, clip.frames);
    stf_write(dir + "/" + e.masks_path, clip.gt_masks);
    per_class[label].push_back(e);
  }

  for (std::size_t c = 0; c < classes; ++c) {
    std::size_t count = per_class[c].size();
    std::size_t val_count = count / 5;
    if (val_count == 0 && count >= 2) val_count = 1;
    std::size_t train_count = count - val_count;
    for (std::size_t i = 0; i < count; ++i) {
      (i < train_count ? m.train : m.val).push_back(per_class[c][i]);
    }
  }

  nlohmann::json j;
  j["canvas"] = m.canvas;
  j["frames"] = m.frames;
  j["classes"] = m.classes;
  for (const char* split : {"train", "val"}) {
    nlohmann::json arr = nlohmann::json::array();
    for (const ManifestEntry& e : (split == std::string("train") ? m.train : m.val)) {
      arr.push_back({{"id", e.id},
                     {"frames", e.frames_path},
                     {"masks", e.masks_path},
                     {"label", e.label}});
    }
    j[split] = arr;
  }
  std::ofstream out(dir + "/manifest.json");
  if (!out) throw FormatError("make_split: cannot write manifest");
  out << j.dump(2) << "\n";
  return m;
}

Manifest load_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("load_manifest: cannot open " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("load_manifest: bad json: ") + e.what());
  }
  Manifest m;
  m.root = std::filesystem::path(path).parent_path().string();
  if (m.root.empty()) m.root = ".";
  try {
    m.canvas = j.at("canvas").get<std::size_t>();
    m.frames = j.at("frames").get<std::size_t>();
    m.classes = j.at("classes").get<std::size_t>();
    for (const char* split : {"train", "val"}) {
      for (const auto& item : j.at(split)) {
        ManifestEntry e;
        e.id = item.at("id").get<std::string>();
        e.frames_path = item.at("frames").get<std::string>();
        e.masks_path = item.at("masks").get<std::string>();
        e.label = item.at("label").get<std::size_t>();
        (split == std::string("train") ? m.train : m.val).push_back(e);
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("load_manifest: missing field: ") + e.what());
  }
  return m;
}

VideoClip load_clip(const Manifest& m, const ManifestEntry& entry) {
  VideoClip clip;
  clip.frames = stf_read(m.root + "/" + entry.frames_path);
  clip.gt_masks = stf_read(m.root + "/" + entry.masks_path);
  clip.label = entry.label;
  validate_clip(clip);
  return clip;
}

}  // namespace objvid
