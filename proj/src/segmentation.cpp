#include "objvid/segmentation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

#include "objvid/errors.hpp"
#include "objvid/rng.hpp"
#include "objvid/stf.hpp"

namespace objvid {

namespace {

// Corner-aligned bilinear sample of a row-major h x w map.
double sample_bilinear(const double* map, std::size_t h, std::size_t w, double y, double x) {
  std::size_t y0 = static_cast<std::size_t>(y);
  std::size_t x0 = static_cast<std::size_t>(x);
  if (y0 + 1 >= h) y0 = h - 1;
  if (x0 + 1 >= w) x0 = w - 1;
  std::size_t y1 = std::min(y0 + 1, h - 1);
  std::size_t x1 = std::min(x0 + 1, w - 1);
  double fy = y - static_cast<double>(y0);
  double fx = x - static_cast<double>(x0);
  double top = map[y0 * w + x0] * (1.0 - fx) + map[y0 * w + x1] * fx;
  double bot = map[y1 * w + x0] * (1.0 - fx) + map[y1 * w + x1] * fx;
  return top * (1.0 - fy) + bot * fy;
}

std::vector<std::uint8_t> boundary_map(const std::vector<std::uint8_t>& m, std::size_t h,
                                       std::size_t w) {
  std::vector<std::uint8_t> out(h * w, 0);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      if (!m[y * w + x]) continue;
      bool edge = (y > 0 && !m[(y - 1) * w + x]) || (y + 1 < h && !m[(y + 1) * w + x]) ||
                  (x > 0 && !m[y * w + x - 1]) || (x + 1 < w && !m[y * w + x + 1]);
      if (edge) out[y * w + x] = 1;
    }
  }
  return out;
}

std::vector<std::uint8_t> dilate_chebyshev(const std::vector<std::uint8_t>& m, std::size_t h,
                                           std::size_t w, std::size_t tol) {
  if (tol == 0) return m;
  std::vector<std::uint8_t> out(h * w, 0);
  long r = static_cast<long>(tol);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      if (!m[y * w + x]) continue;
      for (long dy = -r; dy <= r; ++dy) {
        long yy = static_cast<long>(y) + dy;
        if (yy < 0 || yy >= static_cast<long>(h)) continue;
        for (long dx = -r; dx <= r; ++dx) {
          long xx = static_cast<long>(x) + dx;
          if (xx < 0 || xx >= static_cast<long>(w)) continue;
          out[static_cast<std::size_t>(yy) * w + static_cast<std::size_t>(xx)] = 1;
        }
      }
    }
  }
  return out;
}

std::size_t count_hits(const std::vector<std::uint8_t>& pts,
                       const std::vector<std::uint8_t>& region) {
  std::size_t hits = 0;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    if (pts[i] && region[i]) ++hits;
  }
  return hits;
}

long mask_id(double v) { return std::lround(v); }

std::vector<std::uint8_t> frame_equals(const double* frame, std::size_t count, long id) {
  std::vector<std::uint8_t> out(count, 0);
  for (std::size_t i = 0; i < count; ++i) {
    if (mask_id(frame[i]) == id) out[i] = 1;
  }
  return out;
}

void brute_force_rows(const std::vector<double>& cost, std::size_t rows, std::size_t cols,
                      bool transposed, std::size_t row, std::uint32_t used, double acc,
                      double& best) {
  if (acc >= best) return;
  if (row == rows) {
    best = acc;
    return;
  }
  for (std::size_t col = 0; col < cols; ++col) {
    if (used & (1u << col)) continue;
    double c = transposed ? cost[col * rows + row] : cost[row * cols + col];
    brute_force_rows(cost, rows, cols, transposed, row + 1, used | (1u << col), acc + c, best);
  }
}

}  // namespace

MaskSet binarize(const Tensor& attn, std::size_t h, std::size_t w, std::size_t h_img,
                 std::size_t w_img) {
  if (attn.rank() != 3) throw DimensionError("binarize expects attention of rank 3");
  std::size_t t = attn.dim(0), n = attn.dim(1), hw = attn.dim(2);
  if (hw != h * w) throw DimensionError("binarize: attention area does not match h*w");
  if (n == 0 || h_img == 0 || w_img == 0) throw ConfigError("binarize: empty geometry");

  std::vector<double> out(t * h_img * w_img, 0.0);
  double sy = (h_img > 1) ? static_cast<double>(h - 1) / static_cast<double>(h_img - 1) : 0.0;
  double sx = (w_img > 1) ? static_cast<double>(w - 1) / static_cast<double>(w_img - 1) : 0.0;
  const std::vector<double>& a = attn.data();
  for (std::size_t f = 0; f < t; ++f) {
    for (std::size_t oy = 0; oy < h_img; ++oy) {
      double y = static_cast<double>(oy) * sy;
      for (std::size_t ox = 0; ox < w_img; ++ox) {
        double x = static_cast<double>(ox) * sx;
        std::size_t best_slot = 0;
        double best_val = -1.0;
        for (std::size_t s = 0; s < n; ++s) {
          const double* map = a.data() + (f * n + s) * hw;
          double v = sample_bilinear(map, h, w, y, x);
          if (v > best_val) {
            best_val = v;
            best_slot = s;
          }
        }
        out[(f * h_img + oy) * w_img + ox] = static_cast<double>(best_slot);
      }
    }
  }
  MaskSet ms;
  ms.assignments = Tensor::from_data({t, h_img, w_img}, out);
  ms.n_slots = n;
  return ms;
}

double jaccard(const std::vector<std::uint8_t>& pred, const std::vector<std::uint8_t>& gt) {
  if (pred.size() != gt.size()) throw DimensionError("jaccard: size mismatch");
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    bool p = pred[i] != 0, g = gt[i] != 0;
    if (p && g) ++inter;
    if (p || g) ++uni;
  }
  if (uni == 0) return 1.0;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

double boundary_f(const std::vector<std::uint8_t>& pred, const std::vector<std::uint8_t>& gt,
                  std::size_t h, std::size_t w, std::size_t tol) {
  if (pred.size() != h * w || gt.size() != h * w) {
    throw DimensionError("boundary_f: size mismatch");
  }
  bool identical = true;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if ((pred[i] != 0) != (gt[i] != 0)) {
      identical = false;
      break;
    }
  }
  if (identical) return 1.0;

  std::vector<std::uint8_t> bp = boundary_map(pred, h, w);
  std::vector<std::uint8_t> bg = boundary_map(gt, h, w);
  std::size_t np = static_cast<std::size_t>(std::count(bp.begin(), bp.end(), 1));
  std::size_t ng = static_cast<std::size_t>(std::count(bg.begin(), bg.end(), 1));
  if (np == 0 || ng == 0) return 0.0;

  std::vector<std::uint8_t> bp_dil = dilate_chebyshev(bp, h, w, tol);
  std::vector<std::uint8_t> bg_dil = dilate_chebyshev(bg, h, w, tol);
  double precision = static_cast<double>(count_hits(bp, bg_dil)) / static_cast<double>(np);
  double recall = static_cast<double>(count_hits(bg, bp_dil)) / static_cast<double>(ng);
  if (precision + recall == 0.0) return 0.0;
  return 2.0 * precision * recall / (precision + recall);
}

std::vector<std::pair<std::size_t, std::size_t>> hungarian_match(
    const std::vector<double>& cost, std::size_t a, std::size_t b) {
  if (a == 0 || b == 0) return {};
  if (cost.size() != a * b) throw DimensionError("hungarian_match: cost matrix size mismatch");

  // The augmenting-path solver wants rows <= cols; transpose when needed.
  bool transposed = a > b;
  std::size_t n = transposed ? b : a;
  std::size_t m = transposed ? a : b;
  auto at = [&](std::size_t i, std::size_t j) {
    return transposed ? cost[j * b + i] : cost[i * b + j];
  };

  const double kInf = 1e100;
  std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0);
  std::vector<std::size_t> p(m + 1, 0), way(m + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(m + 1, kInf);
    std::vector<char> used(m + 1, 0);
    do {
      used[j0] = 1;
      std::size_t i0 = p[j0], j1 = 0;
      double delta = kInf;
      for (std::size_t j = 1; j <= m; ++j) {
        if (used[j]) continue;
        double cur = at(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= m; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }

  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (std::size_t j = 1; j <= m; ++j) {
    if (p[j] == 0) continue;
    std::size_t row = p[j] - 1, col = j - 1;
    if (transposed) std::swap(row, col);
    out.emplace_back(row, col);
  }
  std::sort(out.begin(), out.end());
  return out;
}

double min_assignment_brute_force(const std::vector<double>& cost, std::size_t a,
                                  std::size_t b) {
  if (a == 0 || b == 0) return 0.0;
  if (cost.size() != a * b) throw DimensionError("brute force: cost matrix size mismatch");
  bool transposed = a > b;
  std::size_t rows = transposed ? b : a;
  std::size_t cols = transposed ? a : b;
  if (cols > 20) throw ConfigError("brute force oracle limited to small instances");
  double best = 1e300;
  brute_force_rows(cost, rows, cols, transposed, 0, 0, 0.0, best);
  return best;
}

namespace {

struct TrackTable {
  std::size_t t = 0, h = 0, w = 0, n_gt = 0, n_slots = 0;
  std::vector<std::vector<std::uint8_t>> slot_masks;  // [t][n_slots] frame masks
  std::vector<std::vector<std::uint8_t>> gt_masks;    // [t][n_gt]
  std::vector<double> mean_j;                         // [n_slots x n_gt]
};

// Returns false when the ground truth has no foreground id.
bool build_track_table(const MaskSet& masks, const Tensor& gt, TrackTable& table) {
  if (!masks.assignments.defined() || masks.assignments.rank() != 3) {
    throw DimensionError("track matching: assignments must be [T,H,W]");
  }
  if (gt.rank() != 3) throw DimensionError("track matching: gt must be [T,H,W]");
  if (masks.assignments.shape() != gt.shape()) {
    throw DimensionError("track matching: assignment and gt shapes differ");
  }
  if (masks.n_slots == 0) throw ConfigError("track matching: mask set has no slots");

  table.t = gt.dim(0);
  table.h = gt.dim(1);
  table.w = gt.dim(2);
  table.n_slots = masks.n_slots;
  std::size_t area = table.h * table.w;
  const std::vector<double>& gd = gt.data();
  const std::vector<double>& ad = masks.assignments.data();

  std::set<long> ids;
  for (double v : gd) {
    long id = mask_id(v);
    if (id >= 1) ids.insert(id);
  }
  if (ids.empty()) return false;
  std::vector<long> tracks(ids.begin(), ids.end());
  table.n_gt = tracks.size();

  table.slot_masks.assign(table.t * table.n_slots, {});
  table.gt_masks.assign(table.t * table.n_gt, {});
  for (std::size_t f = 0; f < table.t; ++f) {
    const double* af = ad.data() + f * area;
    const double* gf = gd.data() + f * area;
    for (std::size_t s = 0; s < table.n_slots; ++s) {
      table.slot_masks[f * table.n_slots + s] = frame_equals(af, area, static_cast<long>(s));
    }
    for (std::size_t g = 0; g < table.n_gt; ++g) {
      table.gt_masks[f * table.n_gt + g] = frame_equals(gf, area, tracks[g]);
    }
  }

  table.mean_j.assign(table.n_slots * table.n_gt, 0.0);
  for (std::size_t s = 0; s < table.n_slots; ++s) {
    for (std::size_t g = 0; g < table.n_gt; ++g) {
      double acc = 0.0;
      for (std::size_t f = 0; f < table.t; ++f) {
        acc += jaccard(table.slot_masks[f * table.n_slots + s],
                       table.gt_masks[f * table.n_gt + g]);
      }
      table.mean_j[s * table.n_gt + g] = acc / static_cast<double>(table.t);
    }
  }
  return true;
}

std::vector<std::pair<std::size_t, std::size_t>> match_table(const TrackTable& table) {
  std::vector<double> cost(table.mean_j.size());
  for (std::size_t i = 0; i < cost.size(); ++i) cost[i] = 1.0 - table.mean_j[i];
  return hungarian_match(cost, table.n_slots, table.n_gt);
}

}  // namespace

std::vector<std::pair<std::size_t, std::size_t>> match_tracks(const MaskSet& masks,
                                                              const Tensor& gt) {
  TrackTable table;
  if (!build_track_table(masks, gt, table)) return {};
  return match_table(table);
}

SegScore evaluate_clip(const MaskSet& masks, const Tensor& gt) {
  TrackTable table;
  SegScore score;
  if (!build_track_table(masks, gt, table)) {
    score.empty_gt = true;
    return score;
  }
  std::size_t t = table.t, h = table.h, w = table.w;
  std::size_t n_gt = table.n_gt, n_slots = table.n_slots;
  const std::vector<double>& mean_j = table.mean_j;
  const auto& slot_masks = table.slot_masks;
  const auto& gt_masks = table.gt_masks;

  auto pairs = match_table(table);
  std::vector<double> track_j(n_gt, 0.0), track_f(n_gt, 0.0);
  for (auto [s, g] : pairs) {
    track_j[g] = mean_j[s * n_gt + g];
    double acc_f = 0.0;
    for (std::size_t f = 0; f < t; ++f) {
      acc_f += boundary_f(slot_masks[f * n_slots + s], gt_masks[f * n_gt + g], h, w);
    }
    track_f[g] = acc_f / static_cast<double>(t);
  }

  for (std::size_t g = 0; g < n_gt; ++g) {
    score.j += track_j[g];
    score.f += track_f[g];
  }
  score.j /= static_cast<double>(n_gt);
  score.f /= static_cast<double>(n_gt);
  score.jf = 0.5 * (score.j + score.f);
  return score;
}

void export_masks(const std::string& dir, const std::string& clip_id, const MaskSet& masks) {
  if (!masks.assignments.defined() || masks.assignments.rank() != 3) {
    throw DimensionError("export_masks: assignments must be [T,H,W]");
  }
  std::filesystem::create_directories(dir);
  stf_write(dir + "/" + clip_id + ".masks.stf", masks.assignments);

  std::size_t t = masks.assignments.dim(0);
  std::size_t h = masks.assignments.dim(1);
  std::size_t w = masks.assignments.dim(2);
  double scale =
      (masks.n_slots > 1) ? 255.0 / static_cast<double>(masks.n_slots - 1) : 0.0;
  const std::vector<double>& a = masks.assignments.data();
  for (std::size_t f = 0; f < t; ++f) {
    char name[32];
    std::snprintf(name, sizeof(name), "_f%03zu.pgm", f);
    std::ofstream out(dir + "/" + clip_id + name, std::ios::binary);
    if (!out) throw FormatError("export_masks: cannot open pgm for writing");
    out << "P5\n" << w << " " << h << "\n255\n";
    for (std::size_t i = 0; i < h * w; ++i) {
      double v = a[f * h * w + i] * scale;
      unsigned char byte = static_cast<unsigned char>(std::clamp(v, 0.0, 255.0));
      out.put(static_cast<char>(byte));
    }
    if (!out) throw FormatError("export_masks: pgm write failed");
  }
}

double random_baseline_jf(const Tensor& gt, std::size_t n_slots, std::size_t trials,
                          std::uint64_t seed) {
  if (gt.rank() != 3) throw DimensionError("random_baseline_jf: gt must be [T,H,W]");
  if (n_slots == 0 || trials == 0) throw ConfigError("random_baseline_jf: empty setup");
  Rng rng(seed);
  double acc = 0.0;
  std::vector<double> buf(gt.size());
  for (std::size_t trial = 0; trial < trials; ++trial) {
    for (double& v : buf) v = static_cast<double>(rng.below(n_slots));
    MaskSet ms;
    ms.assignments = Tensor::from_data(gt.shape(), buf);
    ms.n_slots = n_slots;
    acc += evaluate_clip(ms, gt).jf;
  }
  return acc / static_cast<double>(trials);
}

}  // namespace objvid
