#include "objvid/backbone.hpp"

#include <cmath>
#include <vector>

#include "objvid/errors.hpp"
#include "objvid/rng.hpp"
#include "objvid/stf.hpp"

namespace objvid {

void validate_clip(const VideoClip& clip) {
  if (!clip.frames.defined() || clip.frames.rank() != 4) {
    throw ContractError("clip: frames must be rank-4 [T,C,H,W]");
  }
  if (clip.frames.dim(0) < 2) {
    throw ContractError("clip: need at least 2 frames, got " +
                        std::to_string(clip.frames.dim(0)));
  }
  if (clip.gt_masks.defined()) {
    const Shape want{clip.frames.dim(0), clip.frames.dim(2), clip.frames.dim(3)};
    if (clip.gt_masks.shape() != want) {
      throw ContractError("clip: gt_masks shape " + shape_str(clip.gt_masks.shape()) +
                          " does not match frames, expected " + shape_str(want));
    }
  }
}

namespace {

// pe[pos, 2i] = sin(pos * 10000^(-2i/D)), pe[pos, 2i+1] = cos(...)
std::vector<double> sinusoidal_encoding(std::size_t positions, std::size_t d) {
  std::vector<double> pe(positions * d, 0.0);
  for (std::size_t pos = 0; pos < positions; ++pos) {
    for (std::size_t i = 0; 2 * i < d; ++i) {
      const double freq =
          std::pow(10000.0, -2.0 * static_cast<double>(i) / static_cast<double>(d));
      const double angle = static_cast<double>(pos) * freq;
      pe[pos * d + 2 * i] = std::sin(angle);
      if (2 * i + 1 < d) pe[pos * d + 2 * i + 1] = std::cos(angle);
    }
  }
  return pe;
}

std::vector<double> seeded_linear(std::size_t in_dim, std::size_t out_dim, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in_dim));
  std::vector<double> w(in_dim * out_dim);
  for (double& v : w) v = rng.uniform(-bound, bound);
  return w;
}

void check_finite(const Tensor& t, const char* what) {
  for (double v : t.data()) {
    if (!std::isfinite(v)) {
      throw FormatError(std::string("load_features: non-finite value in ") + what);
    }
  }
}

}  // namespace

FrameFeatures encode_stub(const VideoClip& clip, std::size_t patch, std::size_t d,
                          std::uint64_t seed) {
  validate_clip(clip);
  const std::size_t t_len = clip.frames.dim(0);
  const std::size_t c = clip.frames.dim(1);
  const std::size_t h_img = clip.frames.dim(2);
  const std::size_t w_img = clip.frames.dim(3);
  if (patch == 0 || h_img % patch != 0 || w_img % patch != 0) {
    throw ConfigError("encode_stub: image dims " + std::to_string(h_img) + "x" +
                      std::to_string(w_img) + " not divisible by patch " +
                      std::to_string(patch));
  }
  const std::size_t gh = h_img / patch;
  const std::size_t gw = w_img / patch;
  const std::size_t hw = gh * gw;
  const std::size_t in_dim = c * patch * patch;

  Rng rng(seed);
  const std::vector<double> proj = seeded_linear(in_dim, d, rng);       // [in_dim, D]
  const std::vector<double> cls_map = seeded_linear(d, d, rng);         // [D, D]
  const std::vector<double> pe = sinusoidal_encoding(hw, d);

  const auto& px = clip.frames.data();
  std::vector<double> grid(t_len * hw * d, 0.0);
  std::vector<double> cls(t_len * d, 0.0);
  std::vector<double> flat(in_dim);
  for (std::size_t t = 0; t < t_len; ++t) {
    for (std::size_t py = 0; py < gh; ++py) {
      for (std::size_t pxi = 0; pxi < gw; ++pxi) {
        std::size_t k = 0;
        for (std::size_t ch = 0; ch < c; ++ch) {
          for (std::size_t y = 0; y < patch; ++y) {
            const std::size_t row = py * patch + y;
            const std::size_t base = ((t * c + ch) * h_img + row) * w_img + pxi * patch;
            for (std::size_t x = 0; x < patch; ++x) flat[k++] = px[base + x];
          }
        }
        const std::size_t pos = py * gw + pxi;
        double* out = &grid[(t * hw + pos) * d];
        for (std::size_t j = 0; j < d; ++j) {
          double acc = 0.0;
          for (std::size_t i = 0; i < in_dim; ++i) acc += flat[i] * proj[i * d + j];
          out[j] = acc + pe[pos * d + j];
        }
      }
    }
    std::vector<double> mean_feat(d, 0.0);
    for (std::size_t pos = 0; pos < hw; ++pos) {
      const double* row = &grid[(t * hw + pos) * d];
      for (std::size_t j = 0; j < d; ++j) mean_feat[j] += row[j];
    }
    for (double& v : mean_feat) v /= static_cast<double>(hw);
    double* crow = &cls[t * d];
    for (std::size_t j = 0; j < d; ++j) {
      double acc = 0.0;
      for (std::size_t i = 0; i < d; ++i) acc += mean_feat[i] * cls_map[i * d + j];
      crow[j] = acc;
    }
  }

  FrameFeatures f;
  f.cls = Tensor::from_data({t_len, d}, std::move(cls));
  f.grid = Tensor::from_data({t_len, hw, d}, std::move(grid));
  f.h = gh;
  f.w = gw;
  return f;
}

void save_features(const std::string& prefix, const FrameFeatures& f) {
  if (!f.cls.defined() || !f.grid.defined()) {
    throw ContractError("save_features: undefined feature tensors");
  }
  if (f.grid.rank() != 3 || f.h * f.w != f.grid.dim(1)) {
    throw ContractError("save_features: grid " + shape_str(f.grid.shape()) +
                        " inconsistent with patch dims " + std::to_string(f.h) + "x" +
                        std::to_string(f.w));
  }
  stf_write(prefix + ".cls.stf", f.cls);
  const std::size_t t_len = f.grid.dim(0), d = f.grid.dim(2);
  stf_write(prefix + ".grid.stf",
            Tensor::from_data({t_len, f.h, f.w, d}, f.grid.data()));
}

FrameFeatures load_features(const std::string& prefix) {
  Tensor cls = stf_read(prefix + ".cls.stf");
  Tensor grid = stf_read(prefix + ".grid.stf");
  if (cls.rank() != 2) {
    throw FormatError("load_features: cls must be rank-2 [T,D], got " +
                      shape_str(cls.shape()));
  }
  const std::size_t t_len = cls.dim(0), d = cls.dim(1);
  FrameFeatures f;
  if (grid.rank() == 4) {
    f.h = grid.dim(1);
    f.w = grid.dim(2);
    if (grid.dim(0) != t_len || grid.dim(3) != d) {
      throw FormatError("load_features: cls " + shape_str(cls.shape()) +
                        " inconsistent with grid " + shape_str(grid.shape()));
    }
    f.grid = Tensor::from_data({t_len, f.h * f.w, d}, grid.data());
  } else if (grid.rank() == 3) {
    if (grid.dim(0) != t_len || grid.dim(2) != d) {
      throw FormatError("load_features: cls " + shape_str(cls.shape()) +
                        " inconsistent with grid " + shape_str(grid.shape()));
    }
    const std::size_t hw = grid.dim(1);
    const std::size_t side = static_cast<std::size_t>(std::lround(std::sqrt(
        static_cast<double>(hw))));
    if (side * side != hw) {
      throw FormatError("load_features: rank-3 grid with non-square HW " +
                        std::to_string(hw) + "; use a rank-4 [T,H,W,D] file");
    }
    f.h = side;
    f.w = side;
    f.grid = grid;
  } else {
    throw FormatError("load_features: grid must be rank-3 or rank-4, got " +
                      shape_str(grid.shape()));
  }
  f.cls = cls;
  check_finite(f.cls, "cls");
  check_finite(f.grid, "grid");
  return f;
}

TemporalFusionParams make_temporal_fusion(std::size_t d) {
  TemporalFusionParams p;
  p.kernel = Tensor::zeros({3, d}, true);
  return p;
}

Tensor temporal_fusion(const Tensor& grid, const TemporalFusionParams& p) {
  return add(grid, temporal_dwconv3(grid, p.kernel));
}

}  // namespace objvid
