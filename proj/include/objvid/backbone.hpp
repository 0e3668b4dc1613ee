#pragma once

#include <cstdint>
#include <string>

#include "objvid/tensor.hpp"

namespace objvid {

// A clip as the data pipeline hands it over: pixel frames, an action label,
// and optional per-pixel object ids (0 = background).
struct VideoClip {
  Tensor frames;    // [T,C,H,W], values in [0,1]
  std::size_t label = 0;
  Tensor gt_masks;  // [T,H,W] integer ids; undefined when absent
};

// Raises ContractError unless frames are rank-4 with T >= 2 and any present
// masks match the frame spatial dims.
void validate_clip(const VideoClip& clip);

// Frozen per-frame features: one summary vector and one patch grid per frame.
// Both tensors are produced with gradient tracking off and stay that way.
struct FrameFeatures {
  Tensor cls;   // [T,D]
  Tensor grid;  // [T,HW,D]
  std::size_t h = 0, w = 0;  // patch-grid dims, h*w == HW
};

// Deterministic stand-in for a pretrained image encoder. Each non-overlapping
// patch is flattened and sent through a fixed seed-derived linear projection,
// then a fixed sinusoidal positional code is added. The per-frame summary is
// the patch mean pushed through a second fixed linear map.
FrameFeatures encode_stub(const VideoClip& clip, std::size_t patch, std::size_t d,
                          std::uint64_t seed);

// Persists features as <prefix>.cls.stf and <prefix>.grid.stf. The grid file
// is rank-4 [T,H,W,D] so the patch-grid dims survive the round trip.
void save_features(const std::string& prefix, const FrameFeatures& f);

// Loads a feature pair. The grid file may be rank-4 [T,H,W,D] or rank-3
// [T,HW,D]; the rank-3 form must have a square HW. Any T/D disagreement
// between the two files, a non-square rank-3 grid, or a non-finite value
// raises FormatError.
FrameFeatures load_features(const std::string& prefix);

// Residual depthwise temporal mixing: out = grid + conv_t(grid) with a
// 3-tap per-channel kernel. Zero kernel makes the block an exact identity,
// so training starts from the frozen image features.
struct TemporalFusionParams {
  Tensor kernel;  // [3,D]
};

TemporalFusionParams make_temporal_fusion(std::size_t d);

Tensor temporal_fusion(const Tensor& grid, const TemporalFusionParams& p);

}  // namespace objvid
