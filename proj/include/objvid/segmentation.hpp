#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "objvid/tensor.hpp"

namespace objvid {

// Hard per-pixel slot assignment at image resolution; the slot index doubles
// as the track identity across frames.
struct MaskSet {
  Tensor assignments;  // [T,H,W], integral values in [0, n_slots)
  std::size_t n_slots = 0;
};

// Bilinear upsample of each slot's attention map to image resolution, then
// per-pixel argmax over slots with ties broken toward the lowest index.
MaskSet binarize(const Tensor& attn, std::size_t h, std::size_t w, std::size_t h_img,
                 std::size_t w_img);

// Region overlap |a n b| / |a u b|; two empty masks count as a perfect 1.
double jaccard(const std::vector<std::uint8_t>& pred, const std::vector<std::uint8_t>& gt);

// Boundary precision/recall harmonic mean. A foreground pixel is boundary
// when one of its in-image 4-neighbors is background; agreement is tested
// within a Chebyshev tolerance. Identical masks score 1; if exactly one
// boundary is empty, or both are empty while the masks differ, the score is 0.
double boundary_f(const std::vector<std::uint8_t>& pred, const std::vector<std::uint8_t>& gt,
                  std::size_t h, std::size_t w, std::size_t tol = 1);

// Minimum-total-cost one-to-one assignment of min(a,b) pairs on a row-major
// a x b cost matrix; returns (row, col) pairs sorted by row.
std::vector<std::pair<std::size_t, std::size_t>> hungarian_match(
    const std::vector<double>& cost, std::size_t a, std::size_t b);

// Exhaustive-assignment reference for small instances; the verification
// oracle for hungarian_match.
double min_assignment_brute_force(const std::vector<double>& cost, std::size_t a,
                                  std::size_t b);

struct SegScore {
  double j = 0.0, f = 0.0, jf = 0.0;
  bool empty_gt = false;  // ground truth had no foreground track
};

// The slot-to-track assignment evaluate_clip scores: pairs of (slot index,
// position of the gt id in ascending id order), minimizing 1 - mean J.
// Empty when the ground truth has no foreground.
std::vector<std::pair<std::size_t, std::size_t>> match_tracks(const MaskSet& masks,
                                                              const Tensor& gt);

// Video-level evaluation: slot tracks are matched to ground-truth tracks by
// minimizing 1 - mean-over-frames Jaccard, matched tracks average J and F
// over frames, and unmatched ground-truth tracks score zero.
SegScore evaluate_clip(const MaskSet& masks, const Tensor& gt);

// Writes <dir>/<clip_id>.masks.stf plus one <dir>/<clip_id>_fNNN.pgm per
// frame with slot ids spread over the gray range.
void export_masks(const std::string& dir, const std::string& clip_id, const MaskSet& masks);

// Mean JF of uniformly random per-pixel slot assignments against gt,
// averaged over `trials` seeded draws.
double random_baseline_jf(const Tensor& gt, std::size_t n_slots, std::size_t trials,
                          std::uint64_t seed);

}  // namespace objvid
