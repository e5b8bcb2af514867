#pragma once

#include "semimoe/tensor.hpp"

namespace semimoe {

// Ground-truth label derivation from binary masks: exact Euclidean
// distance transforms, normalized signed distance maps, and morphological
// boundary extraction. All functions are pure.

// A binary mask is a 2-D tensor of exactly 0.0 / 1.0 values.
void validate_mask(const Tensor& mask);

enum class DistanceTarget { kForeground, kBackground };

// Exact Euclidean distance from every cell to the nearest pixel of the
// target set (two-pass separable lower-envelope transform on squared
// distances, then square root). Cells in the target set hold 0. If the
// target set is empty every cell holds +infinity.
Tensor distance_transform(const Tensor& mask, DistanceTarget target);

// Distance to the nearest pixel of an arbitrary target set given as a
// 0/1 indicator grid (same semantics as above).
Tensor distance_to_set(const Tensor& indicator);

// Boundary = mask minus its erosion by the 3×3 cross element, with pixels
// outside the grid treated as background: a foreground pixel belongs to
// the boundary iff it has a background 4-neighbor or touches the image
// edge. Degenerate all-0 / all-1 masks yield an empty boundary.
Tensor extract_boundary(const Tensor& mask);

// Signed distance map per the boundary set from extract_boundary:
// positive strictly inside, 0 on boundary pixels, negative outside, each
// sign normalized independently by its per-image maximum magnitude and
// clamped to [-1, 1]. Degenerate masks give a constant map (-1 for all-0,
// +1 for all-1).
Tensor compute_sdf(const Tensor& mask);

}  // namespace semimoe
