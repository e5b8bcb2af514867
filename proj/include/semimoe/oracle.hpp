#pragma once

#include "semimoe/tensor.hpp"

namespace semimoe::oracle {

// Slow reference implementations used to validate the fast label
// transforms (unit tests and the CLI --check mode). Deliberately written
// from the definitions, sharing no code with the production path.

// O(HW * |target|) exhaustive nearest-target-pixel search.
Tensor distance_exhaustive(const Tensor& indicator);

// Direct definition: foreground pixel with a background 4-neighbor or
// image-edge contact; degenerate masks yield an empty boundary.
Tensor boundary_by_definition(const Tensor& mask);

// Signed distances to the definitional boundary set, normalized per sign
// by per-image maxima and clamped to [-1, 1].
Tensor sdf_by_definition(const Tensor& mask);

}  // namespace semimoe::oracle
