#pragma once

#include <optional>
#include <string>
#include <vector>

#include "semimoe/tensor.hpp"

namespace semimoe {

// One ground-truth bundle for a single image.
struct LabelTriple {
  Tensor mask;      // H×W {0,1}
  Tensor sdf;       // H×W [-1,1]
  Tensor boundary;  // H×W {0,1}
};

// boundary = extract_boundary(mask), sdf = compute_sdf(mask).
LabelTriple derive_labels(const Tensor& mask);

struct Sample {
  std::string id;
  Tensor image;               // 3×H×W in [0,1]
  std::optional<Tensor> mask; // H×W; absent for unlabeled samples
};

struct Dataset {
  std::vector<Sample> train;
  std::vector<Sample> test;
  int64_t height = 0, width = 0;
};

// Synthetic gland-like imagery: 2-6 deformed elliptical glands with a
// bright lumen, a darker nuclear rim and textured stroma background, plus
// mild per-image color jitter. Foreground fraction is kept inside
// [0.05, 0.6] by rejection. Deterministic in (seed, index).
struct GeneratedPair {
  Tensor image;  // 3×H×W
  Tensor mask;   // H×W
};
std::vector<GeneratedPair> synth_generate(int64_t n, int64_t H, int64_t W, uint64_t seed);

// On-disk layout: images/<id>.png (RGB), masks/<id>.png (grayscale
// 0/255), manifest.json listing ids and train/test assignments.
void write_dataset(const std::string& dir, const std::vector<GeneratedPair>& pairs,
                   int64_t n_test, uint64_t seed, bool force);
Dataset load_dataset(const std::string& dir);

struct SplitSpec {
  double labeled_ratio = 0.1;
  int64_t fold = 0;
  int64_t n_folds = 3;
  uint64_t seed = 0;
};

// Deterministic partition of the train set into labeled / unlabeled
// index lists. The labeled slice rotates with the fold over one fixed
// seed-shuffled order; unlabeled samples are the complement.
struct Split {
  std::vector<int64_t> labeled;
  std::vector<int64_t> unlabeled;
};
Split split_train(int64_t n_train, const SplitSpec& spec);

// Applies an optional random crop-and-resize-back followed by a random
// element of the dihedral group (flips, 90-degree rotations,
// transpositions) jointly to image and mask. Distance-based labels are
// not transform-invariant, so callers re-derive them from the returned
// mask. Deterministic in seed.
Sample augment(const Sample& s, uint64_t seed, bool crop);

// Element 0..7 of the dihedral group: rotate by 90°*(e&3), then flip
// horizontally if e&4. Quarter turns require square grids.
Tensor dihedral_transform(const Tensor& grid, int element);

}  // namespace semimoe
