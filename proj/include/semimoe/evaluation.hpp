#pragma once

#include <map>
#include <string>
#include <vector>

#include "semimoe/data.hpp"
#include "semimoe/gating.hpp"
#include "semimoe/model.hpp"

namespace semimoe {

// Overlap metrics on binary masks. Both-empty pairs score 1 by
// convention.
double dice_score(const Tensor& pred, const Tensor& truth);
double jaccard_score(const Tensor& pred, const Tensor& truth);

struct EvalScores {
  double dice = 0.0;     // expert path: argmax over the seg expert logits
  double jaccard = 0.0;
  double dice_gate = 0.0;  // gate path, reported side by side
  double jaccard_gate = 0.0;
  std::map<Task, std::vector<double>> gate_weight_mean;
  int64_t n_images = 0;
};

// Deterministic inference-mode evaluation over a test set. The deployed
// predictor is the seg expert head; the fused gate prediction is scored
// alongside for comparison.
EvalScores evaluate(const ExpertBundle& bundle, const GateStack& gates,
                    const std::vector<Sample>& test, int64_t batch_size = 8);

}  // namespace semimoe
