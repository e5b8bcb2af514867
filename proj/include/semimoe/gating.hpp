#pragma once

#include <map>
#include <vector>

#include "semimoe/model.hpp"

namespace semimoe {

// Multi-gate fusion module: per task, pooled expert features drive a
// softmax weighting over experts; the weighted feature sum is projected
// to the task output space by a 1×1 head.

struct GateConfig {
  int64_t num_experts = 3;
  int64_t feature_channels = 8;
  int64_t reduction = 4;  // bottleneck ratio inside the attention block
  double dropout_rate = 0.1;
  void validate() const;
};

struct GateOutput {
  Variable weights;  // B×M, non-negative, rows sum to 1
  Variable fused;    // B×head_channels×H×W
};

// Stacks the per-expert trunk features along a new expert axis in the
// fixed bundle task order: M of B×C×H×W -> B×M×C×H×W.
Variable concat_features(const std::map<Task, ExpertOutput>& outputs,
                         const std::vector<Task>& order);

class GateStack {
 public:
  // gate_tasks lists the gates to build (all bundle tasks normally; just
  // {seg} for the single-gate variant). expert_order fixes the expert
  // axis layout of the concatenated input.
  static GateStack build(const GateConfig& cfg, const std::vector<Task>& gate_tasks,
                         uint64_t seed);

  const GateConfig& config() const { return cfg_; }
  const std::vector<Task>& gate_tasks() const { return tasks_; }

  // Weight pipeline: spatial average pool -> MLP(ReLU) -> reduce linear
  // -> dropout -> expand linear to M -> softmax over experts.
  // dropout_rng == nullptr disables dropout (inference mode).
  Variable weights(Task task, const Variable& xg, Rng* dropout_rng) const;
  // Convex fusion by the given weights followed by the task head.
  Variable fuse(Task task, const Variable& xg, const Variable& weights) const;
  GateOutput forward_task(Task task, const Variable& xg, Rng* dropout_rng) const;
  std::map<Task, GateOutput> forward(const Variable& xg, Rng* dropout_rng) const;

  ParamList params() const;
  int64_t param_count() const;

 private:
  struct GateNet {
    Variable mlp_w, mlp_b;
    Variable red_w, red_b;
    Variable exp_w, exp_b;
    Conv2dLayer head;
  };
  const GateNet& gate_for(Task task) const;

  GateConfig cfg_;
  std::vector<Task> tasks_;
  std::vector<GateNet> gates_;
};

}  // namespace semimoe
