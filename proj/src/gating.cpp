#include "semimoe/gating.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace semimoe {

void GateConfig::validate() const {
  if (num_experts < 1) throw std::invalid_argument("gate: num_experts must be >= 1");
  if (feature_channels < 1) throw std::invalid_argument("gate: feature_channels must be >= 1");
  if (reduction < 1) throw std::invalid_argument("gate: reduction must be >= 1");
  if (dropout_rate < 0.0 || dropout_rate >= 1.0)
    throw std::invalid_argument("gate: dropout_rate must be in [0, 1)");
}

Variable concat_features(const std::map<Task, ExpertOutput>& outputs,
                         const std::vector<Task>& order) {
  std::vector<Variable> feats;
  feats.reserve(order.size());
  for (Task t : order) {
    auto it = outputs.find(t);
    if (it == outputs.end())
      throw std::invalid_argument(std::string("concat_features: missing expert output for ") +
                                  task_name(t));
    feats.push_back(it->second.features);
  }
  return stack_group(feats);
}

namespace {

Tensor glorot(std::vector<int64_t> shape, int64_t fan_in, int64_t fan_out, Rng& rng) {
  Tensor t(std::move(shape));
  const double lim = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(-lim, lim);
  return t;
}

}  // namespace

GateStack GateStack::build(const GateConfig& cfg, const std::vector<Task>& gate_tasks,
                           uint64_t seed) {
  cfg.validate();
  if (gate_tasks.empty()) throw std::invalid_argument("gate stack needs at least one gate");
  GateStack stack;
  stack.cfg_ = cfg;
  stack.tasks_ = gate_tasks;
  const int64_t mc = cfg.num_experts * cfg.feature_channels;
  const int64_t red = std::max<int64_t>(1, mc / cfg.reduction);
  for (Task t : gate_tasks) {
    Rng rng(seed, SeedTag::kParamInit, 200 + static_cast<uint64_t>(t));
    GateNet g;
    g.mlp_w = make_param(glorot({mc, mc}, mc, mc, rng));
    g.mlp_b = make_param(Tensor({mc}));
    g.red_w = make_param(glorot({red, mc}, mc, red, rng));
    g.red_b = make_param(Tensor({red}));
    g.exp_w = make_param(glorot({cfg.num_experts, red}, red, cfg.num_experts, rng));
    g.exp_b = make_param(Tensor({cfg.num_experts}));
    g.head = Conv2dLayer(cfg.feature_channels, head_channels(t), 1, 0, rng);
    stack.gates_.push_back(std::move(g));
  }
  return stack;
}

const GateStack::GateNet& GateStack::gate_for(Task task) const {
  for (size_t i = 0; i < tasks_.size(); ++i)
    if (tasks_[i] == task) return gates_[i];
  throw std::invalid_argument(std::string("gate stack has no gate for task ") + task_name(task));
}

Variable GateStack::weights(Task task, const Variable& xg, Rng* dropout_rng) const {
  const auto& s = xg.shape();
  if (s.size() != 5 || s[1] != cfg_.num_experts || s[2] != cfg_.feature_channels)
    throw std::invalid_argument("gate weights: unexpected concatenated feature shape");
  const GateNet& g = gate_for(task);
  Variable pooled = gap_flatten(xg);                       // B×(M·C)
  Variable hidden = relu(linear(pooled, g.mlp_w, g.mlp_b));
  Variable reduced = linear(hidden, g.red_w, g.red_b);
  reduced = dropout(reduced, cfg_.dropout_rate, dropout_rng);
  Variable logits = linear(reduced, g.exp_w, g.exp_b);     // B×M
  return softmax_lastdim(logits);
}

Variable GateStack::fuse(Task task, const Variable& xg, const Variable& w) const {
  const GateNet& g = gate_for(task);
  return g.head.forward(weighted_expert_sum(xg, w));
}

GateOutput GateStack::forward_task(Task task, const Variable& xg, Rng* dropout_rng) const {
  GateOutput out;
  out.weights = weights(task, xg, dropout_rng);
  out.fused = fuse(task, xg, out.weights);
  return out;
}

std::map<Task, GateOutput> GateStack::forward(const Variable& xg, Rng* dropout_rng) const {
  std::map<Task, GateOutput> outs;
  for (Task t : tasks_) outs.emplace(t, forward_task(t, xg, dropout_rng));
  return outs;
}

ParamList GateStack::params() const {
  ParamList out;
  for (size_t i = 0; i < tasks_.size(); ++i) {
    const std::string prefix = std::string("gate/") + task_name(tasks_[i]);
    const GateNet& g = gates_[i];
    out.push_back({prefix + "/mlp_w", g.mlp_w, true});
    out.push_back({prefix + "/mlp_b", g.mlp_b, false});
    out.push_back({prefix + "/red_w", g.red_w, true});
    out.push_back({prefix + "/red_b", g.red_b, false});
    out.push_back({prefix + "/exp_w", g.exp_w, true});
    out.push_back({prefix + "/exp_b", g.exp_b, false});
    g.head.collect(prefix + "/head", out);
  }
  return out;
}

int64_t GateStack::param_count() const { return semimoe::param_count(params()); }

}  // namespace semimoe
