#pragma once

#include <map>
#include <string>
#include <vector>

#include "semimoe/autodiff.hpp"

namespace semimoe {

enum class Task { kSeg = 0, kSdf = 1, kBnd = 2 };

const char* task_name(Task t);
Task task_from_name(const std::string& name);
// Two-class logits for seg/bnd, one raw channel for sdf.
int64_t head_channels(Task t);
std::vector<Task> parse_task_list(const std::string& csv);  // "seg,sdf,bnd"

struct NamedParam {
  std::string name;
  Variable var;
  bool decay = true;  // excluded from weight decay when false (biases, norm affine)
};
using ParamList = std::vector<NamedParam>;

struct ExpertConfig {
  int64_t depth = 3;
  int64_t base_channels = 8;
  int64_t in_channels = 3;
  Task task = Task::kSeg;
  void validate() const;
  // Channel width of the final decoder feature map (the gating input C).
  int64_t feature_channels() const { return base_channels; }
};

struct Conv2dLayer {
  Variable w, b;
  int64_t pad = 0;
  Conv2dLayer() = default;
  Conv2dLayer(int64_t in_ch, int64_t out_ch, int64_t k, int64_t pad, Rng& rng);
  Variable forward(const Variable& x) const { return conv2d(x, w, b, pad); }
  void collect(const std::string& prefix, ParamList& out) const;
};

struct GroupNormLayer {
  Variable gamma, beta;
  int64_t groups = 1;
  GroupNormLayer() = default;
  explicit GroupNormLayer(int64_t channels);
  Variable forward(const Variable& x) const { return group_norm(x, gamma, beta, groups); }
  void collect(const std::string& prefix, ParamList& out) const;
};

// conv3x3 -> GN -> ReLU, twice.
struct DoubleConv {
  Conv2dLayer c1, c2;
  GroupNormLayer n1, n2;
  DoubleConv() = default;
  DoubleConv(int64_t in_ch, int64_t out_ch, Rng& rng);
  Variable forward(const Variable& x) const;
  void collect(const std::string& prefix, ParamList& out) const;
};

struct UNetEncoder {
  DoubleConv stem;
  std::vector<DoubleConv> downs;
  UNetEncoder() = default;
  UNetEncoder(int64_t in_ch, int64_t base, int64_t depth, Rng& rng);
  // Returns features per level, full resolution first, bottom last.
  std::vector<Variable> forward(const Variable& x) const;
  void collect(const std::string& prefix, ParamList& out) const;
};

struct UNetDecoder {
  std::vector<Conv2dLayer> ups;  // nearest-upsample followed by 3x3 conv
  std::vector<DoubleConv> blocks;
  UNetDecoder() = default;
  UNetDecoder(int64_t base, int64_t depth, Rng& rng);
  Variable forward(const std::vector<Variable>& skips) const;
  void collect(const std::string& prefix, ParamList& out) const;
};

struct ExpertOutput {
  Variable features;    // B×C×H×W trunk output
  Variable prediction;  // B×head_channels×H×W raw head output
};

struct BundleConfig {
  int64_t depth = 3;
  int64_t base_channels = 8;
  int64_t in_channels = 3;
  std::vector<Task> tasks = {Task::kSeg, Task::kSdf, Task::kBnd};
  bool shared_encoder = false;
  void validate() const;
};

// The task-specific experts. Each expert owns an encoder-decoder trunk
// and a 1×1 head; parameter sets are disjoint across experts unless
// shared_encoder is set, in which case one encoder feeds all decoders.
class ExpertBundle {
 public:
  static ExpertBundle build(const BundleConfig& cfg, uint64_t seed);

  const BundleConfig& config() const { return cfg_; }
  const std::vector<Task>& tasks() const { return cfg_.tasks; }

  ExpertOutput forward_one(Task task, const Variable& batch) const;
  // Forward every expert; outputs follow the bundle task order.
  std::map<Task, ExpertOutput> forward(const Variable& batch) const;

  ParamList params() const;
  int64_t param_count() const;

 private:
  struct Expert {
    Task task;
    UNetEncoder encoder;  // empty when the bundle shares one encoder
    UNetDecoder decoder;
    Conv2dLayer head;
  };
  void check_input(const Variable& batch) const;

  BundleConfig cfg_;
  UNetEncoder shared_encoder_;
  std::vector<Expert> experts_;
};

// Validates the per-task configs agree on shapes and builds the bundle.
ExpertBundle build_bundle(const std::vector<ExpertConfig>& cfgs, uint64_t seed,
                          bool shared_encoder = false);

int64_t param_count(const ParamList& params);

}  // namespace semimoe
