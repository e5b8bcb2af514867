#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "semimoe/model.hpp"

namespace semimoe {

// All run hyperparameters. Serialized as a flat key = value file; every
// field round-trips through to_kv / from_kv so checkpoints and manifests
// carry the exact resolved configuration.
struct TrainConfig {
  // data & split
  double labeled_ratio = 0.1;
  int64_t fold = 0;
  int64_t n_folds = 3;
  uint64_t seed = 7;
  // model
  int64_t depth = 3;
  int64_t base_channels = 8;
  // gating
  int64_t gate_reduction = 4;
  double gate_dropout = 0.1;
  // optimization
  int64_t epochs = 60;
  int64_t batch_size = 2;
  double lr = 0.05;
  double momentum = 0.9;
  double weight_decay = 5e-5;
  bool poly_lr_decay = false;
  // objective
  double gamma = 0.4;
  double lambda_max = 5.0;
  int64_t ramp_epochs = -1;  // -1 resolves to 40% of epochs
  // When false, the unsupervised weight multiplies only the task terms
  // and not the regularizer share of the unsupervised objective.
  bool lambda_scales_regularizer = true;
  // ablations
  std::string experts = "seg,sdf,bnd";
  bool single_gate = false;
  bool linear_sum_loss = false;
  bool shared_encoder = false;
  // augmentation
  bool crop_augment = false;
  bool augment_unlabeled = true;
  // evaluation
  int64_t eval_every = 1;

  void validate() const;
  int64_t effective_ramp() const { return ramp_epochs >= 0 ? ramp_epochs : (epochs * 2) / 5; }
  std::vector<Task> task_list() const { return parse_task_list(experts); }

  std::map<std::string, std::string> to_kv() const;
  // Throws listing every unknown key.
  static TrainConfig from_kv(const std::map<std::string, std::string>& kv);
};

// Flat key = value file with '#' comments and optional double quotes
// around string values.
std::map<std::string, std::string> parse_kv_file(const std::string& path);
std::map<std::string, std::string> parse_kv_text(const std::string& text);

TrainConfig load_config(const std::string& path);

// FNV-1a over the canonical key=value serialization; identifies a
// resolved configuration in manifests and reports.
std::string config_digest(const TrainConfig& cfg);

}  // namespace semimoe
