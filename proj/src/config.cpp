#include "semimoe/config.hpp"

#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

namespace semimoe {

namespace {

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

std::string fmt_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

class KvReader {
 public:
  explicit KvReader(const std::map<std::string, std::string>& kv) : kv_(kv) {}

  bool has(const std::string& key) {
    seen_.insert(key);
    return kv_.count(key) > 0;
  }
  std::string str(const std::string& key, const std::string& fallback) {
    seen_.insert(key);
    auto it = kv_.find(key);
    return it == kv_.end() ? fallback : it->second;
  }
  double num(const std::string& key, double fallback) {
    seen_.insert(key);
    auto it = kv_.find(key);
    if (it == kv_.end()) return fallback;
    size_t pos = 0;
    const double v = std::stod(it->second, &pos);
    if (pos != it->second.size())
      throw std::invalid_argument("config: bad numeric value for " + key + ": " + it->second);
    return v;
  }
  int64_t integer(const std::string& key, int64_t fallback) {
    seen_.insert(key);
    auto it = kv_.find(key);
    if (it == kv_.end()) return fallback;
    size_t pos = 0;
    const int64_t v = std::stoll(it->second, &pos);
    if (pos != it->second.size())
      throw std::invalid_argument("config: bad integer value for " + key + ": " + it->second);
    return v;
  }
  bool boolean(const std::string& key, bool fallback) {
    seen_.insert(key);
    auto it = kv_.find(key);
    if (it == kv_.end()) return fallback;
    if (it->second == "true") return true;
    if (it->second == "false") return false;
    throw std::invalid_argument("config: bad boolean value for " + key + ": " + it->second);
  }

  void check_no_unknown() const {
    std::string unknown;
    for (const auto& [k, v] : kv_)
      if (!seen_.count(k)) unknown += (unknown.empty() ? "" : ", ") + k;
    if (!unknown.empty())
      throw std::invalid_argument("config: unknown keys: " + unknown);
  }

 private:
  const std::map<std::string, std::string>& kv_;
  std::set<std::string> seen_;
};

}  // namespace

void TrainConfig::validate() const {
  if (gamma <= 0.0) throw std::invalid_argument("config: gamma must be positive");
  if (batch_size < 1) throw std::invalid_argument("config: batch_size must be >= 1");
  if (epochs < 1) throw std::invalid_argument("config: epochs must be >= 1");
  if (lambda_max < 0.0) throw std::invalid_argument("config: lambda_max must be >= 0");
  if (labeled_ratio <= 0.0 || labeled_ratio > 1.0)
    throw std::invalid_argument("config: labeled_ratio must be in (0, 1]");
  if (eval_every < 1) throw std::invalid_argument("config: eval_every must be >= 1");
  ExpertConfig probe{depth, base_channels, 3, Task::kSeg};
  probe.validate();
  const auto tasks = task_list();  // validates the expert list
  if (single_gate && tasks.size() < 2)
    throw std::invalid_argument("config: single_gate needs auxiliary experts");
}

std::map<std::string, std::string> TrainConfig::to_kv() const {
  std::map<std::string, std::string> kv;
  kv["labeled_ratio"] = fmt_double(labeled_ratio);
  kv["fold"] = std::to_string(fold);
  kv["n_folds"] = std::to_string(n_folds);
  kv["seed"] = std::to_string(seed);
  kv["depth"] = std::to_string(depth);
  kv["base_channels"] = std::to_string(base_channels);
  kv["gate_reduction"] = std::to_string(gate_reduction);
  kv["gate_dropout"] = fmt_double(gate_dropout);
  kv["epochs"] = std::to_string(epochs);
  kv["batch_size"] = std::to_string(batch_size);
  kv["lr"] = fmt_double(lr);
  kv["momentum"] = fmt_double(momentum);
  kv["weight_decay"] = fmt_double(weight_decay);
  kv["poly_lr_decay"] = poly_lr_decay ? "true" : "false";
  kv["gamma"] = fmt_double(gamma);
  kv["lambda_max"] = fmt_double(lambda_max);
  kv["ramp_epochs"] = std::to_string(ramp_epochs);
  kv["lambda_scales_regularizer"] = lambda_scales_regularizer ? "true" : "false";
  kv["experts"] = experts;
  kv["single_gate"] = single_gate ? "true" : "false";
  kv["linear_sum_loss"] = linear_sum_loss ? "true" : "false";
  kv["shared_encoder"] = shared_encoder ? "true" : "false";
  kv["crop_augment"] = crop_augment ? "true" : "false";
  kv["augment_unlabeled"] = augment_unlabeled ? "true" : "false";
  kv["eval_every"] = std::to_string(eval_every);
  return kv;
}

TrainConfig TrainConfig::from_kv(const std::map<std::string, std::string>& kv) {
  TrainConfig cfg;
  KvReader r(kv);
  cfg.labeled_ratio = r.num("labeled_ratio", cfg.labeled_ratio);
  cfg.fold = r.integer("fold", cfg.fold);
  cfg.n_folds = r.integer("n_folds", cfg.n_folds);
  cfg.seed = static_cast<uint64_t>(r.integer("seed", static_cast<int64_t>(cfg.seed)));
  cfg.depth = r.integer("depth", cfg.depth);
  cfg.base_channels = r.integer("base_channels", cfg.base_channels);
  cfg.gate_reduction = r.integer("gate_reduction", cfg.gate_reduction);
  cfg.gate_dropout = r.num("gate_dropout", cfg.gate_dropout);
  cfg.epochs = r.integer("epochs", cfg.epochs);
  cfg.batch_size = r.integer("batch_size", cfg.batch_size);
  cfg.lr = r.num("lr", cfg.lr);
  cfg.momentum = r.num("momentum", cfg.momentum);
  cfg.weight_decay = r.num("weight_decay", cfg.weight_decay);
  cfg.poly_lr_decay = r.boolean("poly_lr_decay", cfg.poly_lr_decay);
  cfg.gamma = r.num("gamma", cfg.gamma);
  cfg.lambda_max = r.num("lambda_max", cfg.lambda_max);
  cfg.ramp_epochs = r.integer("ramp_epochs", cfg.ramp_epochs);
  cfg.lambda_scales_regularizer =
      r.boolean("lambda_scales_regularizer", cfg.lambda_scales_regularizer);
  cfg.experts = r.str("experts", cfg.experts);
  cfg.single_gate = r.boolean("single_gate", cfg.single_gate);
  cfg.linear_sum_loss = r.boolean("linear_sum_loss", cfg.linear_sum_loss);
  cfg.shared_encoder = r.boolean("shared_encoder", cfg.shared_encoder);
  cfg.crop_augment = r.boolean("crop_augment", cfg.crop_augment);
  cfg.augment_unlabeled = r.boolean("augment_unlabeled", cfg.augment_unlabeled);
  cfg.eval_every = r.integer("eval_every", cfg.eval_every);
  r.check_no_unknown();
  cfg.validate();
  return cfg;
}

std::map<std::string, std::string> parse_kv_text(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream in(text);
  std::string line;
  int64_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config line " + std::to_string(lineno) +
                                  ": expected key = value");
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (value.size() >= 2 && value.front() == '"' && value.back() == '"')
      value = value.substr(1, value.size() - 2);
    if (key.empty()) throw std::invalid_argument("config line " + std::to_string(lineno) +
                                                 ": empty key");
    kv[key] = value;
  }
  return kv;
}

std::map<std::string, std::string> parse_kv_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open config file " + path);
  std::ostringstream os;
  os << f.rdbuf();
  return parse_kv_text(os.str());
}

TrainConfig load_config(const std::string& path) { return TrainConfig::from_kv(parse_kv_file(path)); }

std::string config_digest(const TrainConfig& cfg) {
  uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](const std::string& s) {
    for (unsigned char c : s) {
      h ^= c;
      h *= 0x100000001b3ULL;
    }
  };
  for (const auto& [k, v] : cfg.to_kv()) {
    mix(k);
    mix("=");
    mix(v);
    mix("\n");
  }
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace semimoe
