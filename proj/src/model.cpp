#include "semimoe/model.hpp"

#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace semimoe {

const char* task_name(Task t) {
  switch (t) {
    case Task::kSeg: return "seg";
    case Task::kSdf: return "sdf";
    case Task::kBnd: return "bnd";
  }
  throw std::logic_error("unknown task");
}

Task task_from_name(const std::string& name) {
  if (name == "seg") return Task::kSeg;
  if (name == "sdf") return Task::kSdf;
  if (name == "bnd") return Task::kBnd;
  throw std::invalid_argument("unknown task name: " + name);
}

int64_t head_channels(Task t) { return t == Task::kSdf ? 1 : 2; }

std::vector<Task> parse_task_list(const std::string& csv) {
  std::vector<Task> tasks;
  std::stringstream ss(csv);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (tok.empty()) continue;
    tasks.push_back(task_from_name(tok));
  }
  if (tasks.empty()) throw std::invalid_argument("task list is empty");
  for (size_t i = 0; i < tasks.size(); ++i)
    for (size_t j = i + 1; j < tasks.size(); ++j)
      if (tasks[i] == tasks[j]) throw std::invalid_argument("duplicate task in list: " + csv);
  if (tasks.front() != Task::kSeg)
    throw std::invalid_argument("seg is the main task and must come first: " + csv);
  return tasks;
}

void ExpertConfig::validate() const {
  if (depth < 2) throw std::invalid_argument("expert depth must be >= 2");
  if (base_channels < 4) throw std::invalid_argument("base_channels must be >= 4");
  if (in_channels != 3) throw std::invalid_argument("in_channels must be 3");
}

void BundleConfig::validate() const {
  ExpertConfig probe{depth, base_channels, in_channels, Task::kSeg};
  probe.validate();
  if (tasks.empty()) throw std::invalid_argument("bundle needs at least one task");
}

namespace {

int64_t norm_groups_for(int64_t channels) { return std::gcd<int64_t>(channels, 8); }

Tensor he_normal(std::vector<int64_t> shape, int64_t fan_in, Rng& rng) {
  Tensor t(std::move(shape));
  const double std = std::sqrt(2.0 / static_cast<double>(fan_in));
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = rng.normal(0.0, std);
  return t;
}

}  // namespace

Conv2dLayer::Conv2dLayer(int64_t in_ch, int64_t out_ch, int64_t k, int64_t pad_, Rng& rng)
    : pad(pad_) {
  w = make_param(he_normal({out_ch, in_ch, k, k}, in_ch * k * k, rng));
  b = make_param(Tensor({out_ch}));
}

void Conv2dLayer::collect(const std::string& prefix, ParamList& out) const {
  out.push_back({prefix + "/w", w, true});
  out.push_back({prefix + "/b", b, false});
}

GroupNormLayer::GroupNormLayer(int64_t channels) : groups(norm_groups_for(channels)) {
  gamma = make_param(Tensor({channels}, 1.0));
  beta = make_param(Tensor({channels}));
}

void GroupNormLayer::collect(const std::string& prefix, ParamList& out) const {
  out.push_back({prefix + "/gamma", gamma, false});
  out.push_back({prefix + "/beta", beta, false});
}

DoubleConv::DoubleConv(int64_t in_ch, int64_t out_ch, Rng& rng)
    : c1(in_ch, out_ch, 3, 1, rng), c2(out_ch, out_ch, 3, 1, rng), n1(out_ch), n2(out_ch) {}

Variable DoubleConv::forward(const Variable& x) const {
  return relu(n2.forward(c2.forward(relu(n1.forward(c1.forward(x))))));
}

void DoubleConv::collect(const std::string& prefix, ParamList& out) const {
  c1.collect(prefix + "/c1", out);
  n1.collect(prefix + "/n1", out);
  c2.collect(prefix + "/c2", out);
  n2.collect(prefix + "/n2", out);
}

UNetEncoder::UNetEncoder(int64_t in_ch, int64_t base, int64_t depth, Rng& rng)
    : stem(in_ch, base, rng) {
  for (int64_t i = 1; i < depth; ++i)
    downs.emplace_back(base << (i - 1), base << i, rng);
}

std::vector<Variable> UNetEncoder::forward(const Variable& x) const {
  std::vector<Variable> levels;
  levels.push_back(stem.forward(x));
  for (const auto& d : downs) levels.push_back(d.forward(maxpool2(levels.back())));
  return levels;
}

void UNetEncoder::collect(const std::string& prefix, ParamList& out) const {
  stem.collect(prefix + "/stem", out);
  for (size_t i = 0; i < downs.size(); ++i)
    downs[i].collect(prefix + "/down" + std::to_string(i), out);
}

UNetDecoder::UNetDecoder(int64_t base, int64_t depth, Rng& rng) {
  for (int64_t i = depth - 2; i >= 0; --i) {
    ups.emplace_back(base << (i + 1), base << i, 3, 1, rng);
    blocks.emplace_back((base << i) * 2, base << i, rng);
  }
}

Variable UNetDecoder::forward(const std::vector<Variable>& skips) const {
  Variable x = skips.back();
  for (size_t j = 0; j < ups.size(); ++j) {
    x = ups[j].forward(upsample2(x));
    const Variable& skip = skips[skips.size() - 2 - j];
    x = blocks[j].forward(concat_ch(skip, x));
  }
  return x;
}

void UNetDecoder::collect(const std::string& prefix, ParamList& out) const {
  for (size_t i = 0; i < ups.size(); ++i) {
    ups[i].collect(prefix + "/up" + std::to_string(i), out);
    blocks[i].collect(prefix + "/dec" + std::to_string(i), out);
  }
}

ExpertBundle ExpertBundle::build(const BundleConfig& cfg, uint64_t seed) {
  cfg.validate();
  ExpertBundle bundle;
  bundle.cfg_ = cfg;
  if (cfg.shared_encoder) {
    Rng rng(seed, SeedTag::kParamInit, 100);
    bundle.shared_encoder_ = UNetEncoder(cfg.in_channels, cfg.base_channels, cfg.depth, rng);
  }
  for (Task t : cfg.tasks) {
    // Seed streams are salted by task id so an expert's init does not
    // depend on which other experts exist (keeps ablations comparable).
    Rng rng(seed, SeedTag::kParamInit, static_cast<uint64_t>(t));
    Expert e;
    e.task = t;
    if (!cfg.shared_encoder)
      e.encoder = UNetEncoder(cfg.in_channels, cfg.base_channels, cfg.depth, rng);
    e.decoder = UNetDecoder(cfg.base_channels, cfg.depth, rng);
    e.head = Conv2dLayer(cfg.base_channels, head_channels(t), 1, 0, rng);
    bundle.experts_.push_back(std::move(e));
  }
  return bundle;
}

ExpertBundle build_bundle(const std::vector<ExpertConfig>& cfgs, uint64_t seed,
                          bool shared_encoder) {
  if (cfgs.empty()) throw std::invalid_argument("build_bundle: no expert configs");
  for (const auto& c : cfgs) c.validate();
  for (const auto& c : cfgs) {
    if (c.feature_channels() != cfgs[0].feature_channels())
      throw std::invalid_argument("build_bundle: feature_channels mismatch across experts");
    if (c.depth != cfgs[0].depth || c.in_channels != cfgs[0].in_channels)
      throw std::invalid_argument("build_bundle: expert shapes are inconsistent");
  }
  BundleConfig bc;
  bc.depth = cfgs[0].depth;
  bc.base_channels = cfgs[0].base_channels;
  bc.in_channels = cfgs[0].in_channels;
  bc.shared_encoder = shared_encoder;
  bc.tasks.clear();
  for (const auto& c : cfgs) bc.tasks.push_back(c.task);
  return ExpertBundle::build(bc, seed);
}

void ExpertBundle::check_input(const Variable& batch) const {
  const auto& s = batch.shape();
  if (s.size() != 4 || s[1] != cfg_.in_channels)
    throw std::invalid_argument("expert forward: expected B×" +
                                std::to_string(cfg_.in_channels) + "×H×W input");
  const int64_t div = 1 << (cfg_.depth - 1);
  if (s[2] % div != 0 || s[3] % div != 0)
    throw std::invalid_argument("expert forward: H and W must be divisible by " +
                                std::to_string(div));
}

ExpertOutput ExpertBundle::forward_one(Task task, const Variable& batch) const {
  check_input(batch);
  for (const auto& e : experts_) {
    if (e.task != task) continue;
    const auto skips =
        cfg_.shared_encoder ? shared_encoder_.forward(batch) : e.encoder.forward(batch);
    ExpertOutput out;
    out.features = e.decoder.forward(skips);
    out.prediction = e.head.forward(out.features);
    return out;
  }
  throw std::invalid_argument(std::string("bundle has no expert for task ") + task_name(task));
}

std::map<Task, ExpertOutput> ExpertBundle::forward(const Variable& batch) const {
  check_input(batch);
  std::map<Task, ExpertOutput> outs;
  std::vector<Variable> shared_skips;
  if (cfg_.shared_encoder) shared_skips = shared_encoder_.forward(batch);
  for (const auto& e : experts_) {
    const auto skips = cfg_.shared_encoder ? shared_skips : e.encoder.forward(batch);
    ExpertOutput out;
    out.features = e.decoder.forward(skips);
    out.prediction = e.head.forward(out.features);
    outs.emplace(e.task, std::move(out));
  }
  return outs;
}

ParamList ExpertBundle::params() const {
  ParamList out;
  if (cfg_.shared_encoder) shared_encoder_.collect("shared_encoder", out);
  for (const auto& e : experts_) {
    const std::string prefix = std::string("expert/") + task_name(e.task);
    if (!cfg_.shared_encoder) e.encoder.collect(prefix + "/enc", out);
    e.decoder.collect(prefix + "/dec", out);
    e.head.collect(prefix + "/head", out);
  }
  return out;
}

int64_t ExpertBundle::param_count() const { return semimoe::param_count(params()); }

int64_t param_count(const ParamList& params) {
  int64_t n = 0;
  for (const auto& p : params) n += p.var.numel();
  return n;
}

}  // namespace semimoe
