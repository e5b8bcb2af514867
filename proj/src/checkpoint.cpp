#include "semimoe/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

using nlohmann::json;

namespace semimoe {

namespace {
constexpr char kMagic[8] = {'S', 'M', 'O', 'E', 'C', 'K', 'P', 'T'};
}

void save_checkpoint(const std::string& path, const TrainState& state) {
  const ParamList params = state.all_params();

  json dir_params = json::array();
  json dir_vel = json::array();
  int64_t offset = 0;
  for (const auto& p : params) {
    dir_params.push_back({{"name", p.name}, {"shape", p.var.shape()}, {"offset", offset},
                          {"numel", p.var.numel()}});
    offset += p.var.numel();
  }
  for (const auto& [name, v] : state.opt.velocity()) {
    dir_vel.push_back(
        {{"name", name}, {"shape", v.shape()}, {"offset", offset}, {"numel", v.numel()}});
    offset += v.numel();
  }

  json header;
  header["schema"] = kCheckpointSchema;
  header["config"] = state.cfg.to_kv();
  header["epoch"] = state.epoch;
  header["iteration"] = state.iteration;
  header["best_dice"] = state.best_dice;
  header["best_epoch"] = state.best_epoch;
  header["params"] = dir_params;
  header["velocity"] = dir_vel;
  const std::string htext = header.dump();

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open " + path + " for writing");
  f.write(kMagic, 8);
  const uint32_t schema = kCheckpointSchema;
  f.write(reinterpret_cast<const char*>(&schema), sizeof schema);
  const uint64_t hlen = htext.size();
  f.write(reinterpret_cast<const char*>(&hlen), sizeof hlen);
  f.write(htext.data(), static_cast<std::streamsize>(htext.size()));
  for (const auto& p : params)
    f.write(reinterpret_cast<const char*>(p.var.value().data()),
            static_cast<std::streamsize>(p.var.numel() * sizeof(double)));
  for (const auto& [name, v] : state.opt.velocity())
    f.write(reinterpret_cast<const char*>(v.data()),
            static_cast<std::streamsize>(v.numel() * sizeof(double)));
  if (!f) throw std::runtime_error("short write to " + path);
}

TrainState load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open checkpoint " + path);
  char magic[8];
  f.read(magic, 8);
  if (!f || std::memcmp(magic, kMagic, 8) != 0)
    throw std::runtime_error(path + " is not a checkpoint archive");
  uint32_t schema = 0;
  f.read(reinterpret_cast<char*>(&schema), sizeof schema);
  if (schema != kCheckpointSchema)
    throw std::runtime_error("checkpoint schema mismatch: file has version " +
                             std::to_string(schema) + ", expected " +
                             std::to_string(kCheckpointSchema));
  uint64_t hlen = 0;
  f.read(reinterpret_cast<char*>(&hlen), sizeof hlen);
  std::string htext(hlen, '\0');
  f.read(htext.data(), static_cast<std::streamsize>(hlen));
  if (!f) throw std::runtime_error("truncated checkpoint header in " + path);
  const json header = json::parse(htext);

  std::map<std::string, std::string> kv =
      header.at("config").get<std::map<std::string, std::string>>();
  TrainState state = init_state(TrainConfig::from_kv(kv));
  state.epoch = header.at("epoch").get<int64_t>();
  state.iteration = header.at("iteration").get<int64_t>();
  state.best_dice = header.at("best_dice").get<double>();
  state.best_epoch = header.at("best_epoch").get<int64_t>();

  const ParamList params = state.all_params();
  const auto& dir = header.at("params");
  if (dir.size() != params.size())
    throw std::runtime_error("checkpoint parameter directory does not match the model");
  for (size_t i = 0; i < params.size(); ++i) {
    const auto& entry = dir[i];
    if (entry.at("name").get<std::string>() != params[i].name)
      throw std::runtime_error("checkpoint parameter order mismatch at " + params[i].name);
    if (entry.at("numel").get<int64_t>() != params[i].var.numel())
      throw std::runtime_error("checkpoint parameter size mismatch at " + params[i].name);
    f.read(reinterpret_cast<char*>(params[i].var.value_mut().data()),
           static_cast<std::streamsize>(params[i].var.numel() * sizeof(double)));
  }
  std::map<std::string, Tensor> velocity;
  for (const auto& entry : header.at("velocity")) {
    Tensor v(entry.at("shape").get<std::vector<int64_t>>());
    f.read(reinterpret_cast<char*>(v.data()),
           static_cast<std::streamsize>(v.numel() * sizeof(double)));
    velocity.emplace(entry.at("name").get<std::string>(), std::move(v));
  }
  if (!f) throw std::runtime_error("truncated checkpoint payload in " + path);
  state.opt.set_velocity(std::move(velocity));
  return state;
}

}  // namespace semimoe
