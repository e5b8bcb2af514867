#pragma once

#include <cstdint>
#include <string>

#include "semimoe/training.hpp"

namespace semimoe {

// Single-file training archive: every named parameter tensor, the sigma
// scalars, optimizer velocity buffers, epoch/iteration counters and the
// resolved TrainConfig.
//
// Layout (little-endian):
//   bytes 0..7   magic "SMOECKPT"
//   u32          schema version (kCheckpointSchema)
//   u64          JSON header length in bytes
//   header       JSON: config kv, counters, tensor directory
//                (name, shape, offset, numel per entry)
//   payload      raw float64 values at the directory offsets
constexpr uint32_t kCheckpointSchema = 1;

void save_checkpoint(const std::string& path, const TrainState& state);
// Rebuilds the model from the stored config; throws on magic/schema
// mismatch or a parameter directory that does not match the rebuilt
// model.
TrainState load_checkpoint(const std::string& path);

}  // namespace semimoe
