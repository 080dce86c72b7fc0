#pragma once

#include <optional>
#include <string>

#include "heliocast/geodata.hpp"
#include "heliocast/model.hpp"
#include "heliocast/train.hpp"

namespace heliocast::nnet {

// Single-file container: magic line, little-endian JSON-header length,
// JSON header (config echo, norm stats, rng state, training state, tensor
// directory), then raw float64 data.
inline constexpr const char* kCheckpointMagic = "HELIOCAST-CKPT-1";

struct Checkpoint {
    ModelConfig config;
    ParamStore params;
    geodata::NormStats norm_stats;
    std::string rng_state;  // serialized mt19937_64 stream, informational
    std::optional<train::TrainLoopState> train_state;
    std::optional<train::AdamState> optimizer;
};

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace heliocast::nnet
