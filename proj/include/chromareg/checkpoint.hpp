#pragma once

#include "chromareg/config.hpp"
#include "chromareg/model.hpp"
#include "chromareg/nn.hpp"

#include <map>
#include <stdexcept>
#include <string>

namespace chromareg {

struct CheckpointError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline constexpr std::uint64_t kCheckpointFormatVersion = 1;

struct Checkpoint {
    std::uint64_t version = kCheckpointFormatVersion;
    RunConfig config;
    long long step = 0;
    std::map<std::string, ad::Matrix> parameters;
    std::map<std::string, bool> trainable;
    nn::AdamState optimizer;
};

/// Parameters (hierarchical names, shape-tagged), embedded config, step and optimizer moments.
void save_checkpoint(const std::string& path, const RunConfig& config, const RegistrationModel& model,
                     const nn::AdamState& optimizer, long long step);
Checkpoint load_checkpoint(const std::string& path);

/// Copies checkpoint weights into `model`. Throws CheckpointError when the network or transformer configs differ,
/// or any parameter is missing, unexpected, or has a different shape. `model` is untouched on error.
void apply_checkpoint(const Checkpoint& checkpoint, RegistrationModel& model);

}  // namespace chromareg
