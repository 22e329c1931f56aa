#pragma once

#include "megc/model.hpp"
#include "megc/optimizer.hpp"

#include <filesystem>
#include <stdexcept>
#include <string>

namespace megc {

class ConfigError : public std::runtime_error {
  public:
    ConfigError(const std::string& what, int line = 0)
        : std::runtime_error(line > 0 ? "line " + std::to_string(line) + ": " + what : what),
          line_number(line) {}
    int line_number;
};

/// Everything a training run needs: model topology, optimizer, schedule,
/// data preprocessing, seeds.
struct TrainConfig {
    ModelConfig model;
    Schedule schedule;
    OptimizerConfig opt;
    int batch_size = 8;
    std::uint64_t seed = 1;
    int frames = 64;        // temporal resize target; 0 keeps native frames
    bool center = true;     // subtract ref joint of frame 0, per entity
    int center_joint = 1;   // zero-based second joint
};

/// Desk-scale defaults used by the synthetic walkthrough.
TrainConfig default_train_config();

// Flat `key = value` text. `channels` encodes the plan as a comma list of
// outputs with optional sN stride suffix (e.g. "64,64,128s2,128"); c_in
// chains from input_channels. mutual_mte/mutual_mfe accept all|none|comma
// list of 1-based layer indices. Unknown keys are errors.
TrainConfig parse_train_config(const std::string& text);
TrainConfig load_train_config(const std::filesystem::path& path);

/// Applies one "key=value" override; unknown keys are errors.
void apply_override(TrainConfig& cfg, const std::string& assignment);

/// Canonical text form; parse(serialize(c)) == c.
std::string serialize_train_config(const TrainConfig& cfg);

}  // namespace megc
