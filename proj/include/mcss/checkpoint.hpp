#pragma once

#include <string>

#include <json.hpp>

#include "mcss/mlp.hpp"
#include "mcss/training.hpp"

namespace mcss {

struct Checkpoint {
    int version = 1;
    int epoch = 0;
    std::string rng_state;
    MlpSpec encoder_spec;
    MlpSpec head_spec;
    MlpParams encoder;
    MlpParams head;
    AdamState encoder_adam;
    AdamState head_adam;
    Normalizer normalizer;
    nlohmann::json config_echo;  // resolved train config, for provenance and eval defaults
};

Checkpoint checkpoint_from_result(const TrainResult& result, const nlohmann::json& config_echo);

void write_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint read_checkpoint(const std::string& path);

}  // namespace mcss
