#include "mcss/checkpoint.hpp"

#include <cmath>

#include "mcss/errors.hpp"
#include "mcss/util.hpp"

namespace mcss {

namespace {

using nlohmann::json;

json spec_to_json(const MlpSpec& spec) {
    json j;
    j["widths"] = spec.widths;
    std::vector<std::string> acts;
    for (Activation a : spec.activations) {
        acts.push_back(a == Activation::relu ? "relu" : "identity");
    }
    j["activations"] = acts;
    j["l2_normalize_output"] = spec.l2_normalize_output;
    return j;
}

MlpSpec spec_from_json(const json& j) {
    MlpSpec spec;
    spec.widths = j.at("widths").get<std::vector<int>>();
    for (const std::string& a : j.at("activations").get<std::vector<std::string>>()) {
        if (a == "relu") {
            spec.activations.push_back(Activation::relu);
        } else if (a == "identity") {
            spec.activations.push_back(Activation::identity);
        } else {
            throw ValidationError("checkpoint: unknown activation '" + a + "'");
        }
    }
    spec.l2_normalize_output = j.at("l2_normalize_output").get<bool>();
    spec.validate();
    return spec;
}

std::vector<double> flat_to_vector(const MlpParams& p) {
    const Eigen::VectorXd theta = p.flatten();
    return std::vector<double>(theta.data(), theta.data() + theta.size());
}

MlpParams params_from_flat(const MlpSpec& spec, const std::vector<double>& flat) {
    // Shape the container first, then pour the flat array in layer order.
    MlpParams p;
    for (int l = 0; l < spec.num_layers(); ++l) {
        const auto sl = static_cast<std::size_t>(l);
        p.weights.emplace_back(Eigen::MatrixXd::Zero(spec.widths[sl + 1], spec.widths[sl]));
        p.biases.emplace_back(Eigen::VectorXd::Zero(spec.widths[sl + 1]));
    }
    if (flat.size() != p.size()) {
        throw ValidationError("checkpoint: parameter array length " + std::to_string(flat.size()) +
                              " does not match spec (" + std::to_string(p.size()) + ")");
    }
    Eigen::VectorXd theta(static_cast<Eigen::Index>(flat.size()));
    for (std::size_t i = 0; i < flat.size(); ++i) {
        if (!std::isfinite(flat[i])) throw ValidationError("checkpoint: non-finite parameter");
        theta[static_cast<Eigen::Index>(i)] = flat[i];
    }
    p.unflatten(theta);
    return p;
}

json network_to_json(const MlpSpec& spec, const MlpParams& params, const AdamState& adam) {
    json j;
    j["spec"] = spec_to_json(spec);
    j["params"] = flat_to_vector(params);
    j["adam"] = {{"m", flat_to_vector(adam.m)},
                 {"v", flat_to_vector(adam.v)},
                 {"t", adam.t}};
    return j;
}

void network_from_json(const json& j, MlpSpec& spec, MlpParams& params, AdamState& adam) {
    spec = spec_from_json(j.at("spec"));
    params = params_from_flat(spec, j.at("params").get<std::vector<double>>());
    const json& a = j.at("adam");
    adam.m = params_from_flat(spec, a.at("m").get<std::vector<double>>());
    adam.v = params_from_flat(spec, a.at("v").get<std::vector<double>>());
    adam.t = a.at("t").get<std::int64_t>();
}

}  // namespace

Checkpoint checkpoint_from_result(const TrainResult& result, const nlohmann::json& config_echo) {
    Checkpoint ckpt;
    ckpt.epoch = result.epochs_run;
    ckpt.rng_state = result.rng_state;
    ckpt.encoder_spec = result.encoder_spec;
    ckpt.head_spec = result.head_spec;
    ckpt.encoder = result.encoder;
    ckpt.head = result.head;
    ckpt.encoder_adam = result.encoder_adam;
    ckpt.head_adam = result.head_adam;
    ckpt.normalizer = result.normalizer;
    ckpt.config_echo = config_echo;
    return ckpt;
}

void write_checkpoint(const Checkpoint& ckpt, const std::string& path) {
    json j;
    j["version"] = ckpt.version;
    j["epoch"] = ckpt.epoch;
    j["rng_state"] = ckpt.rng_state;
    j["encoder"] = network_to_json(ckpt.encoder_spec, ckpt.encoder, ckpt.encoder_adam);
    j["head"] = network_to_json(ckpt.head_spec, ckpt.head, ckpt.head_adam);
    j["normalizer"] = {
        {"mean", std::vector<double>(ckpt.normalizer.mean.data(),
                                     ckpt.normalizer.mean.data() + ckpt.normalizer.mean.size())},
        {"stddev",
         std::vector<double>(ckpt.normalizer.stddev.data(),
                             ckpt.normalizer.stddev.data() + ckpt.normalizer.stddev.size())}};
    j["config"] = ckpt.config_echo;
    atomic_write_file(path, j.dump(2) + "\n");
}

Checkpoint read_checkpoint(const std::string& path) {
    const std::string text = read_file(path);
    json j = json::parse(text, nullptr, false);
    if (j.is_discarded() || !j.is_object()) {
        throw ParseError("checkpoint is not a JSON object", 1);
    }
    Checkpoint ckpt;
    try {
        if (j.at("version").get<int>() != 1) {
            throw ValidationError("checkpoint: unsupported version");
        }
        ckpt.epoch = j.at("epoch").get<int>();
        ckpt.rng_state = j.at("rng_state").get<std::string>();
        network_from_json(j.at("encoder"), ckpt.encoder_spec, ckpt.encoder, ckpt.encoder_adam);
        network_from_json(j.at("head"), ckpt.head_spec, ckpt.head, ckpt.head_adam);
        const json& n = j.at("normalizer");
        const auto mean = n.at("mean").get<std::vector<double>>();
        const auto stddev = n.at("stddev").get<std::vector<double>>();
        if (mean.size() != stddev.size() || mean.empty()) {
            throw ValidationError("checkpoint: malformed normalizer");
        }
        ckpt.normalizer.mean = Eigen::Map<const Eigen::VectorXd>(
            mean.data(), static_cast<Eigen::Index>(mean.size()));
        ckpt.normalizer.stddev = Eigen::Map<const Eigen::VectorXd>(
            stddev.data(), static_cast<Eigen::Index>(stddev.size()));
        ckpt.config_echo = j.contains("config") ? j["config"] : json::object();
    } catch (const json::exception& e) {
        throw ValidationError(std::string("checkpoint: ") + e.what());
    }
    return ckpt;
}

}  // namespace mcss
