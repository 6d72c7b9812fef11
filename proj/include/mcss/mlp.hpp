#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Dense>

#include "mcss/rng.hpp"

namespace mcss {

enum class Activation { identity, relu };

// One fully connected stack: widths {in, h1, ..., out} with an activation per layer.
struct MlpSpec {
    std::vector<int> widths;
    std::vector<Activation> activations;
    bool l2_normalize_output = false;

    int num_layers() const { return static_cast<int>(activations.size()); }
    int input_dim() const { return widths.front(); }
    int output_dim() const { return widths.back(); }
    void validate() const;
    bool operator==(const MlpSpec&) const = default;
};

MlpSpec encoder_spec(int input_dim = 32, int embed_dim = 128);
MlpSpec head_spec(int embed_dim = 128, int pose_dim = 48);

struct MlpParams {
    std::vector<Eigen::MatrixXd> weights;  // weights[l]: widths[l+1] x widths[l]
    std::vector<Eigen::VectorXd> biases;   // biases[l]: widths[l+1]

    std::size_t size() const;
    Eigen::VectorXd flatten() const;
    void unflatten(const Eigen::VectorXd& theta);
};

using MlpGradients = MlpParams;

MlpParams init_params(const MlpSpec& spec, Rng& rng);
MlpParams zeros_like(const MlpParams& params);

// Columns are samples. Caches keep pre-activations and activations per layer
// plus the pre-normalization output when the spec normalizes.
struct ForwardCache {
    std::vector<Eigen::MatrixXd> pre;   // pre[l] = W_l * act[l] + b_l
    std::vector<Eigen::MatrixXd> act;   // act[0] = input, act[l+1] = f(pre[l])
    Eigen::MatrixXd raw_output;         // only set when l2-normalizing
};

Eigen::MatrixXd forward(const MlpSpec& spec, const MlpParams& params,
                        const Eigen::MatrixXd& input, ForwardCache* cache = nullptr);

// dL/d(output) -> parameter gradients (accumulated into grads) and dL/d(input).
Eigen::MatrixXd backward(const MlpSpec& spec, const MlpParams& params, const ForwardCache& cache,
                         const Eigen::MatrixXd& grad_output, MlpGradients& grads);

Eigen::VectorXd l2_normalize(const Eigen::VectorXd& v);
// J = (I - u u^T) / ||v||, the derivative of v -> v/||v||.
Eigen::MatrixXd l2_normalize_jacobian(const Eigen::VectorXd& v);

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.99;
    double epsilon = 1e-8;
};

struct AdamState {
    MlpParams m;
    MlpParams v;
    std::int64_t t = 0;
};

AdamState init_adam(const MlpParams& params);
void adam_step(MlpParams& params, const MlpGradients& grads, AdamState& state,
               const AdamConfig& config, double lr);

double lr_schedule(double base_lr, int epoch, int drop_every = 20, double drop_factor = 0.1);

}  // namespace mcss
