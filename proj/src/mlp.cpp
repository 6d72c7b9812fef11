#include "mcss/mlp.hpp"

#include <cmath>
#include <stdexcept>

#include "mcss/errors.hpp"

namespace mcss {

void MlpSpec::validate() const {
    if (widths.size() < 2) throw ConfigError("mlp spec needs at least one layer");
    if (activations.size() != widths.size() - 1) {
        throw ConfigError("mlp spec needs one activation per layer");
    }
    for (int w : widths) {
        if (w < 1) throw ConfigError("mlp layer widths must be positive");
    }
}

MlpSpec encoder_spec(int input_dim, int embed_dim) {
    MlpSpec spec;
    spec.widths = {input_dim, 256, 256, embed_dim};
    spec.activations = {Activation::relu, Activation::relu, Activation::identity};
    spec.l2_normalize_output = true;
    return spec;
}

MlpSpec head_spec(int embed_dim, int pose_dim) {
    MlpSpec spec;
    spec.widths = {embed_dim, pose_dim};
    spec.activations = {Activation::identity};
    spec.l2_normalize_output = false;
    return spec;
}

std::size_t MlpParams::size() const {
    std::size_t n = 0;
    for (const auto& w : weights) n += static_cast<std::size_t>(w.size());
    for (const auto& b : biases) n += static_cast<std::size_t>(b.size());
    return n;
}

Eigen::VectorXd MlpParams::flatten() const {
    Eigen::VectorXd theta(static_cast<Eigen::Index>(size()));
    Eigen::Index k = 0;
    for (size_t l = 0; l < weights.size(); ++l) {
        const auto& w = weights[l];
        theta.segment(k, w.size()) = Eigen::Map<const Eigen::VectorXd>(w.data(), w.size());
        k += w.size();
        const auto& b = biases[l];
        theta.segment(k, b.size()) = b;
        k += b.size();
    }
    return theta;
}

void MlpParams::unflatten(const Eigen::VectorXd& theta) {
    if (theta.size() != static_cast<Eigen::Index>(size())) {
        throw ValidationError("parameter vector length mismatch");
    }
    Eigen::Index k = 0;
    for (size_t l = 0; l < weights.size(); ++l) {
        auto& w = weights[l];
        Eigen::Map<Eigen::VectorXd>(w.data(), w.size()) = theta.segment(k, w.size());
        k += w.size();
        auto& b = biases[l];
        b = theta.segment(k, b.size());
        k += b.size();
    }
}

MlpParams init_params(const MlpSpec& spec, Rng& rng) {
    spec.validate();
    MlpParams params;
    for (int l = 0; l < spec.num_layers(); ++l) {
        const auto sl = static_cast<size_t>(l);
        const int fan_in = spec.widths[sl];
        const int fan_out = spec.widths[sl + 1];
        // He-style uniform bound for relu layers, plain 1/sqrt(fan_in) otherwise.
        const double bound = spec.activations[sl] == Activation::relu
                                 ? std::sqrt(6.0 / fan_in)
                                 : 1.0 / std::sqrt(static_cast<double>(fan_in));
        Eigen::MatrixXd w(fan_out, fan_in);
        // Row-major fill so the draw order matches a per-output-unit reading.
        for (int r = 0; r < fan_out; ++r) {
            for (int c = 0; c < fan_in; ++c) {
                w(r, c) = uniform_real(rng, -bound, bound);
            }
        }
        params.weights.push_back(std::move(w));
        params.biases.emplace_back(Eigen::VectorXd::Zero(fan_out));
    }
    return params;
}

MlpParams zeros_like(const MlpParams& params) {
    MlpParams z;
    for (const auto& w : params.weights) z.weights.emplace_back(Eigen::MatrixXd::Zero(w.rows(), w.cols()));
    for (const auto& b : params.biases) z.biases.emplace_back(Eigen::VectorXd::Zero(b.size()));
    return z;
}

Eigen::MatrixXd forward(const MlpSpec& spec, const MlpParams& params,
                        const Eigen::MatrixXd& input, ForwardCache* cache) {
    if (input.rows() != spec.input_dim()) {
        throw ValidationError("mlp input dimension mismatch");
    }
    Eigen::MatrixXd x = input;
    if (cache) {
        cache->pre.clear();
        cache->act.clear();
        cache->act.push_back(x);
    }
    for (int l = 0; l < spec.num_layers(); ++l) {
        const auto sl = static_cast<size_t>(l);
        Eigen::MatrixXd z = (params.weights[sl] * x).colwise() + params.biases[sl];
        if (cache) cache->pre.push_back(z);
        if (spec.activations[sl] == Activation::relu) {
            x = z.cwiseMax(0.0);
        } else {
            x = std::move(z);
        }
        if (cache) cache->act.push_back(x);
    }
    if (spec.l2_normalize_output) {
        if (cache) cache->raw_output = x;
        for (Eigen::Index c = 0; c < x.cols(); ++c) {
            x.col(c) = l2_normalize(x.col(c));
        }
    }
    return x;
}

Eigen::MatrixXd backward(const MlpSpec& spec, const MlpParams& params, const ForwardCache& cache,
                         const Eigen::MatrixXd& grad_output, MlpGradients& grads) {
    Eigen::MatrixXd g = grad_output;
    if (spec.l2_normalize_output) {
        for (Eigen::Index c = 0; c < g.cols(); ++c) {
            g.col(c) = l2_normalize_jacobian(cache.raw_output.col(c)).transpose() * g.col(c);
        }
    }
    for (int l = spec.num_layers() - 1; l >= 0; --l) {
        const auto sl = static_cast<size_t>(l);
        if (spec.activations[sl] == Activation::relu) {
            g = (cache.pre[sl].array() > 0.0).select(g, 0.0);
        }
        grads.weights[sl] += g * cache.act[sl].transpose();
        grads.biases[sl] += g.rowwise().sum();
        g = params.weights[sl].transpose() * g;
    }
    return g;
}

Eigen::VectorXd l2_normalize(const Eigen::VectorXd& v) {
    const double n = v.norm();
    if (!(n > 0.0) || !std::isfinite(n)) {
        throw NormalizationError("cannot l2-normalize a zero or non-finite vector");
    }
    return v / n;
}

Eigen::MatrixXd l2_normalize_jacobian(const Eigen::VectorXd& v) {
    const double n = v.norm();
    if (!(n > 0.0) || !std::isfinite(n)) {
        throw NormalizationError("cannot differentiate l2-normalize at zero");
    }
    const Eigen::VectorXd u = v / n;
    const Eigen::Index d = v.size();
    return (Eigen::MatrixXd::Identity(d, d) - u * u.transpose()) / n;
}

AdamState init_adam(const MlpParams& params) {
    AdamState state;
    state.m = zeros_like(params);
    state.v = zeros_like(params);
    state.t = 0;
    return state;
}

namespace {

template <typename Mat>
void adam_update(Mat& p, const Mat& g, Mat& m, Mat& v, const AdamConfig& cfg, double lr,
                 double bc1, double bc2) {
    m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
    v = cfg.beta2 * v + (1.0 - cfg.beta2) * g.cwiseProduct(g);
    p.array() -= lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + cfg.epsilon);
}

}  // namespace

void adam_step(MlpParams& params, const MlpGradients& grads, AdamState& state,
               const AdamConfig& config, double lr) {
    state.t += 1;
    const double bc1 = 1.0 - std::pow(config.beta1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(config.beta2, static_cast<double>(state.t));
    for (size_t l = 0; l < params.weights.size(); ++l) {
        adam_update(params.weights[l], grads.weights[l], state.m.weights[l], state.v.weights[l],
                    config, lr, bc1, bc2);
        adam_update(params.biases[l], grads.biases[l], state.m.biases[l], state.v.biases[l],
                    config, lr, bc1, bc2);
    }
}

double lr_schedule(double base_lr, int epoch, int drop_every, double drop_factor) {
    if (epoch < 0) throw ConfigError("lr_schedule: epoch must be >= 0");
    if (drop_every < 1) throw ConfigError("lr_schedule: drop_every must be >= 1");
    return base_lr * std::pow(drop_factor, epoch / drop_every);
}

}  // namespace mcss
