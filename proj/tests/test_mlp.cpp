#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "mcss/errors.hpp"
#include "mcss/mlp.hpp"
#include "mcss/rng.hpp"
#include "oracles.hpp"

using namespace mcss;

namespace {

MlpSpec small_spec(bool normalize) {
    MlpSpec spec;
    spec.widths = {5, 7, 4};
    spec.activations = {Activation::relu, Activation::identity};
    spec.l2_normalize_output = normalize;
    return spec;
}

}  // namespace

TEST_CASE("spec helpers") {
    const MlpSpec enc = encoder_spec();
    CHECK(enc.widths == std::vector<int>{32, 256, 256, 128});
    CHECK(enc.activations ==
          std::vector<Activation>{Activation::relu, Activation::relu, Activation::identity});
    CHECK(enc.l2_normalize_output);
    const MlpSpec head = head_spec();
    CHECK(head.widths == std::vector<int>{128, 48});
    CHECK(head.activations == std::vector<Activation>{Activation::identity});
    CHECK(!head.l2_normalize_output);

    MlpSpec bad = enc;
    bad.activations.pop_back();
    CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("init_params is deterministic, bounded, and zero-biased") {
    const MlpSpec spec = encoder_spec();
    Rng a = make_rng(42, 10), b = make_rng(42, 10);
    const MlpParams pa = init_params(spec, a);
    const MlpParams pb = init_params(spec, b);
    CHECK(pa.flatten() == pb.flatten());
    for (size_t l = 0; l < pa.weights.size(); ++l) {
        const double fan_in = static_cast<double>(pa.weights[l].cols());
        const double bound = (spec.activations[l] == Activation::relu)
                                 ? std::sqrt(6.0 / fan_in)
                                 : 1.0 / std::sqrt(fan_in);
        CHECK(pa.weights[l].cwiseAbs().maxCoeff() <= bound);
        CHECK(pa.weights[l].cwiseAbs().maxCoeff() > 0.5 * bound);  // actually spread out
        CHECK(pa.biases[l].cwiseAbs().maxCoeff() == 0.0);
    }
    Rng c = make_rng(43, 10);
    CHECK(init_params(spec, c).flatten() != pa.flatten());
}

TEST_CASE("forward matches the naive loop implementation") {
    for (bool normalize : {false, true}) {
        const MlpSpec spec = small_spec(normalize);
        Rng rng = make_rng(100 + (normalize ? 1 : 0));
        const MlpParams params = init_params(spec, rng);
        for (int t = 0; t < 100; ++t) {
            Eigen::MatrixXd x(5, 3);
            for (int i = 0; i < x.size(); ++i) x(i) = gaussian(rng);
            Eigen::MatrixXd y;
            try {
                y = forward(spec, params, x);
            } catch (const NormalizationError&) {
                continue;  // a column killed every relu: raw output is exactly zero
            }
            REQUIRE(y.rows() == 4);
            REQUIRE(y.cols() == 3);
            for (int col = 0; col < 3; ++col) {
                std::vector<double> in(5);
                for (int i = 0; i < 5; ++i) in[static_cast<size_t>(i)] = x(i, col);
                const std::vector<double> want = oracles::mlp_forward_naive(spec, params, in);
                for (int r = 0; r < 4; ++r) {
                    CHECK(y(r, col) == doctest::Approx(want[static_cast<size_t>(r)]).epsilon(1e-12));
                }
            }
        }
    }
}

TEST_CASE("l2_normalize basics and jacobian") {
    Eigen::VectorXd v(2);
    v << 3.0, 4.0;
    const Eigen::VectorXd u = l2_normalize(v);
    CHECK(u(0) == doctest::Approx(0.6).epsilon(1e-15));
    CHECK(u(1) == doctest::Approx(0.8).epsilon(1e-15));

    CHECK_THROWS_AS(l2_normalize(Eigen::VectorXd::Zero(3)), NormalizationError);

    Rng rng = make_rng(101);
    for (int t = 0; t < 50; ++t) {
        Eigen::VectorXd w(6);
        for (int i = 0; i < 6; ++i) w(i) = gaussian(rng);
        if (w.norm() < 0.1) continue;
        const Eigen::MatrixXd jac = l2_normalize_jacobian(w);
        const double h = 1e-7;
        for (int i = 0; i < 6; ++i) {
            Eigen::VectorXd wp = w, wm = w;
            wp(i) += h;
            wm(i) -= h;
            const Eigen::VectorXd fd = (l2_normalize(wp) - l2_normalize(wm)) / (2.0 * h);
            for (int r = 0; r < 6; ++r) {
                CHECK(jac(r, i) == doctest::Approx(fd(r)).epsilon(1e-5));
            }
        }
    }
}

TEST_CASE("backward matches central finite differences") {
    for (bool normalize : {false, true}) {
        const MlpSpec spec = small_spec(normalize);
        Rng rng = make_rng(200 + (normalize ? 1 : 0));
        for (int trial = 0; trial < 20; ++trial) {
            const MlpParams params = [&] {
                Rng init = make_rng(300 + static_cast<std::uint64_t>(trial), normalize ? 1 : 0);
                return init_params(spec, init);
            }();
            Eigen::MatrixXd x(5, 2);
            Eigen::MatrixXd c(4, 2);  // loss = sum(c .* output)
            for (int i = 0; i < x.size(); ++i) x(i) = gaussian(rng);
            for (int i = 0; i < c.size(); ++i) c(i) = gaussian(rng);

            // Keep away from relu kinks so the loss is differentiable.
            ForwardCache cache;
            forward(spec, params, x, &cache);
            if (cache.pre[0].cwiseAbs().minCoeff() < 1e-3) continue;

            MlpGradients grads = zeros_like(params);
            const Eigen::MatrixXd dinput = backward(spec, params, cache, c, grads);

            auto loss_at = [&](const MlpParams& p, const Eigen::MatrixXd& input) {
                return (forward(spec, p, input).array() * c.array()).sum();
            };
            const double h = 1e-6;
            const Eigen::VectorXd flat = params.flatten();
            for (int i = 0; i < flat.size(); i += 7) {  // sample every 7th parameter
                Eigen::VectorXd fp = flat, fm = flat;
                fp(i) += h;
                fm(i) -= h;
                MlpParams pp = params, pm = params;
                pp.unflatten(fp);
                pm.unflatten(fm);
                const double fd = (loss_at(pp, x) - loss_at(pm, x)) / (2.0 * h);
                CHECK(grads.flatten()(i) == doctest::Approx(fd).epsilon(1e-5));
            }
            for (int i = 0; i < x.size(); i += 3) {
                Eigen::MatrixXd xp = x, xm = x;
                xp(i) += h;
                xm(i) -= h;
                const double fd = (loss_at(params, xp) - loss_at(params, xm)) / (2.0 * h);
                CHECK(dinput(i) == doctest::Approx(fd).epsilon(1e-5));
            }
        }
    }
}

TEST_CASE("adam matches the scalar textbook oracle") {
    const MlpSpec spec = small_spec(false);
    Rng rng = make_rng(400);
    MlpParams params = init_params(spec, rng);
    AdamState state = init_adam(params);
    const AdamConfig cfg;

    const Eigen::VectorXd flat0 = params.flatten();
    std::vector<double> flat(flat0.data(), flat0.data() + flat0.size());
    oracles::ScalarAdam oracle;

    for (int step = 0; step < 10; ++step) {
        MlpGradients grads = zeros_like(params);
        for (auto& w : grads.weights) {
            for (int i = 0; i < w.size(); ++i) w(i) = gaussian(rng);
        }
        for (auto& b : grads.biases) {
            for (int i = 0; i < b.size(); ++i) b(i) = gaussian(rng);
        }
        const Eigen::VectorXd gflat = grads.flatten();
        std::vector<double> gvec(gflat.data(), gflat.data() + gflat.size());
        const double lr = 1e-3;

        adam_step(params, grads, state, cfg, lr);
        oracle.step(flat, gvec, cfg, lr);

        const Eigen::VectorXd now = params.flatten();
        for (int i = 0; i < now.size(); ++i) {
            CHECK(now(i) == doctest::Approx(flat[static_cast<size_t>(i)]).epsilon(1e-12));
        }
    }
    CHECK(state.t == 10);
}

TEST_CASE("lr schedule drops by 0.1 every 20 epochs") {
    CHECK(lr_schedule(1e-3, 0) == 1e-3);
    CHECK(lr_schedule(1e-3, 19) == 1e-3);
    CHECK(lr_schedule(1e-3, 20) == doctest::Approx(1e-4).epsilon(1e-12));
    CHECK(lr_schedule(1e-3, 39) == doctest::Approx(1e-4).epsilon(1e-12));
    CHECK(lr_schedule(1e-3, 40) == doctest::Approx(1e-5).epsilon(1e-12));
    CHECK(lr_schedule(2e-2, 25, 10, 0.5) == doctest::Approx(2e-2 * 0.25).epsilon(1e-12));
}

TEST_CASE("forward rejects shape mismatches") {
    const MlpSpec spec = small_spec(false);
    Rng rng = make_rng(500);
    const MlpParams params = init_params(spec, rng);
    CHECK_THROWS_AS(forward(spec, params, Eigen::MatrixXd::Zero(4, 2)), ValidationError);
}
