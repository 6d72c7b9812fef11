#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <map>
#include <set>

#include "mcss/errors.hpp"
#include "mcss/metrics.hpp"
#include "mcss/training.hpp"
#include "oracles.hpp"

using namespace mcss;

namespace {

Dataset small_dataset(int frames = 60, int subjects = 2, int views = 3, std::uint64_t seed = 7) {
    GenConfig c;
    c.n_subjects = subjects;
    c.n_views = views;
    c.n_frames = frames;
    c.angle_step = 0.1;
    return generate(c, seed);
}

Eigen::MatrixXd random_matrix(Rng& rng, int rows, int cols, double lo, double hi) {
    Eigen::MatrixXd m(rows, cols);
    for (int i = 0; i < m.size(); ++i) m(i) = uniform_real(rng, lo, hi);
    return m;
}

TrainConfig tiny_train_config() {
    TrainConfig tc;
    tc.metric_batch = 6;
    tc.regression_batch = 2;
    tc.batch_ratio = 3;
    tc.epochs = 2;
    tc.min_temporal_gap = 3;
    tc.supervision.fraction = 0.5;
    return tc;
}

}  // namespace

TEST_CASE("metric batches satisfy every structural invariant") {
    const Dataset d = small_dataset();
    const DatasetView view(d);
    const std::set<FrameKey> val = validation_keys(d, 0.2);
    Rng rng = make_rng(1);
    for (int t = 0; t < 1000; ++t) {
        const int subject = t % 2;
        const MetricBatch b = build_metric_batch(view, subject, 5, 4, rng, &val);
        REQUIRE(b.size() == 5);
        REQUIRE(b.anchors.size() == 5);
        REQUIRE(b.positives.size() == 5);
        std::set<int> frames;
        for (const auto& item : b.items) {
            CHECK(item.subject_id == subject);
            CHECK(item.anchor_view != item.positive_view);
            CHECK(!val.count({item.subject_id, item.frame_index}));
            frames.insert(item.frame_index);
            const FrameRecord* a = view.find(item.subject_id, item.frame_index, item.anchor_view);
            REQUIRE(a != nullptr);
        }
        CHECK(frames.size() == 5);  // no duplicate time instants
        // Pairwise temporal gap >= 4.
        int prev = -100;
        for (int f : frames) {
            CHECK(f - prev >= 4);
            prev = f;
        }
        // Anchor/positive observations come from the records they claim.
        for (int i = 0; i < b.size(); ++i) {
            const auto& item = b.items[static_cast<size_t>(i)];
            CHECK(view.find(item.subject_id, item.frame_index, item.anchor_view)->observation ==
                  b.anchors[static_cast<size_t>(i)]);
            CHECK(view.find(item.subject_id, item.frame_index, item.positive_view)->observation ==
                  b.positives[static_cast<size_t>(i)]);
        }
    }
}

TEST_CASE("metric batch sampling is deterministic in the rng") {
    const Dataset d = small_dataset();
    Rng r1 = make_rng(5), r2 = make_rng(5);
    const MetricBatch a = build_metric_batch(d, 0, 6, 3, r1);
    const MetricBatch b = build_metric_batch(d, 0, 6, 3, r2);
    REQUIRE(a.size() == b.size());
    for (int i = 0; i < a.size(); ++i) {
        CHECK(a.items[static_cast<size_t>(i)].frame_index == b.items[static_cast<size_t>(i)].frame_index);
        CHECK(a.items[static_cast<size_t>(i)].anchor_view == b.items[static_cast<size_t>(i)].anchor_view);
    }
}

TEST_CASE("infeasible metric batches are rejected with a clear error") {
    const Dataset d = small_dataset(20, 1, 2);
    Rng rng = make_rng(2);
    // 20 frames at gap 10 -> at most 2 separated frames; m=5 is impossible.
    CHECK_THROWS_AS(build_metric_batch(d, 0, 5, 10, rng), BatchError);
    CHECK_THROWS_AS(build_metric_batch(d, 7, 2, 0, rng), BatchError);  // no such subject
    CHECK_THROWS_AS(build_metric_batch(d, 0, 0, 0, rng), ConfigError);
    CHECK_THROWS_AS(build_metric_batch(d, 0, 2, -1, rng), ConfigError);
}

TEST_CASE("cross-subject pooling mixes subjects but keeps per-subject gaps") {
    const Dataset d = small_dataset(30, 3, 2);
    Rng rng = make_rng(3);
    std::set<int> seen_subjects;
    for (int t = 0; t < 200; ++t) {
        const MetricBatch b = build_metric_batch(d, -1, 8, 5, rng);
        std::map<int, std::set<int>> per_subject;
        for (const auto& item : b.items) {
            seen_subjects.insert(item.subject_id);
            // No duplicate (subject, frame).
            CHECK(per_subject[item.subject_id].insert(item.frame_index).second);
        }
        for (const auto& [s, frames] : per_subject) {
            int prev = -100;
            for (int f : frames) {
                CHECK(f - prev >= 5);
                prev = f;
            }
        }
    }
    CHECK(seen_subjects.size() == 3);
}

TEST_CASE("distance matrix matches the naive loop") {
    Rng rng = make_rng(4);
    const Eigen::MatrixXd a = random_matrix(rng, 7, 5, -2.0, 2.0);
    const Eigen::MatrixXd b = random_matrix(rng, 7, 5, -2.0, 2.0);
    const Eigen::MatrixXd dmat = distance_matrix(a, b);
    REQUIRE(dmat.rows() == 5);
    REQUIRE(dmat.cols() == 5);
    for (int i = 0; i < 5; ++i) {
        for (int j = 0; j < 5; ++j) {
            double sq = 0.0;
            for (int r = 0; r < 7; ++r) {
                const double diff = a(r, i) - b(r, j);
                sq += diff * diff;
            }
            CHECK(dmat(i, j) == doctest::Approx(std::sqrt(sq)).epsilon(1e-13));
        }
    }
    Eigen::MatrixXd bad = b;
    bad(0, 0) = std::nan("");
    CHECK_THROWS_AS(distance_matrix(a, bad), NumericError);
}

TEST_CASE("mining matches the exhaustive oracle on random matrices") {
    Rng rng = make_rng(5);
    const double beta = 0.3;
    for (int t = 0; t < 2000; ++t) {
        const int m = 2 + static_cast<int>(uniform_index(rng, 7));
        // Values straddle beta so sub-threshold rows occur organically.
        Eigen::MatrixXd d = random_matrix(rng, m, m, 0.0, t % 3 == 0 ? 0.29 : 1.2);
        const MiningResult got = mine_hard_negatives(d, beta);
        const auto want = oracles::mining_oracle(d, beta);
        REQUIRE(got.size() == want.size());
        for (int i = 0; i < m; ++i) {
            const auto& g = got[static_cast<size_t>(i)];
            const auto& w = want[static_cast<size_t>(i)];
            CHECK(g.negative_free == w.negative_free);
            CHECK(g.j_min == w.j_min);
            CHECK(g.k_min == w.k_min);
            if (w.d_min) {
                REQUIRE(g.d_min.has_value());
                CHECK(*g.d_min == *w.d_min);  // same entry selected: bitwise equal
            } else {
                CHECK(!g.d_min.has_value());
            }
        }
    }
}

TEST_CASE("mining tie-break keeps the lowest index") {
    Eigen::MatrixXd d(3, 3);
    // Row 0: j=1 and j=2 tie above beta; column 0: k=1 and k=2 tie too.
    d << 0.1, 0.5, 0.5,
         0.5, 0.1, 0.9,
         0.5, 0.9, 0.1;
    const MiningResult mining = mine_hard_negatives(d, 0.3);
    CHECK(*mining[0].j_min == 1);
    CHECK(*mining[0].k_min == 1);
    CHECK(*mining[0].d_min == 0.5);
}

TEST_CASE("contrastive loss and gradient match the oracle") {
    Rng rng = make_rng(6);
    const double alpha = 0.6, beta = 0.3;
    for (int t = 0; t < 2000; ++t) {
        const int m = 2 + static_cast<int>(uniform_index(rng, 7));
        const Eigen::MatrixXd d = random_matrix(rng, m, m, 0.0, 1.2);
        const MiningResult mining = mine_hard_negatives(d, beta);
        const ContrastiveResult got = contrastive_loss(d, mining, alpha);
        const auto oracle_mining = oracles::mining_oracle(d, beta);
        CHECK(std::abs(got.loss - oracles::contrastive_loss_oracle(d, oracle_mining, alpha)) <
              1e-12);
        const Eigen::MatrixXd want = oracles::contrastive_grad_oracle(d, oracle_mining, alpha);
        CHECK((got.grad - want).cwiseAbs().maxCoeff() == 0.0);
    }
}

TEST_CASE("contrastive loss on an all-negative-free batch is the pull term only") {
    Eigen::MatrixXd d(2, 2);
    d << 0.1, 0.2,
         0.15, 0.05;  // everything below beta
    const MiningResult mining = mine_hard_negatives(d, 0.3);
    CHECK(mining[0].negative_free);
    CHECK(mining[1].negative_free);
    const ContrastiveResult res = contrastive_loss(d, mining, 0.6);
    CHECK(res.loss == doctest::Approx(0.5 * (0.1 + 0.05)).epsilon(1e-15));
    CHECK(res.grad(0, 0) == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(res.grad(1, 1) == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(res.grad(0, 1) == 0.0);
    CHECK(res.grad(1, 0) == 0.0);
}

TEST_CASE("contrastive gradient matches finite differences away from kinks") {
    Rng rng = make_rng(7);
    const double alpha = 0.6, beta = 0.3;
    int tested = 0;
    for (int t = 0; t < 200 && tested < 60; ++t) {
        const int m = 4;
        const Eigen::MatrixXd d = random_matrix(rng, m, m, 0.05, 1.1);
        const MiningResult mining = mine_hard_negatives(d, beta);

        // Exclusion: any distance within delta of beta (mining flip), any two
        // candidate negatives within delta of each other (argmin tie), or a
        // hinge argument within delta of zero (kink) makes FD unreliable.
        const double delta = 1e-4;
        bool safe = true;
        for (int i = 0; i < m && safe; ++i) {
            for (int j = 0; j < m && safe; ++j) {
                if (i != j && std::abs(d(i, j) - beta) < delta) safe = false;
            }
            const auto& row = mining[static_cast<size_t>(i)];
            if (row.d_min) {
                if (std::abs(alpha - *row.d_min) < delta) safe = false;
                for (int j = 0; j < m && safe; ++j) {
                    if (j == i) continue;
                    if (d(i, j) > beta && std::abs(d(i, j) - *row.d_min) < delta &&
                        (!row.j_min || j != *row.j_min)) {
                        safe = false;
                    }
                    if (d(j, i) > beta && std::abs(d(j, i) - *row.d_min) < delta &&
                        (!row.k_min || j != *row.k_min)) {
                        safe = false;
                    }
                }
                if (row.j_min && row.k_min &&
                    std::abs(d(i, *row.j_min) - d(*row.k_min, i)) < delta) {
                    safe = false;
                }
            }
        }
        if (!safe) continue;
        ++tested;

        const ContrastiveResult res = contrastive_loss(d, mining, alpha);
        const double h = 1e-6;
        for (int i = 0; i < m; ++i) {
            for (int j = 0; j < m; ++j) {
                Eigen::MatrixXd dp = d, dm = d;
                dp(i, j) += h;
                dm(i, j) -= h;
                const double lp =
                    contrastive_loss(dp, mine_hard_negatives(dp, beta), alpha).loss;
                const double lm =
                    contrastive_loss(dm, mine_hard_negatives(dm, beta), alpha).loss;
                const double fd = (lp - lm) / (2.0 * h);
                CHECK(res.grad(i, j) == doctest::Approx(fd).epsilon(1e-5));
            }
        }
    }
    CHECK(tested >= 50);
}

TEST_CASE("pose loss is the L1 norm with sign subgradient") {
    Rng rng = make_rng(8);
    for (int t = 0; t < 100; ++t) {
        Eigen::Matrix<double, kPoseDim, 1> pred, target;
        for (int i = 0; i < kPoseDim; ++i) {
            pred(i) = gaussian(rng);
            target(i) = gaussian(rng);
        }
        const PoseLossResult res = pose_loss(pred, target);
        double want = 0.0;
        for (int i = 0; i < kPoseDim; ++i) want += std::abs(pred(i) - target(i));
        CHECK(res.loss == doctest::Approx(want).epsilon(1e-14));
        for (int i = 0; i < kPoseDim; ++i) {
            const double sign = pred(i) > target(i) ? 1.0 : (pred(i) < target(i) ? -1.0 : 0.0);
            CHECK(res.grad(i) == sign);
        }
    }
}

TEST_CASE("normalizer matches the two-pass oracle and round-trips") {
    Rng rng = make_rng(9);
    std::vector<Eigen::Matrix<double, kPoseDim, 1>> xs;
    for (int i = 0; i < 40; ++i) {
        Eigen::Matrix<double, kPoseDim, 1> x;
        for (int c = 0; c < kPoseDim; ++c) x(c) = gaussian(rng, 5.0, 120.0);
        xs.push_back(x);
    }
    const Normalizer norm = normalize_targets(xs);
    Eigen::VectorXd mean, stddev;
    oracles::mean_stddev_two_pass(xs, mean, stddev);
    CHECK((norm.mean - mean).cwiseAbs().maxCoeff() < 1e-9);
    CHECK((norm.stddev - stddev).cwiseAbs().maxCoeff() < 1e-9);

    for (const auto& x : xs) {
        CHECK((norm.inverse(norm.forward(x)) - x).cwiseAbs().maxCoeff() < 1e-9);
    }
    // Normalized population: zero mean, unit variance per coordinate.
    Eigen::VectorXd acc = Eigen::VectorXd::Zero(kPoseDim);
    for (const auto& x : xs) acc += norm.forward(x);
    CHECK(acc.cwiseAbs().maxCoeff() / static_cast<double>(xs.size()) < 1e-9);

    // Constant coordinate: stddev floored, not zero.
    auto flat = xs;
    for (auto& x : flat) x(3) = 42.0;
    const Normalizer floored = normalize_targets(flat);
    CHECK(floored.stddev(3) == 1e-6);

    CHECK_THROWS_AS(normalize_targets({xs[0]}), ValidationError);
}

TEST_CASE("validation keys take the trailing fraction per subject") {
    const Dataset d = small_dataset(50, 2, 2);
    const std::set<FrameKey> val = validation_keys(d, 0.2);
    CHECK(val.size() == 20);  // ceil(0.2*50) = 10 per subject
    for (const auto& k : val) CHECK(k.frame_index >= 40);
    CHECK(validation_keys(d, 0.0).empty());
}

TEST_CASE("train config invariants") {
    TrainConfig tc = tiny_train_config();
    CHECK_NOTHROW(tc.validate());
    tc.metric_batch = 7;  // violates metric = ratio * regression
    CHECK_THROWS_AS(tc.validate(), ConfigError);
    tc = tiny_train_config();
    tc.alpha = 0.2;  // must exceed beta
    CHECK_THROWS_AS(tc.validate(), ConfigError);
    tc = tiny_train_config();
    tc.val_fraction = 1.0;
    CHECK_THROWS_AS(tc.validate(), ConfigError);
    tc = tiny_train_config();
    tc.lambda_pose = -1.0;
    CHECK_THROWS_AS(tc.validate(), ConfigError);
}

TEST_CASE("train is deterministic and obeys the iteration budget") {
    const Dataset d = small_dataset();
    TrainConfig tc = tiny_train_config();
    const TrainResult a = train(d, tc);
    const TrainResult b = train(d, tc);
    CHECK(a.encoder.flatten() == b.encoder.flatten());
    CHECK(a.head.flatten() == b.head.flatten());
    REQUIRE(a.log.rows.size() == b.log.rows.size());
    for (size_t i = 0; i < a.log.rows.size(); ++i) {
        CHECK(a.log.rows[i].loss_cnstr == b.log.rows[i].loss_cnstr);
        CHECK(a.log.rows[i].loss_pose == b.log.rows[i].loss_pose);
    }
    // iterations per epoch = floor(sync keys not in val / metric batch).
    // 60 frames * 2 subjects, 20% val -> 96 sync keys; 96/6 = 16 iters/epoch.
    CHECK(a.log.rows.size() == 2u * 16u);
    CHECK(a.epochs_run == 2);
    // Validation column only on the last row of each epoch.
    CHECK(a.log.rows[15].val_nmpjpe.has_value());
    CHECK(!a.log.rows[14].val_nmpjpe.has_value());

    TrainConfig seeded = tc;
    seeded.seed = 99;
    const TrainResult c = train(d, seeded);
    CHECK(c.encoder.flatten() != a.encoder.flatten());
}

TEST_CASE("baseline ignores metric batches; mcss uses them") {
    const Dataset d = small_dataset();
    TrainConfig tc = tiny_train_config();
    tc.mode = TrainMode::baseline;
    const TrainResult base = train(d, tc);
    for (const auto& row : base.log.rows) {
        CHECK(row.loss_cnstr == 0.0);
        CHECK(row.frac_negative_free == 0.0);
    }
    tc.mode = TrainMode::mcss;
    const TrainResult mcss = train(d, tc);
    bool any_metric = false;
    for (const auto& row : mcss.log.rows) {
        if (row.loss_cnstr != 0.0) any_metric = true;
    }
    CHECK(any_metric);
    CHECK(mcss.encoder.flatten() != base.encoder.flatten());
}

TEST_CASE("zero epochs returns the initialization untouched") {
    const Dataset d = small_dataset();
    TrainConfig tc = tiny_train_config();
    tc.epochs = 0;
    const TrainResult r = train(d, tc);
    CHECK(r.log.rows.empty());
    CHECK(r.epochs_run == 0);
    Rng init_rng = make_rng(tc.seed, 10);
    const MlpParams expected_enc = init_params(r.encoder_spec, init_rng);
    const MlpParams expected_head = init_params(r.head_spec, init_rng);
    CHECK(r.encoder.flatten() == expected_enc.flatten());
    CHECK(r.head.flatten() == expected_head.flatten());
}

TEST_CASE("training reduces the regression loss") {
    const Dataset d = small_dataset(120, 1, 3, 11);
    TrainConfig tc = tiny_train_config();
    tc.epochs = 8;
    tc.supervision.fraction = 1.0;
    const TrainResult r = train(d, tc);
    const auto& rows = r.log.rows;
    REQUIRE(rows.size() >= 20);
    double first = 0.0, last = 0.0;
    for (size_t i = 0; i < 8; ++i) {
        first += rows[i].loss_pose;
        last += rows[rows.size() - 1 - i].loss_pose;
    }
    CHECK(last < first);
    // Validation improves over the random initialization too.
    REQUIRE(rows.back().val_nmpjpe.has_value());
    const double val_first = *std::find_if(rows.begin(), rows.end(), [](const TrainLogRow& r_) {
                                  return r_.val_nmpjpe.has_value();
                              })->val_nmpjpe;
    CHECK(*rows.back().val_nmpjpe < val_first);
}

TEST_CASE("warm start continues from a previous result") {
    const Dataset d = small_dataset();
    TrainConfig tc = tiny_train_config();
    const TrainResult first = train(d, tc);

    WarmStart warm{first.encoder_spec, first.head_spec,   first.encoder,  first.head,
                   first.encoder_adam, first.head_adam,   first.normalizer};
    TrainConfig resume = tc;
    resume.epochs = 0;
    const TrainResult untouched = train(d, resume, &warm);
    CHECK(untouched.encoder.flatten() == first.encoder.flatten());
    CHECK(untouched.head.flatten() == first.head.flatten());
    CHECK(untouched.encoder_adam.t == first.encoder_adam.t);

    // Metric-only fine-tuning: lambda 0 leaves the head untouched.
    TrainConfig metric_only = tc;
    metric_only.lambda_pose = 0.0;
    metric_only.supervision.fraction = 0.0;
    metric_only.epochs = 1;
    const TrainResult tuned = train(d, metric_only, &warm);
    CHECK(tuned.head.flatten() == first.head.flatten());
    CHECK(tuned.encoder.flatten() != first.encoder.flatten());
    // Normalizer carried over from the warm start.
    CHECK(tuned.normalizer.mean == first.normalizer.mean);

    // Mismatched architecture is rejected.
    TrainConfig bigger = tc;
    bigger.embed_dim = 64;
    CHECK_THROWS_AS(train(d, bigger, &warm), ConfigError);
}

TEST_CASE("supervision edge cases") {
    const Dataset d = small_dataset();
    TrainConfig tc = tiny_train_config();
    // lambda > 0 with no labels at all: nothing to fit the normalizer on.
    tc.supervision.fraction = 0.0;
    CHECK_THROWS_AS(train(d, tc), ConfigError);
    // Baseline with lambda 0 optimizes nothing.
    TrainConfig base = tiny_train_config();
    base.mode = TrainMode::baseline;
    base.lambda_pose = 0.0;
    CHECK_THROWS_AS(train(d, base), ConfigError);
    // Metric-only from scratch has no labels to fit a normalizer on either.
    TrainConfig metric_only = tiny_train_config();
    metric_only.lambda_pose = 0.0;
    metric_only.supervision.fraction = 0.0;
    metric_only.epochs = 1;
    CHECK_THROWS_AS(train(d, metric_only), ConfigError);
    // With some labels present the normalizer is fitted and the head frozen.
    metric_only.supervision.fraction = 0.3;
    const TrainResult r = train(d, metric_only);
    CHECK(r.log.rows.size() >= 1);
    Rng init_rng = make_rng(metric_only.seed, 10);
    init_params(r.encoder_spec, init_rng);  // advance past the encoder draw
    const MlpParams head0 = init_params(r.head_spec, init_rng);
    CHECK(r.head.flatten() == head0.flatten());
}

TEST_CASE("alternate steps differ from the combined step but share batches") {
    const Dataset d = small_dataset();
    TrainConfig tc = tiny_train_config();
    tc.epochs = 1;
    const TrainResult combined = train(d, tc);
    TrainConfig alt = tc;
    alt.alternate_steps = true;
    const TrainResult alternated = train(d, alt);
    // Same batch stream -> identical first-iteration losses...
    CHECK(alternated.log.rows[0].loss_cnstr == combined.log.rows[0].loss_cnstr);
    // ...but different parameter trajectories.
    CHECK(alternated.encoder.flatten() != combined.encoder.flatten());
}

TEST_CASE("cross-subject batches train end to end") {
    const Dataset d = small_dataset(40, 2, 2);
    TrainConfig tc = tiny_train_config();
    tc.cross_subject_batches = true;
    tc.epochs = 1;
    const TrainResult r = train(d, tc);
    CHECK(!r.log.rows.empty());
}

TEST_CASE("predict_pose denormalizes through the head") {
    const Dataset d = small_dataset();
    TrainConfig tc = tiny_train_config();
    tc.epochs = 1;
    const TrainResult r = train(d, tc);
    const Pose p = predict_pose(r.encoder_spec, r.encoder, r.head_spec, r.head, r.normalizer,
                                d.records[0].observation);
    CHECK(pose_is_finite(p));
}
