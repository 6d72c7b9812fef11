#include "mcss/training.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "mcss/errors.hpp"
#include "mcss/metrics.hpp"
#include "mcss/util.hpp"

namespace mcss {

DatasetView::DatasetView(const Dataset& dataset) : dataset_(&dataset) {
    for (const auto& rec : dataset.records) {
        by_key_[{rec.subject_id, rec.frame_index, rec.view_id}] = &rec;
        views_[{rec.subject_id, rec.frame_index}].push_back(rec.view_id);
    }
    for (auto& [key, vs] : views_) {
        std::sort(vs.begin(), vs.end());
        if (vs.size() >= 2) pairable_[key.first].push_back(key.second);
    }
    for (auto& [s, frames] : pairable_) std::sort(frames.begin(), frames.end());
}

const FrameRecord* DatasetView::find(int subject, int frame, int view) const {
    auto it = by_key_.find({subject, frame, view});
    return it == by_key_.end() ? nullptr : it->second;
}

const std::vector<int>& DatasetView::views_of(int subject, int frame) const {
    static const std::vector<int> empty;
    auto it = views_.find({subject, frame});
    return it == views_.end() ? empty : it->second;
}

const std::vector<int>& DatasetView::pairable_frames(int subject) const {
    static const std::vector<int> empty;
    auto it = pairable_.find(subject);
    return it == pairable_.end() ? empty : it->second;
}

std::vector<int> DatasetView::subject_ids() const {
    std::vector<int> out;
    for (const auto& [s, _] : pairable_) out.push_back(s);
    return out;
}

namespace {

// Largest subset of sorted frames with pairwise gaps >= gap (greedy is optimal here).
int max_gap_separated(const std::vector<int>& sorted_frames, int gap) {
    int count = 0;
    long long last = std::numeric_limits<long long>::min();
    for (int f : sorted_frames) {
        if (count == 0 || static_cast<long long>(f) - last >= gap) {
            ++count;
            last = f;
        }
    }
    return count;
}

struct GapChecker {
    std::map<int, std::set<int>> accepted;  // subject -> frames

    bool conflicts(const FrameKey& k, int gap) const {
        auto it = accepted.find(k.subject_id);
        if (it == accepted.end() || gap <= 0) return false;
        const auto& s = it->second;
        auto lb = s.lower_bound(k.frame_index - (gap - 1));
        return lb != s.end() && *lb <= k.frame_index + (gap - 1);
    }

    void add(const FrameKey& k) { accepted[k.subject_id].insert(k.frame_index); }
    void clear() { accepted.clear(); }
};

}  // namespace

MetricBatch build_metric_batch(const DatasetView& view, int subject_id, int m,
                               int min_temporal_gap, Rng& rng,
                               const std::set<FrameKey>* exclude) {
    if (m < 1) throw ConfigError("build_metric_batch: m must be >= 1");
    if (min_temporal_gap < 0) throw ConfigError("build_metric_batch: min_temporal_gap must be >= 0");

    std::vector<FrameKey> pool;
    std::map<int, std::vector<int>> pool_by_subject;
    auto add_subject = [&](int s) {
        for (int f : view.pairable_frames(s)) {
            const FrameKey k{s, f};
            if (exclude && exclude->count(k)) continue;
            pool.push_back(k);
            pool_by_subject[s].push_back(f);
        }
    };
    if (subject_id >= 0) {
        add_subject(subject_id);
    } else {
        for (int s : view.subject_ids()) add_subject(s);
    }

    const std::string scope = subject_id >= 0 ? "subject " + std::to_string(subject_id)
                                              : std::string("the cross-subject pool");
    if (pool.empty()) {
        throw BatchError("build_metric_batch: " + scope + " has no frames seen from >= 2 views");
    }
    int reachable = 0;
    for (const auto& [s, frames] : pool_by_subject) reachable += max_gap_separated(frames, min_temporal_gap);
    if (reachable < m) {
        throw BatchError("build_metric_batch: " + scope + " supports only " +
                         std::to_string(reachable) + " of " + std::to_string(m) +
                         " frames at min_temporal_gap=" + std::to_string(min_temporal_gap));
    }

    // Rejection-style sampling: a random permutation scan is unbiased-ish and almost
    // always lands m frames when the pool has slack; fall back to the greedy set.
    std::vector<FrameKey> chosen;
    GapChecker checker;
    bool ok = false;
    for (int attempt = 0; attempt < 64 && !ok; ++attempt) {
        chosen.clear();
        checker.clear();
        std::vector<FrameKey> perm = pool;
        shuffle(rng, perm);
        for (const FrameKey& k : perm) {
            if (checker.conflicts(k, min_temporal_gap)) continue;
            chosen.push_back(k);
            checker.add(k);
            if (static_cast<int>(chosen.size()) == m) break;
        }
        ok = static_cast<int>(chosen.size()) == m;
    }
    if (!ok) {
        chosen.clear();
        checker.clear();
        for (const FrameKey& k : pool) {
            if (checker.conflicts(k, min_temporal_gap)) continue;
            chosen.push_back(k);
            checker.add(k);
            if (static_cast<int>(chosen.size()) == m) break;
        }
        shuffle(rng, chosen);
    }

    MetricBatch batch;
    for (const FrameKey& k : chosen) {
        const auto& vs = view.views_of(k.subject_id, k.frame_index);
        const std::size_t ia = uniform_index(rng, vs.size());
        std::size_t ib = uniform_index(rng, vs.size() - 1);
        if (ib >= ia) ++ib;
        const FrameRecord* ra = view.find(k.subject_id, k.frame_index, vs[ia]);
        const FrameRecord* rb = view.find(k.subject_id, k.frame_index, vs[ib]);
        batch.anchors.push_back(ra->observation);
        batch.positives.push_back(rb->observation);
        batch.items.push_back({k.subject_id, k.frame_index, vs[ia], vs[ib]});
    }
    return batch;
}

MetricBatch build_metric_batch(const Dataset& dataset, int subject_id, int m,
                               int min_temporal_gap, Rng& rng,
                               const std::set<FrameKey>* exclude) {
    return build_metric_batch(DatasetView(dataset), subject_id, m, min_temporal_gap, rng, exclude);
}

Eigen::MatrixXd distance_matrix(const Eigen::MatrixXd& anchors_phi,
                                const Eigen::MatrixXd& positives_phi) {
    if (anchors_phi.rows() != positives_phi.rows() ||
        anchors_phi.cols() != positives_phi.cols()) {
        throw ValidationError("distance_matrix: embedding blocks must share shape");
    }
    const Eigen::Index m = anchors_phi.cols();
    Eigen::MatrixXd D(m, m);
    for (Eigen::Index i = 0; i < m; ++i) {
        for (Eigen::Index j = 0; j < m; ++j) {
            D(i, j) = (anchors_phi.col(i) - positives_phi.col(j)).norm();
        }
    }
    if (!D.allFinite()) throw NumericError("distance_matrix: non-finite entries");
    return D;
}

MiningResult mine_hard_negatives(const Eigen::MatrixXd& D, double beta) {
    if (D.rows() != D.cols()) throw ValidationError("mine_hard_negatives: D must be square");
    const int m = static_cast<int>(D.rows());
    MiningResult out(static_cast<std::size_t>(m));
    for (int i = 0; i < m; ++i) {
        MiningRow& row = out[static_cast<std::size_t>(i)];
        double best_j = 0.0, best_k = 0.0;
        for (int j = 0; j < m; ++j) {
            if (j == i) continue;
            const double d = D(i, j);
            if (d > beta && (!row.j_min || d < best_j)) {
                row.j_min = j;
                best_j = d;
            }
        }
        for (int k = 0; k < m; ++k) {
            if (k == i) continue;
            const double d = D(k, i);
            if (d > beta && (!row.k_min || d < best_k)) {
                row.k_min = k;
                best_k = d;
            }
        }
        if (row.j_min && row.k_min) {
            row.d_min = std::min(best_j, best_k);
        } else if (row.j_min) {
            row.d_min = best_j;
        } else if (row.k_min) {
            row.d_min = best_k;
        } else {
            row.negative_free = true;
        }
        // Guard against the literal Eq. 1 reading: a mined negative below the
        // exclusion radius would defeat the purpose of beta.
        if (row.d_min && !(*row.d_min > beta)) {
            throw std::logic_error("mine_hard_negatives: selected negative at or below beta");
        }
    }
    return out;
}

ContrastiveResult contrastive_loss(const Eigen::MatrixXd& D, const MiningResult& mining,
                                   double alpha) {
    const int m = static_cast<int>(D.rows());
    if (D.rows() != D.cols() || static_cast<int>(mining.size()) != m) {
        throw ValidationError("contrastive_loss: mining result does not match D");
    }
    ContrastiveResult res;
    res.grad = Eigen::MatrixXd::Zero(m, m);
    const double w = 1.0 / m;
    for (int i = 0; i < m; ++i) {
        const MiningRow& row = mining[static_cast<std::size_t>(i)];
        res.loss += D(i, i);
        res.grad(i, i) += w;
        if (row.negative_free || !row.d_min) continue;
        const double hinge = alpha - *row.d_min;
        if (hinge <= 0.0) continue;
        res.loss += hinge;
        if (row.j_min && D(i, *row.j_min) == *row.d_min) {
            res.grad(i, *row.j_min) -= w;
        } else {
            res.grad(*row.k_min, i) -= w;
        }
    }
    res.loss *= w;
    return res;
}

PoseLossResult pose_loss(const Eigen::Matrix<double, kPoseDim, 1>& pred,
                         const Eigen::Matrix<double, kPoseDim, 1>& target) {
    PoseLossResult res;
    res.grad.setZero();
    for (int i = 0; i < kPoseDim; ++i) {
        const double d = pred(i) - target(i);
        res.loss += std::abs(d);
        if (d > 0.0) res.grad(i) = 1.0;
        else if (d < 0.0) res.grad(i) = -1.0;
    }
    return res;
}

Eigen::VectorXd Normalizer::forward(const Eigen::VectorXd& v) const {
    if (v.size() != mean.size()) throw ValidationError("normalizer: dimension mismatch");
    return (v - mean).cwiseQuotient(stddev);
}

Eigen::VectorXd Normalizer::inverse(const Eigen::VectorXd& v) const {
    if (v.size() != mean.size()) throw ValidationError("normalizer: dimension mismatch");
    return v.cwiseProduct(stddev) + mean;
}

Normalizer normalize_targets(const std::vector<Eigen::Matrix<double, kPoseDim, 1>>& labeled) {
    if (labeled.size() < 2) {
        throw ValidationError("normalize_targets: need at least 2 labeled poses");
    }
    // Streaming (Welford) moments; the tests pit this against a two-pass oracle.
    Eigen::VectorXd mean = Eigen::VectorXd::Zero(kPoseDim);
    Eigen::VectorXd m2 = Eigen::VectorXd::Zero(kPoseDim);
    double n = 0.0;
    for (const auto& v : labeled) {
        n += 1.0;
        const Eigen::VectorXd delta = v - mean;
        mean += delta / n;
        m2 += delta.cwiseProduct(v - mean);
    }
    Normalizer norm;
    norm.mean = mean;
    norm.stddev = (m2 / n).cwiseSqrt().cwiseMax(1e-6);
    return norm;
}

void TrainConfig::validate() const {
    if (!(beta > 0.0) || !(alpha > beta)) {
        throw ConfigError("train config: need alpha > beta > 0");
    }
    if (metric_batch < 2) throw ConfigError("train config: metric_batch must be >= 2");
    if (regression_batch < 1) throw ConfigError("train config: regression_batch must be >= 1");
    if (batch_ratio < 1) throw ConfigError("train config: batch_ratio must be >= 1");
    if (metric_batch != batch_ratio * regression_batch) {
        throw ConfigError("train config: metric_batch must equal batch_ratio * regression_batch");
    }
    if (epochs < 0) throw ConfigError("train config: epochs must be >= 0");
    if (!(base_lr > 0.0)) throw ConfigError("train config: base_lr must be > 0");
    if (lr_drop_every < 1) throw ConfigError("train config: lr_drop_every must be >= 1");
    if (!(lr_drop_factor > 0.0)) throw ConfigError("train config: lr_drop_factor must be > 0");
    if (lambda_pose < 0.0) throw ConfigError("train config: lambda_pose must be >= 0");
    if (min_temporal_gap < 0) throw ConfigError("train config: min_temporal_gap must be >= 0");
    if (!(val_fraction >= 0.0 && val_fraction < 1.0)) {
        throw ConfigError("train config: val_fraction must be in [0, 1)");
    }
    if (embed_dim < 1) throw ConfigError("train config: embed_dim must be >= 1");
    if (!(supervision.fraction >= 0.0 && supervision.fraction <= 1.0)) {
        throw ConfigError("train config: supervision fraction must be in [0, 1]");
    }
    if (!(adam.beta1 > 0.0 && adam.beta1 < 1.0 && adam.beta2 > 0.0 && adam.beta2 < 1.0)) {
        throw ConfigError("train config: adam betas must lie in (0, 1)");
    }
    if (!(adam.epsilon > 0.0)) throw ConfigError("train config: adam epsilon must be > 0");
}

std::set<FrameKey> validation_keys(const Dataset& dataset, double val_fraction) {
    if (!(val_fraction >= 0.0 && val_fraction < 1.0)) {
        throw ConfigError("val_fraction must be in [0, 1)");
    }
    std::map<int, std::set<int>> frames;
    for (const auto& rec : dataset.records) frames[rec.subject_id].insert(rec.frame_index);
    std::set<FrameKey> out;
    for (const auto& [s, fs] : frames) {
        const auto n = fs.size();
        const auto k = static_cast<std::size_t>(std::ceil(val_fraction * static_cast<double>(n)));
        auto it = fs.rbegin();
        for (std::size_t i = 0; i < k && it != fs.rend(); ++i, ++it) out.insert({s, *it});
    }
    return out;
}

void write_train_log(const TrainLog& log, const std::string& path) {
    std::string out = "epoch,iter,loss_cnstr,loss_pose,lr,frac_negative_free,val_nmpjpe\n";
    for (const auto& r : log.rows) {
        out += std::to_string(r.epoch) + ',' + std::to_string(r.iter) + ',' +
               format_double(r.loss_cnstr) + ',' + format_double(r.loss_pose) + ',' +
               format_double(r.lr) + ',' + format_double(r.frac_negative_free) + ',';
        if (r.val_nmpjpe) out += format_double(*r.val_nmpjpe);
        out += '\n';
    }
    atomic_write_file(path, out);
}

namespace {

Eigen::Matrix<double, kObsDim, 1> obs_vector(const Observation& obs) {
    return Eigen::Map<const Eigen::Matrix<double, kObsDim, 1>>(obs.coords.data());
}

void check_unit_norms(const Eigen::MatrixXd& phi, const char* where) {
    for (Eigen::Index c = 0; c < phi.cols(); ++c) {
        const double n = phi.col(c).norm();
        if (!(std::abs(n - 1.0) <= 1e-9)) {
            throw NumericError(std::string(where) + ": embedding norm drifted to " +
                               format_double(n));
        }
    }
}

void add_gradients(MlpGradients& into, const MlpGradients& from) {
    for (std::size_t l = 0; l < into.weights.size(); ++l) {
        into.weights[l] += from.weights[l];
        into.biases[l] += from.biases[l];
    }
}

std::string describe_batch(const MetricBatch& batch) {
    std::string out = "subject=" + std::to_string(batch.items.empty() ? -1 : batch.items[0].subject_id) + " frames=[";
    for (std::size_t i = 0; i < batch.items.size(); ++i) {
        if (i) out += ',';
        out += std::to_string(batch.items[i].frame_index);
    }
    return out + "]";
}

}  // namespace

Pose predict_pose(const MlpSpec& enc_spec, const MlpParams& enc, const MlpSpec& head_spec,
                  const MlpParams& head, const Normalizer& normalizer, const Observation& obs) {
    Eigen::MatrixXd x(kObsDim, 1);
    x.col(0) = obs_vector(obs);
    const Eigen::MatrixXd phi = forward(enc_spec, enc, x);
    const Eigen::MatrixXd p = forward(head_spec, head, phi);
    const Eigen::VectorXd flat = normalizer.inverse(p.col(0));
    return Pose::unflatten(flat);
}

TrainResult train(const Dataset& dataset, const TrainConfig& config, const WarmStart* warm) {
    config.validate();
    validate_dataset(dataset);
    if (config.mode == TrainMode::baseline && config.lambda_pose == 0.0) {
        throw ConfigError("train: baseline mode with lambda_pose=0 optimizes nothing");
    }

    const DatasetView view(dataset);

    std::map<FrameKey, Eigen::Matrix<double, kPoseDim, 1>> canonical;
    for (const auto& rec : dataset.records) {
        const FrameKey key{rec.subject_id, rec.frame_index};
        if (!canonical.count(key)) {
            canonical.emplace(key, canonical_transform(rec.pose_global,
                                                       dataset.skeleton.left_hip_index)
                                       .pose.flatten());
        }
    }

    const std::set<FrameKey> val = validation_keys(dataset, config.val_fraction);

    const SupervisionSplit split = split_supervision(dataset, config.supervision.fraction,
                                                     config.supervision.subjects, config.seed);
    std::vector<FrameKey> labeled_train;
    for (const FrameKey& k : split.labeled) {
        if (!val.count(k)) labeled_train.push_back(k);
    }
    // lambda_pose == 0 (pure metric fine-tuning) is the one mode that can run
    // without labels; everything else draws regression targets.
    if (config.lambda_pose > 0.0 && labeled_train.size() < 2) {
        throw ConfigError("train: fewer than 2 labeled frames remain outside the validation split");
    }

    Normalizer normalizer;
    if (labeled_train.size() >= 2) {
        std::vector<Eigen::Matrix<double, kPoseDim, 1>> labeled_flats;
        labeled_flats.reserve(labeled_train.size());
        for (const FrameKey& k : labeled_train) labeled_flats.push_back(canonical.at(k));
        normalizer = normalize_targets(labeled_flats);
    } else if (warm) {
        normalizer = warm->normalizer;
    } else {
        throw ConfigError("train: no labeled frames and no warm start to supply a normalizer");
    }

    Rng rng_init = make_rng(config.seed, 10);
    Rng rng_batch = make_rng(config.seed, 11);
    Rng rng_reg = make_rng(config.seed, 12);

    TrainResult result;
    result.encoder_spec = encoder_spec(kObsDim, config.embed_dim);
    result.head_spec = head_spec(config.embed_dim, kPoseDim);
    if (warm) {
        if (warm->encoder_spec != result.encoder_spec || warm->head_spec != result.head_spec) {
            throw ConfigError("train: warm-start network shapes do not match the config");
        }
        result.encoder = warm->encoder;
        result.head = warm->head;
        result.encoder_adam = warm->encoder_adam;
        result.head_adam = warm->head_adam;
    } else {
        result.encoder = init_params(result.encoder_spec, rng_init);
        result.head = init_params(result.head_spec, rng_init);
        result.encoder_adam = init_adam(result.encoder);
        result.head_adam = init_adam(result.head);
    }
    result.normalizer = normalizer;

    // Iteration budget is shared by both modes so the baseline comparison is fair.
    std::set<FrameKey> sync_keys;
    for (const auto& rec : dataset.records) {
        const FrameKey key{rec.subject_id, rec.frame_index};
        if (!val.count(key)) sync_keys.insert(key);
    }
    const int iters = std::max<int>(
        1, static_cast<int>(sync_keys.size()) / config.metric_batch);

    std::vector<int> metric_subjects;
    if (config.mode == TrainMode::mcss) {
        if (config.cross_subject_batches) {
            metric_subjects = {-1};
        } else {
            for (int s : view.subject_ids()) {
                std::vector<int> usable;
                for (int f : view.pairable_frames(s)) {
                    if (!val.count({s, f})) usable.push_back(f);
                }
                if (max_gap_separated(usable, config.min_temporal_gap) >= config.metric_batch) {
                    metric_subjects.push_back(s);
                }
            }
            if (metric_subjects.empty()) {
                throw BatchError("train: no subject supports a metric batch of " +
                                 std::to_string(config.metric_batch) + " at min_temporal_gap=" +
                                 std::to_string(config.min_temporal_gap));
            }
        }
    }

    const std::set<FrameKey>* exclude = val.empty() ? nullptr : &val;
    const int rb = config.regression_batch;
    std::vector<std::size_t> reg_scratch(labeled_train.size());
    for (std::size_t i = 0; i < reg_scratch.size(); ++i) reg_scratch[i] = i;

    // Validation records in dataset order, evaluated as one batch per epoch.
    std::vector<const FrameRecord*> val_records;
    for (const auto& rec : dataset.records) {
        if (val.count({rec.subject_id, rec.frame_index})) val_records.push_back(&rec);
    }

    auto eval_val_nmpjpe = [&]() -> double {
        Eigen::MatrixXd x(kObsDim, static_cast<Eigen::Index>(val_records.size()));
        for (std::size_t i = 0; i < val_records.size(); ++i) {
            x.col(static_cast<Eigen::Index>(i)) = obs_vector(val_records[i]->observation);
        }
        const Eigen::MatrixXd phi = forward(result.encoder_spec, result.encoder, x);
        const Eigen::MatrixXd pred = forward(result.head_spec, result.head, phi);
        double total = 0.0;
        for (std::size_t i = 0; i < val_records.size(); ++i) {
            const Eigen::VectorXd flat =
                normalizer.inverse(pred.col(static_cast<Eigen::Index>(i)));
            const Pose pred_pose = Pose::unflatten(flat);
            const Pose gt = Pose::unflatten(
                canonical.at({val_records[i]->subject_id, val_records[i]->frame_index}));
            total += n_mpjpe(pred_pose, gt);
        }
        return total / static_cast<double>(val_records.size());
    };

    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        const double lr = lr_schedule(config.base_lr, epoch, config.lr_drop_every,
                                      config.lr_drop_factor);
        for (int it = 0; it < iters; ++it) {
            const long long global_iter = static_cast<long long>(epoch) * iters + it;

            double loss_c = 0.0;
            double frac_nf = 0.0;
            MlpGradients enc_g_metric = zeros_like(result.encoder);
            MetricBatch batch;
            if (config.mode == TrainMode::mcss) {
                const int subject = metric_subjects[static_cast<std::size_t>(
                    global_iter % static_cast<long long>(metric_subjects.size()))];
                batch = build_metric_batch(view, subject, config.metric_batch,
                                           config.min_temporal_gap, rng_batch, exclude);
                const int m = batch.size();
                Eigen::MatrixXd x(kObsDim, 2 * m);
                for (int i = 0; i < m; ++i) {
                    x.col(i) = obs_vector(batch.anchors[static_cast<std::size_t>(i)]);
                    x.col(m + i) = obs_vector(batch.positives[static_cast<std::size_t>(i)]);
                }
                ForwardCache cache;
                const Eigen::MatrixXd phi = forward(result.encoder_spec, result.encoder, x, &cache);
                check_unit_norms(phi, "train/metric");
                const Eigen::MatrixXd a = phi.leftCols(m);
                const Eigen::MatrixXd b = phi.rightCols(m);
                const Eigen::MatrixXd d = distance_matrix(a, b);
                const MiningResult mining = mine_hard_negatives(d, config.beta);
                const ContrastiveResult cl = contrastive_loss(d, mining, config.alpha);
                loss_c = cl.loss;
                int nf = 0;
                for (const auto& row : mining) nf += row.negative_free ? 1 : 0;
                frac_nf = static_cast<double>(nf) / m;

                Eigen::MatrixXd dphi = Eigen::MatrixXd::Zero(phi.rows(), phi.cols());
                for (int i = 0; i < m; ++i) {
                    for (int j = 0; j < m; ++j) {
                        const double g = cl.grad(i, j);
                        if (g == 0.0) continue;
                        const double dist = d(i, j);
                        if (dist < 1e-15) continue;  // subgradient 0 at coincident points
                        const Eigen::VectorXd diff = (a.col(i) - b.col(j)) * (g / dist);
                        dphi.col(i) += diff;
                        dphi.col(m + j) -= diff;
                    }
                }
                backward(result.encoder_spec, result.encoder, cache, dphi, enc_g_metric);
            }

            // Regression step from the labeled pool, random view per sample.
            MlpGradients enc_g_pose = zeros_like(result.encoder);
            MlpGradients head_g = zeros_like(result.head);
            double loss_p = 0.0;
            if (config.lambda_pose > 0.0) {
                const std::size_t n_lab = labeled_train.size();
                std::vector<std::size_t> picks(static_cast<std::size_t>(rb));
                if (n_lab >= static_cast<std::size_t>(rb)) {
                    for (int s = 0; s < rb; ++s) {
                        const std::size_t r =
                            static_cast<std::size_t>(s) +
                            uniform_index(rng_reg, n_lab - static_cast<std::size_t>(s));
                        std::swap(reg_scratch[static_cast<std::size_t>(s)], reg_scratch[r]);
                        picks[static_cast<std::size_t>(s)] = reg_scratch[static_cast<std::size_t>(s)];
                    }
                } else {
                    for (int s = 0; s < rb; ++s) picks[static_cast<std::size_t>(s)] = uniform_index(rng_reg, n_lab);
                }

                Eigen::MatrixXd x(kObsDim, rb);
                Eigen::MatrixXd targets(kPoseDim, rb);
                for (int s = 0; s < rb; ++s) {
                    const FrameKey key = labeled_train[picks[static_cast<std::size_t>(s)]];
                    const auto& vs = view.views_of(key.subject_id, key.frame_index);
                    const std::size_t iv = uniform_index(rng_reg, vs.size());
                    const FrameRecord* rec = view.find(key.subject_id, key.frame_index, vs[iv]);
                    x.col(s) = obs_vector(rec->observation);
                    targets.col(s) = normalizer.forward(canonical.at(key));
                }
                ForwardCache cache_enc, cache_head;
                const Eigen::MatrixXd phi = forward(result.encoder_spec, result.encoder, x, &cache_enc);
                check_unit_norms(phi, "train/regression");
                const Eigen::MatrixXd pred = forward(result.head_spec, result.head, phi, &cache_head);
                Eigen::MatrixXd dpred(kPoseDim, rb);
                for (int s = 0; s < rb; ++s) {
                    const PoseLossResult pl = pose_loss(pred.col(s), targets.col(s));
                    loss_p += pl.loss;
                    dpred.col(s) = pl.grad;
                }
                loss_p /= rb;
                dpred *= config.lambda_pose / rb;
                const Eigen::MatrixXd dphi =
                    backward(result.head_spec, result.head, cache_head, dpred, head_g);
                backward(result.encoder_spec, result.encoder, cache_enc, dphi, enc_g_pose);
            }

            if (!std::isfinite(loss_c) || !std::isfinite(loss_p)) {
                throw NumericError("train: non-finite loss at epoch " + std::to_string(epoch) +
                                   " iter " + std::to_string(it) + " (loss_cnstr=" +
                                   format_double(loss_c) + ", loss_pose=" + format_double(loss_p) +
                                   "; metric batch " + describe_batch(batch) + ")");
            }

            if (config.alternate_steps && config.mode == TrainMode::mcss) {
                adam_step(result.encoder, enc_g_metric, result.encoder_adam, config.adam, lr);
                if (config.lambda_pose > 0.0) {
                    adam_step(result.encoder, enc_g_pose, result.encoder_adam, config.adam, lr);
                }
            } else {
                if (config.mode == TrainMode::mcss) add_gradients(enc_g_pose, enc_g_metric);
                adam_step(result.encoder, enc_g_pose, result.encoder_adam, config.adam, lr);
            }
            if (config.lambda_pose > 0.0) {
                adam_step(result.head, head_g, result.head_adam, config.adam, lr);
            }

            TrainLogRow row;
            row.epoch = epoch;
            row.iter = it;
            row.loss_cnstr = loss_c;
            row.loss_pose = loss_p;
            row.lr = lr;
            row.frac_negative_free = frac_nf;
            result.log.rows.push_back(row);
        }
        if (!val_records.empty()) {
            result.log.rows.back().val_nmpjpe = eval_val_nmpjpe();
        }
    }

    result.epochs_run = config.epochs;
    result.rng_state = rng_state_to_string(rng_batch);
    return result;
}

}  // namespace mcss
