#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "mcss/dataset.hpp"
#include "mcss/geometry.hpp"
#include "mcss/mlp.hpp"
#include "mcss/rng.hpp"

namespace mcss {

// Anchor i and positive i show the same (subject, frame) from two different views.
struct BatchItem {
    int subject_id = 0;
    int frame_index = 0;
    int anchor_view = 0;
    int positive_view = 0;
};

struct MetricBatch {
    std::vector<Observation> anchors;
    std::vector<Observation> positives;
    std::vector<BatchItem> items;

    int size() const { return static_cast<int>(items.size()); }
};

// Lookup tables over an immutable Dataset; build once, share across batches.
class DatasetView {
  public:
    explicit DatasetView(const Dataset& dataset);

    const Dataset& dataset() const { return *dataset_; }
    const FrameRecord* find(int subject, int frame, int view) const;
    const std::vector<int>& views_of(int subject, int frame) const;
    // Frames of a subject observed from >= 2 views, ascending.
    const std::vector<int>& pairable_frames(int subject) const;
    std::vector<int> subject_ids() const;

  private:
    const Dataset* dataset_;
    std::map<std::tuple<int, int, int>, const FrameRecord*> by_key_;
    std::map<std::pair<int, int>, std::vector<int>> views_;
    std::map<int, std::vector<int>> pairable_;
};

// subject_id < 0 pools frames across all subjects (cross-subject batches).
MetricBatch build_metric_batch(const DatasetView& view, int subject_id, int m,
                               int min_temporal_gap, Rng& rng,
                               const std::set<FrameKey>* exclude = nullptr);
MetricBatch build_metric_batch(const Dataset& dataset, int subject_id, int m,
                               int min_temporal_gap, Rng& rng,
                               const std::set<FrameKey>* exclude = nullptr);

// D(i,j) = ||anchors.col(i) - positives.col(j)||_2. Columns are embeddings.
Eigen::MatrixXd distance_matrix(const Eigen::MatrixXd& anchors_phi,
                                const Eigen::MatrixXd& positives_phi);

struct MiningRow {
    std::optional<int> j_min;      // column index: hardest negative in row i
    std::optional<int> k_min;      // row index: hardest negative in column i
    std::optional<double> d_min;   // min of the selected distances
    bool negative_free = false;
};
using MiningResult = std::vector<MiningRow>;

MiningResult mine_hard_negatives(const Eigen::MatrixXd& D, double beta);

struct ContrastiveResult {
    double loss = 0.0;
    Eigen::MatrixXd grad;  // dL/dD, same shape as D
};

ContrastiveResult contrastive_loss(const Eigen::MatrixXd& D, const MiningResult& mining,
                                   double alpha);

struct PoseLossResult {
    double loss = 0.0;
    Eigen::Matrix<double, kPoseDim, 1> grad;  // subgradient w.r.t. pred
};

PoseLossResult pose_loss(const Eigen::Matrix<double, kPoseDim, 1>& pred,
                         const Eigen::Matrix<double, kPoseDim, 1>& target);

// Per-coordinate affine map fitted on labeled canonical poses.
struct Normalizer {
    Eigen::VectorXd mean;
    Eigen::VectorXd stddev;  // floored at 1e-6

    Eigen::VectorXd forward(const Eigen::VectorXd& v) const;
    Eigen::VectorXd inverse(const Eigen::VectorXd& v) const;
};

Normalizer normalize_targets(const std::vector<Eigen::Matrix<double, kPoseDim, 1>>& labeled);

enum class TrainMode { mcss, baseline };

struct SupervisionSpec {
    double fraction = 1.0;
    std::optional<std::vector<int>> subjects;  // empty optional = every subject
};

struct TrainConfig {
    TrainMode mode = TrainMode::mcss;
    double alpha = 0.6;
    double beta = 0.3;
    int embed_dim = 128;
    int metric_batch = 66;
    int regression_batch = 22;
    int batch_ratio = 3;  // metric : regression sample count
    int epochs = 40;
    double base_lr = 1e-3;
    int lr_drop_every = 20;
    double lr_drop_factor = 0.1;
    double lambda_pose = 1.0;
    int min_temporal_gap = 10;
    double val_fraction = 0.2;
    std::uint64_t seed = 0;
    SupervisionSpec supervision;
    bool alternate_steps = false;      // two optimizer steps per iteration instead of one
    bool cross_subject_batches = false;
    AdamConfig adam;

    void validate() const;
};

struct TrainLogRow {
    int epoch = 0;
    int iter = 0;
    double loss_cnstr = 0.0;
    double loss_pose = 0.0;
    double lr = 0.0;
    double frac_negative_free = 0.0;
    std::optional<double> val_nmpjpe;
};

struct TrainLog {
    std::vector<TrainLogRow> rows;
};

void write_train_log(const TrainLog& log, const std::string& path);

struct TrainResult {
    MlpSpec encoder_spec;
    MlpSpec head_spec;
    MlpParams encoder;
    MlpParams head;
    AdamState encoder_adam;
    AdamState head_adam;
    Normalizer normalizer;
    TrainLog log;
    std::string rng_state;
    int epochs_run = 0;
};

// Starting point for fine-tuning runs; adam state continues where it left off.
struct WarmStart {
    MlpSpec encoder_spec;
    MlpSpec head_spec;
    MlpParams encoder;
    MlpParams head;
    AdamState encoder_adam;
    AdamState head_adam;
    Normalizer normalizer;
};

TrainResult train(const Dataset& dataset, const TrainConfig& config,
                  const WarmStart* warm = nullptr);

// Frames held out for validation: the trailing ceil(val_fraction * n) frames per subject.
std::set<FrameKey> validation_keys(const Dataset& dataset, double val_fraction);

// obs -> encoder -> head -> denormalize -> canonical pose (mm).
Pose predict_pose(const MlpSpec& enc_spec, const MlpParams& enc, const MlpSpec& head_spec,
                  const MlpParams& head, const Normalizer& normalizer, const Observation& obs);

}  // namespace mcss
