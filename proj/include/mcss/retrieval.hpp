#pragma once

#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "mcss/dataset.hpp"
#include "mcss/geometry.hpp"
#include "mcss/mlp.hpp"
#include "mcss/rng.hpp"

namespace mcss {

struct IndexEntry {
    Eigen::VectorXd embedding;  // unit norm
    int subject_id = 0;
    int view_id = 0;
    int frame_index = 0;
    Pose pose_global;
    Pose pose_canonical;
};

struct EmbeddingIndex {
    std::vector<IndexEntry> entries;

    std::size_t size() const { return entries.size(); }
};

EmbeddingIndex build_index(const Dataset& dataset, const MlpSpec& encoder_spec,
                           const MlpParams& encoder);

// cross_view always excludes the query's view; cross_subject additionally
// excludes the query's subject.
enum class RetrievalFilter { cross_view, cross_subject };

const char* filter_name(RetrievalFilter filter);

// Indices into index.entries of the K nearest candidates by embedding
// distance; ties broken by (subject, view, frame).
std::vector<std::size_t> retrieve(const EmbeddingIndex& index, std::size_t query, int k,
                                  RetrievalFilter filter);

// Mean over queries of the mean PA-MPJPE between the query pose and its K
// retrieved poses. use_oracle ranks candidates by ground-truth PA-MPJPE
// instead of embedding distance.
double mean_pa_mpjpe_at_k(const EmbeddingIndex& index, const std::vector<std::size_t>& queries,
                          int k, RetrievalFilter filter, bool use_oracle);

struct RetrievalRow {
    int k = 0;
    RetrievalFilter filter = RetrievalFilter::cross_view;
    std::optional<double> model_mm;
    double oracle_mm = 0.0;
    std::optional<double> delta_mm;  // model - oracle
    int n_queries = 0;
};

struct RetrievalReport {
    std::vector<RetrievalRow> rows;
};

// One row per K; oracle_only skips the model ranking (no checkpoint needed).
RetrievalReport retrieval_report(const EmbeddingIndex& index,
                                 const std::vector<std::size_t>& queries,
                                 const std::vector<int>& ks, RetrievalFilter filter,
                                 bool oracle_only = false);

void write_retrieval_report(const RetrievalReport& report, const std::string& path);

struct CorrelationBin {
    double lo = 0.0;
    double hi = 0.0;
    std::optional<double> mean_dist_same_view;
    std::optional<double> mean_dist_diff_view;
    long n_same = 0;
    long n_diff = 0;
};

struct CorrelationReport {
    std::vector<CorrelationBin> bins;
    double spearman_same = 0.0;
    double spearman_diff = 0.0;
};

// Bins candidate pose distance (MPJPE to the query) against embedding
// distance, split same-view / different-view; empty edges -> auto_bins uniform
// bins up to the 95th percentile of observed pose distances.
CorrelationReport correlation_report(const EmbeddingIndex& index, int n_queries,
                                     std::vector<double> edges, Rng& rng, int auto_bins = 10);

void write_correlation_report(const CorrelationReport& report, const std::string& path);

}  // namespace mcss
