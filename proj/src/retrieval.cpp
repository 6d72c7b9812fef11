#include "mcss/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <tuple>

#include "mcss/errors.hpp"
#include "mcss/metrics.hpp"
#include "mcss/util.hpp"

namespace mcss {

EmbeddingIndex build_index(const Dataset& dataset, const MlpSpec& encoder_spec,
                           const MlpParams& encoder) {
    EmbeddingIndex index;
    const auto n = dataset.records.size();
    if (n == 0) return index;

    Eigen::MatrixXd x(kObsDim, static_cast<Eigen::Index>(n));
    for (std::size_t i = 0; i < n; ++i) {
        x.col(static_cast<Eigen::Index>(i)) = Eigen::Map<const Eigen::Matrix<double, kObsDim, 1>>(
            dataset.records[i].observation.coords.data());
    }
    const Eigen::MatrixXd phi = forward(encoder_spec, encoder, x);

    std::map<FrameKey, Pose> canonical;
    index.entries.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        const FrameRecord& rec = dataset.records[i];
        const FrameKey key{rec.subject_id, rec.frame_index};
        auto it = canonical.find(key);
        if (it == canonical.end()) {
            it = canonical
                     .emplace(key, canonical_transform(rec.pose_global,
                                                       dataset.skeleton.left_hip_index)
                                       .pose)
                     .first;
        }
        IndexEntry entry;
        entry.embedding = phi.col(static_cast<Eigen::Index>(i));
        entry.subject_id = rec.subject_id;
        entry.view_id = rec.view_id;
        entry.frame_index = rec.frame_index;
        entry.pose_global = rec.pose_global;
        entry.pose_canonical = it->second;
        index.entries.push_back(std::move(entry));
    }
    return index;
}

const char* filter_name(RetrievalFilter filter) {
    return filter == RetrievalFilter::cross_view ? "cross-view" : "cross-subject";
}

namespace {

std::vector<std::size_t> candidate_pool(const EmbeddingIndex& index, std::size_t query,
                                        RetrievalFilter filter) {
    if (query >= index.size()) throw ValidationError("retrieve: query index out of range");
    const IndexEntry& q = index.entries[query];
    std::vector<std::size_t> pool;
    for (std::size_t i = 0; i < index.size(); ++i) {
        if (i == query) continue;
        const IndexEntry& c = index.entries[i];
        if (c.view_id == q.view_id) continue;
        if (filter == RetrievalFilter::cross_subject && c.subject_id == q.subject_id) continue;
        pool.push_back(i);
    }
    return pool;
}

struct Ranked {
    double key;
    std::size_t idx;
};

// Sort by key, ties by (subject, view, frame).
void rank(const EmbeddingIndex& index, std::vector<Ranked>& items) {
    std::sort(items.begin(), items.end(), [&](const Ranked& a, const Ranked& b) {
        if (a.key != b.key) return a.key < b.key;
        const IndexEntry& ea = index.entries[a.idx];
        const IndexEntry& eb = index.entries[b.idx];
        return std::tie(ea.subject_id, ea.view_id, ea.frame_index) <
               std::tie(eb.subject_id, eb.view_id, eb.frame_index);
    });
}

}  // namespace

std::vector<std::size_t> retrieve(const EmbeddingIndex& index, std::size_t query, int k,
                                  RetrievalFilter filter) {
    if (k < 1) throw ConfigError("retrieve: k must be >= 1");
    const std::vector<std::size_t> pool = candidate_pool(index, query, filter);
    if (pool.size() < static_cast<std::size_t>(k)) {
        throw InsufficientCandidatesError("retrieve: " + std::to_string(pool.size()) +
                                          " candidates pass the " +
                                          std::string(filter_name(filter)) +
                                          " filter, need k=" + std::to_string(k));
    }
    const IndexEntry& q = index.entries[query];
    std::vector<Ranked> ranked;
    ranked.reserve(pool.size());
    for (std::size_t i : pool) {
        ranked.push_back({(index.entries[i].embedding - q.embedding).norm(), i});
    }
    rank(index, ranked);
    std::vector<std::size_t> out(static_cast<std::size_t>(k));
    for (int i = 0; i < k; ++i) out[static_cast<std::size_t>(i)] = ranked[static_cast<std::size_t>(i)].idx;
    return out;
}

namespace {

// Mean PA-MPJPE of the first k entries of an already-ranked candidate list.
double prefix_mean(const std::vector<double>& values, int k) {
    double sum = 0.0;
    for (int i = 0; i < k; ++i) sum += values[static_cast<std::size_t>(i)];
    return sum / k;
}

std::vector<double> oracle_pa_sorted(const EmbeddingIndex& index, std::size_t query,
                                     const std::vector<std::size_t>& pool) {
    const IndexEntry& q = index.entries[query];
    std::vector<Ranked> ranked;
    ranked.reserve(pool.size());
    for (std::size_t i : pool) {
        ranked.push_back({pa_mpjpe(index.entries[i].pose_global, q.pose_global), i});
    }
    rank(index, ranked);
    std::vector<double> pas(ranked.size());
    for (std::size_t i = 0; i < ranked.size(); ++i) pas[i] = ranked[i].key;
    return pas;
}

}  // namespace

double mean_pa_mpjpe_at_k(const EmbeddingIndex& index, const std::vector<std::size_t>& queries,
                          int k, RetrievalFilter filter, bool use_oracle) {
    if (queries.empty()) throw ConfigError("mean_pa_mpjpe_at_k: no queries");
    double total = 0.0;
    for (std::size_t query : queries) {
        if (use_oracle) {
            const std::vector<std::size_t> pool = candidate_pool(index, query, filter);
            if (pool.size() < static_cast<std::size_t>(k)) {
                throw InsufficientCandidatesError(
                    "mean_pa_mpjpe_at_k: pool of " + std::to_string(pool.size()) +
                    " is smaller than k=" + std::to_string(k));
            }
            total += prefix_mean(oracle_pa_sorted(index, query, pool), k);
        } else {
            const std::vector<std::size_t> got = retrieve(index, query, k, filter);
            const IndexEntry& q = index.entries[query];
            std::vector<double> pas;
            pas.reserve(got.size());
            for (std::size_t i : got) {
                pas.push_back(pa_mpjpe(index.entries[i].pose_global, q.pose_global));
            }
            total += prefix_mean(pas, k);
        }
    }
    return total / static_cast<double>(queries.size());
}

RetrievalReport retrieval_report(const EmbeddingIndex& index,
                                 const std::vector<std::size_t>& queries,
                                 const std::vector<int>& ks, RetrievalFilter filter,
                                 bool oracle_only) {
    if (queries.empty()) throw ConfigError("retrieval_report: no queries");
    if (ks.empty()) throw ConfigError("retrieval_report: no K values");
    int kmax = 0;
    for (int k : ks) {
        if (k < 1) throw ConfigError("retrieval_report: K values must be >= 1");
        kmax = std::max(kmax, k);
    }

    // PA computations are shared across K values: both rankings are computed
    // once per query and prefix means give every K.
    std::vector<double> oracle_sum(ks.size(), 0.0);
    std::vector<double> model_sum(ks.size(), 0.0);
    for (std::size_t query : queries) {
        const std::vector<std::size_t> pool = candidate_pool(index, query, filter);
        if (pool.size() < static_cast<std::size_t>(kmax)) {
            throw InsufficientCandidatesError(
                "retrieval_report: pool of " + std::to_string(pool.size()) +
                " is smaller than k=" + std::to_string(kmax));
        }
        const std::vector<double> pas = oracle_pa_sorted(index, query, pool);
        for (std::size_t i = 0; i < ks.size(); ++i) oracle_sum[i] += prefix_mean(pas, ks[i]);
        if (oracle_only) continue;
        const std::vector<std::size_t> got = retrieve(index, query, kmax, filter);
        const IndexEntry& q = index.entries[query];
        std::vector<double> model_pas;
        model_pas.reserve(got.size());
        for (std::size_t i : got) {
            model_pas.push_back(pa_mpjpe(index.entries[i].pose_global, q.pose_global));
        }
        for (std::size_t i = 0; i < ks.size(); ++i) model_sum[i] += prefix_mean(model_pas, ks[i]);
    }

    RetrievalReport report;
    const double nq = static_cast<double>(queries.size());
    for (std::size_t i = 0; i < ks.size(); ++i) {
        RetrievalRow row;
        row.k = ks[i];
        row.filter = filter;
        row.oracle_mm = oracle_sum[i] / nq;
        row.n_queries = static_cast<int>(queries.size());
        if (!oracle_only) {
            row.model_mm = model_sum[i] / nq;
            row.delta_mm = *row.model_mm - row.oracle_mm;
        }
        report.rows.push_back(row);
    }
    return report;
}

void write_retrieval_report(const RetrievalReport& report, const std::string& path) {
    std::string out = "K,filter,model_pampjpe_mm,oracle_pampjpe_mm,delta_mm,n_queries\n";
    for (const auto& r : report.rows) {
        out += std::to_string(r.k) + ',' + filter_name(r.filter) + ',';
        if (r.model_mm) out += format_double(*r.model_mm);
        out += ',' + format_double(r.oracle_mm) + ',';
        if (r.delta_mm) out += format_double(*r.delta_mm);
        out += ',' + std::to_string(r.n_queries) + '\n';
    }
    atomic_write_file(path, out);
}

CorrelationReport correlation_report(const EmbeddingIndex& index, int n_queries,
                                     std::vector<double> edges, Rng& rng, int auto_bins) {
    if (index.size() == 0) throw ValidationError("correlation_report: empty index");
    if (n_queries < 1) throw ConfigError("correlation_report: n_queries must be >= 1");
    if (auto_bins < 1) throw ConfigError("correlation_report: auto_bins must be >= 1");
    for (std::size_t i = 1; i < edges.size(); ++i) {
        if (!(edges[i] > edges[i - 1])) {
            throw ConfigError("correlation_report: bin edges must be strictly increasing");
        }
    }
    if (edges.size() == 1) throw ConfigError("correlation_report: need at least 2 bin edges");

    std::vector<std::size_t> queries(index.size());
    for (std::size_t i = 0; i < queries.size(); ++i) queries[i] = i;
    if (static_cast<std::size_t>(n_queries) < queries.size()) {
        for (int i = 0; i < n_queries; ++i) {
            const std::size_t r = static_cast<std::size_t>(i) +
                                  uniform_index(rng, queries.size() - static_cast<std::size_t>(i));
            std::swap(queries[static_cast<std::size_t>(i)], queries[r]);
        }
        queries.resize(static_cast<std::size_t>(n_queries));
    }

    struct Pair {
        double pose_dist;
        double emb_dist;
        bool same_view;
    };
    std::vector<Pair> pairs;
    for (std::size_t query : queries) {
        const IndexEntry& q = index.entries[query];
        for (std::size_t i = 0; i < index.size(); ++i) {
            if (i == query) continue;
            const IndexEntry& c = index.entries[i];
            if (c.subject_id != q.subject_id) continue;
            pairs.push_back({mpjpe(q.pose_global, c.pose_global),
                             (q.embedding - c.embedding).norm(),
                             c.view_id == q.view_id});
        }
    }

    if (edges.empty()) {
        std::vector<double> dists;
        dists.reserve(pairs.size());
        for (const Pair& p : pairs) dists.push_back(p.pose_dist);
        double hi = dists.empty() ? 0.0 : percentile(dists, 95.0);
        if (!(hi > 0.0)) hi = 1e-9;
        for (int i = 0; i <= auto_bins; ++i) edges.push_back(hi * i / auto_bins);
    }

    const std::size_t nbins = edges.size() - 1;
    std::vector<double> sum_same(nbins, 0.0), sum_diff(nbins, 0.0);
    std::vector<long> cnt_same(nbins, 0), cnt_diff(nbins, 0);
    for (const Pair& p : pairs) {
        if (p.pose_dist < edges.front() || p.pose_dist > edges.back()) continue;
        std::size_t b = static_cast<std::size_t>(
            std::upper_bound(edges.begin(), edges.end(), p.pose_dist) - edges.begin());
        if (b > 0) --b;              // upper_bound gives the edge after the bin
        if (b >= nbins) b = nbins - 1;  // pose_dist == edges.back()
        if (p.same_view) {
            sum_same[b] += p.emb_dist;
            ++cnt_same[b];
        } else {
            sum_diff[b] += p.emb_dist;
            ++cnt_diff[b];
        }
    }

    CorrelationReport report;
    std::vector<double> mid_same, val_same, mid_diff, val_diff;
    for (std::size_t b = 0; b < nbins; ++b) {
        CorrelationBin bin;
        bin.lo = edges[b];
        bin.hi = edges[b + 1];
        bin.n_same = cnt_same[b];
        bin.n_diff = cnt_diff[b];
        const double mid = 0.5 * (bin.lo + bin.hi);
        if (cnt_same[b] > 0) {
            bin.mean_dist_same_view = sum_same[b] / cnt_same[b];
            mid_same.push_back(mid);
            val_same.push_back(*bin.mean_dist_same_view);
        }
        if (cnt_diff[b] > 0) {
            bin.mean_dist_diff_view = sum_diff[b] / cnt_diff[b];
            mid_diff.push_back(mid);
            val_diff.push_back(*bin.mean_dist_diff_view);
        }
        report.bins.push_back(bin);
    }
    report.spearman_same = spearman_rho(mid_same, val_same);
    report.spearman_diff = spearman_rho(mid_diff, val_diff);
    return report;
}

void write_correlation_report(const CorrelationReport& report, const std::string& path) {
    std::string out = "bin_lo_mm,bin_hi_mm,mean_dist_same_view,mean_dist_diff_view,n_same,n_diff\n";
    for (const auto& b : report.bins) {
        out += format_double(b.lo) + ',' + format_double(b.hi) + ',';
        if (b.mean_dist_same_view) out += format_double(*b.mean_dist_same_view);
        out += ',';
        if (b.mean_dist_diff_view) out += format_double(*b.mean_dist_diff_view);
        out += ',' + std::to_string(b.n_same) + ',' + std::to_string(b.n_diff) + '\n';
    }
    out += "spearman,," + format_double(report.spearman_same) + ',' +
           format_double(report.spearman_diff) + ",,\n";
    atomic_write_file(path, out);
}

}  // namespace mcss
