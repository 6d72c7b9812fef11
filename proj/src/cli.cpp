#include "mcss/cli.hpp"

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "mcss/checkpoint.hpp"
#include "mcss/dataset.hpp"
#include "mcss/errors.hpp"
#include "mcss/metrics.hpp"
#include "mcss/retrieval.hpp"
#include "mcss/svg.hpp"
#include "mcss/training.hpp"
#include "mcss/util.hpp"

namespace mcss {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

void ensure_out_dir(const std::string& out) {
    std::error_code ec;
    fs::create_directories(out, ec);
    if (ec) throw IoError("cannot create output directory '" + out + "': " + ec.message());
}

// Wall-clock data lives only here so every CSV stays byte-reproducible.
void write_sidecar(const std::string& out, const std::string& command) {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    json j;
    j["command"] = command;
    j["timestamp_utc"] = buf;
    j["timestamp_unix"] = static_cast<std::int64_t>(t);
    atomic_write_file(out + "/run_meta.json", j.dump(2) + "\n");
}

void write_echo(const CLI::App* sub, const std::string& out) {
    atomic_write_file(out + "/config_echo.ini",
                      "[" + sub->get_name() + "]\n" + sub->config_to_str(true, false));
}

ProjectionMode camera_mode_from(const std::string& name) {
    if (name == "orthographic") return ProjectionMode::orthographic;
    if (name == "perspective") return ProjectionMode::perspective;
    throw ConfigError("camera-mode must be 'orthographic' or 'perspective'");
}

RetrievalFilter filter_from(const std::string& name) {
    if (name == "cross-view") return RetrievalFilter::cross_view;
    if (name == "cross-subject") return RetrievalFilter::cross_subject;
    throw ConfigError("filter must be 'cross-view' or 'cross-subject'");
}

json train_config_to_json(const TrainConfig& tc, const std::string& dataset_path) {
    json j;
    j["mode"] = tc.mode == TrainMode::mcss ? "mcss" : "baseline";
    j["alpha"] = tc.alpha;
    j["beta"] = tc.beta;
    j["embed_dim"] = tc.embed_dim;
    j["metric_batch"] = tc.metric_batch;
    j["regression_batch"] = tc.regression_batch;
    j["batch_ratio"] = tc.batch_ratio;
    j["epochs"] = tc.epochs;
    j["base_lr"] = tc.base_lr;
    j["lr_drop_every"] = tc.lr_drop_every;
    j["lr_drop_factor"] = tc.lr_drop_factor;
    j["lambda_pose"] = tc.lambda_pose;
    j["min_temporal_gap"] = tc.min_temporal_gap;
    j["val_fraction"] = tc.val_fraction;
    j["seed"] = tc.seed;
    j["supervision_fraction"] = tc.supervision.fraction;
    if (tc.supervision.subjects) j["supervision_subjects"] = *tc.supervision.subjects;
    j["alternate_steps"] = tc.alternate_steps;
    j["cross_subject_batches"] = tc.cross_subject_batches;
    j["adam_beta1"] = tc.adam.beta1;
    j["adam_beta2"] = tc.adam.beta2;
    j["adam_epsilon"] = tc.adam.epsilon;
    j["dataset"] = dataset_path;
    return j;
}

Dataset subset_records(const Dataset& d, const std::set<FrameKey>& keys) {
    Dataset out;
    out.skeleton = d.skeleton;
    out.cameras = d.cameras;
    out.subjects = d.subjects;
    for (const auto& rec : d.records) {
        if (keys.count({rec.subject_id, rec.frame_index})) out.records.push_back(rec);
    }
    return out;
}

const char* error_kind(ErrorCode code) {
    switch (code) {
        case ErrorCode::config: return "config";
        case ErrorCode::io: return "io";
        case ErrorCode::validation: return "validation";
        case ErrorCode::numeric: return "numeric";
        case ErrorCode::batch_construction: return "batch";
    }
    return "unknown";
}

std::string one_line(std::string s) {
    for (char& c : s) {
        if (c == '\n' || c == '\r' || c == '\t') c = ' ';
    }
    return s;
}

struct EvalSplit {
    // val_fraction resolution: explicit flag > checkpoint config > 0.2
    static double resolve(const CLI::Option* flag_opt, double flag_value, const json& ckpt_cfg) {
        if (flag_opt->count() > 0) return flag_value;
        if (ckpt_cfg.contains("val_fraction") && ckpt_cfg["val_fraction"].is_number()) {
            return ckpt_cfg["val_fraction"].get<double>();
        }
        return 0.2;
    }
};

}  // namespace

int run_cli(const std::vector<std::string>& args) {
    CLI::App app{"Multiview-consistent semi-supervised pose embeddings"};
    app.name("mcss");
    app.require_subcommand(1);
    app.set_config("--config", "", "INI config file; sections name the subcommand");
    app.allow_config_extras(CLI::config_extras_mode::error);
    app.option_defaults()->always_capture_default(true);

    // ---- generate ----------------------------------------------------------
    GenConfig gen;
    std::string gen_mode = "perspective";
    std::uint64_t gen_seed = 0;
    std::string gen_out;
    auto* g = app.add_subcommand("generate", "Generate a synthetic multiview mocap dataset");
    g->fallthrough();
    g->option_defaults()->always_capture_default(true);
    g->add_option("--subjects", gen.n_subjects, "Number of subjects");
    g->add_option("--views", gen.n_views, "Number of cameras");
    g->add_option("--frames", gen.n_frames, "Frames per subject");
    g->add_option("--noise-sigma", gen.noise_sigma, "Observation noise sigma (viewport units)");
    g->add_option("--detector-bias", gen.detector_bias,
                  "Systematic per-(subject,view,joint) keypoint offset sigma (viewport units)");
    g->add_option("--angle-step", gen.angle_step, "Random-walk step per joint angle (rad)");
    g->add_option("--angle-range", gen.angle_range, "Joint angle clamp (rad)");
    g->add_option("--heading-range", gen.heading_range, "Root heading clamp (rad, <= pi)");
    g->add_option("--camera-distance", gen.camera_distance, "Camera distance (mm)");
    g->add_option("--camera-elevation", gen.camera_elevation, "Camera elevation (rad)");
    g->add_option("--camera-focal", gen.camera_focal, "Focal length (mm)");
    g->add_option("--camera-mode", gen_mode, "Projection model")
        ->check(CLI::IsMember({"orthographic", "perspective"}));
    g->add_option("--bone-scale-min", gen.bone_scale_min, "Per-subject bone scale lower bound");
    g->add_option("--bone-scale-max", gen.bone_scale_max, "Per-subject bone scale upper bound");
    g->add_option("--seed", gen_seed, "RNG seed");
    g->add_option("--out", gen_out, "Output directory")->required();
    g->callback([&]() {
        ensure_out_dir(gen_out);
        write_echo(g, gen_out);
        write_sidecar(gen_out, "generate");
        gen.camera_mode = camera_mode_from(gen_mode);
        const Dataset d = generate(gen, gen_seed);
        write_dataset(d, gen_out + "/dataset.ndjson");
    });

    // ---- train -------------------------------------------------------------
    TrainConfig tc;
    std::string tr_mode = "mcss";
    std::string tr_dataset, tr_out, tr_init_ckpt;
    std::vector<int> tr_subjects;
    auto* t = app.add_subcommand("train", "Train the embedding and pose head");
    t->fallthrough();
    t->option_defaults()->always_capture_default(true);
    t->add_option("--dataset", tr_dataset, "Dataset file")->required();
    t->add_option("--out", tr_out, "Output directory")->required();
    t->add_option("--mode", tr_mode, "mcss (metric + pose) or baseline (pose only)")
        ->check(CLI::IsMember({"mcss", "baseline"}));
    t->add_option("--alpha", tc.alpha, "Contrastive margin");
    t->add_option("--beta", tc.beta, "Negative exclusion radius");
    t->add_option("--embed-dim", tc.embed_dim, "Embedding dimension");
    t->add_option("--metric-batch", tc.metric_batch, "Anchor/positive pairs per metric batch");
    t->add_option("--regression-batch", tc.regression_batch, "Samples per regression batch");
    t->add_option("--ratio", tc.batch_ratio, "Metric:regression batch-size ratio");
    t->add_option("--epochs", tc.epochs, "Training epochs");
    t->add_option("--lr", tc.base_lr, "Base learning rate");
    t->add_option("--lr-drop-every", tc.lr_drop_every, "Epochs between learning-rate drops");
    t->add_option("--lr-drop-factor", tc.lr_drop_factor, "Learning-rate drop factor");
    t->add_option("--lambda-pose", tc.lambda_pose, "Weight of the pose regression loss");
    t->add_option("--min-gap", tc.min_temporal_gap, "Minimum frame gap inside a metric batch");
    t->add_option("--val-fraction", tc.val_fraction, "Trailing fraction of frames held out");
    t->add_option("--seed", tc.seed, "RNG seed");
    auto* subj_opt = t->add_option("--supervision-subjects", tr_subjects,
                                   "Subjects whose labels are used (empty = all)")
                         ->delimiter(',');
    t->add_option("--supervision-fraction", tc.supervision.fraction,
                  "Fraction of each supervised subject's frames that keep labels");
    t->add_flag("--alternate", tc.alternate_steps,
                "Apply metric and pose gradients as separate optimizer steps");
    t->add_flag("--cross-subject-batches", tc.cross_subject_batches,
                "Let one metric batch mix subjects");
    t->add_option("--init-checkpoint", tr_init_ckpt, "Warm-start checkpoint for fine-tuning");
    t->callback([&]() {
        ensure_out_dir(tr_out);
        write_echo(t, tr_out);
        write_sidecar(tr_out, "train");
        tc.mode = tr_mode == "baseline" ? TrainMode::baseline : TrainMode::mcss;
        if (subj_opt->count() > 0 && !tr_subjects.empty()) tc.supervision.subjects = tr_subjects;
        const Dataset d = read_dataset(tr_dataset);
        std::optional<WarmStart> warm;
        if (!tr_init_ckpt.empty()) {
            const Checkpoint ck = read_checkpoint(tr_init_ckpt);
            warm = WarmStart{ck.encoder_spec, ck.head_spec,   ck.encoder,   ck.head,
                             ck.encoder_adam, ck.head_adam,   ck.normalizer};
        }
        const TrainResult r = train(d, tc, warm ? &*warm : nullptr);
        const Checkpoint out_ck =
            checkpoint_from_result(r, train_config_to_json(tc, tr_dataset));
        write_checkpoint(out_ck, tr_out + "/checkpoint.json");
        write_train_log(r.log, tr_out + "/train_log.csv");
    });

    // ---- eval-pose ---------------------------------------------------------
    std::string ep_dataset, ep_ckpt, ep_out;
    double ep_val_fraction = 0.2;
    auto* ep = app.add_subcommand("eval-pose", "Pose metrics (MPJPE triple) on the held-out split");
    ep->fallthrough();
    ep->option_defaults()->always_capture_default(true);
    ep->add_option("--dataset", ep_dataset, "Dataset file")->required();
    ep->add_option("--checkpoint", ep_ckpt, "Trained checkpoint")->required();
    ep->add_option("--out", ep_out, "Output directory")->required();
    auto* ep_vf_opt = ep->add_option("--val-fraction", ep_val_fraction,
                                     "Held-out fraction (default: the checkpoint's)");
    ep->callback([&]() {
        ensure_out_dir(ep_out);
        write_echo(ep, ep_out);
        write_sidecar(ep_out, "eval-pose");
        const Dataset d = read_dataset(ep_dataset);
        const Checkpoint ck = read_checkpoint(ep_ckpt);
        const double vf = EvalSplit::resolve(ep_vf_opt, ep_val_fraction, ck.config_echo);
        const std::set<FrameKey> val = validation_keys(d, vf);

        std::map<FrameKey, Pose> canonical;
        std::string csv = "subject,view,frame,mpjpe_mm,nmpjpe_mm,pampjpe_mm\n";
        double sum_m = 0.0, sum_n = 0.0, sum_p = 0.0;
        long count = 0;
        for (const auto& rec : d.records) {
            const FrameKey key{rec.subject_id, rec.frame_index};
            if (!val.empty() && !val.count(key)) continue;
            auto it = canonical.find(key);
            if (it == canonical.end()) {
                it = canonical
                         .emplace(key, canonical_transform(rec.pose_global,
                                                           d.skeleton.left_hip_index)
                                           .pose)
                         .first;
            }
            const Pose pred = predict_pose(ck.encoder_spec, ck.encoder, ck.head_spec, ck.head,
                                           ck.normalizer, rec.observation);
            const double m = mpjpe(pred, it->second);
            const double n = n_mpjpe(pred, it->second);
            const double p = pa_mpjpe(pred, it->second);
            csv += std::to_string(rec.subject_id) + ',' + std::to_string(rec.view_id) + ',' +
                   std::to_string(rec.frame_index) + ',' + format_double(m) + ',' +
                   format_double(n) + ',' + format_double(p) + '\n';
            sum_m += m;
            sum_n += n;
            sum_p += p;
            ++count;
        }
        if (count == 0) throw ValidationError("eval-pose: no records selected");
        csv += "mean,,," + format_double(sum_m / count) + ',' + format_double(sum_n / count) +
               ',' + format_double(sum_p / count) + '\n';
        atomic_write_file(ep_out + "/pose_metrics.csv", csv);
    });

    // ---- eval-retrieval ----------------------------------------------------
    std::string er_dataset, er_ckpt, er_out, er_filter = "cross-view", er_split = "val";
    std::vector<int> er_ks = {1, 5, 10, 20};
    int er_queries = 0;  // 0 = every index entry
    int er_corr_queries = 100;
    int er_bins = 10;
    double er_val_fraction = 0.2;
    std::uint64_t er_seed = 0;
    bool er_oracle_only = false, er_plots = false;
    auto* er = app.add_subcommand("eval-retrieval",
                                  "Retrieval benchmark and distance-correlation report");
    er->fallthrough();
    er->option_defaults()->always_capture_default(true);
    er->add_option("--dataset", er_dataset, "Dataset file")->required();
    er->add_option("--checkpoint", er_ckpt, "Trained checkpoint (optional with --oracle-only)");
    er->add_option("--out", er_out, "Output directory")->required();
    er->add_option("--k", er_ks, "K values for Mean-PA-MPJPE@K")->delimiter(',');
    er->add_option("--filter", er_filter, "Candidate filter")
        ->check(CLI::IsMember({"cross-view", "cross-subject"}));
    er->add_option("--split", er_split, "Records to index: held-out split or the whole file")
        ->check(CLI::IsMember({"val", "all"}));
    auto* er_vf_opt = er->add_option("--val-fraction", er_val_fraction,
                                     "Held-out fraction (default: the checkpoint's)");
    er->add_option("--queries", er_queries, "Query subsample size (0 = all entries)");
    er->add_option("--correlation-queries", er_corr_queries,
                   "Queries sampled for the correlation report");
    er->add_option("--bins", er_bins, "Pose-distance bins in the correlation report");
    er->add_option("--seed", er_seed, "RNG seed for query subsampling");
    er->add_flag("--oracle-only", er_oracle_only, "Skip the model ranking (no checkpoint needed)");
    er->add_flag("--plots", er_plots, "Also write SVG line charts");
    er->callback([&]() {
        ensure_out_dir(er_out);
        write_echo(er, er_out);
        write_sidecar(er_out, "eval-retrieval");
        const Dataset d = read_dataset(er_dataset);

        MlpSpec enc_spec;
        MlpParams enc;
        json ckpt_cfg = json::object();
        if (!er_ckpt.empty()) {
            const Checkpoint ck = read_checkpoint(er_ckpt);
            enc_spec = ck.encoder_spec;
            enc = ck.encoder;
            ckpt_cfg = ck.config_echo;
        } else if (er_oracle_only) {
            // The oracle ranks by ground-truth PA-MPJPE; embeddings are inert.
            enc_spec = encoder_spec();
            Rng r0 = make_rng(er_seed, 10);
            enc = init_params(enc_spec, r0);
        } else {
            throw ConfigError("eval-retrieval: --checkpoint is required unless --oracle-only");
        }

        Dataset indexed;
        if (er_split == "all") {
            indexed = d;
        } else {
            const double vf = EvalSplit::resolve(er_vf_opt, er_val_fraction, ckpt_cfg);
            const std::set<FrameKey> val = validation_keys(d, vf);
            indexed = val.empty() ? d : subset_records(d, val);
        }
        const EmbeddingIndex index = build_index(indexed, enc_spec, enc);
        if (index.size() == 0) throw ValidationError("eval-retrieval: nothing to index");

        std::vector<std::size_t> queries(index.size());
        for (std::size_t i = 0; i < queries.size(); ++i) queries[i] = i;
        if (er_queries > 0 && static_cast<std::size_t>(er_queries) < queries.size()) {
            Rng rq = make_rng(er_seed, 21);
            for (int i = 0; i < er_queries; ++i) {
                const std::size_t r =
                    static_cast<std::size_t>(i) +
                    uniform_index(rq, queries.size() - static_cast<std::size_t>(i));
                std::swap(queries[static_cast<std::size_t>(i)], queries[r]);
            }
            queries.resize(static_cast<std::size_t>(er_queries));
            std::sort(queries.begin(), queries.end());
        }

        const RetrievalFilter filter = filter_from(er_filter);
        const RetrievalReport rep =
            retrieval_report(index, queries, er_ks, filter, er_oracle_only);
        write_retrieval_report(rep, er_out + "/retrieval_report.csv");

        Rng rc = make_rng(er_seed, 22);
        const CorrelationReport corr =
            correlation_report(index, er_corr_queries, {}, rc, er_bins);
        write_correlation_report(corr, er_out + "/correlation.csv");

        if (er_plots) {
            std::vector<ChartSeries> kcurves;
            ChartSeries oracle_s{"oracle", {}, {}};
            ChartSeries model_s{"model", {}, {}};
            for (const auto& row : rep.rows) {
                oracle_s.x.push_back(row.k);
                oracle_s.y.push_back(row.oracle_mm);
                if (row.model_mm) {
                    model_s.x.push_back(row.k);
                    model_s.y.push_back(*row.model_mm);
                }
            }
            if (!model_s.x.empty()) kcurves.push_back(model_s);
            kcurves.push_back(oracle_s);
            write_line_chart_svg(er_out + "/retrieval_pampjpe_vs_k.svg",
                                 "Mean-PA-MPJPE@K (" + er_filter + ")", "K",
                                 "Mean-PA-MPJPE (mm)", kcurves);

            ChartSeries same_s{"same view", {}, {}};
            ChartSeries diff_s{"different view", {}, {}};
            for (const auto& b : corr.bins) {
                const double mid = 0.5 * (b.lo + b.hi);
                if (b.mean_dist_same_view) {
                    same_s.x.push_back(mid);
                    same_s.y.push_back(*b.mean_dist_same_view);
                }
                if (b.mean_dist_diff_view) {
                    diff_s.x.push_back(mid);
                    diff_s.y.push_back(*b.mean_dist_diff_view);
                }
            }
            write_line_chart_svg(er_out + "/correlation_curves.svg",
                                 "Embedding distance vs pose distance", "pose MPJPE bin (mm)",
                                 "mean embedding distance", {same_s, diff_s});
        }
    });

    // ---- embed -------------------------------------------------------------
    std::string em_dataset, em_ckpt, em_out;
    auto* em = app.add_subcommand("embed", "Write per-record embeddings to CSV");
    em->fallthrough();
    em->option_defaults()->always_capture_default(true);
    em->add_option("--dataset", em_dataset, "Dataset file")->required();
    em->add_option("--checkpoint", em_ckpt, "Trained checkpoint")->required();
    em->add_option("--out", em_out, "Output directory")->required();
    em->callback([&]() {
        ensure_out_dir(em_out);
        write_echo(em, em_out);
        write_sidecar(em_out, "embed");
        const Dataset d = read_dataset(em_dataset);
        const Checkpoint ck = read_checkpoint(em_ckpt);
        const auto n = d.records.size();
        Eigen::MatrixXd x(kObsDim, static_cast<Eigen::Index>(n));
        for (std::size_t i = 0; i < n; ++i) {
            x.col(static_cast<Eigen::Index>(i)) =
                Eigen::Map<const Eigen::Matrix<double, kObsDim, 1>>(
                    d.records[i].observation.coords.data());
        }
        const Eigen::MatrixXd phi =
            n > 0 ? forward(ck.encoder_spec, ck.encoder, x) : Eigen::MatrixXd(0, 0);
        std::string csv = "subject,view,frame";
        for (int e = 0; e < ck.encoder_spec.output_dim(); ++e) {
            csv += ",e" + std::to_string(e);
        }
        csv += '\n';
        for (std::size_t i = 0; i < n; ++i) {
            const auto& rec = d.records[i];
            csv += std::to_string(rec.subject_id) + ',' + std::to_string(rec.view_id) + ',' +
                   std::to_string(rec.frame_index);
            for (Eigen::Index e = 0; e < phi.rows(); ++e) {
                csv += ',' + format_double(phi(e, static_cast<Eigen::Index>(i)));
            }
            csv += '\n';
        }
        atomic_write_file(em_out + "/embeddings.csv", csv);
    });

    std::vector<const char*> argv;
    argv.reserve(args.size() + 1);
    argv.push_back("mcss");
    for (const auto& a : args) argv.push_back(a.c_str());

    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::fprintf(stderr, "error\tconfig\t%s\n", one_line(e.what()).c_str());
        return 1;
    } catch (const Error& e) {
        std::fprintf(stderr, "error\t%s\t%s\n", error_kind(e.code()),
                     one_line(e.what()).c_str());
        return static_cast<int>(e.code());
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error\tinternal\t%s\n", one_line(e.what()).c_str());
        return 4;
    }
    return 0;
}

}  // namespace mcss
