#include "mcss/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <sstream>

#include <json.hpp>

#include "mcss/errors.hpp"
#include "mcss/rng.hpp"
#include "mcss/util.hpp"

namespace mcss {

namespace {

Eigen::Matrix3d euler_zyx(double ax, double ay, double az) {
    return (Eigen::AngleAxisd(az, Eigen::Vector3d::UnitZ()) *
            Eigen::AngleAxisd(ay, Eigen::Vector3d::UnitY()) *
            Eigen::AngleAxisd(ax, Eigen::Vector3d::UnitX()))
        .toRotationMatrix();
}

struct AngleWalk {
    // 3 Euler channels per joint, joint-major.
    std::vector<double> value;
    std::vector<double> range;

    void init(Rng& rng) {
        for (size_t i = 0; i < value.size(); ++i) {
            value[i] = uniform_real(rng, -0.5 * range[i], 0.5 * range[i]);
        }
    }

    void step(Rng& rng, double step_size) {
        for (size_t i = 0; i < value.size(); ++i) {
            const double next = value[i] + uniform_real(rng, -step_size, step_size);
            value[i] = std::clamp(next, -range[i], range[i]);
        }
    }
};

Pose forward_kinematics(const SkeletonMeta& skeleton, const std::vector<double>& bone_scales,
                        const std::vector<double>& angles) {
    const auto& offsets = default_bone_offsets();
    std::array<Eigen::Matrix3d, kNumJoints> global_rot;
    Pose pose;
    for (int j = 0; j < kNumJoints; ++j) {
        const auto sj = static_cast<size_t>(j);
        const Eigen::Matrix3d local =
            euler_zyx(angles[3 * sj], angles[3 * sj + 1], angles[3 * sj + 2]);
        const int parent = skeleton.parents[sj];
        if (parent < 0) {
            global_rot[sj] = local;
            pose.joints[sj].setZero();
        } else {
            const auto sp = static_cast<size_t>(parent);
            global_rot[sj] = global_rot[sp] * local;
            pose.joints[sj] = pose.joints[sp] + global_rot[sp] * (bone_scales[sj] * offsets[sj]);
        }
    }
    return pose;
}

}  // namespace

Dataset generate(const GenConfig& config, std::uint64_t seed) {
    if (config.n_subjects < 1) throw ConfigError("generate: n_subjects must be >= 1");
    if (config.n_views < 2) throw ConfigError("generate: metric learning needs n_views >= 2");
    if (config.n_frames < 1) throw ConfigError("generate: n_frames must be >= 1");
    if (config.noise_sigma < 0.0) throw ConfigError("generate: noise_sigma must be >= 0");
    if (config.detector_bias < 0.0) throw ConfigError("generate: detector_bias must be >= 0");
    if (config.heading_range < 0.0 || config.heading_range > M_PI) {
        throw ConfigError("generate: heading_range must be in [0, pi]");
    }
    if (config.camera_distance <= 0.0) throw ConfigError("generate: camera_distance must be > 0");
    if (config.bone_scale_min <= 0.0 || config.bone_scale_max < config.bone_scale_min) {
        throw ConfigError("generate: bone scale range is invalid");
    }

    Dataset dataset;
    dataset.skeleton = default_skeleton();
    for (int v = 0; v < config.n_views; ++v) {
        Camera cam;
        cam.azimuth = 2.0 * M_PI * v / config.n_views;
        cam.elevation = config.camera_elevation;
        cam.distance = config.camera_distance;
        cam.mode = config.camera_mode;
        cam.focal = config.camera_focal;
        dataset.cameras.push_back(cam);
    }

    Rng rng_scales = make_rng(seed, 1);
    Rng rng_angles = make_rng(seed, 2);
    Rng rng_noise = make_rng(seed, 3);
    Rng rng_bias = make_rng(seed, 4);

    // Systematic per-(subject, view, joint) keypoint offsets, constant over
    // time: the synthetic stand-in for how a real 2D detector's errors depend
    // on who is in frame and which camera sees them.
    std::vector<double> bias(static_cast<size_t>(config.n_subjects) *
                             static_cast<size_t>(config.n_views) * kObsDim);
    for (double& b : bias) b = config.detector_bias * gaussian(rng_bias);

    for (int s = 0; s < config.n_subjects; ++s) {
        SubjectDesc desc;
        desc.bone_scales.resize(kNumJoints, 1.0);
        for (int j = 1; j < kNumJoints; ++j) {
            desc.bone_scales[static_cast<size_t>(j)] =
                uniform_real(rng_scales, config.bone_scale_min, config.bone_scale_max);
        }
        dataset.subjects.push_back(desc);
    }

    dataset.records.reserve(static_cast<size_t>(config.n_subjects) *
                            static_cast<size_t>(config.n_frames) *
                            static_cast<size_t>(config.n_views));

    for (int s = 0; s < config.n_subjects; ++s) {
        AngleWalk walk;
        walk.value.assign(3 * kNumJoints, 0.0);
        walk.range.assign(3 * kNumJoints, config.angle_range);
        // The root's Z channel is the global heading; its own clamp keeps the
        // obs -> canonical mapping learnable while canonicalization still has
        // real work to do.
        walk.range[2] = config.heading_range;
        walk.init(rng_angles);

        for (int f = 0; f < config.n_frames; ++f) {
            if (f > 0) walk.step(rng_angles, config.angle_step);
            const Pose pose = forward_kinematics(
                dataset.skeleton, dataset.subjects[static_cast<size_t>(s)].bone_scales,
                walk.value);
            for (int v = 0; v < config.n_views; ++v) {
                FrameRecord rec;
                rec.subject_id = s;
                rec.view_id = v;
                rec.frame_index = f;
                rec.pose_global = pose;
                rec.observation = project(pose, dataset.cameras[static_cast<size_t>(v)]);
                const double* rec_bias =
                    bias.data() +
                    (static_cast<size_t>(s) * static_cast<size_t>(config.n_views) +
                     static_cast<size_t>(v)) *
                        kObsDim;
                for (int c = 0; c < kObsDim; ++c) {
                    rec.observation.coords[static_cast<size_t>(c)] +=
                        rec_bias[c] + config.noise_sigma * gaussian(rng_noise);
                }
                dataset.records.push_back(std::move(rec));
            }
        }
    }
    return dataset;
}

namespace {

const char* mode_name(ProjectionMode mode) {
    return mode == ProjectionMode::orthographic ? "orthographic" : "perspective";
}

ProjectionMode mode_from_name(const std::string& name, long line) {
    if (name == "orthographic") return ProjectionMode::orthographic;
    if (name == "perspective") return ProjectionMode::perspective;
    throw ParseError("unknown camera mode '" + name + "'", line);
}

void append_array(std::string& out, const double* values, int count) {
    out += '[';
    for (int i = 0; i < count; ++i) {
        if (i > 0) out += ',';
        out += format_double17(values[i]);
    }
    out += ']';
}

std::string header_line(const Dataset& d) {
    std::string out = "{\"version\":1,\"skeleton\":{\"joint_names\":[";
    for (size_t i = 0; i < d.skeleton.joint_names.size(); ++i) {
        if (i > 0) out += ',';
        out += nlohmann::json(d.skeleton.joint_names[i]).dump();
    }
    out += "],\"parents\":[";
    for (size_t i = 0; i < d.skeleton.parents.size(); ++i) {
        if (i > 0) out += ',';
        out += std::to_string(d.skeleton.parents[i]);
    }
    out += "],\"lh_index\":" + std::to_string(d.skeleton.left_hip_index) + "},\"cameras\":[";
    for (size_t i = 0; i < d.cameras.size(); ++i) {
        const Camera& c = d.cameras[i];
        if (i > 0) out += ',';
        out += "{\"azimuth\":" + format_double17(c.azimuth) +
               ",\"elevation\":" + format_double17(c.elevation) +
               ",\"distance\":" + format_double17(c.distance) + ",\"mode\":\"" +
               mode_name(c.mode) + "\",\"focal\":" + format_double17(c.focal) + "}";
    }
    out += "],\"subjects\":[";
    for (size_t i = 0; i < d.subjects.size(); ++i) {
        if (i > 0) out += ',';
        out += "{\"scales\":";
        append_array(out, d.subjects[i].bone_scales.data(),
                     static_cast<int>(d.subjects[i].bone_scales.size()));
        out += '}';
    }
    out += "]}";
    return out;
}

std::string record_line(const FrameRecord& r) {
    std::string out = "{\"subject\":" + std::to_string(r.subject_id) +
                      ",\"view\":" + std::to_string(r.view_id) +
                      ",\"frame\":" + std::to_string(r.frame_index) + ",\"pose\":";
    double pose_flat[kPoseDim];
    for (int j = 0; j < kNumJoints; ++j) {
        const auto& p = r.pose_global.joints[static_cast<size_t>(j)];
        pose_flat[3 * j] = p.x();
        pose_flat[3 * j + 1] = p.y();
        pose_flat[3 * j + 2] = p.z();
    }
    append_array(out, pose_flat, kPoseDim);
    out += ",\"obs\":";
    append_array(out, r.observation.coords.data(), kObsDim);
    out += '}';
    return out;
}

}  // namespace

void write_dataset(const Dataset& dataset, const std::string& path) {
    std::string out = header_line(dataset);
    out += '\n';
    for (const auto& rec : dataset.records) {
        out += record_line(rec);
        out += '\n';
    }
    atomic_write_file(path, out);
}

namespace {

using nlohmann::json;

json parse_line(const std::string& line, long line_no) {
    json j = json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object()) throw ParseError("malformed JSON object", line_no);
    return j;
}

double finite_number(const json& j, const char* what, long line_no) {
    if (!j.is_number()) throw ParseError(std::string(what) + " is not a number", line_no);
    const double v = j.get<double>();
    if (!std::isfinite(v)) throw ParseError(std::string(what) + " is not finite", line_no);
    return v;
}

int integer_field(const json& obj, const char* key, long line_no) {
    if (!obj.contains(key) || !obj[key].is_number_integer()) {
        throw ParseError(std::string("missing or non-integer '") + key + "'", line_no);
    }
    return obj[key].get<int>();
}

}  // namespace

Dataset read_dataset(const std::string& path) {
    std::istringstream in(read_file(path));
    std::string line;
    long line_no = 0;

    if (!std::getline(in, line)) throw ParseError("empty dataset file", 1);
    ++line_no;
    const json header = parse_line(line, line_no);
    if (!header.contains("version") || header["version"] != 1) {
        throw ParseError("missing or unsupported version", line_no);
    }
    if (!header.contains("skeleton") || !header.contains("cameras")) {
        throw ParseError("header needs 'skeleton' and 'cameras'", line_no);
    }

    Dataset d;
    const json& sk = header["skeleton"];
    if (!sk.contains("joint_names") || !sk.contains("parents") || !sk.contains("lh_index")) {
        throw ParseError("skeleton needs 'joint_names', 'parents', 'lh_index'", line_no);
    }
    d.skeleton.joint_names = sk["joint_names"].get<std::vector<std::string>>();
    d.skeleton.parents = sk["parents"].get<std::vector<int>>();
    d.skeleton.left_hip_index = sk["lh_index"].get<int>();

    for (const json& c : header["cameras"]) {
        Camera cam;
        cam.azimuth = finite_number(c.at("azimuth"), "camera azimuth", line_no);
        cam.elevation = finite_number(c.at("elevation"), "camera elevation", line_no);
        cam.distance = finite_number(c.at("distance"), "camera distance", line_no);
        cam.mode = mode_from_name(c.at("mode").get<std::string>(), line_no);
        cam.focal = finite_number(c.at("focal"), "camera focal", line_no);
        d.cameras.push_back(cam);
    }

    int max_subject_id = -1;
    if (header.contains("subjects")) {
        for (const json& s : header["subjects"]) {
            SubjectDesc desc;
            for (const json& v : s.at("scales")) {
                desc.bone_scales.push_back(finite_number(v, "bone scale", line_no));
            }
            d.subjects.push_back(desc);
        }
    }

    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        const json j = parse_line(line, line_no);
        FrameRecord rec;
        rec.subject_id = integer_field(j, "subject", line_no);
        rec.view_id = integer_field(j, "view", line_no);
        rec.frame_index = integer_field(j, "frame", line_no);

        if (!j.contains("pose") || !j["pose"].is_array() || j["pose"].size() != kPoseDim) {
            throw ParseError("'pose' must be an array of 48 numbers", line_no);
        }
        for (int i = 0; i < kPoseDim; ++i) {
            const double v = finite_number(j["pose"][static_cast<size_t>(i)], "pose coordinate",
                                           line_no);
            rec.pose_global.joints[static_cast<size_t>(i / 3)](i % 3) = v;
        }
        if (!j.contains("obs") || !j["obs"].is_array() || j["obs"].size() != kObsDim) {
            throw ParseError("'obs' must be an array of 32 numbers", line_no);
        }
        for (int i = 0; i < kObsDim; ++i) {
            rec.observation.coords[static_cast<size_t>(i)] =
                finite_number(j["obs"][static_cast<size_t>(i)], "obs coordinate", line_no);
        }
        max_subject_id = std::max(max_subject_id, rec.subject_id);
        d.records.push_back(std::move(rec));
    }

    // Files from external pipelines may omit subject descriptors.
    if (d.subjects.empty() && max_subject_id >= 0) {
        d.subjects.assign(static_cast<size_t>(max_subject_id) + 1,
                          SubjectDesc{std::vector<double>(kNumJoints, 1.0)});
    }

    validate_dataset(d);
    return d;
}

void validate_dataset(const Dataset& d) {
    if (d.skeleton.joint_names.size() != kNumJoints || d.skeleton.parents.size() != kNumJoints) {
        throw ValidationError("skeleton must describe exactly 16 joints");
    }
    if (d.skeleton.parents[0] != -1) throw ValidationError("skeleton joint 0 must be the root");
    for (int j = 1; j < kNumJoints; ++j) {
        const int p = d.skeleton.parents[static_cast<size_t>(j)];
        if (p < 0 || p >= kNumJoints || p == j) {
            throw ValidationError("skeleton parent index out of range at joint " +
                                  std::to_string(j));
        }
    }
    if (d.skeleton.left_hip_index < 1 || d.skeleton.left_hip_index >= kNumJoints) {
        throw ValidationError("skeleton lh_index out of range");
    }
    if (d.cameras.empty()) throw ValidationError("dataset has no cameras");
    for (const Camera& c : d.cameras) {
        if (!(c.distance > 0.0)) throw ValidationError("camera distance must be > 0");
        if (c.mode == ProjectionMode::perspective && !(c.focal > 0.0)) {
            throw ValidationError("perspective camera needs focal > 0");
        }
    }

    std::map<std::pair<int, int>, int> last_frame;          // (subject, view) -> frame
    std::map<FrameKey, const Pose*> sync_pose;              // (subject, frame) -> first pose
    for (const FrameRecord& rec : d.records) {
        if (rec.subject_id < 0 ||
            rec.subject_id >= static_cast<int>(d.subjects.size())) {
            throw ValidationError("record subject id " + std::to_string(rec.subject_id) +
                                  " out of range");
        }
        if (rec.view_id < 0 || rec.view_id >= static_cast<int>(d.cameras.size())) {
            throw ValidationError("record view id " + std::to_string(rec.view_id) +
                                  " out of range");
        }
        if (rec.frame_index < 0) throw ValidationError("record frame index is negative");
        if (!pose_is_finite(rec.pose_global)) {
            throw ValidationError("non-finite pose at subject " +
                                  std::to_string(rec.subject_id) + ", frame " +
                                  std::to_string(rec.frame_index));
        }
        if (rec.pose_global.joints[0] != Eigen::Vector3d::Zero()) {
            throw ValidationError("pelvis not at origin at subject " +
                                  std::to_string(rec.subject_id) + ", frame " +
                                  std::to_string(rec.frame_index));
        }
        for (double c : rec.observation.coords) {
            if (!std::isfinite(c)) {
                throw ValidationError("non-finite observation at subject " +
                                      std::to_string(rec.subject_id) + ", frame " +
                                      std::to_string(rec.frame_index));
            }
        }

        auto [it, inserted] = last_frame.try_emplace({rec.subject_id, rec.view_id},
                                                     rec.frame_index);
        if (!inserted) {
            if (rec.frame_index <= it->second) {
                throw ValidationError("frame indices not strictly increasing for subject " +
                                      std::to_string(rec.subject_id) + ", view " +
                                      std::to_string(rec.view_id));
            }
            it->second = rec.frame_index;
        }

        const FrameKey key{rec.subject_id, rec.frame_index};
        auto [sit, sinserted] = sync_pose.try_emplace(key, &rec.pose_global);
        if (!sinserted) {
            const Pose& ref = *sit->second;
            for (int j = 0; j < kNumJoints; ++j) {
                const auto diff = (ref.joints[static_cast<size_t>(j)] -
                                   rec.pose_global.joints[static_cast<size_t>(j)])
                                      .cwiseAbs()
                                      .maxCoeff();
                if (diff > 1e-9) {
                    throw ValidationError(
                        "views disagree on the pose of subject " +
                        std::to_string(rec.subject_id) + ", frame " +
                        std::to_string(rec.frame_index));
                }
            }
        }
    }
}

SupervisionSplit split_supervision(const Dataset& dataset, double fraction,
                                   const std::optional<std::vector<int>>& subjects_supervised,
                                   std::uint64_t seed) {
    if (!(fraction >= 0.0 && fraction <= 1.0)) {
        throw ConfigError("split_supervision: fraction must be in [0, 1]");
    }

    std::map<int, std::set<int>> frames_by_subject;
    for (const FrameRecord& rec : dataset.records) {
        frames_by_subject[rec.subject_id].insert(rec.frame_index);
    }

    std::set<int> selected_subjects;
    if (subjects_supervised) {
        for (int s : *subjects_supervised) {
            if (frames_by_subject.count(s)) selected_subjects.insert(s);
        }
    } else {
        for (const auto& [s, _] : frames_by_subject) selected_subjects.insert(s);
    }

    std::size_t pool_size = 0;
    for (int s : selected_subjects) pool_size += frames_by_subject[s].size();
    if (pool_size == 0 && fraction > 0.0) {
        throw ConfigError("split_supervision: supervised pool is empty");
    }

    Rng rng = make_rng(seed, 0x5eed5);
    std::set<FrameKey> labeled_set;
    for (int s : selected_subjects) {
        const std::vector<int> frames(frames_by_subject[s].begin(), frames_by_subject[s].end());
        const auto n = frames.size();
        const auto k = static_cast<std::size_t>(
            std::ceil(fraction * static_cast<double>(n)) + 0.5);
        if (k == 0) continue;
        const double stride = static_cast<double>(n) / static_cast<double>(k);
        const double offset = uniform_real(rng, 0.0, stride);
        for (std::size_t i = 0; i < k; ++i) {
            auto pos = static_cast<std::size_t>(offset + stride * static_cast<double>(i));
            if (pos >= n) pos = n - 1;
            labeled_set.insert({s, frames[pos]});
        }
    }

    SupervisionSplit split;
    for (const auto& [s, frames] : frames_by_subject) {
        for (int f : frames) {
            const FrameKey key{s, f};
            if (labeled_set.count(key)) {
                split.labeled.push_back(key);
            } else {
                split.unlabeled.push_back(key);
            }
        }
    }
    return split;
}

}  // namespace mcss
