#pragma once

#include <compare>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mcss/geometry.hpp"

namespace mcss {

// One synchronized capture sample: the same (subject, frame) appears once per
// view and carries the identical global pose in every view.
struct FrameRecord {
    int subject_id = 0;
    int view_id = 0;
    int frame_index = 0;
    Pose pose_global;
    Observation observation;

    bool operator==(const FrameRecord& o) const = default;
};

// Per-subject multiplicative bone-length scales, one per joint (root unused).
struct SubjectDesc {
    std::vector<double> bone_scales;

    bool operator==(const SubjectDesc& o) const = default;
};

struct Dataset {
    SkeletonMeta skeleton;
    std::vector<Camera> cameras;
    std::vector<SubjectDesc> subjects;
    std::vector<FrameRecord> records;

    bool operator==(const Dataset& o) const = default;
};

struct GenConfig {
    int n_subjects = 2;
    int n_views = 4;
    int n_frames = 2000;
    double noise_sigma = 0.01;    // image-plane noise in normalized units
    double detector_bias = 0.06;  // per-(subject,view,joint) systematic offset sigma
    double angle_step = 0.10;     // per-frame random-walk step, rad
    double angle_range = 0.4;     // clamp for limb Euler channels, rad
    double heading_range = 1.5;   // clamp for the root heading walk, rad (<= pi)
    double camera_distance = 4000.0;  // mm
    double camera_elevation = 0.35;   // rad
    double camera_focal = 35.0;       // mm, perspective mode
    ProjectionMode camera_mode = ProjectionMode::perspective;
    double bone_scale_min = 0.9;
    double bone_scale_max = 1.1;
};

// Deterministic multi-view pose sequences: a fixed 16-joint tree, per-subject
// bone scales, and per-joint Euler angles on bounded random walks so temporal
// neighbors have similar poses. Throws ConfigError on infeasible settings.
Dataset generate(const GenConfig& config, std::uint64_t seed);

// Newline-delimited JSON: a header object followed by one record per line.
// Coordinates are written with 17 significant digits so the round trip is
// value-exact.
void write_dataset(const Dataset& dataset, const std::string& path);
Dataset read_dataset(const std::string& path);

// Full invariant check: index ranges, finiteness, pelvis at origin, strictly
// increasing frames per (subject, view), identical pose across views of a
// frame. Throws ValidationError naming the first offender.
void validate_dataset(const Dataset& dataset);

struct FrameKey {
    int subject_id = 0;
    int frame_index = 0;

    auto operator<=>(const FrameKey&) const = default;
};

struct SupervisionSplit {
    std::vector<FrameKey> labeled;    // carries 3D-pose supervision
    std::vector<FrameKey> unlabeled;  // complement; still available for metric learning
};

// Restricts to subjects_supervised when given, then takes ceil(fraction * n)
// frames per subject at a uniform stride whose phase is drawn from the seed.
SupervisionSplit split_supervision(const Dataset& dataset, double fraction,
                                   const std::optional<std::vector<int>>& subjects_supervised,
                                   std::uint64_t seed);

}  // namespace mcss
