#pragma once

#include <Eigen/Dense>
#include <array>
#include <string>
#include <vector>

namespace mcss {

inline constexpr int kNumJoints = 16;
inline constexpr int kPoseDim = kNumJoints * 3;
inline constexpr int kObsDim = kNumJoints * 2;
inline constexpr int kDefaultLeftHip = 1;

// Bone shorter than this (mm) cannot define a canonical heading.
inline constexpr double kEpsilonBone = 1e-6;

// Root-relative 3D pose in millimeters, +Z up. Joint 0 is the pelvis and is
// expected to sit at the origin in dataset records; the metric functions
// accept arbitrary point sets (e.g. similarity-transformed poses).
struct Pose {
    std::array<Eigen::Vector3d, kNumJoints> joints{};

    Eigen::Matrix<double, kPoseDim, 1> flatten() const;
    static Pose unflatten(const Eigen::Matrix<double, kPoseDim, 1>& v);

    bool operator==(const Pose& o) const { return joints == o.joints; }
};

bool pose_is_finite(const Pose& p);

enum class ProjectionMode { orthographic, perspective };

struct Camera {
    double azimuth = 0.0;    // rad, about world +Z
    double elevation = 0.0;  // rad above the horizontal plane
    double distance = 4000.0;  // mm from the subject root
    ProjectionMode mode = ProjectionMode::orthographic;
    double focal = 35.0;  // mm, perspective only

    bool operator==(const Camera& o) const {
        return azimuth == o.azimuth && elevation == o.elevation && distance == o.distance &&
               mode == o.mode && focal == o.focal;
    }
};

// 16 (u, v) image-plane joint positions. The virtual viewport is scaled so a
// 2 m subject at the configured camera distance spans ~80% of [-1, 1].
struct Observation {
    std::array<double, kObsDim> coords{};

    bool operator==(const Observation& o) const { return coords == o.coords; }
};

struct SkeletonMeta {
    std::vector<std::string> joint_names;
    std::vector<int> parents;  // -1 for the root
    int left_hip_index = kDefaultLeftHip;

    bool operator==(const SkeletonMeta& o) const {
        return joint_names == o.joint_names && parents == o.parents &&
               left_hip_index == o.left_hip_index;
    }
};

// The fixed 16-joint tree used by the synthetic generator.
const SkeletonMeta& default_skeleton();

// Rest-pose offset of each joint from its parent, mm.
const std::array<Eigen::Vector3d, kNumJoints>& default_bone_offsets();

// Proper rotation about +Z. Throws std::invalid_argument on non-finite input.
Eigen::Matrix3d rotation_z(double theta);

struct CanonicalResult {
    Pose pose;
    double theta;  // applied Z-rotation: pose == rotation_z(theta) * input
};

// Rotates the pose about +Z until the pelvis->left-hip bone lies in the XZ
// plane with a non-negative x component. Throws DegeneratePoseError when the
// bone is too short or parallel to the Z axis to define a heading.
CanonicalResult canonical_transform(const Pose& pose, int left_hip_index = kDefaultLeftHip);

// Rigid camera transform followed by orthographic depth drop or perspective
// division, then viewport normalization. Perspective mode throws
// ProjectionError if any joint is not strictly in front of the camera.
Observation project(const Pose& pose, const Camera& camera);

}  // namespace mcss
