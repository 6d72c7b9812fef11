#include "mcss/geometry.hpp"

#include <cmath>
#include <stdexcept>

#include "mcss/errors.hpp"

namespace mcss {

Eigen::Matrix<double, kPoseDim, 1> Pose::flatten() const {
    Eigen::Matrix<double, kPoseDim, 1> v;
    for (int j = 0; j < kNumJoints; ++j) v.segment<3>(3 * j) = joints[static_cast<size_t>(j)];
    return v;
}

Pose Pose::unflatten(const Eigen::Matrix<double, kPoseDim, 1>& v) {
    Pose p;
    for (int j = 0; j < kNumJoints; ++j) p.joints[static_cast<size_t>(j)] = v.segment<3>(3 * j);
    return p;
}

bool pose_is_finite(const Pose& p) {
    for (const auto& j : p.joints) {
        if (!j.allFinite()) return false;
    }
    return true;
}

const SkeletonMeta& default_skeleton() {
    static const SkeletonMeta meta{
        {"pelvis", "left_hip", "left_knee", "left_ankle", "right_hip", "right_knee",
         "right_ankle", "spine", "neck", "head", "left_shoulder", "left_elbow", "left_wrist",
         "right_shoulder", "right_elbow", "right_wrist"},
        {-1, 0, 1, 2, 0, 4, 5, 0, 7, 8, 8, 10, 11, 8, 13, 14},
        kDefaultLeftHip,
    };
    return meta;
}

const std::array<Eigen::Vector3d, kNumJoints>& default_bone_offsets() {
    static const std::array<Eigen::Vector3d, kNumJoints> offsets = {{
        {0.0, 0.0, 0.0},        // pelvis
        {130.0, 0.0, 0.0},      // left_hip
        {0.0, 0.0, -440.0},     // left_knee
        {0.0, 0.0, -430.0},     // left_ankle
        {-130.0, 0.0, 0.0},     // right_hip
        {0.0, 0.0, -440.0},     // right_knee
        {0.0, 0.0, -430.0},     // right_ankle
        {0.0, 0.0, 240.0},      // spine
        {0.0, 0.0, 250.0},      // neck
        {0.0, 0.0, 170.0},      // head
        {180.0, 0.0, -30.0},    // left_shoulder
        {0.0, 0.0, -280.0},     // left_elbow
        {0.0, 0.0, -250.0},     // left_wrist
        {-180.0, 0.0, -30.0},   // right_shoulder
        {0.0, 0.0, -280.0},     // right_elbow
        {0.0, 0.0, -250.0},     // right_wrist
    }};
    return offsets;
}

Eigen::Matrix3d rotation_z(double theta) {
    if (!std::isfinite(theta)) throw std::invalid_argument("rotation_z: non-finite angle");
    const double c = std::cos(theta);
    const double s = std::sin(theta);
    Eigen::Matrix3d r;
    r << c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0;
    return r;
}

CanonicalResult canonical_transform(const Pose& pose, int left_hip_index) {
    if (left_hip_index <= 0 || left_hip_index >= kNumJoints) {
        throw std::invalid_argument("canonical_transform: left hip index out of range");
    }
    const Eigen::Vector3d bone =
        pose.joints[static_cast<size_t>(left_hip_index)] - pose.joints[0];
    if (bone.norm() <= kEpsilonBone) {
        throw DegeneratePoseError("canonical_transform: pelvis->left-hip bone is degenerate");
    }
    const double planar = std::hypot(bone.x(), bone.y());
    if (planar <= kEpsilonBone) {
        throw DegeneratePoseError(
            "canonical_transform: pelvis->left-hip bone is parallel to the Z axis");
    }
    // Rotate by -atan2 so the bone lands on y = 0 with x >= 0. The arccos
    // form is sign-ambiguous and cannot guarantee either.
    const double theta = -std::atan2(bone.y(), bone.x());
    const Eigen::Matrix3d r = rotation_z(theta);
    CanonicalResult out;
    out.theta = theta;
    for (int j = 0; j < kNumJoints; ++j) {
        out.pose.joints[static_cast<size_t>(j)] = r * pose.joints[static_cast<size_t>(j)];
    }
    return out;
}

namespace {

// Virtual viewport half-extent in camera-space mm: a 2 m subject (+-1000 mm)
// fills 80% of the frame at the camera's configured distance.
constexpr double kOrthoHalfExtent = 1000.0 / 0.8;

struct CameraFrame {
    Eigen::Vector3d center;
    Eigen::Vector3d right;
    Eigen::Vector3d up;
    Eigen::Vector3d forward;
};

CameraFrame camera_frame(const Camera& cam) {
    const double ca = std::cos(cam.azimuth), sa = std::sin(cam.azimuth);
    const double ce = std::cos(cam.elevation), se = std::sin(cam.elevation);
    CameraFrame f;
    f.center = cam.distance * Eigen::Vector3d(ce * ca, ce * sa, se);
    f.forward = -Eigen::Vector3d(ce * ca, ce * sa, se);
    // Closed form of normalize(forward x world_up) for any elevation.
    f.right = Eigen::Vector3d(-sa, ca, 0.0);
    f.up = f.right.cross(f.forward);
    return f;
}

}  // namespace

Observation project(const Pose& pose, const Camera& camera) {
    if (camera.distance <= 0.0) throw std::invalid_argument("project: camera distance must be > 0");
    if (camera.mode == ProjectionMode::perspective && camera.focal <= 0.0) {
        throw std::invalid_argument("project: focal length must be > 0 in perspective mode");
    }
    const CameraFrame f = camera_frame(camera);
    Observation obs;
    for (int j = 0; j < kNumJoints; ++j) {
        const Eigen::Vector3d rel = pose.joints[static_cast<size_t>(j)] - f.center;
        const double x = f.right.dot(rel);
        const double y = f.up.dot(rel);
        const double z = f.forward.dot(rel);
        double u, v;
        if (camera.mode == ProjectionMode::orthographic) {
            u = x / kOrthoHalfExtent;
            v = y / kOrthoHalfExtent;
        } else {
            if (z <= 0.0) {
                throw ProjectionError("project: joint " + std::to_string(j) +
                                      " is behind the camera");
            }
            // Image-plane half-extent derived from the framing rule; the
            // focal length cancels once normalized.
            const double half_extent = camera.focal * kOrthoHalfExtent / camera.distance;
            u = (camera.focal * x / z) / half_extent;
            v = (camera.focal * y / z) / half_extent;
        }
        obs.coords[static_cast<size_t>(2 * j)] = u;
        obs.coords[static_cast<size_t>(2 * j + 1)] = v;
    }
    return obs;
}

}  // namespace mcss
