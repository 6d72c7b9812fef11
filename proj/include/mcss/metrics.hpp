#pragma once

#include <Eigen/Dense>

#include "mcss/geometry.hpp"

namespace mcss {

// Similarity transform p -> scale * rotation * p + translation.
struct SimilarityTransform {
    double scale = 1.0;
    Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
    Eigen::Vector3d translation = Eigen::Vector3d::Zero();

    Eigen::Vector3d apply(const Eigen::Vector3d& p) const {
        return scale * (rotation * p) + translation;
    }
    Pose apply(const Pose& p) const;
};

// Mean per-joint Euclidean distance, mm.
double mpjpe(const Pose& p, const Pose& q);

// MPJPE after applying the least-squares optimal global scale
// s* = sum(pred.gt) / sum(pred.pred) to the prediction.
// Throws UndefinedScaleError when the prediction is all-zero.
double n_mpjpe(const Pose& pred, const Pose& gt);

// Closed-form similarity alignment (Kabsch-Umeyama) minimizing
// sum_j ||s R pred_j + t - gt_j||^2 with det(R) = +1 enforced.
// Throws DegenerateGeometryError on collinear or coincident joints.
SimilarityTransform procrustes(const Pose& pred, const Pose& gt);

// MPJPE after Procrustes alignment of pred onto gt.
double pa_mpjpe(const Pose& pred, const Pose& gt);

}  // namespace mcss
