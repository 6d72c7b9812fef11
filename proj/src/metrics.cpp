#include "mcss/metrics.hpp"

#include <Eigen/SVD>
#include <cmath>

#include "mcss/errors.hpp"

namespace mcss {

Pose SimilarityTransform::apply(const Pose& p) const {
    Pose out;
    for (int j = 0; j < kNumJoints; ++j) {
        out.joints[static_cast<size_t>(j)] = apply(p.joints[static_cast<size_t>(j)]);
    }
    return out;
}

double mpjpe(const Pose& p, const Pose& q) {
    double sum = 0.0;
    for (int j = 0; j < kNumJoints; ++j) {
        sum += (p.joints[static_cast<size_t>(j)] - q.joints[static_cast<size_t>(j)]).norm();
    }
    return sum / kNumJoints;
}

double n_mpjpe(const Pose& pred, const Pose& gt) {
    double dot = 0.0;
    double norm2 = 0.0;
    for (int j = 0; j < kNumJoints; ++j) {
        dot += pred.joints[static_cast<size_t>(j)].dot(gt.joints[static_cast<size_t>(j)]);
        norm2 += pred.joints[static_cast<size_t>(j)].squaredNorm();
    }
    if (norm2 == 0.0) throw UndefinedScaleError("n_mpjpe: prediction is all-zero");
    const double scale = dot / norm2;
    double sum = 0.0;
    for (int j = 0; j < kNumJoints; ++j) {
        sum += (scale * pred.joints[static_cast<size_t>(j)] - gt.joints[static_cast<size_t>(j)])
                   .norm();
    }
    return sum / kNumJoints;
}

namespace {

using PointMatrix = Eigen::Matrix<double, 3, kNumJoints>;

PointMatrix to_matrix(const Pose& p) {
    PointMatrix m;
    for (int j = 0; j < kNumJoints; ++j) m.col(j) = p.joints[static_cast<size_t>(j)];
    return m;
}

// Collinear or coincident point sets leave the rotation underdetermined.
void check_nondegenerate(const PointMatrix& centered, const char* which) {
    Eigen::JacobiSVD<PointMatrix> svd(centered);
    const auto& sv = svd.singularValues();
    if (sv(1) <= 1e-9 * std::max(sv(0), 1.0)) {
        throw DegenerateGeometryError(std::string("procrustes: ") + which +
                                      " joints are collinear or coincident");
    }
}

}  // namespace

SimilarityTransform procrustes(const Pose& pred, const Pose& gt) {
    const PointMatrix x = to_matrix(pred);
    const PointMatrix y = to_matrix(gt);
    const Eigen::Vector3d mx = x.rowwise().mean();
    const Eigen::Vector3d my = y.rowwise().mean();
    const PointMatrix xc = x.colwise() - mx;
    const PointMatrix yc = y.colwise() - my;
    check_nondegenerate(xc, "prediction");
    check_nondegenerate(yc, "ground-truth");

    const Eigen::Matrix3d cov = yc * xc.transpose() / kNumJoints;
    Eigen::JacobiSVD<Eigen::Matrix3d> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
    // Flip the smallest singular direction if the best orthogonal map is a
    // reflection; singular values come out sorted descending.
    Eigen::Vector3d signs = Eigen::Vector3d::Ones();
    if ((svd.matrixU() * svd.matrixV().transpose()).determinant() < 0.0) signs(2) = -1.0;
    const Eigen::Matrix3d rotation =
        svd.matrixU() * signs.asDiagonal() * svd.matrixV().transpose();

    const double var_x = xc.squaredNorm() / kNumJoints;
    const double scale = svd.singularValues().dot(signs) / var_x;
    if (!(scale > 0.0)) {
        throw DegenerateGeometryError("procrustes: non-positive optimal scale");
    }

    SimilarityTransform t;
    t.scale = scale;
    t.rotation = rotation;
    t.translation = my - scale * (rotation * mx);
    return t;
}

double pa_mpjpe(const Pose& pred, const Pose& gt) {
    const SimilarityTransform t = procrustes(pred, gt);
    return mpjpe(t.apply(pred), gt);
}

}  // namespace mcss
