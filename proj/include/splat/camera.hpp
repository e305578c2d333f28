#pragma once

#include <optional>

#include "splat/geometry.hpp"

namespace splat {

struct CameraIntrinsics {
    double fx = 0.0, fy = 0.0;  // pixels
    double cx = 0.0, cy = 0.0;  // pixels
    int width = 0, height = 0;
    double near_plane = 0.01;
    double far_plane = 100.0;

    bool valid() const {
        return fx > 0 && fy > 0 && width > 0 && height > 0 &&
               near_plane > 0 && near_plane < far_plane;
    }
};

// Rigid world->camera map: mu_C = R * mu + t.
struct CameraPose {
    Mat3 rotation = Mat3::Identity();
    Vec3 translation = Vec3::Zero();

    Vec3 apply(const Vec3& p) const { return rotation * p + translation; }
    CameraPose inverse() const {
        return {rotation.transpose(), -(rotation.transpose() * translation)};
    }
    // this ∘ other: first other, then this.
    CameraPose compose(const CameraPose& other) const {
        return {rotation * other.rotation, rotation * other.translation + translation};
    }
};

// se(3) tangent: first three components rotational, last three translational.
struct TangentUpdate {
    Vec6 xi = Vec6::Zero();
    Vec3 rot() const { return xi.head<3>(); }
    Vec3 trans() const { return xi.tail<3>(); }
};

struct ProjectedGaussian {
    Vec2 mu_image = Vec2::Zero();   // pixel position
    Mat2 cov_image = Mat2::Zero();  // pixel^2, pre-regularization
    double depth = 0.0;             // positive camera-space depth
    Vec3 mu_camera = Vec3::Zero();  // cached for the backward pass
    bool valid = false;             // false when culled (behind near plane)
};

Vec3 transform_to_camera(const Vec3& p, const CameraPose& pose);

// Camera -> clip transform under a symmetric frustum.
Mat4 projection_matrix(const CameraIntrinsics& k);

// Full clip/NDC/viewport pipeline; equals the pinhole map
// u = fx*x/d + cx, v = fy*y/d + cy for positive-depth points.
// Returns nullopt for points at or behind the near plane.
std::optional<Vec2> project_point(const Vec3& mu_camera, const CameraIntrinsics& k);

// First-order Taylor Jacobian of the projection at mu_camera:
// [[fx/d, 0, -fx*x/d^2], [0, fy/d, -fy*y/d^2]].
Mat23 affine_jacobian(const Vec3& mu_camera, const CameraIntrinsics& k);

// Screen-space covariance J * R * Sigma * R^T * J^T, symmetrized.
Mat2 project_covariance(const Mat3& sigma_world, const CameraPose& pose, const Mat23& jac);

CameraPose se3_exp(const TangentUpdate& xi);
TangentUpdate se3_log(const CameraPose& pose);

struct GaussianSurfel;  // fwd

}  // namespace splat
