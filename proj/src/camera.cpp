#include "splat/camera.hpp"

#include <cmath>

namespace splat {

Vec3 transform_to_camera(const Vec3& p, const CameraPose& pose) {
    return pose.apply(p);
}

Mat4 projection_matrix(const CameraIntrinsics& k) {
    const double n = k.near_plane;
    const double f = k.far_plane;
    Mat4 p = Mat4::Zero();
    p(0, 0) = 2.0 * k.fx / k.width;
    p(1, 1) = 2.0 * k.fy / k.height;
    p(2, 2) = -(f + n) / (f - n);
    p(2, 3) = -2.0 * f * n / (f - n);
    p(3, 2) = -1.0;
    return p;
}

std::optional<Vec2> project_point(const Vec3& mu_camera, const CameraIntrinsics& k) {
    const double d = mu_camera.z();
    if (!(d > k.near_plane)) return std::nullopt;
    // Positive-depth convention: the frustum derivation uses z_C = -d, so
    // w_clip = -z_C = d.
    const Mat4 p = projection_matrix(k);
    const Eigen::Vector4d clip =
        p * Eigen::Vector4d(mu_camera.x(), mu_camera.y(), -d, 1.0);
    const double w = clip.w();
    const double x_ndc = clip.x() / w;
    const double y_ndc = clip.y() / w;
    return Vec2(0.5 * k.width * x_ndc + k.cx, 0.5 * k.height * y_ndc + k.cy);
}

Mat23 affine_jacobian(const Vec3& mu_camera, const CameraIntrinsics& k) {
    const double x = mu_camera.x();
    const double y = mu_camera.y();
    const double d = mu_camera.z();
    Mat23 j;
    j << k.fx / d, 0.0, -k.fx * x / (d * d),
         0.0, k.fy / d, -k.fy * y / (d * d);
    return j;
}

Mat2 project_covariance(const Mat3& sigma_world, const CameraPose& pose, const Mat23& jac) {
    const Mat3 cam_cov = pose.rotation * sigma_world * pose.rotation.transpose();
    const Mat2 s = jac * cam_cov * jac.transpose();
    return 0.5 * (s + s.transpose());
}

CameraPose se3_exp(const TangentUpdate& xi) {
    const Vec3 w = xi.rot();
    const Vec3 v = xi.trans();
    const double theta = w.norm();
    const Mat3 wx = skew(w);

    Mat3 rot;
    Mat3 vmat;
    if (theta < 1e-8) {
        rot = Mat3::Identity() + wx + 0.5 * wx * wx;
        vmat = Mat3::Identity() + 0.5 * wx + (1.0 / 6.0) * wx * wx;
    } else {
        const double s = std::sin(theta);
        const double c = std::cos(theta);
        rot = Mat3::Identity() + (s / theta) * wx +
              ((1.0 - c) / (theta * theta)) * wx * wx;
        vmat = Mat3::Identity() + ((1.0 - c) / (theta * theta)) * wx +
               ((theta - s) / (theta * theta * theta)) * wx * wx;
    }
    return {rot, vmat * v};
}

TangentUpdate se3_log(const CameraPose& pose) {
    const double cos_theta = std::clamp(0.5 * (pose.rotation.trace() - 1.0), -1.0, 1.0);
    const double theta = std::acos(cos_theta);

    Vec3 w;
    if (theta < 1e-8) {
        Mat3 a = 0.5 * (pose.rotation - pose.rotation.transpose());
        w = Vec3(a(2, 1), a(0, 2), a(1, 0));
    } else {
        Mat3 a = (theta / (2.0 * std::sin(theta))) *
                 (pose.rotation - pose.rotation.transpose());
        w = Vec3(a(2, 1), a(0, 2), a(1, 0));
    }

    const Mat3 wx = skew(w);
    Mat3 vinv;
    if (theta < 1e-8) {
        vinv = Mat3::Identity() - 0.5 * wx + (1.0 / 12.0) * wx * wx;
    } else {
        const double half = 0.5 * theta;
        const double coef = (1.0 - half * std::cos(half) / std::sin(half)) / (theta * theta);
        vinv = Mat3::Identity() - 0.5 * wx + coef * wx * wx;
    }

    TangentUpdate xi;
    xi.xi.head<3>() = w;
    xi.xi.tail<3>() = vinv * pose.translation;
    return xi;
}

}  // namespace splat
