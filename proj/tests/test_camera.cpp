#include <cmath>
#include <random>

#include <doctest.h>

#include "splat/camera.hpp"

using namespace splat;

namespace {

CameraIntrinsics make_k(double fx, double fy, double cx, double cy, int w, int h) {
    CameraIntrinsics k;
    k.fx = fx;
    k.fy = fy;
    k.cx = cx;
    k.cy = cy;
    k.width = w;
    k.height = h;
    return k;
}

Mat3 rot_z(double angle) {
    return Eigen::AngleAxisd(angle, Vec3::UnitZ()).toRotationMatrix();
}

}  // namespace

TEST_CASE("transform_to_camera") {
    CHECK((transform_to_camera(Vec3(1, 2, 3), CameraPose{}) - Vec3(1, 2, 3)).norm() < 1e-15);

    CameraPose shift;
    shift.translation = Vec3(0, 0, 5);
    CHECK((transform_to_camera(Vec3::Zero(), shift) - Vec3(0, 0, 5)).norm() < 1e-15);

    CameraPose turn;
    turn.rotation = rot_z(M_PI / 2);
    CHECK((transform_to_camera(Vec3(1, 0, 0), turn) - Vec3(0, 1, 0)).norm() < 1e-12);
}

TEST_CASE("projection_matrix entries") {
    CameraIntrinsics k = make_k(100, 100, 100, 100, 200, 200);  // 90 degree FoV
    Mat4 p = projection_matrix(k);
    CHECK(p(0, 0) == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(p(1, 1) == doctest::Approx(1.0).epsilon(1e-15));

    k = make_k(320, 240, 320, 240, 640, 480);
    p = projection_matrix(k);
    CHECK(p(0, 0) == doctest::Approx(1.0).epsilon(1e-15));

    k.near_plane = 0.1;
    k.far_plane = 100.0;
    p = projection_matrix(k);
    CHECK(p(2, 2) == doctest::Approx(-100.1 / 99.9).epsilon(1e-12));
    CHECK(p(2, 3) == doctest::Approx(-20.0 / 99.9).epsilon(1e-12));
    CHECK(p(3, 2) == doctest::Approx(-1.0).epsilon(1e-15));
    CHECK(p(3, 3) == 0.0);
}

TEST_CASE("projection matrix reproduces depth as clip w") {
    const CameraIntrinsics k = make_k(120, 110, 70, 60, 128, 112);
    const Mat4 p = projection_matrix(k);
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::uniform_real_distribution<double> uz(0.05, 90.0);
    for (int i = 0; i < 200; ++i) {
        const double d = uz(rng);
        const Vec3 mu(u(rng) * d, u(rng) * d, d);
        // positive-depth convention folds the sign into the pipeline
        const Eigen::Vector4d clip = p * Eigen::Vector4d(mu.x(), mu.y(), -mu.z(), 1.0);
        CHECK(clip.w() == doctest::Approx(d).epsilon(1e-12));
    }
}

TEST_CASE("project_point matches the pinhole map") {
    const CameraIntrinsics k = make_k(120, 110, 64, 56, 128, 112);
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::uniform_real_distribution<double> uz(0.05, 90.0);
    for (int i = 0; i < 500; ++i) {
        const double d = uz(rng);
        const Vec3 mu(u(rng) * d, u(rng) * d, d);
        const auto uv = project_point(mu, k);
        REQUIRE(uv.has_value());
        const double pin_u = k.fx * mu.x() / d + k.cx;
        const double pin_v = k.fy * mu.y() / d + k.cy;
        CHECK(uv->x() == doctest::Approx(pin_u).epsilon(1e-9));
        CHECK(uv->y() == doctest::Approx(pin_v).epsilon(1e-9));
    }
}

TEST_CASE("project_point hand cases") {
    const CameraIntrinsics k = make_k(100, 100, 100, 100, 200, 200);
    const auto on_axis = project_point(Vec3(0, 0, 2), k);
    REQUIRE(on_axis.has_value());
    CHECK(on_axis->x() == doctest::Approx(100.0).epsilon(1e-12));
    CHECK(on_axis->y() == doctest::Approx(100.0).epsilon(1e-12));

    // x = depth * W / (2 fx) lands on the right edge
    const auto edge = project_point(Vec3(2.0 * 200 / (2 * 100.0), 0, 2), k);
    REQUIRE(edge.has_value());
    CHECK(edge->x() == doctest::Approx(200.0).epsilon(1e-12));

    const auto off = project_point(Vec3(0.5, 0, 2), k);
    REQUIRE(off.has_value());
    CHECK(off->x() == doctest::Approx(125.0).epsilon(1e-12));
    CHECK(off->y() == doctest::Approx(100.0).epsilon(1e-12));
}

TEST_CASE("project_point culls points behind the near plane") {
    const CameraIntrinsics k = make_k(100, 100, 50, 50, 100, 100);
    CHECK(!project_point(Vec3(0, 0, -1), k).has_value());
    CHECK(!project_point(Vec3(0, 0, 0), k).has_value());
    CHECK(!project_point(Vec3(0, 0, 0.5 * k.near_plane), k).has_value());
}

TEST_CASE("affine_jacobian closed form") {
    const CameraIntrinsics k = make_k(100, 100, 50, 50, 100, 100);
    Mat23 j = affine_jacobian(Vec3(0, 0, 2), k);
    Mat23 expected;
    expected << 50, 0, 0, 0, 50, 0;
    CHECK((j - expected).norm() < 1e-12);

    j = affine_jacobian(Vec3(1, 0, 2), k);
    expected << 50, 0, -25, 0, 50, 0;
    CHECK((j - expected).norm() < 1e-12);
}

TEST_CASE("affine_jacobian matches finite differences of project_point") {
    const CameraIntrinsics k = make_k(140, 90, 61, 47, 128, 96);
    std::mt19937_64 rng(9);
    std::uniform_real_distribution<double> u(-0.8, 0.8);
    std::uniform_real_distribution<double> uz(0.5, 8.0);
    const double h = 1e-6;
    for (int i = 0; i < 100; ++i) {
        const double d = uz(rng);
        const Vec3 mu(u(rng) * d, u(rng) * d, d);
        const Mat23 j = affine_jacobian(mu, k);
        for (int axis = 0; axis < 3; ++axis) {
            Vec3 hi = mu, lo = mu;
            hi[axis] += h;
            lo[axis] -= h;
            const Vec2 fd = (*project_point(hi, k) - *project_point(lo, k)) / (2 * h);
            for (int row = 0; row < 2; ++row) {
                const double scale = std::max(1.0, std::abs(fd[row]));
                CHECK(std::abs(j(row, axis) - fd[row]) / scale < 1e-5);
            }
        }
    }
}

TEST_CASE("project_covariance") {
    const CameraPose identity;
    Mat23 j;
    j << 50, 0, 0, 0, 50, 0;
    CHECK(project_covariance(Mat3::Zero(), identity, j).norm() == 0.0);

    const Vec3 diag(4, 1, 0);
    const Mat2 si = project_covariance(diag.asDiagonal(), identity, j);
    CHECK(si(0, 0) == doctest::Approx(10000.0).epsilon(1e-12));
    CHECK(si(1, 1) == doctest::Approx(2500.0).epsilon(1e-12));
    CHECK(si(0, 1) == 0.0);

    std::mt19937_64 rng(21);
    std::normal_distribution<double> g(0.0, 1.0);
    for (int i = 0; i < 50; ++i) {
        Mat3 a;
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 3; ++c) a(r, c) = g(rng);
        const Mat3 psd = a * a.transpose();
        Mat23 jj;
        for (int r = 0; r < 2; ++r)
            for (int c = 0; c < 3; ++c) jj(r, c) = g(rng);
        CameraPose pose;
        pose.rotation = Eigen::AngleAxisd(g(rng), Vec3(g(rng), g(rng), g(rng)).normalized())
                            .toRotationMatrix();
        const Mat2 out = project_covariance(psd, pose, jj);
        CHECK(out(0, 1) == out(1, 0));  // symmetric by construction
    }
}

TEST_CASE("se3_exp basics") {
    const CameraPose id = se3_exp(TangentUpdate{});
    CHECK((id.rotation - Mat3::Identity()).norm() < 1e-15);
    CHECK(id.translation.norm() < 1e-15);

    TangentUpdate xi;
    xi.xi << 0, 0, M_PI / 2, 0, 0, 0;
    const CameraPose quarter = se3_exp(xi);
    CHECK((quarter.rotation - rot_z(M_PI / 2)).norm() < 1e-12);
    CHECK(quarter.translation.norm() < 1e-12);

    TangentUpdate trans;
    trans.xi << 0, 0, 0, 1, -2, 3;
    const CameraPose slide = se3_exp(trans);
    CHECK((slide.rotation - Mat3::Identity()).norm() < 1e-15);
    CHECK((slide.translation - Vec3(1, -2, 3)).norm() < 1e-12);
}

TEST_CASE("se3 exp/log round trip") {
    std::mt19937_64 rng(17);
    std::normal_distribution<double> g(0.0, 1.0);
    for (int i = 0; i < 300; ++i) {
        TangentUpdate xi;
        for (int j = 0; j < 6; ++j) xi.xi[j] = 0.03 * g(rng);
        if (xi.xi.norm() >= 0.1) continue;
        const TangentUpdate back = se3_log(se3_exp(xi));
        CHECK((back.xi - xi.xi).norm() < 1e-10);
    }
}

TEST_CASE("se3_exp is a homomorphism to second order") {
    TangentUpdate xi1, xi2;
    xi1.xi << 0.04, -0.02, 0.03, 0.05, 0.01, -0.03;
    xi2.xi << -0.01, 0.03, 0.02, -0.04, 0.02, 0.05;
    double prev_err = -1.0;
    for (double scale : {1.0, 0.5, 0.25}) {
        TangentUpdate a, b, sum;
        a.xi = scale * xi1.xi;
        b.xi = scale * xi2.xi;
        sum.xi = a.xi + b.xi;
        const CameraPose lhs = se3_exp(a).compose(se3_exp(b));
        const CameraPose rhs = se3_exp(sum);
        const double err = (lhs.rotation - rhs.rotation).norm() +
                           (lhs.translation - rhs.translation).norm();
        if (prev_err > 0) CHECK(err < prev_err / 3.0);  // quadratic decay
        prev_err = err;
    }
}

TEST_CASE("pose inverse and compose") {
    std::mt19937_64 rng(23);
    std::normal_distribution<double> g(0.0, 1.0);
    for (int i = 0; i < 50; ++i) {
        TangentUpdate xi;
        for (int j = 0; j < 6; ++j) xi.xi[j] = g(rng);
        const CameraPose pose = se3_exp(xi);
        const CameraPose round = pose.compose(pose.inverse());
        CHECK((round.rotation - Mat3::Identity()).norm() < 1e-12);
        CHECK(round.translation.norm() < 1e-12);
    }
}

TEST_CASE("intrinsics validity") {
    CHECK(!CameraIntrinsics{}.valid());
    CameraIntrinsics k = make_k(100, 100, 50, 50, 100, 100);
    CHECK(k.valid());
    k.near_plane = 2.0;
    k.far_plane = 1.0;
    CHECK(!k.valid());
}
