#pragma once

#include <optional>
#include <vector>

#include "splat/geometry.hpp"

namespace splat {

// Flat Gaussian primitive: rank-2 covariance spanned by two in-plane axes,
// the normal is the null direction.
struct GaussianSurfel {
    Vec3 color = Vec3::Zero();      // RGB in [0,1]
    Vec3 center = Vec3::Zero();     // scene units
    Vec2 scale = Vec2::Ones();      // in-plane extents, > 0
    Vec3 normal = Vec3::UnitZ();    // unit
    double opacity = 1.0;           // [0,1]
};

// Right-handed orthonormal frame [n1 n2 n] with n as third column.
struct SurfelFrame {
    Vec3 n1, n2, n;
    Mat3 rotation() const {
        Mat3 r;
        r.col(0) = n1;
        r.col(1) = n2;
        r.col(2) = n;
        return r;
    }
};

struct SurfelScene {
    std::vector<GaussianSurfel> surfels;
    // Optional externally supplied prior normals, same indexing as surfels.
    std::vector<Vec3> prior_normals;

    bool has_priors() const { return prior_normals.size() == surfels.size() && !surfels.empty(); }
    std::size_t size() const { return surfels.size(); }
};

// Deterministic tangent frame for a unit normal. Throws std::invalid_argument
// on zero or non-finite input.
SurfelFrame build_frame(const Vec3& n);

// World-space covariance R Diag[sx^2, sy^2, 0] R^T. Symmetric PSD, rank <= 2,
// with the normal in its null space.
Mat3 covariance_world(const GaussianSurfel& surfel);

}  // namespace splat
